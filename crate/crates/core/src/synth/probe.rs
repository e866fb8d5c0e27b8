//! Planted probe corpus: marked probe traffic hidden among background
//! relayed flows, with the intended assignment recorded so tests can
//! check for exact recovery.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::capture::{Direction, Flow, FlowKey, Transport};
use crate::correlate::ProbeLogEntry;

use super::{endpoint, make_flow, rng};

/// Probes, flows, and the planted probe-to-flow assignment.
pub struct ProbeCorpus {
    pub probes: Vec<ProbeLogEntry>,
    pub flows: Vec<Flow>,
    pub planted: Vec<(String, FlowKey)>,
}

pub const PROBE_COUNT: usize = 50;
pub const BACKGROUND_FLOWS: usize = 5000;

fn request_flow(src: &str, dst: &str, start: f64, up_bytes: usize, down_bytes: usize) -> Flow {
    let up = vec![0u8; up_bytes];
    let down = vec![0u8; down_bytes];
    make_flow(
        Transport::Tcp,
        endpoint(src),
        endpoint(dst),
        start,
        &[(Direction::Up, 0.0, &up), (Direction::Down, 0.08, &down)],
    )
}

/// Build 50 probes whose flows sit inside the default tolerances, two
/// near-miss decoys per probe (one seven to ten seconds late, one with
/// an upstream size off by at least 150 bytes), and enough unrelated
/// background flows to total 5000 non-planted flows. Probe destinations
/// are unique, so the planted assignment is the only valid one.
pub fn probe_corpus(seed: u64) -> ProbeCorpus {
    let mut rng = rng(seed);
    let mut probes = Vec::with_capacity(PROBE_COUNT);
    let mut flows = Vec::new();
    let mut planted = Vec::with_capacity(PROBE_COUNT);

    for i in 0..PROBE_COUNT {
        let dest = format!("203.0.113.{}:{}", 1 + i % 200, 8000 + i);
        let send_ts = 50_000.0 + 20.0 * i as f64;
        let request_size = rng.random_range(300..900);
        let probe_id = format!("probe-{i:03}");
        probes.push(ProbeLogEntry {
            probe_id: probe_id.clone(),
            dest_ip: endpoint(&dest).ip,
            dest_port: endpoint(&dest).port,
            url: Some(format!("http://mark.example/{i}")),
            send_ts,
            request_size,
            response_size: rng.random_range(500..4000),
        });

        let jitter = rng.random_range(0.05..4.5);
        let size_slack = rng.random_range(0..=60i64);
        let flow = request_flow(
            &format!("10.4.{}.{}:{}", i / 250, i % 250, 41000 + i),
            &dest,
            send_ts + jitter,
            (request_size as i64 + size_slack) as usize,
            rng.random_range(400..3000),
        );
        planted.push((probe_id, flow.key));
        flows.push(flow);

        // Decoys to the same destination: one outside the time window,
        // one outside the size window.
        flows.push(request_flow(
            &format!("10.5.{}.{}:{}", i / 250, i % 250, 42000 + i),
            &dest,
            send_ts + rng.random_range(7.0..10.0),
            request_size as usize,
            rng.random_range(400..3000),
        ));
        flows.push(request_flow(
            &format!("10.6.{}.{}:{}", i / 250, i % 250, 43000 + i),
            &dest,
            send_ts + rng.random_range(0.5..4.0),
            request_size as usize + rng.random_range(150..600),
            rng.random_range(400..3000),
        ));
    }

    let remaining = BACKGROUND_FLOWS - 2 * PROBE_COUNT;
    for i in 0..remaining {
        let dest = format!(
            "198.18.{}.{}:{}",
            rng.random_range(0..200),
            rng.random_range(1..250),
            rng.random_range(1024..60000)
        );
        flows.push(request_flow(
            &format!("10.7.{}.{}:{}", i / 250, i % 250, 30000 + i % 20000),
            &dest,
            rng.random_range(49_000.0..52_000.0),
            rng.random_range(100..2000),
            rng.random_range(100..8000),
        ));
    }

    flows.shuffle(&mut rng);
    probes.shuffle(&mut rng);
    ProbeCorpus { probes, flows, planted }
}
