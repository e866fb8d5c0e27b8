//! Deterministic fixture generation: synthetic captures, scripted protocol
//! dialogues, and labeled corpora for the test suite and the bundled demo.
//!
//! Everything here is seeded; the same inputs always produce byte-identical
//! artifacts. Fixtures are written in real container formats so they can be
//! inspected with ordinary capture tools.

mod corpus;
mod fixture;
mod mail;
mod probe;
mod wire;

pub use corpus::{planted_feature_matrix, separable_flow_corpus};
pub use fixture::{
    demo_capture_frames, protocol_mix_corpus, triage_fixture, TriageExpectation, TriageFixture,
    MIX_EXPECTED, NODE_IP,
};
pub use mail::{
    mail_dialogue_flow, retrieval_fixture, smtp_cause_corpus, smtp_scripted_suite,
    CAUSE_CORPUS_DELIVERED, CAUSE_CORPUS_FAILURES,
};
pub use probe::{probe_corpus, ProbeCorpus, BACKGROUND_FLOWS, PROBE_COUNT};
pub use wire::{
    arp_frame, dns_response, ethernet_frame, interleave, tcp_frame, udp_frame, write_pcap,
    write_pcap_nanos, write_pcapng, Frame, Ledger, TcpScript, UdpScript, FLAG_ACK, FLAG_FIN,
    FLAG_PSH, FLAG_RST, FLAG_SYN,
};

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::capture::{Direction, Endpoint, Flow, FlowKey, PacketRecord, Transport};

/// Seeded generator used by every synthetic corpus.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Parse "ip:port" (IPv6 uses the last colon) into an endpoint.
pub fn endpoint(s: &str) -> Endpoint {
    let (ip, port) = s.rsplit_once(':').expect("ip:port");
    Endpoint {
        ip: ip.parse().expect("ip"),
        port: port.parse().expect("port"),
    }
}

/// Build an assembled flow directly from a packet script, bypassing the
/// capture pipeline. Timestamps are `start` plus each packet's offset; TCP
/// sequence numbers follow script order so payload reassembly is stable.
pub fn make_flow(
    transport: Transport,
    src: Endpoint,
    dst: Endpoint,
    start: f64,
    script: &[(Direction, f64, &[u8])],
) -> Flow {
    let mut packets = Vec::new();
    let (mut up_bytes, mut down_bytes) = (0u64, 0u64);
    let (mut up_packets, mut down_packets) = (0u32, 0u32);
    let (mut seq_up, mut seq_down) = (1u32, 1u32);
    let mut last = start;
    for &(direction, offset, payload) in script {
        let ts = start + offset;
        last = last.max(ts);
        let seq = match transport {
            Transport::Tcp => Some(match direction {
                Direction::Up => {
                    let s = seq_up;
                    seq_up += payload.len() as u32;
                    s
                }
                Direction::Down => {
                    let s = seq_down;
                    seq_down += payload.len() as u32;
                    s
                }
            }),
            Transport::Udp => None,
        };
        match direction {
            Direction::Up => {
                up_bytes += payload.len() as u64;
                up_packets += 1;
            }
            Direction::Down => {
                down_bytes += payload.len() as u64;
                down_packets += 1;
            }
        }
        packets.push(PacketRecord {
            timestamp: ts,
            direction,
            payload: payload.to_vec(),
            tcp_seq: seq,
        });
    }
    Flow {
        key: FlowKey {
            src,
            dst,
            transport,
        },
        packets,
        first_ts: start,
        last_ts: last,
        up_bytes,
        down_bytes,
        up_packets,
        down_packets,
    }
}
