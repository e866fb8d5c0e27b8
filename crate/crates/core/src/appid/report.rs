//! Protocol-mix report: share of flows and of payload volume per service.

use std::io;

use serde::{Deserialize, Serialize};

use crate::capture::Flow;

use super::{Protocol, ProtocolTag};

/// One report row. Percentages are rounded to two decimals and each column
/// sums to exactly 100.00 over the whole table (largest-remainder rounding).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MixRow {
    pub service: String,
    pub typical_port: String,
    pub flows_pct: f64,
    pub volume_pct: f64,
    pub flows: u64,
    pub bytes: u64,
}

/// Aggregate tagged flows into the protocol-mix table. Service rows appear
/// only when observed; the Other and Unknown buckets are always present.
/// Empty input produces an empty table.
pub fn protocol_mix_report(flows: &[Flow], tags: &[ProtocolTag]) -> Vec<MixRow> {
    assert_eq!(flows.len(), tags.len(), "one tag per flow");
    if flows.is_empty() {
        return Vec::new();
    }

    let mut flow_counts = [0u64; 12];
    let mut byte_counts = [0u64; 12];
    for (flow, tag) in flows.iter().zip(tags) {
        let i = tag.protocol.mix_order();
        flow_counts[i] += 1;
        byte_counts[i] += flow.total_bytes();
    }

    let include: Vec<Protocol> = Protocol::all()
        .iter()
        .copied()
        .filter(|p| {
            flow_counts[p.mix_order()] > 0
                || matches!(p, Protocol::Other | Protocol::Unknown)
        })
        .collect();

    let flows_col: Vec<u64> = include.iter().map(|p| flow_counts[p.mix_order()]).collect();
    let bytes_col: Vec<u64> = include.iter().map(|p| byte_counts[p.mix_order()]).collect();
    let flow_pcts = percentages(&flows_col);
    let byte_pcts = percentages(&bytes_col);

    include
        .iter()
        .enumerate()
        .map(|(i, p)| MixRow {
            service: p.name().to_string(),
            typical_port: p.typical_port().to_string(),
            flows_pct: flow_pcts[i],
            volume_pct: byte_pcts[i],
            flows: flows_col[i],
            bytes: bytes_col[i],
        })
        .collect()
}

/// Largest-remainder rounding to two decimals: per-row values stay within
/// half a hundredth of exact, and the column sums to 100.00 on the nose.
/// An all-zero column (no payload bytes anywhere) stays all zero.
fn percentages(counts: &[u64]) -> Vec<f64> {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return vec![0.0; counts.len()];
    }
    // Work in hundredths of a percent.
    let mut base: Vec<u64> = Vec::with_capacity(counts.len());
    let mut remainders: Vec<(usize, f64)> = Vec::with_capacity(counts.len());
    for (i, &c) in counts.iter().enumerate() {
        let exact = c as f64 * 10000.0 / total as f64;
        let floor = exact.floor();
        base.push(floor as u64);
        remainders.push((i, exact - floor));
    }
    let assigned: u64 = base.iter().sum();
    let mut leftover = 10000u64.saturating_sub(assigned);
    remainders.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    for (i, _) in remainders {
        if leftover == 0 {
            break;
        }
        base[i] += 1;
        leftover -= 1;
    }
    base.into_iter().map(|h| h as f64 / 100.0).collect()
}

/// Write the table as CSV: Service, Typical Port, % Flows, % Volume.
pub fn write_mix_csv<W: io::Write>(rows: &[MixRow], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["Service", "Typical Port", "% Flows", "% Volume"])?;
    for row in rows {
        w.write_record([
            row.service.as_str(),
            row.typical_port.as_str(),
            &format!("{:.2}", row.flows_pct),
            &format!("{:.2}", row.volume_pct),
        ])?;
    }
    w.flush()?;
    Ok(())
}
