//! Infiltration-probe correlation and IP-dataset overlap. A probe harness
//! sends marked HTTP requests through a proxy service and logs where and
//! when; matching those logs against relayed flows captured at an exit
//! node proves the node carried the probe.
//!
//! Matching is one-to-one: candidate pairs share a destination (IP and
//! port) and fall within time and size tolerances, then a greedy pass
//! over candidates sorted by (time delta, size delta, probe id, flow key)
//! assigns each probe and each flow at most once. The sort chain is total
//! for unique probe ids and flow keys, so input order never changes the
//! match set.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{self, BufRead, BufReader};
use std::net::IpAddr;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::capture::{Flow, FlowKey};

#[derive(Debug, Error)]
pub enum CorrelateError {
    #[error("tolerances must be positive: {0}")]
    BadTolerance(String),
    #[error("base IP set is empty")]
    EmptyBaseSet,
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}:{line}: {detail}")]
    Parse { path: PathBuf, line: usize, detail: String },
}

/// One logged probe: a marked request sent at a known time to a known
/// destination. Timestamps are unix seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeLogEntry {
    pub probe_id: String,
    pub dest_ip: IpAddr,
    pub dest_port: u16,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub url: Option<String>,
    pub send_ts: f64,
    pub request_size: u64,
    pub response_size: u64,
}

/// Matching tolerances. Proxies add latency and header jitter, so the
/// defaults allow a few seconds and a few dozen bytes of slack.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchTolerance {
    pub dt_secs: f64,
    pub dbytes: u64,
}

impl Default for MatchTolerance {
    fn default() -> Self {
        MatchTolerance { dt_secs: 5.0, dbytes: 64 }
    }
}

impl MatchTolerance {
    fn validate(&self) -> Result<(), CorrelateError> {
        if !(self.dt_secs.is_finite() && self.dt_secs > 0.0) {
            return Err(CorrelateError::BadTolerance(format!("dt = {}", self.dt_secs)));
        }
        if self.dbytes == 0 {
            return Err(CorrelateError::BadTolerance("dbytes = 0".to_string()));
        }
        Ok(())
    }
}

/// One confirmed probe-to-flow assignment. Deltas keep their sign: the
/// time offset is flow start minus probe send, the size difference is
/// flow upstream bytes minus request size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub probe_id: String,
    pub flow: FlowKey,
    pub delta_t: f64,
    pub delta_bytes: i64,
}

/// Matches plus everything that did not pair up.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationReport {
    pub matches: Vec<MatchResult>,
    pub unmatched_probes: Vec<String>,
    pub unmatched_flows: Vec<FlowKey>,
}

struct Candidate {
    probe: usize,
    flow: usize,
    abs_dt: f64,
    abs_db: u64,
}

/// Match probes against flows one-to-one under the tolerances. Candidate
/// generation runs parallel per probe; the final assignment is a serial
/// greedy pass in deterministic order.
pub fn correlate_probes(
    probes: &[ProbeLogEntry],
    flows: &[Flow],
    tol: &MatchTolerance,
) -> Result<CorrelationReport, CorrelateError> {
    tol.validate()?;
    let mut by_dest: BTreeMap<(IpAddr, u16), Vec<usize>> = BTreeMap::new();
    for (fi, flow) in flows.iter().enumerate() {
        by_dest.entry((flow.key.dst.ip, flow.key.dst.port)).or_default().push(fi);
    }

    let mut candidates: Vec<Candidate> = probes
        .par_iter()
        .enumerate()
        .flat_map_iter(|(pi, probe)| {
            by_dest
                .get(&(probe.dest_ip, probe.dest_port))
                .into_iter()
                .flatten()
                .filter_map(move |&fi| {
                    let flow = &flows[fi];
                    let dt = flow.first_ts - probe.send_ts;
                    let db = flow.up_bytes as i64 - probe.request_size as i64;
                    (dt.abs() <= tol.dt_secs && db.unsigned_abs() <= tol.dbytes).then_some(
                        Candidate { probe: pi, flow: fi, abs_dt: dt.abs(), abs_db: db.unsigned_abs() },
                    )
                })
                .collect::<Vec<_>>()
        })
        .collect();

    candidates.sort_by(|a, b| {
        a.abs_dt
            .total_cmp(&b.abs_dt)
            .then_with(|| a.abs_db.cmp(&b.abs_db))
            .then_with(|| probes[a.probe].probe_id.cmp(&probes[b.probe].probe_id))
            .then_with(|| flows[a.flow].key.cmp(&flows[b.flow].key))
    });

    let mut probe_taken = vec![false; probes.len()];
    let mut flow_taken = vec![false; flows.len()];
    let mut matches = Vec::new();
    for cand in candidates {
        if probe_taken[cand.probe] || flow_taken[cand.flow] {
            continue;
        }
        probe_taken[cand.probe] = true;
        flow_taken[cand.flow] = true;
        let probe = &probes[cand.probe];
        let flow = &flows[cand.flow];
        matches.push(MatchResult {
            probe_id: probe.probe_id.clone(),
            flow: flow.key,
            delta_t: flow.first_ts - probe.send_ts,
            delta_bytes: flow.up_bytes as i64 - probe.request_size as i64,
        });
    }
    // Stable report order regardless of assignment order.
    matches.sort_by(|a, b| a.probe_id.cmp(&b.probe_id));

    let unmatched_probes = probes
        .iter()
        .zip(&probe_taken)
        .filter(|(_, taken)| !**taken)
        .map(|(p, _)| p.probe_id.clone())
        .collect();
    let mut unmatched_flows: Vec<FlowKey> = flows
        .iter()
        .zip(&flow_taken)
        .filter(|(_, taken)| !**taken)
        .map(|(f, _)| f.key)
        .collect();
    unmatched_flows.sort();

    Ok(CorrelationReport { matches, unmatched_probes, unmatched_flows })
}

/// Overlap of a base IP set against named prior sets: exact intersection
/// counts and percentages relative to the base.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OverlapReport {
    pub base_size: u64,
    /// (name, intersection size, percent of base) per prior set.
    pub per_set: Vec<(String, u64, f64)>,
    pub union_count: u64,
    pub union_percent: f64,
}

pub fn dataset_overlap(
    ours: &BTreeSet<IpAddr>,
    prior: &[(String, BTreeSet<IpAddr>)],
) -> Result<OverlapReport, CorrelateError> {
    if ours.is_empty() {
        return Err(CorrelateError::EmptyBaseSet);
    }
    let base = ours.len() as u64;
    let percent = |count: u64| 100.0 * count as f64 / base as f64;
    let per_set = prior
        .iter()
        .map(|(name, set)| {
            let count = ours.intersection(set).count() as u64;
            (name.clone(), count, percent(count))
        })
        .collect();
    let union_count =
        ours.iter().filter(|ip| prior.iter().any(|(_, set)| set.contains(ip))).count() as u64;
    Ok(OverlapReport { base_size: base, per_set, union_count, union_percent: percent(union_count) })
}

/// Load a JSONL probe log.
pub fn load_probes(path: &Path) -> Result<Vec<ProbeLogEntry>, CorrelateError> {
    let file = std::fs::File::open(path)
        .map_err(|source| CorrelateError::Io { path: path.to_path_buf(), source })?;
    let mut probes = Vec::new();
    for (number, line) in BufReader::new(file).lines().enumerate() {
        let line =
            line.map_err(|source| CorrelateError::Io { path: path.to_path_buf(), source })?;
        if line.trim().is_empty() {
            continue;
        }
        let entry = serde_json::from_str(&line).map_err(|err| CorrelateError::Parse {
            path: path.to_path_buf(),
            line: number + 1,
            detail: err.to_string(),
        })?;
        probes.push(entry);
    }
    Ok(probes)
}

/// Load a newline-delimited IP set. Blank lines and `#` comments are
/// skipped.
pub fn load_ip_set(path: &Path) -> Result<BTreeSet<IpAddr>, CorrelateError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| CorrelateError::Io { path: path.to_path_buf(), source })?;
    let mut set = BTreeSet::new();
    for (number, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let ip: IpAddr = line.parse().map_err(|err| CorrelateError::Parse {
            path: path.to_path_buf(),
            line: number + 1,
            detail: format!("{err}"),
        })?;
        set.insert(ip);
    }
    Ok(set)
}

pub fn write_matches_jsonl<W: io::Write>(
    out: &mut W,
    report: &CorrelationReport,
) -> io::Result<()> {
    for m in &report.matches {
        serde_json::to_writer(&mut *out, m)?;
        writeln!(out)?;
    }
    Ok(())
}
