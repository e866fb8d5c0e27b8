//! Fixed-length flow feature vectors for the relayed-flow and tunnel-flow
//! classifiers.
//!
//! A vector is parameterized by three packet-count caps `(N_up, N_down,
//! N_all)`. Each cap is either 0 (that direction contributes no blocks) or a
//! power of two >= 2, and expands to the exponential index sequence
//! `{2, 4, 8, ..., N}`. For every index `i` the extractor profiles the first
//! `i` packets of the corresponding direction:
//!
//! * `UpRatio_i`: upstream bytes over total bytes, measured at the i-th
//!   upstream packet (upstream caps only);
//! * `PAT_{dir}_{i}_{stat}`: inter-packet arrival time, four stats;
//! * `BPS_{dir}_{i}` / `PPS_{dir}_{i}`: throughput in bytes and packets per
//!   second over the window's time span;
//! * `PS_{dir}_{i}_{stat}`: packet size, four stats.
//!
//! Stats are mean, min, max, and population standard deviation, in that
//! order. When a direction holds fewer than `i` packets the feature is
//! padded with the value at the largest filled sequence index, so vectors
//! keep the same shape across flows of varying length. A direction with no
//! packets at all yields zeros and clears the matching validity flag; the
//! flags ride beside the vector and are not part of the model input.

use std::io;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::capture::{Direction, Flow};

/// Statistic suffixes in canonical order.
pub const STAT_NAMES: [&str; 4] = ["mean", "min", "max", "std"];

/// Zero-span throughput windows divide by this instead of by zero.
const MIN_SPAN_SECS: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("packet cap {0} must be 0 or a power of two >= 2")]
    BadCap(u32),
    #[error("flow has no payload packets")]
    EmptyFlow,
}

/// Packet-count caps for the three feature directions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub n_up: u32,
    pub n_down: u32,
    pub n_all: u32,
}

impl Default for FeatureConfig {
    /// The (8, 8, 8) scheme: the smallest configuration that still scores
    /// competitively, so classification can happen early in a flow's life.
    fn default() -> Self {
        FeatureConfig { n_up: 8, n_down: 8, n_all: 8 }
    }
}

impl FeatureConfig {
    pub fn new(n_up: u32, n_down: u32, n_all: u32) -> Result<Self, FeatureError> {
        let cfg = FeatureConfig { n_up, n_down, n_all };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), FeatureError> {
        for cap in [self.n_up, self.n_down, self.n_all] {
            if cap != 0 && (cap < 2 || !cap.is_power_of_two()) {
                return Err(FeatureError::BadCap(cap));
            }
        }
        Ok(())
    }

    /// Exponential index sequence for one cap: `{2, 4, 8, ..., cap}`, empty
    /// when the cap is 0.
    pub fn sequence(cap: u32) -> Vec<u32> {
        let mut seq = Vec::new();
        let mut i = 2u32;
        while i <= cap {
            seq.push(i);
            i *= 2;
        }
        seq
    }

    /// Number of features the config produces. Each upstream index carries
    /// 11 features (UpRatio + 4 PAT + BPS + PPS + 4 PS); each downstream or
    /// bidirectional index carries 10.
    pub fn len(&self) -> usize {
        let up = Self::sequence(self.n_up).len();
        let down = Self::sequence(self.n_down).len();
        let all = Self::sequence(self.n_all).len();
        up * 11 + down * 10 + all * 10
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Feature names in vector order: the UpRatio block, then PAT per
    /// direction (up, down, all), then BPS/PPS per direction, then PS per
    /// direction. Within a block indices ascend and stats keep the canonical
    /// order.
    pub fn feature_names(&self) -> Vec<String> {
        let seqs = [
            ("up", Self::sequence(self.n_up)),
            ("down", Self::sequence(self.n_down)),
            ("all", Self::sequence(self.n_all)),
        ];
        let mut names = Vec::with_capacity(self.len());
        for &i in &seqs[0].1 {
            names.push(format!("UpRatio_{i}"));
        }
        for (dir, seq) in &seqs {
            for &i in seq {
                for stat in STAT_NAMES {
                    names.push(format!("PAT_{dir}_{i}_{stat}"));
                }
            }
        }
        for (dir, seq) in &seqs {
            for &i in seq {
                names.push(format!("BPS_{dir}_{i}"));
                names.push(format!("PPS_{dir}_{i}"));
            }
        }
        for (dir, seq) in &seqs {
            for &i in seq {
                for stat in STAT_NAMES {
                    names.push(format!("PS_{dir}_{i}_{stat}"));
                }
            }
        }
        names
    }
}

/// One flow's features, plus per-direction validity. An invalid direction
/// contributed zeros; downstream consumers decide whether to keep such rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub up_valid: bool,
    pub down_valid: bool,
}

/// Timestamps and payload sizes of one direction (or of the whole flow), in
/// capture order.
struct Series {
    ts: Vec<f64>,
    sizes: Vec<f64>,
}

impl Series {
    fn len(&self) -> usize {
        self.ts.len()
    }

    /// Window size for index `i`: `i` itself when filled, otherwise the
    /// largest sequence index that is filled, falling back to the packet
    /// count (necessarily 1) when even index 2 is not. None when the series
    /// is empty.
    fn window(&self, i: u32, seq: &[u32]) -> Option<usize> {
        let n = self.len();
        if n == 0 {
            return None;
        }
        if i as usize <= n {
            return Some(i as usize);
        }
        match seq.iter().copied().filter(|&j| j as usize <= n).max() {
            Some(anchor) => Some(anchor as usize),
            None => Some(n),
        }
    }

    /// Inter-arrival stats over the first `w` packets; fewer than two
    /// packets leave no gaps and yield zeros.
    fn pat_stats(&self, w: usize) -> [f64; 4] {
        if w < 2 {
            return [0.0; 4];
        }
        let gaps: Vec<f64> = self.ts[..w].windows(2).map(|p| p[1] - p[0]).collect();
        stats(&gaps)
    }

    /// Bytes-per-second and packets-per-second over the first `w` packets,
    /// with the window span clamped away from zero.
    fn throughput(&self, w: usize) -> [f64; 2] {
        let span = (self.ts[w - 1] - self.ts[0]).max(MIN_SPAN_SECS);
        let bytes: f64 = self.sizes[..w].iter().sum();
        [bytes / span, w as f64 / span]
    }

    fn ps_stats(&self, w: usize) -> [f64; 4] {
        stats(&self.sizes[..w])
    }
}

/// Mean, min, max, population standard deviation. Callers never pass an
/// empty slice.
fn stats(xs: &[f64]) -> [f64; 4] {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for &x in xs {
        min = min.min(x);
        max = max.max(x);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    [mean, min, max, var.sqrt()]
}

fn split_series(flow: &Flow) -> (Series, Series, Series) {
    let mut up = Series { ts: Vec::new(), sizes: Vec::new() };
    let mut down = Series { ts: Vec::new(), sizes: Vec::new() };
    let mut all = Series {
        ts: Vec::with_capacity(flow.packets.len()),
        sizes: Vec::with_capacity(flow.packets.len()),
    };
    for pkt in &flow.packets {
        let size = pkt.payload_len() as f64;
        let dir = match pkt.direction {
            Direction::Up => &mut up,
            Direction::Down => &mut down,
        };
        dir.ts.push(pkt.timestamp);
        dir.sizes.push(size);
        all.ts.push(pkt.timestamp);
        all.sizes.push(size);
    }
    (up, down, all)
}

/// Upstream-to-total byte ratio measured at the `w`-th upstream packet.
/// Downstream bytes count when their arrival time is at or before that
/// packet's timestamp.
fn up_ratio_at(up: &Series, down: &Series, w: usize) -> f64 {
    let cutoff = up.ts[w - 1];
    let up_len: f64 = up.sizes[..w].iter().sum();
    let down_len: f64 = down
        .ts
        .iter()
        .zip(&down.sizes)
        .take_while(|(ts, _)| **ts <= cutoff)
        .map(|(_, size)| size)
        .sum();
    let total = up_len + down_len;
    if total == 0.0 {
        0.0
    } else {
        up_len / total
    }
}

/// Compute the feature vector for one flow.
pub fn extract_features(flow: &Flow, cfg: &FeatureConfig) -> Result<FeatureVector, FeatureError> {
    cfg.validate()?;
    if flow.packets.is_empty() {
        return Err(FeatureError::EmptyFlow);
    }
    let (up, down, all) = split_series(flow);
    let seq_up = FeatureConfig::sequence(cfg.n_up);
    let seq_down = FeatureConfig::sequence(cfg.n_down);
    let seq_all = FeatureConfig::sequence(cfg.n_all);
    let blocks: [(&Series, &[u32]); 3] =
        [(&up, &seq_up), (&down, &seq_down), (&all, &seq_all)];

    let mut values = Vec::with_capacity(cfg.len());
    for &i in &seq_up {
        match up.window(i, &seq_up) {
            Some(w) => values.push(up_ratio_at(&up, &down, w)),
            None => values.push(0.0),
        }
    }
    for (series, seq) in blocks {
        for &i in seq {
            match series.window(i, seq) {
                Some(w) => values.extend_from_slice(&series.pat_stats(w)),
                None => values.extend_from_slice(&[0.0; 4]),
            }
        }
    }
    for (series, seq) in blocks {
        for &i in seq {
            match series.window(i, seq) {
                Some(w) => values.extend_from_slice(&series.throughput(w)),
                None => values.extend_from_slice(&[0.0; 2]),
            }
        }
    }
    for (series, seq) in blocks {
        for &i in seq {
            match series.window(i, seq) {
                Some(w) => values.extend_from_slice(&series.ps_stats(w)),
                None => values.extend_from_slice(&[0.0; 4]),
            }
        }
    }
    debug_assert_eq!(values.len(), cfg.len());
    Ok(FeatureVector {
        values,
        up_valid: up.len() > 0,
        down_valid: down.len() > 0,
    })
}

/// Extract vectors for many flows in parallel, preserving input order.
pub fn extract_all(
    flows: &[Flow],
    cfg: &FeatureConfig,
) -> Result<Vec<FeatureVector>, FeatureError> {
    cfg.validate()?;
    flows
        .par_iter()
        .map(|flow| extract_features(flow, cfg))
        .collect()
}

/// Write a feature matrix as CSV: a `flow` identifier column followed by the
/// canonical feature names. Values print in shortest round-trip form.
pub fn write_matrix_csv<W: io::Write>(
    out: &mut W,
    cfg: &FeatureConfig,
    rows: &[(String, FeatureVector)],
) -> io::Result<()> {
    let mut header = String::from("flow");
    for name in cfg.feature_names() {
        header.push(',');
        header.push_str(&name);
    }
    writeln!(out, "{header}")?;
    for (id, vector) in rows {
        let mut line = id.clone();
        for value in &vector.values {
            line.push(',');
            line.push_str(&value.to_string());
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}
