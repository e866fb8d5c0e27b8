//! Labeled corpora for classifier tests: separable flow populations and
//! feature matrices with one planted informative column.

use rand::Rng;

use super::{endpoint, make_flow, rng};
use crate::capture::{Direction, Flow, Transport};
use crate::features::{FeatureConfig, FeatureVector};

/// Two separable flow populations, labels alternating 0/1 by index.
///
/// Label 1 imitates long-lived tunnel carriers: dozens of packets near the
/// MTU. Label 0 imitates short relayed exchanges: a handful of small
/// packets. The packet-size ranges do not overlap, so any reasonable model
/// should separate a holdout split almost perfectly.
pub fn separable_flow_corpus(n: usize, seed: u64) -> (Vec<Flow>, Vec<u8>) {
    let mut rng = rng(seed);
    let mut flows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for k in 0..n {
        let label = (k % 2) as u8;
        let (count, size_lo, size_hi, gap_lo, gap_hi, port) = if label == 1 {
            (rng.random_range(24..=48usize), 900, 1400, 0.05, 0.5, 443)
        } else {
            (rng.random_range(4..=10usize), 40, 600, 0.001, 0.05, 80)
        };
        let mut script: Vec<(Direction, f64, Vec<u8>)> = Vec::with_capacity(count);
        let mut t = 0.0;
        for p in 0..count {
            t += rng.random_range(gap_lo..gap_hi);
            // The first two packets fix one packet per direction so every
            // flow has both directions populated.
            let dir = match p {
                0 => Direction::Up,
                1 => Direction::Down,
                _ => {
                    if rng.random_bool(0.5) {
                        Direction::Up
                    } else {
                        Direction::Down
                    }
                }
            };
            let size = rng.random_range(size_lo..=size_hi);
            script.push((dir, t, vec![0xaa; size]));
        }
        let view: Vec<(Direction, f64, &[u8])> =
            script.iter().map(|(d, t, p)| (*d, *t, p.as_slice())).collect();
        let src = endpoint(&format!("10.{}.{}.5:{}", k / 250, k % 250, 30000 + (k % 20000)));
        let dst = endpoint(&format!("203.0.113.{}:{}", k % 254 + 1, port));
        flows.push(make_flow(Transport::Tcp, src, dst, 1000.0 + k as f64, &view));
        labels.push(label);
    }
    (flows, labels)
}

/// A feature matrix where exactly one named column carries signal.
///
/// Every other column is label-independent uniform noise in [0, 1). The
/// planted column draws from [0, 0.4) for label 0 and [0.6, 1.0) for label
/// 1, so a trained model must put essentially all of its importance there.
pub fn planted_feature_matrix(
    cfg: &FeatureConfig,
    n: usize,
    planted: &str,
    seed: u64,
) -> (Vec<FeatureVector>, Vec<u8>) {
    let names = cfg.feature_names();
    let column = names
        .iter()
        .position(|name| name == planted)
        .expect("planted feature must exist in the config");
    let mut rng = rng(seed);
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for k in 0..n {
        let label = (k % 2) as u8;
        let mut values: Vec<f64> = (0..names.len()).map(|_| rng.random_range(0.0..1.0)).collect();
        values[column] = if label == 1 {
            rng.random_range(0.6..1.0)
        } else {
            rng.random_range(0.0..0.4)
        };
        rows.push(FeatureVector { values, up_valid: true, down_valid: true });
        labels.push(label);
    }
    (rows, labels)
}
