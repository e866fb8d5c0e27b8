//! Random-forest training, prediction, persistence, and mean-impurity
//! feature ranking for the relayed-flow and tunnel-flow detectors.
//!
//! Trees split on axis-aligned thresholds chosen by Gini impurity over a
//! random feature subset drawn per split; each tree grows on its own
//! bootstrap sample. The ensemble predicts by majority vote and reports the
//! positive-tree fraction as a probability; a tied vote resolves to the
//! negative class so borderline flows are not flagged.
//!
//! Determinism is a hard requirement, row order included. Before any random
//! draw the rows are sorted by the SHA-256 digest of their canonical
//! encoding (each feature as little-endian IEEE-754 bits, then the label
//! byte), so shuffling the input cannot change the model. Tree `t` seeds its
//! own generator with a SplitMix64 hash of the master seed and `t`, which
//! lets trees grow in parallel and still match serial training bit for bit.
//!
//! Models persist as versioned JSON embedding the feature configuration;
//! prediction refuses vectors whose width does not match.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::features::{FeatureConfig, FeatureVector};

/// Bumped when the persisted layout changes shape.
pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Splits with a Gini decrease at or below this are treated as no split;
/// guards against sign noise in the parent-minus-children subtraction.
const MIN_DECREASE: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ForestError {
    #[error("degenerate labels: every row is labeled {0}")]
    DegenerateLabels(u8),
    #[error("label {label} at row {row} is not 0 or 1")]
    BadLabel { row: usize, label: u8 },
    #[error("NaN feature at row {row}, column {column} ({name})")]
    NanFeature { row: usize, column: usize, name: String },
    #[error("row {row} has {got} features, expected {want}")]
    RaggedRow { row: usize, got: usize, want: usize },
    #[error("{labels} labels for {rows} rows")]
    LabelCount { labels: usize, rows: usize },
    #[error("need at least 2 training rows, got {0}")]
    TooFewRows(usize),
    #[error("vector has {got} features, model expects {want}")]
    DimensionMismatch { got: usize, want: usize },
    #[error("unsupported model format version {0}")]
    BadVersion(u32),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: not a valid model file: {detail}")]
    Corrupt { path: PathBuf, detail: String },
}

/// Training knobs. The defaults are the conventional ones: 100 trees grown
/// to purity, square-root feature subsampling, single-row leaves allowed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub trees: u32,
    /// None grows until leaves are pure or unsplittable.
    pub max_depth: Option<u32>,
    /// Candidate features drawn per split; None means floor(sqrt(d)), at
    /// least 1.
    pub features_per_split: Option<u32>,
    pub min_leaf: u32,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Hyperparameters { trees: 100, max_depth: None, features_per_split: None, min_leaf: 1 }
    }
}

/// A validated, labeled feature matrix plus the master seed.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    config: FeatureConfig,
    names: Vec<String>,
    rows: Vec<Vec<f64>>,
    labels: Vec<u8>,
    seed: u64,
}

impl TrainingSet {
    pub fn new(
        config: FeatureConfig,
        rows: Vec<Vec<f64>>,
        labels: Vec<u8>,
        seed: u64,
    ) -> Result<Self, ForestError> {
        let names = config.feature_names();
        if labels.len() != rows.len() {
            return Err(ForestError::LabelCount { labels: labels.len(), rows: rows.len() });
        }
        for (row, values) in rows.iter().enumerate() {
            if values.len() != names.len() {
                return Err(ForestError::RaggedRow {
                    row,
                    got: values.len(),
                    want: names.len(),
                });
            }
            for (column, value) in values.iter().enumerate() {
                if value.is_nan() {
                    return Err(ForestError::NanFeature {
                        row,
                        column,
                        name: names[column].clone(),
                    });
                }
            }
        }
        for (row, &label) in labels.iter().enumerate() {
            if label > 1 {
                return Err(ForestError::BadLabel { row, label });
            }
        }
        Ok(TrainingSet { config, names, rows, labels, seed })
    }

    pub fn from_vectors(
        config: FeatureConfig,
        vectors: &[FeatureVector],
        labels: &[u8],
        seed: u64,
    ) -> Result<Self, ForestError> {
        let rows = vectors.iter().map(|fv| fv.values.clone()).collect();
        TrainingSet::new(config, rows, labels.to_vec(), seed)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn feature_names(&self) -> &[String] {
        &self.names
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Indices of `rows` sorted by content digest. Identical rows hash
    /// identically, so input order never leaks into training.
    fn canonical_order(&self) -> Vec<usize> {
        let mut keyed: Vec<([u8; 32], usize)> = self
            .rows
            .iter()
            .zip(&self.labels)
            .enumerate()
            .map(|(k, (row, &label))| (row_digest(row, label), k))
            .collect();
        keyed.sort();
        keyed.into_iter().map(|(_, k)| k).collect()
    }
}

fn row_digest(row: &[f64], label: u8) -> [u8; 32] {
    let mut hasher = Sha256::new();
    for value in row {
        hasher.update(value.to_bits().to_le_bytes());
    }
    hasher.update([label]);
    hasher.finalize().into()
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn tree_seed(master: u64, tree_index: u64) -> u64 {
    splitmix64(master ^ splitmix64(tree_index))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Node {
    Leaf {
        label: u8,
    },
    Split {
        feature: u32,
        threshold: f64,
        /// Indices into the tree's node arena.
        left: u32,
        right: u32,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    seed: u64,
    /// Rows (canonical order) drawn with replacement for this tree.
    bootstrap: Vec<u32>,
    /// Node arena, root at index 0.
    nodes: Vec<Node>,
}

impl Tree {
    fn predict(&self, row: &[f64]) -> u8 {
        let mut at = 0usize;
        loop {
            match &self.nodes[at] {
                Node::Leaf { label } => return *label,
                Node::Split { feature, threshold, left, right } => {
                    at = if row[*feature as usize] <= *threshold {
                        *left as usize
                    } else {
                        *right as usize
                    };
                }
            }
        }
    }

    /// Longest root-to-leaf edge count.
    pub fn depth(&self) -> u32 {
        fn walk(nodes: &[Node], at: usize) -> u32 {
            match &nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => {
                    1 + walk(nodes, *left as usize).max(walk(nodes, *right as usize))
                }
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }
}

/// A trained forest. Serializable as a self-describing model file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeEnsemble {
    pub format_version: u32,
    pub config: FeatureConfig,
    pub names: Vec<String>,
    pub hyperparameters: Hyperparameters,
    pub seed: u64,
    /// Mean impurity decrease per feature, normalized to sum 1 (all zeros
    /// when no tree managed a split).
    pub importance: Vec<f64>,
    pub trees: Vec<Tree>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Prediction {
    /// 1 = positive (target class), 0 = negative. Ties go negative.
    pub label: u8,
    /// Fraction of trees voting positive.
    pub probability: f64,
}

struct TreeGrower<'a> {
    rows: &'a [&'a [f64]],
    labels: &'a [u8],
    min_leaf: usize,
    max_depth: Option<u32>,
    k_features: usize,
    d: usize,
    rng: ChaCha8Rng,
    nodes: Vec<Node>,
    /// Raw impurity-decrease sums, weighted by node sample fraction.
    importance: Vec<f64>,
}

impl<'a> TreeGrower<'a> {
    fn grow(&mut self, samples: Vec<u32>, depth: u32) -> u32 {
        let positives = samples.iter().filter(|&&s| self.labels[s as usize] == 1).count();
        let total = samples.len();
        let make_leaf = |grower: &mut Self| {
            // Leaf ties resolve negative, matching the ensemble vote rule.
            let label = u8::from(positives * 2 > total);
            grower.nodes.push(Node::Leaf { label });
            (grower.nodes.len() - 1) as u32
        };
        if positives == 0
            || positives == total
            || total < 2 * self.min_leaf
            || self.max_depth.is_some_and(|cap| depth >= cap)
        {
            return make_leaf(self);
        }
        let Some((feature, threshold, decrease)) = self.best_split(&samples) else {
            return make_leaf(self);
        };
        self.importance[feature] +=
            decrease * total as f64 / self.rows.len() as f64;
        let (left_rows, right_rows): (Vec<u32>, Vec<u32>) = samples
            .into_iter()
            .partition(|&s| self.rows[s as usize][feature] <= threshold);
        let at = self.nodes.len() as u32;
        self.nodes.push(Node::Leaf { label: 0 });
        let left = self.grow(left_rows, depth + 1);
        let right = self.grow(right_rows, depth + 1);
        self.nodes[at as usize] =
            Node::Split { feature: feature as u32, threshold, left, right };
        at
    }

    /// Best (feature, threshold, Gini decrease) over a fresh random feature
    /// subset, or None when nothing splits. Candidates are scanned in draw
    /// order and a strictly better decrease is required to displace the
    /// incumbent, so the result is deterministic under the tree's seed.
    fn best_split(&mut self, samples: &[u32]) -> Option<(usize, f64, f64)> {
        let mut candidates: Vec<usize> = (0..self.d).collect();
        for swap in 0..self.k_features.min(self.d) {
            let pick = self.rng.random_range(swap..self.d);
            candidates.swap(swap, pick);
        }
        candidates.truncate(self.k_features.min(self.d));

        let total = samples.len();
        let positives = samples.iter().filter(|&&s| self.labels[s as usize] == 1).count();
        let parent = gini(positives, total - positives);
        let mut best: Option<(usize, f64, f64)> = None;
        let mut column: Vec<(f64, u8)> = Vec::with_capacity(total);
        for &feature in &candidates {
            column.clear();
            column.extend(
                samples
                    .iter()
                    .map(|&s| (self.rows[s as usize][feature], self.labels[s as usize])),
            );
            column.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut left_n = 0usize;
            let mut left_pos = 0usize;
            for edge in 0..total - 1 {
                left_n += 1;
                left_pos += column[edge].1 as usize;
                if column[edge].0 == column[edge + 1].0 {
                    continue;
                }
                let right_n = total - left_n;
                if left_n < self.min_leaf || right_n < self.min_leaf {
                    continue;
                }
                let right_pos = positives - left_pos;
                let weighted = (left_n as f64 * gini(left_pos, left_n - left_pos)
                    + right_n as f64 * gini(right_pos, right_n - right_pos))
                    / total as f64;
                let decrease = parent - weighted;
                if decrease <= MIN_DECREASE {
                    continue;
                }
                if best.map_or(true, |(_, _, incumbent)| decrease > incumbent) {
                    let lo = column[edge].0;
                    let hi = column[edge + 1].0;
                    let mut threshold = lo + (hi - lo) / 2.0;
                    // Adjacent floats can round the midpoint up to hi; keep
                    // the partition consistent with the counts above.
                    if threshold >= hi {
                        threshold = lo;
                    }
                    best = Some((feature, threshold, decrease));
                }
            }
        }
        best
    }
}

fn gini(pos: usize, neg: usize) -> f64 {
    let n = (pos + neg) as f64;
    if n == 0.0 {
        return 0.0;
    }
    let p = pos as f64 / n;
    let q = neg as f64 / n;
    1.0 - p * p - q * q
}

/// Grow a forest. Deterministic in (training set content, seed,
/// hyperparameters); row order does not matter.
pub fn train(ts: &TrainingSet, hp: &Hyperparameters) -> Result<TreeEnsemble, ForestError> {
    if ts.rows.len() < 2 {
        return Err(ForestError::TooFewRows(ts.rows.len()));
    }
    let positives = ts.labels.iter().filter(|&&l| l == 1).count();
    if positives == 0 || positives == ts.labels.len() {
        return Err(ForestError::DegenerateLabels(ts.labels[0]));
    }

    let order = ts.canonical_order();
    let rows: Vec<&[f64]> = order.iter().map(|&k| ts.rows[k].as_slice()).collect();
    let labels: Vec<u8> = order.iter().map(|&k| ts.labels[k]).collect();
    let d = ts.names.len();
    let k_features = match hp.features_per_split {
        Some(k) => (k as usize).clamp(1, d.max(1)),
        None => ((d as f64).sqrt().floor() as usize).max(1),
    };
    let n = rows.len();

    let results: Vec<(Tree, Vec<f64>)> = (0..hp.trees as u64)
        .into_par_iter()
        .map(|t| {
            let seed = tree_seed(ts.seed, t);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let bootstrap: Vec<u32> =
                (0..n).map(|_| rng.random_range(0..n) as u32).collect();
            let mut grower = TreeGrower {
                rows: &rows,
                labels: &labels,
                min_leaf: (hp.min_leaf as usize).max(1),
                max_depth: hp.max_depth,
                k_features,
                d,
                rng,
                nodes: Vec::new(),
                importance: vec![0.0; d],
            };
            grower.grow(bootstrap.clone(), 0);
            let TreeGrower { nodes, importance, .. } = grower;
            (Tree { seed, bootstrap, nodes }, importance)
        })
        .collect();

    let mut importance = vec![0.0; d];
    for (_, tree_imp) in &results {
        for (total, part) in importance.iter_mut().zip(tree_imp) {
            *total += part;
        }
    }
    let trees: Vec<Tree> = results.into_iter().map(|(tree, _)| tree).collect();
    for value in importance.iter_mut() {
        *value /= trees.len() as f64;
    }
    let sum: f64 = importance.iter().sum();
    if sum > 0.0 {
        for value in importance.iter_mut() {
            *value /= sum;
        }
    }

    Ok(TreeEnsemble {
        format_version: MODEL_FORMAT_VERSION,
        config: ts.config,
        names: ts.names.clone(),
        hyperparameters: *hp,
        seed: ts.seed,
        importance,
        trees,
    })
}

impl TreeEnsemble {
    pub fn dimensions(&self) -> usize {
        self.names.len()
    }

    pub fn predict(&self, fv: &FeatureVector) -> Result<Prediction, ForestError> {
        self.predict_row(&fv.values)
    }

    pub fn predict_row(&self, row: &[f64]) -> Result<Prediction, ForestError> {
        if row.len() != self.names.len() {
            return Err(ForestError::DimensionMismatch {
                got: row.len(),
                want: self.names.len(),
            });
        }
        let votes = self.trees.iter().filter(|t| t.predict(row) == 1).count();
        Ok(Prediction {
            label: u8::from(votes * 2 > self.trees.len()),
            probability: votes as f64 / self.trees.len() as f64,
        })
    }

    /// (name, importance) pairs, descending; ties keep vector order.
    pub fn feature_importance(&self) -> Vec<(String, f64)> {
        let mut ranked: Vec<(String, f64)> = self
            .names
            .iter()
            .cloned()
            .zip(self.importance.iter().copied())
            .collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
        ranked
    }

    pub fn top_features(&self, k: usize) -> Vec<(String, f64)> {
        let mut ranked = self.feature_importance();
        ranked.truncate(k);
        ranked
    }

    pub fn save(&self, path: &Path) -> Result<(), ForestError> {
        let bytes = serde_json::to_vec(self)
            .expect("model serialization cannot fail");
        fs::write(path, bytes).map_err(|source| ForestError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ForestError> {
        let bytes = fs::read(path).map_err(|source| ForestError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let model: TreeEnsemble =
            serde_json::from_slice(&bytes).map_err(|err| ForestError::Corrupt {
                path: path.to_path_buf(),
                detail: err.to_string(),
            })?;
        if model.format_version != MODEL_FORMAT_VERSION {
            return Err(ForestError::BadVersion(model.format_version));
        }
        if model.importance.len() != model.names.len() {
            return Err(ForestError::Corrupt {
                path: path.to_path_buf(),
                detail: format!(
                    "{} importance entries for {} features",
                    model.importance.len(),
                    model.names.len()
                ),
            });
        }
        Ok(model)
    }
}

/// Holdout metrics. Positive class is label 1; empty denominators yield 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub false_positive_rate: f64,
    pub false_negative_rate: f64,
    /// confusion[actual][predicted]
    pub confusion: [[u64; 2]; 2],
}

pub fn evaluate(
    model: &TreeEnsemble,
    vectors: &[FeatureVector],
    labels: &[u8],
) -> Result<Evaluation, ForestError> {
    if labels.len() != vectors.len() {
        return Err(ForestError::LabelCount { labels: labels.len(), rows: vectors.len() });
    }
    let mut confusion = [[0u64; 2]; 2];
    for (row, (fv, &label)) in vectors.iter().zip(labels).enumerate() {
        if label > 1 {
            return Err(ForestError::BadLabel { row, label });
        }
        let predicted = model.predict(fv)?;
        confusion[label as usize][predicted.label as usize] += 1;
    }
    let [[tn, fp], [fn_, tp]] = confusion.map(|row| row.map(|c| c as f64));
    let ratio = |num: f64, den: f64| if den > 0.0 { num / den } else { 0.0 };
    Ok(Evaluation {
        accuracy: ratio(tp + tn, tp + tn + fp + fn_),
        precision: ratio(tp, tp + fp),
        recall: ratio(tp, tp + fn_),
        false_positive_rate: ratio(fp, fp + tn),
        false_negative_rate: ratio(fn_, fn_ + tp),
        confusion,
    })
}

/// Side-by-side top-k ranking, one column per model: a rank column, then
/// each model's feature names in importance order.
pub fn importance_table(models: &[(String, &TreeEnsemble)], k: usize) -> String {
    let columns: Vec<Vec<String>> = models
        .iter()
        .map(|(_, model)| {
            model.top_features(k).into_iter().map(|(name, _)| name).collect()
        })
        .collect();
    let mut widths: Vec<usize> = models.iter().map(|(label, _)| label.len()).collect();
    for (width, column) in widths.iter_mut().zip(&columns) {
        for name in column {
            *width = (*width).max(name.len());
        }
    }
    let mut out = String::from("Rank");
    for ((label, _), width) in models.iter().zip(&widths) {
        out.push_str(&format!("  {label:<width$}"));
    }
    out.push('\n');
    for rank in 0..k {
        out.push_str(&format!("{:>4}", rank + 1));
        for (column, width) in columns.iter().zip(&widths) {
            let name = column.get(rank).map(String::as_str).unwrap_or("-");
            out.push_str(&format!("  {name:<width$}"));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::extract_all;
    use crate::synth;
    use rand::seq::SliceRandom;

    fn tiny_config() -> FeatureConfig {
        // Ten features, the smallest non-degenerate width.
        FeatureConfig::new(0, 0, 2).unwrap()
    }

    fn two_point_set(seed: u64) -> TrainingSet {
        let width = tiny_config().len();
        TrainingSet::new(
            tiny_config(),
            vec![vec![0.0; width], vec![1.0; width]],
            vec![0, 1],
            seed,
        )
        .unwrap()
    }

    /// Seed picked so the single tree's two-row bootstrap draws both rows.
    fn stump() -> TreeEnsemble {
        for seed in 0..64 {
            let ts = two_point_set(seed);
            let hp = Hyperparameters { trees: 1, ..Hyperparameters::default() };
            let model = train(&ts, &hp).unwrap();
            if model.trees[0].depth() == 1 {
                return model;
            }
        }
        panic!("no seed in 0..64 gave a mixed bootstrap");
    }

    #[test]
    fn two_separated_points_grow_a_depth_one_stump() {
        let model = stump();
        assert_eq!(model.trees.len(), 1);
        assert_eq!(model.trees[0].depth(), 1);
        assert_eq!(model.trees[0].node_count(), 3);
        let width = tiny_config().len();
        let neg = model.predict_row(&vec![0.0; width]).unwrap();
        let pos = model.predict_row(&vec![1.0; width]).unwrap();
        assert_eq!((neg.label, neg.probability), (0, 0.0));
        assert_eq!((pos.label, pos.probability), (1, 1.0));
    }

    #[test]
    fn single_split_model_gives_that_feature_all_importance() {
        let model = stump();
        let ranked = model.feature_importance();
        assert_eq!(ranked[0].1, 1.0);
        assert!(ranked[1..].iter().all(|(_, v)| *v == 0.0));
        let sum: f64 = model.importance.iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
    }

    #[test]
    fn tied_vote_resolves_negative_at_half_probability() {
        let mut model = stump();
        let tree = model.trees[0].clone();
        let mut flipped = tree.clone();
        // Two trees voting each way: force leaves to constants.
        flipped.nodes = vec![Node::Leaf { label: 1 }];
        let constant0 = Tree { seed: 0, bootstrap: vec![], nodes: vec![Node::Leaf { label: 0 }] };
        let constant1 = Tree { seed: 0, bootstrap: vec![], nodes: vec![Node::Leaf { label: 1 }] };
        model.trees = vec![constant0.clone(), constant0, flipped, constant1];
        let width = model.dimensions();
        let p = model.predict_row(&vec![0.5; width]).unwrap();
        assert_eq!(p.label, 0);
        assert_eq!(p.probability, 0.5);
        // Vote-count consistency: probability times tree count is integral.
        let votes = p.probability * model.trees.len() as f64;
        assert_eq!(votes, votes.round());
    }

    #[test]
    fn separable_corpus_classifies_holdout_almost_perfectly() {
        let (flows, labels) = synth::separable_flow_corpus(600, 7);
        let cfg = FeatureConfig::default();
        let vectors = extract_all(&flows, &cfg).unwrap();
        let split = 420;
        let ts = TrainingSet::from_vectors(cfg, &vectors[..split], &labels[..split], 99).unwrap();
        let hp = Hyperparameters { trees: 40, ..Hyperparameters::default() };
        let model = train(&ts, &hp).unwrap();
        let eval = evaluate(&model, &vectors[split..], &labels[split..]).unwrap();
        assert!(eval.accuracy >= 0.95, "accuracy {}", eval.accuracy);
        let total: u64 = eval.confusion.iter().flatten().sum();
        assert_eq!(total as usize, vectors.len() - split);
        for fv in &vectors[split..] {
            let p = model.predict(fv).unwrap();
            let votes = p.probability * model.trees.len() as f64;
            assert!((votes - votes.round()).abs() < 1e-9);
        }
    }

    #[test]
    fn training_is_deterministic_and_row_order_free() {
        let (flows, labels) = synth::separable_flow_corpus(120, 11);
        let cfg = FeatureConfig::default();
        let vectors = extract_all(&flows, &cfg).unwrap();
        let ts = TrainingSet::from_vectors(cfg, &vectors, &labels, 5).unwrap();
        let hp = Hyperparameters { trees: 12, ..Hyperparameters::default() };
        let once = serde_json::to_vec(&train(&ts, &hp).unwrap()).unwrap();
        let twice = serde_json::to_vec(&train(&ts, &hp).unwrap()).unwrap();
        assert_eq!(once, twice);

        let mut paired: Vec<(FeatureVector, u8)> =
            vectors.into_iter().zip(labels).collect();
        paired.shuffle(&mut synth::rng(123));
        let (shuffled, shuffled_labels): (Vec<_>, Vec<_>) = paired.into_iter().unzip();
        let ts2 =
            TrainingSet::from_vectors(cfg, &shuffled, &shuffled_labels, 5).unwrap();
        let shuffled_bytes = serde_json::to_vec(&train(&ts2, &hp).unwrap()).unwrap();
        assert_eq!(once, shuffled_bytes);
    }

    #[test]
    fn persisted_models_are_byte_identical_and_reload() {
        let dir = tempfile::tempdir().unwrap();
        let (flows, labels) = synth::separable_flow_corpus(80, 21);
        let cfg = FeatureConfig::default();
        let vectors = extract_all(&flows, &cfg).unwrap();
        let ts = TrainingSet::from_vectors(cfg, &vectors, &labels, 17).unwrap();
        let hp = Hyperparameters { trees: 8, ..Hyperparameters::default() };
        let a = dir.path().join("a.model.json");
        let b = dir.path().join("b.model.json");
        train(&ts, &hp).unwrap().save(&a).unwrap();
        train(&ts, &hp).unwrap().save(&b).unwrap();
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());

        let loaded = TreeEnsemble::load(&a).unwrap();
        assert_eq!(loaded.config, cfg);
        for fv in &vectors {
            let direct = train(&ts, &hp).unwrap().predict(fv).unwrap();
            assert_eq!(loaded.predict(fv).unwrap(), direct);
        }
    }

    #[test]
    fn load_rejects_other_versions_and_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let model = stump();
        model.save(&path).unwrap();
        let mut doc: serde_json::Value =
            serde_json::from_slice(&fs::read(&path).unwrap()).unwrap();
        doc["format_version"] = serde_json::json!(9);
        fs::write(&path, serde_json::to_vec(&doc).unwrap()).unwrap();
        assert!(matches!(TreeEnsemble::load(&path), Err(ForestError::BadVersion(9))));

        fs::write(&path, b"not a model").unwrap();
        assert!(matches!(TreeEnsemble::load(&path), Err(ForestError::Corrupt { .. })));
        assert!(matches!(
            TreeEnsemble::load(Path::new("/nonexistent/m.json")),
            Err(ForestError::Io { .. })
        ));
    }

    #[test]
    fn degenerate_and_malformed_training_sets_are_rejected() {
        let cfg = tiny_config();
        let width = cfg.len();
        let rows = vec![vec![0.5; width], vec![0.7; width]];
        let ts = TrainingSet::new(cfg, rows.clone(), vec![1, 1], 0).unwrap();
        assert!(matches!(
            train(&ts, &Hyperparameters::default()),
            Err(ForestError::DegenerateLabels(1))
        ));

        let one = TrainingSet::new(cfg, vec![vec![0.0; width]], vec![0], 0).unwrap();
        assert!(matches!(
            train(&one, &Hyperparameters::default()),
            Err(ForestError::TooFewRows(1))
        ));

        let mut bad = rows.clone();
        bad[1][3] = f64::NAN;
        let err = TrainingSet::new(cfg, bad, vec![0, 1], 0).unwrap_err();
        match err {
            ForestError::NanFeature { row, column, ref name } => {
                assert_eq!((row, column), (1, 3));
                assert_eq!(name, &cfg.feature_names()[3]);
            }
            other => panic!("wrong error {other:?}"),
        }

        assert!(matches!(
            TrainingSet::new(cfg, rows.clone(), vec![0, 2], 0),
            Err(ForestError::BadLabel { row: 1, label: 2 })
        ));
        assert!(matches!(
            TrainingSet::new(cfg, rows.clone(), vec![0], 0),
            Err(ForestError::LabelCount { .. })
        ));
        let mut ragged = rows;
        ragged[0].pop();
        assert!(matches!(
            TrainingSet::new(cfg, ragged, vec![0, 1], 0),
            Err(ForestError::RaggedRow { row: 0, .. })
        ));
    }

    #[test]
    fn predict_refuses_mismatched_widths() {
        let model = stump();
        let err = model.predict_row(&[1.0, 2.0]).unwrap_err();
        match err {
            ForestError::DimensionMismatch { got, want } => {
                assert_eq!((got, want), (2, model.dimensions()));
            }
            other => panic!("wrong error {other:?}"),
        }
    }

    #[test]
    fn planted_informative_feature_ranks_first() {
        let cfg = FeatureConfig::default();
        let (rows, labels) = synth::planted_feature_matrix(&cfg, 400, "PS_up_4_max", 31);
        let ts = TrainingSet::from_vectors(cfg, &rows, &labels, 8).unwrap();
        let hp = Hyperparameters { trees: 30, ..Hyperparameters::default() };
        let model = train(&ts, &hp).unwrap();
        let ranked = model.feature_importance();
        assert_eq!(ranked[0].0, "PS_up_4_max", "top: {:?}", &ranked[..3]);
        // The planted column must dominate, not merely edge out the noise.
        assert!(
            ranked[0].1 > 4.0 * ranked[1].1,
            "weak separation: {:?}",
            &ranked[..3]
        );
        let sum: f64 = model.importance.iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
        assert!(model.importance.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn evaluation_matches_a_hand_counted_confusion_matrix() {
        let mut model = stump();
        model.trees = vec![Tree { seed: 0, bootstrap: vec![], nodes: vec![Node::Leaf { label: 1 }] }];
        let width = model.dimensions();
        let fv = |x: f64| FeatureVector {
            values: vec![x; width],
            up_valid: true,
            down_valid: true,
        };
        let vectors = vec![fv(0.1), fv(0.2), fv(0.3)];
        let eval = evaluate(&model, &vectors, &[1, 1, 0]).unwrap();
        assert_eq!(eval.confusion, [[0, 1], [0, 2]]);
        assert!((eval.accuracy - 2.0 / 3.0).abs() < 1e-12);
        assert!((eval.precision - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(eval.recall, 1.0);
        assert_eq!(eval.false_positive_rate, 1.0);
        assert_eq!(eval.false_negative_rate, 0.0);
    }

    #[test]
    fn importance_table_lays_out_rank_rows_and_model_columns() {
        let cfg = FeatureConfig::default();
        let (rows, labels) = synth::planted_feature_matrix(&cfg, 200, "UpRatio_8", 3);
        let ts = TrainingSet::from_vectors(cfg, &rows, &labels, 2).unwrap();
        let hp = Hyperparameters { trees: 10, ..Hyperparameters::default() };
        let model = train(&ts, &hp).unwrap();
        let table = importance_table(
            &[("RF-A".to_string(), &model), ("RF-B".to_string(), &model)],
            3,
        );
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[0].starts_with("Rank"));
        assert!(lines[0].contains("RF-A") && lines[0].contains("RF-B"));
        assert!(lines[1].trim_start().starts_with('1'));
        assert_eq!(lines[1].matches("UpRatio_8").count(), 2);
    }
}
