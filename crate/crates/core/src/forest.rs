//! Random forest classifier built from scratch: CART trees split on
//! Gini impurity, bootstrap bagging, and per-split feature subsampling.
//!
//! Determinism contract: tree `t` draws every random decision from a
//! ChaCha8 stream seeded by `derive_seed(params.seed, t)`, so parallel
//! and serial training produce identical models. Split scoring compares
//! exact integer cross-products rather than floating-point impurities,
//! so ties resolve identically everywhere: lowest feature index first,
//! then lowest threshold.

use crate::features::FeatureVector;
use crate::seeds::derive_seed;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ForestError {
    #[error("empty node has no impurity")]
    EmptyNode,
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("dimension mismatch: expected {expected} features, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("predictions and truths differ in length: {predictions} vs {truths}")]
    LengthMismatch { predictions: usize, truths: usize },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad model file: {0}")]
    BadModelFile(String),
}

/// Training hyperparameters. `mtry` of None means floor(sqrt(d));
/// `bootstrap` false trains every tree on the full sample, a hook for
/// comparing a single tree against plain greedy CART.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub mtry: Option<usize>,
    pub seed: u64,
    pub bootstrap: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 100,
            max_depth: None,
            min_samples_split: 2,
            mtry: None,
            seed: 0,
            bootstrap: true,
        }
    }
}

/// Decision tree node. Split sends `x[feature] <= threshold` left.
/// Leaf counts are [false, true] training tallies at that node.
#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    Leaf {
        label: bool,
        counts: [usize; 2],
    },
    Split {
        feature: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestModel {
    pub params: ForestParams,
    pub n_features: usize,
    pub trees: Vec<TreeNode>,
}

/// Numeric training matrix with boolean labels, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<bool>,
}

impl Dataset {
    pub fn new(rows: Vec<Vec<f64>>, labels: Vec<bool>) -> Result<Dataset, ForestError> {
        if rows.len() != labels.len() {
            return Err(ForestError::LengthMismatch {
                predictions: rows.len(),
                truths: labels.len(),
            });
        }
        if let Some(first) = rows.first() {
            let width = first.len();
            for row in &rows {
                if row.len() != width {
                    return Err(ForestError::DimensionMismatch {
                        expected: width,
                        got: row.len(),
                    });
                }
            }
        }
        Ok(Dataset { rows, labels })
    }

    pub fn from_features(vectors: &[FeatureVector]) -> Result<Dataset, ForestError> {
        let rows = vectors.iter().map(FeatureVector::dense).collect();
        let labels = vectors.iter().map(|v| v.label).collect();
        Dataset::new(rows, labels)
    }

    pub fn n_samples(&self) -> usize {
        self.rows.len()
    }

    pub fn n_features(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }
}

/// Gini impurity of a boolean label set: 1 - p_true^2 - p_false^2.
pub fn gini_impurity(labels: &[bool]) -> Result<f64, ForestError> {
    if labels.is_empty() {
        return Err(ForestError::EmptyNode);
    }
    let n = labels.len() as f64;
    let t = labels.iter().filter(|&&l| l).count() as f64;
    let f = n - t;
    Ok(1.0 - (t / n).powi(2) - (f / n).powi(2))
}

/// Split quality as an exact rational. Minimizing size-weighted child
/// Gini over a fixed parent equals maximizing
/// `(tl^2+fl^2)/nl + (tr^2+fr^2)/nr`; that sum is compared here by
/// u128 cross-multiplication, with no floating-point rounding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct SplitScore {
    num: u128,
    den: u128,
}

impl SplitScore {
    fn new(tl: usize, fl: usize, tr: usize, fr: usize) -> SplitScore {
        let (tl, fl, tr, fr) = (tl as u128, fl as u128, tr as u128, fr as u128);
        let nl = tl + fl;
        let nr = tr + fr;
        debug_assert!(nl > 0 && nr > 0, "children must be nonempty");
        SplitScore {
            num: (tl * tl + fl * fl) * nr + (tr * tr + fr * fr) * nl,
            den: nl * nr,
        }
    }

    fn better_than(self, other: SplitScore) -> bool {
        self.num * other.den > other.num * self.den
    }

    /// True when this split strictly reduces impurity below the parent
    /// node's, i.e. score > (t^2 + f^2) / n.
    fn improves_over_parent(self, t: usize, f: usize) -> bool {
        let (t, f) = (t as u128, f as u128);
        let n = t + f;
        self.num * n > (t * t + f * f) * self.den
    }
}

/// Best (feature, threshold) over the given feature subset, or None if
/// no candidate strictly reduces impurity. Thresholds sit at midpoints
/// of consecutive distinct values; ties prefer the lowest feature
/// index, then the lowest threshold.
pub fn best_split(data: &Dataset, feature_subset: &[usize]) -> Option<(usize, f64)> {
    let all: Vec<usize> = (0..data.n_samples()).collect();
    best_split_indexed(data, &all, feature_subset)
}

fn best_split_indexed(
    data: &Dataset,
    indices: &[usize],
    feature_subset: &[usize],
) -> Option<(usize, f64)> {
    debug_assert!(
        indices.len() <= 30_000_000,
        "u128 split scoring is exact only below ~3e7 samples"
    );
    let parent_t = indices.iter().filter(|&&i| data.labels[i]).count();
    let parent_f = indices.len() - parent_t;
    if parent_t == 0 || parent_f == 0 {
        return None;
    }

    let mut features: Vec<usize> = feature_subset.to_vec();
    features.sort_unstable();
    features.dedup();

    let mut best: Option<(SplitScore, usize, f64)> = None;
    let mut order: Vec<usize> = Vec::with_capacity(indices.len());
    for &feature in &features {
        order.clear();
        order.extend_from_slice(indices);
        order.sort_by(|&i, &j| data.rows[i][feature].total_cmp(&data.rows[j][feature]));

        // Sweep left-to-right keeping incremental label counts; a
        // candidate exists at every boundary between distinct values.
        let mut left_t = 0usize;
        let mut left_f = 0usize;
        for k in 1..order.len() {
            let prev = order[k - 1];
            if data.labels[prev] {
                left_t += 1;
            } else {
                left_f += 1;
            }
            let a = data.rows[prev][feature];
            let b = data.rows[order[k]][feature];
            if a == b {
                continue;
            }
            let mut threshold = (a + b) / 2.0;
            if threshold >= b {
                // Midpoint of adjacent floats can round up to b; fall
                // back to a so the partition stays left = (<= a).
                threshold = a;
            }
            let score = SplitScore::new(left_t, left_f, parent_t - left_t, parent_f - left_f);
            let is_better = match best {
                None => score.improves_over_parent(parent_t, parent_f),
                Some((best_score, _, _)) => score.better_than(best_score),
            };
            if is_better {
                best = Some((score, feature, threshold));
            }
        }
    }
    best.map(|(_, feature, threshold)| (feature, threshold))
}

fn leaf_for(data: &Dataset, indices: &[usize]) -> TreeNode {
    let t = indices.iter().filter(|&&i| data.labels[i]).count();
    let f = indices.len() - t;
    TreeNode::Leaf {
        // Tied leaves predict true, the same direction as the vote tie.
        label: t >= f,
        counts: [f, t],
    }
}

fn sample_feature_subset(rng: &mut ChaCha8Rng, n_features: usize, mtry: usize) -> Vec<usize> {
    let mut subset = rand::seq::index::sample(rng, n_features, mtry).into_vec();
    subset.sort_unstable();
    subset
}

fn build_tree(
    data: &Dataset,
    indices: Vec<usize>,
    depth: usize,
    mtry: usize,
    params: &ForestParams,
    rng: &mut ChaCha8Rng,
) -> TreeNode {
    let t = indices.iter().filter(|&&i| data.labels[i]).count();
    let pure = t == 0 || t == indices.len();
    let depth_capped = params.max_depth.is_some_and(|limit| depth >= limit);
    if pure || depth_capped || indices.len() < params.min_samples_split {
        return leaf_for(data, &indices);
    }
    let subset = sample_feature_subset(rng, data.n_features(), mtry);
    let Some((feature, threshold)) = best_split_indexed(data, &indices, &subset) else {
        return leaf_for(data, &indices);
    };
    let (left_idx, right_idx): (Vec<usize>, Vec<usize>) = indices
        .into_iter()
        .partition(|&i| data.rows[i][feature] <= threshold);
    debug_assert!(!left_idx.is_empty() && !right_idx.is_empty());
    let left = build_tree(data, left_idx, depth + 1, mtry, params, rng);
    let right = build_tree(data, right_idx, depth + 1, mtry, params, rng);
    TreeNode::Split {
        feature,
        threshold,
        left: Box::new(left),
        right: Box::new(right),
    }
}

/// Train a forest. Tree `t` gets its own RNG stream from
/// `(params.seed, t)`, draws a bootstrap sample of n indices with
/// replacement (or the full sample when bootstrap is off), and grows
/// greedily until purity, the depth cap, or `min_samples_split`.
pub fn train_forest(data: &Dataset, params: &ForestParams) -> Result<ForestModel, ForestError> {
    if data.n_samples() == 0 {
        return Err(ForestError::EmptyTrainingSet);
    }
    if params.n_trees == 0 {
        return Err(ForestError::InvalidParams("n_trees must be >= 1".into()));
    }
    let d = data.n_features();
    if d == 0 {
        return Err(ForestError::InvalidParams("no features".into()));
    }
    let mtry = match params.mtry {
        Some(m) if m == 0 || m > d => {
            return Err(ForestError::InvalidParams(format!(
                "mtry must be in 1..={d}, got {m}"
            )))
        }
        Some(m) => m,
        None => ((d as f64).sqrt().floor() as usize).clamp(1, d),
    };
    if params.min_samples_split < 2 {
        return Err(ForestError::InvalidParams(
            "min_samples_split must be >= 2".into(),
        ));
    }

    let n = data.n_samples();
    let trees: Vec<TreeNode> = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(params.seed, t as u64));
            let indices: Vec<usize> = if params.bootstrap {
                (0..n).map(|_| rng.gen_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            build_tree(data, indices, 0, mtry, params, &mut rng)
        })
        .collect();

    Ok(ForestModel {
        params: params.clone(),
        n_features: d,
        trees,
    })
}

fn tree_predict(node: &TreeNode, row: &[f64]) -> bool {
    let mut node = node;
    loop {
        match node {
            TreeNode::Leaf { label, .. } => return *label,
            TreeNode::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                node = if row[*feature] <= *threshold { left } else { right };
            }
        }
    }
}

/// Majority vote over trees; an exact tie predicts true (flag for
/// review rather than wave through).
pub fn predict(model: &ForestModel, row: &[f64]) -> Result<bool, ForestError> {
    if row.len() != model.n_features {
        return Err(ForestError::DimensionMismatch {
            expected: model.n_features,
            got: row.len(),
        });
    }
    let votes_true = model
        .trees
        .iter()
        .filter(|tree| tree_predict(tree, row))
        .count();
    Ok(2 * votes_true >= model.trees.len())
}

pub fn predict_batch(model: &ForestModel, rows: &[Vec<f64>]) -> Result<Vec<bool>, ForestError> {
    rows.iter().map(|row| predict(model, row)).collect()
}

/// Confusion counts plus the derived fractions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub true_positives: u64,
    pub false_positives: u64,
    pub true_negatives: u64,
    pub false_negatives: u64,
    pub accuracy: f64,
    pub f1: f64,
    pub false_positive_rate: f64,
}

/// Count the confusion matrix and derive accuracy, F1, and FPR.
/// Denominator-free cases (no predicted-or-actual positives for F1, no
/// actual negatives for FPR) report 0.
pub fn evaluate_metrics(predictions: &[bool], truths: &[bool]) -> Result<Metrics, ForestError> {
    if predictions.len() != truths.len() {
        return Err(ForestError::LengthMismatch {
            predictions: predictions.len(),
            truths: truths.len(),
        });
    }
    if predictions.is_empty() {
        return Err(ForestError::EmptyNode);
    }
    let mut tp = 0u64;
    let mut fp = 0u64;
    let mut tn = 0u64;
    let mut fn_ = 0u64;
    for (&p, &t) in predictions.iter().zip(truths) {
        match (p, t) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    Ok(metrics_from_counts(tp, fp, tn, fn_))
}

pub fn metrics_from_counts(tp: u64, fp: u64, tn: u64, fn_: u64) -> Metrics {
    let total = (tp + fp + tn + fn_) as f64;
    let f1_den = (2 * tp + fp + fn_) as f64;
    let fpr_den = (fp + tn) as f64;
    Metrics {
        true_positives: tp,
        false_positives: fp,
        true_negatives: tn,
        false_negatives: fn_,
        accuracy: (tp + tn) as f64 / total,
        f1: if f1_den == 0.0 { 0.0 } else { 2.0 * tp as f64 / f1_den },
        false_positive_rate: if fpr_den == 0.0 { 0.0 } else { fp as f64 / fpr_den },
    }
}

// Persistence: version-tagged JSON with trees flattened into an index-
// linked node array, so neither serialization nor deserialization
// recurses (tree depth is unbounded when max_depth is None).

const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum FlatNode {
    Leaf {
        label: bool,
        counts: [usize; 2],
    },
    Split {
        feature: usize,
        threshold: f64,
        left: u32,
        right: u32,
    },
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    params: ForestParams,
    n_features: usize,
    trees: Vec<Vec<FlatNode>>,
}

/// Preorder flattening; every child index is greater than its parent's.
fn flatten_tree(root: &TreeNode) -> Vec<FlatNode> {
    let mut flat: Vec<FlatNode> = Vec::new();
    let mut stack: Vec<(&TreeNode, Option<(usize, bool)>)> = vec![(root, None)];
    while let Some((node, parent_slot)) = stack.pop() {
        let my_index = flat.len() as u32;
        if let Some((parent, is_left)) = parent_slot {
            if let FlatNode::Split { left, right, .. } = &mut flat[parent] {
                if is_left {
                    *left = my_index;
                } else {
                    *right = my_index;
                }
            }
        }
        match node {
            TreeNode::Leaf { label, counts } => flat.push(FlatNode::Leaf {
                label: *label,
                counts: *counts,
            }),
            TreeNode::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                let parent = flat.len();
                flat.push(FlatNode::Split {
                    feature: *feature,
                    threshold: *threshold,
                    left: 0,
                    right: 0,
                });
                // Right first so the left subtree pops first and lands
                // immediately after its parent.
                stack.push((right, Some((parent, false))));
                stack.push((left, Some((parent, true))));
            }
        }
    }
    flat
}

fn unflatten_tree(flat: &[FlatNode]) -> Result<TreeNode, ForestError> {
    if flat.is_empty() {
        return Err(ForestError::BadModelFile("empty tree".into()));
    }
    let mut built: Vec<Option<TreeNode>> = (0..flat.len()).map(|_| None).collect();
    for index in (0..flat.len()).rev() {
        let node = match &flat[index] {
            FlatNode::Leaf { label, counts } => {
                if counts[0] + counts[1] == 0 {
                    return Err(ForestError::BadModelFile("leaf with zero counts".into()));
                }
                TreeNode::Leaf {
                    label: *label,
                    counts: *counts,
                }
            }
            FlatNode::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                let take = |slot: u32, built: &mut Vec<Option<TreeNode>>| {
                    let slot = slot as usize;
                    if slot <= index || slot >= built.len() {
                        return Err(ForestError::BadModelFile(format!(
                            "node {index} links to invalid child {slot}"
                        )));
                    }
                    built[slot].take().ok_or_else(|| {
                        ForestError::BadModelFile(format!("child {slot} linked twice"))
                    })
                };
                TreeNode::Split {
                    feature: *feature,
                    threshold: *threshold,
                    left: Box::new(take(*left, &mut built)?),
                    right: Box::new(take(*right, &mut built)?),
                }
            }
        };
        built[index] = Some(node);
    }
    built[0]
        .take()
        .ok_or_else(|| ForestError::BadModelFile("missing root".into()))
}

pub fn save_model(model: &ForestModel, path: &Path) -> Result<(), ForestError> {
    let file = ModelFile {
        format_version: MODEL_FORMAT_VERSION,
        params: model.params.clone(),
        n_features: model.n_features,
        trees: model.trees.iter().map(flatten_tree).collect(),
    };
    let text = serde_json::to_string(&file)
        .map_err(|e| ForestError::BadModelFile(e.to_string()))?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<ForestModel, ForestError> {
    let text = std::fs::read_to_string(path)?;
    let file: ModelFile =
        serde_json::from_str(&text).map_err(|e| ForestError::BadModelFile(e.to_string()))?;
    if file.format_version != MODEL_FORMAT_VERSION {
        return Err(ForestError::BadModelFile(format!(
            "unsupported format_version {}",
            file.format_version
        )));
    }
    let trees = file
        .trees
        .iter()
        .map(|flat| unflatten_tree(flat))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ForestModel {
        params: file.params,
        n_features: file.n_features,
        trees,
    })
}
