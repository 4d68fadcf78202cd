//! From-scratch random forest for per-pixel classification.
//!
//! Gini-impurity splits at midpoints of sorted unique feature values, seeded
//! bootstrap per tree, per-node feature subsampling. Every random draw comes
//! from a per-tree generator derived from the master seed, so parallel and
//! sequential training produce identical models.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{validation, Result};

pub const FOREST_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    /// Candidate features per node; `None` means ceil(sqrt(F)).
    pub features_per_split: Option<usize>,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 50,
            max_depth: 12,
            min_samples_leaf: 5,
            features_per_split: None,
            bootstrap: true,
            seed: 0,
        }
    }
}

impl ForestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 || self.max_depth == 0 || self.min_samples_leaf == 0 {
            return Err(validation!("forest config values must be positive"));
        }
        if self.features_per_split == Some(0) {
            return Err(validation!("features_per_split must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum TreeNode {
    Internal {
        feature: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    Leaf {
        counts: Vec<u64>,
    },
}

impl TreeNode {
    fn leaf_counts(&self, x: &[f64]) -> &[u64] {
        match self {
            TreeNode::Leaf { counts } => counts,
            TreeNode::Internal { feature, threshold, left, right } => {
                if x[*feature] <= *threshold {
                    left.leaf_counts(x)
                } else {
                    right.leaf_counts(x)
                }
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ForestModel {
    pub version: u32,
    pub config: ForestConfig,
    pub n_features: usize,
    pub n_classes: usize,
    pub trees: Vec<TreeNode>,
}

/// Gini impurity `1 - sum p_i^2` of a class-count vector.
pub fn gini(counts: &[u64]) -> Result<f64> {
    if counts.is_empty() {
        return Err(validation!("gini of empty counts"));
    }
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(validation!("gini of all-zero counts"));
    }
    let total = total as f64;
    let mut sum_sq = 0.0;
    for c in counts {
        let p = *c as f64 / total;
        sum_sq += p * p;
    }
    Ok(1.0 - sum_sq)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Split {
    pub feature: usize,
    pub threshold: f64,
    /// Weighted child impurity of the split.
    pub impurity: f64,
}

/// Row-major borrowed sample matrix.
#[derive(Clone, Copy)]
pub struct Samples<'a> {
    pub features: &'a [f64],
    pub n_features: usize,
    pub labels: &'a [usize],
}

impl<'a> Samples<'a> {
    pub fn new(features: &'a [f64], n_features: usize, labels: &'a [usize]) -> Result<Samples<'a>> {
        if n_features == 0 || features.len() != labels.len() * n_features {
            return Err(validation!("feature matrix shape does not match labels"));
        }
        Ok(Samples { features, n_features, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    #[inline]
    fn value(&self, sample: usize, feature: usize) -> f64 {
        self.features[sample * self.n_features + feature]
    }
}

/// Best (feature, threshold) over the given candidate features, minimizing
/// weighted child Gini over midpoints of sorted unique values. Ties break
/// to the lowest feature index, then the lowest threshold. `None` when no
/// candidate strictly reduces impurity.
pub fn best_split(samples: Samples<'_>, feature_subset: &[usize]) -> Result<Option<Split>> {
    let indices: Vec<u32> = (0..samples.len() as u32).collect();
    let n_classes = samples.labels.iter().copied().max().map_or(0, |m| m + 1);
    best_split_on(samples, &indices, feature_subset, n_classes, 1)
}

fn best_split_on(
    samples: Samples<'_>,
    indices: &[u32],
    feature_subset: &[usize],
    n_classes: usize,
    min_leaf: usize,
) -> Result<Option<Split>> {
    let n = indices.len();
    if n < 2 {
        return Ok(None);
    }
    let mut parent_counts = vec![0u64; n_classes];
    for &i in indices {
        parent_counts[samples.labels[i as usize]] += 1;
    }
    let parent_gini = gini(&parent_counts)?;
    if parent_gini == 0.0 {
        return Ok(None);
    }

    let mut best: Option<Split> = None;
    let mut sorted: Vec<(f64, usize)> = Vec::with_capacity(n);
    let mut feature_subset = feature_subset.to_vec();
    feature_subset.sort_unstable();
    feature_subset.dedup();

    for &feature in &feature_subset {
        if feature >= samples.n_features {
            return Err(validation!("feature index {feature} out of range"));
        }
        sorted.clear();
        sorted.extend(
            indices
                .iter()
                .map(|&i| (samples.value(i as usize, feature), samples.labels[i as usize])),
        );
        sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));

        let mut left = vec![0u64; n_classes];
        let mut right = parent_counts.clone();
        for k in 0..n - 1 {
            let (value, label) = sorted[k];
            left[label] += 1;
            right[label] -= 1;
            let next = sorted[k + 1].0;
            if next <= value {
                continue;
            }
            let threshold = 0.5 * (value + next);
            // guard against midpoints that round onto an endpoint
            if threshold <= value || threshold >= next {
                continue;
            }
            let n_left = k + 1;
            let n_right = n - n_left;
            if n_left < min_leaf || n_right < min_leaf {
                continue;
            }
            let weighted = (n_left as f64 * gini(&left)? + n_right as f64 * gini(&right)?)
                / n as f64;
            if weighted >= parent_gini {
                continue;
            }
            let better = match &best {
                None => true,
                Some(b) => {
                    weighted < b.impurity
                        || (weighted == b.impurity
                            && (feature < b.feature
                                || (feature == b.feature && threshold < b.threshold)))
                }
            };
            if better {
                best = Some(Split { feature, threshold, impurity: weighted });
            }
        }
    }
    Ok(best)
}

fn class_counts(samples: Samples<'_>, indices: &[u32], n_classes: usize) -> Vec<u64> {
    let mut counts = vec![0u64; n_classes];
    for &i in indices {
        counts[samples.labels[i as usize]] += 1;
    }
    counts
}

fn build_node(
    samples: Samples<'_>,
    indices: &mut Vec<u32>,
    n_classes: usize,
    cfg: &ForestConfig,
    m_try: usize,
    depth: usize,
    rng: &mut ChaCha8Rng,
) -> Result<TreeNode> {
    let counts = class_counts(samples, indices, n_classes);
    let pure = counts.iter().filter(|c| **c > 0).count() <= 1;
    if pure || depth >= cfg.max_depth || indices.len() < 2 * cfg.min_samples_leaf {
        return Ok(TreeNode::Leaf { counts });
    }

    // per-node feature subsample without replacement
    let mut pool: Vec<usize> = (0..samples.n_features).collect();
    for k in 0..m_try.min(samples.n_features) {
        let j = rng.gen_range(k..pool.len());
        pool.swap(k, j);
    }
    let subset = &pool[..m_try.min(samples.n_features)];

    let split = best_split_on(samples, indices, subset, n_classes, cfg.min_samples_leaf)?;
    let Some(split) = split else {
        return Ok(TreeNode::Leaf { counts });
    };

    let mut left_idx = Vec::new();
    let mut right_idx = Vec::new();
    for &i in indices.iter() {
        if samples.value(i as usize, split.feature) <= split.threshold {
            left_idx.push(i);
        } else {
            right_idx.push(i);
        }
    }
    indices.clear();
    indices.shrink_to_fit();

    let left = build_node(samples, &mut left_idx, n_classes, cfg, m_try, depth + 1, rng)?;
    let right = build_node(samples, &mut right_idx, n_classes, cfg, m_try, depth + 1, rng)?;
    Ok(TreeNode::Internal {
        feature: split.feature,
        threshold: split.threshold,
        left: Box::new(left),
        right: Box::new(right),
    })
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Per-tree generator derived from the master seed by fixed splitting.
fn tree_rng(seed: u64, tree: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(tree as u64 + 1)))
}

/// Train a forest on row-major features with small-integer class labels.
pub fn train(features: &[f64], n_features: usize, labels: &[usize], cfg: &ForestConfig) -> Result<ForestModel> {
    cfg.validate()?;
    let samples = Samples::new(features, n_features, labels)?;
    let n = samples.len();
    if n < 2 {
        return Err(validation!("need at least 2 samples, got {n}"));
    }
    if features.iter().any(|v| !v.is_finite()) {
        return Err(validation!("features must be finite"));
    }
    let n_classes = labels.iter().copied().max().unwrap() + 1;
    let mut present = vec![false; n_classes];
    for &l in labels {
        present[l] = true;
    }
    if present.iter().filter(|p| **p).count() < 2 {
        return Err(validation!("training requires at least 2 classes present"));
    }
    let m_try = cfg
        .features_per_split
        .unwrap_or_else(|| (n_features as f64).sqrt().ceil() as usize)
        .clamp(1, n_features);

    let trees: Result<Vec<TreeNode>> = (0..cfg.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = tree_rng(cfg.seed, t);
            let mut indices: Vec<u32> = if cfg.bootstrap {
                (0..n).map(|_| rng.gen_range(0..n) as u32).collect()
            } else {
                (0..n as u32).collect()
            };
            build_node(samples, &mut indices, n_classes, cfg, m_try, 0, &mut rng)
        })
        .collect();

    Ok(ForestModel {
        version: FOREST_FORMAT_VERSION,
        config: *cfg,
        n_features,
        n_classes,
        trees: trees?,
    })
}

/// Predict one feature vector: mean of per-tree leaf distributions, argmax
/// label with ties to the lower class id.
pub fn predict(model: &ForestModel, x: &[f64]) -> Result<(usize, Vec<f64>)> {
    if x.len() != model.n_features {
        return Err(validation!(
            "feature length {} does not match model ({})",
            x.len(),
            model.n_features
        ));
    }
    let mut probs = vec![0.0f64; model.n_classes];
    for tree in &model.trees {
        let counts = tree.leaf_counts(x);
        let total: u64 = counts.iter().sum();
        if total > 0 {
            for (p, c) in probs.iter_mut().zip(counts) {
                *p += *c as f64 / total as f64;
            }
        }
    }
    let inv = 1.0 / model.trees.len() as f64;
    for p in probs.iter_mut() {
        *p *= inv;
    }
    let mut label = 0;
    for (i, p) in probs.iter().enumerate() {
        if *p > probs[label] {
            label = i;
        }
    }
    Ok((label, probs))
}

/// Probability of `class` for a batch of rows; cheaper than `predict` when
/// only one class matters.
pub fn predict_proba_batch(model: &ForestModel, features: &[f64], class: usize) -> Result<Vec<f64>> {
    if features.len() % model.n_features != 0 {
        return Err(validation!("feature buffer is not a multiple of the feature length"));
    }
    let inv = 1.0 / model.trees.len() as f64;
    Ok(features
        .chunks_exact(model.n_features)
        .map(|x| {
            let mut p = 0.0;
            for tree in &model.trees {
                let counts = tree.leaf_counts(x);
                let total: u64 = counts.iter().sum();
                if total > 0 {
                    p += counts[class] as f64 / total as f64;
                }
            }
            p * inv
        })
        .collect())
}

pub fn to_json(model: &ForestModel) -> Result<String> {
    serde_json::to_string(model).map_err(|e| validation!("forest serialization failed: {e}"))
}

pub fn from_json(json: &str) -> Result<ForestModel> {
    let model: ForestModel = serde_json::from_str(json)
        .map_err(|e| crate::error::Error::Format(format!("forest deserialization failed: {e}")))?;
    if model.version != FOREST_FORMAT_VERSION {
        return Err(crate::error::Error::Format(format!(
            "unsupported forest format version {}",
            model.version
        )));
    }
    Ok(model)
}
