//! Fuzzy c-means clustering over pixel feature vectors.
//!
//! The classic alternating scheme: memberships
//! `u_ik = 1 / sum_j (d_ik / d_jk)^(2/(m-1))`, centroids
//! `v_i = sum_k u_ik^m x_k / sum_k u_ik^m`, objective
//! `J_m = sum_i sum_k u_ik^m ||x_k - v_i||^2`. A point that lands exactly on
//! a centroid gets crisp membership there. Fits are deterministic per seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{validation, Result};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FcmConfig {
    /// Cluster count.
    pub c: usize,
    /// Fuzzifier, > 1.
    pub m: f64,
    /// Convergence tolerance on the max membership change.
    pub epsilon: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for FcmConfig {
    fn default() -> Self {
        FcmConfig { c: 4, m: 2.0, epsilon: 1e-5, max_iter: 200, seed: 0 }
    }
}

impl FcmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.c < 2 {
            return Err(validation!("cluster count must be >= 2"));
        }
        if !(self.m > 1.0) || !self.m.is_finite() {
            return Err(validation!("fuzzifier must be > 1"));
        }
        if !(self.epsilon > 0.0) {
            return Err(validation!("epsilon must be positive"));
        }
        if self.max_iter == 0 {
            return Err(validation!("max_iter must be >= 1"));
        }
        Ok(())
    }
}

/// A fitted clustering: centroids, the final membership matrix, and the
/// per-iteration objective values.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FcmModel {
    pub config: FcmConfig,
    pub dim: usize,
    /// c centroids, row-major (c x dim).
    pub centroids: Vec<f64>,
    /// Memberships, point-major: `memberships[k*c + i]` is point k's degree
    /// in cluster i. Each point's c values sum to 1.
    #[serde(skip_serializing, default)]
    pub memberships: Vec<f64>,
    pub objective_history: Vec<f64>,
    pub iterations_run: usize,
}

impl FcmModel {
    pub fn c(&self) -> usize {
        self.config.c
    }

    pub fn centroid(&self, i: usize) -> &[f64] {
        &self.centroids[i * self.dim..(i + 1) * self.dim]
    }

    pub fn membership(&self, k: usize) -> &[f64] {
        &self.memberships[k * self.c()..(k + 1) * self.c()]
    }

    /// Cluster order sorted by centroid (first component, then the rest);
    /// gives a canonical ordering that is stable across seeded runs.
    pub fn sorted_cluster_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.c()).collect();
        order.sort_by(|a, b| {
            let ca = self.centroid(*a);
            let cb = self.centroid(*b);
            ca.partial_cmp(cb).unwrap_or(std::cmp::Ordering::Equal)
        });
        order
    }
}

fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

const MAX_CLUSTERS: usize = 16;

/// Membership vector of one point given fixed centroids.
fn memberships_for(point: &[f64], centroids: &[f64], c: usize, dim: usize, m: f64, out: &mut [f64]) {
    assert!(c <= MAX_CLUSTERS && out.len() == c);
    let mut d = [0.0f64; MAX_CLUSTERS];
    let mut zero_count = 0usize;
    for i in 0..c {
        let ds = dist_sq(point, &centroids[i * dim..(i + 1) * dim]);
        d[i] = ds;
        if ds == 0.0 {
            zero_count += 1;
        }
    }
    if zero_count > 0 {
        // singularity rule: crisp membership on the coincident centroid(s)
        let share = 1.0 / zero_count as f64;
        for i in 0..c {
            out[i] = if d[i] == 0.0 { share } else { 0.0 };
        }
        return;
    }
    let exp = 1.0 / (m - 1.0);
    let mut sum = 0.0;
    for i in 0..c {
        let wi = if exp == 1.0 { 1.0 / d[i] } else { d[i].powf(-exp) };
        out[i] = wi;
        sum += wi;
    }
    for i in 0..c {
        out[i] /= sum;
    }
}

/// Fit a clustering to points stored flat, row-major with `dim` values per
/// point.
pub fn fit(points: &[f64], dim: usize, cfg: &FcmConfig) -> Result<FcmModel> {
    cfg.validate()?;
    if dim == 0 || points.len() % dim != 0 {
        return Err(validation!("point buffer length is not a multiple of dim"));
    }
    let n = points.len() / dim;
    if n < cfg.c {
        return Err(validation!("need at least c={} points, got {n}", cfg.c));
    }
    if cfg.c > MAX_CLUSTERS {
        return Err(validation!("cluster counts above {MAX_CLUSTERS} are not supported"));
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(validation!("points must be finite"));
    }

    // seeded random memberships, renormalized per point
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut init = vec![0.0f64; n * cfg.c];
    for k in 0..n {
        let row = &mut init[k * cfg.c..(k + 1) * cfg.c];
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = rng.gen::<f64>() + 1e-9;
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    fit_with_init(points, dim, cfg, init)
}

/// Fit from explicit initial memberships (point-major, rows summing to 1).
pub fn fit_with_init(points: &[f64], dim: usize, cfg: &FcmConfig, init: Vec<f64>) -> Result<FcmModel> {
    cfg.validate()?;
    let c = cfg.c;
    let n = points.len() / dim;
    if init.len() != n * c {
        return Err(validation!("initial membership matrix has wrong shape"));
    }

    let mut u = init;
    let mut centroids = vec![0.0f64; c * dim];
    let mut history = Vec::new();
    let mut iterations = 0usize;
    let mut row = vec![0.0f64; c];

    for _ in 0..cfg.max_iter {
        iterations += 1;

        // centroid update from current memberships
        let mut num = vec![0.0f64; c * dim];
        let mut den = vec![0.0f64; c];
        for k in 0..n {
            let point = &points[k * dim..(k + 1) * dim];
            for i in 0..c {
                let w = u[k * c + i].powf(cfg.m);
                den[i] += w;
                for (t, x) in point.iter().enumerate() {
                    num[i * dim + t] += w * x;
                }
            }
        }
        for i in 0..c {
            if den[i] > 0.0 {
                for t in 0..dim {
                    centroids[i * dim + t] = num[i * dim + t] / den[i];
                }
            }
        }

        // membership update and objective against the new centroids
        let mut max_delta = 0.0f64;
        let mut objective = 0.0f64;
        for k in 0..n {
            let point = &points[k * dim..(k + 1) * dim];
            memberships_for(point, &centroids, c, dim, cfg.m, &mut row);
            for i in 0..c {
                let old = u[k * c + i];
                let new = row[i];
                max_delta = max_delta.max((new - old).abs());
                u[k * c + i] = new;
                objective +=
                    new.powf(cfg.m) * dist_sq(point, &centroids[i * dim..(i + 1) * dim]);
            }
        }
        history.push(objective);

        if max_delta < cfg.epsilon {
            break;
        }
    }

    Ok(FcmModel {
        config: *cfg,
        dim,
        centroids,
        memberships: u,
        objective_history: history,
        iterations_run: iterations,
    })
}

/// Membership vector of a new point under a fitted model.
pub fn predict(model: &FcmModel, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != model.dim {
        return Err(validation!("point dim {} does not match model dim {}", x.len(), model.dim));
    }
    let mut out = vec![0.0f64; model.c()];
    memberships_for(x, &model.centroids, model.c(), model.dim, model.config.m, &mut out);
    Ok(out)
}

/// Harden a point-major membership matrix to one label per point. Ties go
/// to the lowest cluster index.
pub fn defuzzify(memberships: &[f64], c: usize) -> Vec<usize> {
    assert!(c > 0 && memberships.len() % c == 0);
    memberships
        .chunks_exact(c)
        .map(|row| {
            let mut best = 0;
            for (i, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

/// Serialize a model to JSON (centroids, config, objective history; the
/// membership matrix is omitted).
pub fn to_json(model: &FcmModel) -> Result<String> {
    serde_json::to_string(model).map_err(|e| validation!("fcm serialization failed: {e}"))
}

/// Dump the membership matrix as raw little-endian f32, point-major.
pub fn save_memberships_f32(model: &FcmModel, path: impl AsRef<std::path::Path>) -> Result<()> {
    use std::io::Write;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path.as_ref())?);
    for u in &model.memberships {
        w.write_all(&(*u as f32).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// The objective `J_m` for explicit centroids and memberships.
pub fn objective(points: &[f64], dim: usize, centroids: &[f64], memberships: &[f64], m: f64) -> Result<f64> {
    if dim == 0 || points.len() % dim != 0 || centroids.len() % dim != 0 {
        return Err(validation!("inconsistent shapes"));
    }
    let n = points.len() / dim;
    let c = centroids.len() / dim;
    if memberships.len() != n * c {
        return Err(validation!("membership matrix shape does not match points x clusters"));
    }
    let mut j = 0.0;
    for k in 0..n {
        let point = &points[k * dim..(k + 1) * dim];
        for i in 0..c {
            j += memberships[k * c + i].powf(m)
                * dist_sq(point, &centroids[i * dim..(i + 1) * dim]);
        }
    }
    Ok(j)
}
