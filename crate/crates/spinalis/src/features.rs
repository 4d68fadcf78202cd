//! Per-pixel features feeding the random-forest segmenter.
//!
//! Layout per pixel: intensity, local mean, local std, gradient magnitude,
//! normalized row, normalized col, then (when FCM features are enabled) the
//! c cluster memberships in ascending-centroid order plus two region
//! descriptors of the pixel's hardened-cluster connected component: area
//! fraction and second-moment eccentricity.

use serde::{Deserialize, Serialize};

use crate::error::{validation, Result};
use crate::fcm::{self, FcmModel};
use crate::regions::components_2d;
use crate::volume::Slice;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FeatureConfig {
    /// Half-width of the local statistics window.
    pub window_radius: usize,
    /// Include FCM memberships and hardened-cluster region features.
    pub use_fcm: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig { window_radius: 2, use_fcm: true }
    }
}

impl FeatureConfig {
    pub fn feature_len(&self, c: usize) -> usize {
        if self.use_fcm {
            6 + c + 2
        } else {
            6
        }
    }
}

/// Extract one feature row per pixel, row-major over the slice.
///
/// `fcm_model` must be a model fitted on scalar intensities; it is required
/// when `cfg.use_fcm` is set and ignored otherwise.
pub fn extract_pixel_features(
    slice: &Slice,
    fcm_model: Option<&FcmModel>,
    cfg: &FeatureConfig,
) -> Result<Vec<f64>> {
    let (w, h) = (slice.width(), slice.height());
    let model = if cfg.use_fcm {
        let model = fcm_model.ok_or_else(|| validation!("FCM features requested without a model"))?;
        if model.dim != 1 {
            return Err(validation!("pixel features need a 1-D intensity FCM model"));
        }
        Some(model)
    } else {
        None
    };
    let c = model.map_or(0, FcmModel::c);
    let n_features = cfg.feature_len(c);
    let mut out = vec![0.0f64; w * h * n_features];

    // summed-area tables over intensity and intensity^2, (w+1) x (h+1)
    let mut sat = vec![0.0f64; (w + 1) * (h + 1)];
    let mut sat_sq = vec![0.0f64; (w + 1) * (h + 1)];
    for row in 0..h {
        for col in 0..w {
            let v = slice.get(col, row) as f64;
            let i = (col + 1) + (w + 1) * (row + 1);
            sat[i] = v + sat[i - 1] + sat[i - (w + 1)] - sat[i - 1 - (w + 1)];
            sat_sq[i] = v * v + sat_sq[i - 1] + sat_sq[i - (w + 1)] - sat_sq[i - 1 - (w + 1)];
        }
    }
    let window_sum = |table: &[f64], c0: usize, r0: usize, c1: usize, r1: usize| -> f64 {
        // inclusive box [c0..=c1] x [r0..=r1]
        table[(c1 + 1) + (w + 1) * (r1 + 1)] - table[c0 + (w + 1) * (r1 + 1)]
            - table[(c1 + 1) + (w + 1) * r0]
            + table[c0 + (w + 1) * r0]
    };

    // FCM memberships + hardened component map, computed once per pixel
    let (memberships, comp_feats) = if let Some(model) = model {
        let order = model.sorted_cluster_order();
        let mut mem = vec![0.0f64; w * h * c];
        let mut hardened = vec![0i64; w * h];
        for idx in 0..w * h {
            let u = fcm::predict(model, &[slice.data()[idx] as f64])?;
            let mut best = 0usize;
            for (rank, &cluster) in order.iter().enumerate() {
                mem[idx * c + rank] = u[cluster];
                if u[cluster] > u[order[best]] {
                    best = rank;
                }
            }
            hardened[idx] = best as i64;
        }
        let (ids, comps) = components_2d(&hardened, w, h, None);
        let total = (w * h) as f64;
        let per_comp: Vec<(f64, f64)> = comps
            .iter()
            .map(|comp| (comp.size as f64 / total, comp.eccentricity))
            .collect();
        let feats: Vec<(f64, f64)> = ids.iter().map(|id| per_comp[*id]).collect();
        (mem, feats)
    } else {
        (Vec::new(), Vec::new())
    };

    let r = cfg.window_radius;
    for row in 0..h {
        for col in 0..w {
            let idx = col + w * row;
            let v = slice.get(col, row) as f64;
            // window clamped at the borders
            let c0 = col.saturating_sub(r);
            let r0 = row.saturating_sub(r);
            let c1 = (col + r).min(w - 1);
            let r1 = (row + r).min(h - 1);
            let count = ((c1 - c0 + 1) * (r1 - r0 + 1)) as f64;
            let mean = window_sum(&sat, c0, r0, c1, r1) / count;
            let var = (window_sum(&sat_sq, c0, r0, c1, r1) / count - mean * mean).max(0.0);

            // central differences with clamped neighbors
            let xm = slice.get(col.saturating_sub(1), row) as f64;
            let xp = slice.get((col + 1).min(w - 1), row) as f64;
            let ym = slice.get(col, row.saturating_sub(1)) as f64;
            let yp = slice.get(col, (row + 1).min(h - 1)) as f64;
            let gx = 0.5 * (xp - xm);
            let gy = 0.5 * (yp - ym);

            let f = &mut out[idx * n_features..(idx + 1) * n_features];
            f[0] = v;
            f[1] = mean;
            f[2] = var.sqrt();
            f[3] = (gx * gx + gy * gy).sqrt();
            f[4] = if h > 1 { row as f64 / (h - 1) as f64 } else { 0.0 };
            f[5] = if w > 1 { col as f64 / (w - 1) as f64 } else { 0.0 };
            if c > 0 {
                f[6..6 + c].copy_from_slice(&memberships[idx * c..(idx + 1) * c]);
                let (area, ecc) = comp_feats[idx];
                f[6 + c] = area;
                f[6 + c + 1] = ecc;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fcm::FcmConfig;

    #[test]
    fn constant_slice_has_zero_gradient_and_mean_equal_constant() {
        let s = Slice::filled(10, 10, 0.37, 0);
        let cfg = FeatureConfig { use_fcm: false, ..Default::default() };
        let feats = extract_pixel_features(&s, None, &cfg).unwrap();
        let n = cfg.feature_len(0);
        for px in feats.chunks_exact(n) {
            assert!((px[0] - 0.37).abs() < 1e-6);
            assert!((px[1] - 0.37).abs() < 1e-6, "local mean");
            assert!(px[2].abs() < 1e-6, "local std");
            assert!(px[3].abs() < 1e-9, "gradient magnitude");
        }
    }

    #[test]
    fn region_area_fraction() {
        // 10-px bright component in a 10x10 slice -> area fraction 0.1
        let mut s = Slice::filled(10, 10, 0.0, 0);
        for i in 0..10 {
            s.set(i % 5, 2 + i / 5, 1.0);
        }
        let points: Vec<f64> = s.data().iter().map(|v| *v as f64).collect();
        let model = fcm::fit(&points, 1, &FcmConfig { c: 2, seed: 1, ..Default::default() }).unwrap();
        let cfg = FeatureConfig::default();
        let feats = extract_pixel_features(&s, Some(&model), &cfg).unwrap();
        let n = cfg.feature_len(2);
        // check a pixel inside the blob
        let idx = 0 + 10 * 2;
        let area = feats[idx * n + 6 + 2];
        assert!((area - 0.1).abs() < 1e-9, "area fraction {area}");
    }

    #[test]
    fn membership_order_is_by_centroid() {
        let mut s = Slice::filled(8, 8, 0.1, 0);
        for col in 0..8 {
            s.set(col, 0, 0.9);
        }
        let points: Vec<f64> = s.data().iter().map(|v| *v as f64).collect();
        let model = fcm::fit(&points, 1, &FcmConfig { c: 2, seed: 3, ..Default::default() }).unwrap();
        let cfg = FeatureConfig::default();
        let feats = extract_pixel_features(&s, Some(&model), &cfg).unwrap();
        let n = cfg.feature_len(2);
        // dark pixel: first (low-centroid) membership dominates
        let dark = &feats[(3 + 8 * 4) * n..(3 + 8 * 4 + 1) * n];
        assert!(dark[6] > dark[7]);
        // bright pixel: last membership dominates
        let bright = &feats[3 * n..4 * n];
        assert!(bright[7] > bright[6]);
    }

    #[test]
    fn local_mean_of_ramp_is_exact_in_interior() {
        let s = Slice::new(12, 12, (0..144).map(|i| (i % 12) as f32).collect(), 0).unwrap();
        let cfg = FeatureConfig { use_fcm: false, window_radius: 2 };
        let feats = extract_pixel_features(&s, None, &cfg).unwrap();
        let n = cfg.feature_len(0);
        // interior pixel (5, 5): window mean over cols 3..=7 = 5
        let idx = 5 + 12 * 5;
        assert!((feats[idx * n + 1] - 5.0).abs() < 1e-9);
        // gradient magnitude of the unit ramp is 1
        assert!((feats[idx * n + 3] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn missing_model_rejected() {
        let s = Slice::filled(4, 4, 0.0, 0);
        assert!(extract_pixel_features(&s, None, &FeatureConfig::default()).is_err());
    }
}
