//! Two-stage segmentation: FCM-driven relevant-slice selection, then random
//! forest pixel classification assembled into a 3D tumor mask.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

use crate::error::{validation, Error, Result};
use crate::fcm::{self, FcmConfig, FcmModel};
use crate::features::{extract_pixel_features, FeatureConfig};
use crate::forest::{self, ForestConfig, ForestModel};
use crate::preprocess::{denoise, DenoiseConfig};
use crate::regions::{components_2d, mask_components, Component2d};
use crate::volume::{label, Mask2d, MaskVolume, Slice, Volume};

pub const SEGMENTER_FORMAT_VERSION: u32 = 1;

/// Heuristic for flagging slices that may carry tumor tissue.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RelevanceConfig {
    /// A component is "abnormally bright" when its mean intensity exceeds
    /// the volume mean by this many standard deviations.
    pub intensity_z_threshold: f64,
    /// Components smaller than this are ignored (and later filtered from
    /// predicted masks).
    pub min_component_px: usize,
    /// perimeter^2/area above which a component counts as irregular.
    pub compactness_max: f64,
    /// Alternatively, proximity to the CSF proxy within this many px.
    pub csf_proximity_px: usize,
    /// Explicit slice list that replaces the heuristic entirely.
    pub manual_override: Option<BTreeSet<usize>>,
}

impl Default for RelevanceConfig {
    fn default() -> Self {
        RelevanceConfig {
            intensity_z_threshold: 1.5,
            min_component_px: 20,
            compactness_max: 40.0,
            csf_proximity_px: 10,
            manual_override: None,
        }
    }
}

/// Per-slice clustering artifacts shared by relevance selection and feature
/// extraction.
pub struct SliceClustering {
    pub model: FcmModel,
    /// Hardened cluster rank per pixel, in ascending-centroid order.
    pub hardened: Vec<i64>,
    pub comps: Vec<Component2d>,
    pub comp_ids: Vec<usize>,
}

/// Fit FCM on a slice's intensities and harden it into canonical ranks.
pub fn cluster_slice(slice: &Slice, cfg: &FcmConfig) -> Result<SliceClustering> {
    let points: Vec<f64> = slice.data().iter().map(|v| *v as f64).collect();
    let model = fcm::fit(&points, 1, cfg)?;
    let order = model.sorted_cluster_order();
    let mut rank_of = vec![0usize; order.len()];
    for (rank, cluster) in order.iter().enumerate() {
        rank_of[*cluster] = rank;
    }
    let c = model.c();
    let hardened: Vec<i64> = (0..points.len())
        .map(|k| {
            let row = model.membership(k);
            let mut best = 0usize;
            for i in 1..c {
                if row[i] > row[best] {
                    best = i;
                }
            }
            rank_of[best] as i64
        })
        .collect();
    let (comp_ids, comps) = components_2d(&hardened, slice.width(), slice.height(), None);
    Ok(SliceClustering { model, hardened, comps, comp_ids })
}

fn volume_mean_std(v: &Volume) -> (f64, f64) {
    let n = v.data().len() as f64;
    let mean = v.data().iter().map(|x| *x as f64).sum::<f64>() / n;
    let var = v.data().iter().map(|x| (*x as f64 - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Flag the slices worth running the pixel classifier on.
///
/// A slice is relevant when some hardened-cluster component is big enough,
/// abnormally bright against the whole volume, and either irregular by
/// compactness or close to the CSF proxy (the brightest cluster).
pub fn select_relevant_slices(
    v: &Volume,
    clusterings: &[SliceClustering],
    cfg: &RelevanceConfig,
) -> Result<BTreeSet<usize>> {
    if clusterings.len() != v.depth() {
        return Err(validation!("need one clustering per slice"));
    }
    if let Some(sel) = &cfg.manual_override {
        return Ok(sel.iter().copied().filter(|z| *z < v.depth()).collect());
    }
    let (mean, std) = volume_mean_std(v);
    let cutoff = mean + cfg.intensity_z_threshold * std;
    let mut selected = BTreeSet::new();

    for (z, clustering) in clusterings.iter().enumerate() {
        let slice = v.extract_slice(z)?;
        let c = clustering.model.c();
        let brightest_rank = (c - 1) as i64;
        // proxy for CSF-like tissue: the brightest cluster, dilated
        let proxy = Mask2d::from_fn(slice.width(), slice.height(), |col, row| {
            clustering.hardened[col + slice.width() * row] == brightest_rank
        });
        let near_proxy = proxy.dilated(cfg.csf_proximity_px);

        // mean intensity per component
        let mut sums = vec![0.0f64; clustering.comps.len()];
        for (idx, id) in clustering.comp_ids.iter().enumerate() {
            sums[*id] += slice.data()[idx] as f64;
        }
        let mut relevant = false;
        for (id, comp) in clustering.comps.iter().enumerate() {
            if comp.size < cfg.min_component_px {
                continue;
            }
            if (sums[id] / comp.size as f64) < cutoff {
                continue;
            }
            let irregular = comp.compactness() >= cfg.compactness_max;
            let near = comp.value == brightest_rank || {
                let mut hit = false;
                'scan: for (idx, cid) in clustering.comp_ids.iter().enumerate() {
                    if *cid == id {
                        let (col, row) = (idx % slice.width(), idx / slice.width());
                        if near_proxy.get(col, row) {
                            hit = true;
                            break 'scan;
                        }
                    }
                }
                hit
            };
            if irregular || near {
                relevant = true;
                break;
            }
        }
        if relevant {
            selected.insert(z);
        }
    }
    Ok(selected)
}

/// Per-slice preprocessing applied identically at train and inference time.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub denoise: Option<DenoiseConfig>,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig { denoise: Some(DenoiseConfig { threshold: 0.02, ..Default::default() }) }
    }
}

fn prepare_slice(v: &Volume, z: usize, pre: &PreprocessConfig) -> Result<Slice> {
    let slice = v.extract_slice(z)?;
    match &pre.denoise {
        Some(cfg) => denoise(&slice, cfg),
        None => Ok(slice),
    }
}

/// Everything needed to reproduce the training-time pipeline at inference.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SegmenterModel {
    pub version: u32,
    pub forest: ForestModel,
    pub fcm: FcmConfig,
    pub features: FeatureConfig,
    pub preprocess: PreprocessConfig,
    pub relevance: RelevanceConfig,
    /// Tumor probability cut for the output mask.
    pub threshold: f64,
}

impl SegmenterModel {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| validation!("segmenter serialization failed: {e}"))
    }

    pub fn from_json(json: &str) -> Result<SegmenterModel> {
        let model: SegmenterModel = serde_json::from_str(json)
            .map_err(|e| Error::Format(format!("segmenter deserialization failed: {e}")))?;
        if model.version != SEGMENTER_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported segmenter version {}",
                model.version
            )));
        }
        Ok(model)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSettings {
    pub fcm: FcmConfig,
    pub forest: ForestConfig,
    pub features: FeatureConfig,
    pub preprocess: PreprocessConfig,
    pub relevance: RelevanceConfig,
    pub threshold: f64,
    pub seed: u64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            fcm: FcmConfig::default(),
            forest: ForestConfig::default(),
            features: FeatureConfig::default(),
            preprocess: PreprocessConfig::default(),
            relevance: RelevanceConfig::default(),
            threshold: 0.5,
            seed: 0,
        }
    }
}

/// Mix the slice index into the per-slice FCM seed so every slice gets its
/// own deterministic initialization.
fn slice_fcm_cfg(base: &FcmConfig, z: usize) -> FcmConfig {
    let mut cfg = *base;
    cfg.seed = base.seed ^ (0x517c_c1b7_2722_0a95u64.wrapping_mul(z as u64 + 1));
    cfg
}

struct PreparedSlice {
    z: usize,
    slice: Slice,
    clustering: SliceClustering,
}

fn prepare_volume(v: &Volume, fcm_cfg: &FcmConfig, pre: &PreprocessConfig) -> Result<Vec<PreparedSlice>> {
    let normalized = v.normalized();
    (0..normalized.depth())
        .into_par_iter()
        .map(|z| {
            let slice = prepare_slice(&normalized, z, pre)?;
            let clustering = cluster_slice(&slice, &slice_fcm_cfg(fcm_cfg, z))?;
            Ok(PreparedSlice { z, slice, clustering })
        })
        .collect()
}

/// Train the pixel segmenter on volumes with truth tumor masks.
///
/// Samples are balanced per slice: every tumor pixel on a relevant slice,
/// plus an equal-count seeded uniform sample of that slice's non-tumor
/// pixels.
pub fn train_segmenter(corpus: &[(Volume, MaskVolume)], settings: &TrainSettings) -> Result<SegmenterModel> {
    use rand::SeedableRng;

    if corpus.is_empty() {
        return Err(validation!("training corpus is empty"));
    }
    let mut features_buf: Vec<f64> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    let feature_len = settings.features.feature_len(settings.fcm.c);

    for (vol_idx, (volume, truth)) in corpus.iter().enumerate() {
        if !volume.same_geometry_as(truth) {
            return Err(validation!("corpus volume {vol_idx} geometry mismatch with its mask"));
        }
        let prepared = prepare_volume(volume, &settings.fcm, &settings.preprocess)?;
        let normalized = v_normalized_view(&prepared, volume)?;
        let relevant = select_relevant_slices(&normalized, &clusterings_of(&prepared), &settings.relevance)?;

        for p in &prepared {
            if !relevant.contains(&p.z) {
                continue;
            }
            let truth_slice = truth.extract_slice(p.z)?;
            let tumor_px: Vec<usize> = truth_slice
                .labels()
                .iter()
                .enumerate()
                .filter(|(_, l)| **l != 0)
                .map(|(i, _)| i)
                .collect();
            if tumor_px.is_empty() {
                continue;
            }
            let slice_features = extract_pixel_features(
                &p.slice,
                if settings.features.use_fcm { Some(&p.clustering.model) } else { None },
                &settings.features,
            )?;
            let non_tumor: Vec<usize> = (0..truth_slice.labels().len())
                .filter(|i| truth_slice.labels()[*i] == 0)
                .collect();
            let take = tumor_px.len().min(non_tumor.len());
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(
                settings.seed ^ ((vol_idx as u64) << 32) ^ p.z as u64,
            );
            let negatives = rand::seq::index::sample(&mut rng, non_tumor.len(), take);

            for &idx in &tumor_px {
                features_buf.extend_from_slice(&slice_features[idx * feature_len..(idx + 1) * feature_len]);
                labels.push(1);
            }
            for idx in negatives.iter() {
                let idx = non_tumor[idx];
                features_buf.extend_from_slice(&slice_features[idx * feature_len..(idx + 1) * feature_len]);
                labels.push(0);
            }
        }
    }

    if !labels.contains(&1) {
        return Err(validation!("training corpus contains no tumor voxels on relevant slices"));
    }
    if !labels.contains(&0) {
        return Err(validation!("training corpus contains no background voxels"));
    }

    let mut forest_cfg = settings.forest;
    forest_cfg.seed = settings.seed;
    let forest = forest::train(&features_buf, feature_len, &labels, &forest_cfg)?;
    Ok(SegmenterModel {
        version: SEGMENTER_FORMAT_VERSION,
        forest,
        fcm: settings.fcm,
        features: settings.features,
        preprocess: settings.preprocess,
        relevance: settings.relevance.clone(),
        threshold: settings.threshold,
    })
}

fn clusterings_of(prepared: &[PreparedSlice]) -> Vec<SliceClustering> {
    // select_relevant_slices borrows clusterings by value; rebuild light views
    prepared
        .iter()
        .map(|p| SliceClustering {
            model: p.clustering.model.clone(),
            hardened: p.clustering.hardened.clone(),
            comps: p.clustering.comps.clone(),
            comp_ids: p.clustering.comp_ids.clone(),
        })
        .collect()
}

fn v_normalized_view(prepared: &[PreparedSlice], original: &Volume) -> Result<Volume> {
    // reassemble the preprocessed slices into a volume for global statistics
    let (w, h) = (original.width(), original.height());
    let mut data = Vec::with_capacity(w * h * prepared.len());
    for p in prepared {
        data.extend_from_slice(p.slice.data());
    }
    Volume::new(w, h, prepared.len(), original.spacing(), data)
}

/// The segmenter's full output for one volume.
#[derive(Debug, Clone)]
pub struct SegmentationResult {
    /// Tumor mask, labels {0, 100}.
    pub mask: MaskVolume,
    /// Per-slice relevance flags.
    pub relevance: Vec<bool>,
    /// Post-filter tumor probability; the mask equals `probability >=
    /// threshold` exactly.
    pub probability: Volume,
}

/// Segment a volume with a trained model: preprocess, FCM, features, and
/// forest probabilities per relevant slice, thresholded and cleaned of
/// too-small components.
pub fn segment_volume(v: &Volume, model: &SegmenterModel) -> Result<SegmentationResult> {
    let expect_features = model.features.feature_len(model.fcm.c);
    if model.forest.n_features != expect_features {
        return Err(validation!(
            "model expects {} features but the configuration yields {expect_features}",
            model.forest.n_features
        ));
    }
    let prepared = prepare_volume(v, &model.fcm, &model.preprocess)?;
    let normalized = v_normalized_view(&prepared, v)?;
    let relevant = select_relevant_slices(&normalized, &clusterings_of(&prepared), &model.relevance)?;

    let (w, h, d) = (v.width(), v.height(), v.depth());
    let plane = w * h;
    let planes: Result<Vec<Vec<f64>>> = prepared
        .par_iter()
        .map(|p| {
            if !relevant.contains(&p.z) {
                return Ok(vec![0.0f64; plane]);
            }
            let feats = extract_pixel_features(
                &p.slice,
                if model.features.use_fcm { Some(&p.clustering.model) } else { None },
                &model.features,
            )?;
            let mut probs = forest::predict_proba_batch(&model.forest, &feats, 1)?;

            // threshold, then drop components below the size floor; filtered
            // pixels get probability 0 so mask == thresholded probability
            let bin = Mask2d::from_fn(w, h, |col, row| probs[col + w * row] >= model.threshold);
            let mut keep = bin.clone();
            let (ids, comps) = mask_components(&bin);
            for (idx, id) in ids.iter().enumerate() {
                if *id == usize::MAX {
                    continue;
                }
                if comps[*id].size < model.relevance.min_component_px {
                    keep.set(idx % w, idx / w, false);
                }
            }
            for idx in 0..plane {
                if !keep.get(idx % w, idx / w) {
                    probs[idx] = 0.0;
                }
            }
            Ok(probs)
        })
        .collect();
    let planes = planes?;

    let mut prob_data = Vec::with_capacity(plane * d);
    let mut mask_labels = vec![0u8; plane * d];
    for (z, probs) in planes.iter().enumerate() {
        for (i, p) in probs.iter().enumerate() {
            prob_data.push(*p as f32);
            if *p >= model.threshold {
                mask_labels[z * plane + i] = label::TUMOR;
            }
        }
    }
    Ok(SegmentationResult {
        mask: MaskVolume::new(w, h, d, v.spacing(), mask_labels)?,
        relevance: (0..d).map(|z| relevant.contains(&z)).collect(),
        probability: Volume::new(w, h, d, v.spacing(), prob_data)?,
    })
}
