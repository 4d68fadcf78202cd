//! On-disk corpus conventions: phantom files, sidecars, crops, and the
//! source-level train/test split.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use spinalis::label;
use spinalis::phantom::{PhantomConfig, TumorSpec};
use spinalis::volume::{MaskVolume, Slice, TumorType, Volume};

/// JSON sidecar written next to every generated phantom pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhantomSidecar {
    pub id: String,
    pub config: PhantomConfig,
    pub tumor: Option<TumorSpec>,
    pub truth_voxels: usize,
}

/// One corpus entry loaded back from disk.
#[derive(Debug)]
pub struct CorpusEntry {
    pub id: String,
    pub volume: Volume,
    pub mask: MaskVolume,
    pub truth: MaskVolume,
    pub sidecar: PhantomSidecar,
}

pub fn volume_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.svol"))
}

pub fn mask_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}_mask.svol"))
}

pub fn truth_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}_truth.svol"))
}

pub fn sidecar_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.json"))
}

/// Scan a directory for phantom sidecars and load the referenced files.
pub fn load_corpus(dir: &Path) -> Result<Vec<CorpusEntry>> {
    let mut ids = Vec::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "json") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                ids.push(stem.to_string());
            }
        }
    }
    ids.sort();
    if ids.is_empty() {
        bail!("no phantom sidecars (*.json) found in {}", dir.display());
    }
    ids.iter().map(|id| load_entry(dir, id)).collect()
}

pub fn load_entry(dir: &Path, id: &str) -> Result<CorpusEntry> {
    let sidecar: PhantomSidecar =
        serde_json::from_str(&std::fs::read_to_string(sidecar_path(dir, id))?)
            .with_context(|| format!("parsing sidecar for {id}"))?;
    let volume = spinalis::io::load_volume(volume_path(dir, id))?;
    let mask = spinalis::io::load_mask(mask_path(dir, id))?;
    let truth = spinalis::io::load_mask(truth_path(dir, id))?;
    Ok(CorpusEntry { id: id.to_string(), volume, mask, truth, sidecar })
}

/// Split source ids into train/test by source volume, deterministic per
/// seed; every derived sample follows its source.
pub fn split_corpus(
    source_ids: &[String],
    ratio: f64,
    seed: u64,
) -> Result<(BTreeSet<String>, BTreeSet<String>)> {
    if source_ids.is_empty() {
        bail!("cannot split an empty manifest");
    }
    if !(0.0 < ratio && ratio < 1.0) {
        bail!("split ratio must lie in (0, 1), got {ratio}");
    }
    let mut unique: Vec<String> = source_ids.to_vec();
    unique.sort();
    unique.dedup();

    // seeded Fisher-Yates over the sorted unique sources
    let mut state = seed ^ 0x9e37_79b9_7f4a_7c15;
    let mut next = || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        state
    };
    for i in (1..unique.len()).rev() {
        let j = (next() % (i as u64 + 1)) as usize;
        unique.swap(i, j);
    }

    let n = unique.len();
    let n_train = ((ratio * n as f64).round() as usize).clamp(1, n.max(2) - 1);
    let train: BTreeSet<String> = unique[..n_train].iter().cloned().collect();
    let test: BTreeSet<String> = unique[n_train..].iter().cloned().collect();
    Ok((train, test))
}

/// One classification sample: a context crop around the tumor.
pub struct TumorCrop {
    pub crop: Slice,
    pub tumor_type: TumorType,
    pub source_id: String,
    pub slice_z: usize,
}

/// Cut context crops around the truth tumor on every tumor-bearing slice.
///
/// The crop is the tumor bounding box grown by `margin` on each side (so the
/// surrounding compartment is visible), clamped to the slice.
pub fn tumor_crops(entry: &CorpusEntry, margin: f64, min_tumor_px: usize) -> Result<Vec<TumorCrop>> {
    let Some(spec) = &entry.sidecar.tumor else {
        return Ok(Vec::new());
    };
    let normalized = entry.volume.normalized();
    let mut crops = Vec::new();
    for z in 0..entry.truth.depth() {
        let truth_slice = entry.truth.extract_slice(z)?;
        let tumor = truth_slice.binary(label::TUMOR);
        if tumor.count() < min_tumor_px {
            continue;
        }
        let (mut min_c, mut min_r, mut max_c, mut max_r) = (usize::MAX, usize::MAX, 0, 0);
        for (col, row) in tumor.iter_set() {
            min_c = min_c.min(col);
            max_c = max_c.max(col);
            min_r = min_r.min(row);
            max_r = max_r.max(row);
        }
        let (h, w) = (max_r - min_r + 1, max_c - min_c + 1);
        let grow_r = (h as f64 * margin).ceil() as usize;
        let grow_c = (w as f64 * margin).ceil() as usize;
        let r0 = min_r.saturating_sub(grow_r);
        let c0 = min_c.saturating_sub(grow_c);
        let r1 = (max_r + grow_r).min(entry.truth.height() - 1);
        let c1 = (max_c + grow_c).min(entry.truth.width() - 1);

        let slice = normalized.extract_slice(z)?;
        let mut data = Vec::with_capacity((r1 - r0 + 1) * (c1 - c0 + 1));
        for row in r0..=r1 {
            for col in c0..=c1 {
                data.push(slice.get(col, row));
            }
        }
        crops.push(TumorCrop {
            crop: Slice::new(c1 - c0 + 1, r1 - r0 + 1, data, z)?,
            tumor_type: spec.tumor_type,
            source_id: entry.id.clone(),
            slice_z: z,
        });
    }
    Ok(crops)
}
