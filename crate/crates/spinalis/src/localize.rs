//! Vertebra labeling and tumor-vertebra fusion.
//!
//! Vertebra components are ordered along the cranio-caudal axis and named
//! anchored at L5 (the most caudal body), so partial fields of view still
//! label correctly. Fusion is a pure report: voxel overlap per vertebra,
//! surface adjacency as the fallback, centroid distance as the tiebreaker
//! of last resort.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::error::{validation, Error, Result};
use crate::regions::{components_3d, Component3d};
use crate::volume::{label, MaskVolume, Slice, Volume};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VertebraInfo {
    pub code: u8,
    pub voxels: usize,
    pub centroid: [f64; 3],
    pub bbox_min: [usize; 3],
    pub bbox_max: [usize; 3],
}

/// A relabeled mask plus per-vertebra geometry.
#[derive(Debug, Clone)]
pub struct VertebraLabeling {
    pub mask: MaskVolume,
    pub vertebrae: BTreeMap<u8, VertebraInfo>,
    components: BTreeMap<u8, Component3d>,
}

impl VertebraLabeling {
    pub fn codes(&self) -> Vec<u8> {
        self.vertebrae.keys().copied().collect()
    }
}

/// Label vertebra components T11..L5.
///
/// Components (26-connectivity over vertebra-family labels) are sorted by
/// centroid along the cranio-caudal axis; with fewer than 7 components the
/// assignment anchors at L5 and counts upward.
pub fn label_vertebrae(mask: &MaskVolume) -> Result<VertebraLabeling> {
    let comps = components_3d(mask, label::is_vertebra);
    if comps.is_empty() {
        return Err(validation!("no vertebra components in mask"));
    }
    if comps.len() > 7 {
        return Err(validation!("found {} vertebra components, at most 7 supported", comps.len()));
    }
    if comps.len() < 4 {
        return Err(validation!(
            "found {} vertebra components, need 4..=7 to anchor the labeling",
            comps.len()
        ));
    }
    let mut order: Vec<usize> = (0..comps.len()).collect();
    // cranio-caudal = increasing row (y) centroid
    order.sort_by(|a, b| comps[*a].centroid[1].total_cmp(&comps[*b].centroid[1]));
    let codes = &label::VERTEBRAE[7 - comps.len()..];

    let mut out = mask.clone();
    let mut vertebrae = BTreeMap::new();
    let mut components = BTreeMap::new();
    let (w, h) = (mask.width(), mask.height());
    for (slot, comp_idx) in order.into_iter().enumerate() {
        let code = codes[slot];
        let comp = &comps[comp_idx];
        for &idx in &comp.voxels {
            let x = idx % w;
            let y = (idx / w) % h;
            let z = idx / (w * h);
            out.set(x, y, z, code);
        }
        vertebrae.insert(
            code,
            VertebraInfo {
                code,
                voxels: comp.size,
                centroid: comp.centroid,
                bbox_min: comp.min,
                bbox_max: comp.max,
            },
        );
        components.insert(code, comp.clone());
    }
    Ok(VertebraLabeling { mask: out, vertebrae, components })
}

/// Fusion output: which vertebrae the tumor touches and where it came from.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct LocalizationReport {
    /// Impacted vertebra codes in cranio-caudal order.
    pub impacted: Vec<u8>,
    pub impacted_names: Vec<String>,
    /// The vertebra of origin.
    pub origin: u8,
    pub origin_name: String,
    /// Tumor-overlap voxel count per vertebra.
    pub overlap_voxels: BTreeMap<u8, u64>,
    /// Tumor-centroid to vertebra-centroid distance, recorded for every
    /// vertebra with zero overlap.
    pub distances_mm: BTreeMap<u8, f64>,
}

fn mm_dist(a: [f64; 3], b: [f64; 3], spacing: [f64; 3]) -> f64 {
    let dx = (a[0] - b[0]) * spacing[0];
    let dy = (a[1] - b[1]) * spacing[1];
    let dz = (a[2] - b[2]) * spacing[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// Surface voxels of a component: members with a 6-neighbor outside it.
fn surface_voxels(comp: &Component3d, mask: &MaskVolume, code: u8) -> Vec<[usize; 3]> {
    let (w, h, d) = (mask.width(), mask.height(), mask.depth());
    let mut out = Vec::new();
    for &idx in &comp.voxels {
        let x = idx % w;
        let y = (idx / w) % h;
        let z = idx / (w * h);
        let mut boundary = x == 0 || y == 0 || z == 0 || x + 1 == w || y + 1 == h || z + 1 == d;
        if !boundary {
            boundary = mask.get(x - 1, y, z) != code
                || mask.get(x + 1, y, z) != code
                || mask.get(x, y - 1, z) != code
                || mask.get(x, y + 1, z) != code
                || mask.get(x, y, z - 1) != code
                || mask.get(x, y, z + 1) != code;
        }
        if boundary {
            out.push([x, y, z]);
        }
    }
    out
}

/// Fuse a tumor mask with a vertebra labeling into a localization report.
///
/// Impacted = vertebrae with voxel overlap; when nothing overlaps, those
/// whose surface lies within `adjacency_mm` of a tumor voxel. Origin = the
/// vertebra with maximal overlap (ties break cranially), or the nearest by
/// centroid when all overlaps are zero.
pub fn fuse_tumor_with_labels(
    tumor: &MaskVolume,
    labeling: &VertebraLabeling,
    adjacency_mm: f64,
) -> Result<LocalizationReport> {
    if !tumor.same_geometry(&labeling.mask) {
        return Err(validation!("tumor and labeling geometries differ"));
    }
    let (w, h) = (tumor.width(), tumor.height());
    let spacing = tumor.spacing();

    let mut tumor_voxels: Vec<[usize; 3]> = Vec::new();
    let mut centroid = [0.0f64; 3];
    for (idx, t) in tumor.labels().iter().enumerate() {
        if *t == 0 {
            continue;
        }
        let v = [idx % w, (idx / w) % h, idx / (w * h)];
        for axis in 0..3 {
            centroid[axis] += v[axis] as f64;
        }
        tumor_voxels.push(v);
    }
    if tumor_voxels.is_empty() {
        return Err(Error::Validation("tumor mask is empty".into()));
    }
    for axis in 0..3 {
        centroid[axis] /= tumor_voxels.len() as f64;
    }

    // voxel overlap per vertebra
    let mut overlap: BTreeMap<u8, u64> = labeling.vertebrae.keys().map(|c| (*c, 0u64)).collect();
    for v in &tumor_voxels {
        let code = labeling.mask.get(v[0], v[1], v[2]);
        if let Some(n) = overlap.get_mut(&code) {
            *n += 1;
        }
    }

    let mut distances: BTreeMap<u8, f64> = BTreeMap::new();
    for (code, info) in &labeling.vertebrae {
        if overlap[code] == 0 {
            distances.insert(*code, mm_dist(centroid, info.centroid, spacing));
        }
    }

    let mut impacted: Vec<u8> = overlap
        .iter()
        .filter(|(_, n)| **n > 0)
        .map(|(c, _)| *c)
        .collect();

    if impacted.is_empty() {
        for (code, comp) in &labeling.components {
            // bounding-box prune before the exact surface scan
            let mut lo = f64::INFINITY;
            for v in &tumor_voxels {
                let mut d2 = 0.0;
                for axis in 0..3 {
                    let gap = if v[axis] < comp.min[axis] {
                        (comp.min[axis] - v[axis]) as f64
                    } else if v[axis] > comp.max[axis] {
                        (v[axis] - comp.max[axis]) as f64
                    } else {
                        0.0
                    };
                    d2 += (gap * spacing[axis]).powi(2);
                }
                lo = lo.min(d2.sqrt());
            }
            if lo > adjacency_mm {
                continue;
            }
            let surface = surface_voxels(comp, &labeling.mask, *code);
            'outer: for s in &surface {
                for v in &tumor_voxels {
                    let d = mm_dist(
                        [s[0] as f64, s[1] as f64, s[2] as f64],
                        [v[0] as f64, v[1] as f64, v[2] as f64],
                        spacing,
                    );
                    if d <= adjacency_mm {
                        impacted.push(*code);
                        break 'outer;
                    }
                }
            }
        }
        impacted.sort_unstable();
    }

    // origin: max overlap, cranial on ties; centroid distance fallback
    let origin = {
        let best_overlap = overlap.values().copied().max().unwrap_or(0);
        if best_overlap > 0 {
            *overlap
                .iter()
                .filter(|(_, n)| **n == best_overlap)
                .map(|(c, _)| c)
                .min()
                .unwrap()
        } else {
            *distances
                .iter()
                .min_by(|a, b| a.1.total_cmp(b.1))
                .map(|(c, _)| c)
                .unwrap()
        }
    };

    Ok(LocalizationReport {
        impacted_names: impacted
            .iter()
            .map(|c| label::vertebra_name(*c).unwrap_or("?").to_string())
            .collect(),
        origin_name: label::vertebra_name(origin).unwrap_or("?").to_string(),
        impacted,
        origin,
        overlap_voxels: overlap,
        distances_mm: distances,
    })
}

const DIGIT_FONT: [[u8; 5]; 10] = [
    [0b111, 0b101, 0b101, 0b101, 0b111], // 0
    [0b010, 0b110, 0b010, 0b010, 0b111], // 1
    [0b111, 0b001, 0b111, 0b100, 0b111], // 2
    [0b111, 0b001, 0b111, 0b001, 0b111], // 3
    [0b101, 0b101, 0b111, 0b001, 0b001], // 4
    [0b111, 0b100, 0b111, 0b001, 0b111], // 5
    [0b111, 0b100, 0b111, 0b101, 0b111], // 6
    [0b111, 0b001, 0b010, 0b010, 0b010], // 7
    [0b111, 0b101, 0b111, 0b101, 0b111], // 8
    [0b111, 0b101, 0b111, 0b001, 0b111], // 9
];

fn burn_digit(s: &mut Slice, digit: u8, col: usize, row: usize) {
    let glyph = DIGIT_FONT[digit as usize % 10];
    for (dy, bits) in glyph.iter().enumerate() {
        for dx in 0..3 {
            if bits & (0b100 >> dx) != 0 {
                let c = col + dx;
                let r = row + dy;
                if c < s.width() && r < s.height() {
                    s.set(c, r, 1.0);
                }
            }
        }
    }
}

/// Visual-inspection overlay for one slice: tumor boundary and vertebra
/// codes burned into the normalized intensities.
pub fn render_overlay(
    volume: &Volume,
    tumor: &MaskVolume,
    labeling: &VertebraLabeling,
    z: usize,
) -> Result<Slice> {
    if !volume.same_geometry_as(tumor) || !tumor.same_geometry(&labeling.mask) {
        return Err(validation!("overlay inputs must share geometry"));
    }
    let mut out = volume.normalized().extract_slice(z)?;
    let (w, h) = (out.width(), out.height());
    let ts = tumor.extract_slice(z)?;
    for row in 0..h {
        for col in 0..w {
            if ts.get(col, row) == 0 {
                continue;
            }
            let boundary = col == 0
                || row == 0
                || col + 1 == w
                || row + 1 == h
                || ts.get(col - 1, row) == 0
                || ts.get(col + 1, row) == 0
                || ts.get(col, row - 1) == 0
                || ts.get(col, row + 1) == 0;
            if boundary {
                out.set(col, row, 1.0);
            }
        }
    }
    for (code, info) in &labeling.vertebrae {
        let col = info.centroid[0].round() as usize;
        let row = info.centroid[1].round() as usize;
        burn_digit(&mut out, code / 10, col.saturating_sub(4), row.saturating_sub(2));
        burn_digit(&mut out, code % 10, col, row.saturating_sub(2));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Stack `n` vertebra boxes down the y axis, generic label 20.
    fn stacked_boxes(n: usize) -> MaskVolume {
        let mut m = MaskVolume::zeros(20, 20 * n + 10, 4, [1.0, 1.0, 1.0]).unwrap();
        for i in 0..n {
            for z in 1..3 {
                for y in 0..12 {
                    for x in 4..12 {
                        m.set(x, 5 + i * 20 + y, z, label::VERTEBRA_GENERIC);
                    }
                }
            }
        }
        m
    }

    #[test]
    fn seven_boxes_label_t11_through_l5() {
        let labeling = label_vertebrae(&stacked_boxes(7)).unwrap();
        assert_eq!(labeling.codes(), label::VERTEBRAE.to_vec());
        // most cranial centroid gets T11
        let t11 = &labeling.vertebrae[&label::T11];
        let l5 = &labeling.vertebrae[&label::L5];
        assert!(t11.centroid[1] < l5.centroid[1]);
    }

    #[test]
    fn five_boxes_anchor_at_l5() {
        let labeling = label_vertebrae(&stacked_boxes(5)).unwrap();
        assert_eq!(labeling.codes(), vec![label::L1, label::L2, label::L3, label::L4, label::L5]);
    }

    #[test]
    fn component_count_bounds() {
        assert!(label_vertebrae(&stacked_boxes(0).clone()).is_err());
        assert!(label_vertebrae(&stacked_boxes(2)).is_err());
        // 9 boxes: more than the 7 the schema can name
        let mut m = MaskVolume::zeros(20, 200, 3, [1.0, 1.0, 1.0]).unwrap();
        for i in 0..9 {
            for y in 0..8 {
                for x in 4..10 {
                    m.set(x, 3 + i * 20 + y, 1, label::VERTEBRA_GENERIC);
                }
            }
        }
        assert!(label_vertebrae(&m).is_err());
    }

    fn tumor_at(rows: std::ops::Range<usize>, m: &MaskVolume) -> MaskVolume {
        let mut t = MaskVolume::zeros(m.width(), m.height(), m.depth(), m.spacing()).unwrap();
        for y in rows {
            for x in 13..16 {
                t.set(x, y, 1, label::TUMOR);
            }
        }
        t
    }

    #[test]
    fn single_vertebra_overlap() {
        let labeling = label_vertebrae(&stacked_boxes(7)).unwrap();
        // tumor entirely within the L3 box rows, overlapping its voxels
        let mut t = MaskVolume::zeros(20, 150, 4, [1.0, 1.0, 1.0]).unwrap();
        let l3 = labeling.vertebrae[&label::L3].clone();
        for y in l3.bbox_min[1]..=l3.bbox_min[1] + 3 {
            for x in 5..8 {
                t.set(x, y, 1, label::TUMOR);
            }
        }
        let report = fuse_tumor_with_labels(&t, &labeling, 5.0).unwrap();
        assert_eq!(report.impacted, vec![label::L3]);
        assert_eq!(report.origin, label::L3);
        assert_eq!(report.origin_name, "L3");
    }

    #[test]
    fn straddling_tumor_origin_by_max_overlap() {
        let mask = stacked_boxes(7);
        let labeling = label_vertebrae(&mask).unwrap();
        let l2 = labeling.vertebrae[&label::L2].clone();
        let l3 = labeling.vertebrae[&label::L3].clone();
        // 60 voxels in L2, 40 in L3
        let mut t = MaskVolume::zeros(20, 150, 4, [1.0, 1.0, 1.0]).unwrap();
        let mut placed = 0;
        'l2: for y in l2.bbox_min[1]..=l2.bbox_max[1] {
            for x in l2.bbox_min[0]..=l2.bbox_max[0] {
                t.set(x, y, 1, label::TUMOR);
                placed += 1;
                if placed == 60 {
                    break 'l2;
                }
            }
        }
        placed = 0;
        'l3: for y in l3.bbox_min[1]..=l3.bbox_max[1] {
            for x in l3.bbox_min[0]..=l3.bbox_max[0] {
                t.set(x, y, 2, label::TUMOR);
                placed += 1;
                if placed == 40 {
                    break 'l3;
                }
            }
        }
        let report = fuse_tumor_with_labels(&t, &labeling, 5.0).unwrap();

        // brute-force recount straight off the grids
        let mut want: BTreeMap<u8, u64> = BTreeMap::new();
        for z in 0..4 {
            for y in 0..150 {
                for x in 0..20 {
                    if t.get(x, y, z) != 0 {
                        let code = labeling.mask.get(x, y, z);
                        if label::is_vertebra(code) {
                            *want.entry(code).or_insert(0) += 1;
                        }
                    }
                }
            }
        }
        assert_eq!(report.overlap_voxels[&label::L2], want[&label::L2]);
        assert_eq!(report.overlap_voxels[&label::L3], want[&label::L3]);
        assert_eq!(report.overlap_voxels[&label::L2], 60);
        assert_eq!(report.impacted, vec![label::L2, label::L3]);
        assert_eq!(report.origin, label::L2);
    }

    #[test]
    fn adjacency_fallback_when_no_overlap() {
        let mask = stacked_boxes(7);
        let labeling = label_vertebrae(&mask).unwrap();
        let l4 = labeling.vertebrae[&label::L4].clone();
        // tumor 2 px posterior to the L4 box: no overlap, within 5 mm
        let t = tumor_at(l4.bbox_min[1] + 2..l4.bbox_min[1] + 6, &mask);
        let report = fuse_tumor_with_labels(&t, &labeling, 5.0).unwrap();
        assert!(report.overlap_voxels.values().all(|n| *n == 0));
        assert!(report.impacted.contains(&label::L4), "impacted {:?}", report.impacted);
        assert_eq!(report.origin, label::L4);
        assert!(report.distances_mm.contains_key(&label::L4));
    }

    #[test]
    fn empty_tumor_rejected_and_inputs_unmodified() {
        let mask = stacked_boxes(7);
        let labeling = label_vertebrae(&mask).unwrap();
        let empty = MaskVolume::zeros(20, 150, 4, [1.0, 1.0, 1.0]).unwrap();
        assert!(fuse_tumor_with_labels(&empty, &labeling, 5.0).is_err());

        let t = tumor_at(30..34, &mask);
        let t_before = t.clone();
        let labeling_mask_before = labeling.mask.clone();
        let a = fuse_tumor_with_labels(&t, &labeling, 5.0).unwrap();
        let b = fuse_tumor_with_labels(&t, &labeling, 5.0).unwrap();
        assert_eq!(a, b);
        assert_eq!(t, t_before);
        assert_eq!(labeling.mask, labeling_mask_before);
    }

    #[test]
    fn overlay_draws_boundary() {
        let mask = stacked_boxes(7);
        let labeling = label_vertebrae(&mask).unwrap();
        let t = tumor_at(30..36, &mask);
        let v = Volume::zeros(20, 150, 4, [1.0, 1.0, 1.0]).unwrap();
        let overlay = render_overlay(&v, &t, &labeling, 1).unwrap();
        // boundary pixels burned to 1.0
        assert!(overlay.data().iter().any(|p| *p == 1.0));
    }
}
