//! CSF-glide tumor augmentation.
//!
//! A tumor is cut out of its slice, the hole is regenerated, and the tumor
//! is glided along the CSF centerline from T11 to L5, rotated to the local
//! path tangent at every stop and rejected wherever it cannot fit the
//! (dilated) CSF. Each emitted image is then doubled by a small seeded
//! global rotation.

use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};
use crate::preprocess::bicubic_inpaint;
use crate::regions::mask_components;
use crate::volume::{label, Mask2d, MaskSlice, MaskVolume, Slice, TumorType, Volume};

/// An extracted tumor: its pixels relative to the bounding box, with the
/// original intensities.
#[derive(Debug, Clone)]
pub struct TumorInstance {
    /// (row, col, intensity) relative to the bounding box.
    pub pixels: Vec<(usize, usize, f32)>,
    /// Bounding box (height, width).
    pub bbox: (usize, usize),
    /// Centroid (row, col) in box coordinates.
    pub centroid: (f64, f64),
    pub tumor_type: TumorType,
    pub source_slice: usize,
    /// Bounding-box origin (row, col) in the source slice.
    pub origin: (usize, usize),
}

impl TumorInstance {
    pub fn area(&self) -> usize {
        self.pixels.len()
    }

    /// Write the instance back at its source location, unchanged.
    pub fn paste_at_origin(&self, host: &Slice) -> Slice {
        let mut out = host.clone();
        for &(row, col, v) in &self.pixels {
            out.set(self.origin.1 + col, self.origin.0 + row, v);
        }
        out
    }
}

/// Separate a tumor from its slice: the instance keeps the original
/// intensities and the returned host has the hole regenerated by bicubic
/// inpainting.
pub fn extract_tumor(
    s: &Slice,
    tumor_mask: &Mask2d,
    tumor_type: TumorType,
) -> Result<(TumorInstance, Slice)> {
    if tumor_mask.width() != s.width() || tumor_mask.height() != s.height() {
        return Err(validation!("tumor mask dims do not match slice"));
    }
    if tumor_mask.is_empty() {
        return Err(validation!("tumor mask is empty"));
    }
    let (_, comps) = mask_components(tumor_mask);
    if comps.len() != 1 {
        return Err(validation!("tumor mask must be 4-connected, found {} components", comps.len()));
    }
    let comp = &comps[0];
    if comp.min_col < 2
        || comp.min_row < 2
        || comp.max_col + 2 >= s.width()
        || comp.max_row + 2 >= s.height()
    {
        return Err(validation!("tumor mask touches the slice border margin"));
    }

    let host = bicubic_inpaint(s, tumor_mask)?;

    let (h, w) = (comp.max_row - comp.min_row + 1, comp.max_col - comp.min_col + 1);
    let mut pixels = Vec::new();
    let (mut sum_r, mut sum_c) = (0.0f64, 0.0f64);
    for (col, row) in tumor_mask.iter_set() {
        let rr = row - comp.min_row;
        let cc = col - comp.min_col;
        pixels.push((rr, cc, s.get(col, row)));
        sum_r += rr as f64;
        sum_c += cc as f64;
    }
    let n = pixels.len() as f64;
    Ok((
        TumorInstance {
            pixels,
            bbox: (h, w),
            centroid: (sum_r / n, sum_c / n),
            tumor_type,
            source_slice: s.source_index(),
            origin: (comp.min_row, comp.min_col),
        },
        host,
    ))
}

/// CSF centerline through a labeled slice, cranio-caudal.
#[derive(Debug, Clone)]
pub struct CsfPath {
    /// (row, col) centerline points ordered by increasing row.
    pub points: Vec<(f64, f64)>,
    /// Tangent angle per point: atan2 of the central difference,
    /// `atan2(d_col, d_row)`, so 0 points straight caudally.
    pub tangents: Vec<f64>,
    /// Vertebra code level per point.
    pub vertebra_level: Vec<u8>,
}

impl CsfPath {
    pub fn arc_length(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| {
                let dr = w[1].0 - w[0].0;
                let dc = w[1].1 - w[0].1;
                (dr * dr + dc * dc).sqrt()
            })
            .sum()
    }
}

/// Per-row centerline of the CSF space between two vertebra levels.
///
/// The centroid is taken over the canal fluid column: CSF pixels together
/// with the cord and dural walls the fluid surrounds, plus tumor pixels
/// lying inside that span (a canal tumor displaces fluid but does not
/// interrupt the medium). On a plain CSF band this reduces to the CSF
/// centroid.
pub fn extract_csf_path(mask: &MaskSlice, start_level: u8, end_level: u8) -> Result<CsfPath> {
    if !(label::T11..=label::L5).contains(&start_level)
        || !(label::T11..=label::L5).contains(&end_level)
        || start_level >= end_level
    {
        return Err(validation!("levels must be vertebra codes with start above end"));
    }
    let (w, h) = (mask.width(), mask.height());

    // vertebra row ranges, from the named labels
    let mut ranges: std::collections::BTreeMap<u8, (usize, usize)> = Default::default();
    for row in 0..h {
        for col in 0..w {
            let code = mask.get(col, row);
            if (label::T11..=label::L5).contains(&code) {
                let e = ranges.entry(code).or_insert((row, row));
                e.0 = e.0.min(row);
                e.1 = e.1.max(row);
            }
        }
    }
    let start_range = *ranges
        .get(&start_level)
        .ok_or_else(|| validation!("start level {start_level} not present in mask"))?;
    let end_range = *ranges
        .get(&end_level)
        .ok_or_else(|| validation!("end level {end_level} not present in mask"))?;
    let row_start = (start_range.0 + start_range.1) / 2;
    let row_end = (end_range.0 + end_range.1) / 2;
    if row_start >= row_end {
        return Err(validation!("start level must lie above end level"));
    }

    let mut points = Vec::new();
    let mut levels = Vec::new();
    let mut csf_seen = 0usize;
    for row in row_start..=row_end {
        let mut lo = usize::MAX;
        let mut hi = 0usize;
        for col in 0..w {
            match mask.get(col, row) {
                label::CSF => {
                    csf_seen += 1;
                    lo = lo.min(col);
                    hi = hi.max(col);
                }
                label::CORD | label::DURA => {
                    lo = lo.min(col);
                    hi = hi.max(col);
                }
                _ => {}
            }
        }
        if lo > hi {
            continue;
        }
        let mut sum = 0.0f64;
        let mut n = 0usize;
        for col in lo..=hi {
            let code = mask.get(col, row);
            if matches!(code, label::CSF | label::CORD | label::DURA | label::TUMOR) {
                sum += col as f64;
                n += 1;
            }
        }
        points.push((row as f64, sum / n as f64));
        // level: vertebra whose row range is nearest to this row
        let mut best = start_level;
        let mut best_d = usize::MAX;
        for (code, (lo, hi)) in &ranges {
            let d = if row < *lo {
                lo - row
            } else if row > *hi {
                row - hi
            } else {
                0
            };
            if d < best_d {
                best_d = d;
                best = *code;
            }
        }
        levels.push(best);
    }
    if points.len() < 2 || csf_seen == 0 {
        return Err(validation!("CSF absent or does not span the requested levels"));
    }
    if points[0].0 > row_start as f64 + 5.0 || points[points.len() - 1].0 < row_end as f64 - 5.0 {
        return Err(validation!("CSF does not span the requested levels"));
    }
    for pair in points.windows(2) {
        let dr = pair[1].0 - pair[0].0;
        let dc = pair[1].1 - pair[0].1;
        if (dr * dr + dc * dc).sqrt() > 5.0 {
            return Err(validation!("CSF centerline is discontinuous"));
        }
    }

    let n = points.len();
    let mut tangents = Vec::with_capacity(n);
    for i in 0..n {
        let (prev, next) = if i == 0 {
            (points[0], points[1])
        } else if i + 1 == n {
            (points[n - 2], points[n - 1])
        } else {
            (points[i - 1], points[i + 1])
        };
        tangents.push((next.1 - prev.1).atan2(next.0 - prev.0));
    }

    Ok(CsfPath { points, tangents, vertebra_level: levels })
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GlideConfig {
    /// Arc-length step between placements, px ("1 mm = 3 pixels").
    pub step_px: usize,
    pub start_level: u8,
    pub end_level: u8,
    /// CSF dilation allowed when testing tumor containment.
    pub csf_fit_dilation_px: usize,
}

impl Default for GlideConfig {
    fn default() -> Self {
        GlideConfig {
            step_px: 3,
            start_level: label::T11,
            end_level: label::L5,
            csf_fit_dilation_px: 2,
        }
    }
}

impl GlideConfig {
    pub fn validate(&self) -> Result<()> {
        if self.step_px == 0 {
            return Err(validation!("step_px must be >= 1"));
        }
        Ok(())
    }
}

/// Tent-profile size factor for slice `z` of `depth`: `min_scale` at the
/// lateral slices, 1.0 at the center, linear between.
pub fn scale_schedule(z: usize, depth: usize, min_scale: f64) -> f64 {
    assert!(z < depth, "slice index out of range");
    assert!(min_scale > 0.0 && min_scale <= 1.0);
    if depth <= 1 {
        return 1.0;
    }
    let center = (depth - 1) as f64 / 2.0;
    let t = 1.0 - (z as f64 - center).abs() / center;
    min_scale + (1.0 - min_scale) * t
}

/// A tumor footprint after scaling and rotation: integer offsets from the
/// placement point plus resampled intensities.
#[derive(Debug, Clone)]
pub struct TumorStamp {
    /// (d_row, d_col, intensity) relative to the placement point.
    pub pixels: Vec<(i64, i64, f32)>,
}

/// Scale and rotate an instance by inverse mapping. Intensities are sampled
/// bilinearly, the footprint with nearest-neighbor, matching how the truth
/// masks are produced.
pub fn transform_instance(t: &TumorInstance, scale: f64, angle: f64) -> TumorStamp {
    // dense source grids over the bbox
    let (bh, bw) = t.bbox;
    let mut grid = vec![0.0f32; bh * bw];
    let mut inside = vec![false; bh * bw];
    for &(row, col, v) in &t.pixels {
        grid[col + bw * row] = v;
        inside[col + bw * row] = true;
    }

    let reach = (bh.max(bw) as f64) * scale * 0.75 + 2.0;
    let r = reach.ceil() as i64;
    let (cos_t, sin_t) = (angle.cos(), angle.sin());
    let mut pixels = Vec::new();
    for drow in -r..=r {
        for dcol in -r..=r {
            // inverse rotate then unscale back into source box coordinates
            let ic = (cos_t * dcol as f64 - sin_t * drow as f64) / scale + t.centroid.1;
            let ir = (sin_t * dcol as f64 + cos_t * drow as f64) / scale + t.centroid.0;
            let nr = ir.round();
            let nc = ic.round();
            if nr < 0.0 || nc < 0.0 || nr >= bh as f64 || nc >= bw as f64 {
                continue;
            }
            if !inside[nc as usize + bw * nr as usize] {
                continue;
            }
            // bilinear over the dense grid; invalid corners fall back to the
            // nearest in-mask value
            let r0 = ir.floor().clamp(0.0, (bh - 1) as f64) as usize;
            let c0 = ic.floor().clamp(0.0, (bw - 1) as f64) as usize;
            let r1 = (r0 + 1).min(bh - 1);
            let c1 = (c0 + 1).min(bw - 1);
            let fr = (ir - r0 as f64).clamp(0.0, 1.0) as f32;
            let fc = (ic - c0 as f64).clamp(0.0, 1.0) as f32;
            let nearest = grid[nc as usize + bw * nr as usize];
            let v00 = if inside[c0 + bw * r0] { grid[c0 + bw * r0] } else { nearest };
            let v10 = if inside[c1 + bw * r0] { grid[c1 + bw * r0] } else { nearest };
            let v01 = if inside[c0 + bw * r1] { grid[c0 + bw * r1] } else { nearest };
            let v11 = if inside[c1 + bw * r1] { grid[c1 + bw * r1] } else { nearest };
            let top = v00 * (1.0 - fc) + v10 * fc;
            let bot = v01 * (1.0 - fc) + v11 * fc;
            pixels.push((drow, dcol, top * (1.0 - fr) + bot * fr));
        }
    }
    TumorStamp { pixels }
}

/// One glide output: the composited slice and its exact truth mask.
#[derive(Debug, Clone)]
pub struct GlidePlacement {
    pub slice: Slice,
    pub truth: Mask2d,
    pub position_index: usize,
    /// (row, col) of the placement point.
    pub point: (f64, f64),
    /// Rotation applied to match the path tangent, radians.
    pub angle: f64,
    pub vertebra_level: u8,
}

/// Glide a tumor along the CSF path, one placement per `step_px` of arc
/// length. Placements whose footprint leaves the dilated CSF (or the frame)
/// are skipped; zero surviving placements is an error.
pub fn glide_tumor(
    host: &Slice,
    path: &CsfPath,
    t: &TumorInstance,
    cfg: &GlideConfig,
    csf_mask: &Mask2d,
) -> Result<Vec<GlidePlacement>> {
    cfg.validate()?;
    if csf_mask.width() != host.width() || csf_mask.height() != host.height() {
        return Err(validation!("CSF mask dims do not match host slice"));
    }
    if path.points.len() < 2 {
        return Err(validation!("path needs at least 2 points"));
    }
    let dilated = csf_mask.dilated(cfg.csf_fit_dilation_px);

    // cumulative arc length over path points
    let mut cum = Vec::with_capacity(path.points.len());
    cum.push(0.0f64);
    for w in path.points.windows(2) {
        let dr = w[1].0 - w[0].0;
        let dc = w[1].1 - w[0].1;
        cum.push(cum.last().unwrap() + (dr * dr + dc * dc).sqrt());
    }
    let total = *cum.last().unwrap();

    let mut outputs = Vec::new();
    let mut seg = 0usize;
    let mut k = 0usize;
    loop {
        let s = (k * cfg.step_px) as f64;
        if s > total {
            break;
        }
        while seg + 2 < cum.len() && cum[seg + 1] < s {
            seg += 1;
        }
        let seg_len = (cum[seg + 1] - cum[seg]).max(1e-12);
        let frac = ((s - cum[seg]) / seg_len).clamp(0.0, 1.0);
        let (r0, c0) = path.points[seg];
        let (r1, c1) = path.points[seg + 1];
        let point = (r0 + frac * (r1 - r0), c0 + frac * (c1 - c0));
        let mut dt = path.tangents[seg + 1] - path.tangents[seg];
        if dt > std::f64::consts::PI {
            dt -= 2.0 * std::f64::consts::PI;
        } else if dt < -std::f64::consts::PI {
            dt += 2.0 * std::f64::consts::PI;
        }
        let angle = path.tangents[seg] + frac * dt;
        let level = path.vertebra_level[seg];
        k += 1;

        let stamp = transform_instance(t, 1.0, angle);
        let mut truth = Mask2d::empty(host.width(), host.height());
        let mut pixels = Vec::with_capacity(stamp.pixels.len());
        let mut fits = true;
        for &(dr, dc, v) in &stamp.pixels {
            let row = point.0 + dr as f64;
            let col = point.1 + dc as f64;
            let row = row.round();
            let col = col.round();
            if row < 0.0 || col < 0.0 || row >= host.height() as f64 || col >= host.width() as f64
            {
                fits = false;
                break;
            }
            let (row, col) = (row as usize, col as usize);
            if !dilated.get(col, row) {
                fits = false;
                break;
            }
            pixels.push((row, col, v));
        }
        if !fits || pixels.is_empty() {
            continue;
        }
        let mut slice = host.clone();
        for &(row, col, v) in &pixels {
            slice.set(col, row, v);
            truth.set(col, row, true);
        }
        outputs.push(GlidePlacement {
            slice,
            truth,
            position_index: outputs.len(),
            point,
            angle,
            vertebra_level: level,
        });
    }

    if outputs.is_empty() {
        return Err(Error::NoPlacement);
    }
    Ok(outputs)
}

/// Rotation sense for the dataset-doubling augmentation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RotationDirection {
    Left,
    Right,
}

fn rotation_radians(angle_deg: f64, direction: RotationDirection) -> f64 {
    let sign = match direction {
        RotationDirection::Left => -1.0,
        RotationDirection::Right => 1.0,
    };
    sign * angle_deg.to_radians()
}

/// Rotate a slice about its center by 1 to 10 degrees, bilinear resampling,
/// out-of-frame filled with 0.
pub fn rotate_augment(s: &Slice, angle_deg: f64, direction: RotationDirection) -> Result<Slice> {
    if !(1.0..=10.0).contains(&angle_deg) {
        return Err(validation!("rotation angle must lie in [1, 10] degrees, got {angle_deg}"));
    }
    let theta = rotation_radians(angle_deg, direction);
    let (w, h) = (s.width(), s.height());
    let (cx, cy) = ((w - 1) as f64 / 2.0, (h - 1) as f64 / 2.0);
    let (cos_t, sin_t) = (theta.cos(), theta.sin());
    let mut data = vec![0.0f32; w * h];
    for row in 0..h {
        for col in 0..w {
            // inverse map into the source frame
            let dx = col as f64 - cx;
            let dy = row as f64 - cy;
            let sx = cos_t * dx + sin_t * dy + cx;
            let sy = -sin_t * dx + cos_t * dy + cy;
            if sx < 0.0 || sy < 0.0 || sx > (w - 1) as f64 || sy > (h - 1) as f64 {
                continue;
            }
            data[col + w * row] = s.sample_bilinear(sx, sy);
        }
    }
    Slice::new(w, h, data, s.source_index())
}

/// Rotate a truth mask with the same geometry as `rotate_augment`, nearest
/// neighbor.
pub fn rotate_mask(mask: &Mask2d, angle_deg: f64, direction: RotationDirection) -> Result<Mask2d> {
    if !(1.0..=10.0).contains(&angle_deg) {
        return Err(validation!("rotation angle must lie in [1, 10] degrees, got {angle_deg}"));
    }
    let theta = rotation_radians(angle_deg, direction);
    let (w, h) = (mask.width(), mask.height());
    let (cx, cy) = ((w - 1) as f64 / 2.0, (h - 1) as f64 / 2.0);
    let (cos_t, sin_t) = (theta.cos(), theta.sin());
    let mut out = Mask2d::empty(w, h);
    for row in 0..h {
        for col in 0..w {
            let dx = col as f64 - cx;
            let dy = row as f64 - cy;
            let sx = (cos_t * dx + sin_t * dy + cx).round();
            let sy = (-sin_t * dx + cos_t * dy + cy).round();
            if sx < 0.0 || sy < 0.0 || sx > (w - 1) as f64 || sy > (h - 1) as f64 {
                continue;
            }
            if mask.get(sx as usize, sy as usize) {
                out.set(col, row, true);
            }
        }
    }
    Ok(out)
}

/// One corpus entry handed to `augment_dataset`.
#[derive(Debug, Clone)]
pub struct AugmentInput {
    pub id: String,
    pub volume: Volume,
    /// Labeled mask with CSF, vertebrae, and the tumor merged as label 100.
    pub mask: MaskVolume,
    pub tumor_type: TumorType,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub glide: GlideConfig,
    /// Size-schedule floor for lateral slices.
    pub min_scale: f64,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig { glide: GlideConfig::default(), min_scale: 0.4, seed: 0 }
    }
}

/// A produced sample: the augmented slice plus its exact truth mask.
#[derive(Debug, Clone)]
pub struct AugmentedSample {
    pub image: Slice,
    pub truth: Mask2d,
    pub record: ManifestRecord,
}

/// Provenance of one emitted sample (JSON-lines manifest entry).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ManifestRecord {
    pub source_id: String,
    pub slice_z: usize,
    pub position_index: usize,
    pub scale: f64,
    pub angle_deg: f64,
    pub direction: Option<RotationDirection>,
    pub output_path: String,
    pub truth_path: String,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

fn sample_rng_value(seed: u64, source_idx: usize, z: usize, k: usize) -> u64 {
    splitmix64(seed ^ splitmix64(source_idx as u64 ^ splitmix64((z as u64) << 20 ^ k as u64)))
}

/// Run the full augmentation over a corpus: per tumor-bearing slice, glide
/// the extracted tumor along the CSF and double every output with a seeded
/// rotation in [1, 10] degrees. The result is exactly 2x the glide outputs.
pub fn augment_dataset(
    corpus: &[AugmentInput],
    cfg: &AugmentConfig,
) -> Result<Vec<AugmentedSample>> {
    if !(0.0 < cfg.min_scale && cfg.min_scale <= 1.0) {
        return Err(validation!("min_scale must lie in (0, 1]"));
    }
    cfg.glide.validate()?;
    let mut samples = Vec::new();

    for (source_idx, input) in corpus.iter().enumerate() {
        if !input.volume.same_geometry_as(&input.mask) {
            return Err(validation!("input {} volume/mask geometry mismatch", input.id));
        }
        if input.mask.count(label::TUMOR) == 0 {
            return Err(validation!("input {} has no tumor label", input.id));
        }
        if input.mask.count(label::CSF) == 0 {
            return Err(validation!("input {} has no CSF label", input.id));
        }
        let depth = input.volume.depth();
        for z in 0..depth {
            let mask_slice = input.mask.extract_slice(z)?;
            let tumor_mask = mask_slice.binary(label::TUMOR);
            if tumor_mask.is_empty() {
                continue;
            }
            let image = input.volume.extract_slice(z)?;
            let (instance, host) = extract_tumor(&image, &tumor_mask, input.tumor_type)?;
            let path = extract_csf_path(&mask_slice, cfg.glide.start_level, cfg.glide.end_level)?;
            // the glide medium: CSF plus the tumor pixels occupying it
            let mut medium = mask_slice.binary(label::CSF);
            for (col, row) in tumor_mask.iter_set() {
                medium.set(col, row, true);
            }

            let scale = scale_schedule(z, depth, cfg.min_scale);
            let scaled = scale_instance(&instance, scale);
            let placements = glide_tumor(&host, &path, &scaled, &cfg.glide, &medium)?;

            for placement in placements {
                let k = placement.position_index;
                let r = sample_rng_value(cfg.seed, source_idx, z, k);
                let angle_deg = 1.0 + (r % 9000) as f64 / 1000.0; // [1, 10)
                let direction = if (r >> 32) & 1 == 0 {
                    RotationDirection::Left
                } else {
                    RotationDirection::Right
                };

                let base_name = format!("{}_z{:03}_p{:03}", input.id, z, k);
                samples.push(AugmentedSample {
                    image: placement.slice.clone(),
                    truth: placement.truth.clone(),
                    record: ManifestRecord {
                        source_id: input.id.clone(),
                        slice_z: z,
                        position_index: k,
                        scale,
                        angle_deg: 0.0,
                        direction: None,
                        output_path: format!("{base_name}.svol"),
                        truth_path: format!("{base_name}_truth.svol"),
                    },
                });
                let rotated = rotate_augment(&placement.slice, angle_deg, direction)?;
                let rotated_truth = rotate_mask(&placement.truth, angle_deg, direction)?;
                samples.push(AugmentedSample {
                    image: rotated,
                    truth: rotated_truth,
                    record: ManifestRecord {
                        source_id: input.id.clone(),
                        slice_z: z,
                        position_index: k,
                        scale,
                        angle_deg,
                        direction: Some(direction),
                        output_path: format!("{base_name}_rot.svol"),
                        truth_path: format!("{base_name}_rot_truth.svol"),
                    },
                });
            }
        }
    }
    Ok(samples)
}

/// Rescale an instance about its centroid; the pixel set is resampled so
/// the footprint area tracks `scale^2` up to rasterization.
pub fn scale_instance(t: &TumorInstance, scale: f64) -> TumorInstance {
    if (scale - 1.0).abs() < 1e-12 {
        return t.clone();
    }
    let stamp = transform_instance(t, scale, 0.0);
    let mut min_r = i64::MAX;
    let mut min_c = i64::MAX;
    let mut max_r = i64::MIN;
    let mut max_c = i64::MIN;
    for &(dr, dc, _) in &stamp.pixels {
        min_r = min_r.min(dr);
        max_r = max_r.max(dr);
        min_c = min_c.min(dc);
        max_c = max_c.max(dc);
    }
    let pixels: Vec<(usize, usize, f32)> = stamp
        .pixels
        .iter()
        .map(|&(dr, dc, v)| ((dr - min_r) as usize, (dc - min_c) as usize, v))
        .collect();
    let n = pixels.len() as f64;
    let centroid = (
        pixels.iter().map(|p| p.0 as f64).sum::<f64>() / n,
        pixels.iter().map(|p| p.1 as f64).sum::<f64>() / n,
    );
    TumorInstance {
        bbox: ((max_r - min_r + 1) as usize, (max_c - min_c + 1) as usize),
        pixels,
        centroid,
        tumor_type: t.tumor_type,
        source_slice: t.source_slice,
        origin: t.origin,
    }
}
