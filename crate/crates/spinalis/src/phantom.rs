//! Seeded synthetic sagittal lumbar-spine volumes with injectable tumors.
//!
//! Axes: x runs anterior to posterior across the width, y cranial to caudal
//! down the height, z across sagittal slices. The vertebral column is a
//! stack of superellipse bodies along a sine-curved axis; posterior to it
//! sit an epidural gap, the dura, the CSF, and a cord that ends at the L1
//! level (below it the canal is pure CSF, so the CSF band is one connected
//! component on every slice).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};
use crate::volume::{label, MaskVolume, TumorType, Volume};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TissueIntensities {
    pub background: f32,
    pub vertebra: f32,
    pub csf: f32,
    pub cord: f32,
    pub dura: f32,
}

impl Default for TissueIntensities {
    fn default() -> Self {
        TissueIntensities { background: 0.05, vertebra: 0.35, csf: 0.85, cord: 0.55, dura: 0.45 }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PhantomConfig {
    pub width: usize,
    pub height: usize,
    pub depth: usize,
    /// In-plane voxel spacing, mm ("1 mm = 3 pixels" by default).
    pub in_plane_spacing_mm: f64,
    /// Sagittal slice spacing, mm (the acquisition gap).
    pub slice_spacing_mm: f64,
    /// Amplitude of the spine curve, px.
    pub curvature_px: f64,
    pub vertebra_count: usize,
    pub intensities: TissueIntensities,
    pub noise_sigma: f32,
    pub seed: u64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        PhantomConfig {
            width: 192,
            height: 256,
            depth: 24,
            in_plane_spacing_mm: 1.0 / 3.0,
            slice_spacing_mm: 3.0,
            curvature_px: 8.0,
            vertebra_count: 7,
            intensities: TissueIntensities::default(),
            noise_sigma: 0.03,
            seed: 0,
        }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width < 64 || self.height < 128 || self.depth < 8 {
            return Err(validation!(
                "phantom dims too small to fit structures: need at least 64x128x8, got {}x{}x{}",
                self.width,
                self.height,
                self.depth
            ));
        }
        if !(1..=7).contains(&self.vertebra_count) {
            return Err(validation!("vertebra_count must be in 1..=7"));
        }
        let t = &self.intensities;
        for v in [t.background, t.vertebra, t.csf, t.cord, t.dura] {
            if !(0.0..=1.0).contains(&v) {
                return Err(validation!("tissue intensities must lie in [0,1]"));
            }
        }
        if self.noise_sigma < 0.0 || !self.noise_sigma.is_finite() {
            return Err(validation!("noise sigma must be nonnegative"));
        }
        Ok(())
    }

    pub fn spacing(&self) -> [f64; 3] {
        [self.in_plane_spacing_mm, self.in_plane_spacing_mm, self.slice_spacing_mm]
    }
}

/// In-plane layout constants, scaled from the configured width.
struct Layout {
    column_x: f64,
    body_rx: f64,
    epidural_gap: f64,
    dura_w: f64,
    csf_w: f64,
    cord_w: f64,
}

impl Layout {
    fn of(cfg: &PhantomConfig) -> Layout {
        let w = cfg.width as f64;
        Layout {
            column_x: 0.36 * w,
            body_rx: 0.115 * w,
            epidural_gap: (0.012 * w).max(2.0),
            dura_w: (0.012 * w).max(2.0),
            csf_w: (0.032 * w).max(5.0),
            cord_w: (0.08 * w).max(12.0),
        }
    }
}

fn spine_center_x(cfg: &PhantomConfig, y: usize) -> f64 {
    let t = y as f64 / (cfg.height - 1) as f64;
    Layout::of(cfg).column_x + cfg.curvature_px * (std::f64::consts::PI * t).sin()
}

/// Vertical extent of each vertebral body: (row span of the column, per-body
/// centers, body half-height).
fn vertebra_rows(cfg: &PhantomConfig) -> (f64, f64, Vec<f64>, f64) {
    let h = cfg.height as f64;
    let top = 0.06 * h;
    let bottom = 0.94 * h;
    let n = cfg.vertebra_count;
    let cell = (bottom - top) / n as f64;
    let centers = (0..n).map(|i| top + cell * (i as f64 + 0.5)).collect();
    (top, bottom, centers, 0.39 * cell)
}

/// Vertebra codes assigned to the generated bodies: the most caudal body is
/// always L5 and codes count upward from there.
pub fn generated_codes(count: usize) -> Vec<u8> {
    label::VERTEBRAE[7 - count..].to_vec()
}

/// Build one label plane; the phantom replicates it across z.
fn label_plane(cfg: &PhantomConfig) -> Vec<u8> {
    let (w, h) = (cfg.width, cfg.height);
    let mut plane = vec![label::BACKGROUND; w * h];
    let layout = Layout::of(cfg);
    let (col_top, col_bottom, centers, body_ry) = vertebra_rows(cfg);
    let codes = generated_codes(cfg.vertebra_count);

    // canal rows extend slightly past the column
    let y0 = (col_top - 4.0).max(1.0);
    let y1 = (col_bottom + 4.0).min(h as f64 - 2.0);
    // the cord ends at the L1 body center when present, else mid-column
    let conus_y = codes
        .iter()
        .position(|c| *c == label::L1)
        .map(|i| centers[i])
        .unwrap_or_else(|| 0.5 * (col_top + col_bottom));

    for row in 0..h {
        let y = row as f64;
        let cx = spine_center_x(cfg, row);

        // vertebral bodies: superellipse cross-sections
        for (i, cy) in centers.iter().enumerate() {
            let dy = (y - cy) / body_ry;
            if dy.abs() > 1.0 {
                continue;
            }
            let reach = layout.body_rx * (1.0 - dy.powi(4)).max(0.0).powf(0.25);
            let x_lo = (cx - reach).ceil().max(0.0) as usize;
            let x_hi = (cx + reach).floor().min(w as f64 - 1.0) as usize;
            for col in x_lo..=x_hi {
                plane[col + w * row] = codes[i];
            }
        }

        // canal structures posterior to the column edge
        if y < y0 || y > y1 {
            continue;
        }
        let posterior = cx + layout.body_rx;
        let dura_a0 = posterior + layout.epidural_gap;
        let dura_a1 = dura_a0 + layout.dura_w;
        let sac_a = dura_a1; // anterior sac wall
        let sac_b = sac_a + 2.0 * layout.csf_w + layout.cord_w; // posterior sac wall
        let dura_b1 = sac_b + layout.dura_w;

        let cap = y < y0 + 2.0 || y > y1 - 2.0;
        let cord_rows = y >= y0 + 6.0 && y <= conus_y;
        let cord_a = sac_a + layout.csf_w;
        let cord_b = cord_a + layout.cord_w;

        let x_lo = dura_a0.ceil().max(0.0) as usize;
        let x_hi = dura_b1.floor().min(w as f64 - 1.0) as usize;
        for col in x_lo..=x_hi {
            let x = col as f64;
            let idx = col + w * row;
            if plane[idx] != label::BACKGROUND {
                continue; // never overwrite a vertebra
            }
            let value = if x < dura_a1 || x >= sac_b {
                label::DURA
            } else if cap {
                label::DURA
            } else if cord_rows && x >= cord_a && x < cord_b {
                label::CORD
            } else {
                label::CSF
            };
            plane[idx] = value;
        }
    }
    plane
}

/// Generate a seeded phantom volume and its expert-style mask.
pub fn generate_phantom(cfg: &PhantomConfig) -> Result<(Volume, MaskVolume)> {
    cfg.validate()?;
    let (w, h, d) = (cfg.width, cfg.height, cfg.depth);
    let plane = label_plane(cfg);
    let mut labels = Vec::with_capacity(w * h * d);
    for _ in 0..d {
        labels.extend_from_slice(&plane);
    }
    let mask = MaskVolume::new(w, h, d, cfg.spacing(), labels)?;

    let t = &cfg.intensities;
    let mean_of = |code: u8| -> f32 {
        match code {
            label::CSF => t.csf,
            label::CORD => t.cord,
            label::DURA => t.dura,
            c if label::is_vertebra(c) => t.vertebra,
            _ => t.background,
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let normal = Normal::new(0.0f32, 1.0f32).map_err(|e| validation!("noise setup failed: {e}"))?;
    let data: Vec<f32> = mask
        .labels()
        .iter()
        .map(|code| (mean_of(*code) + cfg.noise_sigma * normal.sample(&mut rng)).clamp(0.0, 1.0))
        .collect();
    let volume = Volume::new(w, h, d, cfg.spacing(), data)?;
    Ok((volume, mask))
}

/// Placement request for one synthetic tumor.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TumorSpec {
    pub tumor_type: TumorType,
    /// Target vertebra code (10..=16).
    pub level: u8,
    pub radius_mm: f64,
    /// Ellipsoid semi-axis multipliers on (x, y, z).
    pub axis_ratios: [f64; 3],
    pub intensity_mean: f32,
    pub intensity_sigma: f32,
    pub seed: u64,
}

impl TumorSpec {
    /// Sensible per-type defaults: intramedullary tumors are fusiform along
    /// the cord, the other two are rounder.
    pub fn for_type(tumor_type: TumorType, level: u8, seed: u64) -> TumorSpec {
        let (radius_mm, axis_ratios) = match tumor_type {
            TumorType::Intramedullary => (3.5, [0.3, 1.2, 1.1]),
            TumorType::IntraduralExtramedullary => (4.0, [1.0, 1.4, 1.0]),
            TumorType::ExtraDural => (4.0, [0.9, 1.5, 1.0]),
        };
        TumorSpec {
            tumor_type,
            level,
            radius_mm,
            axis_ratios,
            intensity_mean: 0.95,
            intensity_sigma: 0.03,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(label::T11..=label::L5).contains(&self.level) {
            return Err(validation!("tumor level must be a vertebra code 10..=16"));
        }
        if !(self.radius_mm > 0.0) {
            return Err(validation!("tumor radius must be positive"));
        }
        if self.axis_ratios.iter().any(|r| !(*r > 0.0)) {
            return Err(validation!("axis ratios must be positive"));
        }
        if !(0.0..=1.0).contains(&self.intensity_mean) {
            return Err(validation!("tumor intensity must lie in [0,1]"));
        }
        Ok(())
    }
}

/// Everything `inject_tumor` produces besides the updated phantom.
#[derive(Debug, Clone)]
pub struct InjectionOutcome {
    pub truth: MaskVolume,
    pub center: [f64; 3],
    pub truth_voxels: usize,
}

fn level_center_row(mask: &MaskVolume, level: u8) -> Result<f64> {
    let mut sum = 0.0f64;
    let mut n = 0usize;
    for (idx, code) in mask.labels().iter().enumerate() {
        if *code == level {
            sum += ((idx / mask.width()) % mask.height()) as f64;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::CannotFit(format!("level {level} not present in mask")));
    }
    Ok(sum / n as f64)
}

/// Scan one mask row on the mid slice for the canal landmarks used to place
/// tumor centers.
struct RowScan {
    cord_range: Option<(usize, usize)>,
    csf_cols: Vec<usize>,
    dura_min: Option<usize>,
}

fn scan_row(mask: &MaskVolume, row: usize, z: usize) -> RowScan {
    let mut scan = RowScan { cord_range: None, csf_cols: Vec::new(), dura_min: None };
    for col in 0..mask.width() {
        match mask.get(col, row, z) {
            label::CORD => {
                scan.cord_range = Some(match scan.cord_range {
                    None => (col, col),
                    Some((lo, _)) => (lo, col),
                });
            }
            label::CSF => scan.csf_cols.push(col),
            label::DURA => {
                if scan.dura_min.is_none() {
                    scan.dura_min = Some(col);
                }
            }
            _ => {}
        }
    }
    scan
}

/// Inject an ellipsoidal tumor into a phantom according to placement rules
/// for its type. Returns the modified volume, the mask with the tumor merged
/// as label 100, and the separate truth mask.
pub fn inject_tumor(
    volume: &Volume,
    mask: &MaskVolume,
    spec: &TumorSpec,
) -> Result<(Volume, MaskVolume, InjectionOutcome)> {
    spec.validate()?;
    if !volume.same_geometry_as(mask) {
        return Err(validation!("volume and mask geometries differ"));
    }
    let (w, h, d) = (mask.width(), mask.height(), mask.depth());
    let [sx, sy, sz] = mask.spacing();
    let level_row = level_center_row(mask, spec.level)?;
    let row = level_row.round() as usize;
    let z_mid = d / 2;
    let scan = scan_row(mask, row, z_mid);

    let center: [f64; 3] = match spec.tumor_type {
        TumorType::Intramedullary => {
            let (lo, hi) = scan.cord_range.ok_or_else(|| {
                Error::CannotFit(format!("no cord at level {} (the cord ends at L1)", spec.level))
            })?;
            [(lo + hi) as f64 / 2.0, level_row, z_mid as f64]
        }
        TumorType::IntraduralExtramedullary => {
            if scan.csf_cols.is_empty() {
                return Err(Error::CannotFit("no CSF at the requested level".into()));
            }
            // anterior CSF band (between dura and cord) so the tumor stays
            // within vertebra adjacency range; below the conus the whole
            // canal is CSF
            let cols: Vec<usize> = match scan.cord_range {
                Some((cord_lo, _)) => {
                    scan.csf_cols.iter().copied().filter(|c| *c < cord_lo).collect()
                }
                None => scan.csf_cols.clone(),
            };
            let cols = if cols.is_empty() { scan.csf_cols.clone() } else { cols };
            let mid = cols[cols.len() / 2];
            [mid as f64, level_row, z_mid as f64]
        }
        TumorType::ExtraDural => {
            let dura_min = scan
                .dura_min
                .ok_or_else(|| Error::CannotFit("no dura at the requested level".into()))?;
            // epidural gap sits just anterior to the dura
            [dura_min as f64 - 1.5, level_row, z_mid as f64]
        }
    };

    let rx = spec.radius_mm * spec.axis_ratios[0] / sx;
    let ry = spec.radius_mm * spec.axis_ratios[1] / sy;
    let rz = spec.radius_mm * spec.axis_ratios[2] / sz;

    let x_lo = ((center[0] - rx).floor().max(0.0)) as usize;
    let x_hi = ((center[0] + rx).ceil().min(w as f64 - 1.0)) as usize;
    let y_lo = ((center[1] - ry).floor().max(0.0)) as usize;
    let y_hi = ((center[1] + ry).ceil().min(h as f64 - 1.0)) as usize;
    let z_lo = ((center[2] - rz).floor().max(0.0)) as usize;
    let z_hi = ((center[2] + rz).ceil().min(d as f64 - 1.0)) as usize;

    let mut truth_voxels = Vec::new();
    for z in z_lo..=z_hi {
        for y in y_lo..=y_hi {
            for x in x_lo..=x_hi {
                let nx = (x as f64 - center[0]) / rx;
                let ny = (y as f64 - center[1]) / ry;
                let nz = (z as f64 - center[2]) / rz;
                if nx * nx + ny * ny + nz * nz > 1.0 {
                    continue;
                }
                let code = mask.get(x, y, z);
                let keep = match spec.tumor_type {
                    TumorType::Intramedullary => {
                        if code != label::CORD {
                            return Err(Error::CannotFit(format!(
                                "intramedullary ellipsoid leaves the cord at ({x},{y},{z}); \
                                 radius too large for the cord"
                            )));
                        }
                        true
                    }
                    TumorType::IntraduralExtramedullary => code == label::CSF,
                    TumorType::ExtraDural => {
                        !matches!(code, label::DURA | label::CSF | label::CORD)
                    }
                };
                if keep {
                    truth_voxels.push(mask.index(x, y, z));
                }
            }
        }
    }

    const MIN_TUMOR_VOXELS: usize = 30;
    if truth_voxels.len() < MIN_TUMOR_VOXELS {
        return Err(Error::CannotFit(format!(
            "only {} voxels available in the target compartment",
            truth_voxels.len()
        )));
    }

    let mut out_data = volume.data().to_vec();
    let mut out_mask = mask.clone();
    let mut truth = MaskVolume::zeros(w, h, d, mask.spacing())?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let normal =
        Normal::new(0.0f32, 1.0f32).map_err(|e| validation!("noise setup failed: {e}"))?;
    for &idx in &truth_voxels {
        out_data[idx] =
            (spec.intensity_mean + spec.intensity_sigma * normal.sample(&mut rng)).clamp(0.0, 1.0);
        let x = idx % w;
        let y = (idx / w) % h;
        let z = idx / (w * h);
        out_mask.set(x, y, z, label::TUMOR);
        truth.set(x, y, z, label::TUMOR);
    }
    let out_volume = Volume::new(w, h, d, volume.spacing(), out_data)?;

    Ok((
        out_volume,
        out_mask,
        InjectionOutcome { truth, center, truth_voxels: truth_voxels.len() },
    ))
}
