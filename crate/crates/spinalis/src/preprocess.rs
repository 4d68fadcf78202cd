//! Slice-gap reconstruction, hole inpainting, and directional denoising.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};
use crate::volume::{Mask2d, Slice, Volume};

/// Settings for bridging the sagittal acquisition gap.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct InterpConfig {
    /// Physical gap between acquired slices, mm (3-5 in practice).
    pub gap_mm: f64,
    /// Desired output z spacing, mm.
    pub target_spacing_mm: f64,
    /// Cubic convolution kernel parameter.
    pub kernel_a: f64,
}

impl Default for InterpConfig {
    fn default() -> Self {
        InterpConfig { gap_mm: 3.0, target_spacing_mm: 1.0, kernel_a: -0.5 }
    }
}

impl InterpConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.gap_mm.is_finite() || self.gap_mm <= 0.0 {
            return Err(validation!("gap_mm must be positive"));
        }
        if !self.target_spacing_mm.is_finite() || self.target_spacing_mm <= 0.0 {
            return Err(validation!("target_spacing_mm must be positive"));
        }
        if self.target_spacing_mm > self.gap_mm {
            return Err(validation!("target_spacing_mm must not exceed gap_mm"));
        }
        Ok(())
    }

    /// Number of output planes per acquired gap.
    pub fn upsampling(&self) -> usize {
        (self.gap_mm / self.target_spacing_mm).round().max(1.0) as usize
    }
}

/// Keys cubic convolution kernel with parameter `a`.
fn cubic_kernel(s: f64, a: f64) -> f64 {
    let s = s.abs();
    if s < 1.0 {
        (a + 2.0) * s * s * s - (a + 3.0) * s * s + 1.0
    } else if s < 2.0 {
        a * (s * s * s - 5.0 * s * s + 8.0 * s - 4.0)
    } else {
        0.0
    }
}

/// Sample a 1-D signal at fractional position `t` by cubic convolution.
/// Out-of-range supports are linearly extrapolated so degree-1 fields are
/// reproduced exactly up to the borders.
fn cubic_sample(signal: &[f32], t: f64, a: f64) -> f32 {
    let n = signal.len() as i64;
    let base = t.floor() as i64;
    let frac = t - base as f64;
    let mut acc = 0.0f64;
    for i in -1..=2 {
        let idx = base + i;
        let v = if idx < 0 {
            2.0 * signal[0] as f64 - signal[(-idx).min(n - 1) as usize] as f64
        } else if idx >= n {
            let over = (idx - (n - 1)).min(n - 1);
            2.0 * signal[(n - 1) as usize] as f64 - signal[(n - 1 - over) as usize] as f64
        } else {
            signal[idx as usize] as f64
        };
        acc += v * cubic_kernel(frac - i as f64, a);
    }
    acc as f32
}

/// Insert interpolated planes between acquired sagittal slices.
///
/// Output depth is `upsampling * (depth - 1) + 1`; acquired planes are
/// copied through unchanged and intermediate planes come from 1-D cubic
/// convolution along z.
pub fn reconstruct_slices(v: &Volume, cfg: &InterpConfig) -> Result<Volume> {
    cfg.validate()?;
    if v.depth() < 4 {
        return Err(validation!("reconstruction needs depth >= 4, got {}", v.depth()));
    }
    let r = cfg.upsampling();
    let (w, h, d) = (v.width(), v.height(), v.depth());
    let out_depth = r * (d - 1) + 1;
    let mut out = vec![0.0f32; w * h * out_depth];
    let plane = w * h;

    let mut column = vec![0.0f32; d];
    for y in 0..h {
        for x in 0..w {
            for z in 0..d {
                column[z] = v.get(x, y, z);
            }
            for j in 0..out_depth {
                let value = if j % r == 0 {
                    column[j / r]
                } else {
                    cubic_sample(&column, j as f64 / r as f64, cfg.kernel_a)
                };
                out[x + w * y + plane * j] = value;
            }
        }
    }

    let [sx, sy, _] = v.spacing();
    Volume::new(w, h, out_depth, [sx, sy, cfg.gap_mm / r as f64], out)
}

/// Fill a hole by separable cubic interpolation: a horizontal scanline pass
/// and a vertical one, averaged. Known pixels are untouched.
pub fn bicubic_inpaint(s: &Slice, hole: &Mask2d) -> Result<Slice> {
    if hole.width() != s.width() || hole.height() != s.height() {
        return Err(validation!("hole mask dims do not match slice"));
    }
    if hole.is_empty() {
        return Ok(s.clone());
    }
    let (w, h) = (s.width(), s.height());
    if hole.count() == w * h {
        return Err(validation!("hole covers the entire slice"));
    }
    for (col, row) in hole.iter_set() {
        if col < 2 || row < 2 || col + 2 >= w || row + 2 >= h {
            return Err(validation!(
                "hole touches the border margin at ({col},{row}); 2 known pixels required on every side"
            ));
        }
    }

    let horizontal = fill_pass(s, hole, true)?;
    let vertical = fill_pass(s, hole, false)?;
    let mut out = s.clone();
    for (col, row) in hole.iter_set() {
        let idx = out.index(col, row);
        out.data_mut()[idx] = 0.5 * (horizontal[idx] + vertical[idx]);
    }
    Ok(out)
}

/// One directional fill pass. Runs of hole pixels along each scanline are
/// interpolated by the cubic through the two nearest known samples on each
/// side.
fn fill_pass(s: &Slice, hole: &Mask2d, horizontal: bool) -> Result<Vec<f32>> {
    let (w, h) = (s.width(), s.height());
    let mut out: Vec<f32> = s.data().to_vec();
    let (lines, len) = if horizontal { (h, w) } else { (w, h) };
    for line in 0..lines {
        let at = |i: usize| if horizontal { (i, line) } else { (line, i) };
        let mut i = 0;
        while i < len {
            let (c, r) = at(i);
            if !hole.get(c, r) {
                i += 1;
                continue;
            }
            let start = i;
            while i < len && {
                let (c, r) = at(i);
                hole.get(c, r)
            } {
                i += 1;
            }
            let end = i; // run = [start, end)
            let mut known = Vec::with_capacity(4);
            let mut cursor = start;
            while cursor > 0 && known.len() < 2 {
                cursor -= 1;
                let (c, r) = at(cursor);
                if !hole.get(c, r) {
                    known.push((cursor as f64, s.get(c, r) as f64));
                }
            }
            let left_n = known.len();
            let mut cursor = end;
            while cursor < len && known.len() < left_n + 2 {
                let (c, r) = at(cursor);
                if !hole.get(c, r) {
                    known.push((cursor as f64, s.get(c, r) as f64));
                }
                cursor += 1;
            }
            if left_n == 0 || known.len() == left_n {
                return Err(validation!("hole run lacks known samples on one side"));
            }
            for j in start..end {
                let (c, r) = at(j);
                out[c + w * r] = lagrange(&known, j as f64) as f32;
            }
        }
    }
    Ok(out)
}

/// Lagrange interpolation through up to four (x, y) samples.
fn lagrange(points: &[(f64, f64)], x: f64) -> f64 {
    let mut acc = 0.0;
    for (i, (xi, yi)) in points.iter().enumerate() {
        let mut weight = 1.0;
        for (j, (xj, _)) in points.iter().enumerate() {
            if i != j {
                weight *= (x - xj) / (xi - xj);
            }
        }
        acc += yi * weight;
    }
    acc
}

/// Settings for the FFT directional-band denoiser.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DenoiseConfig {
    /// Number of radial scales above the DC band.
    pub scales: usize,
    /// Orientation wedges per scale (over 180 degrees).
    pub directions_per_scale: usize,
    /// Hard threshold on band coefficient magnitude.
    pub threshold: f32,
}

impl Default for DenoiseConfig {
    fn default() -> Self {
        DenoiseConfig { scales: 2, directions_per_scale: 8, threshold: 0.0 }
    }
}

impl DenoiseConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scales < 1 {
            return Err(validation!("scales must be >= 1"));
        }
        if self.directions_per_scale < 4 {
            return Err(validation!("directions_per_scale must be >= 4"));
        }
        if !self.threshold.is_finite() || self.threshold < 0.0 {
            return Err(validation!("threshold must be nonnegative"));
        }
        Ok(())
    }
}

struct Fft2d {
    width: usize,
    height: usize,
    row: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl Fft2d {
    fn new(width: usize, height: usize) -> Fft2d {
        let mut planner = FftPlanner::new();
        Fft2d {
            width,
            height,
            row: planner.plan_fft_forward(width),
            row_inv: planner.plan_fft_inverse(width),
            col: planner.plan_fft_forward(height),
            col_inv: planner.plan_fft_inverse(height),
        }
    }

    fn forward(&self, buf: &mut [Complex<f64>]) {
        for r in 0..self.height {
            self.row.process(&mut buf[r * self.width..(r + 1) * self.width]);
        }
        let mut column = vec![Complex::default(); self.height];
        for c in 0..self.width {
            for r in 0..self.height {
                column[r] = buf[c + r * self.width];
            }
            self.col.process(&mut column);
            for r in 0..self.height {
                buf[c + r * self.width] = column[r];
            }
        }
    }

    fn inverse(&self, buf: &mut [Complex<f64>]) {
        for r in 0..self.height {
            self.row_inv.process(&mut buf[r * self.width..(r + 1) * self.width]);
        }
        let mut column = vec![Complex::default(); self.height];
        let norm = 1.0 / (self.width * self.height) as f64;
        for c in 0..self.width {
            for r in 0..self.height {
                column[r] = buf[c + r * self.width];
            }
            self.col_inv.process(&mut column);
            for r in 0..self.height {
                buf[c + r * self.width] = column[r] * norm;
            }
        }
    }
}

/// Smooth step: 0 below 0, 1 above 1, raised cosine between.
fn smooth_step(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else if x >= 1.0 {
        1.0
    } else {
        0.5 - 0.5 * (std::f64::consts::PI * x).cos()
    }
}

/// Frequency-domain window bank. Windows are the square roots of a smooth
/// partition of unity (radial scales x orientation wedges plus a DC bump),
/// so analysis/synthesis with the same windows reconstructs perfectly and
/// never amplifies energy.
fn build_windows(w: usize, h: usize, scales: usize, directions: usize) -> Vec<Vec<f64>> {
    let n = w * h;
    let band_count = 1 + scales * directions;
    let mut windows = vec![vec![0.0f64; n]; band_count];

    // radial boundaries: dyadic cuts of the Nyquist radius
    let rho_max = 0.5_f64 * 2.0_f64.sqrt();
    let mut cuts = Vec::with_capacity(scales);
    for s in 0..scales {
        cuts.push(rho_max / 2.0f64.powi((scales - s) as i32));
    }

    for row in 0..h {
        for col in 0..w {
            // signed frequencies in cycles per sample
            let fx = if col <= w / 2 { col as f64 } else { col as f64 - w as f64 } / w as f64;
            let fy = if row <= h / 2 { row as f64 } else { row as f64 - h as f64 } / h as f64;
            let rho = (fx * fx + fy * fy).sqrt();

            // telescoping radial steps: S_0 = 1 >= S_1 >= ... >= S_scales = 0
            // beyond the last cut; band_s = S_s - S_{s+1}
            let mut steps = Vec::with_capacity(scales + 2);
            steps.push(1.0);
            for cut in &cuts {
                let half = cut * 0.5;
                steps.push(smooth_step((rho - (cut - half)) / half));
            }
            steps.push(0.0);

            let dc = steps[0] - steps[1];
            let idx = col + w * row;
            windows[0][idx] = dc.max(0.0).sqrt();

            if rho == 0.0 {
                continue;
            }
            // orientation over 180 degrees so antipodal bins share a wedge
            // and band coefficients stay real for real input
            let theta = fy.atan2(fx).rem_euclid(std::f64::consts::PI);
            let u = theta / std::f64::consts::PI * directions as f64;
            for s in 0..scales {
                let radial = (steps[s + 1] - steps[s + 2]).max(0.0);
                if radial == 0.0 {
                    continue;
                }
                for d in 0..directions {
                    // periodic Hann bump of width 2, hop 1: sums to 1
                    let mut v = u - d as f64;
                    v -= (v / directions as f64).round() * directions as f64;
                    if v.abs() >= 1.0 {
                        continue;
                    }
                    let ang = (std::f64::consts::FRAC_PI_2 * v).cos().powi(2);
                    windows[1 + s * directions + d][idx] = (radial * ang).sqrt();
                }
            }
        }
    }
    windows
}

/// Denoise a slice by hard-thresholding directional band coefficients.
///
/// The slice is decomposed into a DC band plus `scales x directions` smooth
/// frequency wedges; spatial coefficients of every non-DC band below the
/// threshold are zeroed and the bands are resynthesized. Threshold 0 is the
/// identity and output energy never exceeds input energy.
pub fn denoise(s: &Slice, cfg: &DenoiseConfig) -> Result<Slice> {
    cfg.validate()?;
    let (w, h) = (s.width(), s.height());
    if w < 16 || h < 16 {
        return Err(Error::Validation(format!("denoise needs at least 16x16, got {w}x{h}")));
    }
    let fft = Fft2d::new(w, h);
    let mut spectrum: Vec<Complex<f64>> =
        s.data().iter().map(|v| Complex::new(*v as f64, 0.0)).collect();
    fft.forward(&mut spectrum);

    let windows = build_windows(w, h, cfg.scales, cfg.directions_per_scale);
    let mut acc = vec![Complex::new(0.0, 0.0); w * h];
    let threshold = cfg.threshold as f64;

    for (band, window) in windows.iter().enumerate() {
        let mut coeff: Vec<Complex<f64>> =
            spectrum.iter().zip(window.iter()).map(|(c, w)| c * *w).collect();
        fft.inverse(&mut coeff);
        if band > 0 && threshold > 0.0 {
            for c in coeff.iter_mut() {
                if c.norm() < threshold {
                    *c = Complex::new(0.0, 0.0);
                }
            }
        }
        let mut back = coeff;
        fft.forward(&mut back);
        for (a, (b, w)) in acc.iter_mut().zip(back.iter().zip(window.iter())) {
            *a += b * *w;
        }
    }

    fft.inverse(&mut acc);
    let data: Vec<f32> = acc.iter().map(|c| c.re as f32).collect();
    Slice::new(w, h, data, s.source_index())
}
