//! Volume/mask data model shared by the whole pipeline.
//!
//! Volumes are 3D scalar grids stored row-major (x fastest, then y, then z
//! where z indexes sagittal slices) with physical voxel spacing in mm.
//! Values are immutable after construction; every mutating operation returns
//! a new value, so volumes can be shared freely across threads.

use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};

/// Tissue / structure label codes used in every mask.
pub mod label {
    pub const BACKGROUND: u8 = 0;
    pub const CSF: u8 = 1;
    pub const CORD: u8 = 2;
    pub const DURA: u8 = 3;
    pub const T11: u8 = 10;
    pub const T12: u8 = 11;
    pub const L1: u8 = 12;
    pub const L2: u8 = 13;
    pub const L3: u8 = 14;
    pub const L4: u8 = 15;
    pub const L5: u8 = 16;
    /// Vertebra of unknown level (input to the labeling heuristic).
    pub const VERTEBRA_GENERIC: u8 = 20;
    pub const TUMOR: u8 = 100;

    /// Named vertebra codes in cranio-caudal order.
    pub const VERTEBRAE: [u8; 7] = [T11, T12, L1, L2, L3, L4, L5];

    pub fn is_schema(code: u8) -> bool {
        matches!(code, BACKGROUND | CSF | CORD | DURA | VERTEBRA_GENERIC | TUMOR)
            || (T11..=L5).contains(&code)
    }

    /// True for the named vertebra codes 10..=16 and the generic code 20.
    pub fn is_vertebra(code: u8) -> bool {
        (T11..=L5).contains(&code) || code == VERTEBRA_GENERIC
    }

    pub fn vertebra_name(code: u8) -> Option<&'static str> {
        match code {
            T11 => Some("T11"),
            T12 => Some("T12"),
            L1 => Some("L1"),
            L2 => Some("L2"),
            L3 => Some("L3"),
            L4 => Some("L4"),
            L5 => Some("L5"),
            _ => None,
        }
    }
}

/// The three tumor categories the classifier distinguishes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TumorType {
    Intramedullary,
    IntraduralExtramedullary,
    ExtraDural,
}

impl TumorType {
    pub const ALL: [TumorType; 3] = [
        TumorType::Intramedullary,
        TumorType::IntraduralExtramedullary,
        TumorType::ExtraDural,
    ];

    /// Class index used by the classifier (argmax ties resolve to lower ids).
    pub fn class_index(self) -> usize {
        match self {
            TumorType::Intramedullary => 0,
            TumorType::IntraduralExtramedullary => 1,
            TumorType::ExtraDural => 2,
        }
    }

    pub fn from_class_index(idx: usize) -> Option<TumorType> {
        TumorType::ALL.get(idx).copied()
    }
}

impl std::str::FromStr for TumorType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "intramedullary" => Ok(TumorType::Intramedullary),
            "intradural" | "intradural-extramedullary" | "intraduralextramedullary" => {
                Ok(TumorType::IntraduralExtramedullary)
            }
            "extradural" | "extra-dural" => Ok(TumorType::ExtraDural),
            other => Err(validation!("unknown tumor type '{other}'")),
        }
    }
}

/// 3D scalar intensity grid with physical voxel spacing.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    width: usize,
    height: usize,
    depth: usize,
    spacing: [f64; 3],
    data: Vec<f32>,
}

fn check_geometry(width: usize, height: usize, depth: usize, spacing: [f64; 3]) -> Result<()> {
    if width == 0 || height == 0 || depth == 0 {
        return Err(validation!(
            "voxel counts must be positive, got {width}x{height}x{depth}"
        ));
    }
    if spacing.iter().any(|s| !s.is_finite() || *s <= 0.0) {
        return Err(validation!("spacing must be strictly positive and finite, got {spacing:?}"));
    }
    Ok(())
}

impl Volume {
    pub fn new(
        width: usize,
        height: usize,
        depth: usize,
        spacing: [f64; 3],
        data: Vec<f32>,
    ) -> Result<Self> {
        check_geometry(width, height, depth, spacing)?;
        if data.len() != width * height * depth {
            return Err(validation!(
                "data length {} does not match {width}x{height}x{depth} = {}",
                data.len(),
                width * height * depth
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(validation!("volume intensities must be finite"));
        }
        Ok(Volume { width, height, depth, spacing, data })
    }

    pub fn zeros(width: usize, height: usize, depth: usize, spacing: [f64; 3]) -> Result<Self> {
        check_geometry(width, height, depth, spacing)?;
        Ok(Volume { width, height, depth, spacing, data: vec![0.0; width * height * depth] })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.width * (y + self.height * z)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.data[self.index(x, y, z)]
    }

    pub fn same_geometry_as(&self, other: &MaskVolume) -> bool {
        self.width == other.width
            && self.height == other.height
            && self.depth == other.depth
            && self.spacing == other.spacing
    }

    /// Copy out the z-plane as a 2D slice.
    pub fn extract_slice(&self, z: usize) -> Result<Slice> {
        if z >= self.depth {
            return Err(validation!("slice index {z} out of range (depth {})", self.depth));
        }
        let plane = self.width * self.height;
        let data = self.data[z * plane..(z + 1) * plane].to_vec();
        Ok(Slice { width: self.width, height: self.height, data, source_index: z })
    }

    /// Return a copy of the volume with plane z replaced by `s`.
    pub fn insert_slice(&self, z: usize, s: &Slice) -> Result<Volume> {
        if z >= self.depth {
            return Err(validation!("slice index {z} out of range (depth {})", self.depth));
        }
        if s.width != self.width || s.height != self.height {
            return Err(validation!(
                "slice dims {}x{} do not match volume {}x{}",
                s.width,
                s.height,
                self.width,
                self.height
            ));
        }
        let mut out = self.clone();
        let plane = self.width * self.height;
        out.data[z * plane..(z + 1) * plane].copy_from_slice(&s.data);
        Ok(out)
    }

    /// Affine rescale so min maps to 0 and max to 1. A constant volume maps
    /// to all zeros so pipelines stay total.
    pub fn normalized(&self) -> Volume {
        let mut lo = f32::INFINITY;
        let mut hi = f32::NEG_INFINITY;
        for &v in &self.data {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        let mut out = self.clone();
        if hi > lo {
            let scale = 1.0 / (hi - lo);
            for v in &mut out.data {
                *v = (*v - lo) * scale;
            }
        } else {
            out.data.fill(0.0);
        }
        out
    }
}

/// 3D label grid sharing a Volume's geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskVolume {
    width: usize,
    height: usize,
    depth: usize,
    spacing: [f64; 3],
    labels: Vec<u8>,
}

impl MaskVolume {
    pub fn new(
        width: usize,
        height: usize,
        depth: usize,
        spacing: [f64; 3],
        labels: Vec<u8>,
    ) -> Result<Self> {
        check_geometry(width, height, depth, spacing)?;
        if labels.len() != width * height * depth {
            return Err(validation!(
                "label length {} does not match {width}x{height}x{depth}",
                labels.len()
            ));
        }
        if let Some(bad) = labels.iter().find(|l| !label::is_schema(**l)) {
            return Err(validation!("label value {bad} is not part of the label schema"));
        }
        Ok(MaskVolume { width, height, depth, spacing, labels })
    }

    pub fn zeros(width: usize, height: usize, depth: usize, spacing: [f64; 3]) -> Result<Self> {
        check_geometry(width, height, depth, spacing)?;
        Ok(MaskVolume { width, height, depth, spacing, labels: vec![0; width * height * depth] })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.width * (y + self.height * z)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> u8 {
        self.labels[self.index(x, y, z)]
    }

    pub fn set(&mut self, x: usize, y: usize, z: usize, value: u8) {
        debug_assert!(label::is_schema(value));
        let idx = self.index(x, y, z);
        self.labels[idx] = value;
    }

    pub fn same_geometry(&self, other: &MaskVolume) -> bool {
        self.width == other.width
            && self.height == other.height
            && self.depth == other.depth
            && self.spacing == other.spacing
    }

    pub fn extract_slice(&self, z: usize) -> Result<MaskSlice> {
        if z >= self.depth {
            return Err(validation!("slice index {z} out of range (depth {})", self.depth));
        }
        let plane = self.width * self.height;
        let labels = self.labels[z * plane..(z + 1) * plane].to_vec();
        Ok(MaskSlice { width: self.width, height: self.height, labels, source_index: z })
    }

    /// Count voxels carrying `value`.
    pub fn count(&self, value: u8) -> usize {
        self.labels.iter().filter(|l| **l == value).count()
    }
}

/// A single sagittal plane of a Volume.
#[derive(Debug, Clone, PartialEq)]
pub struct Slice {
    width: usize,
    height: usize,
    data: Vec<f32>,
    source_index: usize,
}

impl Slice {
    pub fn new(width: usize, height: usize, data: Vec<f32>, source_index: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(validation!("slice dims must be positive, got {width}x{height}"));
        }
        if data.len() != width * height {
            return Err(validation!(
                "slice data length {} does not match {width}x{height}",
                data.len()
            ));
        }
        Ok(Slice { width, height, data, source_index })
    }

    pub fn filled(width: usize, height: usize, value: f32, source_index: usize) -> Slice {
        Slice { width, height, data: vec![value; width * height], source_index }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn source_index(&self) -> usize {
        self.source_index
    }

    #[inline]
    pub fn index(&self, col: usize, row: usize) -> usize {
        col + self.width * row
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize) -> f32 {
        self.data[col + self.width * row]
    }

    pub fn set(&mut self, col: usize, row: usize, value: f32) {
        let idx = self.index(col, row);
        self.data[idx] = value;
    }

    /// Bilinear sample at fractional (col, row), clamped to the slice extent.
    pub fn sample_bilinear(&self, col: f64, row: f64) -> f32 {
        let c = col.clamp(0.0, (self.width - 1) as f64);
        let r = row.clamp(0.0, (self.height - 1) as f64);
        let c0 = c.floor() as usize;
        let r0 = r.floor() as usize;
        let c1 = (c0 + 1).min(self.width - 1);
        let r1 = (r0 + 1).min(self.height - 1);
        let fc = (c - c0 as f64) as f32;
        let fr = (r - r0 as f64) as f32;
        let top = self.get(c0, r0) * (1.0 - fc) + self.get(c1, r0) * fc;
        let bot = self.get(c0, r1) * (1.0 - fc) + self.get(c1, r1) * fc;
        top * (1.0 - fr) + bot * fr
    }
}

/// A single plane of a MaskVolume.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSlice {
    width: usize,
    height: usize,
    labels: Vec<u8>,
    source_index: usize,
}

impl MaskSlice {
    pub fn new(width: usize, height: usize, labels: Vec<u8>, source_index: usize) -> Result<Self> {
        if data_len_ok(width, height, labels.len()) {
            Ok(MaskSlice { width, height, labels, source_index })
        } else {
            Err(validation!("mask slice data length does not match {width}x{height}"))
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn source_index(&self) -> usize {
        self.source_index
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize) -> u8 {
        self.labels[col + self.width * row]
    }

    pub fn set(&mut self, col: usize, row: usize, value: u8) {
        let idx = col + self.width * row;
        self.labels[idx] = value;
    }

    /// Binary mask of pixels carrying `value`.
    pub fn binary(&self, value: u8) -> Mask2d {
        Mask2d {
            width: self.width,
            height: self.height,
            data: self.labels.iter().map(|l| *l == value).collect(),
        }
    }
}

fn data_len_ok(width: usize, height: usize, len: usize) -> bool {
    width > 0 && height > 0 && len == width * height
}

/// Plain 2D boolean mask (tumor footprints, inpainting holes, CSF bands).
#[derive(Debug, Clone, PartialEq)]
pub struct Mask2d {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl Mask2d {
    pub fn empty(width: usize, height: usize) -> Mask2d {
        Mask2d { width, height, data: vec![false; width * height] }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Mask2d {
        let mut data = Vec::with_capacity(width * height);
        for row in 0..height {
            for col in 0..width {
                data.push(f(col, row));
            }
        }
        Mask2d { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize) -> bool {
        self.data[col + self.width * row]
    }

    pub fn set(&mut self, col: usize, row: usize, value: bool) {
        let idx = col + self.width * row;
        self.data[idx] = value;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|b| **b).count()
    }

    pub fn iter_set(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.width;
        self.data
            .iter()
            .enumerate()
            .filter(|(_, b)| **b)
            .map(move |(i, _)| (i % w, i / w))
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|b| *b)
    }

    /// Dilate by `px` steps of Chebyshev distance (3x3 structuring element
    /// applied `px` times).
    pub fn dilated(&self, px: usize) -> Mask2d {
        let mut cur = self.clone();
        for _ in 0..px {
            let mut next = cur.clone();
            for row in 0..self.height {
                for col in 0..self.width {
                    if cur.get(col, row) {
                        continue;
                    }
                    let r0 = row.saturating_sub(1);
                    let r1 = (row + 1).min(self.height - 1);
                    let c0 = col.saturating_sub(1);
                    let c1 = (col + 1).min(self.width - 1);
                    'scan: for r in r0..=r1 {
                        for c in c0..=c1 {
                            if cur.get(c, r) {
                                next.set(col, row, true);
                                break 'scan;
                            }
                        }
                    }
                }
            }
            cur = next;
        }
        cur
    }

    /// True when every set pixel of `self` is also set in `other`.
    pub fn subset_of(&self, other: &Mask2d) -> bool {
        self.width == other.width
            && self.height == other.height
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| !*a || *b)
    }
}
