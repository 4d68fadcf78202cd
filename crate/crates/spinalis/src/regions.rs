//! Connected-component labeling and per-component shape statistics.

use crate::volume::{Mask2d, MaskVolume};

/// Statistics of one 2D connected component.
#[derive(Debug, Clone)]
pub struct Component2d {
    /// Value of the underlying grid inside this component.
    pub value: i64,
    pub size: usize,
    /// (col, row) bounding box, inclusive.
    pub min_col: usize,
    pub min_row: usize,
    pub max_col: usize,
    pub max_row: usize,
    /// (col, row) centroid.
    pub centroid: (f64, f64),
    /// Number of pixel edges bordering a different component or the frame.
    pub perimeter: usize,
    /// Second-moment ellipse eccentricity in [0, 1).
    pub eccentricity: f64,
}

impl Component2d {
    /// perimeter^2 / area; circles score lowest (~4*pi), irregular or thin
    /// shapes score high.
    pub fn compactness(&self) -> f64 {
        (self.perimeter as f64).powi(2) / self.size as f64
    }
}

/// Label every pixel of a discrete-valued grid with a component id.
///
/// Pixels with equal values are merged under 4-connectivity. Returns the
/// per-pixel component id (usize::MAX never appears) and per-component stats
/// indexed by id. Pass `skip` to leave a value unlabeled (id = usize::MAX).
pub fn components_2d(values: &[i64], width: usize, height: usize, skip: Option<i64>) -> (Vec<usize>, Vec<Component2d>) {
    const UNSET: usize = usize::MAX;
    let mut ids = vec![UNSET; values.len()];
    let mut comps: Vec<Component2d> = Vec::new();
    let mut stack = Vec::new();

    for start in 0..values.len() {
        if ids[start] != UNSET || skip == Some(values[start]) {
            continue;
        }
        let id = comps.len();
        let value = values[start];
        let mut size = 0usize;
        let mut sum_c = 0.0;
        let mut sum_r = 0.0;
        let (mut min_col, mut min_row, mut max_col, mut max_row) =
            (usize::MAX, usize::MAX, 0usize, 0usize);
        stack.push(start);
        ids[start] = id;
        while let Some(idx) = stack.pop() {
            let col = idx % width;
            let row = idx / width;
            size += 1;
            sum_c += col as f64;
            sum_r += row as f64;
            min_col = min_col.min(col);
            max_col = max_col.max(col);
            min_row = min_row.min(row);
            max_row = max_row.max(row);
            let mut visit = |nidx: usize| {
                if ids[nidx] == UNSET && values[nidx] == value {
                    ids[nidx] = id;
                    stack.push(nidx);
                }
            };
            if col > 0 {
                visit(idx - 1);
            }
            if col + 1 < width {
                visit(idx + 1);
            }
            if row > 0 {
                visit(idx - width);
            }
            if row + 1 < height {
                visit(idx + width);
            }
        }
        comps.push(Component2d {
            value,
            size,
            min_col,
            min_row,
            max_col,
            max_row,
            centroid: (sum_c / size as f64, sum_r / size as f64),
            perimeter: 0,
            eccentricity: 0.0,
        });
    }

    // perimeter: pixel edges facing a different component or the frame
    for row in 0..height {
        for col in 0..width {
            let idx = col + width * row;
            let id = ids[idx];
            if id == UNSET {
                continue;
            }
            let mut edges = 0;
            if col == 0 || ids[idx - 1] != id {
                edges += 1;
            }
            if col + 1 == width || ids[idx + 1] != id {
                edges += 1;
            }
            if row == 0 || ids[idx - width] != id {
                edges += 1;
            }
            if row + 1 == height || ids[idx + width] != id {
                edges += 1;
            }
            comps[id].perimeter += edges;
        }
    }

    // second central moments for eccentricity
    let mut mxx = vec![0.0f64; comps.len()];
    let mut myy = vec![0.0f64; comps.len()];
    let mut mxy = vec![0.0f64; comps.len()];
    for row in 0..height {
        for col in 0..width {
            let idx = col + width * row;
            let id = ids[idx];
            if id == UNSET {
                continue;
            }
            let dx = col as f64 - comps[id].centroid.0;
            let dy = row as f64 - comps[id].centroid.1;
            mxx[id] += dx * dx;
            myy[id] += dy * dy;
            mxy[id] += dx * dy;
        }
    }
    for (id, comp) in comps.iter_mut().enumerate() {
        let n = comp.size as f64;
        comp.eccentricity = ellipse_eccentricity(mxx[id] / n, myy[id] / n, mxy[id] / n);
    }

    (ids, comps)
}

/// Eccentricity of the ellipse with the given second central moments.
fn ellipse_eccentricity(mxx: f64, myy: f64, mxy: f64) -> f64 {
    let tr = mxx + myy;
    let det = mxx * myy - mxy * mxy;
    let disc = (tr * tr / 4.0 - det).max(0.0).sqrt();
    let l1 = tr / 2.0 + disc; // major
    let l2 = (tr / 2.0 - disc).max(0.0); // minor
    if l1 <= 0.0 {
        return 0.0;
    }
    (1.0 - l2 / l1).max(0.0).sqrt()
}

/// Connected components of the set pixels of a binary mask, 4-connectivity.
pub fn mask_components(mask: &Mask2d) -> (Vec<usize>, Vec<Component2d>) {
    let values: Vec<i64> = mask.data().iter().map(|b| i64::from(*b)).collect();
    let (mut ids, comps) = components_2d(&values, mask.width(), mask.height(), Some(0));
    let keep: Vec<usize> = (0..comps.len()).filter(|i| comps[*i].value == 1).collect();
    let remap: std::collections::HashMap<usize, usize> =
        keep.iter().enumerate().map(|(new, old)| (*old, new)).collect();
    for id in ids.iter_mut() {
        *id = remap.get(id).copied().unwrap_or(usize::MAX);
    }
    let comps = keep.into_iter().map(|i| comps[i].clone()).collect();
    (ids, comps)
}

/// Statistics of one 3D connected component.
#[derive(Debug, Clone)]
pub struct Component3d {
    pub size: usize,
    pub min: [usize; 3],
    pub max: [usize; 3],
    /// (x, y, z) centroid in voxel coordinates.
    pub centroid: [f64; 3],
    /// Flat voxel indices belonging to the component.
    pub voxels: Vec<usize>,
}

/// 26-connected components of the voxels selected by `pred`.
pub fn components_3d(mask: &MaskVolume, pred: impl Fn(u8) -> bool) -> Vec<Component3d> {
    let (w, h, d) = (mask.width(), mask.height(), mask.depth());
    let labels = mask.labels();
    let mut seen = vec![false; labels.len()];
    let mut comps = Vec::new();
    let mut stack = Vec::new();

    for start in 0..labels.len() {
        if seen[start] || !pred(labels[start]) {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let mut comp = Component3d {
            size: 0,
            min: [usize::MAX; 3],
            max: [0; 3],
            centroid: [0.0; 3],
            voxels: Vec::new(),
        };
        let mut sums = [0.0f64; 3];
        while let Some(idx) = stack.pop() {
            let x = idx % w;
            let y = (idx / w) % h;
            let z = idx / (w * h);
            comp.size += 1;
            comp.voxels.push(idx);
            for (axis, v) in [x, y, z].into_iter().enumerate() {
                comp.min[axis] = comp.min[axis].min(v);
                comp.max[axis] = comp.max[axis].max(v);
                sums[axis] += v as f64;
            }
            for dz in -1i64..=1 {
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        if dx == 0 && dy == 0 && dz == 0 {
                            continue;
                        }
                        let (nx, ny, nz) = (x as i64 + dx, y as i64 + dy, z as i64 + dz);
                        if nx < 0 || ny < 0 || nz < 0 {
                            continue;
                        }
                        let (nx, ny, nz) = (nx as usize, ny as usize, nz as usize);
                        if nx >= w || ny >= h || nz >= d {
                            continue;
                        }
                        let nidx = nx + w * (ny + h * nz);
                        if !seen[nidx] && pred(labels[nidx]) {
                            seen[nidx] = true;
                            stack.push(nidx);
                        }
                    }
                }
            }
        }
        for axis in 0..3 {
            comp.centroid[axis] = sums[axis] / comp.size as f64;
        }
        comp.voxels.sort_unstable();
        comps.push(comp);
    }
    comps
}
