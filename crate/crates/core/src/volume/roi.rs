//! Lung mask by thresholding and connected components, and ROI cropping
//! around the mask with a proportional margin.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::Volume;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RoiError {
    #[error("empty lung mask: no interior low-density component")]
    EmptyMask,
    #[error("margin fraction {0} outside [0, 0.5]")]
    InvalidMargin(f64),
    #[error("mask dims {mask:?} do not match volume dims {volume:?}")]
    DimMismatch { mask: [usize; 3], volume: [usize; 3] },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LungMaskParams {
    /// Voxels strictly below this HU value are candidate lung/air.
    pub hu_threshold: f32,
    /// Ball radius in voxels; 0 disables dilation.
    pub dilation_radius: usize,
    /// A second component is kept only if it has at least this fraction of
    /// the largest component's voxels.
    pub second_component_ratio: f64,
    /// Components smaller than this fraction of the volume are ignored.
    pub min_component_fraction: f64,
}

impl Default for LungMaskParams {
    fn default() -> Self {
        Self {
            hu_threshold: -600.0,
            dilation_radius: 2,
            second_component_ratio: 0.1,
            min_component_fraction: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LungMask {
    pub dims: [usize; 3],
    pub occupancy: Vec<bool>,
    pub component_count: usize,
    /// Voxel counts of the kept components before dilation, largest first.
    pub component_sizes: Vec<usize>,
}

impl LungMask {
    pub fn count(&self) -> usize {
        self.occupancy.iter().filter(|v| **v).count()
    }

    pub fn contains(&self, i: usize, j: usize, k: usize) -> bool {
        self.occupancy[i + self.dims[0] * (j + self.dims[1] * k)]
    }

    /// Inclusive voxel bounds of the mask, or `None` when empty.
    pub fn bounding_box(&self) -> Option<([usize; 3], [usize; 3])> {
        let [nx, ny, _] = self.dims;
        let mut lo = [usize::MAX; 3];
        let mut hi = [0usize; 3];
        let mut any = false;
        for (idx, _) in self.occupancy.iter().enumerate().filter(|(_, v)| **v) {
            let p = [idx % nx, (idx / nx) % ny, idx / (nx * ny)];
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
            any = true;
        }
        any.then_some((lo, hi))
    }
}

/// 6-connected component labels over `foreground`; 0 is background.
/// Returns the labels and each component's voxel count (index = label - 1).
pub fn label_components(dims: [usize; 3], foreground: &[bool]) -> (Vec<u32>, Vec<usize>) {
    let [nx, ny, nz] = dims;
    let mut labels = vec![0u32; foreground.len()];
    let mut sizes = Vec::new();
    let mut stack = Vec::new();
    for seed in 0..foreground.len() {
        if !foreground[seed] || labels[seed] != 0 {
            continue;
        }
        let label = sizes.len() as u32 + 1;
        labels[seed] = label;
        stack.push(seed);
        let mut size = 0;
        while let Some(idx) = stack.pop() {
            size += 1;
            let (i, j, k) = (idx % nx, (idx / nx) % ny, idx / (nx * ny));
            let mut visit = |n: usize| {
                if foreground[n] && labels[n] == 0 {
                    labels[n] = label;
                    stack.push(n);
                }
            };
            if i > 0 {
                visit(idx - 1);
            }
            if i + 1 < nx {
                visit(idx + 1);
            }
            if j > 0 {
                visit(idx - nx);
            }
            if j + 1 < ny {
                visit(idx + nx);
            }
            if k > 0 {
                visit(idx - nx * ny);
            }
            if k + 1 < nz {
                visit(idx + nx * ny);
            }
        }
        sizes.push(size);
    }
    (labels, sizes)
}

/// Binary dilation with a ball of `radius` voxels.
pub fn dilate(dims: [usize; 3], mask: &[bool], radius: usize) -> Vec<bool> {
    if radius == 0 {
        return mask.to_vec();
    }
    let [nx, ny, nz] = dims;
    let r = radius as isize;
    let mut offsets = Vec::new();
    for dz in -r..=r {
        for dy in -r..=r {
            for dx in -r..=r {
                if dx * dx + dy * dy + dz * dz <= r * r {
                    offsets.push((dx, dy, dz));
                }
            }
        }
    }
    let mut out = mask.to_vec();
    let inside = |i: usize, j: usize, k: usize| mask[i + nx * (j + ny * k)];
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                if !inside(i, j, k) {
                    continue;
                }
                // Only surface voxels can grow the mask.
                let interior = i > 0
                    && i + 1 < nx
                    && j > 0
                    && j + 1 < ny
                    && k > 0
                    && k + 1 < nz
                    && inside(i - 1, j, k)
                    && inside(i + 1, j, k)
                    && inside(i, j - 1, k)
                    && inside(i, j + 1, k)
                    && inside(i, j, k - 1)
                    && inside(i, j, k + 1);
                if interior {
                    continue;
                }
                for &(dx, dy, dz) in &offsets {
                    let (x, y, z) = (i as isize + dx, j as isize + dy, k as isize + dz);
                    if x < 0 || y < 0 || z < 0 || x >= nx as isize || y >= ny as isize || z >= nz as isize {
                        continue;
                    }
                    out[x as usize + nx * (y as usize + ny * z as usize)] = true;
                }
            }
        }
    }
    out
}

/// Threshold, drop components touching the volume border (outside air),
/// keep the largest one or two remaining components, then dilate.
pub fn lung_mask(volume: &Volume, params: &LungMaskParams) -> Result<LungMask, RoiError> {
    let dims = volume.dims;
    let [nx, ny, nz] = dims;
    let foreground: Vec<bool> = volume.voxels.iter().map(|v| *v < params.hu_threshold).collect();
    let (labels, sizes) = label_components(dims, &foreground);

    let mut touches_border = vec![false; sizes.len()];
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let on_border = i == 0 || j == 0 || k == 0 || i + 1 == nx || j + 1 == ny || k + 1 == nz;
                if !on_border {
                    continue;
                }
                let l = labels[i + nx * (j + ny * k)];
                if l > 0 {
                    touches_border[l as usize - 1] = true;
                }
            }
        }
    }

    let min_size = (params.min_component_fraction * volume.len() as f64).ceil() as usize;
    let mut candidates: Vec<(usize, u32)> = sizes
        .iter()
        .enumerate()
        .filter(|(n, size)| !touches_border[*n] && **size >= min_size.max(1))
        .map(|(n, size)| (*size, n as u32 + 1))
        .collect();
    // Largest first; equal sizes by label for determinism.
    candidates.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let Some(&(largest, _)) = candidates.first() else {
        return Err(RoiError::EmptyMask);
    };
    let kept: Vec<(usize, u32)> = candidates
        .into_iter()
        .take(2)
        .enumerate()
        .filter(|(rank, (size, _))| *rank == 0 || *size as f64 >= params.second_component_ratio * largest as f64)
        .map(|(_, c)| c)
        .collect();

    let keep_labels: Vec<u32> = kept.iter().map(|(_, l)| *l).collect();
    let selected: Vec<bool> = labels.iter().map(|l| *l > 0 && keep_labels.contains(l)).collect();
    Ok(LungMask {
        dims,
        occupancy: dilate(dims, &selected, params.dilation_radius),
        component_count: kept.len(),
        component_sizes: kept.iter().map(|(s, _)| *s).collect(),
    })
}

/// Voxel range `[lo, hi]` (inclusive) of the crop box: the mask's bounding
/// box grown on each side by `round(margin * extent)` and clamped.
pub fn crop_bounds(mask: &LungMask, margin_fraction: f64) -> Result<([usize; 3], [usize; 3]), RoiError> {
    if !(0.0..=0.5).contains(&margin_fraction) {
        return Err(RoiError::InvalidMargin(margin_fraction));
    }
    let (lo, hi) = mask.bounding_box().ok_or(RoiError::EmptyMask)?;
    let mut out_lo = [0; 3];
    let mut out_hi = [0; 3];
    for a in 0..3 {
        let extent = hi[a] - lo[a];
        let pad = (margin_fraction * extent as f64).round() as usize;
        out_lo[a] = lo[a].saturating_sub(pad);
        out_hi[a] = (hi[a] + pad).min(mask.dims[a] - 1);
    }
    Ok((out_lo, out_hi))
}

/// Crops to the lung ROI; the output affine is translated so retained voxels
/// keep their world coordinates.
pub fn crop_roi(volume: &Volume, mask: &LungMask, margin_fraction: f64) -> Result<Volume, RoiError> {
    if mask.dims != volume.dims {
        return Err(RoiError::DimMismatch {
            mask: mask.dims,
            volume: volume.dims,
        });
    }
    let (lo, hi) = crop_bounds(mask, margin_fraction)?;
    let dims = [hi[0] - lo[0] + 1, hi[1] - lo[1] + 1, hi[2] - lo[2] + 1];
    let mut voxels = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
    for k in lo[2]..=hi[2] {
        for j in lo[1]..=hi[1] {
            let start = volume.index(lo[0], j, k);
            voxels.extend_from_slice(&volume.voxels[start..start + dims[0]]);
        }
    }
    let origin = volume.affine.apply([lo[0] as f64, lo[1] as f64, lo[2] as f64]);
    let mut out = Volume::new(dims, voxels, volume.affine.with_origin(origin)).expect("crop keeps a valid shape");
    out.provenance = volume.provenance.clone();
    out.provenance.history.push(format!(
        "cropped [{},{}]x[{},{}]x[{},{}]",
        lo[0], hi[0], lo[1], hi[1], lo[2], hi[2]
    ));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Affine;

    fn cube_mask(n: usize, lo: usize, hi: usize) -> LungMask {
        let mut occupancy = vec![false; n * n * n];
        for k in lo..=hi {
            for j in lo..=hi {
                for i in lo..=hi {
                    occupancy[i + n * (j + n * k)] = true;
                }
            }
        }
        LungMask {
            dims: [n; 3],
            occupancy,
            component_count: 1,
            component_sizes: vec![],
        }
    }

    #[test]
    fn crop_box_arithmetic() {
        let mask = cube_mask(100, 10, 90);
        assert_eq!(crop_bounds(&mask, 0.10).unwrap(), ([2; 3], [98; 3]));
        assert_eq!(crop_bounds(&mask, 0.0).unwrap(), ([10; 3], [90; 3]));
    }

    #[test]
    fn crop_clamps_at_edges() {
        let mask = cube_mask(20, 0, 15);
        let (lo, hi) = crop_bounds(&mask, 0.5).unwrap();
        assert_eq!(lo, [0; 3]);
        assert_eq!(hi, [19; 3]);
    }

    #[test]
    fn invalid_margin() {
        let mask = cube_mask(10, 2, 5);
        assert_eq!(crop_bounds(&mask, 0.6), Err(RoiError::InvalidMargin(0.6)));
    }

    #[test]
    fn crop_keeps_world_coordinates() {
        let affine = Affine::diagonal([-0.7, 0.7, 2.5], [30.0, -40.0, 5.0]);
        let n = 12;
        let voxels = (0..n * n * n).map(|v| v as f32).collect();
        let v = Volume::new([n; 3], voxels, affine).unwrap();
        let mask = cube_mask(n, 3, 7);
        let c = crop_roi(&v, &mask, 0.25).unwrap();
        assert_eq!(c.dims, [7; 3]);
        assert_eq!(c.get(0, 0, 0), v.get(2, 2, 2));
        let (a, b) = (c.world_of(1, 2, 3), v.world_of(3, 4, 5));
        assert!((0..3).all(|n| (a[n] - b[n]).abs() < 1e-9));
    }

    #[test]
    fn all_water_volume_has_empty_mask() {
        let v = Volume::filled([8, 8, 8], 0.0, Affine::identity());
        assert_eq!(lung_mask(&v, &LungMaskParams::default()), Err(RoiError::EmptyMask));
    }

    #[test]
    fn border_air_is_discarded_interior_kept() {
        // Water cube with an air rim and a single interior air pocket.
        let n = 16;
        let mut v = Volume::filled([n; 3], -1000.0, Affine::identity());
        for k in 2..n - 2 {
            for j in 2..n - 2 {
                for i in 2..n - 2 {
                    v.set(i, j, k, 0.0);
                }
            }
        }
        for k in 6..9 {
            for j in 6..9 {
                for i in 6..9 {
                    v.set(i, j, k, -800.0);
                }
            }
        }
        let params = LungMaskParams {
            dilation_radius: 0,
            ..LungMaskParams::default()
        };
        let m = lung_mask(&v, &params).unwrap();
        assert_eq!(m.component_count, 1);
        assert_eq!(m.count(), 27);
        assert_eq!(m.bounding_box(), Some(([6; 3], [8; 3])));
    }

    #[test]
    fn dilation_matches_brute_force_ball() {
        let dims = [9, 8, 7];
        let mut mask = vec![false; 9 * 8 * 7];
        for idx in [0usize, 40, 41, 49, 200, 503] {
            mask[idx] = true;
        }
        let grown = dilate(dims, &mask, 2);
        let coords = |idx: usize| (idx % 9, (idx / 9) % 8, idx / 72);
        for (idx, g) in grown.iter().enumerate() {
            let (x, y, z) = coords(idx);
            let expected = mask.iter().enumerate().filter(|(_, m)| **m).any(|(s, _)| {
                let (a, b, c) = coords(s);
                let d = |p: usize, q: usize| (p as isize - q as isize).pow(2);
                d(x, a) + d(y, b) + d(z, c) <= 4
            });
            assert_eq!(*g, expected, "voxel {idx}");
        }
    }

    #[test]
    fn labels_six_connected() {
        // Two voxels touching only diagonally are separate components.
        let dims = [3, 3, 1];
        let fg = [true, false, false, false, true, false, false, false, true];
        let (_, sizes) = label_components(dims, &fg);
        assert_eq!(sizes, vec![1, 1, 1]);
    }
}
