//! 3-D volumes: assembly from DICOM slices, NIfTI-1 I/O, orientation and
//! resolution checks, and lung ROI cropping.

pub mod nifti;
pub mod orientation;
pub mod roi;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dicom::PixelSlab;
use crate::geometry::{self, Affine, Vec3};
use crate::series::SeriesManifest;

pub use nifti::{read_nifti, read_nifti_file, write_nifti, write_nifti_file, NiftiError};
pub use orientation::{check_orientation, check_resolution, reorient_to_standard, OrientationError};
pub use roi::{crop_roi, lung_mask, LungMask, LungMaskParams, RoiError};

/// Maximum in-plane pixel spacing difference (mm) tolerated across a series.
pub const PIXEL_SPACING_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Provenance {
    pub series_uid: String,
    pub history: Vec<String>,
}

/// HU voxels in x-fastest order (`i + nx * (j + ny * k)`) and a
/// voxel-to-world affine in RAS+ millimeters.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    pub dims: [usize; 3],
    pub voxels: Vec<f32>,
    pub affine: Affine,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VolumeError {
    #[error("inconsistent pixel spacing: {0:?} vs {1:?}")]
    InconsistentPixelSpacing([f64; 2], [f64; 2]),
    #[error("inconsistent image orientation across slices")]
    InconsistentOrientation,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
}

impl Volume {
    pub fn new(dims: [usize; 3], voxels: Vec<f32>, affine: Affine) -> Result<Self, VolumeError> {
        if dims.contains(&0) || voxels.len() != dims[0] * dims[1] * dims[2] {
            return Err(VolumeError::ShapeMismatch(format!(
                "{} voxels for dims {dims:?}",
                voxels.len()
            )));
        }
        if !affine.is_valid() {
            return Err(VolumeError::DegenerateGeometry("singular affine".into()));
        }
        Ok(Self {
            dims,
            voxels,
            affine,
            provenance: Provenance::default(),
        })
    }

    pub fn filled(dims: [usize; 3], value: f32, affine: Affine) -> Self {
        Self::new(dims, vec![value; dims[0] * dims[1] * dims[2]], affine).expect("valid dims and affine")
    }

    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f32 {
        self.voxels[self.index(i, j, k)]
    }

    pub fn set(&mut self, i: usize, j: usize, k: usize, value: f32) {
        let idx = self.index(i, j, k);
        self.voxels[idx] = value;
    }

    /// Voxel sizes along the three voxel axes (affine column norms).
    pub fn voxel_size(&self) -> Vec3 {
        self.affine.column_norms()
    }

    pub fn world_of(&self, i: usize, j: usize, k: usize) -> Vec3 {
        self.affine.apply([i as f64, j as f64, k as f64])
    }
}

const AXIAL: [f64; 6] = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0];

fn lps_to_ras(v: Vec3) -> Vec3 {
    [-v[0], -v[1], v[2]]
}

/// Stacks decoded slices into a volume.
///
/// `slabs[n]` must belong to `manifest.slices[n]`. Slices are ordered by
/// ascending position along the slice normal. The row axis is flipped and
/// DICOM patient coordinates (LPS) are converted to RAS, so a conventional
/// axial acquisition comes out with an affine diagonal of signs (-, +, +).
pub fn assemble_volume(manifest: &SeriesManifest, slabs: &[PixelSlab]) -> Result<Volume, VolumeError> {
    let slices = &manifest.slices;
    if slices.is_empty() || slabs.len() != slices.len() {
        return Err(VolumeError::ShapeMismatch(format!(
            "{} slabs for {} slices",
            slabs.len(),
            slices.len()
        )));
    }
    let first = &slices[0];
    let (width, height) = (first.columns as usize, first.rows as usize);
    for (header, slab) in slices.iter().zip(slabs) {
        if slab.width != width
            || slab.height != height
            || header.columns as usize != width
            || header.rows as usize != height
            || slab.values.len() != width * height
        {
            return Err(VolumeError::ShapeMismatch(format!(
                "slice {} is {}x{}, expected {width}x{height}",
                header.instance_number, slab.width, slab.height
            )));
        }
        let diff = (0..2).map(|a| (header.pixel_spacing[a] - first.pixel_spacing[a]).abs());
        if diff.fold(0.0, f64::max) > PIXEL_SPACING_TOLERANCE {
            return Err(VolumeError::InconsistentPixelSpacing(
                first.pixel_spacing,
                header.pixel_spacing,
            ));
        }
    }

    let orientation = first.image_orientation.unwrap_or(AXIAL);
    for header in slices {
        let o = header.image_orientation.unwrap_or(AXIAL);
        if o.iter().zip(orientation).any(|(a, b)| (a - b).abs() > 1e-3) {
            return Err(VolumeError::InconsistentOrientation);
        }
    }
    let row_dir = [orientation[0], orientation[1], orientation[2]];
    let col_dir = [orientation[3], orientation[4], orientation[5]];
    let normal = geometry::normalize(geometry::cross(row_dir, col_dir))
        .ok_or_else(|| VolumeError::DegenerateGeometry("image orientation rows are parallel".into()))?;

    let positions: Vec<Vec3> = slices
        .iter()
        .map(|h| h.image_position.unwrap_or([0.0, 0.0, h.slice_location.unwrap_or(0.0)]))
        .collect();
    let mut order: Vec<usize> = (0..slices.len()).collect();
    order.sort_by(|&a, &b| geometry::dot(positions[a], normal).total_cmp(&geometry::dot(positions[b], normal)));

    let count = order.len();
    let first_pos = positions[order[0]];
    let last_pos = positions[order[count - 1]];
    let mean_step = geometry::scale(geometry::sub(last_pos, first_pos), 1.0 / (count.max(2) - 1) as f64);
    let step = if count > 1 && geometry::norm(mean_step) > 0.0 {
        mean_step
    } else {
        geometry::scale(normal, first.slice_thickness.filter(|t| *t > 0.0).unwrap_or(1.0))
    };

    let [row_spacing, col_spacing] = first.pixel_spacing;
    // DICOM: column index advances along the row direction.
    let axis_i = geometry::scale(row_dir, col_spacing);
    let axis_j = geometry::scale(col_dir, row_spacing);
    // Flip rows: voxel j = height - 1 - row.
    let origin_lps = geometry::add(first_pos, geometry::scale(axis_j, (height - 1) as f64));
    let affine = Affine::from_columns(
        [
            lps_to_ras(axis_i),
            lps_to_ras(geometry::scale(axis_j, -1.0)),
            lps_to_ras(step),
        ],
        lps_to_ras(origin_lps),
    );

    let mut voxels = Vec::with_capacity(width * height * count);
    for &s in &order {
        let slab = &slabs[s];
        for j in 0..height {
            let row = height - 1 - j;
            voxels.extend_from_slice(&slab.values[row * width..(row + 1) * width]);
        }
    }

    let mut volume = Volume::new([width, height, count], voxels, affine)?;
    volume.provenance = Provenance {
        series_uid: manifest.series_uid.clone(),
        history: vec!["assembled".into()],
    };
    Ok(volume)
}
