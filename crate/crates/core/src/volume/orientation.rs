//! Orientation (C6) and resolution (C7) checks on the affine, and
//! reorientation to the standard axis order by permuting and flipping voxel
//! axes (no resampling).
//!
//! Standard orientation is a diagonal affine with signs (-, +, +): voxel
//! axis 0 runs toward patient left, axis 1 anterior, axis 2 superior.

use thiserror::Error;

use super::Volume;
use crate::findings::{CheckId, QaFinding, QaThresholds};
use crate::geometry::{Affine, Vec3};

/// Off-axis components must be below this fraction of the column norm.
pub const AXIS_TOLERANCE: f64 = 1e-3;

/// Diagonal sign of each world axis in standard orientation.
pub const STANDARD_SIGNS: [f64; 3] = [-1.0, 1.0, 1.0];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OrientationError {
    #[error("oblique affine: voxel axes are not aligned with world axes")]
    ObliqueAffine,
}

/// How each voxel axis maps onto a world axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AxisMapping {
    /// `world_axis[a]` is the world axis voxel axis `a` runs along.
    pub world_axis: [usize; 3],
    /// Whether voxel axis `a` runs in the positive world direction.
    pub positive: [bool; 3],
}

impl AxisMapping {
    /// Inverse permutation: the voxel axis along each world axis.
    pub fn voxel_axis(&self) -> [usize; 3] {
        let mut inv = [0; 3];
        for (a, w) in self.world_axis.iter().enumerate() {
            inv[*w] = a;
        }
        inv
    }

    pub fn is_standard(&self) -> bool {
        self.world_axis == [0, 1, 2] && self.positive == [false, true, true]
    }
}

pub fn axis_mapping(affine: &Affine) -> Result<AxisMapping, OrientationError> {
    let mut world_axis = [0usize; 3];
    let mut positive = [false; 3];
    let norms = affine.column_norms();
    for a in 0..3 {
        let col = affine.column(a);
        let dominant = (0..3)
            .max_by(|&x, &y| col[x].abs().total_cmp(&col[y].abs()))
            .unwrap_or(0);
        let aligned = (0..3).all(|r| r == dominant || col[r].abs() < AXIS_TOLERANCE * norms[a]);
        if !aligned || norms[a] == 0.0 {
            return Err(OrientationError::ObliqueAffine);
        }
        world_axis[a] = dominant;
        positive[a] = col[dominant] > 0.0;
    }
    let mut seen = [false; 3];
    for w in world_axis {
        if std::mem::replace(&mut seen[w], true) {
            return Err(OrientationError::ObliqueAffine);
        }
    }
    Ok(AxisMapping { world_axis, positive })
}

pub fn is_standard(affine: &Affine) -> bool {
    axis_mapping(affine).is_ok_and(|m| m.is_standard())
}

fn sign_label(v: f64) -> char {
    if v < 0.0 {
        '-'
    } else {
        '+'
    }
}

/// C6: 1 when the affine is axis-aligned with diagonal signs (-, +, +).
pub fn check_orientation(affine: &Affine) -> QaFinding {
    match axis_mapping(affine) {
        Err(_) => QaFinding::evaluated(CheckId::C6, 0, "oblique: voxel axes not aligned with world axes"),
        Ok(m) if m.is_standard() => QaFinding::evaluated(CheckId::C6, 1, "standard orientation (-, +, +)"),
        Ok(m) => {
            let signs: String = (0..3).map(|i| sign_label(affine.get(i, i))).collect();
            QaFinding::evaluated(
                CheckId::C6,
                0,
                format!(
                    "nonstandard orientation: voxel axes along world {:?}, diagonal signs {signs}",
                    m.world_axis
                ),
            )
        }
    }
}

/// Voxel size along each world axis; falls back to plain column norms for
/// oblique affines.
pub fn voxel_size_per_world_axis(affine: &Affine) -> Vec3 {
    let norms = affine.column_norms();
    match axis_mapping(affine) {
        Ok(m) => {
            let inv = m.voxel_axis();
            [norms[inv[0]], norms[inv[1]], norms[inv[2]]]
        }
        Err(_) => norms,
    }
}

/// C7: number of axes whose voxel size exceeds the threshold (and, when
/// lower bounds are configured, falls below them).
pub fn check_resolution(affine: &Affine, thresholds: &QaThresholds) -> QaFinding {
    let sizes = voxel_size_per_world_axis(affine);
    let mut count = 0;
    let mut notes = Vec::new();
    for (axis, name) in ["x", "y", "z"].iter().enumerate() {
        if sizes[axis] > thresholds.phi[axis] {
            count += 1;
            notes.push(format!("{name} {:.3} > {}", sizes[axis], thresholds.phi[axis]));
        }
        if let Some(min) = thresholds.phi_min {
            if sizes[axis] < min[axis] {
                count += 1;
                notes.push(format!("{name} {:.3} < {}", sizes[axis], min[axis]));
            }
        }
    }
    let detail = if notes.is_empty() {
        format!("voxel size {:.3} x {:.3} x {:.3} mm", sizes[0], sizes[1], sizes[2])
    } else {
        format!("out of range: {}", notes.join(", "))
    };
    QaFinding::evaluated(CheckId::C7, count, detail)
}

/// Permutes and flips voxel axes so that [`check_orientation`] passes, keeping
/// every voxel at the same world position. A volume that is already standard
/// is returned unchanged.
pub fn reorient_to_standard(volume: &Volume) -> Result<Volume, OrientationError> {
    let mapping = axis_mapping(&volume.affine)?;
    if mapping.is_standard() {
        return Ok(volume.clone());
    }
    let src_axis = mapping.voxel_axis();
    let in_dims = volume.dims;
    let in_strides = [1, in_dims[0], in_dims[0] * in_dims[1]];

    let mut out_dims = [0usize; 3];
    let mut flip = [false; 3];
    let mut columns = [[0.0; 3]; 3];
    let mut origin = volume.affine.origin();
    for w in 0..3 {
        let a = src_axis[w];
        out_dims[w] = in_dims[a];
        let wants_positive = STANDARD_SIGNS[w] > 0.0;
        flip[w] = mapping.positive[a] != wants_positive;
        let col = volume.affine.column(a);
        if flip[w] {
            let span = (in_dims[a] - 1) as f64;
            for r in 0..3 {
                origin[r] += col[r] * span;
            }
            columns[w] = [-col[0], -col[1], -col[2]];
        } else {
            columns[w] = col;
        }
    }

    // Output index o maps to input index in[a] = flip ? d - 1 - o[w] : o[w].
    let mut base = 0isize;
    let mut step = [0isize; 3];
    for w in 0..3 {
        let a = src_axis[w];
        let stride = in_strides[a] as isize;
        if flip[w] {
            base += stride * (in_dims[a] as isize - 1);
            step[w] = -stride;
        } else {
            step[w] = stride;
        }
    }
    let mut voxels = Vec::with_capacity(volume.voxels.len());
    for k in 0..out_dims[2] {
        let zk = base + step[2] * k as isize;
        for j in 0..out_dims[1] {
            let yj = zk + step[1] * j as isize;
            for i in 0..out_dims[0] {
                voxels.push(volume.voxels[(yj + step[0] * i as isize) as usize]);
            }
        }
    }

    let mut out = Volume::new(out_dims, voxels, Affine::from_columns(columns, origin))
        .expect("permutation preserves shape and affine validity");
    out.provenance = volume.provenance.clone();
    out.provenance.history.push("reoriented".into());
    Ok(out)
}
