//! Small vector helpers and the voxel-to-world affine.

use serde::{Deserialize, Serialize};

pub type Vec3 = [f64; 3];

pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

pub fn normalize(a: Vec3) -> Option<Vec3> {
    let n = norm(a);
    (n > 0.0 && n.is_finite()).then(|| [a[0] / n, a[1] / n, a[2] / n])
}

pub fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

/// 4x4 voxel-to-world matrix (mm). Columns 0..3 are the world steps of the
/// three voxel axes, column 3 is the world position of voxel (0, 0, 0).
/// The last row is always `[0, 0, 0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Affine(pub [[f64; 4]; 4]);

impl Affine {
    pub fn from_columns(axes: [Vec3; 3], origin: Vec3) -> Self {
        let mut m = [[0.0; 4]; 4];
        for r in 0..3 {
            for (c, axis) in axes.iter().enumerate() {
                m[r][c] = axis[r];
            }
            m[r][3] = origin[r];
        }
        m[3] = [0.0, 0.0, 0.0, 1.0];
        Affine(m)
    }

    pub fn diagonal(steps: Vec3, origin: Vec3) -> Self {
        Self::from_columns(
            [[steps[0], 0.0, 0.0], [0.0, steps[1], 0.0], [0.0, 0.0, steps[2]]],
            origin,
        )
    }

    pub fn identity() -> Self {
        Self::diagonal([1.0, 1.0, 1.0], [0.0, 0.0, 0.0])
    }

    /// Entry at (row, col), zero-based.
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.0[row][col]
    }

    pub fn column(&self, col: usize) -> Vec3 {
        [self.0[0][col], self.0[1][col], self.0[2][col]]
    }

    pub fn origin(&self) -> Vec3 {
        self.column(3)
    }

    pub fn column_norms(&self) -> Vec3 {
        [norm(self.column(0)), norm(self.column(1)), norm(self.column(2))]
    }

    pub fn rows(&self) -> [[f64; 4]; 3] {
        [self.0[0], self.0[1], self.0[2]]
    }

    pub fn determinant3(&self) -> f64 {
        let m = &self.0;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    pub fn is_valid(&self) -> bool {
        self.0[3] == [0.0, 0.0, 0.0, 1.0]
            && self.0.iter().flatten().all(|v| v.is_finite())
            && self.determinant3().abs() > 0.0
    }

    /// World position of a (possibly fractional) voxel index.
    pub fn apply(&self, index: Vec3) -> Vec3 {
        let m = &self.0;
        let mut out = [0.0; 3];
        for (r, o) in out.iter_mut().enumerate() {
            *o = m[r][0] * index[0] + m[r][1] * index[1] + m[r][2] * index[2] + m[r][3];
        }
        out
    }

    pub fn with_origin(mut self, origin: Vec3) -> Self {
        for (r, o) in origin.iter().enumerate() {
            self.0[r][3] = *o;
        }
        self
    }
}
