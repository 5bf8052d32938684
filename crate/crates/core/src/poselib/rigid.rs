use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::PoseLibError;
use crate::pose::Point;

/// `p ↦ scale · R p + t`. Rigid fits keep `scale` at 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    /// Row-major rotation matrix.
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
    #[serde(default = "unit_scale")]
    pub scale: f64,
}

fn unit_scale() -> f64 {
    1.0
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self { rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]], translation: [0.0; 3], scale: 1.0 }
    }

    pub fn from_parts(rotation: Matrix3<f64>, translation: Vector3<f64>, scale: f64) -> Self {
        Self {
            rotation: core::array::from_fn(|r| core::array::from_fn(|c| rotation[(r, c)])),
            translation: [translation.x, translation.y, translation.z],
            scale,
        }
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|r, c| self.rotation[r][c])
    }

    pub fn apply(&self, p: Point) -> Point {
        let r = &self.rotation;
        core::array::from_fn(|i| {
            self.scale * (r[i][0] * p[0] + r[i][1] * p[1] + r[i][2] * p[2]) + self.translation[i]
        })
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        let r = self.rotation_matrix() * other.rotation_matrix();
        let t = self.scale * self.rotation_matrix() * Vector3::from(other.translation) + Vector3::from(self.translation);
        RigidTransform::from_parts(r, t, self.scale * other.scale)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMode {
    /// Rotation and translation.
    #[default]
    Rigid,
    /// Rotation, translation and one uniform scale.
    Similarity,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidFit {
    pub transform: RigidTransform,
    /// Root mean squared residual in mm.
    pub rms: f64,
}

/// Smallest ratio between the second and first singular values of the
/// centred source points accepted as non-collinear.
pub const COLLINEAR_RATIO: f64 = 1e-9;

/// Least-squares rigid alignment of `src` onto `dst` (Kabsch).
pub fn fit_rigid(src: &[Point], dst: &[Point]) -> Result<RigidFit, PoseLibError> {
    fit(src, dst, FitMode::Rigid)
}

/// Least-squares alignment of `src` onto `dst` in the given mode.
pub fn fit(src: &[Point], dst: &[Point], mode: FitMode) -> Result<RigidFit, PoseLibError> {
    if src.len() != dst.len() {
        return Err(PoseLibError::LengthMismatch { src: src.len(), dst: dst.len() });
    }
    let n = src.len();
    if n < 3 {
        return Err(PoseLibError::TooFewPoints(n));
    }
    let centroid = |pts: &[Point]| pts.iter().fold(Vector3::zeros(), |a, p| a + Vector3::from(*p)) / n as f64;
    let (cs, cd) = (centroid(src), centroid(dst));
    let mut h = Matrix3::zeros();
    let mut spread = Matrix3::zeros();
    let mut src_var = 0.0;
    for (s, d) in src.iter().zip(dst) {
        let a = Vector3::from(*s) - cs;
        let b = Vector3::from(*d) - cd;
        h += a * b.transpose();
        spread += a * a.transpose();
        src_var += a.norm_squared();
    }
    let sv = spread.symmetric_eigenvalues();
    let mut ev = [sv[0].max(0.0), sv[1].max(0.0), sv[2].max(0.0)];
    ev.sort_by(|a, b| b.total_cmp(a));
    let ratio = if ev[0] > 0.0 { libm::sqrt(ev[1] / ev[0]) } else { 0.0 };
    if !(ratio > COLLINEAR_RATIO) {
        return Err(PoseLibError::Degenerate { ratio });
    }
    let svd = h.svd(true, true);
    let u = svd.u.expect("requested");
    let v_t = svd.v_t.expect("requested");
    let v = v_t.transpose();
    let d = if (v * u.transpose()).determinant() < 0.0 { -1.0 } else { 1.0 };
    let fix = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d));
    let r = v * fix * u.transpose();
    let scale = match mode {
        FitMode::Rigid => 1.0,
        FitMode::Similarity => {
            let s = svd.singular_values;
            (s[0] + s[1] + d * s[2]) / src_var
        }
    };
    let t = cd - scale * r * cs;
    let transform = RigidTransform::from_parts(r, t, scale);
    let sq: f64 = src
        .iter()
        .zip(dst)
        .map(|(s, d)| {
            let p = transform.apply(*s);
            (0..3).map(|a| (p[a] - d[a]) * (p[a] - d[a])).sum::<f64>()
        })
        .sum();
    Ok(RigidFit { transform, rms: libm::sqrt(sq / n as f64) })
}
