use core::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::render::{apply_noise, render_body, Shadow};
use super::{PhantomError, PhantomSpec};
use crate::landmarks::{NUM_LANDMARKS, NUM_SEGMENTS, SEGMENTS};
use crate::pose::{distance, Point, Pose};
use crate::volume::{Grid, Volume};

/// Rejection-sampling budget per case.
pub const MAX_ATTEMPTS: usize = 100;

/// Coordinates are rounded to this step (mm) so mirrored and rotated copies
/// are exact in floating point.
const QUANTUM: f64 = 1.0 / 65536.0;

/// What the generator drew for one case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub attempts: usize,
    pub body_scale: f64,
    /// Body-to-volume rotation, row-major.
    pub rotation: [[f64; 3]; 3],
    /// Distances between the placed landmarks, indexed like `SEGMENTS`.
    pub segment_lengths_mm: [f64; NUM_SEGMENTS],
    pub shadow: Option<Shadow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomCase {
    pub volume: Volume,
    pub pose: Pose,
    pub provenance: Provenance,
}

fn normalize(v: [f64; 3]) -> [f64; 3] {
    let n = libm::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    v.map(|c| c / n)
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

/// Uniform direction within `half_angle` radians of unit vector `axis`.
pub(crate) fn sample_cone(rng: &mut impl Rng, axis: [f64; 3], half_angle: f64) -> [f64; 3] {
    let cos_t = 1.0 - rng.random::<f64>() * (1.0 - libm::cos(half_angle));
    let sin_t = libm::sqrt((1.0 - cos_t * cos_t).max(0.0));
    let phi = 2.0 * PI * rng.random::<f64>();
    let helper = if axis[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let u = normalize(cross(axis, helper));
    let w = cross(axis, u);
    let (c, s) = (libm::cos(phi) * sin_t, libm::sin(phi) * sin_t);
    core::array::from_fn(|i| axis[i] * cos_t + u[i] * c + w[i] * s)
}

fn rotation_from_axis_angle(axis: [f64; 3], angle: f64) -> [[f64; 3]; 3] {
    let [x, y, z] = axis;
    let (s, c) = (libm::sin(angle), libm::cos(angle));
    let t = 1.0 - c;
    [
        [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
        [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
        [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
    ]
}

fn sample_rotation(rng: &mut impl Rng, max_deg: f64) -> [[f64; 3]; 3] {
    let axis = sample_cone(rng, [0.0, 0.0, 1.0], PI);
    if max_deg >= 180.0 {
        // uniform over SO(3): angle density ∝ 1 - cos θ
        loop {
            let theta = PI * rng.random::<f64>();
            if rng.random::<f64>() * 2.0 <= 1.0 - libm::cos(theta) {
                return rotation_from_axis_angle(axis, theta);
            }
        }
    }
    rotation_from_axis_angle(axis, max_deg.to_radians() * rng.random::<f64>())
}

fn quantize(v: f64) -> f64 {
    libm::round(v / QUANTUM) * QUANTUM
}

/// Draws a skeleton and places it inside the volume, returning the pose and
/// a provenance record without shadow information.
pub fn sample_pose(spec: &PhantomSpec, rng: &mut impl Rng, seed: u64) -> Result<(Pose, Provenance), PhantomError> {
    spec.validate()?;
    let extent: [f64; 3] = spec.dims.map(|d| (d - 1) as f64 * spec.spacing_mm);
    for attempt in 1..=MAX_ATTEMPTS {
        let [lo, hi] = spec.scale_range;
        let body_scale = lo + (hi - lo) * rng.random::<f64>();
        let mut local = [[0.0f64; 3]; NUM_LANDMARKS];
        for (s, &(parent, child)) in SEGMENTS.iter().enumerate() {
            let seg = &spec.segments[s];
            let dir = sample_cone(rng, normalize(seg.direction), seg.cone_deg.to_radians());
            let jitter = 1.0 + seg.length_jitter * (2.0 * rng.random::<f64>() - 1.0);
            let len = seg.length_mm * body_scale * jitter;
            local[child] = core::array::from_fn(|i| local[parent][i] + dir[i] * len);
        }
        let rot = sample_rotation(rng, spec.max_rotation_deg);
        let turned: [Point; NUM_LANDMARKS] =
            local.map(|p| core::array::from_fn(|r| rot[r][0] * p[0] + rot[r][1] * p[1] + rot[r][2] * p[2]));
        let mut shift = [0.0; 3];
        let mut fits = true;
        for a in 0..3 {
            let min = turned.iter().map(|p| p[a]).fold(f64::INFINITY, f64::min);
            let max = turned.iter().map(|p| p[a]).fold(f64::NEG_INFINITY, f64::max);
            let slack = extent[a] - 2.0 * spec.margin_mm - (max - min);
            if slack < 0.0 {
                fits = false;
                break;
            }
            shift[a] = spec.margin_mm - min + slack * rng.random::<f64>();
        }
        if !fits {
            continue;
        }
        let landmarks = turned.map(|p| core::array::from_fn(|a| quantize(p[a] + shift[a])));
        let pose = Pose::new(landmarks, spec.spacing_mm);
        let segment_lengths_mm = SEGMENTS.map(|(p, c)| distance(landmarks[p], landmarks[c]));
        let prov = Provenance { seed, attempts: attempt, body_scale, rotation: rot, segment_lengths_mm, shadow: None };
        return Ok((pose, prov));
    }
    Err(PhantomError::DoesNotFit { attempts: MAX_ATTEMPTS })
}

/// One noisy phantom volume and its landmarks, fully determined by `seed`.
pub fn sample_case(spec: &PhantomSpec, seed: u64) -> Result<PhantomCase, PhantomError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (pose, mut provenance) = sample_pose(spec, &mut rng, seed)?;
    let grid = Grid::new(spec.dims, spec.spacing_mm)?;
    let mut volume = render_body(&pose, &grid, spec);
    provenance.shadow = apply_noise(&mut volume, &spec.noise, &mut rng);
    Ok(PhantomCase { volume, pose, provenance })
}
