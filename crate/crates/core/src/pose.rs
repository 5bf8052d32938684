//! Sixteen-landmark poses in millimetres.

use serde::{Deserialize, Serialize};

use crate::landmarks::{partner, NUM_LANDMARKS};

pub type Point = [f64; 3];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub landmarks: [Point; NUM_LANDMARKS],
    pub present: [bool; NUM_LANDMARKS],
    /// Voxel spacing of the volume the coordinates refer to.
    pub spacing_mm: f64,
}

impl Pose {
    pub fn new(landmarks: [Point; NUM_LANDMARKS], spacing_mm: f64) -> Self {
        Self { landmarks, present: [true; NUM_LANDMARKS], spacing_mm }
    }

    pub fn is_complete(&self) -> bool {
        self.present.iter().all(|&p| p)
    }

    pub fn is_finite(&self) -> bool {
        self.landmarks.iter().flatten().all(|v| v.is_finite())
    }

    /// Applies `f` to every coordinate, keeping the mask.
    pub fn map_points(&self, mut f: impl FnMut(Point) -> Point) -> Pose {
        Pose { landmarks: self.landmarks.map(&mut f), ..*self }
    }

    /// Exchanges every left landmark with its right partner.
    pub fn swap_sides(&self) -> Pose {
        Pose {
            landmarks: core::array::from_fn(|i| self.landmarks[partner(i)]),
            present: core::array::from_fn(|i| self.present[partner(i)]),
            spacing_mm: self.spacing_mm,
        }
    }
}

#[inline]
pub fn distance(a: Point, b: Point) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    libm::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2])
}
