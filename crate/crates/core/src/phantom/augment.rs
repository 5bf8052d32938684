use serde::{Deserialize, Serialize};

use crate::pose::Pose;
use crate::volume::{Grid, Volume};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    fn index(self) -> usize {
        self as usize
    }
}

/// Label-aware geometric augmentation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Augmentation {
    /// Mirror along an axis. Mirroring turns a left limb into a right one,
    /// so the side labels are exchanged too.
    Flip(Axis),
    /// Quarter turns about an axis, counter-clockwise when looking down it.
    Rot90 { axis: Axis, turns: u8 },
}

/// Applies `aug` to a volume and its pose. Coordinates are mapped relative
/// to the grid origin, which is kept.
pub fn augment(volume: &Volume, pose: &Pose, aug: Augmentation) -> (Volume, Pose) {
    match aug {
        Augmentation::Flip(axis) => {
            let a = axis.index();
            let g = volume.grid;
            let n = g.dims;
            let mut out = Volume::zeros(g);
            let dst = out.data_mut();
            for (i, &v) in volume.data().iter().enumerate() {
                let mut c = g.coords(i);
                c[a] = n[a] - 1 - c[a];
                dst[g.index(c[0], c[1], c[2])] = v;
            }
            let far = (n[a] - 1) as f64 * g.spacing_mm;
            let o = g.origin_mm[a];
            let pose = pose
                .map_points(|mut p| {
                    p[a] = o + (far - (p[a] - o));
                    p
                })
                .swap_sides();
            (out, pose)
        }
        Augmentation::Rot90 { axis, turns } => {
            let mut cur = (volume.clone(), *pose);
            for _ in 0..turns % 4 {
                cur = quarter_turn(&cur.0, &cur.1, axis);
            }
            cur
        }
    }
}

/// `(b, c) -> (n_c - 1 - c, b)` on the two axes following `axis` cyclically.
fn quarter_turn(volume: &Volume, pose: &Pose, axis: Axis) -> (Volume, Pose) {
    let a = axis.index();
    let (b, c) = ((a + 1) % 3, (a + 2) % 3);
    let g = volume.grid;
    let n = g.dims;
    let mut dims = n;
    dims[b] = n[c];
    dims[c] = n[b];
    let ng = Grid { dims, ..g };
    let mut out = Volume::zeros(ng);
    let dst = out.data_mut();
    for (i, &v) in volume.data().iter().enumerate() {
        let s = g.coords(i);
        let mut t = s;
        t[b] = n[c] - 1 - s[c];
        t[c] = s[b];
        dst[ng.index(t[0], t[1], t[2])] = v;
    }
    let far = (n[c] - 1) as f64 * g.spacing_mm;
    let o = g.origin_mm;
    let pose = pose.map_points(|p| {
        let mut q = p;
        q[b] = o[b] + (far - (p[c] - o[c]));
        q[c] = o[c] + (p[b] - o[b]);
        q
    });
    (out, pose)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{sample_case, NoiseSpec, PhantomSpec};

    fn case() -> (Volume, Pose) {
        let spec = PhantomSpec { dims: [40, 44, 48], noise: NoiseSpec::none(), ..PhantomSpec::default() };
        let c = sample_case(&spec, 9).unwrap();
        (c.volume, c.pose)
    }

    #[test]
    fn flips_are_exact_involutions() {
        let (v, p) = case();
        for axis in [Axis::X, Axis::Y, Axis::Z] {
            let (v1, p1) = augment(&v, &p, Augmentation::Flip(axis));
            assert_ne!(p1, p);
            let (v2, p2) = augment(&v1, &p1, Augmentation::Flip(axis));
            assert_eq!((v2, p2), (v.clone(), p));
        }
    }

    #[test]
    fn four_quarter_turns_are_the_identity() {
        let (v, p) = case();
        for axis in [Axis::X, Axis::Y, Axis::Z] {
            let (v1, p1) = augment(&v, &p, Augmentation::Rot90 { axis, turns: 1 });
            assert_ne!(v1.dims(), v.dims());
            let (v3, p3) = augment(&v1, &p1, Augmentation::Rot90 { axis, turns: 3 });
            assert_eq!((v3, p3), (v.clone(), p));
        }
    }

    #[test]
    fn landmarks_follow_the_voxels() {
        let (v, p) = case();
        for aug in [Augmentation::Flip(Axis::Y), Augmentation::Rot90 { axis: Axis::X, turns: 1 }] {
            let (v1, p1) = augment(&v, &p, aug);
            for j in 0..16 {
                // the swapped label keeps the mirrored intensity of its partner
                let src = if matches!(aug, Augmentation::Flip(_)) { crate::landmarks::partner(j) } else { j };
                let at = |vol: &Volume, q| {
                    let [x, y, z] = vol.grid.nearest_voxel(q).unwrap();
                    vol.get(x, y, z)
                };
                assert_eq!(at(&v1, p1.landmarks[j]), at(&v, p.landmarks[src]));
            }
        }
    }
}
