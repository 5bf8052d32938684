//! Canonical landmark index table.
//!
//! Indices here are 0-based; user-facing names and files use the 1-based
//! numbering in [`LandmarkInfo::number`].

use serde::{Deserialize, Serialize};

pub const NUM_LANDMARKS: usize = 16;
pub const NUM_SEGMENTS: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
    Midline,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LandmarkInfo {
    /// 1-based index.
    pub number: usize,
    pub name: &'static str,
    pub side: Side,
    /// 0-based index of the mirror-image landmark; self for midline ones.
    pub partner: usize,
    pub in_registration_subset: bool,
}

const fn lm(number: usize, name: &'static str, side: Side, partner: usize, reg: bool) -> LandmarkInfo {
    LandmarkInfo { number, name, side, partner: partner - 1, in_registration_subset: reg }
}

pub const TABLE: [LandmarkInfo; NUM_LANDMARKS] = [
    lm(1, "head-top", Side::Midline, 1, true),
    lm(2, "neck", Side::Midline, 2, true),
    lm(3, "spine-mid", Side::Midline, 3, true),
    lm(4, "sacra", Side::Midline, 4, true),
    lm(5, "l-shoulder", Side::Left, 8, true),
    lm(6, "l-elbow", Side::Left, 9, false),
    lm(7, "l-wrist", Side::Left, 10, true),
    lm(8, "r-shoulder", Side::Right, 5, true),
    lm(9, "r-elbow", Side::Right, 6, true),
    lm(10, "r-wrist", Side::Right, 7, false),
    lm(11, "l-hip", Side::Left, 14, true),
    lm(12, "l-knee", Side::Left, 15, false),
    lm(13, "l-ankle", Side::Left, 16, false),
    lm(14, "r-hip", Side::Right, 11, true),
    lm(15, "r-knee", Side::Right, 12, false),
    lm(16, "r-ankle", Side::Right, 13, false),
];

/// Tree edges as 0-based (parent, child) pairs.
pub const SEGMENTS: [(usize, usize); NUM_SEGMENTS] = [
    (0, 1),
    (1, 2),
    (2, 3),
    (1, 4),
    (4, 5),
    (5, 6),
    (1, 7),
    (7, 8),
    (8, 9),
    (3, 10),
    (10, 11),
    (11, 12),
    (3, 13),
    (13, 14),
    (14, 15),
];

/// 0-based registration subset.
pub const REGISTRATION_SUBSET: [usize; 10] = [0, 1, 2, 3, 4, 6, 7, 8, 10, 13];

/// Limb landmarks, the ones with a left/right partner.
pub const LIMB_SUBSET: [usize; 12] = [4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15];

pub fn name(index: usize) -> &'static str {
    TABLE[index].name
}

/// Mirror partner of a 0-based index.
pub fn partner(index: usize) -> usize {
    TABLE[index].partner
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partners_are_mutual_and_midline_is_self_paired() {
        for (i, l) in TABLE.iter().enumerate() {
            assert_eq!(l.number, i + 1);
            assert_eq!(partner(l.partner), i);
            assert_eq!(l.partner == i, l.side == Side::Midline);
        }
    }

    #[test]
    fn registration_flags_match_subset() {
        let flagged: alloc::vec::Vec<usize> = (0..NUM_LANDMARKS).filter(|&i| TABLE[i].in_registration_subset).collect();
        assert_eq!(flagged, REGISTRATION_SUBSET);
        let one_based: alloc::vec::Vec<usize> = REGISTRATION_SUBSET.iter().map(|i| i + 1).collect();
        assert_eq!(one_based, [1, 2, 3, 4, 5, 7, 8, 9, 11, 14]);
    }

    #[test]
    fn segments_form_a_tree() {
        let mut parent = [usize::MAX; NUM_LANDMARKS];
        for &(p, c) in &SEGMENTS {
            assert_eq!(parent[c], usize::MAX, "landmark {c} has two parents");
            assert!(p < c);
            parent[c] = p;
        }
        assert_eq!(parent.iter().filter(|&&p| p == usize::MAX).count(), 1);
    }

    #[test]
    fn swapping_segments_maps_the_edge_set_onto_itself() {
        for &(p, c) in &SEGMENTS {
            let (sp, sc) = (partner(p), partner(c));
            assert!(SEGMENTS.contains(&(sp, sc)));
        }
    }
}
