use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use volmark_core::heatmap::DecodedPose;
use volmark_core::landmarks::{NUM_LANDMARKS, REGISTRATION_SUBSET};
use volmark_core::pose::{distance, Point, Pose};
use volmark_core::poselib::{
    build_label_proxy, fit_rigid, retrieve_support, Atlas, FitMode, PoseLibrary, RigidTransform, SupportEntry, SupportSet,
};
use volmark_core::volume::Grid;

/// Uniform random rotation from a unit quaternion (Shoemake).
fn rotation(rng: &mut ChaCha8Rng) -> [[f64; 3]; 3] {
    let (u1, u2, u3): (f64, f64, f64) = (rng.random(), rng.random(), rng.random());
    let tau = std::f64::consts::TAU;
    let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
    let (w, x, y, z) = (a * (tau * u2).sin(), a * (tau * u2).cos(), b * (tau * u3).sin(), b * (tau * u3).cos());
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - z * w), 2.0 * (x * z + y * w)],
        [2.0 * (x * y + z * w), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - x * w)],
        [2.0 * (x * z - y * w), 2.0 * (y * z + x * w), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

fn transform(rng: &mut ChaCha8Rng, reach: f64) -> RigidTransform {
    RigidTransform {
        rotation: rotation(rng),
        translation: std::array::from_fn(|_| rng.random_range(-reach..reach)),
        scale: 1.0,
    }
}

fn cloud(rng: &mut ChaCha8Rng, n: usize) -> Vec<Point> {
    (0..n).map(|_| std::array::from_fn(|_| rng.random_range(-30.0..30.0))).collect()
}

fn frobenius(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> f64 {
    a.iter().flatten().zip(b.iter().flatten()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn rms(t: &RigidTransform, src: &[Point], dst: &[Point]) -> f64 {
    let ss: f64 = src.iter().zip(dst).map(|(s, d)| distance(t.apply(*s), *d).powi(2)).sum();
    (ss / src.len() as f64).sqrt()
}

fn random_pose(rng: &mut ChaCha8Rng) -> Pose {
    Pose::new(std::array::from_fn(|_| std::array::from_fn(|_| rng.random_range(0.0..60.0))), 1.0)
}

fn library(rng: &mut ChaCha8Rng, n: usize) -> PoseLibrary {
    // shuffled ids so id order and draw order differ
    let mut ids: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        ids.swap(i, rng.random_range(0..=i));
    }
    PoseLibrary::new(ids.iter().map(|&i| Atlas::from_pose(format!("atlas-{i:03}"), &random_pose(rng), "test")).collect()).unwrap()
}

fn decoded(pose: Pose) -> DecodedPose {
    DecodedPose { pose, confidence: [1.0; NUM_LANDMARKS], valid: [true; NUM_LANDMARKS] }
}

/// Residual per atlas, then repeated selection of the smallest (ties by id).
fn brute_force_ranking(query: &Pose, lib: &PoseLibrary, k: usize) -> Vec<String> {
    let dst: Vec<Point> = REGISTRATION_SUBSET.iter().map(|&j| query.landmarks[j]).collect();
    let mut scored: Vec<(f64, String)> = lib
        .atlases()
        .iter()
        .map(|a| {
            let src: Vec<Point> = REGISTRATION_SUBSET.iter().map(|&j| a.landmarks[j]).collect();
            let t = fit_rigid(&src, &dst).unwrap().transform;
            let err = src.iter().zip(&dst).map(|(s, d)| distance(t.apply(*s), *d)).sum();
            (err, a.id.clone())
        })
        .collect();
    let mut out = Vec::new();
    for _ in 0..k {
        let mut best = 0;
        for i in 1..scored.len() {
            let (e, id) = &scored[i];
            let (be, bid) = &scored[best];
            if e < be || (e == be && id < bid) {
                best = i;
            }
        }
        out.push(scored.swap_remove(best).1);
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn fit_recovers_synthetic_transforms(seed in any::<u64>(), n in 3usize..20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let truth = transform(&mut rng, 50.0);
        let src = cloud(&mut rng, n);
        let dst: Vec<Point> = src.iter().map(|p| truth.apply(*p)).collect();
        let fit = fit_rigid(&src, &dst).unwrap();
        prop_assert!(frobenius(&fit.transform.rotation, &truth.rotation) < 1e-9);
        prop_assert!(distance(fit.transform.translation, truth.translation) < 1e-9);
        prop_assert!(fit.rms < 1e-9);
        let r = fit.transform.rotation_matrix();
        prop_assert!((r.determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn four_point_fit_beats_random_candidates(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let src = cloud(&mut rng, 4);
        let dst = cloud(&mut rng, 4);
        let fit = fit_rigid(&src, &dst).unwrap();
        prop_assert!((fit.rms - rms(&fit.transform, &src, &dst)).abs() < 1e-9);
        let cd: Point = std::array::from_fn(|a| dst.iter().map(|p| p[a]).sum::<f64>() / 4.0);
        for _ in 0..1000 {
            let mut t = transform(&mut rng, 10.0);
            // centre the candidate on the target so it is a competitive guess
            let cs: Point = std::array::from_fn(|a| src.iter().map(|p| p[a]).sum::<f64>() / 4.0);
            let moved = t.apply(cs);
            t.translation = std::array::from_fn(|a| t.translation[a] + cd[a] - moved[a]);
            prop_assert!(fit.rms <= rms(&t, &src, &dst) + 1e-12);
        }
    }

    #[test]
    fn retrieval_matches_brute_force(seed in any::<u64>(), k in prop::sample::select(vec![1usize, 5, 10])) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lib = library(&mut rng, 50);
        let query = random_pose(&mut rng);
        let support = retrieve_support(&decoded(query), &lib, k, FitMode::Rigid).unwrap();
        prop_assert_eq!(support.ids(), brute_force_ranking(&query, &lib, k));
    }

    #[test]
    fn support_errors_are_sorted_and_reproducible(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lib = library(&mut rng, 20);
        let query = random_pose(&mut rng);
        let support = retrieve_support(&decoded(query), &lib, 10, FitMode::Rigid).unwrap();
        prop_assert!(support.entries.windows(2).all(|w| w[0].error_mm <= w[1].error_mm));
        for e in &support.entries {
            let atlas = lib.atlases().iter().find(|a| a.id == e.atlas_id).unwrap();
            let err: f64 = support.subset.iter().map(|&j| distance(e.transform.apply(atlas.landmarks[j]), query.landmarks[j])).sum();
            prop_assert!((err - e.error_mm).abs() <= 1e-9 * err.max(1.0));
        }
    }

    #[test]
    fn ranking_ignores_a_global_rigid_motion(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lib = library(&mut rng, 30);
        let query = random_pose(&mut rng);
        let t = transform(&mut rng, 40.0);
        let a = retrieve_support(&decoded(query), &lib, 30, FitMode::Rigid).unwrap();
        let b = retrieve_support(&decoded(query.map_points(|p| t.apply(p))), &lib, 30, FitMode::Rigid).unwrap();
        prop_assert_eq!(a.ids(), b.ids());
    }

    #[test]
    fn proxy_is_bounded_and_peaks_only_where_atlases_agree(seed in any::<u64>(), k in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = Grid::new([20, 20, 20], 1.0).unwrap();
        // landmarks within 0.4 voxel of a centre, so "same nearest voxel" is unambiguous
        let near = |rng: &mut ChaCha8Rng, c: [usize; 3]| -> Point { std::array::from_fn(|a| c[a] as f64 + rng.random_range(-0.4..0.4)) };
        let centres: [[usize; 3]; NUM_LANDMARKS] = std::array::from_fn(|_| std::array::from_fn(|_| rng.random_range(2..18)));
        let entries: Vec<SupportEntry> = (0..k)
            .map(|i| {
                let pose = Pose::new(std::array::from_fn(|j| {
                    let c = if rng.random_bool(0.5) { centres[j] } else { std::array::from_fn(|_| rng.random_range(2..18)) };
                    near(&mut rng, c)
                }), 1.0);
                SupportEntry { atlas_id: format!("a{i}"), transform: RigidTransform::identity(), error_mm: 0.0, aligned: pose }
            })
            .collect();
        let proxy = build_label_proxy(&SupportSet { entries: entries.clone(), subset: vec![] }, &grid, 2.0).unwrap();
        prop_assert!(proxy.tensor().data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        for j in 0..NUM_LANDMARKS {
            let voxels: Vec<_> = entries.iter().map(|e| grid.nearest_voxel(e.aligned.landmarks[j]).unwrap()).collect();
            let agree = voxels.iter().all(|v| *v == voxels[0]);
            let max = proxy.channel(j).iter().fold(0.0f32, |m, &v| m.max(v));
            prop_assert_eq!(max == 1.0, agree, "channel {} max {}", j, max);
        }
    }
}
