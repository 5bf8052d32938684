use proptest::prelude::*;
use volmark_core::landmarks::NUM_LANDMARKS;
use volmark_core::metrics::{auc, euclidean, evaluate, pck_curve, threshold_grid};
use volmark_core::pose::Pose;

fn truth() -> Pose {
    Pose::new(std::array::from_fn(|j| [10.0 * j as f64, 0.0, 0.0]), 1.0)
}

/// Five cases, every landmark shifted along x by 0, 1, 2.5, 4 and 10 mm,
/// except landmark 0 which is exact in the last case.
fn fixture() -> (Vec<Pose>, Vec<Pose>) {
    let shifts = [0.0, 1.0, 2.5, 4.0, 10.0];
    let preds = shifts
        .iter()
        .enumerate()
        .map(|(c, &s)| {
            let mut p = truth().map_points(|q| [q[0] + s, q[1], q[2]]);
            if c == 4 {
                p.landmarks[0] = truth().landmarks[0];
            }
            p
        })
        .collect();
    (preds, vec![truth(); 5])
}

fn same(a: f64, b: f64) -> bool {
    a == b
}

#[test]
fn hand_computed_fixture() {
    let (preds, truths) = fixture();
    let r = evaluate(&preds, &truths, &threshold_grid(6.0, 2.0)).unwrap();
    assert_eq!(r.thresholds_mm, [0.0, 2.0, 4.0, 6.0]);
    // landmark 0: {0, 1, 2.5, 4, 0}
    assert!(same(r.mean_mm[0].unwrap(), 1.5));
    let p0 = r.pck[0].as_ref().unwrap();
    assert!(p0.iter().zip([0.4, 0.6, 0.8, 1.0]).all(|(a, b)| same(*a, b)), "{p0:?}");
    assert!(same(r.auc_percent[0].unwrap(), 70.0));
    // the others: {0, 1, 2.5, 4, 10}
    for j in 1..NUM_LANDMARKS {
        assert!(same(r.mean_mm[j].unwrap(), 3.5));
        let p = r.pck[j].as_ref().unwrap();
        assert!(p.iter().zip([0.2, 0.4, 0.6, 0.8]).all(|(a, b)| same(*a, b)), "{p:?}");
        assert!(same(r.auc_percent[j].unwrap(), 50.0));
    }
    assert!(same(r.overall_mean_mm, 3.375));
    let want = [17.0 / 80.0, 33.0 / 80.0, 49.0 / 80.0, 65.0 / 80.0];
    assert!(r.pooled_pck.iter().zip(want).all(|(a, b)| same(*a, b)));
    assert!(same(r.overall_auc_percent, 51.25));
}

proptest! {
    #[test]
    fn pck_is_monotone_and_bounded(d in prop::collection::vec(0.0f64..40.0, 1..200), step in 0.1f64..2.0) {
        let t = threshold_grid(30.0, step);
        let c = pck_curve(&d, &t).unwrap();
        prop_assert!(c.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(c.iter().all(|v| (0.0..=1.0).contains(v)));
        let a = auc(&t, &c).unwrap();
        prop_assert!((0.0..=100.0).contains(&a));
    }

    #[test]
    fn halving_the_grid_step_barely_moves_auc(mu in 2.0f64..20.0, spread in 1.0f64..6.0, n in 50usize..300) {
        // smooth distances: an evenly spread band around mu
        let d: Vec<f64> = (0..n).map(|i| (mu + spread * ((i as f64 + 0.5) / n as f64 - 0.5) * 2.0).max(0.0)).collect();
        let coarse = threshold_grid(30.0, 0.5);
        let fine = threshold_grid(30.0, 0.25);
        let a = auc(&coarse, &pck_curve(&d, &coarse).unwrap()).unwrap();
        let b = auc(&fine, &pck_curve(&d, &fine).unwrap()).unwrap();
        prop_assert!((a - b).abs() < 1.0, "{a} vs {b}");
    }

    #[test]
    fn distances_ignore_rigid_motion(
        pts in prop::array::uniform16(prop::array::uniform3(-50.0f64..50.0)),
        noise in prop::array::uniform16(prop::array::uniform3(-5.0f64..5.0)),
        angles in prop::array::uniform3(-3.2f64..3.2),
        shift in prop::array::uniform3(-100.0f64..100.0),
    ) {
        let gt = Pose::new(pts, 1.0);
        let pred = Pose::new(std::array::from_fn(|j| std::array::from_fn(|a| pts[j][a] + noise[j][a])), 1.0);
        let (sa, ca) = angles[0].sin_cos();
        let (sb, cb) = angles[1].sin_cos();
        let (sc, cc) = angles[2].sin_cos();
        let rz = [[ca, -sa, 0.0], [sa, ca, 0.0], [0.0, 0.0, 1.0]];
        let ry = [[cb, 0.0, sb], [0.0, 1.0, 0.0], [-sb, 0.0, cb]];
        let rx = [[1.0, 0.0, 0.0], [0.0, cc, -sc], [0.0, sc, cc]];
        let mul = |a: [[f64; 3]; 3], b: [[f64; 3]; 3]| -> [[f64; 3]; 3] {
            std::array::from_fn(|i| std::array::from_fn(|j| (0..3).map(|k| a[i][k] * b[k][j]).sum()))
        };
        let r = mul(rz, mul(ry, rx));
        let t = |p: [f64; 3]| -> [f64; 3] { std::array::from_fn(|i| (0..3).map(|k| r[i][k] * p[k]).sum::<f64>() + shift[i]) };
        let a = euclidean(&pred, &gt).unwrap();
        let b = euclidean(&pred.map_points(t), &gt.map_points(t)).unwrap();
        for j in 0..NUM_LANDMARKS {
            prop_assert!((a[j].unwrap() - b[j].unwrap()).abs() < 1e-9);
        }
    }
}
