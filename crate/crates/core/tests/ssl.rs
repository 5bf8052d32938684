use volmark_core::detector::{build_detector, prepare_case, train_prepared, Detector, DetectorConfig, TrainConfig};
use volmark_core::phantom::{sample_case, PhantomCase, PhantomSpec};
use volmark_core::poselib::{Atlas, PoseLibrary};
use volmark_core::ssl::{refine, refine_batch, RefineConfig, RefineStatus};

struct Fixture {
    det: Detector,
    library: PoseLibrary,
    test: Vec<PhantomCase>,
}

/// A small detector trained briefly on a handful of phantoms.
fn fixture() -> Fixture {
    let spec = PhantomSpec { dims: [48, 48, 48], ..PhantomSpec::default() };
    let cfg = DetectorConfig { depth: 2, base_channels: 4, ..DetectorConfig::default() };
    let train: Vec<PhantomCase> = (0..6).map(|i| sample_case(&spec, 10 + i).unwrap()).collect();
    let test = (0..2).map(|i| sample_case(&spec, 90 + i).unwrap()).collect();
    let prepared: Vec<_> = train.iter().enumerate().map(|(i, c)| prepare_case(&c.volume, &c.pose, &cfg, i).unwrap()).collect();
    let mut det = build_detector(&cfg, prepared[0].input.grid.dims).unwrap();
    train_prepared(&mut det, &prepared, &TrainConfig { epochs: 2, ..TrainConfig::default() }, None, |_, _| {}).unwrap();
    let library =
        PoseLibrary::new(train.iter().enumerate().map(|(i, c)| Atlas::from_pose(format!("t{i}"), &c.pose, "train")).collect())
            .unwrap();
    Fixture { det, library, test }
}

fn every_landmark_valid(det: &Detector) -> Detector {
    let mut d = det.clone();
    // a floor below any response keeps retrieval from declining on an undertrained net
    d.cfg.confidence_floor = f64::MIN_POSITIVE;
    d
}

#[test]
fn refinement_leaves_the_base_model_untouched_and_repeats_exactly() {
    let f = fixture();
    let det = every_landmark_valid(&f.det);
    let before = det.params();
    let cfg = RefineConfig { k: 3, snapshot_each_iter: true, ..RefineConfig::default() };
    let volumes: Vec<_> = f.test.iter().map(|c| c.volume.clone()).collect();
    let a = refine_batch(&det, &volumes, &f.library, &cfg);
    let b = refine_batch(&det, &volumes, &f.library, &cfg);
    for (p, q) in before.iter().zip(det.params()) {
        assert!(p.data().iter().zip(q.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
    for (x, y) in a.iter().zip(&b) {
        let (x, y) = (x.as_ref().unwrap(), y.as_ref().unwrap());
        assert_eq!(x, y);
        assert_eq!(x.status, RefineStatus::Completed);
        assert_eq!(x.trace.len(), cfg.iterations);
        assert!(x.trace.iter().all(|r| r.pose.is_some() && r.support_ids.len() == 3));
        assert_eq!(x.trace.last().unwrap().pose.as_ref(), Some(&x.refined));
    }
}

#[test]
fn zero_iterations_return_the_plain_decode() {
    let f = fixture();
    let det = every_landmark_valid(&f.det);
    let out = refine(&det, &f.test[0].volume, &f.library, &RefineConfig { iterations: 0, ..RefineConfig::default() }).unwrap();
    let mut probe = det.clone();
    let plain = volmark_core::detector::detect(&mut probe, &f.test[0].volume).unwrap();
    assert_eq!(out.status, RefineStatus::Completed);
    assert!(out.trace.is_empty());
    assert_eq!(out.refined, plain);
    assert_eq!(out.initial, plain);
}

#[test]
fn unusable_predictions_decline_with_an_explanation() {
    let f = fixture();
    let mut det = f.det.clone();
    det.cfg.confidence_floor = f64::INFINITY;
    let out = refine(&det, &f.test[0].volume, &f.library, &RefineConfig { k: 3, ..RefineConfig::default() }).unwrap();
    assert_eq!(out.status, RefineStatus::Declined { valid: 0 });
    assert!(out.trace.is_empty());
    assert_eq!(out.refined, out.initial);
}

#[test]
fn each_update_does_not_raise_its_own_proxy_loss() {
    let f = fixture();
    let det = every_landmark_valid(&f.det);
    let volumes: Vec<_> = f.test.iter().map(|c| c.volume.clone()).collect();
    for out in refine_batch(&det, &volumes, &f.library, &RefineConfig { k: 3, ..RefineConfig::default() }) {
        let out = out.unwrap();
        assert_eq!(out.status, RefineStatus::Completed);
        for r in &out.trace {
            assert!(r.loss_after <= r.loss_before * (1.0 + 1e-6), "iteration {}: {} -> {}", r.iteration, r.loss_before, r.loss_after);
        }
    }
}
