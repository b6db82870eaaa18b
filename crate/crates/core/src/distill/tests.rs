use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::train::{fmr_of, solve_labels};
use super::*;
use crate::data::{generate_corpus, ScenePair, SynthConfig, TrainingSet};
use crate::error::Error;
use crate::features::{param_init, FeatureMatrix};
use crate::geometry::{rre, CorrespondenceSet, PointCloud, RigidTransform};
use crate::solvers::{RansacConfig, RefineConfig};
use crate::spatial::voxel_downsample;

fn small_corpus(n: usize, seed: u64) -> Vec<ScenePair> {
    let cfg = SynthConfig {
        n_pairs: n,
        points_per_cloud: 500,
        seed,
        ..SynthConfig::indoor()
    };
    generate_corpus(&cfg)
        .unwrap()
        .into_iter()
        .enumerate()
        .map(|(i, p)| ScenePair {
            id: format!("p{i}"),
            a: p.a,
            b: p.b,
        })
        .collect()
}

fn quick_cfg() -> TrainConfig {
    TrainConfig {
        epochs: 2,
        ransac: RansacConfig {
            max_iterations: 300,
            ..RansacConfig::for_voxel(0.1, 3)
        },
        ..TrainConfig::for_voxel(0.1, 3)
    }
}

#[test]
fn augmentation_preserves_teacher_and_indices() {
    let pair = &small_corpus(1, 1)[0];
    let cfg = quick_cfg();
    let aug = augment_pair(&pair.a, &pair.b, &cfg, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    assert_eq!(aug.teacher_a, pair.a);
    assert_eq!(aug.teacher_b, pair.b);
    assert_eq!(aug.rot_a.apply(&aug.teacher_a).unwrap(), aug.student_a);
    assert_eq!(aug.student_a.features(), pair.a.features());
    for (i, j) in [(0, 1), (3, 17), (5, 40)] {
        let d = |c: &PointCloud| {
            c.point(i).iter().zip(c.point(j)).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
        };
        assert!((d(&aug.student_a) - d(&pair.a)).abs() < 1e-12);
    }
    let again = augment_pair(&pair.a, &pair.b, &cfg, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    assert_eq!(again.rot_a, aug.rot_a);
    assert_eq!(again.rot_b, aug.rot_b);

    let eyoc = TrainConfig {
        augment_teacher: true,
        ..cfg
    };
    let aug = augment_pair(&pair.a, &pair.b, &eyoc, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    let (ta, _) = aug.teacher_rot.clone().unwrap();
    assert_eq!(ta.apply(&pair.a).unwrap(), aug.teacher_a);
    assert_ne!(aug.teacher_a, pair.a);
}

#[test]
fn oracle_features_give_identity_labels() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let n = 60;
    let a = PointCloud::new(3, (0..n * 3).map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0)).collect()).unwrap();
    let gt = RigidTransform::from_axis_angle([0.3, 0.5, 0.8], 0.7).with_translation(&[0.2, -0.1, 0.4]).unwrap();
    let b = gt.apply(&a).unwrap();
    let mut onehot = vec![0.0; n * n];
    (0..n).for_each(|i| onehot[i * n + i] = 1.0);
    let f = FeatureMatrix::new(n, n, onehot).unwrap();
    let out = solve_labels(
        &a,
        &b,
        &f,
        &f,
        &RansacConfig::for_voxel(0.01, 3),
        &RefineConfig::for_voxel(0.01),
    )
    .unwrap();
    let LabelOutcome::Labeled(label) = out else { panic!("skipped") };
    assert_eq!(label.c_ref.pairs(), CorrespondenceSet::identity(n).pairs());
    assert!(rre(&label.transform, &gt) < 1e-6);
    assert_eq!(label.ir, 1.0);
}

#[test]
fn adversarial_features_give_low_ir() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 60;
    let a = PointCloud::new(3, (0..n * 3).map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0)).collect()).unwrap();
    let b = a.clone();
    let mut fa = vec![0.0; n * n];
    let mut fb = vec![0.0; n * n];
    for i in 0..n {
        fa[i * n + i] = 1.0;
        fb[((i * 7 + 3) % n) * n + i] = 1.0;
    }
    let fa = FeatureMatrix::new(n, n, fa).unwrap();
    let fb = FeatureMatrix::new(n, n, fb).unwrap();
    let out = solve_labels(&a, &b, &fa, &fb, &RansacConfig::for_voxel(0.01, 3), &RefineConfig::for_voxel(0.01)).unwrap();
    assert!(out.ir().is_none_or(|ir| ir < 0.2));
}

#[test]
fn fmr_counts_strictly_above() {
    let mut irs = vec![0.5; 7];
    irs.extend([0.01; 3]);
    assert!((fmr_of(&irs, 0.05) - 0.7).abs() < 1e-15);
    assert_eq!(fmr_of(&[0.05, 0.0500001], 0.05), 0.5);
    assert_eq!(fmr_of(&[1.0, 1.0], 0.05), 1.0);
    let cfg = quick_cfg();
    let params = param_init(&cfg.layer_dims(1), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert!(matches!(unsupervised_fmr(&[], &params, &cfg), Err(Error::EmptyDataset)));
}

#[test]
fn sgd_momentum_arithmetic() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let p = param_init(&[2, 3], &mut rng).unwrap();
    let g = p.zip_map(&p, |_, _| 1.0).unwrap();
    let mut opt = Sgd::new(&p, 0.1, 0.9);
    let p1 = opt.step(&p, &g).unwrap();
    let p2 = opt.step(&p1, &p.zeros_like()).unwrap();
    for ((a, b), c) in p.values().zip(p1.values()).zip(p2.values()) {
        assert!((b - (a - 0.1)).abs() < 1e-15);
        assert!((c - (b - 0.09)).abs() < 1e-15);
    }
}

fn one_step(mode: TeacherMode, alpha: (f64, f64), seed: u64) -> (StepOutcome, u64) {
    let pair = &small_corpus(1, 7)[0];
    let cfg = quick_cfg();
    let a = voxel_downsample(&pair.a, cfg.voxel_size).unwrap();
    let b = voxel_downsample(&pair.b, cfg.voxel_size).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let student = param_init(&cfg.layer_dims(1), &mut rng).unwrap();
    let teacher = param_init(&cfg.layer_dims(1), &mut rng).unwrap();
    let before = teacher.fingerprint();
    let schedule = DistillSchedule {
        alpha_start: alpha.0,
        alpha_end: alpha.1,
        ..DistillSchedule::new(mode, 10)
    };
    let aug = augment_pair(&a, &b, &cfg, &mut rng).unwrap();
    let mut opt = Sgd::new(&student, cfg.learning_rate, cfg.sgd_momentum);
    let out = train_step(&student, &teacher, &aug, &cfg, &schedule, 3, &mut opt, &mut rng).unwrap();
    assert_eq!(teacher.fingerprint(), before);
    (out, before)
}

#[test]
fn teacher_untouched_by_backprop() {
    let (frozen, before) = one_step(TeacherMode::PeriodicSgp, (0.9, 1.0), 1);
    assert_eq!(frozen.teacher.fingerprint(), before);
    let (pinned, before) = one_step(TeacherMode::ContinuousEma, (1.0, 1.0), 1);
    assert_eq!(pinned.teacher.fingerprint(), before);
    if !pinned.skipped() {
        assert_ne!(pinned.student.fingerprint(), frozen.teacher.fingerprint());
    }
}

#[test]
fn train_step_is_deterministic_and_shared_copies_student() {
    let (x, _) = one_step(TeacherMode::ContinuousEma, (0.9, 1.0), 2);
    let (y, _) = one_step(TeacherMode::ContinuousEma, (0.9, 1.0), 2);
    assert_eq!(x.student, y.student);
    assert_eq!(x.teacher, y.teacher);
    let (s, _) = one_step(TeacherMode::Shared, (0.9, 1.0), 2);
    if !s.skipped() {
        assert_eq!(s.teacher, s.student);
    }
}

fn tiny_set() -> TrainingSet {
    let mut pairs = small_corpus(4, 11);
    let val = pairs.split_off(3);
    TrainingSet::from_pairs(3, pairs, val).unwrap()
}

#[test]
fn zero_epochs_returns_initial_student() {
    let set = tiny_set();
    let cfg = TrainConfig { epochs: 0, ..quick_cfg() };
    let out = train_loop(&set, &cfg, &DistillSchedule::new(TeacherMode::ContinuousEma, 0)).unwrap();
    assert!(out.history.is_empty());
    let init = param_init(&cfg.layer_dims(1), &mut ChaCha8Rng::seed_from_u64(cfg.seed)).unwrap();
    assert_eq!(out.best_student, init);
    assert_eq!(out.best_epoch, 0);
}

#[test]
fn shared_mode_matches_zero_momentum_and_repeats() {
    let set = tiny_set();
    let cfg = quick_cfg();
    let shared = train_loop(&set, &cfg, &DistillSchedule::new(TeacherMode::Shared, 0)).unwrap();
    let zero = DistillSchedule {
        alpha_start: 0.0,
        alpha_end: 0.0,
        ..DistillSchedule::new(TeacherMode::ContinuousEma, 0)
    };
    let ema0 = train_loop(&set, &cfg, &zero).unwrap();
    assert_eq!(shared.history, ema0.history);
    assert_eq!(shared.student, ema0.student);
    assert_eq!(shared.teacher, ema0.teacher);
    let again = train_loop(&set, &cfg, &DistillSchedule::new(TeacherMode::Shared, 0)).unwrap();
    assert_eq!(again.history, shared.history);
    assert_eq!(again.history.len(), 2);
}

#[test]
fn fpfh_bootstrap_is_3d_only() {
    let pair = &small_corpus(1, 5)[0];
    let cfg = quick_cfg();
    let aug = augment_pair(&pair.a, &pair.b, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert!(fpfh_bootstrap_labels(&aug, &cfg).is_ok());
    let flat = PointCloud::new(2, (0..40).map(|i| i as f64 * 0.37 % 3.0).collect()).unwrap();
    let aug2 = augment_pair(&flat, &flat, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert!(matches!(fpfh_bootstrap_labels(&aug2, &cfg), Err(Error::Unsupported2D)));
}
