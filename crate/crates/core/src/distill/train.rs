use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{hardest_contrastive_loss, LossConfig};
use super::schedule::{cosine_alpha, ema_update, DistillSchedule, TeacherMode};
use crate::data::{shuffled, ScenePair, TrainingSet};
use crate::error::{Error, Result};
use crate::features::{
    fpfh_compute, local_encoding, net_backward, net_forward, param_init, EncodingConfig, FeatureMatrix, NetParams,
};
use crate::geometry::{random_rotation, CorrespondenceSet, PointCloud, RigidTransform};
use crate::solvers::{
    icp_refine, inlier_ratio, match_features, ransac_register, refine_correspondences, verify_label, RansacConfig,
    RefineConfig,
};
use crate::spatial::voxel_downsample;

/// Where the very first pseudo-labels come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bootstrap {
    RandomTeacher,
    Fpfh,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub sgd_momentum: f64,
    pub loss: LossConfig,
    pub ransac: RansacConfig,
    pub refine: RefineConfig,
    pub augment_teacher: bool,
    pub bootstrap: Bootstrap,
    /// Minimum pseudo-label IR; 0 disables the verifier.
    pub verifier_threshold: f64,
    pub seed: u64,
    pub voxel_size: f64,
    pub encoding: EncodingConfig,
    pub hidden: Vec<usize>,
    pub out_dim: usize,
    pub normalize: bool,
    /// A validation pair counts toward FMR when its IR is strictly above this.
    pub fmr_ir_min: f64,
}

impl TrainConfig {
    pub fn for_voxel(voxel_size: f64, dim: usize) -> Self {
        Self {
            epochs: 10,
            learning_rate: 0.1,
            sgd_momentum: 0.9,
            loss: LossConfig::for_voxel(voxel_size),
            ransac: RansacConfig::for_voxel(voxel_size, dim),
            refine: RefineConfig::for_voxel(voxel_size),
            augment_teacher: false,
            bootstrap: Bootstrap::RandomTeacher,
            verifier_threshold: 0.0,
            seed: 0,
            voxel_size,
            encoding: EncodingConfig::for_voxel(voxel_size),
            hidden: vec![64, 64],
            out_dim: 32,
            normalize: true,
            fmr_ir_min: 0.05,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        self.refine.validate()?;
        self.encoding.validate()?;
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.sgd_momentum) {
            return Err(Error::InvalidConfig("learning rate must be positive and momentum in [0, 1)".into()));
        }
        if !(self.voxel_size > 0.0) || self.out_dim == 0 {
            return Err(Error::InvalidConfig("voxel size and output width must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.verifier_threshold) {
            return Err(Error::InvalidConfig("verifier threshold must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Network layer widths for clouds with `k` extra features.
    pub fn layer_dims(&self, k: usize) -> Vec<usize> {
        let mut dims = vec![self.encoding.width(k)];
        dims.extend(&self.hidden);
        dims.push(self.out_dim);
        dims
    }
}

/// Teacher and student views of one pair. Every view keeps the input's
/// point order, so indices mean the same physical point in all four.
#[derive(Debug, Clone)]
pub struct AugmentedPair {
    pub teacher_a: PointCloud,
    pub teacher_b: PointCloud,
    pub student_a: PointCloud,
    pub student_b: PointCloud,
    pub rot_a: RigidTransform,
    pub rot_b: RigidTransform,
    /// Rotations applied to the teacher views, when teacher augmentation is on.
    pub teacher_rot: Option<(RigidTransform, RigidTransform)>,
}

/// Independent random rotations for the student views; the teacher sees the
/// inputs unchanged unless `augment_teacher` is set.
pub fn augment_pair<R: Rng + ?Sized>(a: &PointCloud, b: &PointCloud, cfg: &TrainConfig, rng: &mut R) -> Result<AugmentedPair> {
    let rot_a = random_rotation(a.dim(), rng)?;
    let rot_b = random_rotation(b.dim(), rng)?;
    let (teacher_a, teacher_b, teacher_rot) = if cfg.augment_teacher {
        let ta = random_rotation(a.dim(), rng)?;
        let tb = random_rotation(b.dim(), rng)?;
        (ta.apply(a)?, tb.apply(b)?, Some((ta, tb)))
    } else {
        (a.clone(), b.clone(), None)
    };
    Ok(AugmentedPair {
        teacher_a,
        teacher_b,
        student_a: rot_a.apply(a)?,
        student_b: rot_b.apply(b)?,
        rot_a,
        rot_b,
        teacher_rot,
    })
}

#[derive(Debug, Clone)]
pub struct PseudoLabel {
    /// Refined correspondences in shared point indices.
    pub c_ref: CorrespondenceSet,
    /// Estimated transform between the teacher views.
    pub transform: RigidTransform,
    /// Inlier ratio of the raw feature matches under `transform`.
    pub ir: f64,
    pub n_raw: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SkipReason {
    EmptyRefined,
    SolverFailure(String),
    Rejected { ir: f64 },
}

#[derive(Debug, Clone)]
pub enum LabelOutcome {
    Labeled(PseudoLabel),
    Skipped(SkipReason),
}

impl LabelOutcome {
    pub fn ir(&self) -> Option<f64> {
        match self {
            LabelOutcome::Labeled(l) => Some(l.ir),
            LabelOutcome::Skipped(SkipReason::Rejected { ir }) => Some(*ir),
            LabelOutcome::Skipped(_) => None,
        }
    }
}

fn is_solver_failure(e: &Error) -> bool {
    matches!(
        e,
        Error::DegenerateInput(_)
            | Error::NoValidHypothesis
            | Error::NoOverlap
            | Error::TooFewCorrespondences { .. }
            | Error::EmptyCorrespondences
    )
}

/// Feature matching, RANSAC, optional ICP and coordinate-space refinement.
/// Returns the raw-match IR together with the refined labels.
pub(crate) fn solve_labels(
    a: &PointCloud,
    b: &PointCloud,
    fa: &FeatureMatrix,
    fb: &FeatureMatrix,
    ransac: &RansacConfig,
    refine: &RefineConfig,
) -> Result<LabelOutcome> {
    let raw = match_features(fa, fb)?;
    let fit = match ransac_register(a, b, &raw, ransac) {
        Ok(fit) => fit,
        Err(e) if is_solver_failure(&e) => return Ok(LabelOutcome::Skipped(SkipReason::SolverFailure(e.to_string()))),
        Err(e) => return Err(e),
    };
    let (transform, ir) = if refine.use_icp {
        match icp_refine(a, b, &fit.transform, refine) {
            Ok(t) => {
                let ir = inlier_ratio(a, b, &raw, &t, ransac.inlier_threshold)?;
                (t, ir)
            }
            Err(e) if is_solver_failure(&e) => (fit.transform, fit.inlier_ratio),
            Err(e) => return Err(e),
        }
    } else {
        (fit.transform, fit.inlier_ratio)
    };
    let c_ref = refine_correspondences(a, b, &transform, refine.refine_threshold)?;
    if c_ref.is_empty() {
        return Ok(LabelOutcome::Skipped(SkipReason::EmptyRefined));
    }
    Ok(LabelOutcome::Labeled(PseudoLabel {
        c_ref,
        transform,
        ir,
        n_raw: raw.len(),
    }))
}

fn apply_verifier(outcome: LabelOutcome, threshold: f64) -> LabelOutcome {
    match outcome {
        LabelOutcome::Labeled(l) if threshold > 0.0 && !verify_label(l.ir, threshold) => {
            LabelOutcome::Skipped(SkipReason::Rejected { ir: l.ir })
        }
        other => other,
    }
}

/// Descriptors for a cloud: encoding followed by the network.
pub fn describe(cloud: &PointCloud, params: &NetParams, cfg: &TrainConfig) -> Result<FeatureMatrix> {
    net_forward(params, &local_encoding(cloud, &cfg.encoding)?, cfg.normalize)
}

/// Teacher pseudo-labels: teacher descriptors on the teacher views, then
/// the robust solver. Nothing here feeds back into any gradient.
pub fn generate_pseudo_labels(pair: &AugmentedPair, teacher: &NetParams, cfg: &TrainConfig) -> Result<LabelOutcome> {
    let fa = describe(&pair.teacher_a, teacher, cfg)?;
    let fb = describe(&pair.teacher_b, teacher, cfg)?;
    let out = solve_labels(&pair.teacher_a, &pair.teacher_b, &fa, &fb, &cfg.ransac, &cfg.refine)?;
    Ok(apply_verifier(out, cfg.verifier_threshold))
}

/// Same pipeline with FPFH descriptors on the teacher views (3D only).
pub fn fpfh_bootstrap_labels(pair: &AugmentedPair, cfg: &TrainConfig) -> Result<LabelOutcome> {
    fpfh_labels(&pair.teacher_a, &pair.teacher_b, cfg)
}

fn fpfh_labels(a: &PointCloud, b: &PointCloud, cfg: &TrainConfig) -> Result<LabelOutcome> {
    if a.dim() != 3 {
        return Err(Error::Unsupported2D);
    }
    let (normal_r, feature_r) = fpfh_radii(cfg.voxel_size);
    let fa = match fpfh_compute(a, normal_r, feature_r) {
        Ok(f) => f.features,
        Err(Error::InvalidPointCloud(m)) => return Ok(LabelOutcome::Skipped(SkipReason::SolverFailure(m))),
        Err(e) => return Err(e),
    };
    let fb = match fpfh_compute(b, normal_r, feature_r) {
        Ok(f) => f.features,
        Err(Error::InvalidPointCloud(m)) => return Ok(LabelOutcome::Skipped(SkipReason::SolverFailure(m))),
        Err(e) => return Err(e),
    };
    let out = solve_labels(a, b, &fa, &fb, &cfg.ransac, &cfg.refine)?;
    Ok(apply_verifier(out, cfg.verifier_threshold))
}

/// Normal and feature radii used for FPFH at a given voxel size.
pub fn fpfh_radii(voxel_size: f64) -> (f64, f64) {
    (2.0 * voxel_size, 5.0 * voxel_size)
}

/// SGD with classical momentum: `v = mu v + g`, `theta -= lr v`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sgd {
    pub learning_rate: f64,
    pub momentum: f64,
    pub velocity: NetParams,
}

impl Sgd {
    pub fn new(params: &NetParams, learning_rate: f64, momentum: f64) -> Self {
        Self {
            learning_rate,
            momentum,
            velocity: params.zeros_like(),
        }
    }

    pub fn step(&mut self, params: &NetParams, grads: &NetParams) -> Result<NetParams> {
        let mu = self.momentum;
        self.velocity = self.velocity.zip_map(grads, |v, g| mu * v + g)?;
        let lr = self.learning_rate;
        params.zip_map(&self.velocity, |p, v| p - lr * v)
    }
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub student: NetParams,
    pub teacher: NetParams,
    /// `None` when the pair was skipped.
    pub loss: Option<f64>,
    pub ir: Option<f64>,
}

impl StepOutcome {
    pub fn skipped(&self) -> bool {
        self.loss.is_none()
    }
}

/// One distillation step on `pair`: teacher labels, student loss and
/// update, then the teacher update for `step`.
#[allow(clippy::too_many_arguments)]
pub fn train_step<R: Rng + ?Sized>(
    student: &NetParams,
    teacher: &NetParams,
    pair: &AugmentedPair,
    cfg: &TrainConfig,
    schedule: &DistillSchedule,
    step: usize,
    optimizer: &mut Sgd,
    rng: &mut R,
) -> Result<StepOutcome> {
    let labels = generate_pseudo_labels(pair, teacher, cfg)?;
    let student_enc = (
        local_encoding(&pair.student_a, &cfg.encoding)?,
        local_encoding(&pair.student_b, &cfg.encoding)?,
    );
    student_update(student, teacher, pair, &student_enc, &labels, cfg, schedule, step, optimizer, rng)
}

/// Loss, backpropagation into the student only, and the teacher update.
#[allow(clippy::too_many_arguments)]
pub(crate) fn student_update<R: Rng + ?Sized>(
    student: &NetParams,
    teacher: &NetParams,
    pair: &AugmentedPair,
    student_enc: &(FeatureMatrix, FeatureMatrix),
    labels: &LabelOutcome,
    cfg: &TrainConfig,
    schedule: &DistillSchedule,
    step: usize,
    optimizer: &mut Sgd,
    rng: &mut R,
) -> Result<StepOutcome> {
    let LabelOutcome::Labeled(label) = labels else {
        return Ok(StepOutcome {
            student: student.clone(),
            teacher: teacher.clone(),
            loss: None,
            ir: labels.ir(),
        });
    };
    let fa = net_forward(student, &student_enc.0, cfg.normalize)?;
    let fb = net_forward(student, &student_enc.1, cfg.normalize)?;
    let loss = hardest_contrastive_loss(&label.c_ref, &fa, &fb, &pair.student_a, &pair.student_b, &cfg.loss, rng)?;
    let ga = net_backward(student, &student_enc.0, &loss.grad_fa, cfg.normalize)?;
    let gb = net_backward(student, &student_enc.1, &loss.grad_fb, cfg.normalize)?;
    let grads = ga.zip_map(&gb, |x, y| x + y)?;
    let next_student = optimizer.step(student, &grads)?;
    let next_teacher = match schedule.mode {
        TeacherMode::ContinuousEma => ema_update(teacher, &next_student, cosine_alpha(schedule, step)?)?,
        TeacherMode::Shared => ema_update(teacher, &next_student, 0.0)?,
        TeacherMode::PeriodicSgp => teacher.clone(),
    };
    Ok(StepOutcome {
        student: next_student,
        teacher: next_teacher,
        loss: Some(loss.loss),
        ir: Some(label.ir),
    })
}

/// A voxelized pair with its unrotated encodings cached.
pub(crate) struct Prepared {
    pub(crate) a: PointCloud,
    pub(crate) b: PointCloud,
    pub(crate) enc_a: FeatureMatrix,
    pub(crate) enc_b: FeatureMatrix,
}

pub(crate) fn prepare(pair: &ScenePair, cfg: &TrainConfig) -> Result<Prepared> {
    let a = voxel_downsample(&pair.a, cfg.voxel_size)?;
    let b = voxel_downsample(&pair.b, cfg.voxel_size)?;
    Ok(Prepared {
        enc_a: local_encoding(&a, &cfg.encoding)?,
        enc_b: local_encoding(&b, &cfg.encoding)?,
        a,
        b,
    })
}

/// Validation IR for every prepared pair (0 for solver failures).
fn validation_irs(pairs: &[Prepared], params: &NetParams, cfg: &TrainConfig) -> Result<Vec<f64>> {
    pairs
        .iter()
        .map(|p| {
            let fa = net_forward(params, &p.enc_a, cfg.normalize)?;
            let fb = net_forward(params, &p.enc_b, cfg.normalize)?;
            let out = solve_labels(&p.a, &p.b, &fa, &fb, &cfg.ransac, &cfg.refine)?;
            Ok(out.ir().unwrap_or(0.0))
        })
        .collect()
}

pub(crate) fn fmr_of(irs: &[f64], threshold: f64) -> f64 {
    irs.iter().filter(|&&ir| ir > threshold).count() as f64 / irs.len() as f64
}

/// Fraction of pairs whose self-estimated IR is strictly above
/// `cfg.fmr_ir_min`. Needs no ground truth.
pub fn unsupervised_fmr(pairs: &[ScenePair], params: &NetParams, cfg: &TrainConfig) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let prepared = pairs.iter().map(|p| prepare(p, cfg)).collect::<Result<Vec<_>>>()?;
    Ok(fmr_of(&validation_irs(&prepared, params, cfg)?, cfg.fmr_ir_min))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub val_fmr_unsup: f64,
    /// Mean pseudo-label IR over the epoch's training pairs.
    pub mean_ir: f64,
    pub skipped_pairs: usize,
    /// Mean validation IR, the secondary model-selection key.
    pub val_mean_ir: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best_student: NetParams,
    pub best_epoch: usize,
    pub student: NetParams,
    pub teacher: NetParams,
    pub optimizer: Sgd,
    /// Validation FMR of the initial parameters.
    pub initial_val_fmr: f64,
    pub history: Vec<EpochStats>,
}

/// Writes the history as CSV with shortest round-trip floats.
pub fn write_history<W: Write>(mut out: W, history: &[EpochStats]) -> Result<()> {
    let io = |e| Error::io("<history>", e);
    writeln!(out, "epoch,mean_loss,val_fmr_unsup,mean_ir,skipped_pairs").map_err(io)?;
    for h in history {
        writeln!(
            out,
            "{},{:?},{:?},{:?},{}",
            h.epoch, h.mean_loss, h.val_fmr_unsup, h.mean_ir, h.skipped_pairs
        )
        .map_err(io)?;
    }
    Ok(())
}

/// Label supply for [`run_training`].
pub(crate) enum LabelSource<'a> {
    /// Pseudo-labels from the teacher (or FPFH while bootstrapping).
    Distill,
    /// Fixed correspondences per training pair, indices into the voxelized clouds.
    Fixed(&'a [CorrespondenceSet]),
}

fn mix_seed(seed: u64, step: usize) -> u64 {
    let mut z = seed ^ (step as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Self-distillation over `set.train`, selecting the student with the best
/// unsupervised validation FMR (ties broken by mean validation IR, later
/// epochs winning exact ties). `schedule.total_steps` is set to
/// `epochs × |train|`.
pub fn train_loop(set: &TrainingSet, cfg: &TrainConfig, schedule: &DistillSchedule) -> Result<TrainOutcome> {
    run_training(&set.train, &set.val, cfg, schedule, LabelSource::Distill)
}

pub(crate) fn run_training(
    train: &[ScenePair],
    val: &[ScenePair],
    cfg: &TrainConfig,
    schedule: &DistillSchedule,
    source: LabelSource<'_>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    schedule.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let k = train[0].a.num_features();
    if train.iter().chain(val).any(|p| p.a.num_features() != k || p.b.num_features() != k) {
        return Err(Error::InvalidPointCloud("all clouds need the same number of features".into()));
    }
    if let LabelSource::Fixed(labels) = &source {
        if labels.len() != train.len() {
            return Err(Error::ShapeMismatch("one label set per training pair is required".into()));
        }
    }
    let schedule = DistillSchedule {
        total_steps: cfg.epochs * train.len(),
        ..schedule.clone()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut student = param_init(&cfg.layer_dims(k), &mut rng)?;
    let mut teacher = student.clone();
    let mut optimizer = Sgd::new(&student, cfg.learning_rate, cfg.sgd_momentum);

    let prepared_train = train.iter().map(|p| prepare(p, cfg)).collect::<Result<Vec<_>>>()?;
    let prepared_val = val.iter().map(|p| prepare(p, cfg)).collect::<Result<Vec<_>>>()?;
    let initial_irs = validation_irs(&prepared_val, &student, cfg)?;
    let initial_val_fmr = fmr_of(&initial_irs, cfg.fmr_ir_min);
    let mut best = (student.clone(), 0usize, initial_val_fmr, mean(&initial_irs));

    let fpfh_first = matches!(source, LabelSource::Distill) && cfg.bootstrap == Bootstrap::Fpfh;
    if fpfh_first && train[0].a.dim() != 3 {
        return Err(Error::Unsupported2D);
    }
    let mut cached: Vec<Option<LabelOutcome>> = vec![None; train.len()];
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut step = 0usize;

    for epoch in 1..=cfg.epochs {
        let period_start =
            schedule.mode == TeacherMode::PeriodicSgp && (epoch - 1) % schedule.refresh_every_epochs == 0;
        if period_start {
            if epoch > 1 {
                teacher = student.clone();
            }
            cached.iter_mut().for_each(|c| *c = None);
        }
        let bootstrap_epoch = fpfh_first
            && if schedule.mode == TeacherMode::PeriodicSgp {
                epoch <= schedule.refresh_every_epochs
            } else {
                epoch == 1
            };

        let (mut loss_sum, mut loss_count, mut ir_sum, mut skipped) = (0.0, 0usize, 0.0, 0usize);
        for idx in shuffled(train.len(), &mut rng) {
            let p = &prepared_train[idx];
            let aug = augment_pair(&p.a, &p.b, cfg, &mut rng)?;
            let step_cfg = TrainConfig {
                ransac: RansacConfig {
                    seed: mix_seed(cfg.seed, step),
                    ..cfg.ransac.clone()
                },
                ..cfg.clone()
            };
            let labels = match &source {
                LabelSource::Fixed(sets) => {
                    if sets[idx].is_empty() {
                        LabelOutcome::Skipped(SkipReason::EmptyRefined)
                    } else {
                        LabelOutcome::Labeled(PseudoLabel {
                            c_ref: sets[idx].clone(),
                            transform: RigidTransform::identity(p.a.dim()),
                            ir: 1.0,
                            n_raw: sets[idx].len(),
                        })
                    }
                }
                LabelSource::Distill => {
                    let reuse = bootstrap_epoch || schedule.mode == TeacherMode::PeriodicSgp;
                    match cached[idx].as_ref().filter(|_| reuse) {
                        Some(l) => l.clone(),
                        None => {
                            let l = if bootstrap_epoch {
                                fpfh_labels(&p.a, &p.b, &step_cfg)?
                            } else if cfg.augment_teacher {
                                generate_pseudo_labels(&aug, &teacher, &step_cfg)?
                            } else {
                                let fa = net_forward(&teacher, &p.enc_a, cfg.normalize)?;
                                let fb = net_forward(&teacher, &p.enc_b, cfg.normalize)?;
                                let out = solve_labels(&p.a, &p.b, &fa, &fb, &step_cfg.ransac, &cfg.refine)?;
                                apply_verifier(out, cfg.verifier_threshold)
                            };
                            if reuse {
                                cached[idx] = Some(l.clone());
                            }
                            l
                        }
                    }
                }
            };
            let student_enc = (
                local_encoding(&aug.student_a, &cfg.encoding)?,
                local_encoding(&aug.student_b, &cfg.encoding)?,
            );
            let out = student_update(
                &student,
                &teacher,
                &aug,
                &student_enc,
                &labels,
                cfg,
                &schedule,
                step,
                &mut optimizer,
                &mut rng,
            )?;
            ir_sum += out.ir.unwrap_or(0.0);
            match out.loss {
                Some(l) => {
                    loss_sum += l;
                    loss_count += 1;
                }
                None => skipped += 1,
            }
            student = out.student;
            teacher = out.teacher;
            step += 1;
        }

        let irs = validation_irs(&prepared_val, &student, cfg)?;
        let stats = EpochStats {
            epoch,
            mean_loss: if loss_count > 0 { loss_sum / loss_count as f64 } else { 0.0 },
            val_fmr_unsup: fmr_of(&irs, cfg.fmr_ir_min),
            mean_ir: ir_sum / train.len() as f64,
            skipped_pairs: skipped,
            val_mean_ir: mean(&irs),
        };
        if (stats.val_fmr_unsup, stats.val_mean_ir) >= (best.2, best.3) {
            best = (student.clone(), epoch, stats.val_fmr_unsup, stats.val_mean_ir);
        }
        history.push(stats);
    }

    Ok(TrainOutcome {
        best_student: best.0,
        best_epoch: best.1,
        student,
        teacher,
        optimizer,
        initial_val_fmr,
        history,
    })
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}
