//! Ground-truth evaluation. This is the only module that reads poses from
//! an [`EvalSet`]; it also hosts the supervised reference trainer.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::{EvalSet, ScenePair};
use crate::distill::{fpfh_radii, prepare, run_training, DistillSchedule, LabelSource, TrainConfig, TrainOutcome};
use crate::error::{Error, Result};
use crate::features::{fpfh_compute, local_encoding, net_forward, Checkpoint, FeatureMatrix};
use crate::geometry::{rre, rte, CorrespondenceSet, PointCloud, RigidTransform};
use crate::solvers::{icp_refine, inlier_ratio, match_features, ransac_register, refine_correspondences, RansacConfig, RefineConfig};
use crate::spatial::voxel_downsample;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalThresholds {
    pub rte_max: f64,
    /// Degrees.
    pub rre_max: f64,
    pub fmr_ir_min: f64,
    pub tau1: f64,
}

impl EvalThresholds {
    /// 30 cm and 15 degrees.
    pub fn indoor(voxel_size: f64) -> Self {
        Self {
            rte_max: 0.3,
            rre_max: 15.0,
            fmr_ir_min: 0.05,
            tau1: 2.0 * voxel_size,
        }
    }

    /// 50 cm and 1 degree.
    pub fn radar(voxel_size: f64) -> Self {
        Self {
            rte_max: 0.5,
            rre_max: 1.0,
            fmr_ir_min: 0.05,
            tau1: 2.0 * voxel_size,
        }
    }

    pub fn for_dim(dim: usize, voxel_size: f64) -> Self {
        if dim == 2 {
            Self::radar(voxel_size)
        } else {
            Self::indoor(voxel_size)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if [self.rte_max, self.rre_max, self.fmr_ir_min, self.tau1].iter().all(|v| *v > 0.0) {
            Ok(())
        } else {
            Err(Error::InvalidConfig("evaluation thresholds must be positive".into()))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub voxel_size: f64,
    pub ransac: RansacConfig,
    pub refine: RefineConfig,
    pub thresholds: EvalThresholds,
}

impl EvalConfig {
    pub fn for_voxel(voxel_size: f64, dim: usize) -> Self {
        Self {
            voxel_size,
            ransac: RansacConfig::for_voxel(voxel_size, dim),
            refine: RefineConfig::for_voxel(voxel_size),
            thresholds: EvalThresholds::for_dim(dim, voxel_size),
        }
    }
}

/// Descriptor source for evaluation. `Custom` receives the pair id and the
/// voxelized clouds.
pub enum Matcher<'a> {
    Net(&'a Checkpoint),
    Fpfh,
    Custom(&'a dyn Fn(&str, &PointCloud, &PointCloud) -> Result<(FeatureMatrix, FeatureMatrix)>),
}

impl Matcher<'_> {
    fn name(&self) -> &'static str {
        match self {
            Matcher::Net(_) => "net",
            Matcher::Fpfh => "fpfh",
            Matcher::Custom(_) => "custom",
        }
    }

    fn describe(&self, id: &str, a: &PointCloud, b: &PointCloud, voxel_size: f64) -> Result<(FeatureMatrix, FeatureMatrix)> {
        match self {
            Matcher::Net(ckpt) => {
                let f = |c: &PointCloud| net_forward(&ckpt.params, &local_encoding(c, &ckpt.encoding)?, ckpt.normalize);
                Ok((f(a)?, f(b)?))
            }
            Matcher::Fpfh => {
                let (nr, fr) = fpfh_radii(voxel_size);
                Ok((fpfh_compute(a, nr, fr)?.features, fpfh_compute(b, nr, fr)?.features))
            }
            Matcher::Custom(f) => f(id, a, b),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairResult {
    pub id: String,
    /// `None` when no transform could be estimated.
    pub rte: Option<f64>,
    pub rre: Option<f64>,
    pub ir_unsup: f64,
    pub ir_gt: f64,
    pub success: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub rr: f64,
    pub fmr_gt: f64,
    pub fmr_unsup: f64,
    pub mean_ir_gt: f64,
    /// Over successful pairs only.
    pub mean_rte: Option<f64>,
    pub mean_rre: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    pub matcher: String,
    pub voxel_size: f64,
    pub tau1: f64,
    pub tau2: f64,
    pub ransac_iters: usize,
    pub use_icp: bool,
    pub refit_on_inliers: bool,
    pub thresholds: EvalThresholds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema: String,
    pub version: String,
    pub seed: u64,
    pub config: ReportConfig,
    pub pairs: Vec<PairResult>,
    pub aggregates: Aggregates,
}

impl EvalReport {
    pub const SCHEMA: &'static str = "direg-report/1";

    /// Aggregates derived from `pairs` alone.
    pub fn recompute(pairs: &[PairResult], fmr_ir_min: f64) -> Aggregates {
        let n = pairs.len().max(1) as f64;
        let frac = |pred: &dyn Fn(&PairResult) -> bool| pairs.iter().filter(|p| pred(p)).count() as f64 / n;
        let successes: Vec<&PairResult> = pairs.iter().filter(|p| p.success).collect();
        let mean_of = |get: &dyn Fn(&PairResult) -> Option<f64>| {
            (!successes.is_empty())
                .then(|| successes.iter().filter_map(|p| get(p)).sum::<f64>() / successes.len() as f64)
        };
        Aggregates {
            rr: frac(&|p| p.success),
            fmr_gt: frac(&|p| p.ir_gt > fmr_ir_min),
            fmr_unsup: frac(&|p| p.ir_unsup > fmr_ir_min),
            mean_ir_gt: pairs.iter().map(|p| p.ir_gt).sum::<f64>() / n,
            mean_rte: mean_of(&|p| p.rte),
            mean_rre: mean_of(&|p| p.rre),
        }
    }

    pub fn is_consistent(&self) -> bool {
        Self::recompute(&self.pairs, self.config.thresholds.fmr_ir_min) == self.aggregates
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let io = |e| Error::io("<report csv>", e);
        let opt = |v: Option<f64>| v.map(|x| format!("{x:?}")).unwrap_or_default();
        writeln!(out, "id,rte,rre,ir_unsup,ir_gt,success").map_err(io)?;
        for p in &self.pairs {
            writeln!(
                out,
                "{},{},{},{:?},{:?},{}",
                p.id,
                opt(p.rte),
                opt(p.rre),
                p.ir_unsup,
                p.ir_gt,
                p.success
            )
            .map_err(io)?;
        }
        Ok(())
    }
}

/// Outcome of registering one pair without ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Registration {
    pub transform: RigidTransform,
    /// Unsupervised IR of the putative matches under `transform`.
    pub inlier_ratio: f64,
    pub correspondences: usize,
    pub points_a: usize,
    pub points_b: usize,
}

/// RANSAC (then ICP when enabled) on putative matches between voxelized
/// clouds. `Ok(None)` when no hypothesis could be formed.
fn solve(a: &PointCloud, b: &PointCloud, raw: &CorrespondenceSet, cfg: &EvalConfig) -> Result<Option<RigidTransform>> {
    let ransac = RansacConfig {
        inlier_threshold: cfg.thresholds.tau1,
        ..cfg.ransac.clone()
    };
    match ransac_register(a, b, raw, &ransac) {
        Ok(fit) if cfg.refine.use_icp => Ok(Some(icp_refine(a, b, &fit.transform, &cfg.refine).unwrap_or(fit.transform))),
        Ok(fit) => Ok(Some(fit.transform)),
        Err(Error::NoValidHypothesis | Error::DegenerateInput(_) | Error::TooFewCorrespondences { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Voxelizes both clouds, describes them with `matcher`, and estimates the
/// pose mapping `a` onto `b`.
pub fn register(a: &PointCloud, b: &PointCloud, matcher: &Matcher, cfg: &EvalConfig) -> Result<Registration> {
    cfg.thresholds.validate()?;
    cfg.refine.validate()?;
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    let a = voxel_downsample(a, cfg.voxel_size)?;
    let b = voxel_downsample(b, cfg.voxel_size)?;
    let (fa, fb) = matcher.describe("", &a, &b, cfg.voxel_size)?;
    let raw = match_features(&fa, &fb)?;
    let transform = solve(&a, &b, &raw, cfg)?.ok_or(Error::NoValidHypothesis)?;
    Ok(Registration {
        inlier_ratio: inlier_ratio(&a, &b, &raw, &transform, cfg.thresholds.tau1)?,
        transform,
        correspondences: raw.len(),
        points_a: a.len(),
        points_b: b.len(),
    })
}

fn evaluate_pair(pair: &ScenePair, gt: &RigidTransform, matcher: &Matcher, cfg: &EvalConfig) -> Result<PairResult> {
    let a = voxel_downsample(&pair.a, cfg.voxel_size)?;
    let b = voxel_downsample(&pair.b, cfg.voxel_size)?;
    let (fa, fb) = matcher.describe(&pair.id, &a, &b, cfg.voxel_size)?;
    let raw = match_features(&fa, &fb)?;
    let tau1 = cfg.thresholds.tau1;
    let ir_gt = inlier_ratio(&a, &b, &raw, gt, tau1)?;
    Ok(match solve(&a, &b, &raw, cfg)? {
        Some(t) => {
            let (e_t, e_r) = (rte(&t, gt), rre(&t, gt));
            PairResult {
                id: pair.id.clone(),
                rte: Some(e_t),
                rre: Some(e_r),
                ir_unsup: inlier_ratio(&a, &b, &raw, &t, tau1)?,
                ir_gt,
                success: e_t < cfg.thresholds.rte_max && e_r < cfg.thresholds.rre_max,
            }
        }
        None => PairResult {
            id: pair.id.clone(),
            rte: None,
            rre: None,
            ir_unsup: 0.0,
            ir_gt,
            success: false,
        },
    })
}

/// Registers every pair and scores the estimate against its pose. Rows are
/// ordered by pair id.
pub fn evaluate(set: &EvalSet, matcher: &Matcher, cfg: &EvalConfig) -> Result<EvalReport> {
    cfg.thresholds.validate()?;
    cfg.refine.validate()?;
    let mut pairs = set
        .pairs
        .iter()
        .map(|p| evaluate_pair(&p.pair, &p.gt, matcher, cfg))
        .collect::<Result<Vec<_>>>()?;
    pairs.sort_by(|x, y| x.id.cmp(&y.id));
    let aggregates = EvalReport::recompute(&pairs, cfg.thresholds.fmr_ir_min);
    Ok(EvalReport {
        schema: EvalReport::SCHEMA.to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.ransac.seed,
        config: ReportConfig {
            matcher: matcher.name().to_string(),
            voxel_size: cfg.voxel_size,
            tau1: cfg.thresholds.tau1,
            tau2: cfg.refine.refine_threshold,
            ransac_iters: cfg.ransac.max_iterations,
            use_icp: cfg.refine.use_icp,
            refit_on_inliers: true,
            thresholds: cfg.thresholds.clone(),
        },
        pairs,
        aggregates,
    })
}

/// Reference model trained on ground-truth correspondences: pairs of
/// voxelized points within τ₂ of each other under the true pose.
pub fn train_supervised(
    train: &EvalSet,
    val: &[ScenePair],
    cfg: &TrainConfig,
    schedule: &DistillSchedule,
) -> Result<TrainOutcome> {
    let pairs: Vec<ScenePair> = train.pairs.iter().map(|p| p.pair.clone()).collect();
    let labels = train
        .pairs
        .iter()
        .map(|p| {
            let prepared = prepare(&p.pair, cfg)?;
            refine_correspondences(&prepared.a, &prepared.b, &p.gt, cfg.refine.refine_threshold)
        })
        .collect::<Result<Vec<_>>>()?;
    run_training(&pairs, val, cfg, schedule, LabelSource::Fixed(&labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_pair, LabeledPair, SynthConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn noiseless_set(n: usize) -> EvalSet {
        let cfg = SynthConfig {
            noise_sigma: 0.0,
            outlier_fraction: 0.0,
            points_per_cloud: 400,
            ..SynthConfig::indoor()
        };
        let pairs = (0..n)
            .map(|i| {
                let p = generate_pair(&cfg, &mut ChaCha8Rng::seed_from_u64(i as u64)).unwrap();
                LabeledPair {
                    pair: ScenePair {
                        id: format!("p{i}"),
                        a: p.a,
                        b: p.b,
                    },
                    gt: p.gt,
                }
            })
            .collect();
        EvalSet::from_pairs(3, pairs).unwrap()
    }

    #[test]
    fn oracle_features_register_everything() {
        let set = noiseless_set(4);
        let gts: Vec<(String, RigidTransform)> = set.pairs.iter().map(|p| (p.pair.id.clone(), p.gt.clone())).collect();
        let oracle = move |id: &str, a: &PointCloud, b: &PointCloud| {
            let gt = &gts.iter().find(|(i, _)| i == id).unwrap().1;
            let moved = gt.apply(a)?;
            Ok((
                FeatureMatrix::new(a.len(), 3, moved.coords().to_vec())?,
                FeatureMatrix::new(b.len(), 3, b.coords().to_vec())?,
            ))
        };
        let cfg = EvalConfig::for_voxel(0.1, 3);
        let report = evaluate(&set, &Matcher::Custom(&oracle), &cfg).unwrap();
        assert_eq!(report.aggregates.rr, 1.0);
        assert!(report.aggregates.mean_rte.unwrap() < 0.05, "{:?}", report.aggregates);
        assert!(report.is_consistent());
        assert_eq!(report.config.thresholds.rte_max, 0.3);
        assert_eq!(report.config.thresholds.rre_max, 15.0);
        assert!(report.to_json().unwrap().contains("\"schema\": \"direg-report/1\""));
    }

    fn row(id: &str, rte: f64, rre: f64, ir: f64) -> PairResult {
        let t = EvalThresholds::indoor(0.1);
        PairResult {
            id: id.into(),
            rte: Some(rte),
            rre: Some(rre),
            ir_unsup: ir,
            ir_gt: ir,
            success: rte < t.rte_max && rre < t.rre_max,
        }
    }

    #[test]
    fn aggregates_follow_strict_rules() {
        let rows = vec![
            row("a", 0.1, 2.0, 0.05),
            row("b", 0.3, 2.0, 0.5),
            row("c", 0.1, 15.0, 0.2),
            row("d", 0.2, 4.0, 0.01),
        ];
        assert!(!rows[1].success && !rows[2].success);
        let agg = EvalReport::recompute(&rows, 0.05);
        assert_eq!(agg.rr, 0.5);
        assert_eq!(agg.fmr_gt, 0.5);
        assert!((agg.mean_rte.unwrap() - 0.15).abs() < 1e-15);
        assert!((agg.mean_rre.unwrap() - 3.0).abs() < 1e-15);
    }

    #[test]
    fn csv_lists_every_pair() {
        let set = noiseless_set(2);
        let report = evaluate(&set, &Matcher::Fpfh, &EvalConfig::for_voxel(0.1, 3)).unwrap();
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.starts_with("id,rte,rre,ir_unsup,ir_gt,success\n"));
    }
}
