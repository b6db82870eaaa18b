//! Correspondence generation, robust transform estimation and pseudo-label
//! refinement.

use std::io::Write;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::geometry::{kabsch_pairs, CorrespondenceSet, PointCloud, RigidTransform};
use crate::spatial::NeighborIndex;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RansacConfig {
    pub max_iterations: usize,
    /// Inlier threshold τ₁ (strict: residual < τ₁).
    pub inlier_threshold: f64,
    pub sample_size: usize,
    pub confidence: f64,
    pub seed: u64,
}

impl RansacConfig {
    /// 10k iterations, τ₁ = 2 voxels, minimal samples.
    pub fn for_voxel(voxel_size: f64, dim: usize) -> Self {
        Self {
            max_iterations: 10_000,
            inlier_threshold: 2.0 * voxel_size,
            sample_size: dim,
            confidence: 0.999,
            seed: 0,
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::InvalidConfig("RANSAC needs at least one iteration".into()));
        }
        if !(self.inlier_threshold > 0.0) {
            return Err(Error::InvalidConfig("inlier threshold must be positive".into()));
        }
        if self.sample_size < dim {
            return Err(Error::InvalidConfig(format!(
                "sample size {} is below the dimension {dim}",
                self.sample_size
            )));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(Error::InvalidConfig("confidence must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineConfig {
    /// Coordinate-space threshold τ₂ (strict: distance < τ₂).
    pub refine_threshold: f64,
    pub use_icp: bool,
    pub icp_max_iterations: usize,
    pub icp_convergence_eps: f64,
}

impl RefineConfig {
    pub fn for_voxel(voxel_size: f64) -> Self {
        Self {
            refine_threshold: 2.0 * voxel_size,
            use_icp: false,
            icp_max_iterations: 30,
            icp_convergence_eps: 1e-9,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.refine_threshold > 0.0) {
            return Err(Error::InvalidConfig("refine threshold must be positive".into()));
        }
        Ok(())
    }
}

#[inline]
fn within(dist_sq: f64, threshold: f64) -> bool {
    dist_sq.sqrt() < threshold
}

/// One-way nearest neighbor in feature space: row `i` of `fa` to its closest
/// row of `fb`, ties to the lowest index.
pub fn match_features(fa: &FeatureMatrix, fb: &FeatureMatrix) -> Result<CorrespondenceSet> {
    if fa.cols() != fb.cols() {
        return Err(Error::ShapeMismatch(format!(
            "feature widths differ: {} vs {}",
            fa.cols(),
            fb.cols()
        )));
    }
    let index = NeighborIndex::build(fb.values(), fb.cols())?;
    index.nearest(fa.values(), fa.cols())
}

/// Fraction of pairs with residual `‖R a + t − b‖ < τ₁`.
pub fn inlier_ratio(
    a: &PointCloud,
    b: &PointCloud,
    corr: &CorrespondenceSet,
    t: &RigidTransform,
    tau1: f64,
) -> Result<f64> {
    if corr.is_empty() {
        return Err(Error::EmptyCorrespondences);
    }
    corr.validate(a.len(), b.len())?;
    let inliers = corr
        .pairs()
        .iter()
        .filter(|&&(i, j)| within(t.residual_sq(a.point(i), b.point(j)), tau1))
        .count();
    Ok(inliers as f64 / corr.len() as f64)
}

#[derive(Debug, Clone)]
pub struct RansacResult {
    pub transform: RigidTransform,
    pub inlier_ratio: f64,
    /// Per correspondence, in `corr` order.
    pub inlier_mask: Vec<bool>,
    /// Valid (non-degenerate) hypotheses scored.
    pub iterations: usize,
    /// Whether the final least-squares refit on the inliers was kept.
    pub refit: bool,
    /// `(hypothesis index, inlier ratio)` at every improvement of the best.
    pub trace: Vec<(usize, f64)>,
}

struct Matched {
    dim: usize,
    src: Vec<f64>,
    dst: Vec<f64>,
}

impl Matched {
    fn new(a: &PointCloud, b: &PointCloud, corr: &CorrespondenceSet) -> Self {
        let dim = a.dim();
        let mut src = Vec::with_capacity(corr.len() * dim);
        let mut dst = Vec::with_capacity(corr.len() * dim);
        for &(i, j) in corr.pairs() {
            src.extend_from_slice(a.point(i));
            dst.extend_from_slice(b.point(j));
        }
        Self { dim, src, dst }
    }

    fn pair(&self, k: usize) -> (&[f64], &[f64]) {
        let d = self.dim;
        (&self.src[k * d..(k + 1) * d], &self.dst[k * d..(k + 1) * d])
    }

    fn len(&self) -> usize {
        self.src.len() / self.dim
    }

    fn count_inliers(&self, t: &RigidTransform, tau: f64) -> usize {
        (0..self.len())
            .filter(|&k| {
                let (p, q) = self.pair(k);
                within(t.residual_sq(p, q), tau)
            })
            .count()
    }

    fn solve(&self, positions: &[usize]) -> Result<RigidTransform> {
        kabsch_pairs(self.dim, positions.iter().map(|&k| self.pair(k)))
    }
}

fn inlier_positions(matched: &Matched, t: &RigidTransform, tau: f64) -> Vec<usize> {
    (0..matched.len())
        .filter(|&k| {
            let (p, q) = matched.pair(k);
            within(t.residual_sq(p, q), tau)
        })
        .collect()
}

/// Iterated least squares on the consensus set: rounds at τ₁, then at τ₁/2,
/// each stopping once the inlier set is stable. Returns the final transform
/// and its inlier count at τ₁.
fn local_refit(matched: &Matched, start: &RigidTransform, tau: f64) -> Option<(RigidTransform, usize)> {
    const ROUNDS: usize = 10;
    let mut current = start.clone();
    let mut solved = false;
    for threshold in [tau, 0.5 * tau] {
        let mut previous: Vec<usize> = Vec::new();
        for _ in 0..ROUNDS {
            let inliers = inlier_positions(matched, &current, threshold);
            if inliers == previous {
                break;
            }
            let Ok(next) = matched.solve(&inliers) else { break };
            current = next;
            solved = true;
            previous = inliers;
        }
    }
    solved.then(|| {
        let c = matched.count_inliers(&current, tau);
        (current, c)
    })
}

fn iterations_needed(ir: f64, sample_size: usize, confidence: f64) -> f64 {
    let good = ir.powi(sample_size as i32);
    if good >= 1.0 {
        return 0.0;
    }
    if good <= 0.0 {
        return f64::INFINITY;
    }
    (1.0 - confidence).ln() / (1.0 - good).ln()
}

/// RANSAC over minimal samples maximizing the inlier ratio, followed by an
/// iterated least-squares refit on the best hypothesis' inliers. The refit
/// is kept unless it retains fewer than 90% of the hypothesis' inliers.
///
/// Deterministic for a fixed seed. Degenerate samples are redrawn, up to ten
/// times the iteration budget in total draws.
pub fn ransac_register(
    a: &PointCloud,
    b: &PointCloud,
    corr: &CorrespondenceSet,
    cfg: &RansacConfig,
) -> Result<RansacResult> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    cfg.validate(a.dim())?;
    if corr.len() < cfg.sample_size {
        return Err(Error::TooFewCorrespondences {
            needed: cfg.sample_size,
            got: corr.len(),
        });
    }
    corr.validate(a.len(), b.len())?;
    let matched = Matched::new(a, b, corr);
    let n = matched.len();
    let tau = cfg.inlier_threshold;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut best: Option<(usize, RigidTransform)> = None;
    let mut trace = Vec::new();
    let mut valid = 0usize;
    let mut draws = 0usize;
    let mut needed = f64::INFINITY;
    let draw_cap = cfg.max_iterations.saturating_mul(10);

    while valid < cfg.max_iterations && draws < draw_cap && (valid as f64) < needed {
        draws += 1;
        let positions = sample(&mut rng, n, cfg.sample_size).into_vec();
        let Ok(hypothesis) = matched.solve(&positions) else {
            continue;
        };
        let count = matched.count_inliers(&hypothesis, tau);
        // Strictly better only: ties keep the earliest hypothesis.
        if best.as_ref().is_none_or(|(c, _)| count > *c) {
            let ir = count as f64 / n as f64;
            trace.push((valid, ir));
            needed = iterations_needed(ir, cfg.sample_size, cfg.confidence);
            best = Some((count, hypothesis));
        }
        valid += 1;
    }

    let (count, hypothesis) = best.ok_or(Error::NoValidHypothesis)?;
    let (mut transform, mut final_count, mut refit) = (hypothesis, count, false);
    if let Some((candidate, c)) = local_refit(&matched, &transform, tau) {
        // A refit that sheds many consensus pairs is treated as a collapse.
        if c * 10 >= count * 9 {
            transform = candidate;
            final_count = c;
            refit = true;
        }
    }
    let count = final_count;
    let inlier_mask = (0..n)
        .map(|k| {
            let (p, q) = matched.pair(k);
            within(transform.residual_sq(p, q), tau)
        })
        .collect();
    Ok(RansacResult {
        transform,
        inlier_ratio: count as f64 / n as f64,
        inlier_mask,
        iterations: valid,
        refit,
        trace,
    })
}

#[derive(Debug, Clone)]
pub struct IcpOutcome {
    pub transform: RigidTransform,
    /// Mean matched residual of every accepted iterate, starting with the initial transform.
    pub residuals: Vec<f64>,
}

fn matched_within(index: &NeighborIndex, a: &PointCloud, t: &RigidTransform, tau2: f64) -> (Vec<(usize, usize)>, Vec<f64>) {
    let dim = a.dim();
    let mut buf = [0.0; 3];
    let mut pairs = Vec::new();
    let mut dists = Vec::new();
    for i in 0..a.len() {
        t.transform_into(a.point(i), &mut buf[..dim]);
        let (j, d2) = index.nearest_one(&buf[..dim]);
        if within(d2, tau2) {
            pairs.push((i, j));
            dists.push(d2.sqrt());
        }
    }
    (pairs, dists)
}

/// Point-to-point ICP with residual-descent safeguarding; see [`icp_refine`].
pub fn icp_refine_traced(
    a: &PointCloud,
    b: &PointCloud,
    init: &RigidTransform,
    cfg: &RefineConfig,
) -> Result<IcpOutcome> {
    if a.dim() != b.dim() || init.dim() != a.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    cfg.validate()?;
    let tau2 = cfg.refine_threshold;
    let index = NeighborIndex::from_cloud(b);
    let (mut pairs, dists) = matched_within(&index, a, init, tau2);
    if pairs.is_empty() {
        return Err(Error::NoOverlap);
    }
    let mean = |d: &[f64]| d.iter().sum::<f64>() / d.len() as f64;
    let mut current = init.clone();
    let mut residual = mean(&dists);
    let mut residuals = vec![residual];

    for _ in 0..cfg.icp_max_iterations {
        if residual == 0.0 {
            break;
        }
        let Ok(next) = kabsch_pairs(a.dim(), pairs.iter().map(|&(i, j)| (a.point(i), b.point(j)))) else {
            break;
        };
        let (next_pairs, next_dists) = matched_within(&index, a, &next, tau2);
        if next_pairs.is_empty() {
            break;
        }
        let next_residual = mean(&next_dists);
        if next_residual > residual {
            break;
        }
        let change = residual - next_residual;
        current = next;
        residual = next_residual;
        residuals.push(residual);
        pairs = next_pairs;
        if change < cfg.icp_convergence_eps {
            break;
        }
    }
    Ok(IcpOutcome {
        transform: current,
        residuals,
    })
}

/// Point-to-point ICP: alternate nearest-neighbor matching (pairs at or
/// beyond τ₂ rejected) and least-squares alignment until the mean residual
/// stops improving by more than `icp_convergence_eps`. An iterate that would
/// raise the mean residual is discarded and the loop stops.
pub fn icp_refine(a: &PointCloud, b: &PointCloud, init: &RigidTransform, cfg: &RefineConfig) -> Result<RigidTransform> {
    icp_refine_traced(a, b, init, cfg).map(|o| o.transform)
}

/// Transforms `a` by `t`, matches each point to its nearest neighbor in `b`
/// and keeps pairs closer than `tau2`.
pub fn refine_correspondences(
    a: &PointCloud,
    b: &PointCloud,
    t: &RigidTransform,
    tau2: f64,
) -> Result<CorrespondenceSet> {
    if a.dim() != b.dim() || t.dim() != a.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    let index = NeighborIndex::from_cloud(b);
    let (pairs, dists) = matched_within(&index, a, t, tau2);
    CorrespondenceSet::with_distances(pairs, dists)
}

/// Pseudo-label verifier: accept when `ir ≥ threshold`. A zero threshold
/// disables it.
pub fn verify_label(ir: f64, threshold: f64) -> bool {
    ir >= threshold
}

/// One line of the optional pseudo-label dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabelRecord {
    pub pair_id: String,
    pub transform: RigidTransform,
    pub ir: f64,
    pub n_corr_raw: usize,
    pub n_corr_ref: usize,
}

/// Appends records as JSON lines.
pub fn write_pseudo_labels<W: Write>(mut out: W, records: &[PseudoLabelRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n").map_err(|e| Error::io("<pseudo-label dump>", e))?;
    }
    Ok(())
}
