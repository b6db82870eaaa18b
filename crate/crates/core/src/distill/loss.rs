use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::geometry::{CorrespondenceSet, PointCloud};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub pos_margin: f64,
    pub neg_margin: f64,
    /// Candidates closer than this (in coordinates) to the positive match are
    /// never used as negatives.
    pub safe_radius: f64,
    pub max_pos_pairs: usize,
}

impl LossConfig {
    pub fn for_voxel(voxel_size: f64) -> Self {
        Self {
            pos_margin: 0.1,
            neg_margin: 1.4,
            safe_radius: 2.0 * voxel_size,
            max_pos_pairs: 256,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.pos_margin && self.pos_margin < self.neg_margin) {
            return Err(Error::InvalidConfig(format!(
                "margins must satisfy 0 < m_p < m_n, got {} and {}",
                self.pos_margin, self.neg_margin
            )));
        }
        if !(self.safe_radius > 0.0) || self.max_pos_pairs == 0 {
            return Err(Error::InvalidConfig("safe radius and positive cap must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct LossOutput {
    pub loss: f64,
    pub grad_fa: FeatureMatrix,
    pub grad_fb: FeatureMatrix,
    /// Positive pairs used after subsampling.
    pub positives: usize,
    /// Anchors (over both directions) without any negative candidate.
    pub missing_negatives: usize,
}

fn dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

fn coord_dist_sq(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Adds `scale * (x - y)` to `gx` and subtracts it from `gy`.
fn push_apart(gx: &mut [f64], gy: &mut [f64], x: &[f64], y: &[f64], scale: f64) {
    for c in 0..x.len() {
        let v = scale * (x[c] - y[c]);
        gx[c] += v;
        gy[c] -= v;
    }
}

/// Hardest-contrastive loss over pseudo-label pairs `c_ref` (indices into
/// `fa`/`fb` and `coords_a`/`coords_b`).
///
/// `L = Lp + (Lab + Lba) / 2`, each term averaged over the positives `P`:
/// `Lp` squares `max(0, d(fa_i, fb_j) - m_p)`, `Lab` squares
/// `max(0, m_n - min_k d(fa_i, fb_k))` over positives' b points `k` farther
/// than the safe radius from `j`, and `Lba` mirrors it. `P` is subsampled
/// to `max_pos_pairs` with `rng`. Gradients hold the hardest negatives fixed.
pub fn hardest_contrastive_loss<R: Rng + ?Sized>(
    c_ref: &CorrespondenceSet,
    fa: &FeatureMatrix,
    fb: &FeatureMatrix,
    coords_a: &PointCloud,
    coords_b: &PointCloud,
    cfg: &LossConfig,
    rng: &mut R,
) -> Result<LossOutput> {
    cfg.validate()?;
    if c_ref.is_empty() {
        return Err(Error::EmptyCorrespondences);
    }
    if fa.cols() != fb.cols() {
        return Err(Error::ShapeMismatch(format!("feature widths {} and {}", fa.cols(), fb.cols())));
    }
    if fa.rows() != coords_a.len() || fb.rows() != coords_b.len() {
        return Err(Error::ShapeMismatch("feature rows must match cloud sizes".into()));
    }
    c_ref.validate(fa.rows(), fb.rows())?;

    let pairs: Vec<(usize, usize)> = if c_ref.len() > cfg.max_pos_pairs {
        let mut pos = sample(rng, c_ref.len(), cfg.max_pos_pairs).into_vec();
        pos.sort_unstable();
        pos.into_iter().map(|p| c_ref.pairs()[p]).collect()
    } else {
        c_ref.pairs().to_vec()
    };
    let n = pairs.len();
    let inv = 1.0 / n as f64;
    let width = fa.cols();
    let mut ga = vec![0.0; fa.rows() * width];
    let mut gb = vec![0.0; fb.rows() * width];
    let r2 = cfg.safe_radius * cfg.safe_radius;
    let mut loss = 0.0;
    let mut missing = 0;

    for &(i, j) in &pairs {
        let d = dist(fa.row(i), fb.row(j));
        let h = d - cfg.pos_margin;
        if h > 0.0 {
            loss += inv * h * h;
            let (gi, gj) = (&mut ga[i * width..(i + 1) * width], &mut gb[j * width..(j + 1) * width]);
            push_apart(gi, gj, fa.row(i), fb.row(j), 2.0 * inv * h / d);
        }
    }

    // Direction AB: anchor fa_i against positives' b rows, and BA mirrored.
    for direction in 0..2 {
        for &(i, j) in &pairs {
            let (anchor, anchor_idx, match_coords, match_idx, pool_feats) = if direction == 0 {
                (fa.row(i), i, coords_b, j, fb)
            } else {
                (fb.row(j), j, coords_a, i, fa)
            };
            let mut best: Option<(usize, f64)> = None;
            for &(pi, pj) in &pairs {
                let k = if direction == 0 { pj } else { pi };
                if coord_dist_sq(match_coords.point(k), match_coords.point(match_idx)) <= r2 {
                    continue;
                }
                let d = dist(anchor, pool_feats.row(k));
                if best.is_none_or(|(_, bd)| d < bd) {
                    best = Some((k, d));
                }
            }
            let Some((k, d)) = best else {
                missing += 1;
                continue;
            };
            let h = cfg.neg_margin - d;
            if h <= 0.0 {
                continue;
            }
            loss += 0.5 * inv * h * h;
            if d == 0.0 {
                continue;
            }
            // d/dx (m - |x - y|)^2 = -2 (m - d) (x - y) / d
            let scale = -inv * h / d;
            let (g_anchor, g_pool) = if direction == 0 { (&mut ga, &mut gb) } else { (&mut gb, &mut ga) };
            let y = pool_feats.row(k);
            for c in 0..width {
                let v = scale * (anchor[c] - y[c]);
                g_anchor[anchor_idx * width + c] += v;
                g_pool[k * width + c] -= v;
            }
        }
    }

    Ok(LossOutput {
        loss,
        grad_fa: FeatureMatrix::new(fa.rows(), width, ga)?,
        grad_fb: FeatureMatrix::new(fb.rows(), width, gb)?,
        positives: n,
        missing_negatives: missing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> LossConfig {
        LossConfig {
            pos_margin: 0.1,
            neg_margin: 1.4,
            safe_radius: 0.2,
            max_pos_pairs: 256,
        }
    }

    fn line(n: usize) -> PointCloud {
        PointCloud::new(3, (0..n).flat_map(|i| [i as f64, 0.0, 0.0]).collect()).unwrap()
    }

    #[test]
    fn single_positive_hinge() {
        let fa = FeatureMatrix::new(1, 2, vec![0.0, 0.0]).unwrap();
        let fb = FeatureMatrix::new(1, 2, vec![0.6, 0.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = hardest_contrastive_loss(&CorrespondenceSet::identity(1), &fa, &fb, &line(1), &line(1), &cfg(), &mut rng)
            .unwrap();
        assert!((out.loss - 0.25).abs() < 1e-15);
        assert_eq!(out.missing_negatives, 2);
        assert!((out.grad_fa.row(0)[0] + 1.0).abs() < 1e-15);
        assert!((out.grad_fb.row(0)[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn dead_hinges_give_zero() {
        // Matching rows coincide; distinct rows are 2 apart (> m_n).
        let rows = [[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0]];
        let mut vals: Vec<f64> = rows.iter().flatten().copied().collect();
        vals[4..6].copy_from_slice(&[0.0, 3.0]);
        let fa = FeatureMatrix::new(3, 2, vals.clone()).unwrap();
        let fb = FeatureMatrix::new(3, 2, vals).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = hardest_contrastive_loss(&CorrespondenceSet::identity(3), &fa, &fb, &line(3), &line(3), &cfg(), &mut rng)
            .unwrap();
        assert_eq!(out.loss, 0.0);
        assert!(out.grad_fa.values().iter().chain(out.grad_fb.values()).all(|g| *g == 0.0));
    }

    #[test]
    fn empty_labels_rejected() {
        let f = FeatureMatrix::new(1, 1, vec![0.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = hardest_contrastive_loss(&CorrespondenceSet::new(vec![]), &f, &f, &line(1), &line(1), &cfg(), &mut rng);
        assert!(matches!(err, Err(Error::EmptyCorrespondences)));
    }

    #[test]
    fn positives_are_capped() {
        let n = 40;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = FeatureMatrix::new(n, 4, (0..n * 4).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let small = LossConfig { max_pos_pairs: 7, ..cfg() };
        let out = hardest_contrastive_loss(&CorrespondenceSet::identity(n), &f, &f, &line(n), &line(n), &small, &mut rng)
            .unwrap();
        assert_eq!(out.positives, 7);
        assert!(out.loss >= 0.0);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (n, w) = (12, 5);
        let fa_vals: Vec<f64> = (0..n * w).map(|_| rng.random_range(-0.6..0.6)).collect();
        let fb_vals: Vec<f64> = (0..n * w).map(|_| rng.random_range(-0.6..0.6)).collect();
        let corr = CorrespondenceSet::new((0..n).map(|i| (i, (i * 5) % n)).collect());
        let eval = |a: &[f64], b: &[f64]| {
            let fa = FeatureMatrix::new(n, w, a.to_vec()).unwrap();
            let fb = FeatureMatrix::new(n, w, b.to_vec()).unwrap();
            let mut r = ChaCha8Rng::seed_from_u64(0);
            hardest_contrastive_loss(&corr, &fa, &fb, &line(n), &line(n), &cfg(), &mut r).unwrap()
        };
        let base = eval(&fa_vals, &fb_vals);
        let h = 1e-5;
        let (mut num, mut ana) = (Vec::new(), Vec::new());
        for idx in 0..n * w {
            let (mut p, mut m) = (fa_vals.clone(), fa_vals.clone());
            p[idx] += h;
            m[idx] -= h;
            num.push((eval(&p, &fb_vals).loss - eval(&m, &fb_vals).loss) / (2.0 * h));
            ana.push(base.grad_fa.values()[idx]);
            let (mut p, mut m) = (fb_vals.clone(), fb_vals.clone());
            p[idx] += h;
            m[idx] -= h;
            num.push((eval(&fa_vals, &p).loss - eval(&fa_vals, &m).loss) / (2.0 * h));
            ana.push(base.grad_fb.values()[idx]);
        }
        let diff = num.iter().zip(&ana).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let scale = ana.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(scale > 0.0);
        assert!(diff / scale < 1e-4, "relative error {}", diff / scale);
    }
}
