use nalgebra::{Matrix2, Matrix3};
use serde::{Deserialize, Serialize};

use super::FeatureMatrix;
use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::spatial::NeighborIndex;

/// Channels per radius that do not depend on orientation.
const INVARIANT_CHANNELS: usize = 8;
/// Channels per radius measured against the last coordinate axis.
const ORIENTED_CHANNELS: usize = 3;

/// Parameters of the handcrafted per-point encoding.
///
/// For every radius the encoding holds three covariance eigenvalue ratios,
/// three normal-alignment statistics, a log neighbor count and the centroid
/// offset norm. With `oriented` set, three more channels per radius measure
/// the local normal, principal axis and centroid offset along the last
/// coordinate axis ("up"); those are not rotation invariant. The cloud's raw
/// extra features, min-max normalized, are appended last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodingConfig {
    pub radii: Vec<f64>,
    pub oriented: bool,
}

impl EncodingConfig {
    /// Radii of 2.5 and 5 voxels with the oriented channels enabled.
    pub fn for_voxel(voxel_size: f64) -> Self {
        Self {
            radii: vec![2.5 * voxel_size, 5.0 * voxel_size],
            oriented: true,
        }
    }

    pub fn channels_per_radius(&self) -> usize {
        INVARIANT_CHANNELS + if self.oriented { ORIENTED_CHANNELS } else { 0 }
    }

    /// Width of the encoding for a cloud with `k` extra features.
    pub fn width(&self, k: usize) -> usize {
        self.radii.len() * self.channels_per_radius() + k
    }

    pub fn validate(&self) -> Result<()> {
        if self.radii.is_empty() || self.radii.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
            return Err(Error::InvalidConfig(format!(
                "encoding radii must be positive and non-empty, got {:?}",
                self.radii
            )));
        }
        Ok(())
    }
}

/// Eigen-decomposition of a neighborhood's covariance.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LocalFrame {
    /// Descending; only the first `dim` entries are meaningful.
    pub eigenvalues: [f64; 3],
    /// `axes[i]` is the unit eigenvector of `eigenvalues[i]`.
    pub axes: [[f64; 3]; 3],
    pub centroid: [f64; 3],
}

impl LocalFrame {
    /// Eigenvector of the smallest eigenvalue.
    pub fn normal(&self, dim: usize) -> [f64; 3] {
        self.axes[dim - 1]
    }
}

pub(crate) fn local_frame(cloud: &PointCloud, neighbors: &[usize]) -> LocalFrame {
    let dim = cloud.dim();
    let mut centroid = [0.0; 3];
    for &j in neighbors {
        for (c, v) in centroid.iter_mut().zip(cloud.point(j)) {
            *c += v;
        }
    }
    let inv = 1.0 / neighbors.len() as f64;
    centroid.iter_mut().for_each(|c| *c *= inv);
    let mut cov = [[0.0; 3]; 3];
    for &j in neighbors {
        let p = cloud.point(j);
        for r in 0..dim {
            for c in r..dim {
                cov[r][c] += (p[r] - centroid[r]) * (p[c] - centroid[c]);
            }
        }
    }
    for r in 0..dim {
        for c in r..dim {
            cov[r][c] *= inv;
            cov[c][r] = cov[r][c];
        }
    }

    let mut pairs: Vec<(f64, [f64; 3])> = if dim == 3 {
        let m = Matrix3::from_fn(|r, c| cov[r][c]);
        let eig = m.symmetric_eigen();
        (0..3)
            .map(|i| {
                let v = eig.eigenvectors.column(i);
                (eig.eigenvalues[i].max(0.0), [v[0], v[1], v[2]])
            })
            .collect()
    } else {
        let m = Matrix2::from_fn(|r, c| cov[r][c]);
        let eig = m.symmetric_eigen();
        (0..2)
            .map(|i| {
                let v = eig.eigenvectors.column(i);
                (eig.eigenvalues[i].max(0.0), [v[0], v[1], 0.0])
            })
            .collect()
    };
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut frame = LocalFrame {
        eigenvalues: [0.0; 3],
        axes: [[0.0; 3]; 3],
        centroid,
    };
    for (i, (val, vec)) in pairs.into_iter().enumerate() {
        frame.eigenvalues[i] = val;
        frame.axes[i] = vec;
    }
    frame
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Per-point encoding, `N × cfg.width(k)`, row-major.
///
/// Points with fewer than three neighbors within a radius get that radius'
/// geometric channels zeroed.
pub fn local_encoding(p: &PointCloud, cfg: &EncodingConfig) -> Result<FeatureMatrix> {
    cfg.validate()?;
    let n = p.len();
    let dim = p.dim();
    let k = p.num_features();
    let width = cfg.width(k);
    let per_radius = cfg.channels_per_radius();
    let up = dim - 1;
    let index = NeighborIndex::from_cloud(p);
    let mut out = vec![0.0; n * width];
    let mut hits = Vec::new();
    let extra = normalized_extra(p);

    for (ri, &radius) in cfg.radii.iter().enumerate() {
        let neighborhoods: Vec<Vec<usize>> = (0..n)
            .map(|i| {
                hits.clear();
                index.radius_sq(p.point(i), radius * radius, &mut hits);
                let mut ids: Vec<usize> = hits.iter().map(|h| h.0).collect();
                ids.sort_unstable();
                ids
            })
            .collect();
        let frames: Vec<Option<LocalFrame>> = neighborhoods
            .iter()
            .map(|nb| (nb.len() >= 3).then(|| local_frame(p, nb)))
            .collect();

        for i in 0..n {
            let Some(frame) = frames[i] else { continue };
            let nb = &neighborhoods[i];
            let row = &mut out[i * width + ri * per_radius..i * width + (ri + 1) * per_radius];
            let [l1, l2, l3] = frame.eigenvalues;
            if l1 > 0.0 {
                if dim == 3 {
                    row[0] = l2 / l1;
                    row[1] = l3 / l1;
                    row[2] = l3 / (l1 + l2 + l3);
                } else {
                    row[0] = l2 / l1;
                    row[1] = l2 / (l1 + l2);
                    row[2] = l1.sqrt() / radius;
                }
            }

            let normal = &frame.normal(dim)[..dim];
            let pi = p.point(i);
            let (mut sum, mut sum_sq, mut lift, mut count) = (0.0, 0.0, 0.0, 0usize);
            for &j in nb {
                if j == i {
                    continue;
                }
                let offset: Vec<f64> = p.point(j).iter().zip(pi).map(|(q, x)| q - x).collect();
                lift += dot(normal, &offset).abs() / radius;
                if let Some(other) = frames[j] {
                    let a = dot(normal, &other.normal(dim)[..dim]).abs();
                    sum += a;
                    sum_sq += a * a;
                }
                count += 1;
            }
            if count > 0 {
                let c = count as f64;
                let mean = sum / c;
                row[3] = mean;
                row[4] = (sum_sq / c - mean * mean).max(0.0).sqrt();
                row[5] = lift / c;
            }
            row[6] = (1.0 + nb.len() as f64).ln();
            let shift: Vec<f64> = frame.centroid[..dim].iter().zip(pi).map(|(c, x)| c - x).collect();
            row[7] = dot(&shift, &shift).sqrt() / radius;

            if cfg.oriented {
                row[8] = normal[up].abs();
                row[9] = frame.axes[0][up].abs();
                row[10] = shift[up] / radius;
            }
        }
    }

    let base = cfg.radii.len() * per_radius;
    for i in 0..n {
        out[i * width + base..i * width + base + k].copy_from_slice(&extra[i * k..(i + 1) * k]);
    }
    FeatureMatrix::new(n, width, out)
}

/// Extra features min-max normalized per channel over the cloud, `N × k`.
fn normalized_extra(p: &PointCloud) -> Vec<f64> {
    let (n, k) = (p.len(), p.num_features());
    let mut out = vec![0.0; n * k];
    for c in 0..k {
        let (lo, hi) = (0..n).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), i| {
            let v = p.point_features(i)[c];
            (lo.min(v), hi.max(v))
        });
        let span = hi - lo;
        if span > 0.0 {
            for i in 0..n {
                out[i * k + c] = (p.point_features(i)[c] - lo) / span;
            }
        }
    }
    out
}
