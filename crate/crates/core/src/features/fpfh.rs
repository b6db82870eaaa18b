//! Fast Point Feature Histograms (Rusu et al.): a simplified point feature
//! histogram per point, then a distance-weighted sum over the neighborhood.

use super::encoding::local_frame;
use super::FeatureMatrix;
use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::spatial::NeighborIndex;

const BINS_PER_FEATURE: usize = 11;
pub const FPFH_BINS: usize = 3 * BINS_PER_FEATURE;
const MIN_NEIGHBORS: usize = 5;

/// Descriptors plus the rows that were zero-filled because the point had
/// fewer than five neighbors within the feature radius.
#[derive(Debug, Clone)]
pub struct FpfhResult {
    pub features: FeatureMatrix,
    pub flagged: Vec<usize>,
}

type Vec3 = [f64; 3];

fn sub(a: &[f64], b: &[f64]) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: &Vec3, b: &Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

/// Darboux-frame angle triple `(alpha, phi, theta)` for a point pair,
/// following the PCL convention for choosing the source point.
fn pair_features(p1: &[f64], n1: &Vec3, p2: &[f64], n2: &Vec3) -> Option<(f64, f64, f64)> {
    let mut d = sub(p2, p1);
    let len = dot(&d, &d).sqrt();
    if len == 0.0 {
        return None;
    }
    let angle1 = dot(n1, &d) / len;
    let angle2 = dot(n2, &d) / len;
    let (src, dst, f3) = if angle1.abs().acos() > angle2.abs().acos() {
        d = [-d[0], -d[1], -d[2]];
        (n2, n1, -angle2)
    } else {
        (n1, n2, angle1)
    };
    let mut v = cross(&d, src);
    let v_norm = dot(&v, &v).sqrt();
    if v_norm == 0.0 {
        return None;
    }
    v.iter_mut().for_each(|x| *x /= v_norm);
    let w = cross(src, &v);
    let f2 = dot(&v, dst);
    let f1 = dot(&w, dst).atan2(dot(src, dst));
    Some((f1, f2, f3))
}

fn bin(value: f64, lo: f64, hi: f64) -> usize {
    let b = ((value - lo) / (hi - lo) * BINS_PER_FEATURE as f64).floor();
    b.clamp(0.0, (BINS_PER_FEATURE - 1) as f64) as usize
}

/// 33-bin FPFH per point. Normals come from local PCA over `normal_radius`
/// and are flipped to face the origin.
pub fn fpfh_compute(p: &PointCloud, normal_radius: f64, feature_radius: f64) -> Result<FpfhResult> {
    if p.dim() != 3 {
        return Err(Error::Unsupported2D);
    }
    if p.len() < MIN_NEIGHBORS {
        return Err(Error::InvalidPointCloud(format!(
            "FPFH needs at least {MIN_NEIGHBORS} points, got {}",
            p.len()
        )));
    }
    if !(normal_radius > 0.0 && feature_radius > 0.0) {
        return Err(Error::InvalidConfig("FPFH radii must be positive".into()));
    }
    let n = p.len();
    let index = NeighborIndex::from_cloud(p);
    let mut hits = Vec::new();

    let normals: Vec<Option<Vec3>> = (0..n)
        .map(|i| {
            hits.clear();
            index.radius_sq(p.point(i), normal_radius * normal_radius, &mut hits);
            if hits.len() < 3 {
                return None;
            }
            let mut ids: Vec<usize> = hits.iter().map(|h| h.0).collect();
            ids.sort_unstable();
            let mut normal = local_frame(p, &ids).normal(3);
            let pi = p.point(i);
            if normal[0] * -pi[0] + normal[1] * -pi[1] + normal[2] * -pi[2] < 0.0 {
                normal = [-normal[0], -normal[1], -normal[2]];
            }
            Some(normal)
        })
        .collect();

    // Neighbors within the feature radius, excluding the point itself, as
    // (index, distance) sorted by index.
    let neighborhoods: Vec<Vec<(usize, f64)>> = (0..n)
        .map(|i| {
            hits.clear();
            index.radius_sq(p.point(i), feature_radius * feature_radius, &mut hits);
            let mut nb: Vec<(usize, f64)> = hits
                .iter()
                .filter(|h| h.0 != i)
                .map(|&(j, d2)| (j, d2.sqrt()))
                .collect();
            nb.sort_unstable_by_key(|h| h.0);
            nb
        })
        .collect();

    let mut spfh = vec![0.0; n * FPFH_BINS];
    for i in 0..n {
        let Some(ni) = normals[i] else { continue };
        let nb = &neighborhoods[i];
        if nb.is_empty() {
            continue;
        }
        let incr = 100.0 / nb.len() as f64;
        let row = &mut spfh[i * FPFH_BINS..(i + 1) * FPFH_BINS];
        for &(j, _) in nb {
            let Some(nj) = normals[j] else { continue };
            if let Some((f1, f2, f3)) = pair_features(p.point(i), &ni, p.point(j), &nj) {
                row[bin(f1, -std::f64::consts::PI, std::f64::consts::PI)] += incr;
                row[BINS_PER_FEATURE + bin(f2, -1.0, 1.0)] += incr;
                row[2 * BINS_PER_FEATURE + bin(f3, -1.0, 1.0)] += incr;
            }
        }
    }

    let mut out = vec![0.0; n * FPFH_BINS];
    let mut flagged = Vec::new();
    for i in 0..n {
        let nb = &neighborhoods[i];
        if nb.len() + 1 < MIN_NEIGHBORS || normals[i].is_none() {
            flagged.push(i);
            continue;
        }
        let row = &mut out[i * FPFH_BINS..(i + 1) * FPFH_BINS];
        for &(j, dist) in nb {
            if dist == 0.0 {
                continue;
            }
            let w = 1.0 / dist;
            for (acc, v) in row.iter_mut().zip(&spfh[j * FPFH_BINS..(j + 1) * FPFH_BINS]) {
                *acc += w * v;
            }
        }
        // Each angular sub-histogram of the weighted sum is rescaled to 100,
        // then the point's own SPFH is added.
        for part in 0..3 {
            let seg = &mut row[part * BINS_PER_FEATURE..(part + 1) * BINS_PER_FEATURE];
            let total: f64 = seg.iter().sum();
            if total > 0.0 {
                seg.iter_mut().for_each(|v| *v *= 100.0 / total);
            }
        }
        for (acc, v) in row.iter_mut().zip(&spfh[i * FPFH_BINS..(i + 1) * FPFH_BINS]) {
            *acc += v;
        }
    }
    Ok(FpfhResult {
        features: FeatureMatrix::new(n, FPFH_BINS, out)?,
        flagged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::random_rotation;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sphere_patch(rng: &mut ChaCha8Rng, n: usize) -> PointCloud {
        let mut coords = Vec::new();
        for _ in 0..n {
            let theta: f64 = rng.random_range(0.0..0.6);
            let phi = rng.random_range(0.0..std::f64::consts::TAU);
            coords.extend_from_slice(&[theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos() + 2.0]);
        }
        PointCloud::new(3, coords).unwrap()
    }

    fn plane(rng: &mut ChaCha8Rng, n: usize) -> PointCloud {
        let mut coords = Vec::new();
        for _ in 0..n {
            coords.extend_from_slice(&[rng.random_range(-0.6..0.6), rng.random_range(-0.6..0.6), 2.0]);
        }
        PointCloud::new(3, coords).unwrap()
    }

    #[test]
    fn rotated_copy_matches() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut coords = sphere_patch(&mut rng, 300).coords().to_vec();
        coords.extend_from_slice(plane(&mut rng, 300).coords());
        let cloud = PointCloud::new(3, coords).unwrap();
        let base = fpfh_compute(&cloud, 0.15, 0.3).unwrap();
        let rot = random_rotation(3, &mut rng).unwrap();
        let turned = fpfh_compute(&rot.apply(&cloud).unwrap(), 0.15, 0.3).unwrap();
        assert_eq!(base.flagged, turned.flagged);
        for (x, y) in base.features.values().iter().zip(turned.features.values()) {
            assert!((x - y).abs() < 1e-3, "{x} vs {y}");
        }
    }

    #[test]
    fn plane_and_sphere_differ() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let s = fpfh_compute(&sphere_patch(&mut rng, 400), 0.15, 0.3).unwrap();
        let p = fpfh_compute(&plane(&mut rng, 400), 0.15, 0.3).unwrap();
        let mean = |m: &FeatureMatrix| {
            let mut acc = vec![0.0; FPFH_BINS];
            for i in 0..m.rows() {
                for (a, v) in acc.iter_mut().zip(m.row(i)) {
                    *a += v / m.rows() as f64;
                }
            }
            acc
        };
        let (ms, mp) = (mean(&s.features), mean(&p.features));
        let dist = ms.iter().zip(&mp).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!(dist > 0.1, "{dist}");
    }

    #[test]
    fn isolated_point_is_flagged() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut coords = plane(&mut rng, 200).coords().to_vec();
        coords.extend_from_slice(&[50.0, 50.0, 50.0]);
        let cloud = PointCloud::new(3, coords).unwrap();
        let r = fpfh_compute(&cloud, 0.15, 0.3).unwrap();
        assert!(r.flagged.contains(&200));
        assert!(r.features.row(200).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn deterministic_and_3d_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let cloud = sphere_patch(&mut rng, 200);
        let a = fpfh_compute(&cloud, 0.15, 0.3).unwrap();
        let b = fpfh_compute(&cloud, 0.15, 0.3).unwrap();
        assert_eq!(a.features, b.features);
        let flat = PointCloud::new(2, vec![0.0; 20]).unwrap();
        assert!(matches!(fpfh_compute(&flat, 0.1, 0.2), Err(Error::Unsupported2D)));
    }
}
