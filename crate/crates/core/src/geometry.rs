//! Rigid-transform algebra, closed-form least-squares alignment and pose
//! error metrics.
//!
//! Transforms and clouds are either 2D or 3D. Coordinates are stored
//! row-major in flat buffers so that hot loops (RANSAC scoring, ICP) can
//! work on slices without allocating.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const ORTHONORMAL_TOL: f64 = 1e-9;

fn check_dim(dim: usize) -> Result<()> {
    if dim == 2 || dim == 3 {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("dimension must be 2 or 3, got {dim}")))
    }
}

/// A set of 2D or 3D points with `k` optional scalar features per point.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    dim: usize,
    k: usize,
    coords: Vec<f64>,
    features: Vec<f64>,
}

impl PointCloud {
    /// Builds a cloud from row-major coordinates without extra features.
    pub fn new(dim: usize, coords: Vec<f64>) -> Result<Self> {
        Self::with_features(dim, coords, 0, Vec::new())
    }

    pub fn with_features(dim: usize, coords: Vec<f64>, k: usize, features: Vec<f64>) -> Result<Self> {
        check_dim(dim)?;
        if coords.is_empty() {
            return Err(Error::InvalidPointCloud("cloud has no points".into()));
        }
        if !coords.len().is_multiple_of(dim) {
            return Err(Error::InvalidPointCloud(format!(
                "coordinate buffer of length {} is not a multiple of dim {dim}",
                coords.len()
            )));
        }
        let n = coords.len() / dim;
        if features.len() != n * k {
            return Err(Error::InvalidPointCloud(format!(
                "expected {} feature values for {n} points with k={k}, got {}",
                n * k,
                features.len()
            )));
        }
        if let Some(pos) = coords.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidPointCloud(format!(
                "non-finite coordinate in row {}",
                pos / dim
            )));
        }
        if let Some(pos) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidPointCloud(format!(
                "non-finite feature in row {}",
                pos / k
            )));
        }
        Ok(Self { dim, k, coords, features })
    }

    pub fn from_points<const D: usize>(points: &[[f64; D]]) -> Result<Self> {
        Self::new(D, points.iter().flatten().copied().collect())
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of extra per-point feature channels.
    pub fn num_features(&self) -> usize {
        self.k
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn point_features(&self, i: usize) -> &[f64] {
        &self.features[i * self.k..(i + 1) * self.k]
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn points(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.coords.chunks_exact(self.dim)
    }

    /// New cloud holding the rows in `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let mut coords = Vec::with_capacity(indices.len() * self.dim);
        let mut features = Vec::with_capacity(indices.len() * self.k);
        for &i in indices {
            coords.extend_from_slice(self.point(i));
            features.extend_from_slice(self.point_features(i));
        }
        Self::with_features(self.dim, coords, self.k, features)
    }

    /// Same points, features replaced.
    pub fn replace_features(&self, k: usize, features: Vec<f64>) -> Result<Self> {
        Self::with_features(self.dim, self.coords.clone(), k, features)
    }

    pub(crate) fn from_parts_unchecked(dim: usize, coords: Vec<f64>, k: usize, features: Vec<f64>) -> Self {
        debug_assert_eq!(coords.len() % dim, 0);
        Self { dim, k, coords, features }
    }
}

/// Index pairs `(index_a, index_b)` into two clouds, with optional per-pair
/// distances. Each `index_a` appears at most once.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorrespondenceSet {
    pairs: Vec<(usize, usize)>,
    distances: Option<Vec<f64>>,
}

impl CorrespondenceSet {
    pub fn new(pairs: Vec<(usize, usize)>) -> Self {
        Self { pairs, distances: None }
    }

    pub fn with_distances(pairs: Vec<(usize, usize)>, distances: Vec<f64>) -> Result<Self> {
        if pairs.len() != distances.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} pairs but {} distances",
                pairs.len(),
                distances.len()
            )));
        }
        Ok(Self {
            pairs,
            distances: Some(distances),
        })
    }

    /// `(i, i)` for every `i < n`.
    pub fn identity(n: usize) -> Self {
        Self::new((0..n).map(|i| (i, i)).collect())
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn distances(&self) -> Option<&[f64]> {
        self.distances.as_deref()
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Subset of pairs at the given positions; distances follow along.
    pub fn subset(&self, positions: &[usize]) -> Self {
        Self {
            pairs: positions.iter().map(|&p| self.pairs[p]).collect(),
            distances: self
                .distances
                .as_ref()
                .map(|d| positions.iter().map(|&p| d[p]).collect()),
        }
    }

    /// Checks index bounds and uniqueness of `index_a`.
    pub fn validate(&self, n_a: usize, n_b: usize) -> Result<()> {
        let mut seen = vec![false; n_a];
        for &(ia, ib) in &self.pairs {
            if ia >= n_a || ib >= n_b {
                return Err(Error::ShapeMismatch(format!(
                    "pair ({ia}, {ib}) out of bounds for clouds of size {n_a} and {n_b}"
                )));
            }
            if std::mem::replace(&mut seen[ia], true) {
                return Err(Error::ShapeMismatch(format!("index_a {ia} matched twice")));
            }
        }
        Ok(())
    }
}

/// Proper rigid motion `x -> R x + t` in 2D or 3D.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TransformRepr", into = "TransformRepr")]
pub struct RigidTransform {
    rotation: DMatrix<f64>,
    translation: DVector<f64>,
}

#[derive(Serialize, Deserialize)]
struct TransformRepr {
    dim: usize,
    rotation: Vec<Vec<f64>>,
    translation: Vec<f64>,
}

impl From<RigidTransform> for TransformRepr {
    fn from(t: RigidTransform) -> Self {
        let dim = t.dim();
        TransformRepr {
            dim,
            rotation: (0..dim)
                .map(|r| (0..dim).map(|c| t.rotation[(r, c)]).collect())
                .collect(),
            translation: t.translation.iter().copied().collect(),
        }
    }
}

impl TryFrom<TransformRepr> for RigidTransform {
    type Error = Error;

    fn try_from(repr: TransformRepr) -> Result<Self> {
        check_dim(repr.dim)?;
        if repr.rotation.len() != repr.dim || repr.rotation.iter().any(|row| row.len() != repr.dim) {
            return Err(Error::InvalidTransform(format!(
                "rotation must be {0}x{0}",
                repr.dim
            )));
        }
        let rotation = DMatrix::from_fn(repr.dim, repr.dim, |r, c| repr.rotation[r][c]);
        RigidTransform::new(rotation, DVector::from_vec(repr.translation))
    }
}

impl RigidTransform {
    /// Validates orthonormality and `det = +1` to 1e-9.
    pub fn new(rotation: DMatrix<f64>, translation: DVector<f64>) -> Result<Self> {
        let dim = rotation.nrows();
        check_dim(dim)?;
        if rotation.ncols() != dim {
            return Err(Error::InvalidTransform("rotation is not square".into()));
        }
        if translation.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: translation.len(),
            });
        }
        if rotation.iter().chain(translation.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidTransform("non-finite entry".into()));
        }
        let gram = rotation.transpose() * &rotation;
        let ortho_err = (gram - DMatrix::<f64>::identity(dim, dim)).amax();
        if ortho_err > ORTHONORMAL_TOL {
            return Err(Error::InvalidTransform(format!(
                "rotation is not orthonormal (max deviation {ortho_err:e})"
            )));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(Error::InvalidTransform(format!("rotation determinant is {det}")));
        }
        Ok(Self { rotation, translation })
    }

    pub(crate) fn from_parts_unchecked(rotation: DMatrix<f64>, translation: DVector<f64>) -> Self {
        Self { rotation, translation }
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            rotation: DMatrix::identity(dim, dim),
            translation: DVector::zeros(dim),
        }
    }

    /// Rotation by `angle` radians about `axis` (normalized internally), no translation.
    pub fn from_axis_angle(axis: [f64; 3], angle: f64) -> Self {
        let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
        let (x, y, z) = (axis[0] / n, axis[1] / n, axis[2] / n);
        let (s, c) = angle.sin_cos();
        let v = 1.0 - c;
        let rotation = DMatrix::from_row_slice(
            3,
            3,
            &[
                c + x * x * v,
                x * y * v - z * s,
                x * z * v + y * s,
                y * x * v + z * s,
                c + y * y * v,
                y * z * v - x * s,
                z * x * v - y * s,
                z * y * v + x * s,
                c + z * z * v,
            ],
        );
        Self::from_parts_unchecked(rotation, DVector::zeros(3))
    }

    /// Planar rotation by `angle` radians, no translation.
    pub fn from_angle_2d(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self::from_parts_unchecked(DMatrix::from_row_slice(2, 2, &[c, -s, s, c]), DVector::zeros(2))
    }

    pub fn with_translation(mut self, translation: &[f64]) -> Result<Self> {
        if translation.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: translation.len(),
            });
        }
        self.translation = DVector::from_column_slice(translation);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.rotation.nrows()
    }

    pub fn rotation(&self) -> &DMatrix<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &DVector<f64> {
        &self.translation
    }

    /// Writes `R p + t` into `out`.
    #[inline]
    pub fn transform_into(&self, p: &[f64], out: &mut [f64]) {
        let d = self.dim();
        for (r, o) in out.iter_mut().enumerate().take(d) {
            let mut acc = self.translation[r];
            for (c, pc) in p.iter().enumerate().take(d) {
                acc += self.rotation[(r, c)] * pc;
            }
            *o = acc;
        }
    }

    /// Squared distance between `R p + t` and `q`.
    #[inline]
    pub fn residual_sq(&self, p: &[f64], q: &[f64]) -> f64 {
        let mut buf = [0.0; 3];
        let d = self.dim();
        self.transform_into(p, &mut buf[..d]);
        buf[..d].iter().zip(q).map(|(x, y)| (x - y) * (x - y)).sum()
    }

    /// Applies the transform to every point; features are copied unchanged.
    pub fn apply(&self, p: &PointCloud) -> Result<PointCloud> {
        if p.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: p.dim(),
            });
        }
        let d = self.dim();
        let mut coords = vec![0.0; p.coords().len()];
        for (src, dst) in p.points().zip(coords.chunks_exact_mut(d)) {
            self.transform_into(src, dst);
        }
        Ok(PointCloud::from_parts_unchecked(
            d,
            coords,
            p.num_features(),
            p.features().to_vec(),
        ))
    }

    /// `self ∘ other`: applying the result equals applying `other` then `self`.
    pub fn compose(&self, other: &RigidTransform) -> Result<RigidTransform> {
        if other.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: other.dim(),
            });
        }
        Ok(Self {
            rotation: &self.rotation * &other.rotation,
            translation: &self.rotation * &other.translation + &self.translation,
        })
    }

    pub fn invert(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        let translation = -(&rt * &self.translation);
        Self {
            rotation: rt,
            translation,
        }
    }

    /// Row-major homogeneous matrix, `(dim+1)^2` entries.
    pub fn to_homogeneous(&self) -> Vec<f64> {
        let d = self.dim();
        let mut m = vec![0.0; (d + 1) * (d + 1)];
        for r in 0..d {
            for c in 0..d {
                m[r * (d + 1) + c] = self.rotation[(r, c)];
            }
            m[r * (d + 1) + d] = self.translation[r];
        }
        m[(d + 1) * (d + 1) - 1] = 1.0;
        m
    }
}

fn check_pair_dims(a: &PointCloud, b: &PointCloud) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    Ok(())
}

/// Closed-form least-squares rigid alignment over the matched pairs
/// (Kabsch with determinant sign correction, no scale).
pub fn kabsch_solve(a: &PointCloud, b: &PointCloud, corr: &CorrespondenceSet) -> Result<RigidTransform> {
    check_pair_dims(a, b)?;
    let dim = a.dim();
    if corr.len() < dim {
        return Err(Error::DegenerateInput(format!(
            "{} correspondences cannot determine a {dim}D rotation",
            corr.len()
        )));
    }
    corr.validate(a.len(), b.len())?;
    kabsch_pairs(dim, corr.pairs().iter().map(|&(i, j)| (a.point(i), b.point(j))))
}

/// Kabsch on an iterator of `(source, target)` point slices.
pub(crate) fn kabsch_pairs<'a, I>(dim: usize, pairs: I) -> Result<RigidTransform>
where
    I: Iterator<Item = (&'a [f64], &'a [f64])> + Clone,
{
    let mut ca = [0.0; 3];
    let mut cb = [0.0; 3];
    let mut n = 0usize;
    for (p, q) in pairs.clone() {
        for d in 0..dim {
            ca[d] += p[d];
            cb[d] += q[d];
        }
        n += 1;
    }
    if n < dim {
        return Err(Error::DegenerateInput(format!(
            "{n} correspondences cannot determine a {dim}D rotation"
        )));
    }
    let inv = 1.0 / n as f64;
    for d in 0..dim {
        ca[d] *= inv;
        cb[d] *= inv;
    }

    let mut cross = DMatrix::<f64>::zeros(dim, dim);
    let mut spread = DMatrix::<f64>::zeros(dim, dim);
    for (p, q) in pairs {
        for r in 0..dim {
            let pr = p[r] - ca[r];
            for c in 0..dim {
                cross[(r, c)] += pr * (q[c] - cb[c]);
                spread[(r, c)] += pr * (p[c] - ca[c]);
            }
        }
    }

    // Rank check on the source side: rotation recovery needs spread in at
    // least dim-1 directions.
    let mut eig: Vec<f64> = spread.symmetric_eigenvalues().iter().copied().collect();
    eig.sort_by(|x, y| y.total_cmp(x));
    let scale = eig[0].max(f64::MIN_POSITIVE);
    if eig[0] <= 1e-24 || (dim == 3 && eig[1] <= 1e-12 * scale) {
        return Err(Error::DegenerateInput(
            "matched source points are coincident or collinear".into(),
        ));
    }

    let svd = cross.svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let v = v_t.transpose();
    let ut = u.transpose();
    let mut fix = DMatrix::<f64>::identity(dim, dim);
    if (&v * &ut).determinant() < 0.0 {
        fix[(dim - 1, dim - 1)] = -1.0;
    }
    let rotation = v * fix * ut;
    let ca_v = DVector::from_column_slice(&ca[..dim]);
    let cb_v = DVector::from_column_slice(&cb[..dim]);
    let translation = cb_v - &rotation * ca_v;
    Ok(RigidTransform::from_parts_unchecked(rotation, translation))
}

/// Sum of squared residuals `‖R a + t − b‖²` over the pairs.
pub fn mse_alignment(
    a: &PointCloud,
    b: &PointCloud,
    corr: &CorrespondenceSet,
    t: &RigidTransform,
) -> Result<f64> {
    check_pair_dims(a, b)?;
    if t.dim() != a.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            actual: t.dim(),
        });
    }
    if corr.is_empty() {
        return Err(Error::EmptyCorrespondences);
    }
    corr.validate(a.len(), b.len())?;
    Ok(corr
        .pairs()
        .iter()
        .map(|&(i, j)| t.residual_sq(a.point(i), b.point(j)))
        .sum())
}

/// [`mse_alignment`] divided by the number of pairs.
pub fn mean_alignment_error(
    a: &PointCloud,
    b: &PointCloud,
    corr: &CorrespondenceSet,
    t: &RigidTransform,
) -> Result<f64> {
    Ok(mse_alignment(a, b, corr, t)? / corr.len() as f64)
}

/// Uniformly distributed rotation with zero translation. 2D draws an angle
/// in `[0, 2π)`; 3D draws a uniform unit quaternion.
pub fn random_rotation<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Result<RigidTransform> {
    check_dim(dim)?;
    if dim == 2 {
        let angle = rng.random::<f64>() * std::f64::consts::TAU;
        return Ok(RigidTransform::from_angle_2d(angle));
    }
    // Shoemake's subgroup algorithm.
    let (u1, u2, u3): (f64, f64, f64) = (rng.random(), rng.random(), rng.random());
    let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
    let (t1, t2) = (std::f64::consts::TAU * u2, std::f64::consts::TAU * u3);
    let (x, y, z, w) = (a * t1.sin(), a * t1.cos(), b * t2.sin(), b * t2.cos());
    Ok(RigidTransform::from_parts_unchecked(quaternion_matrix(w, x, y, z), DVector::zeros(3)))
}

fn quaternion_matrix(w: f64, x: f64, y: f64, z: f64) -> DMatrix<f64> {
    DMatrix::from_row_slice(
        3,
        3,
        &[
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - z * w),
            2.0 * (x * z + y * w),
            2.0 * (x * y + z * w),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - x * w),
            2.0 * (x * z - y * w),
            2.0 * (y * z + x * w),
            1.0 - 2.0 * (x * x + y * y),
        ],
    )
}

/// Relative translation error `‖t_est − t_gt‖`.
pub fn rte(est: &RigidTransform, gt: &RigidTransform) -> f64 {
    (est.translation() - gt.translation()).norm()
}

/// Relative rotation error in degrees.
///
/// Equal to `arccos((tr(R_estᵀ R_gt) − (dim − 2)) / 2)`, evaluated through
/// `atan2` of the antisymmetric and symmetric parts of the relative rotation
/// so that tiny angles keep full precision.
pub fn rre(est: &RigidTransform, gt: &RigidTransform) -> f64 {
    let rel = est.rotation().transpose() * gt.rotation();
    let angle = if rel.nrows() == 2 {
        let s = 0.5 * (rel[(1, 0)] - rel[(0, 1)]);
        let c = 0.5 * (rel[(0, 0)] + rel[(1, 1)]);
        s.abs().atan2(c)
    } else {
        let sx = 0.5 * (rel[(2, 1)] - rel[(1, 2)]);
        let sy = 0.5 * (rel[(0, 2)] - rel[(2, 0)]);
        let sz = 0.5 * (rel[(1, 0)] - rel[(0, 1)]);
        let s = (sx * sx + sy * sy + sz * sz).sqrt();
        let c = (0.5 * (rel.trace() - 1.0)).clamp(-1.0, 1.0);
        s.atan2(c)
    };
    angle.to_degrees()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_cloud(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> PointCloud {
        PointCloud::new(dim, (0..n * dim).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn random_transform(rng: &mut ChaCha8Rng, dim: usize) -> RigidTransform {
        let t: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
        random_rotation(dim, rng).unwrap().with_translation(&t).unwrap()
    }

    #[test]
    fn kabsch_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_cloud(&mut rng, 10, 3);
        let t = kabsch_solve(&a, &a, &CorrespondenceSet::identity(10)).unwrap();
        assert_abs_diff_eq!(t.rotation().clone(), DMatrix::identity(3, 3), epsilon = 1e-12);
        assert!(t.translation().norm() < 1e-12);
    }

    #[test]
    fn kabsch_recovers_quarter_turn() {
        let a = PointCloud::from_points(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
            .unwrap();
        let gt = RigidTransform::from_axis_angle([0.0, 0.0, 1.0], std::f64::consts::FRAC_PI_2)
            .with_translation(&[1.0, 2.0, 3.0])
            .unwrap();
        let b = gt.apply(&a).unwrap();
        let est = kabsch_solve(&a, &b, &CorrespondenceSet::identity(4)).unwrap();
        assert!((est.rotation() - gt.rotation()).amax() < 1e-9);
        assert!((est.translation() - gt.translation()).amax() < 1e-9);
    }

    #[test]
    fn kabsch_two_points_in_3d_is_degenerate() {
        let a = PointCloud::from_points(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]).unwrap();
        let err = kabsch_solve(&a, &a, &CorrespondenceSet::identity(2)).unwrap_err();
        assert!(matches!(err, Error::DegenerateInput(_)));
    }

    #[test]
    fn kabsch_collinear_is_degenerate() {
        let a = PointCloud::from_points(&[[0.0, 0.0, 0.0], [1.0, 1.0, 1.0], [2.0, 2.0, 2.0], [3.0, 3.0, 3.0]])
            .unwrap();
        assert!(matches!(
            kabsch_solve(&a, &a, &CorrespondenceSet::identity(4)),
            Err(Error::DegenerateInput(_))
        ));
    }

    #[test]
    fn kabsch_2d_recovers_and_rejects_coincident() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_cloud(&mut rng, 6, 2);
        let gt = random_transform(&mut rng, 2);
        let b = gt.apply(&a).unwrap();
        let est = kabsch_solve(&a, &b, &CorrespondenceSet::identity(6)).unwrap();
        assert!(rre(&est, &gt) < 1e-9);
        assert!(rte(&est, &gt) < 1e-9);

        let same = PointCloud::from_points(&[[1.0, 1.0], [1.0, 1.0], [1.0, 1.0]]).unwrap();
        assert!(kabsch_solve(&same, &same, &CorrespondenceSet::identity(3)).is_err());
    }

    #[test]
    fn kabsch_is_optimal_against_perturbations() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random_cloud(&mut rng, 30, 3);
        let gt = random_transform(&mut rng, 3);
        let mut b = gt.apply(&a).unwrap();
        let noisy: Vec<f64> = b.coords().iter().map(|v| v + rng.random_range(-0.05..0.05)).collect();
        b = PointCloud::new(3, noisy).unwrap();
        let corr = CorrespondenceSet::identity(30);
        let est = kabsch_solve(&a, &b, &corr).unwrap();
        let best = mse_alignment(&a, &b, &corr, &est).unwrap();
        for _ in 0..100 {
            let axis = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let nudge = RigidTransform::from_axis_angle(axis, rng.random_range(-0.05..0.05))
                .with_translation(&[rng.random_range(-0.05..0.05), 0.0, rng.random_range(-0.05..0.05)])
                .unwrap();
            let other = nudge.compose(&est).unwrap();
            assert!(mse_alignment(&a, &b, &corr, &other).unwrap() >= best - 1e-12);
        }
    }

    #[test]
    fn mse_is_a_sum() {
        let a = PointCloud::from_points(&[[0.0, 0.0, 0.0]]).unwrap();
        let b = PointCloud::from_points(&[[3.0, 4.0, 0.0]]).unwrap();
        let corr = CorrespondenceSet::identity(1);
        let v = mse_alignment(&a, &b, &corr, &RigidTransform::identity(3)).unwrap();
        assert_eq!(v, 25.0);
        assert!(matches!(
            mse_alignment(&a, &b, &CorrespondenceSet::default(), &RigidTransform::identity(3)),
            Err(Error::EmptyCorrespondences)
        ));
    }

    #[test]
    fn mse_matches_pairwise_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_cloud(&mut rng, 40, 3);
        let b = random_cloud(&mut rng, 40, 3);
        let t = random_transform(&mut rng, 3);
        let corr = CorrespondenceSet::new((0..40).map(|i| (i, (i * 7) % 40)).collect());
        let mut expected = 0.0;
        for &(i, j) in corr.pairs() {
            let p = a.point(i);
            let q = b.point(j);
            for r in 0..3 {
                let mut x = t.translation()[r];
                for c in 0..3 {
                    x += t.rotation()[(r, c)] * p[c];
                }
                expected += (x - q[r]).powi(2);
            }
        }
        let got = mse_alignment(&a, &b, &corr, &t).unwrap();
        assert!((got - expected).abs() < 1e-12);
        assert!((mean_alignment_error(&a, &b, &corr, &t).unwrap() - expected / 40.0).abs() < 1e-12);
    }

    #[test]
    fn apply_compose_invert() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = random_cloud(&mut rng, 25, 3);
        assert_eq!(RigidTransform::identity(3).apply(&p).unwrap(), p);
        for _ in 0..20 {
            let t = random_transform(&mut rng, 3);
            let round = t.compose(&t.invert()).unwrap().apply(&p).unwrap();
            for (x, y) in round.coords().iter().zip(p.coords()) {
                assert!((x - y).abs() < 1e-12);
            }
            let q = t.apply(&p).unwrap();
            for i in 0..p.len() {
                for j in 0..p.len() {
                    let d0: f64 = p.point(i).iter().zip(p.point(j)).map(|(x, y)| (x - y).powi(2)).sum();
                    let d1: f64 = q.point(i).iter().zip(q.point(j)).map(|(x, y)| (x - y).powi(2)).sum();
                    assert!((d0.sqrt() - d1.sqrt()).abs() < 1e-12);
                }
            }
            let u = random_transform(&mut rng, 3);
            let lhs = t.compose(&u).unwrap().apply(&p).unwrap();
            let rhs = t.apply(&u.apply(&p).unwrap()).unwrap();
            for (x, y) in lhs.coords().iter().zip(rhs.coords()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
        let id = RigidTransform::identity(3);
        assert_eq!(id.invert(), id);
        let t = random_transform(&mut rng, 3);
        assert_eq!(id.compose(&t).unwrap(), t);
        assert!(matches!(
            RigidTransform::identity(2).apply(&p),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn compose_chain_keeps_proper_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut acc = RigidTransform::identity(3);
        for _ in 0..50 {
            acc = acc.compose(&random_transform(&mut rng, 3)).unwrap();
        }
        assert!((acc.rotation().determinant() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn random_rotation_is_proper_and_seeded() {
        for dim in [2, 3] {
            let r1 = random_rotation(dim, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
            let r2 = random_rotation(dim, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
            assert_eq!(r1, r2);
            RigidTransform::new(r1.rotation().clone(), r1.translation().clone()).unwrap();
            assert_eq!(r1.translation().norm(), 0.0);
        }
    }

    #[test]
    fn random_rotation_2d_angles_are_uniform() {
        // Chi-square over 20 bins, 10k samples; 36.19 is the 0.99 quantile at 19 dof.
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let bins = 20;
        let n = 10_000;
        let mut counts = vec![0usize; bins];
        for _ in 0..n {
            let r = random_rotation(2, &mut rng).unwrap();
            let angle = r.rotation()[(1, 0)].atan2(r.rotation()[(0, 0)]).rem_euclid(std::f64::consts::TAU);
            counts[((angle / std::f64::consts::TAU) * bins as f64) as usize % bins] += 1;
        }
        let expected = n as f64 / bins as f64;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        assert!(chi2 < 36.19, "chi2 = {chi2}");
    }

    #[test]
    fn pose_errors() {
        let t = RigidTransform::identity(3).with_translation(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(rte(&t, &t), 0.0);
        assert_eq!(rre(&t, &t), 0.0);
        let shifted = RigidTransform::identity(3).with_translation(&[1.3, 2.0, 3.0]).unwrap();
        assert!((rte(&shifted, &t) - 0.3).abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let base = random_rotation(3, &mut rng).unwrap();
            let axis = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let turned = RigidTransform::from_axis_angle(axis, 15f64.to_radians())
                .compose(&base)
                .unwrap();
            assert!((rre(&turned, &base) - 15.0).abs() < 1e-6);
            assert!((rre(&turned, &base) - rre(&base, &turned)).abs() < 1e-9);
        }
        let a = RigidTransform::from_angle_2d(0.3);
        let b = RigidTransform::from_angle_2d(0.3 + 15f64.to_radians());
        assert!((rre(&a, &b) - 15.0).abs() < 1e-9);
    }

    #[test]
    fn transform_json_layout() {
        let t = RigidTransform::from_axis_angle([0.0, 0.0, 1.0], 0.25)
            .with_translation(&[0.5, -1.0, 2.0])
            .unwrap();
        let json = serde_json::to_value(&t).unwrap();
        assert_eq!(json["dim"], 3);
        assert_eq!(json["rotation"][0][1], t.rotation()[(0, 1)]);
        assert_eq!(json["translation"][2], 2.0);
        let back: RigidTransform = serde_json::from_value(json).unwrap();
        assert_eq!(back, t);

        let bad = serde_json::json!({"dim": 2, "rotation": [[1.0, 0.0], [0.0, -1.0]], "translation": [0.0, 0.0]});
        assert!(serde_json::from_value::<RigidTransform>(bad).is_err());
    }

    #[test]
    fn correspondence_validation() {
        let c = CorrespondenceSet::new(vec![(0, 1), (0, 2)]);
        assert!(c.validate(3, 3).is_err());
        let c = CorrespondenceSet::new(vec![(0, 5)]);
        assert!(c.validate(3, 3).is_err());
        assert!(CorrespondenceSet::identity(3).validate(3, 3).is_ok());
    }

    #[test]
    fn point_cloud_rejects_nan() {
        assert!(PointCloud::new(3, vec![0.0, f64::NAN, 0.0]).is_err());
        assert!(PointCloud::new(3, vec![]).is_err());
        assert!(PointCloud::with_features(2, vec![0.0, 0.0], 1, vec![]).is_err());
    }
}
