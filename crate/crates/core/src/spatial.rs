//! Exact nearest-neighbor and radius search, and voxel-grid downsampling.
//!
//! Ties are always broken by the lowest point index.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::geometry::{CorrespondenceSet, PointCloud};

const LEAF_SIZE: usize = 8;

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        axis: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

/// Balanced k-d tree over `M` points of dimension `d`. Immutable after build.
#[derive(Debug, Clone)]
pub struct NeighborIndex {
    dim: usize,
    points: Vec<f64>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

#[inline]
fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl NeighborIndex {
    /// Builds an index over row-major `points` with `dim` columns.
    pub fn build(points: &[f64], dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidConfig("index dimension must be at least 1".into()));
        }
        if points.is_empty() {
            return Err(Error::EmptyInput);
        }
        if !points.len().is_multiple_of(dim) {
            return Err(Error::ShapeMismatch(format!(
                "{} values do not form rows of width {dim}",
                points.len()
            )));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidPointCloud("non-finite value in index input".into()));
        }
        let n = points.len() / dim;
        let mut index = Self {
            dim,
            points: points.to_vec(),
            order: (0..n).collect(),
            nodes: Vec::new(),
        };
        index.build_node(0, n);
        Ok(index)
    }

    pub fn from_cloud(cloud: &PointCloud) -> Self {
        Self::build(cloud.coords(), cloud.dim()).expect("point clouds are non-empty and finite")
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    fn build_node(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        // Split along the axis of largest extent at the median.
        let mut axis = 0;
        let mut best_spread = -1.0;
        for d in 0..self.dim {
            let (lo, hi) = self.order[start..end].iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
                let v = self.points[i * self.dim + d];
                (lo.min(v), hi.max(v))
            });
            if hi - lo > best_spread {
                best_spread = hi - lo;
                axis = d;
            }
        }
        let mid = start + (end - start) / 2;
        let dim = self.dim;
        let points = &self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            points[a * dim + axis].total_cmp(&points[b * dim + axis]).then(a.cmp(&b))
        });
        let value = self.points[self.order[mid] * dim + axis];
        self.nodes.push(Node::Leaf { start: 0, end: 0 });
        let left = self.build_node(start, mid);
        let right = self.build_node(mid, end);
        self.nodes[id] = Node::Split { axis, value, left, right };
        id
    }

    /// Exact nearest neighbor of `query` as `(index, squared distance)`.
    pub fn nearest_one(&self, query: &[f64]) -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        self.nearest_rec(0, query, &mut best);
        best
    }

    fn nearest_rec(&self, node: usize, q: &[f64], best: &mut (usize, f64)) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let d = dist_sq(self.row(i), q);
                    if d < best.1 || (d == best.1 && i < best.0) {
                        *best = (i, d);
                    }
                }
            }
            Node::Split { axis, value, left, right } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.nearest_rec(near, q, best);
                // Equal-distance points on the far side may carry a lower index.
                if diff * diff <= best.1 {
                    self.nearest_rec(far, q, best);
                }
            }
        }
    }

    /// Nearest indexed point for every query row; pair `i` is `(i, argmin)`.
    pub fn nearest(&self, queries: &[f64], dim: usize) -> Result<CorrespondenceSet> {
        if dim != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: dim,
            });
        }
        if !queries.len().is_multiple_of(dim) {
            return Err(Error::ShapeMismatch(format!(
                "{} query values do not form rows of width {dim}",
                queries.len()
            )));
        }
        let (pairs, dists): (Vec<_>, Vec<_>) = queries
            .chunks_exact(dim)
            .enumerate()
            .map(|(i, q)| {
                let (j, d2) = self.nearest_one(q);
                ((i, j), d2.sqrt())
            })
            .unzip();
        CorrespondenceSet::with_distances(pairs, dists)
    }

    /// All points within distance `r` of `query` (inclusive), sorted by
    /// distance then index.
    pub fn radius_neighbors(&self, query: &[f64], r: f64) -> Vec<(usize, f64)> {
        let mut out = Vec::new();
        self.radius_sq(query, r * r, &mut out);
        let mut out: Vec<(usize, f64)> = out.into_iter().map(|(i, d2)| (i, d2.sqrt())).collect();
        out.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        out
    }

    /// Unsorted `(index, squared distance)` for points with `d² ≤ r2`.
    pub(crate) fn radius_sq(&self, query: &[f64], r2: f64, out: &mut Vec<(usize, f64)>) {
        self.radius_rec(0, query, r2, out);
    }

    fn radius_rec(&self, node: usize, q: &[f64], r2: f64, out: &mut Vec<(usize, f64)>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let d = dist_sq(self.row(i), q);
                    if d <= r2 {
                        out.push((i, d));
                    }
                }
            }
            Node::Split { axis, value, left, right } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.radius_rec(near, q, r2, out);
                if diff * diff <= r2 {
                    self.radius_rec(far, q, r2, out);
                }
            }
        }
    }
}

/// One point per occupied voxel: the centroid of its members, with features
/// averaged the same way. Output is ordered by ascending voxel key.
pub fn voxel_downsample(p: &PointCloud, voxel_size: f64) -> Result<PointCloud> {
    if !(voxel_size > 0.0 && voxel_size.is_finite()) {
        return Err(Error::InvalidConfig(format!("voxel size must be positive, got {voxel_size}")));
    }
    let dim = p.dim();
    let k = p.num_features();
    let mut cells: BTreeMap<[i64; 3], (Vec<f64>, usize)> = BTreeMap::new();
    for i in 0..p.len() {
        let mut key = [0i64; 3];
        for (d, v) in p.point(i).iter().enumerate() {
            key[d] = (v / voxel_size).floor() as i64;
        }
        let entry = cells.entry(key).or_insert_with(|| (vec![0.0; dim + k], 0));
        for (acc, v) in entry.0.iter_mut().zip(p.point(i).iter().chain(p.point_features(i))) {
            *acc += v;
        }
        entry.1 += 1;
    }
    let mut coords = Vec::with_capacity(cells.len() * dim);
    let mut features = Vec::with_capacity(cells.len() * k);
    for (sums, count) in cells.values() {
        let c = *count as f64;
        coords.extend(sums[..dim].iter().map(|s| s / c));
        features.extend(sums[dim..].iter().map(|s| s / c));
    }
    PointCloud::with_features(dim, coords, k, features)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_nearest(points: &[f64], dim: usize, q: &[f64]) -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        for (i, p) in points.chunks_exact(dim).enumerate() {
            let d: f64 = p.iter().zip(q).map(|(x, y)| (x - y) * (x - y)).sum();
            if d < best.1 {
                best = (i, d);
            }
        }
        best
    }

    fn brute_radius(points: &[f64], dim: usize, q: &[f64], r: f64) -> Vec<(usize, f64)> {
        let mut out: Vec<(usize, f64)> = points
            .chunks_exact(dim)
            .enumerate()
            .filter_map(|(i, p)| {
                let d: f64 = p.iter().zip(q).map(|(x, y)| (x - y) * (x - y)).sum();
                (d <= r * r).then(|| (i, d.sqrt()))
            })
            .collect();
        out.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        out
    }

    #[test]
    fn single_point() {
        let idx = NeighborIndex::build(&[1.0, 2.0, 3.0], 3).unwrap();
        assert_eq!(idx.len(), 1);
        assert_eq!(idx.nearest_one(&[100.0, -4.0, 0.0]).0, 0);
        assert!(matches!(NeighborIndex::build(&[], 3), Err(Error::EmptyInput)));
    }

    #[test]
    fn one_dimensional_example() {
        let idx = NeighborIndex::build(&[0.0, 10.0], 1).unwrap();
        let c = idx.nearest(&[4.0], 1).unwrap();
        assert_eq!(c.pairs(), &[(0, 0)]);
        assert_eq!(c.distances().unwrap(), &[4.0]);
        assert!(matches!(idx.nearest(&[4.0, 1.0], 2), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn self_query_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pts: Vec<f64> = (0..300 * 3).map(|_| rng.random_range(-5.0..5.0)).collect();
        let idx = NeighborIndex::build(&pts, 3).unwrap();
        let c = idx.nearest(&pts, 3).unwrap();
        assert_eq!(c, CorrespondenceSet::with_distances((0..300).map(|i| (i, i)).collect(), vec![0.0; 300]).unwrap());
    }

    #[test]
    fn matches_linear_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts: Vec<f64> = (0..1000 * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let idx = NeighborIndex::build(&pts, 3).unwrap();
        for _ in 0..100 {
            let q: Vec<f64> = (0..3).map(|_| rng.random_range(-1.2..1.2)).collect();
            let got = idx.nearest_one(&q);
            assert_eq!(got, brute_nearest(&pts, 3, &q));
        }
    }

    #[test]
    fn duplicates_resolve_to_lowest_index() {
        let mut pts = Vec::new();
        for _ in 0..50 {
            pts.extend_from_slice(&[1.0, 1.0]);
            pts.extend_from_slice(&[0.0, 0.0]);
        }
        let idx = NeighborIndex::build(&pts, 2).unwrap();
        assert_eq!(idx.nearest_one(&[0.9, 0.9]).0, 0);
        assert_eq!(idx.nearest_one(&[0.1, 0.0]).0, 1);
        // Equidistant from (0,0) and (1,1).
        assert_eq!(idx.nearest_one(&[0.5, 0.5]).0, 0);
    }

    #[test]
    fn radius_on_unit_grid() {
        let mut pts = Vec::new();
        for x in 0..5 {
            for y in 0..5 {
                for z in 0..5 {
                    pts.extend_from_slice(&[x as f64, y as f64, z as f64]);
                }
            }
        }
        let idx = NeighborIndex::build(&pts, 3).unwrap();
        let centre = 2 * 25 + 2 * 5 + 2;
        let hits = idx.radius_neighbors(&[2.0, 2.0, 2.0], 1.5);
        // sqrt(2) < 1.5, so face-diagonal neighbors are included too.
        assert_eq!(hits.len(), 1 + 6 + 12);
        assert_eq!(hits[0], (centre, 0.0));
        let hits = idx.radius_neighbors(&[2.0, 2.0, 2.0], 1.2);
        let mut got: Vec<usize> = hits.iter().map(|h| h.0).collect();
        got.sort();
        let mut expected = vec![centre, centre - 25, centre + 25, centre - 5, centre + 5, centre - 1, centre + 1];
        expected.sort();
        assert_eq!(got, expected);
        assert!(idx.radius_neighbors(&[2.5, 2.5, 2.5], 0.5).is_empty());
    }

    #[test]
    fn radius_matches_linear_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pts: Vec<f64> = (0..500 * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let idx = NeighborIndex::build(&pts, 3).unwrap();
        for _ in 0..100 {
            let q: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let r = rng.random_range(0.01..0.6);
            assert_eq!(idx.radius_neighbors(&q, r), brute_radius(&pts, 3, &q, r));
        }
    }

    #[test]
    fn voxel_examples() {
        let p = PointCloud::from_points(&[[0.3, -0.2, 7.0]]).unwrap();
        assert_eq!(voxel_downsample(&p, 0.05).unwrap(), p);

        let p = PointCloud::from_points(&[[0.0, 0.0, 0.0], [0.01, 0.0, 0.0]]).unwrap();
        let v = voxel_downsample(&p, 0.05).unwrap();
        assert_eq!(v.len(), 1);
        assert!((v.point(0)[0] - 0.005).abs() < 1e-15);

        let p = PointCloud::from_points(&[[0.0, 0.0, 0.0], [1.0, 1.0, 1.0], [2.0, -1.0, 3.0]]).unwrap();
        assert_eq!(voxel_downsample(&p, 0.5).unwrap().len(), 3);
        assert!(voxel_downsample(&p, 0.0).is_err());
    }

    #[test]
    fn voxel_averages_features_and_orders_keys() {
        let p = PointCloud::with_features(
            2,
            vec![1.2, 0.1, 0.1, 0.1, 1.3, 0.2],
            1,
            vec![4.0, 1.0, 2.0],
        )
        .unwrap();
        let v = voxel_downsample(&p, 1.0).unwrap();
        assert_eq!(v.len(), 2);
        assert_eq!(v.point(0), &[0.1, 0.1]);
        assert_eq!(v.point_features(0), &[1.0]);
        assert!((v.point(1)[0] - 1.25).abs() < 1e-12);
        assert_eq!(v.point_features(1), &[3.0]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn nearest_equals_linear_scan(seed in any::<u64>(), n in 1usize..2000, dim in 1usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            // Coarse grid values force exact ties.
            let pts: Vec<f64> = (0..n * dim).map(|_| (rng.random_range(-20i32..20) as f64) * 0.25).collect();
            let idx = NeighborIndex::build(&pts, dim).unwrap();
            let queries: Vec<f64> = (0..50 * dim).map(|_| (rng.random_range(-40i32..40) as f64) * 0.125).collect();
            let got = idx.nearest(&queries, dim).unwrap();
            for (i, q) in queries.chunks_exact(dim).enumerate() {
                let (j, d2) = brute_nearest(&pts, dim, q);
                prop_assert_eq!(got.pairs()[i], (i, j));
                prop_assert_eq!(got.distances().unwrap()[i], d2.sqrt());
            }
        }

        #[test]
        fn voxel_is_stable_under_repetition(seed in any::<u64>(), voxel in 0.05f64..0.5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = PointCloud::new(3, (0..600).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
            let once = voxel_downsample(&p, voxel).unwrap();
            let again = voxel_downsample(&p, voxel).unwrap();
            prop_assert_eq!(&once, &again);
            prop_assert!(once.len() <= p.len());
            let twice = voxel_downsample(&once, voxel).unwrap();
            prop_assert!(twice.len() <= once.len());
            let idx = NeighborIndex::from_cloud(&twice);
            let diag = voxel * 3f64.sqrt();
            for q in once.points() {
                prop_assert!(idx.nearest_one(q).1.sqrt() < diag);
            }
        }
    }
}
