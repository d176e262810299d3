//! Balanced kd-tree for exact k-nearest-neighbor queries.
//!
//! Results match an exhaustive scan exactly: ascending Euclidean distance,
//! ties broken by ascending point index.

use nalgebra::Point3;

use super::PointCloud;

#[derive(Clone, Debug)]
struct Node {
    /// Index into the cloud of the point stored at this node.
    point: u32,
    axis: u8,
    left: i32,
    right: i32,
}

/// Immutable spatial index over a cloud's points.
#[derive(Clone, Debug)]
pub struct SpatialIndex {
    nodes: Vec<Node>,
    points: Vec<Point3<f64>>,
    root: i32,
}

impl SpatialIndex {
    pub fn build(cloud: &PointCloud) -> Self {
        let points: Vec<Point3<f64>> = cloud.points().to_vec();
        let mut order: Vec<u32> = (0..points.len() as u32).collect();
        let mut nodes = Vec::with_capacity(points.len());
        let root = build_recursive(&points, &mut order, 0, &mut nodes);
        SpatialIndex {
            nodes,
            points,
            root,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Exact k nearest neighbors of `query` as `(index, distance)`, sorted
    /// by ascending distance with index as the tiebreaker.
    pub fn knn(&self, query: &Point3<f64>, k: usize) -> Vec<(usize, f64)> {
        let k = k.min(self.points.len());
        if k == 0 {
            return Vec::new();
        }
        // Small bounded candidate set: a sorted vec beats a heap here.
        let mut best: Vec<(f64, u32)> = Vec::with_capacity(k + 1);
        self.search(self.root, query, k, &mut best);
        best.into_iter()
            .map(|(d2, i)| (i as usize, d2.sqrt()))
            .collect()
    }

    /// Single nearest neighbor.
    pub fn nearest(&self, query: &Point3<f64>) -> (usize, f64) {
        self.knn(query, 1)[0]
    }

    fn search(&self, node: i32, query: &Point3<f64>, k: usize, best: &mut Vec<(f64, u32)>) {
        if node < 0 {
            return;
        }
        let n = &self.nodes[node as usize];
        let p = &self.points[n.point as usize];
        let d2 = (p - query).norm_squared();
        Self::offer(best, k, (d2, n.point));

        let delta = query[n.axis as usize] - p[n.axis as usize];
        let (near, far) = if delta < 0.0 {
            (n.left, n.right)
        } else {
            (n.right, n.left)
        };
        self.search(near, query, k, best);
        // The far side may still hold an equal-distance, lower-index point,
        // so prune only on a strictly larger plane distance.
        if best.len() < k || delta * delta <= best[best.len() - 1].0 {
            self.search(far, query, k, best);
        }
    }

    fn offer(best: &mut Vec<(f64, u32)>, k: usize, candidate: (f64, u32)) {
        let pos = best.partition_point(|e| (e.0, e.1) < (candidate.0, candidate.1));
        if pos >= k {
            return;
        }
        best.insert(pos, candidate);
        if best.len() > k {
            best.pop();
        }
    }
}

fn build_recursive(
    points: &[Point3<f64>],
    order: &mut [u32],
    depth: usize,
    nodes: &mut Vec<Node>,
) -> i32 {
    if order.is_empty() {
        return -1;
    }
    let axis = (depth % 3) as u8;
    order.sort_unstable_by(|&a, &b| {
        points[a as usize][axis as usize]
            .total_cmp(&points[b as usize][axis as usize])
            .then(a.cmp(&b))
    });
    let mid = order.len() / 2;
    let point = order[mid];
    let id = nodes.len() as i32;
    nodes.push(Node {
        point,
        axis,
        left: -1,
        right: -1,
    });
    let (left_slice, rest) = order.split_at_mut(mid);
    let right_slice = &mut rest[1..];
    let left = build_recursive(points, left_slice, depth + 1, nodes);
    let right = build_recursive(points, right_slice, depth + 1, nodes);
    nodes[id as usize].left = left;
    nodes[id as usize].right = right;
    id
}

/// Exhaustive-scan reference with the same ordering contract.
#[cfg(test)]
pub(crate) fn knn_brute_force(
    points: &[Point3<f64>],
    query: &Point3<f64>,
    k: usize,
) -> Vec<(usize, f64)> {
    let mut all: Vec<(f64, usize)> = points
        .iter()
        .enumerate()
        .map(|(i, p)| ((p - query).norm_squared(), i))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    all.truncate(k);
    all.into_iter().map(|(d2, i)| (i, d2.sqrt())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn random_points(rng: &mut impl Rng, n: usize) -> Vec<Point3<f64>> {
        (0..n)
            .map(|_| {
                Point3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                )
            })
            .collect()
    }

    #[test]
    fn query_at_stored_point_returns_it() {
        let points = vec![
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(0.0, 2.0, 0.0),
        ];
        let index = SpatialIndex::build(&PointCloud::new(points.clone()).unwrap());
        let hits = index.knn(&points[1], 1);
        assert_eq!(hits, vec![(1, 0.0)]);
    }

    #[test]
    fn k_equal_to_n_returns_all_sorted() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let points = random_points(&mut rng, 25);
        let index = SpatialIndex::build(&PointCloud::new(points.clone()).unwrap());
        let q = Point3::new(0.3, -0.2, 0.5);
        let hits = index.knn(&q, 25);
        assert_eq!(hits.len(), 25);
        assert_eq!(hits, knn_brute_force(&points, &q, 25));
    }

    #[test]
    fn matches_brute_force_on_random_queries() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let points = random_points(&mut rng, 1000);
        let index = SpatialIndex::build(&PointCloud::new(points.clone()).unwrap());
        for _ in 0..100 {
            let q = Point3::new(
                rng.random_range(-1.2..1.2),
                rng.random_range(-1.2..1.2),
                rng.random_range(-1.2..1.2),
            );
            assert_eq!(index.knn(&q, 7), knn_brute_force(&points, &q, 7));
        }
    }

    #[test]
    fn tie_break_by_index_on_duplicates() {
        // Duplicate coordinates force distance ties.
        let points = vec![
            Point3::new(1.0, 1.0, 1.0),
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(1.0, 1.0, 1.0),
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(1.0, 1.0, 1.0),
        ];
        let index = SpatialIndex::build(&PointCloud::new(points.clone()).unwrap());
        let q = Point3::new(1.0, 1.0, 1.0);
        let hits = index.knn(&q, 4);
        assert_eq!(hits, knn_brute_force(&points, &q, 4));
        assert_eq!(hits[0].0, 0);
        assert_eq!(hits[1].0, 2);
        assert_eq!(hits[2].0, 4);
    }

    #[test]
    fn k_larger_than_n_is_clamped() {
        let points = random_points(&mut ChaCha20Rng::seed_from_u64(3), 5);
        let index = SpatialIndex::build(&PointCloud::new(points).unwrap());
        assert_eq!(index.knn(&Point3::origin(), 50).len(), 5);
    }
}
