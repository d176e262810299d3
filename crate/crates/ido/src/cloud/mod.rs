//! Point-cloud representation, file I/O, voxel-average downsampling,
//! k-nearest-neighbor queries, local-plane normal estimation, and
//! spherical-angle computation.

mod index;
mod io;

pub use index::SpatialIndex;
pub use io::{load, load_auto, save, CloudFormat};

use nalgebra::{Matrix3, Point3, Vector3};

use crate::error::{Error, Result};

/// Ordered list of 3D points, optionally carrying unit normals.
///
/// Immutable after construction; concurrent reads are safe.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    points: Vec<Point3<f64>>,
    normals: Option<Vec<Vector3<f64>>>,
}

impl PointCloud {
    /// Build from points, rejecting empty or non-finite input.
    pub fn new(points: Vec<Point3<f64>>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyCloud);
        }
        if points.iter().any(|p| !p.coords.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidArgument(
                "point cloud contains non-finite coordinates".into(),
            ));
        }
        Ok(PointCloud {
            points,
            normals: None,
        })
    }

    /// Build with per-point unit normals.
    pub fn with_normals(points: Vec<Point3<f64>>, normals: Vec<Vector3<f64>>) -> Result<Self> {
        let cloud = PointCloud::new(points)?;
        if normals.len() != cloud.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} normals for {} points",
                normals.len(),
                cloud.len()
            )));
        }
        if normals.iter().any(|n| (n.norm() - 1.0).abs() > 1e-9) {
            return Err(Error::InvalidArgument("normals must be unit length".into()));
        }
        Ok(PointCloud {
            normals: Some(normals),
            ..cloud
        })
    }

    pub(crate) fn from_points_unchecked(points: Vec<Point3<f64>>) -> Self {
        PointCloud {
            points,
            normals: None,
        }
    }

    pub(crate) fn with_normals_unchecked(
        points: Vec<Point3<f64>>,
        normals: Vec<Vector3<f64>>,
    ) -> Self {
        PointCloud {
            points,
            normals: Some(normals),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    /// Clouds are never empty; kept for iterator-style call sites.
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point3<f64>] {
        &self.points
    }

    pub fn normals(&self) -> Option<&[Vector3<f64>]> {
        self.normals.as_deref()
    }

    pub fn centroid(&self) -> Point3<f64> {
        let sum = self
            .points
            .iter()
            .fold(Vector3::zeros(), |acc, p| acc + p.coords);
        Point3::from(sum / self.points.len() as f64)
    }

    /// Axis-aligned bounding box as (min, max) corners.
    pub fn bounding_box(&self) -> (Point3<f64>, Point3<f64>) {
        let mut min = self.points[0];
        let mut max = self.points[0];
        for p in &self.points {
            for i in 0..3 {
                min[i] = min[i].min(p[i]);
                max[i] = max[i].max(p[i]);
            }
        }
        (min, max)
    }

    /// Keep the first `n` points (and matching normals).
    pub fn truncated(&self, n: usize) -> PointCloud {
        PointCloud {
            points: self.points[..n.min(self.len())].to_vec(),
            normals: self
                .normals
                .as_ref()
                .map(|ns| ns[..n.min(ns.len())].to_vec()),
        }
    }
}

/// Centroid and scale removed by [`normalize_to_unit`], enough to undo it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidScaleRecord {
    pub centroid: Vector3<f64>,
    pub scale: f64,
}

impl RigidScaleRecord {
    pub fn identity() -> Self {
        RigidScaleRecord {
            centroid: Vector3::zeros(),
            scale: 1.0,
        }
    }

    /// Map a normalized-frame cloud back to the original frame.
    pub fn undo(&self, cloud: &PointCloud) -> PointCloud {
        let points = cloud
            .points
            .iter()
            .map(|p| Point3::from(p.coords * self.scale + self.centroid))
            .collect();
        PointCloud {
            points,
            normals: cloud.normals.clone(),
        }
    }
}

/// Center a cloud on its centroid and scale so the farthest point sits at
/// distance 1. Returns the record needed to undo the mapping.
///
/// Idempotent: a cloud that is already normalized within 1e-12 is returned
/// unchanged with an identity record, so repeated normalization never
/// drifts the coordinates.
pub fn normalize_to_unit(cloud: &PointCloud) -> Result<(PointCloud, RigidScaleRecord)> {
    if cloud.len() < 2 {
        return Err(Error::InvalidArgument(
            "normalization needs at least 2 points".into(),
        ));
    }
    let centroid = cloud.centroid().coords;
    let scale = cloud
        .points
        .iter()
        .map(|p| (p.coords - centroid).norm())
        .fold(0.0f64, f64::max);
    if scale == 0.0 {
        return Err(Error::ZeroExtent);
    }
    if centroid.norm() <= 1e-12 * scale && (scale - 1.0).abs() <= 1e-12 {
        return Ok((cloud.clone(), RigidScaleRecord::identity()));
    }
    let points = cloud
        .points
        .iter()
        .map(|p| Point3::from((p.coords - centroid) / scale))
        .collect();
    Ok((
        PointCloud {
            points,
            normals: cloud.normals.clone(),
        },
        RigidScaleRecord { centroid, scale },
    ))
}

/// Voxel-grid average downsampling to approximately `target_count` points.
///
/// The cell size is found by bisection on the occupied-voxel count; each
/// output point is the centroid of one occupied cell. The result stays
/// within a few percent of the target for reasonably dense clouds.
pub fn downsample_average(cloud: &PointCloud, target_count: usize) -> Result<PointCloud> {
    let n = cloud.len();
    if target_count < 1 || target_count > n {
        return Err(Error::TargetCountOutOfRange {
            target: target_count,
            max: n,
        });
    }
    if target_count == n {
        return Ok(cloud.clone());
    }

    let (min, max) = cloud.bounding_box();
    let extent = (max - min).amax().max(f64::MIN_POSITIVE);

    let occupied = |cell: f64| -> usize {
        let mut keys: Vec<(i64, i64, i64)> = cloud
            .points
            .iter()
            .map(|p| voxel_key(p, &min, cell))
            .collect();
        keys.sort_unstable();
        keys.dedup();
        keys.len()
    };

    // Occupancy is (weakly) monotone decreasing in the cell size; bisect and
    // keep the best count seen.
    let mut lo = extent * 1e-9;
    let mut hi = extent * 2.000001;
    let mut best_cell = hi;
    let mut best_err = usize::MAX;
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        let count = occupied(mid);
        let err = count.abs_diff(target_count);
        if err < best_err {
            best_err = err;
            best_cell = mid;
        }
        if count > target_count {
            lo = mid;
        } else {
            hi = mid;
        }
        if best_err * 20 <= target_count {
            // within 5%
            break;
        }
    }

    let mut buckets: Vec<((i64, i64, i64), Vector3<f64>, usize)> = Vec::new();
    let mut keyed: Vec<((i64, i64, i64), usize)> = cloud
        .points
        .iter()
        .enumerate()
        .map(|(i, p)| (voxel_key(p, &min, best_cell), i))
        .collect();
    keyed.sort_unstable();
    for (key, idx) in keyed {
        match buckets.last_mut() {
            Some((k, sum, count)) if *k == key => {
                *sum += cloud.points[idx].coords;
                *count += 1;
            }
            _ => buckets.push((key, cloud.points[idx].coords, 1)),
        }
    }
    let points = buckets
        .into_iter()
        .map(|(_, sum, count)| Point3::from(sum / count as f64))
        .collect();
    PointCloud::new(points)
}

fn voxel_key(p: &Point3<f64>, min: &Point3<f64>, cell: f64) -> (i64, i64, i64) {
    (
        ((p.x - min.x) / cell).floor() as i64,
        ((p.y - min.y) / cell).floor() as i64,
        ((p.z - min.z) / cell).floor() as i64,
    )
}

/// Per-point elevation/azimuth about `center`.
///
/// For `d = p - center`: elevation `asin(d_z/|d|)` in `[-pi/2, pi/2]`,
/// azimuth `atan2(d_y, d_x)` in `(-pi, pi]`. Points coinciding with the
/// center get `(0, 0)` and their indices are returned as flagged.
pub fn spherical_angles(
    points: &[Point3<f64>],
    center: &Point3<f64>,
) -> (Vec<(f64, f64)>, Vec<usize>) {
    let mut angles = Vec::with_capacity(points.len());
    let mut flagged = Vec::new();
    for (i, p) in points.iter().enumerate() {
        let d = p - center;
        let r = d.norm();
        if r == 0.0 {
            angles.push((0.0, 0.0));
            flagged.push(i);
            continue;
        }
        let elevation = (d.z / r).clamp(-1.0, 1.0).asin();
        let mut azimuth = d.y.atan2(d.x);
        if azimuth == -std::f64::consts::PI {
            azimuth = std::f64::consts::PI;
        }
        angles.push((elevation, azimuth));
    }
    (angles, flagged)
}

/// Local-plane normal estimation from the `k` nearest neighbors of each
/// point (the point itself excluded).
///
/// The normal is the smallest-eigenvalue eigenvector of the neighborhood
/// covariance, oriented away from the side of the neighborhood that
/// contains the cloud centroid. Neighborhoods whose covariance has rank
/// below 2 are flagged and get a +z normal.
pub fn estimate_normals(cloud: &PointCloud, k: usize) -> Result<(PointCloud, Vec<usize>)> {
    if k < 2 {
        return Err(Error::InvalidArgument("need k >= 2 neighbors".into()));
    }
    if cloud.len() < k + 1 {
        return Err(Error::InvalidArgument(format!(
            "normal estimation needs at least k+1 = {} points, got {}",
            k + 1,
            cloud.len()
        )));
    }
    let index = SpatialIndex::build(cloud);
    let cloud_centroid = cloud.centroid().coords;
    let mut normals = Vec::with_capacity(cloud.len());
    let mut degenerate = Vec::new();

    for (i, p) in cloud.points.iter().enumerate() {
        let neighbors: Vec<usize> = index
            .knn(p, k + 1)
            .into_iter()
            .map(|(idx, _)| idx)
            .filter(|&idx| idx != i)
            .take(k)
            .collect();
        let (normal, ok) = plane_normal(cloud.points(), &neighbors);
        if !ok {
            degenerate.push(i);
            normals.push(Vector3::new(0.0, 0.0, 1.0));
            continue;
        }
        let nbh_centroid = neighbors
            .iter()
            .fold(Vector3::zeros(), |acc, &idx| acc + cloud.points[idx].coords)
            / neighbors.len() as f64;
        let side = normal.dot(&(cloud_centroid - nbh_centroid));
        let normal = if side > 0.0 {
            -normal
        } else if side < 0.0 {
            normal
        } else if first_nonzero_is_negative(&normal) {
            -normal
        } else {
            normal
        };
        normals.push(normal);
    }

    Ok((
        PointCloud {
            points: cloud.points.clone(),
            normals: Some(normals),
        },
        degenerate,
    ))
}

fn first_nonzero_is_negative(v: &Vector3<f64>) -> bool {
    for c in v.iter() {
        if *c != 0.0 {
            return *c < 0.0;
        }
    }
    false
}

/// Unit normal of the best-fit plane through the listed points, plus a
/// validity flag (false when the covariance has rank < 2).
fn plane_normal(points: &[Point3<f64>], neighborhood: &[usize]) -> (Vector3<f64>, bool) {
    let centroid = neighborhood
        .iter()
        .fold(Vector3::zeros(), |acc, &i| acc + points[i].coords)
        / neighborhood.len() as f64;
    let mut cov = Matrix3::zeros();
    for &i in neighborhood {
        let d = points[i].coords - centroid;
        cov += d * d.transpose();
    }
    cov /= neighborhood.len() as f64;

    let eig = cov.symmetric_eigen();
    // Ascending order of eigenvalues by index lookup.
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let smallest = order[0];
    let mid = eig.eigenvalues[order[1]];
    let largest = eig.eigenvalues[order[2]];
    if largest <= 0.0 || mid <= largest * 1e-12 {
        return (Vector3::new(0.0, 0.0, 1.0), false);
    }
    let n = eig.eigenvectors.column(smallest).into_owned();
    (n.normalize(), true)
}
