//! Synthetic training/test pair generation.
//!
//! A labeled pair is built from a normalized model by resampling,
//! cropping a contiguous region, adding Gaussian noise, appending
//! outliers, and finally applying a rigid motion. The ground-truth twist
//! maps the finished scene back onto the model frame. All randomness
//! comes from a counter-based ChaCha stream seeded by the spec, so a
//! `(model, spec)` pair regenerates bit-identically.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::cloud::{load, save, CloudFormat, PointCloud};
use crate::error::{Error, Result};
use crate::lie::{exp_so3, log_se3, RigidTransform, Twist};

/// One corruption recipe. Ranges are the benchmark sweep extents.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    /// Isotropic Gaussian noise std, in normalized model units. 0 to 0.1.
    pub noise_std: f64,
    /// Scene size after resampling with replacement. 100 to 4000.
    pub scene_count: usize,
    /// Number of appended outlier points. 0 to 600.
    pub outliers: usize,
    /// Fraction of the scene removed as one contiguous region. 0 to 0.7.
    pub incomplete_ratio: f64,
    /// Rigid rotation magnitude in degrees, about a random axis. 0 to 180.
    pub rotation_deg: f64,
    /// Rigid translation magnitude along a random direction. 0 to 1.0.
    pub translation: f64,
    pub outlier_kind: OutlierKind,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutlierKind {
    /// Uniform in the model bounding box scaled 1.5x.
    Sparse,
    /// A random plane patch plus a Gaussian blob cluster.
    Structured,
}

impl Default for PerturbationSpec {
    fn default() -> Self {
        PerturbationSpec {
            noise_std: 0.05,
            scene_count: 400,
            outliers: 300,
            incomplete_ratio: 0.3,
            rotation_deg: 60.0,
            translation: 0.3,
            outlier_kind: OutlierKind::Sparse,
            seed: 0,
        }
    }
}

impl PerturbationSpec {
    /// A spec with every corruption switched off at the given scene size.
    pub fn clean(scene_count: usize, seed: u64) -> Self {
        PerturbationSpec {
            noise_std: 0.0,
            scene_count,
            outliers: 0,
            incomplete_ratio: 0.0,
            rotation_deg: 0.0,
            translation: 0.0,
            outlier_kind: OutlierKind::Sparse,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, what: &str| -> Result<()> {
            if ok {
                Ok(())
            } else {
                Err(Error::SpecOutOfRange(what.to_string()))
            }
        };
        check(
            (0.0..=0.1).contains(&self.noise_std),
            &format!("noise_std {} not in [0, 0.1]", self.noise_std),
        )?;
        check(
            (100..=4000).contains(&self.scene_count),
            &format!("scene_count {} not in [100, 4000]", self.scene_count),
        )?;
        check(
            self.outliers <= 600,
            &format!("outliers {} not in [0, 600]", self.outliers),
        )?;
        check(
            (0.0..=0.7).contains(&self.incomplete_ratio),
            &format!("incomplete_ratio {} not in [0, 0.7]", self.incomplete_ratio),
        )?;
        check(
            (0.0..=180.0).contains(&self.rotation_deg),
            &format!("rotation_deg {} not in [0, 180]", self.rotation_deg),
        )?;
        check(
            (0.0..=1.0).contains(&self.translation),
            &format!("translation {} not in [0, 1.0]", self.translation),
        )?;
        Ok(())
    }

    /// Scene points that survive the crop; the rest of the scene (indices
    /// from here up) are outliers.
    pub fn inlier_count(&self) -> usize {
        self.scene_count - (self.incomplete_ratio * self.scene_count as f64).ceil() as usize
    }
}

/// A corrupted scene with its ground truth.
#[derive(Clone, Debug)]
pub struct LabeledPair {
    pub scene: PointCloud,
    /// Twist whose exponential maps the scene back onto the model frame.
    pub x_star: Twist,
    /// The rigid motion that was applied to the scene (model frame -> scene frame).
    pub t_gt: RigidTransform,
    pub spec: PerturbationSpec,
    /// Scene points `[0, inlier_count)` correspond to model samples;
    /// the tail is outliers.
    pub inlier_count: usize,
    /// Clean (pre-noise, model-frame) positions of the inliers, the
    /// ground-truth targets for the metrics.
    pub clean_targets: Vec<Point3<f64>>,
}

impl LabeledPair {
    /// Scene restricted to its inlier prefix.
    pub fn inlier_scene(&self) -> PointCloud {
        self.scene.truncated(self.inlier_count)
    }

    /// Model-frame ground-truth positions for the full scene: clean
    /// targets for inliers, un-rotated positions for outliers.
    pub fn all_targets(&self) -> Vec<Point3<f64>> {
        let inv = self.t_gt.inverse();
        let mut targets = self.clean_targets.clone();
        targets.extend(
            self.scene.points()[self.inlier_count..]
                .iter()
                .map(|p| inv.apply_point(p)),
        );
        targets
    }
}

/// Generate one labeled pair. The corruption order is fixed: resample,
/// crop, noise, outliers, rigid motion; noise is therefore expressed in
/// model units and outliers undergo the same motion as inliers.
pub fn generate_pair(model: &PointCloud, spec: &PerturbationSpec) -> Result<LabeledPair> {
    spec.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let n_model = model.len();

    // 1. Resample with replacement.
    let sample_indices: Vec<usize> = (0..spec.scene_count)
        .map(|_| rng.random_range(0..n_model))
        .collect();

    // 2. Contiguous crop: drop the points nearest to a random seed point.
    let crop = (spec.incomplete_ratio * spec.scene_count as f64).ceil() as usize;
    let kept: Vec<usize> = if crop > 0 {
        let center_pos = rng.random_range(0..spec.scene_count);
        let center = model.points()[sample_indices[center_pos]];
        let mut by_distance: Vec<usize> = (0..spec.scene_count).collect();
        by_distance.sort_by(|&a, &b| {
            let da = (model.points()[sample_indices[a]] - center).norm_squared();
            let db = (model.points()[sample_indices[b]] - center).norm_squared();
            da.total_cmp(&db).then(a.cmp(&b))
        });
        let mut removed = vec![false; spec.scene_count];
        for &pos in &by_distance[..crop] {
            removed[pos] = true;
        }
        (0..spec.scene_count).filter(|&i| !removed[i]).collect()
    } else {
        (0..spec.scene_count).collect()
    };

    let clean_targets: Vec<Point3<f64>> = kept
        .iter()
        .map(|&i| model.points()[sample_indices[i]])
        .collect();

    // 3. Noise. Standard normals are drawn for every point even at zero
    // std, so sweeping the noise level does not reshuffle later draws.
    let mut points: Vec<Point3<f64>> = clean_targets
        .iter()
        .map(|p| {
            let n: [f64; 3] = std::array::from_fn(|_| StandardNormal.sample(&mut rng));
            Point3::new(
                p.x + spec.noise_std * n[0],
                p.y + spec.noise_std * n[1],
                p.z + spec.noise_std * n[2],
            )
        })
        .collect();
    let inlier_count = points.len();
    debug_assert_eq!(inlier_count, spec.inlier_count());

    // 4. Outliers in the model frame.
    let (bbox_min, bbox_max) = model.bounding_box();
    match spec.outlier_kind {
        OutlierKind::Sparse => {
            for _ in 0..spec.outliers {
                points.push(uniform_in_scaled_box(&mut rng, &bbox_min, &bbox_max, 1.5));
            }
        }
        OutlierKind::Structured => {
            let n_plane = spec.outliers.div_ceil(2);
            let normal = random_unit(&mut rng);
            let plane_center = uniform_in_scaled_box(&mut rng, &bbox_min, &bbox_max, 1.0);
            let (u, v) = plane_basis(&normal);
            for _ in 0..n_plane {
                let a = rng.random_range(-0.5..0.5);
                let b = rng.random_range(-0.5..0.5);
                points.push(Point3::from(plane_center.coords + u * a + v * b));
            }
            let blob_center = uniform_in_scaled_box(&mut rng, &bbox_min, &bbox_max, 1.0);
            for _ in 0..(spec.outliers - n_plane) {
                let n: [f64; 3] = std::array::from_fn(|_| StandardNormal.sample(&mut rng));
                points.push(Point3::new(
                    blob_center.x + 0.05 * n[0],
                    blob_center.y + 0.05 * n[1],
                    blob_center.z + 0.05 * n[2],
                ));
            }
        }
    }

    // 5. Rigid motion. Axis and direction are drawn even for zero
    // magnitudes to keep the stream layout fixed across sweep levels.
    let axis = random_unit(&mut rng);
    let rotation = exp_so3(&(axis * spec.rotation_deg.to_radians()));
    let direction = random_unit(&mut rng);
    let t_gt = RigidTransform::new(rotation, direction * spec.translation);

    let scene_points: Vec<Point3<f64>> = points.iter().map(|p| t_gt.apply_point(p)).collect();
    let x_star = log_se3(&t_gt.inverse());

    Ok(LabeledPair {
        scene: PointCloud::new(scene_points)?,
        x_star,
        t_gt,
        spec: *spec,
        inlier_count,
        clean_targets,
    })
}

fn uniform_in_scaled_box(
    rng: &mut impl Rng,
    min: &Point3<f64>,
    max: &Point3<f64>,
    scale: f64,
) -> Point3<f64> {
    let center = (min.coords + max.coords) / 2.0;
    let half = (max.coords - min.coords) / 2.0 * scale;
    Point3::new(
        center.x + half.x * rng.random_range(-1.0..1.0),
        center.y + half.y * rng.random_range(-1.0..1.0),
        center.z + half.z * rng.random_range(-1.0..1.0),
    )
}

/// Marsaglia's method: uniform direction on the unit sphere.
fn random_unit(rng: &mut impl Rng) -> Vector3<f64> {
    loop {
        let x1: f64 = rng.random_range(-1.0..1.0);
        let x2: f64 = rng.random_range(-1.0..1.0);
        let s = x1 * x1 + x2 * x2;
        if s > 0.0 && s < 1.0 {
            let f = (1.0 - s).sqrt();
            return Vector3::new(2.0 * x1 * f, 2.0 * x2 * f, 1.0 - 2.0 * s);
        }
    }
}

/// Orthonormal in-plane basis for a unit normal.
fn plane_basis(normal: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let helper = if normal.x.abs() <= normal.y.abs() && normal.x.abs() <= normal.z.abs() {
        Vector3::x()
    } else if normal.y.abs() <= normal.z.abs() {
        Vector3::y()
    } else {
        Vector3::z()
    };
    let u = normal.cross(&helper).normalize();
    let v = normal.cross(&u);
    (u, v)
}

/// Uniform per-pair magnitude ranges for training data.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingRanges {
    pub noise_std: (f64, f64),
    pub scene_count: (usize, usize),
    pub outliers: (usize, usize),
    pub incomplete_ratio: (f64, f64),
    pub rotation_deg: (f64, f64),
    pub translation: (f64, f64),
}

impl Default for TrainingRanges {
    fn default() -> Self {
        TrainingRanges {
            noise_std: (0.0, 0.05),
            scene_count: (400, 800),
            outliers: (0, 300),
            incomplete_ratio: (0.0, 0.3),
            rotation_deg: (0.0, 90.0),
            translation: (0.0, 0.3),
        }
    }
}

impl TrainingRanges {
    /// Warnings for ranges that exceed the standard training extents.
    /// Exceeding is allowed (for ablations) but flagged.
    pub fn extent_warnings(&self) -> Vec<String> {
        let default = TrainingRanges::default();
        let mut warnings = Vec::new();
        let mut check_f = |name: &str, r: (f64, f64), d: (f64, f64)| {
            if r.0 < d.0 || r.1 > d.1 {
                warnings.push(format!(
                    "training range {name} = ({}, {}) exceeds standard extent ({}, {})",
                    r.0, r.1, d.0, d.1
                ));
            }
        };
        check_f("noise_std", self.noise_std, default.noise_std);
        check_f(
            "incomplete_ratio",
            self.incomplete_ratio,
            default.incomplete_ratio,
        );
        check_f("rotation_deg", self.rotation_deg, default.rotation_deg);
        check_f("translation", self.translation, default.translation);
        if self.scene_count.0 < default.scene_count.0 || self.scene_count.1 > default.scene_count.1
        {
            warnings.push(format!(
                "training range scene_count = ({}, {}) exceeds standard extent ({}, {})",
                self.scene_count.0, self.scene_count.1, default.scene_count.0, default.scene_count.1
            ));
        }
        if self.outliers.1 > default.outliers.1 {
            warnings.push(format!(
                "training range outliers = ({}, {}) exceeds standard extent ({}, {})",
                self.outliers.0, self.outliers.1, default.outliers.0, default.outliers.1
            ));
        }
        warnings
    }
}

/// Generate `n` training pairs with magnitudes drawn uniformly from the
/// ranges, one independent sub-seed per pair. Returns extent warnings
/// alongside the pairs.
pub fn generate_training_pairs(
    model: &PointCloud,
    n: usize,
    ranges: &TrainingRanges,
    seed: u64,
) -> Result<(Vec<LabeledPair>, Vec<String>)> {
    let warnings = ranges.extent_warnings();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut pairs = Vec::with_capacity(n);
    for _ in 0..n {
        let spec = PerturbationSpec {
            noise_std: range_sample_f(&mut rng, ranges.noise_std),
            scene_count: range_sample_u(&mut rng, ranges.scene_count),
            outliers: range_sample_u(&mut rng, ranges.outliers),
            incomplete_ratio: range_sample_f(&mut rng, ranges.incomplete_ratio),
            rotation_deg: range_sample_f(&mut rng, ranges.rotation_deg),
            translation: range_sample_f(&mut rng, ranges.translation),
            outlier_kind: OutlierKind::Sparse,
            seed: rng.random::<u64>(),
        };
        pairs.push(generate_pair(model, &spec)?);
    }
    Ok((pairs, warnings))
}

fn range_sample_f(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

fn range_sample_u(rng: &mut impl Rng, (lo, hi): (usize, usize)) -> usize {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

/// The six perturbation sweeps of the benchmark protocol.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PerturbationKind {
    NoiseStd,
    SceneNumber,
    Outliers,
    Incomplete,
    Rotation,
    Translation,
}

impl PerturbationKind {
    pub const ALL: [PerturbationKind; 6] = [
        PerturbationKind::NoiseStd,
        PerturbationKind::SceneNumber,
        PerturbationKind::Outliers,
        PerturbationKind::Incomplete,
        PerturbationKind::Rotation,
        PerturbationKind::Translation,
    ];

    /// Apply a sweep level to a spec, leaving the other fields alone.
    pub fn apply(&self, spec: &mut PerturbationSpec, level: f64) {
        match self {
            PerturbationKind::NoiseStd => spec.noise_std = level,
            PerturbationKind::SceneNumber => spec.scene_count = level.round() as usize,
            PerturbationKind::Outliers => spec.outliers = level.round() as usize,
            PerturbationKind::Incomplete => spec.incomplete_ratio = level,
            PerturbationKind::Rotation => spec.rotation_deg = level,
            PerturbationKind::Translation => spec.translation = level,
        }
    }
}

impl std::fmt::Display for PerturbationKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            PerturbationKind::NoiseStd => "noise-std",
            PerturbationKind::SceneNumber => "scene-number",
            PerturbationKind::Outliers => "outliers",
            PerturbationKind::Incomplete => "incomplete",
            PerturbationKind::Rotation => "rotation",
            PerturbationKind::Translation => "translation",
        };
        write!(f, "{name}")
    }
}

impl FromStr for PerturbationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "noise-std" => Ok(PerturbationKind::NoiseStd),
            "scene-number" => Ok(PerturbationKind::SceneNumber),
            "outliers" => Ok(PerturbationKind::Outliers),
            "incomplete" => Ok(PerturbationKind::Incomplete),
            "rotation" => Ok(PerturbationKind::Rotation),
            "translation" => Ok(PerturbationKind::Translation),
            other => Err(Error::UnknownPerturbation(other.to_string())),
        }
    }
}

/// Sweep one perturbation over `levels`, everything else pinned at the
/// defaults, `per_level` pairs per level. Each pair's spec records its
/// level through the swept field.
pub fn generate_sweep(
    model: &PointCloud,
    kind: PerturbationKind,
    levels: &[f64],
    per_level: usize,
    seed: u64,
) -> Result<Vec<LabeledPair>> {
    let mut pairs = Vec::with_capacity(levels.len() * per_level);
    for (li, &level) in levels.iter().enumerate() {
        for case in 0..per_level {
            let mut spec = PerturbationSpec {
                seed: derive_seed(seed, (li * per_level + case) as u64),
                ..PerturbationSpec::default()
            };
            kind.apply(&mut spec, level);
            pairs.push(generate_pair(model, &spec)?);
        }
    }
    Ok(pairs)
}

/// SplitMix64 step; the standard cheap way to spread one master seed into
/// independent sub-seeds.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base
        .wrapping_add(stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Serialize, Deserialize)]
struct GroundTruthFile {
    x_star: [f64; 6],
    t_gt: [f64; 12],
}

/// Write a pair as `scene.ply`, `spec.json`, `gt.json` in `dir`.
pub fn save_pair(pair: &LabeledPair, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save(&pair.scene, &dir.join("scene.ply"), CloudFormat::PlyAscii)?;
    let spec_path = dir.join("spec.json");
    let spec_json = serde_json::to_string_pretty(&pair.spec)
        .map_err(|e| Error::json(&spec_path, e))?;
    fs::write(&spec_path, spec_json).map_err(|e| Error::io(&spec_path, e))?;
    let gt_path = dir.join("gt.json");
    let gt = GroundTruthFile {
        x_star: pair.x_star.to_array(),
        t_gt: pair.t_gt.to_row_major(),
    };
    let gt_json = serde_json::to_string_pretty(&gt).map_err(|e| Error::json(&gt_path, e))?;
    fs::write(&gt_path, gt_json).map_err(|e| Error::io(&gt_path, e))
}

/// Load a pair directory by regenerating it from `spec.json` and checking
/// the stored scene and ground truth match bit for bit.
pub fn load_pair(dir: &Path, model: &PointCloud) -> Result<LabeledPair> {
    let spec_path = dir.join("spec.json");
    let spec_text = fs::read_to_string(&spec_path).map_err(|e| Error::io(&spec_path, e))?;
    let spec: PerturbationSpec =
        serde_json::from_str(&spec_text).map_err(|e| Error::json(&spec_path, e))?;
    let pair = generate_pair(model, &spec)?;

    let stored = load(&dir.join("scene.ply"), CloudFormat::PlyAscii)?;
    if stored.points() != pair.scene.points() {
        return Err(Error::PairMismatch(format!(
            "{}: stored scene does not match regeneration from spec.json",
            dir.display()
        )));
    }
    let gt_path = dir.join("gt.json");
    let gt_text = fs::read_to_string(&gt_path).map_err(|e| Error::io(&gt_path, e))?;
    let gt: GroundTruthFile =
        serde_json::from_str(&gt_text).map_err(|e| Error::json(&gt_path, e))?;
    if gt.x_star != pair.x_star.to_array() {
        return Err(Error::PairMismatch(format!(
            "{}: stored ground truth does not match regeneration",
            dir.display()
        )));
    }
    Ok(pair)
}
