//! Test-time registration.
//!
//! The trained maps are applied once each, then the last map is reused
//! until the update norm drops below epsilon or the iteration cap is hit.
//! A classic point-to-point ICP with an SVD rigid fit serves as the
//! baseline; both registrars report the same result shape with a full
//! iteration trace.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DVector, Matrix3, Point3, Vector6};

use crate::cloud::{PointCloud, SpatialIndex};
use crate::descriptor::{histogram, ModelContext};
use crate::error::{Error, Result};
use crate::lie::{exp_se3, log_se3, RigidTransform, Twist};
use crate::regressor::MapSequence;

pub const DEFAULT_MAX_ITER: usize = 1000;
pub const DEFAULT_EPSILON: f64 = 0.005;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Termination {
    /// Update norm fell below epsilon.
    Epsilon,
    /// Iteration cap reached.
    MaxIter,
}

/// One applied update step.
#[derive(Clone, Debug)]
pub struct TraceStep {
    pub iteration: usize,
    /// State after applying this step's update.
    pub x: Twist,
    pub update: Vector6<f64>,
    pub update_norm: f64,
    /// Present when histogram recording was requested.
    pub histogram: Option<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct RegistrationResult {
    pub x_final: Twist,
    pub transform: RigidTransform,
    /// Number of applied updates.
    pub iterations: usize,
    pub terminated_by: Termination,
    /// Norm of the last evaluated update (the one that failed the epsilon
    /// test when terminated by epsilon).
    pub final_update_norm: f64,
    pub trace: Vec<TraceStep>,
    /// Set when ICP hit a degenerate correspondence set and returned its
    /// best state so far.
    pub degenerate: bool,
}

impl RegistrationResult {
    /// Re-apply the recorded updates from `x0`; reproduces `x_final`
    /// bitwise because the same subtractions run in the same order.
    pub fn replay(&self, x0: &Twist) -> Twist {
        let mut x = x0.as_vector();
        for step in &self.trace {
            x -= step.update;
        }
        Twist::from_vector(&x)
    }

    /// CSV with columns `iter,x1..x6,update_norm`, one row per applied step.
    pub fn write_trace_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("iter,x1,x2,x3,x4,x5,x6,update_norm\n");
        for step in &self.trace {
            let a = step.x.to_array();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                step.iteration, a[0], a[1], a[2], a[3], a[4], a[5], step.update_norm
            );
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    /// Recorded histograms as (iteration, values) rows.
    pub fn histogram_rows(&self) -> Vec<(usize, &[f64])> {
        self.trace
            .iter()
            .filter_map(|s| s.histogram.as_ref().map(|h| (s.iteration, h.as_slice())))
            .collect()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct RegistrationOptions {
    pub max_iter: usize,
    pub epsilon: f64,
    /// Record the histogram at every step (memory: feature_len per step).
    pub record_histograms: bool,
}

impl Default for RegistrationOptions {
    fn default() -> Self {
        RegistrationOptions {
            max_iter: DEFAULT_MAX_ITER,
            epsilon: DEFAULT_EPSILON,
            record_histograms: false,
        }
    }
}

/// Registration with the trained map sequence.
///
/// The first `K` maps are applied unconditionally (no early exit), then
/// the last map repeats while its update norm stays at or above epsilon
/// and the total applied-update count is below `max_iter`. The epsilon
/// test uses the Euclidean norm of the whole 6-vector update, mixing
/// radians and length units.
pub fn register_do(
    ctx: &ModelContext,
    maps: &MapSequence,
    scene: &PointCloud,
    x0: &Twist,
    opts: &RegistrationOptions,
) -> Result<RegistrationResult> {
    maps.check_compatible(ctx, true)?;
    if maps.feature_len() != ctx.feature_len() {
        return Err(Error::DimensionMismatch(format!(
            "map feature length {} vs context {}",
            maps.feature_len(),
            ctx.feature_len()
        )));
    }
    if opts.max_iter < maps.k() {
        return Err(Error::InvalidArgument(format!(
            "max_iter {} below map count {}",
            opts.max_iter,
            maps.k()
        )));
    }
    if opts.epsilon <= 0.0 {
        return Err(Error::InvalidArgument("epsilon must be positive".into()));
    }

    let mut x = *x0;
    let mut trace = Vec::new();
    let evaluate = |x: &Twist, map_idx: usize| -> (Vector6<f64>, Option<Vec<f64>>) {
        let h = histogram(ctx, scene, x);
        let update = &maps.maps[map_idx] * DVector::from_column_slice(&h.values);
        let recorded = opts.record_histograms.then_some(h.values);
        (Vector6::from_column_slice(update.as_slice()), recorded)
    };

    for k in 0..maps.k() {
        let (update, recorded) = evaluate(&x, k);
        x = Twist::from_vector(&(x.as_vector() - update));
        trace.push(TraceStep {
            iteration: k + 1,
            x,
            update,
            update_norm: update.norm(),
            histogram: recorded,
        });
    }

    let last = maps.k() - 1;
    let (terminated_by, final_update_norm) = loop {
        let (update, recorded) = evaluate(&x, last);
        let norm = update.norm();
        if norm < opts.epsilon {
            break (Termination::Epsilon, norm);
        }
        if trace.len() >= opts.max_iter {
            break (Termination::MaxIter, norm);
        }
        x = Twist::from_vector(&(x.as_vector() - update));
        trace.push(TraceStep {
            iteration: trace.len() + 1,
            x,
            update,
            update_norm: norm,
            histogram: recorded,
        });
    };

    Ok(RegistrationResult {
        x_final: x,
        transform: exp_se3(&x),
        iterations: trace.len(),
        terminated_by,
        final_update_norm,
        trace,
        degenerate: false,
    })
}

/// Least-squares rigid fit of scene points onto model points.
///
/// Kabsch: SVD of the centered cross-covariance with a determinant
/// correction so the result is a proper rotation, never a reflection.
pub fn procrustes_fit(pairs: &[(Point3<f64>, Point3<f64>)]) -> Result<RigidTransform> {
    if pairs.len() < 3 {
        return Err(Error::DegenerateGeometry(format!(
            "rigid fit needs at least 3 pairs, got {}",
            pairs.len()
        )));
    }
    let n = pairs.len() as f64;
    let scene_centroid = pairs.iter().fold(nalgebra::Vector3::zeros(), |a, (s, _)| a + s.coords) / n;
    let model_centroid = pairs.iter().fold(nalgebra::Vector3::zeros(), |a, (_, m)| a + m.coords) / n;

    let mut cross = Matrix3::zeros();
    for (s, m) in pairs {
        cross += (m.coords - model_centroid) * (s.coords - scene_centroid).transpose();
    }
    let svd = cross.svd(true, true);
    let sv = svd.singular_values;
    if sv[1] <= sv[0] * 1e-12 {
        return Err(Error::DegenerateGeometry(
            "correspondences are collinear or coincident".into(),
        ));
    }
    let u = svd.u.unwrap();
    let v_t = svd.v_t.unwrap();
    let mut rotation = u * v_t;
    if rotation.determinant() < 0.0 {
        let mut u_fixed = u;
        u_fixed.column_mut(2).scale_mut(-1.0);
        rotation = u_fixed * v_t;
    }
    let translation = model_centroid - rotation * scene_centroid;
    Ok(RigidTransform::new(rotation, translation))
}

/// Classic ICP: nearest-neighbor correspondences scene -> model, rigid
/// refit, repeated until the mean squared correspondence distance stops
/// improving by `tol` or `max_iter` is reached.
///
/// A degenerate correspondence set (effectively one model point, or a
/// collinear fit) stops the loop; the best state so far is returned with
/// the degenerate flag set.
pub fn register_icp(
    model: &PointCloud,
    scene: &PointCloud,
    x0: &Twist,
    max_iter: usize,
    tol: f64,
) -> Result<RegistrationResult> {
    let index = SpatialIndex::build(model);
    let mut transform = exp_se3(x0);
    let mut moved: Vec<Point3<f64>> = scene.points().iter().map(|p| transform.apply_point(p)).collect();
    let mut trace = Vec::new();
    let mut previous_mse = f64::INFINITY;
    let mut terminated_by = Termination::MaxIter;
    let mut degenerate = false;
    let mut final_update_norm = f64::NAN;

    for iter in 1..=max_iter {
        let correspondences: Vec<(usize, f64)> = moved.iter().map(|p| index.nearest(p)).collect();
        let mse = correspondences.iter().map(|(_, d)| d * d).sum::<f64>() / moved.len() as f64;

        let mut unique: Vec<usize> = correspondences.iter().map(|(i, _)| *i).collect();
        unique.sort_unstable();
        unique.dedup();
        if unique.len() < 3 {
            degenerate = true;
            final_update_norm = 0.0;
            break;
        }

        let pairs: Vec<(Point3<f64>, Point3<f64>)> = moved
            .iter()
            .zip(&correspondences)
            .map(|(p, (mi, _))| (*p, model.points()[*mi]))
            .collect();
        let delta = match procrustes_fit(&pairs) {
            Ok(t) => t,
            Err(Error::DegenerateGeometry(_)) => {
                degenerate = true;
                final_update_norm = 0.0;
                break;
            }
            Err(e) => return Err(e),
        };

        transform = delta.compose(&transform);
        for p in &mut moved {
            *p = delta.apply_point(p);
        }
        let delta_twist = log_se3(&delta);
        let norm = delta_twist.norm();
        trace.push(TraceStep {
            iteration: iter,
            x: log_se3(&transform),
            update: -delta_twist.as_vector(),
            update_norm: norm,
            histogram: None,
        });
        final_update_norm = norm;

        if previous_mse - mse < tol {
            terminated_by = Termination::Epsilon;
            break;
        }
        previous_mse = mse;
    }

    let x_final = log_se3(&transform);
    Ok(RegistrationResult {
        x_final,
        transform,
        iterations: trace.len(),
        terminated_by,
        final_update_norm,
        trace,
        degenerate,
    })
}
