//! Learning the sequence of linear update maps.
//!
//! Each map regresses the histogram feature to a parameter update; the
//! sequence is trained greedily, one ridge solve per stage, with every
//! sample's state advanced by `x := x - D h(x)` after each stage. Maps
//! are fit so that `D h` points from the ground truth toward the current
//! state: subtracting the prediction moves the state toward the truth,
//! and because the ridge objective admits the zero map, the mean squared
//! training error strictly decreases whenever a nonzero map exists.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::cloud::PointCloud;
use crate::descriptor::{histogram, DescriptorMode, ModelContext};
use crate::error::{Error, Result};
use crate::lie::Twist;
use crate::perturb::LabeledPair;

/// Parameter dimension: a twist.
pub const PARAM_DIM: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    /// Exact ridge minimizer via the normal equations (default).
    Exact,
    /// Per-sample averaged rank-one closed form. Not the exact minimizer
    /// for more than one sample; kept for fidelity experiments.
    Paper,
}

/// One training tuple: initial state, ground truth, and the scene it was
/// extracted from.
#[derive(Clone, Debug)]
pub struct TrainingSample {
    pub x0: Twist,
    pub x_star: Twist,
    pub scene: PointCloud,
}

/// Training tuples plus the shared model context.
#[derive(Debug)]
pub struct TrainingSet {
    pub context: ModelContext,
    pub samples: Vec<TrainingSample>,
}

impl TrainingSet {
    /// Assemble from generated pairs; every tuple starts at the identity
    /// twist, matching the test-time initialization.
    pub fn from_pairs(context: ModelContext, pairs: &[LabeledPair]) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::InvalidArgument("training set is empty".into()));
        }
        let samples = pairs
            .iter()
            .map(|p| TrainingSample {
                x0: Twist::zero(),
                x_star: p.x_star,
                scene: p.scene.clone(),
            })
            .collect();
        Ok(TrainingSet { context, samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Trained maps with the hyperparameters that produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct MapSequence {
    /// `D_1 .. D_K`, each `PARAM_DIM x feature_len`.
    pub maps: Vec<DMatrix<f64>>,
    pub lambda: f64,
    pub sigma2: f64,
    pub mode: DescriptorMode,
    pub n_model: usize,
    pub fingerprint: [u8; 32],
}

impl MapSequence {
    pub fn k(&self) -> usize {
        self.maps.len()
    }

    pub fn feature_len(&self) -> usize {
        self.mode.feature_len(self.n_model)
    }

    /// Reject maps trained against a different context. `force` skips the
    /// fingerprint check but never the dimension checks.
    pub fn check_compatible(&self, ctx: &ModelContext, force: bool) -> Result<()> {
        if self.mode != ctx.mode || self.n_model != ctx.n_model() {
            return Err(Error::DimensionMismatch(format!(
                "maps are {} over {} model points, context is {} over {}",
                self.mode,
                self.n_model,
                ctx.mode,
                ctx.n_model()
            )));
        }
        if !force && &self.fingerprint != ctx.fingerprint() {
            return Err(Error::FingerprintMismatch);
        }
        Ok(())
    }
}

/// Per-stage training error statistics over `||x_star - x_k||_2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ErrorTracePoint {
    /// 0 is the initial state, `k` is after applying map `k`.
    pub iteration: usize,
    pub mean_error: f64,
    pub std_error: f64,
    pub mean_squared_error: f64,
}

/// Exact ridge minimizer of `(1/N) sum ||r_i - D h_i||^2 + lambda ||D||_F^2`.
///
/// Solves `D (H^T H + N lambda I) = R^T H` through a Cholesky
/// factorization of the symmetric positive-definite Gram matrix; no
/// explicit inverse is formed.
pub fn ridge_solve_exact(
    residuals: &DMatrix<f64>,
    features: &DMatrix<f64>,
    lambda: f64,
) -> Result<DMatrix<f64>> {
    if lambda <= 0.0 {
        return Err(Error::NonPositiveLambda(lambda));
    }
    let n = features.nrows();
    if residuals.nrows() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} residual rows vs {} feature rows",
            residuals.nrows(),
            n
        )));
    }
    let f = features.ncols();
    let mut gram = features.transpose() * features;
    for i in 0..f {
        gram[(i, i)] += n as f64 * lambda;
    }
    let rhs = features.transpose() * residuals; // f x p
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::DegenerateGeometry("ridge Gram matrix not positive definite".into()))?;
    let solution = chol.solve(&rhs); // f x p
    Ok(solution.transpose())
}

/// Per-sample averaged closed form:
/// `D = (1/N) sum r_i h_i^T / (lambda + h_i^T h_i)`.
pub fn ridge_solve_paper(
    residuals: &DMatrix<f64>,
    features: &DMatrix<f64>,
    lambda: f64,
) -> Result<DMatrix<f64>> {
    if lambda <= 0.0 {
        return Err(Error::NonPositiveLambda(lambda));
    }
    let n = features.nrows();
    if residuals.nrows() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} residual rows vs {} feature rows",
            residuals.nrows(),
            n
        )));
    }
    let p = residuals.ncols();
    let f = features.ncols();
    let mut d = DMatrix::zeros(p, f);
    for i in 0..n {
        let h = features.row(i);
        let r = residuals.row(i);
        let denom = lambda + h.dot(&h);
        d += r.transpose() * h / denom;
    }
    Ok(d / n as f64)
}

/// Train `k` maps. Per stage: extract features at the current states,
/// solve for the map, advance every state with `x := x - D h`, and record
/// the error statistics. The trace has `k + 1` entries starting at the
/// untouched initial states.
pub fn train(
    ts: &TrainingSet,
    k: usize,
    lambda: f64,
    solver: SolverKind,
) -> Result<(MapSequence, Vec<ErrorTracePoint>)> {
    if k == 0 {
        return Err(Error::InvalidArgument("need at least one map".into()));
    }
    if lambda <= 0.0 {
        return Err(Error::NonPositiveLambda(lambda));
    }
    let n = ts.samples.len();
    let f = ts.context.feature_len();
    let ctx = &ts.context;

    let mut states: Vec<Twist> = ts.samples.iter().map(|s| s.x0).collect();
    let mut maps = Vec::with_capacity(k);
    let mut trace = vec![trace_point(0, &states, &ts.samples)];

    for stage in 0..k {
        // Feature rows are embarrassingly parallel; collected in sample
        // order so the solve is deterministic.
        let rows: Vec<Vec<f64>> = ts
            .samples
            .par_iter()
            .zip(states.par_iter())
            .map(|(sample, x)| histogram(ctx, &sample.scene, x).values)
            .collect();

        let mut features = DMatrix::zeros(n, f);
        let mut residuals = DMatrix::zeros(n, PARAM_DIM);
        for (i, row) in rows.iter().enumerate() {
            if row.iter().any(|v| !v.is_finite()) || !states[i].is_finite() {
                return Err(Error::NonFiniteSample {
                    sample: i,
                    iteration: stage + 1,
                });
            }
            features.row_mut(i).copy_from_slice(row);
            let r = (states[i] - ts.samples[i].x_star).as_vector();
            residuals.row_mut(i).copy_from_slice(r.as_slice());
        }

        let d = match solver {
            SolverKind::Exact => ridge_solve_exact(&residuals, &features, lambda)?,
            SolverKind::Paper => ridge_solve_paper(&residuals, &features, lambda)?,
        };

        for (i, row) in rows.iter().enumerate() {
            let h = DVector::from_column_slice(row);
            let update = &d * h;
            let new = states[i].as_vector() - update;
            states[i] = Twist::from_vector(&new);
        }
        maps.push(d);
        trace.push(trace_point(stage + 1, &states, &ts.samples));
    }

    Ok((
        MapSequence {
            maps,
            lambda,
            sigma2: ctx.sigma2,
            mode: ctx.mode,
            n_model: ctx.n_model(),
            fingerprint: *ctx.fingerprint(),
        },
        trace,
    ))
}

fn trace_point(iteration: usize, states: &[Twist], samples: &[TrainingSample]) -> ErrorTracePoint {
    let n = states.len() as f64;
    let norms: Vec<f64> = states
        .iter()
        .zip(samples)
        .map(|(x, s)| (*x - s.x_star).norm())
        .collect();
    let mean = norms.iter().sum::<f64>() / n;
    let var = norms.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / n;
    let mean_sq = norms.iter().map(|e| e * e).sum::<f64>() / n;
    ErrorTracePoint {
        iteration,
        mean_error: mean,
        std_error: var.sqrt(),
        mean_squared_error: mean_sq,
    }
}

const MAP_MAGIC: &[u8; 4] = b"IDO1";
const MAP_VERSION: u32 = 1;

impl MapSequence {
    /// Binary layout: magic `IDO1`, little-endian header `{version u32,
    /// mode u8, K u32, p u32, f u32, N_M u32, lambda f64, sigma2 f64,
    /// fingerprint [u8;32]}`, then `K` row-major `p x f` f64 blocks.
    pub fn save(&self, path: &Path) -> Result<()> {
        let f = self.feature_len();
        let mut buf: Vec<u8> =
            Vec::with_capacity(61 + self.maps.len() * PARAM_DIM * f * 8);
        buf.extend_from_slice(MAP_MAGIC);
        buf.extend_from_slice(&MAP_VERSION.to_le_bytes());
        buf.push(match self.mode {
            DescriptorMode::Original => 0,
            DescriptorMode::Improved => 1,
        });
        buf.extend_from_slice(&(self.maps.len() as u32).to_le_bytes());
        buf.extend_from_slice(&(PARAM_DIM as u32).to_le_bytes());
        buf.extend_from_slice(&(f as u32).to_le_bytes());
        buf.extend_from_slice(&(self.n_model as u32).to_le_bytes());
        buf.extend_from_slice(&self.lambda.to_le_bytes());
        buf.extend_from_slice(&self.sigma2.to_le_bytes());
        buf.extend_from_slice(&self.fingerprint);
        for map in &self.maps {
            for r in 0..PARAM_DIM {
                for c in 0..f {
                    buf.extend_from_slice(&map[(r, c)].to_le_bytes());
                }
            }
        }
        let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(&buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        let bad = |msg: &str| Error::malformed(path, 0, msg);

        if bytes.len() < 61 {
            return Err(bad("file too short for header"));
        }
        if &bytes[0..4] != MAP_MAGIC {
            return Err(bad("bad magic, expected IDO1"));
        }
        let u32_at = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
        let f64_at = |off: usize| f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());
        let version = u32_at(4);
        if version != MAP_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let mode = match bytes[8] {
            0 => DescriptorMode::Original,
            1 => DescriptorMode::Improved,
            m => return Err(bad(&format!("unknown mode byte {m}"))),
        };
        let k = u32_at(9) as usize;
        let p = u32_at(13) as usize;
        let f = u32_at(17) as usize;
        let n_model = u32_at(21) as usize;
        let lambda = f64_at(25);
        let sigma2 = f64_at(33);
        let mut fingerprint = [0u8; 32];
        fingerprint.copy_from_slice(&bytes[41..73]);

        if p != PARAM_DIM {
            return Err(bad(&format!("parameter dimension {p}, expected {PARAM_DIM}")));
        }
        if f != mode.feature_len(n_model) {
            return Err(bad(&format!(
                "feature length {f} inconsistent with mode {mode} over {n_model} model points"
            )));
        }
        if k == 0 {
            return Err(bad("no maps"));
        }
        let expected = 73 + k * p * f * 8;
        if bytes.len() != expected {
            return Err(bad(&format!(
                "expected {expected} bytes, found {}",
                bytes.len()
            )));
        }
        let mut maps = Vec::with_capacity(k);
        let mut off = 73;
        for _ in 0..k {
            let mut m = DMatrix::zeros(p, f);
            for r in 0..p {
                for c in 0..f {
                    m[(r, c)] = f64_at(off);
                    off += 8;
                }
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(bad("non-finite map entry"));
            }
            maps.push(m);
        }
        Ok(MapSequence {
            maps,
            lambda,
            sigma2,
            mode,
            n_model,
            fingerprint,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::descriptor::build_context;
    use crate::perturb::{generate_training_pairs, TrainingRanges};
    use crate::shape::synthetic_shape;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> DMatrix<f64> {
        DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    /// Plain gradient descent on the unaveraged ridge objective
    /// `sum ||r_i - D h_i||^2 + N lambda ||D||_F^2`, which shares its
    /// minimizer with the averaged form.
    fn ridge_gradient_descent(
        residuals: &DMatrix<f64>,
        features: &DMatrix<f64>,
        lambda: f64,
        steps: usize,
        step_size: f64,
    ) -> DMatrix<f64> {
        let n = features.nrows() as f64;
        let p = residuals.ncols();
        let f = features.ncols();
        let mut d = DMatrix::zeros(p, f);
        for _ in 0..steps {
            // grad = 2 (D H^T H - R^T H) + 2 N lambda D
            let grad = (&d * (features.transpose() * features)
                - residuals.transpose() * features)
                * 2.0
                + &d * (2.0 * n * lambda);
            d -= grad * step_size;
        }
        d
    }

    #[test]
    fn zero_residuals_give_zero_map() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let features = random_matrix(&mut rng, 20, 12);
        let residuals = DMatrix::zeros(20, 6);
        let d = ridge_solve_exact(&residuals, &features, 0.0002).unwrap();
        assert!(d.amax() < 1e-14);
        let d = ridge_solve_paper(&residuals, &features, 0.0002).unwrap();
        assert!(d.amax() == 0.0);
    }

    #[test]
    fn huge_lambda_shrinks_map_to_zero() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let features = random_matrix(&mut rng, 30, 10);
        let residuals = random_matrix(&mut rng, 30, 6);
        let d = ridge_solve_exact(&residuals, &features, 1e9).unwrap();
        assert!(d.norm() < 1e-6);
    }

    #[test]
    fn exact_solver_matches_gradient_descent_oracle() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let features = random_matrix(&mut rng, 50, 40);
        let residuals = random_matrix(&mut rng, 50, 6);
        let lambda = 0.0002;
        let d = ridge_solve_exact(&residuals, &features, lambda).unwrap();
        let oracle = ridge_gradient_descent(&residuals, &features, lambda, 100_000, 1e-3);
        assert!(
            (&d - &oracle).amax() < 1e-6,
            "max deviation {}",
            (&d - &oracle).amax()
        );
    }

    #[test]
    fn exact_solver_satisfies_normal_equations() {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let features = random_matrix(&mut rng, 60, 25);
        let residuals = random_matrix(&mut rng, 60, 6);
        let lambda = 0.0002;
        let d = ridge_solve_exact(&residuals, &features, lambda).unwrap();
        let n = features.nrows() as f64;
        let gram = features.transpose() * &features
            + DMatrix::identity(25, 25) * (n * lambda);
        let lhs = &d * gram;
        let rhs = residuals.transpose() * &features;
        assert!(lhs.norm() > 0.0);
        assert!((&lhs - &rhs).norm() / rhs.norm() < 1e-10);
    }

    #[test]
    fn paper_solver_single_sample_form() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let features = random_matrix(&mut rng, 1, 8);
        let residuals = random_matrix(&mut rng, 1, 6);
        let lambda = 0.37;
        let d = ridge_solve_paper(&residuals, &features, lambda).unwrap();
        let h = features.row(0).transpose();
        let r = residuals.row(0).transpose();
        let expected = r * h.transpose() / (lambda + h.dot(&h));
        assert!((d - expected).amax() < 1e-14);
    }

    #[test]
    fn paper_solver_differs_from_exact_for_many_samples() {
        // The averaged closed form is not the exact minimizer; report the
        // discrepancy rather than asserting equality.
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let features = random_matrix(&mut rng, 20, 10);
        let residuals = random_matrix(&mut rng, 20, 6);
        let exact = ridge_solve_exact(&residuals, &features, 0.0002).unwrap();
        let averaged = ridge_solve_paper(&residuals, &features, 0.0002).unwrap();
        let gap = (&exact - &averaged).norm() / exact.norm();
        println!("relative exact-vs-averaged gap: {gap:.3e}");
        assert!(gap.is_finite());
    }

    #[test]
    fn lambda_must_be_positive() {
        let features = DMatrix::zeros(2, 3);
        let residuals = DMatrix::zeros(2, 6);
        assert!(matches!(
            ridge_solve_exact(&residuals, &features, 0.0),
            Err(Error::NonPositiveLambda(_))
        ));
        assert!(matches!(
            ridge_solve_paper(&residuals, &features, -1.0),
            Err(Error::NonPositiveLambda(_))
        ));
    }

    fn desk_training_set(n: usize, mode: DescriptorMode, seed: u64) -> TrainingSet {
        let model = synthetic_shape(48).unwrap();
        let ctx = build_context(&model, 0.03, mode).unwrap();
        let ranges = TrainingRanges {
            scene_count: (100, 160),
            outliers: (0, 40),
            ..TrainingRanges::default()
        };
        let (pairs, _) = generate_training_pairs(&ctx.model, n, &ranges, seed).unwrap();
        TrainingSet::from_pairs(ctx, &pairs).unwrap()
    }

    #[test]
    fn training_at_ground_truth_yields_zero_maps() {
        let model = synthetic_shape(32).unwrap();
        let ctx = build_context(&model, 0.03, DescriptorMode::Improved).unwrap();
        let sample = TrainingSample {
            x0: Twist::zero(),
            x_star: Twist::zero(),
            scene: PointCloud::new(ctx.model.points().to_vec()).unwrap(),
        };
        let ts = TrainingSet {
            context: ctx,
            samples: vec![sample],
        };
        let (maps, trace) = train(&ts, 1, 0.0002, SolverKind::Exact).unwrap();
        assert!(maps.maps[0].amax() < 1e-12);
        assert!(trace.iter().all(|t| t.mean_error < 1e-12));
    }

    #[test]
    fn single_sample_one_stage_lands_on_truth() {
        // Sign guard: one exact-fit update must move the state onto the
        // ground truth, not away from it.
        let model = synthetic_shape(48).unwrap();
        let ctx = build_context(&model, 0.03, DescriptorMode::Improved).unwrap();
        let (pairs, _) = generate_training_pairs(
            &ctx.model,
            1,
            &TrainingRanges {
                scene_count: (120, 120),
                outliers: (0, 0),
                noise_std: (0.0, 0.0),
                incomplete_ratio: (0.0, 0.0),
                rotation_deg: (30.0, 30.0),
                translation: (0.1, 0.1),
            },
            11,
        )
        .unwrap();
        let x_star = pairs[0].x_star;
        let ts = TrainingSet::from_pairs(ctx, &pairs).unwrap();
        let (_, trace) = train(&ts, 1, 1e-9, SolverKind::Exact).unwrap();
        assert!(trace[0].mean_error > 0.05);
        assert!(
            trace[1].mean_error < 1e-6,
            "one-sample exact fit should reach the truth, err {} (truth {:?})",
            trace[1].mean_error,
            x_star.to_array()
        );
    }

    #[test]
    fn training_error_strictly_decreases() {
        let ts = desk_training_set(60, DescriptorMode::Improved, 21);
        let (_, trace) = train(&ts, 6, 0.0002, SolverKind::Exact).unwrap();
        for w in trace.windows(2) {
            assert!(
                w[1].mean_squared_error < w[0].mean_squared_error
                    || w[0].mean_squared_error < 1e-20,
                "no strict decrease: {} -> {}",
                w[0].mean_squared_error,
                w[1].mean_squared_error
            );
        }
    }

    #[test]
    fn training_is_deterministic() {
        let ts = desk_training_set(20, DescriptorMode::Original, 33);
        let (a, _) = train(&ts, 3, 0.0002, SolverKind::Exact).unwrap();
        let (b, _) = train(&ts, 3, 0.0002, SolverKind::Exact).unwrap();
        assert_eq!(a.maps, b.maps);
    }

    #[test]
    fn standard_configuration_accepted() {
        // The full-scale configuration must pass parameter validation.
        let ts = desk_training_set(2, DescriptorMode::Improved, 1);
        assert!(train(&ts, 30, 0.0002, SolverKind::Exact).is_ok());
    }

    #[test]
    fn map_file_roundtrip_and_fingerprint_check() {
        let ts = desk_training_set(10, DescriptorMode::Improved, 8);
        let (maps, _) = train(&ts, 2, 0.0002, SolverKind::Exact).unwrap();
        let path = std::env::temp_dir().join("ido-maps-roundtrip.ido");
        maps.save(&path).unwrap();
        let back = MapSequence::load(&path).unwrap();
        assert_eq!(back, maps);
        back.check_compatible(&ts.context, false).unwrap();

        // A context over a different model is rejected without force.
        let other_model = synthetic_shape(49).unwrap();
        let other_ctx = build_context(&other_model, 0.03, DescriptorMode::Improved).unwrap();
        assert!(matches!(
            back.check_compatible(&other_ctx, false),
            Err(Error::DimensionMismatch(_))
        ));
        let same_size = synthetic_shape(48).unwrap();
        let mut shifted = same_size.points().to_vec();
        shifted[0].x += 1e-3;
        let shifted_ctx = build_context(
            &PointCloud::new(shifted).unwrap(),
            0.03,
            DescriptorMode::Improved,
        )
        .unwrap();
        assert!(matches!(
            back.check_compatible(&shifted_ctx, false),
            Err(Error::FingerprintMismatch)
        ));
        back.check_compatible(&shifted_ctx, true).unwrap();
    }
}
