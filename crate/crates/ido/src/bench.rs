//! Metrics, experiment campaigns, and their CSV outputs.
//!
//! A campaign trains map sequences for the requested algorithms, runs
//! every perturbation sweep at every level, and writes per-case and
//! per-level CSV files plus summary tables. Outputs are byte-identical
//! across runs with the same config and seed, except for the per-case
//! wall-time column.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::Point3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::{downsample_average, load_auto, normalize_to_unit, PointCloud};
use crate::descriptor::{build_context, DescriptorMode, ModelContext};
use crate::error::{Error, Result};
use crate::lie::Twist;
use crate::perturb::{
    derive_seed, generate_sweep, generate_training_pairs, LabeledPair, PerturbationKind,
    PerturbationSpec, TrainingRanges,
};
use crate::regressor::{train, MapSequence, SolverKind, TrainingSet};
use crate::registrar::{register_do, register_icp, RegistrationOptions, RegistrationResult};
use crate::shape::synthetic_shape;

/// Fraction of corresponded points registered within `t_pt`.
///
/// Clouds must be equal length and index-aligned (ground-truth
/// correspondence by construction).
pub fn point_acc(registered: &[Point3<f64>], target: &[Point3<f64>], t_pt: f64) -> Result<f64> {
    if registered.len() != target.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} registered vs {} target points",
            registered.len(),
            target.len()
        )));
    }
    let hits = registered
        .iter()
        .zip(target)
        .filter(|(a, b)| (*a - *b).norm() < t_pt)
        .count();
    Ok(hits as f64 / registered.len() as f64)
}

/// Root mean squared per-point Euclidean error.
pub fn point_rmse(registered: &[Point3<f64>], target: &[Point3<f64>]) -> Result<f64> {
    if registered.len() != target.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} registered vs {} target points",
            registered.len(),
            target.len()
        )));
    }
    let sum: f64 = registered
        .iter()
        .zip(target)
        .map(|(a, b)| (a - b).norm_squared())
        .sum();
    Ok((sum / registered.len() as f64).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    ImprovedDo,
    OriginalDo,
    Icp,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::ImprovedDo, Algorithm::OriginalDo, Algorithm::Icp];

    pub fn descriptor_mode(&self) -> Option<DescriptorMode> {
        match self {
            Algorithm::ImprovedDo => Some(DescriptorMode::Improved),
            Algorithm::OriginalDo => Some(DescriptorMode::Original),
            Algorithm::Icp => None,
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Algorithm::ImprovedDo => write!(f, "improved-do"),
            Algorithm::OriginalDo => write!(f, "original-do"),
            Algorithm::Icp => write!(f, "icp"),
        }
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "improved-do" => Ok(Algorithm::ImprovedDo),
            "original-do" => Ok(Algorithm::OriginalDo),
            "icp" => Ok(Algorithm::Icp),
            other => Err(Error::InvalidArgument(format!("unknown algorithm {other}"))),
        }
    }
}

/// Which scene points enter the metrics. Outliers and cropped points have
/// no model counterpart, so the default restricts to inliers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum MetricPoints {
    #[default]
    Inliers,
    All,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelConfig {
    /// "synthetic" or a path to a PLY/CSV cloud.
    pub source: String,
    /// Target model size; input clouds larger than this are downsampled.
    pub points: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            source: "synthetic".into(),
            points: 128,
        }
    }
}

fn default_lambda() -> f64 {
    0.0002
}

fn default_sigma2() -> f64 {
    0.03
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub samples: usize,
    /// Number of maps K.
    pub maps: usize,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_sigma2")]
    pub sigma2: f64,
    #[serde(default = "default_solver")]
    pub solver: SolverKind,
    #[serde(default)]
    pub ranges: TrainingRanges,
    /// Pre-trained map files; when set, training is skipped for that mode.
    #[serde(default)]
    pub improved_maps_path: Option<PathBuf>,
    #[serde(default)]
    pub original_maps_path: Option<PathBuf>,
}

fn default_solver() -> SolverKind {
    SolverKind::Exact
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            samples: 500,
            maps: 10,
            lambda: default_lambda(),
            sigma2: default_sigma2(),
            solver: SolverKind::Exact,
            ranges: TrainingRanges::default(),
            improved_maps_path: None,
            original_maps_path: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepConfig {
    pub perturbation: PerturbationKind,
    pub levels: Vec<f64>,
    pub cases_per_level: usize,
}

fn default_max_iter() -> usize {
    crate::registrar::DEFAULT_MAX_ITER
}

fn default_epsilon() -> f64 {
    crate::registrar::DEFAULT_EPSILON
}

fn default_t_pt() -> f64 {
    0.1
}

fn default_icp_tol() -> f64 {
    1e-10
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CampaignConfig {
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub training: TrainingConfig,
    pub sweeps: Vec<SweepConfig>,
    pub algorithms: Vec<Algorithm>,
    pub output_dir: PathBuf,
    pub seed: u64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_t_pt")]
    pub t_pt: f64,
    #[serde(default = "default_icp_tol")]
    pub icp_tol: f64,
    #[serde(default)]
    pub metric_points: MetricPoints,
}

impl CampaignConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }

    /// The benchmark's six sweeps at desk scale: 4 levels, 20 cases each.
    pub fn desk_sweeps() -> Vec<SweepConfig> {
        Self::sweeps_with(4, 20)
    }

    /// Full-protocol sweeps: 10 levels per perturbation, 100 cases each.
    pub fn paper_sweeps() -> Vec<SweepConfig> {
        Self::sweeps_with(10, 100)
    }

    fn sweeps_with(levels: usize, cases_per_level: usize) -> Vec<SweepConfig> {
        // Endpoints are written exactly so they stay inside the validated ranges.
        let spread = |lo: f64, hi: f64| -> Vec<f64> {
            (0..levels)
                .map(|i| {
                    if i == levels - 1 {
                        hi
                    } else {
                        lo + (hi - lo) * i as f64 / (levels - 1) as f64
                    }
                })
                .collect()
        };
        vec![
            SweepConfig {
                perturbation: PerturbationKind::NoiseStd,
                levels: spread(0.0, 0.1),
                cases_per_level,
            },
            SweepConfig {
                perturbation: PerturbationKind::SceneNumber,
                levels: spread(100.0, 1600.0),
                cases_per_level,
            },
            SweepConfig {
                perturbation: PerturbationKind::Outliers,
                levels: spread(0.0, 600.0),
                cases_per_level,
            },
            SweepConfig {
                perturbation: PerturbationKind::Incomplete,
                levels: spread(0.0, 0.7),
                cases_per_level,
            },
            SweepConfig {
                perturbation: PerturbationKind::Rotation,
                levels: spread(0.0, 180.0),
                cases_per_level,
            },
            SweepConfig {
                perturbation: PerturbationKind::Translation,
                levels: spread(0.0, 1.0),
                cases_per_level,
            },
        ]
    }

    /// Total number of registrations the campaign will run.
    pub fn registration_count(&self) -> usize {
        let cases: usize = self
            .sweeps
            .iter()
            .map(|s| s.levels.len() * s.cases_per_level)
            .sum();
        cases * self.algorithms.len()
    }
}

/// One registered case.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CaseRecord {
    pub case_id: usize,
    pub level: f64,
    pub algorithm: Algorithm,
    pub point_acc: f64,
    pub point_rmse: f64,
    pub iterations: usize,
    pub wall_ms: f64,
}

/// Mean/std aggregate of one (level, algorithm) cell.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LevelAggregate {
    pub level: f64,
    pub algorithm: Algorithm,
    pub cases: usize,
    pub point_acc_mean: f64,
    pub point_acc_std: f64,
    pub point_rmse_mean: f64,
    pub point_rmse_std: f64,
    pub iterations_mean: f64,
    pub iterations_std: f64,
}

#[derive(Clone, Debug)]
pub struct SweepOutcome {
    pub kind: PerturbationKind,
    pub records: Vec<CaseRecord>,
    pub aggregates: Vec<LevelAggregate>,
}

/// Per-perturbation average across levels, one row per perturbation and
/// algorithm; the layout of the benchmark summary tables.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Summary {
    /// (perturbation, algorithm) -> (avg point_acc, avg point_rmse)
    pub rows: BTreeMap<(String, Algorithm), (f64, f64)>,
}

impl Summary {
    pub fn get(&self, kind: PerturbationKind, algorithm: Algorithm) -> Option<(f64, f64)> {
        self.rows.get(&(kind.to_string(), algorithm)).copied()
    }

    fn insert_from_aggregates(&mut self, kind: PerturbationKind, aggregates: &[LevelAggregate]) {
        let mut per_algorithm: BTreeMap<Algorithm, (f64, f64, usize)> = BTreeMap::new();
        for agg in aggregates {
            let entry = per_algorithm.entry(agg.algorithm).or_insert((0.0, 0.0, 0));
            entry.0 += agg.point_acc_mean;
            entry.1 += agg.point_rmse_mean;
            entry.2 += 1;
        }
        for (alg, (acc, rmse, n)) in per_algorithm {
            self.rows.insert(
                (kind.to_string(), alg),
                (acc / n as f64, rmse / n as f64),
            );
        }
    }

    fn perturbations(&self) -> Vec<String> {
        let mut names: Vec<String> = self.rows.keys().map(|(p, _)| p.clone()).collect();
        names.dedup();
        names
    }

    fn algorithms(&self) -> Vec<Algorithm> {
        let mut algs: Vec<Algorithm> = self.rows.keys().map(|(_, a)| *a).collect();
        algs.sort();
        algs.dedup();
        algs
    }

    /// One CSV table per metric: rows are perturbations, columns algorithms.
    pub fn to_csv(&self, metric: SummaryMetric) -> String {
        let algorithms = self.algorithms();
        let mut out = String::from("perturbation");
        for a in &algorithms {
            let _ = write!(out, ",{a}");
        }
        out.push('\n');
        for p in self.perturbations() {
            let _ = write!(out, "{p}");
            for a in &algorithms {
                let v = self.rows.get(&(p.clone(), *a)).map(|(acc, rmse)| match metric {
                    SummaryMetric::PointAcc => *acc,
                    SummaryMetric::PointRmse => *rmse,
                });
                match v {
                    Some(v) => {
                        let _ = write!(out, ",{v}");
                    }
                    None => out.push(','),
                }
            }
            out.push('\n');
        }
        out
    }

    /// Aligned text rendering of both tables.
    pub fn aligned_text(&self) -> String {
        let algorithms = self.algorithms();
        let mut out = String::new();
        for (title, metric) in [
            ("average point_acc", SummaryMetric::PointAcc),
            ("average point_rmse", SummaryMetric::PointRmse),
        ] {
            let _ = writeln!(out, "{title}");
            let _ = write!(out, "{:<14}", "perturbation");
            for a in &algorithms {
                let _ = write!(out, "{:>14}", a.to_string());
            }
            out.push('\n');
            for p in self.perturbations() {
                let _ = write!(out, "{p:<14}");
                for a in &algorithms {
                    match self.rows.get(&(p.clone(), *a)) {
                        Some((acc, rmse)) => {
                            let v = match metric {
                                SummaryMetric::PointAcc => acc,
                                SummaryMetric::PointRmse => rmse,
                            };
                            let _ = write!(out, "{v:>14.3}");
                        }
                        None => {
                            let _ = write!(out, "{:>14}", "-");
                        }
                    }
                }
                out.push('\n');
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Clone, Copy, Debug)]
pub enum SummaryMetric {
    PointAcc,
    PointRmse,
}

#[derive(Debug)]
pub struct CampaignReport {
    pub sweeps: Vec<SweepOutcome>,
    pub summary: Summary,
    pub map_files: Vec<PathBuf>,
}

/// Resolve the model config into a normalized cloud.
pub fn resolve_model(config: &ModelConfig) -> Result<PointCloud> {
    let raw = if config.source == "synthetic" {
        synthetic_shape(config.points)?
    } else {
        let loaded = load_auto(Path::new(&config.source))?;
        if loaded.len() > config.points {
            downsample_average(&loaded, config.points)?
        } else {
            loaded
        }
    };
    let (normalized, _) = normalize_to_unit(&raw)?;
    Ok(normalized)
}

struct Prepared {
    model: PointCloud,
    improved: Option<(ModelContext, MapSequence)>,
    original: Option<(ModelContext, MapSequence)>,
    map_files: Vec<PathBuf>,
}

fn prepare(config: &CampaignConfig) -> Result<Prepared> {
    let model = resolve_model(&config.model)?;
    fs::create_dir_all(&config.output_dir).map_err(|e| Error::io(&config.output_dir, e))?;

    let training_seed = derive_seed(config.seed, 1);
    let mut map_files = Vec::new();

    let needs = |mode: DescriptorMode| {
        config
            .algorithms
            .iter()
            .any(|a| a.descriptor_mode() == Some(mode))
    };

    let mut build_for = |mode: DescriptorMode, path_override: &Option<PathBuf>| -> Result<Option<(ModelContext, MapSequence)>> {
        if !needs(mode) {
            return Ok(None);
        }
        let ctx = build_context(&model, config.training.sigma2, mode)?;
        let maps = match path_override {
            Some(path) => {
                let maps = MapSequence::load(path)?;
                maps.check_compatible(&ctx, false)?;
                maps
            }
            None => {
                if config.training.samples == 0 {
                    return Err(Error::MissingMaps(format!(
                        "{mode}: no training samples configured and no maps file given"
                    )));
                }
                let (pairs, warnings) = generate_training_pairs(
                    &model,
                    config.training.samples,
                    &config.training.ranges,
                    training_seed,
                )?;
                for w in warnings {
                    eprintln!("warning: {w}");
                }
                let ts = TrainingSet::from_pairs(ctx.clone(), &pairs)?;
                let (maps, _) = train(
                    &ts,
                    config.training.maps,
                    config.training.lambda,
                    config.training.solver,
                )?;
                let file = config.output_dir.join(format!("maps-{mode}.ido"));
                maps.save(&file)?;
                map_files.push(file);
                maps
            }
        };
        Ok(Some((ctx, maps)))
    };

    let improved = build_for(DescriptorMode::Improved, &config.training.improved_maps_path)?;
    let original = build_for(DescriptorMode::Original, &config.training.original_maps_path)?;

    Ok(Prepared {
        model,
        improved,
        original,
        map_files,
    })
}

fn register_case(
    prepared: &Prepared,
    config: &CampaignConfig,
    algorithm: Algorithm,
    pair: &LabeledPair,
) -> Result<(RegistrationResult, f64)> {
    let opts = RegistrationOptions {
        max_iter: config.max_iter,
        epsilon: config.epsilon,
        record_histograms: false,
    };
    let start = Instant::now();
    let result = match algorithm {
        Algorithm::ImprovedDo => {
            let (ctx, maps) = prepared
                .improved
                .as_ref()
                .ok_or_else(|| Error::MissingMaps("improved-do".into()))?;
            register_do(ctx, maps, &pair.scene, &Twist::zero(), &opts)?
        }
        Algorithm::OriginalDo => {
            let (ctx, maps) = prepared
                .original
                .as_ref()
                .ok_or_else(|| Error::MissingMaps("original-do".into()))?;
            register_do(ctx, maps, &pair.scene, &Twist::zero(), &opts)?
        }
        Algorithm::Icp => register_icp(
            &prepared.model,
            &pair.scene,
            &Twist::zero(),
            config.max_iter,
            config.icp_tol,
        )?,
    };
    let wall_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok((result, wall_ms))
}

fn case_metrics(
    pair: &LabeledPair,
    result: &RegistrationResult,
    config: &CampaignConfig,
) -> Result<(f64, f64)> {
    let (scene, targets) = match config.metric_points {
        MetricPoints::Inliers => (pair.inlier_scene(), pair.clean_targets.clone()),
        MetricPoints::All => (pair.scene.clone(), pair.all_targets()),
    };
    let registered = result.transform.apply(&scene);
    let acc = point_acc(registered.points(), &targets, config.t_pt)?;
    let rmse = point_rmse(registered.points(), &targets)?;
    Ok((acc, rmse))
}

fn aggregate_level(
    level: f64,
    algorithm: Algorithm,
    records: &[CaseRecord],
) -> LevelAggregate {
    let selected: Vec<&CaseRecord> = records
        .iter()
        .filter(|r| r.level == level && r.algorithm == algorithm)
        .collect();
    let n = selected.len() as f64;
    let mean = |f: &dyn Fn(&CaseRecord) -> f64| selected.iter().map(|r| f(r)).sum::<f64>() / n;
    let std = |f: &dyn Fn(&CaseRecord) -> f64, m: f64| {
        (selected.iter().map(|r| (f(r) - m) * (f(r) - m)).sum::<f64>() / n).sqrt()
    };
    let acc_mean = mean(&|r| r.point_acc);
    let rmse_mean = mean(&|r| r.point_rmse);
    let iter_mean = mean(&|r| r.iterations as f64);
    LevelAggregate {
        level,
        algorithm,
        cases: selected.len(),
        point_acc_mean: acc_mean,
        point_acc_std: std(&|r| r.point_acc, acc_mean),
        point_rmse_mean: rmse_mean,
        point_rmse_std: std(&|r| r.point_rmse, rmse_mean),
        iterations_mean: iter_mean,
        iterations_std: std(&|r| r.iterations as f64, iter_mean),
    }
}

/// Run the full campaign: train (or load) maps, run every sweep with
/// every algorithm, write CSVs and summary tables under `output_dir`.
///
/// An estimated runtime, extrapolated from one warmup registration per
/// algorithm, is printed to stderr before the sweeps start.
pub fn run_campaign(config: &CampaignConfig) -> Result<CampaignReport> {
    let prepared = prepare(config)?;

    if let Ok(estimate) = estimate_runtime(&prepared, config) {
        eprintln!(
            "campaign: {} registrations, estimated {:.1} min",
            config.registration_count(),
            estimate / 60.0
        );
    }

    let mut sweeps = Vec::new();
    let mut summary = Summary::default();
    for (sweep_index, sweep) in config.sweeps.iter().enumerate() {
        let sweep_seed = derive_seed(config.seed, 0x100 + sweep_index as u64);
        let pairs = generate_sweep(
            &prepared.model,
            sweep.perturbation,
            &sweep.levels,
            sweep.cases_per_level,
            sweep_seed,
        )?;

        let mut records: Vec<CaseRecord> = Vec::new();
        for &algorithm in &config.algorithms {
            let mut algo_records: Vec<CaseRecord> = pairs
                .par_iter()
                .enumerate()
                .map(|(case_id, pair)| -> Result<CaseRecord> {
                    let (result, wall_ms) = register_case(&prepared, config, algorithm, pair)?;
                    let (acc, rmse) = case_metrics(pair, &result, config)?;
                    Ok(CaseRecord {
                        case_id,
                        level: level_of(pair, sweep.perturbation),
                        algorithm,
                        point_acc: acc,
                        point_rmse: rmse,
                        iterations: result.iterations,
                        wall_ms,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            records.append(&mut algo_records);
        }

        let mut aggregates = Vec::new();
        for &algorithm in &config.algorithms {
            for &level in &sweep.levels {
                aggregates.push(aggregate_level(level, algorithm, &records));
            }
        }
        summary.insert_from_aggregates(sweep.perturbation, &aggregates);

        write_sweep_csvs(config, sweep.perturbation, &records, &aggregates)?;
        sweeps.push(SweepOutcome {
            kind: sweep.perturbation,
            records,
            aggregates,
        });
    }

    write_summary(config, &summary)?;
    Ok(CampaignReport {
        sweeps,
        summary,
        map_files: prepared.map_files,
    })
}

/// Seconds estimate from one warmup registration per algorithm on a
/// default-condition pair.
fn estimate_runtime(prepared: &Prepared, config: &CampaignConfig) -> Result<f64> {
    let spec = PerturbationSpec {
        seed: derive_seed(config.seed, 0xE57),
        ..PerturbationSpec::default()
    };
    let pair = crate::perturb::generate_pair(&prepared.model, &spec)?;
    let mut per_case = 0.0;
    for &algorithm in &config.algorithms {
        let (_, wall_ms) = register_case(prepared, config, algorithm, &pair)?;
        per_case += wall_ms / 1e3;
    }
    let cases: usize = config
        .sweeps
        .iter()
        .map(|s| s.levels.len() * s.cases_per_level)
        .sum();
    let workers = rayon::current_num_threads().max(1) as f64;
    Ok(per_case * cases as f64 / workers)
}

fn level_of(pair: &LabeledPair, kind: PerturbationKind) -> f64 {
    match kind {
        PerturbationKind::NoiseStd => pair.spec.noise_std,
        PerturbationKind::SceneNumber => pair.spec.scene_count as f64,
        PerturbationKind::Outliers => pair.spec.outliers as f64,
        PerturbationKind::Incomplete => pair.spec.incomplete_ratio,
        PerturbationKind::Rotation => pair.spec.rotation_deg,
        PerturbationKind::Translation => pair.spec.translation,
    }
}

fn write_sweep_csvs(
    config: &CampaignConfig,
    kind: PerturbationKind,
    records: &[CaseRecord],
    aggregates: &[LevelAggregate],
) -> Result<()> {
    for &algorithm in &config.algorithms {
        let mut cases = String::from("case_id,level,algorithm,point_acc,point_rmse,iterations,wall_ms\n");
        for r in records.iter().filter(|r| r.algorithm == algorithm) {
            let _ = writeln!(
                cases,
                "{},{},{},{},{},{},{}",
                r.case_id, r.level, r.algorithm, r.point_acc, r.point_rmse, r.iterations, r.wall_ms
            );
        }
        let path = config
            .output_dir
            .join(format!("{kind}_{algorithm}_cases.csv"));
        fs::write(&path, cases).map_err(|e| Error::io(&path, e))?;

        let mut levels = String::from(
            "level,algorithm,cases,point_acc_mean,point_acc_std,point_rmse_mean,point_rmse_std,iterations_mean,iterations_std\n",
        );
        for a in aggregates.iter().filter(|a| a.algorithm == algorithm) {
            let _ = writeln!(
                levels,
                "{},{},{},{},{},{},{},{},{}",
                a.level,
                a.algorithm,
                a.cases,
                a.point_acc_mean,
                a.point_acc_std,
                a.point_rmse_mean,
                a.point_rmse_std,
                a.iterations_mean,
                a.iterations_std
            );
        }
        let path = config
            .output_dir
            .join(format!("{kind}_{algorithm}_levels.csv"));
        fs::write(&path, levels).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

fn write_summary(config: &CampaignConfig, summary: &Summary) -> Result<()> {
    let acc_path = config.output_dir.join("summary_point_acc.csv");
    fs::write(&acc_path, summary.to_csv(SummaryMetric::PointAcc))
        .map_err(|e| Error::io(&acc_path, e))?;
    let rmse_path = config.output_dir.join("summary_point_rmse.csv");
    fs::write(&rmse_path, summary.to_csv(SummaryMetric::PointRmse))
        .map_err(|e| Error::io(&rmse_path, e))?;
    let text_path = config.output_dir.join("summary.txt");
    fs::write(&text_path, summary.aligned_text()).map_err(|e| Error::io(&text_path, e))
}

/// Rebuild a summary from the per-case CSV files of a campaign directory.
pub fn summarize_dir(dir: &Path) -> Result<Summary> {
    let mut grouped: BTreeMap<(String, Algorithm), BTreeMap<String, (f64, f64, usize)>> =
        BTreeMap::new();
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        let Some(stem) = name.strip_suffix("_cases.csv") else {
            continue;
        };
        let Some((perturbation, algorithm)) = stem.rsplit_once('_') else {
            continue;
        };
        let algorithm: Algorithm = algorithm
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("bad algorithm in file name {name}")))?;
        let text = fs::read_to_string(entry.path()).map_err(|e| Error::io(entry.path(), e))?;
        let levels = grouped
            .entry((perturbation.to_string(), algorithm))
            .or_default();
        for (lineno, line) in text.lines().enumerate().skip(1) {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 7 {
                return Err(Error::malformed(entry.path(), lineno + 1, "expected 7 columns"));
            }
            let level = fields[1].to_string();
            let acc: f64 = fields[3]
                .parse()
                .map_err(|_| Error::malformed(entry.path(), lineno + 1, "bad point_acc"))?;
            let rmse: f64 = fields[4]
                .parse()
                .map_err(|_| Error::malformed(entry.path(), lineno + 1, "bad point_rmse"))?;
            let cell = levels.entry(level).or_insert((0.0, 0.0, 0));
            cell.0 += acc;
            cell.1 += rmse;
            cell.2 += 1;
        }
    }
    let mut summary = Summary::default();
    for ((perturbation, algorithm), levels) in grouped {
        let mut acc_sum = 0.0;
        let mut rmse_sum = 0.0;
        let mut n = 0usize;
        for (_, (acc, rmse, count)) in levels {
            acc_sum += acc / count as f64;
            rmse_sum += rmse / count as f64;
            n += 1;
        }
        summary.rows.insert(
            (perturbation, algorithm),
            (acc_sum / n as f64, rmse_sum / n as f64),
        );
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn points(v: &[(f64, f64, f64)]) -> Vec<Point3<f64>> {
        v.iter().map(|&(x, y, z)| Point3::new(x, y, z)).collect()
    }

    #[test]
    fn acc_trivial_cases() {
        let a = points(&[(0.0, 0.0, 0.0), (1.0, 0.0, 0.0)]);
        assert_eq!(point_acc(&a, &a, 0.1).unwrap(), 1.0);

        let displaced: Vec<Point3<f64>> = a
            .iter()
            .map(|p| Point3::new(p.x + 0.2, p.y, p.z))
            .collect();
        assert_eq!(point_acc(&displaced, &a, 0.1).unwrap(), 0.0);

        let half: Vec<Point3<f64>> = a
            .iter()
            .enumerate()
            .map(|(i, p)| {
                if i == 0 {
                    *p
                } else {
                    Point3::new(p.x + 0.2, p.y, p.z)
                }
            })
            .collect();
        assert_eq!(point_acc(&half, &a, 0.1).unwrap(), 0.5);
    }

    #[test]
    fn rmse_trivial_and_oracle() {
        let a = points(&[(0.0, 0.0, 0.0), (1.0, 1.0, 1.0)]);
        assert_eq!(point_rmse(&a, &a).unwrap(), 0.0);

        let d = 0.25;
        let shifted: Vec<Point3<f64>> = a.iter().map(|p| Point3::new(p.x + d, p.y, p.z)).collect();
        assert_abs_diff_eq!(point_rmse(&shifted, &a).unwrap(), d, epsilon = 1e-15);

        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let reg: Vec<Point3<f64>> = (0..10)
            .map(|_| {
                Point3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                )
            })
            .collect();
        let tgt: Vec<Point3<f64>> = (0..10)
            .map(|_| {
                Point3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                )
            })
            .collect();
        // Direct summation oracle.
        let mut sum = 0.0;
        for i in 0..10 {
            let dx = reg[i].x - tgt[i].x;
            let dy = reg[i].y - tgt[i].y;
            let dz = reg[i].z - tgt[i].z;
            sum += dx * dx + dy * dy + dz * dz;
        }
        let oracle = (sum / 10.0).sqrt();
        assert!((point_rmse(&reg, &tgt).unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn metrics_reject_count_mismatch() {
        let a = points(&[(0.0, 0.0, 0.0)]);
        let b = points(&[(0.0, 0.0, 0.0), (1.0, 0.0, 0.0)]);
        assert!(point_acc(&a, &b, 0.1).is_err());
        assert!(point_rmse(&a, &b).is_err());
    }

    #[test]
    fn metrics_invariant_under_joint_permutation() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let reg: Vec<Point3<f64>> = (0..20)
            .map(|_| {
                Point3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                )
            })
            .collect();
        let tgt: Vec<Point3<f64>> = reg
            .iter()
            .map(|p| Point3::new(p.x + rng.random_range(-0.2..0.2), p.y, p.z))
            .collect();
        let acc = point_acc(&reg, &tgt, 0.1).unwrap();
        let rmse = point_rmse(&reg, &tgt).unwrap();
        let mut order: Vec<usize> = (0..20).collect();
        // Fisher-Yates with the seeded rng
        for i in (1..20).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        let reg_p: Vec<Point3<f64>> = order.iter().map(|&i| reg[i]).collect();
        let tgt_p: Vec<Point3<f64>> = order.iter().map(|&i| tgt[i]).collect();
        assert_abs_diff_eq!(point_acc(&reg_p, &tgt_p, 0.1).unwrap(), acc, epsilon = 1e-15);
        assert_abs_diff_eq!(point_rmse(&reg_p, &tgt_p).unwrap(), rmse, epsilon = 1e-12);
    }

    #[test]
    fn empty_sweep_list_is_noop() {
        let dir = std::env::temp_dir().join("ido-bench-noop");
        let _ = fs::remove_dir_all(&dir);
        let config = CampaignConfig {
            model: ModelConfig {
                source: "synthetic".into(),
                points: 32,
            },
            training: TrainingConfig {
                samples: 2,
                maps: 1,
                ..TrainingConfig::default()
            },
            sweeps: vec![],
            algorithms: vec![Algorithm::Icp],
            output_dir: dir.clone(),
            seed: 1,
            max_iter: 10,
            epsilon: 0.005,
            t_pt: 0.1,
            icp_tol: 1e-10,
            metric_points: MetricPoints::Inliers,
        };
        let report = run_campaign(&config).unwrap();
        assert!(report.sweeps.is_empty());
        assert!(report.summary.rows.is_empty());
    }

    #[test]
    fn paper_scale_config_is_accepted_and_counted() {
        let config = CampaignConfig {
            model: ModelConfig::default(),
            training: TrainingConfig {
                samples: 30000,
                maps: 30,
                ..TrainingConfig::default()
            },
            sweeps: CampaignConfig::paper_sweeps(),
            algorithms: Algorithm::ALL.to_vec(),
            output_dir: "unused".into(),
            seed: 0,
            max_iter: 1000,
            epsilon: 0.005,
            t_pt: 0.1,
            icp_tol: 1e-10,
            metric_points: MetricPoints::Inliers,
        };
        // 6 sweeps x 10 levels x 100 cases x 3 algorithms
        assert_eq!(config.registration_count(), 18_000);
        let json = serde_json::to_string(&config).unwrap();
        let back: CampaignConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back.registration_count(), 18_000);
    }

    #[test]
    fn summary_single_case_equals_its_metrics() {
        let mut summary = Summary::default();
        summary.insert_from_aggregates(
            PerturbationKind::Rotation,
            &[LevelAggregate {
                level: 60.0,
                algorithm: Algorithm::Icp,
                cases: 1,
                point_acc_mean: 0.75,
                point_acc_std: 0.0,
                point_rmse_mean: 0.125,
                point_rmse_std: 0.0,
                iterations_mean: 4.0,
                iterations_std: 0.0,
            }],
        );
        assert_eq!(
            summary.get(PerturbationKind::Rotation, Algorithm::Icp),
            Some((0.75, 0.125))
        );
        let csv = summary.to_csv(SummaryMetric::PointAcc);
        assert!(csv.contains("rotation,0.75"));
        let text = summary.aligned_text();
        assert!(text.contains("rotation"));
    }
}
