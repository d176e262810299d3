//! Command-line front end: model generation, data generation, training,
//! single-pair registration, benchmark campaigns, and summaries.
//!
//! Every subcommand accepts `--config <json>`; explicit flags override
//! the matching config keys.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use ido::bench::{
    run_campaign, summarize_dir, CampaignConfig, MetricPoints, ModelConfig, TrainingConfig,
};
use ido::cloud::{load_auto, normalize_to_unit, save, CloudFormat, PointCloud};
use ido::descriptor::{build_context, write_histogram_csv, DescriptorMode};
use ido::lie::Twist;
use ido::perturb::{
    generate_sweep, generate_training_pairs, load_pair, save_pair, PerturbationKind,
};
use ido::regressor::{train, MapSequence, SolverKind, TrainingSet};
use ido::registrar::{
    register_do, register_icp, RegistrationOptions, RegistrationResult, Termination,
};

#[derive(Parser)]
#[command(
    name = "ido",
    about = "Point-cloud registration with learned update maps",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a model cloud: synthetic shape, or downsample an input file.
    GenModel(GenModelArgs),
    /// Generate training pairs or a perturbation sweep as pair directories.
    GenData(GenDataArgs),
    /// Train a map sequence and write it as an IDO1 file.
    Train(TrainArgs),
    /// Register a single scene or pair directory, emitting a trace CSV.
    Register(RegisterArgs),
    /// Run a benchmark campaign from a JSON config.
    Bench(BenchArgs),
    /// Rebuild summary tables from a campaign output directory.
    Summarize(SummarizeArgs),
}

/// The config keys read by the non-campaign subcommands. A full campaign
/// config parses too; its extra sections are simply not used here.
#[derive(Default, Deserialize)]
struct FileConfig {
    model: Option<ModelConfig>,
    training: Option<TrainingConfig>,
    max_iter: Option<usize>,
    epsilon: Option<f64>,
    t_pt: Option<f64>,
    icp_tol: Option<f64>,
}

impl FileConfig {
    fn load(path: Option<&PathBuf>) -> Result<Self> {
        match path {
            None => Ok(FileConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                serde_json::from_str(&text)
                    .with_context(|| format!("parsing config {}", p.display()))
            }
        }
    }
}

#[derive(Args)]
struct GenModelArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Input cloud to downsample; omit for the synthetic shape.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Target model point count.
    #[arg(long)]
    points: Option<usize>,
    /// Output PLY path.
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed (required; sub-seeds are derived from it).
    #[arg(long)]
    seed: u64,
    /// Model cloud file; falls back to the config model source.
    #[arg(long)]
    model: Option<PathBuf>,
    /// "training" or "sweep".
    #[arg(long, default_value = "training")]
    kind: String,
    /// Number of training pairs (training kind).
    #[arg(long)]
    n: Option<usize>,
    /// Swept perturbation name (sweep kind): noise-std, scene-number,
    /// outliers, incomplete, rotation, translation.
    #[arg(long)]
    perturbation: Option<String>,
    /// Comma-separated sweep levels, e.g. "0,60,120,180".
    #[arg(long)]
    levels: Option<String>,
    /// Cases per sweep level.
    #[arg(long, default_value_t = 20)]
    per_level: usize,
    /// Output directory; one pair-NNNNN subdirectory per pair.
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed for training-data generation (required).
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    model: Option<PathBuf>,
    /// Descriptor mode: improved or original.
    #[arg(long, default_value = "improved")]
    mode: String,
    /// Number of maps K.
    #[arg(long)]
    maps: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    sigma2: Option<f64>,
    /// Number of training samples.
    #[arg(long)]
    samples: Option<usize>,
    /// Ridge solver: exact or paper.
    #[arg(long)]
    solver: Option<String>,
    /// Output map file.
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct RegisterArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    /// Trained map file (not needed for ICP).
    #[arg(long)]
    maps: Option<PathBuf>,
    /// Scene cloud file.
    #[arg(long, conflicts_with = "pair")]
    scene: Option<PathBuf>,
    /// Pair directory (scene.ply + spec.json + gt.json); enables metrics.
    #[arg(long)]
    pair: Option<PathBuf>,
    /// improved-do, original-do, or icp. Defaults to the map file's mode.
    #[arg(long)]
    algorithm: Option<String>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    t_pt: Option<f64>,
    /// Write the iteration trace CSV here.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Write per-iteration histograms as CSV here.
    #[arg(long)]
    dump_histograms: Option<PathBuf>,
    /// Accept maps whose model fingerprint does not match.
    #[arg(long, default_value_t = false)]
    force: bool,
}

#[derive(Args)]
struct BenchArgs {
    /// Campaign config JSON.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    t_pt: Option<f64>,
    /// Metric point set: inliers or all.
    #[arg(long)]
    metric_points: Option<String>,
    #[arg(long)]
    samples: Option<usize>,
    /// Number of maps K.
    #[arg(long)]
    maps: Option<usize>,
}

#[derive(Args)]
struct SummarizeArgs {
    /// Campaign output directory with *_cases.csv files.
    #[arg(long)]
    input: PathBuf,
    /// Optional directory for the rebuilt summary CSV tables.
    #[arg(long)]
    output: Option<PathBuf>,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::GenModel(args) => gen_model(args),
        Command::GenData(args) => gen_data(args),
        Command::Train(args) => run_train(args),
        Command::Register(args) => run_register(args),
        Command::Bench(args) => run_bench(args),
        Command::Summarize(args) => run_summarize(args),
    }
}

fn parse_mode(s: &str) -> Result<DescriptorMode> {
    match s {
        "improved" => Ok(DescriptorMode::Improved),
        "original" => Ok(DescriptorMode::Original),
        other => bail!("unknown mode {other:?} (expected improved or original)"),
    }
}

fn parse_solver(s: &str) -> Result<SolverKind> {
    match s {
        "exact" => Ok(SolverKind::Exact),
        "paper" => Ok(SolverKind::Paper),
        other => bail!("unknown solver {other:?} (expected exact or paper)"),
    }
}

fn parse_metric_points(s: &str) -> Result<MetricPoints> {
    match s {
        "inliers" => Ok(MetricPoints::Inliers),
        "all" => Ok(MetricPoints::All),
        other => bail!("unknown metric point set {other:?} (expected inliers or all)"),
    }
}

/// Load and normalize the model named by a flag or the config section.
fn resolve_model_cloud(
    flag: Option<&PathBuf>,
    config_model: Option<&ModelConfig>,
) -> Result<PointCloud> {
    let raw = match (flag, config_model) {
        (Some(path), _) => load_auto(path)?,
        (None, Some(cfg)) => return Ok(ido::bench::resolve_model(cfg)?),
        (None, None) => bail!("no model given: pass --model or a config with a model section"),
    };
    let (normalized, _) = normalize_to_unit(&raw)?;
    Ok(normalized)
}

fn gen_model(args: GenModelArgs) -> Result<()> {
    let file = FileConfig::load(args.config.as_ref())?;
    let mut model_cfg = file.model.unwrap_or_default();
    if let Some(input) = &args.input {
        model_cfg.source = input.display().to_string();
    }
    if let Some(points) = args.points {
        model_cfg.points = points;
    }
    let cloud = ido::bench::resolve_model(&model_cfg)?;
    save(&cloud, &args.output, CloudFormat::PlyAscii)?;
    println!(
        "wrote {}-point normalized model to {}",
        cloud.len(),
        args.output.display()
    );
    Ok(())
}

fn gen_data(args: GenDataArgs) -> Result<()> {
    let file = FileConfig::load(args.config.as_ref())?;
    let model = resolve_model_cloud(args.model.as_ref(), file.model.as_ref())?;
    let training_cfg = file.training.unwrap_or_default();

    let pairs = match args.kind.as_str() {
        "training" => {
            let n = args.n.unwrap_or(training_cfg.samples);
            let (pairs, warnings) =
                generate_training_pairs(&model, n, &training_cfg.ranges, args.seed)?;
            for w in warnings {
                eprintln!("warning: {w}");
            }
            pairs
        }
        "sweep" => {
            let kind: PerturbationKind = args
                .perturbation
                .as_deref()
                .context("--perturbation is required for sweep data")?
                .parse()?;
            let levels: Vec<f64> = args
                .levels
                .as_deref()
                .context("--levels is required for sweep data")?
                .split(',')
                .map(|s| s.trim().parse::<f64>().context("bad level"))
                .collect::<Result<_>>()?;
            generate_sweep(&model, kind, &levels, args.per_level, args.seed)?
        }
        other => bail!("unknown data kind {other:?} (expected training or sweep)"),
    };

    std::fs::create_dir_all(&args.output)?;
    for (i, pair) in pairs.iter().enumerate() {
        save_pair(pair, &args.output.join(format!("pair-{i:05}")))?;
    }
    println!("wrote {} pairs to {}", pairs.len(), args.output.display());
    Ok(())
}

fn run_train(args: TrainArgs) -> Result<()> {
    let file = FileConfig::load(args.config.as_ref())?;
    let training = file.training.clone().unwrap_or_default();
    let mode = parse_mode(&args.mode)?;
    let samples = args.samples.unwrap_or(training.samples);
    let k = args.maps.unwrap_or(training.maps);
    let lambda = args.lambda.unwrap_or(training.lambda);
    let sigma2 = args.sigma2.unwrap_or(training.sigma2);
    let solver = match &args.solver {
        Some(s) => parse_solver(s)?,
        None => training.solver,
    };

    let model = resolve_model_cloud(args.model.as_ref(), file.model.as_ref())?;
    let ctx = build_context(&model, sigma2, mode)?;
    let (pairs, warnings) = generate_training_pairs(&model, samples, &training.ranges, args.seed)?;
    for w in warnings {
        eprintln!("warning: {w}");
    }
    let ts = TrainingSet::from_pairs(ctx, &pairs)?;
    let (maps, trace) = train(&ts, k, lambda, solver)?;
    maps.save(&args.output)?;

    println!("trained {} {} maps on {} samples", maps.k(), mode, samples);
    println!("iter,mean_error,std_error");
    for point in &trace {
        println!(
            "{},{},{}",
            point.iteration, point.mean_error, point.std_error
        );
    }
    println!("wrote {}", args.output.display());
    Ok(())
}

fn run_register(args: RegisterArgs) -> Result<()> {
    let file = FileConfig::load(args.config.as_ref())?;
    let model = resolve_model_cloud(args.model.as_ref(), file.model.as_ref())?;
    let max_iter = args
        .max_iter
        .or(file.max_iter)
        .unwrap_or(ido::registrar::DEFAULT_MAX_ITER);
    let epsilon = args
        .epsilon
        .or(file.epsilon)
        .unwrap_or(ido::registrar::DEFAULT_EPSILON);
    let t_pt = args.t_pt.or(file.t_pt).unwrap_or(0.1);

    let pair = args
        .pair
        .as_ref()
        .map(|dir| load_pair(dir, &model))
        .transpose()?;
    let scene = match (&pair, &args.scene) {
        (Some(p), _) => p.scene.clone(),
        (None, Some(path)) => load_auto(path)?,
        (None, None) => bail!("pass --scene or --pair"),
    };

    let algorithm = match (&args.algorithm, &args.maps) {
        (Some(a), _) => a.clone(),
        (None, Some(path)) => match MapSequence::load(path)?.mode {
            DescriptorMode::Improved => "improved-do".to_string(),
            DescriptorMode::Original => "original-do".to_string(),
        },
        (None, None) => "icp".to_string(),
    };

    let result: RegistrationResult = match algorithm.as_str() {
        "icp" => register_icp(
            &model,
            &scene,
            &Twist::zero(),
            max_iter,
            file.icp_tol.unwrap_or(1e-10),
        )?,
        "improved-do" | "original-do" => {
            let maps_path = args.maps.as_ref().context("--maps required for DO")?;
            let maps = MapSequence::load(maps_path)?;
            let expected = parse_mode(algorithm.trim_end_matches("-do"))?;
            if maps.mode != expected {
                bail!("map file is {} mode, requested {}", maps.mode, algorithm);
            }
            let ctx = build_context(&model, maps.sigma2, maps.mode)?;
            maps.check_compatible(&ctx, args.force)?;
            let opts = RegistrationOptions {
                max_iter,
                epsilon,
                record_histograms: args.dump_histograms.is_some(),
            };
            register_do(&ctx, &maps, &scene, &Twist::zero(), &opts)?
        }
        other => bail!("unknown algorithm {other:?}"),
    };

    let termination = match result.terminated_by {
        Termination::Epsilon => "epsilon",
        Termination::MaxIter => "max-iter",
    };
    println!(
        "{algorithm}: {} iterations, terminated by {termination}, final update norm {}",
        result.iterations, result.final_update_norm
    );
    println!("x_final: {:?}", result.x_final.to_array());
    if result.degenerate {
        println!("warning: degenerate correspondences, best-so-far result");
    }

    if let Some(p) = &pair {
        let registered = result.transform.apply(&p.inlier_scene());
        let acc = ido::bench::point_acc(registered.points(), &p.clean_targets, t_pt)?;
        let rmse = ido::bench::point_rmse(registered.points(), &p.clean_targets)?;
        println!("point_acc {acc} (t_pt {t_pt}), point_rmse {rmse}");
    }

    if let Some(path) = &args.trace {
        result.write_trace_csv(path)?;
        println!("wrote trace to {}", path.display());
    }
    if let Some(path) = &args.dump_histograms {
        write_histogram_csv(path, &result.histogram_rows())?;
        println!("wrote histograms to {}", path.display());
    }
    Ok(())
}

fn run_bench(args: BenchArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.config)
        .with_context(|| format!("reading config {}", args.config.display()))?;
    let mut config: CampaignConfig = serde_json::from_str(&text)
        .with_context(|| format!("parsing config {}", args.config.display()))?;

    if let Some(dir) = args.output_dir {
        config.output_dir = dir;
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(v) = args.max_iter {
        config.max_iter = v;
    }
    if let Some(v) = args.epsilon {
        config.epsilon = v;
    }
    if let Some(v) = args.t_pt {
        config.t_pt = v;
    }
    if let Some(v) = &args.metric_points {
        config.metric_points = parse_metric_points(v)?;
    }
    if let Some(v) = args.samples {
        config.training.samples = v;
    }
    if let Some(v) = args.maps {
        config.training.maps = v;
    }

    let report = run_campaign(&config)?;
    print!("{}", report.summary.aligned_text());
    println!("outputs in {}", config.output_dir.display());
    Ok(())
}

fn run_summarize(args: SummarizeArgs) -> Result<()> {
    let summary = summarize_dir(&args.input)?;
    print!("{}", summary.aligned_text());
    if let Some(dir) = &args.output {
        std::fs::create_dir_all(dir)?;
        std::fs::write(
            dir.join("summary_point_acc.csv"),
            summary.to_csv(ido::bench::SummaryMetric::PointAcc),
        )?;
        std::fs::write(
            dir.join("summary_point_rmse.csv"),
            summary.to_csv(ido::bench::SummaryMetric::PointRmse),
        )?;
        println!("wrote summary tables to {}", dir.display());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }
}
