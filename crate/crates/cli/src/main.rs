//! The `gpvol` command line: validate and segment price data, generate
//! synthetic series, run single backtests, compare strategy suites, and
//! reproduce the hyperparameter-recovery experiment.
//!
//! Exit codes: 0 on success, 1 on configuration or I/O errors, 2 when at
//! least one backtest run failed.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::str::FromStr;

use anyhow::{bail, Context};
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use gpvol::forecast::{run_backtest_with, RollingConfig, Strategy, StrategyKind};
use gpvol::garch::{GarchParams, GarchSpec};
use gpvol::gp::{KernelFamily, KernelSpec};
use gpvol::inference::SimplexConfig;
use gpvol::synth::{self, Generator, SynthSpec};

use gpvol_cli::compare::{run_compare, strategy_slug, write_prices, RunConfig};
use gpvol_cli::config::{parse_config, parse_value, split_list};
use gpvol_cli::data::{ingest_csv, split_segments};
use gpvol_cli::report::{records_csv, Aggregate, SCHEMA_VERSION};

/// Default worker count when neither a flag nor a config key sets one.
const WORKERS_ENV: &str = "GPVOL_WORKERS";

const EXIT_OK: i32 = 0;
const EXIT_CONFIG: i32 = 1;
const EXIT_RUN_FAILED: i32 = 2;

#[derive(Parser)]
#[command(
    name = "gpvol",
    version,
    about = "Volatility forecasting backtests: Gaussian-process regression on \
             return magnitudes and envelopes against GARCH-family baselines"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a price CSV and preview how it would be segmented.
    IngestCheck {
        /// Two-column timestamp,price CSV (header optional).
        input: PathBuf,
        /// Segment length in points.
        #[arg(long, default_value_t = 3140)]
        segment: usize,
    },
    /// Generate a synthetic price series in the ingestion format.
    Synth(Box<SynthArgs>),
    /// Run one strategy over one input and emit its per-step records.
    Backtest(Box<BacktestArgs>),
    /// Run every (segment x strategy) backtest and emit comparison tables.
    Compare(Box<CompareArgs>),
    /// Hyperparameter recovery under subsampling: fit on fractions of
    /// GP-drawn datasets and measure posterior-mean RMSE per fraction.
    Recovery(Box<RecoveryArgs>),
}

#[derive(Args)]
struct SynthArgs {
    /// Generator: sinvol, garch, or gp.
    #[arg(long)]
    generator: String,
    /// Series length in price points.
    #[arg(long, default_value_t = 3240)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
    /// sinvol: sinusoid amplitude of the volatility level.
    #[arg(long, default_value_t = 0.004)]
    amplitude: f64,
    /// sinvol sinusoid period / gp quasi-periodic kernel period.
    #[arg(long, default_value_t = 400.0)]
    period: f64,
    /// sinvol: baseline volatility level.
    #[arg(long, default_value_t = 0.008)]
    base: f64,
    /// garch: constant term of the variance recursion.
    #[arg(long, default_value_t = 4e-6)]
    alpha0: f64,
    /// garch: ARCH coefficient.
    #[arg(long, default_value_t = 0.09)]
    alpha: f64,
    /// garch: GARCH coefficient.
    #[arg(long, default_value_t = 0.89)]
    beta: f64,
    /// gp: kernel family (se, matern32, quasi-periodic).
    #[arg(long, default_value = "matern32")]
    kernel: String,
    /// gp: kernel output scale of the log-price draw.
    #[arg(long, default_value_t = 0.02)]
    output_scale: f64,
    /// gp: kernel length scale in steps.
    #[arg(long, default_value_t = 50.0)]
    length_scale: f64,
    /// gp: observation noise of the log-price draw.
    #[arg(long, default_value_t = 0.005)]
    noise: f64,
    /// gp: quasi-periodic roughness.
    #[arg(long, default_value_t = 1.0)]
    roughness: f64,
}

#[derive(Args)]
struct BacktestArgs {
    #[arg(long)]
    input: PathBuf,
    /// gp-abs, gp-squared, gp-abs-envelope, gp-combined-envelope, garch,
    /// egarch, or gjr-garch.
    #[arg(long, default_value = "gp-abs")]
    strategy: String,
    /// Kernel for GP strategies (se, matern32, quasi-periodic).
    #[arg(long, default_value = "matern32")]
    kernel: String,
    /// Re-estimate hyperparameters as the window rolls.
    #[arg(long)]
    hyper_update: bool,
    #[arg(long, default_value_t = 100)]
    training: usize,
    #[arg(long, default_value_t = 100)]
    window: usize,
    /// Maximum returns processed from the input.
    #[arg(long, default_value_t = 3140)]
    segment: usize,
    /// Interval half-width in posterior standard deviations.
    #[arg(long, default_value_t = 1.96)]
    interval_z: f64,
    /// Proxy floor; derived from the training returns when omitted.
    #[arg(long)]
    floor: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 300)]
    fit_max_iter: usize,
    #[arg(long, default_value_t = 8)]
    fit_restarts: usize,
    #[arg(long, default_value_t = 40)]
    warm_max_iter: usize,
    /// Replace the default hyperprior width.
    #[arg(long)]
    prior_log_std: Option<f64>,
    /// Output directory.
    #[arg(long, default_value = "gpvol-out")]
    out: PathBuf,
}

#[derive(Args)]
struct CompareArgs {
    /// Flat key=value config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Input CSV (repeatable).
    #[arg(long = "input")]
    inputs: Vec<PathBuf>,
    /// Comma-separated strategy kinds (default: all seven).
    #[arg(long)]
    strategies: Option<String>,
    /// Comma-separated kernels for the GP strategies (default: matern32).
    #[arg(long)]
    kernels: Option<String>,
    /// Re-estimate hyperparameters while rolling (true/false).
    #[arg(long)]
    hyper_update: Option<bool>,
    #[arg(long)]
    training: Option<usize>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    segment: Option<usize>,
    #[arg(long)]
    interval_z: Option<f64>,
    #[arg(long)]
    floor: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    fit_max_iter: Option<usize>,
    #[arg(long)]
    fit_restarts: Option<usize>,
    #[arg(long)]
    warm_max_iter: Option<usize>,
    #[arg(long)]
    prior_log_std: Option<f64>,
    /// Output directory (default gpvol-out).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated output formats from {csv, json} (default both).
    #[arg(long)]
    formats: Option<String>,
    /// Worker threads (default: GPVOL_WORKERS, else all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Emit per-step record CSVs (true/false, default true).
    #[arg(long)]
    records: Option<bool>,
}

#[derive(Args)]
struct RecoveryArgs {
    /// Kernel of the generating process (se, matern32, quasi-periodic).
    #[arg(long, default_value = "se")]
    kernel: String,
    #[arg(long, default_value_t = 1.0)]
    output_scale: f64,
    #[arg(long, default_value_t = 30.0)]
    length_scale: f64,
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    /// Quasi-periodic kernel period.
    #[arg(long, default_value_t = 250.0)]
    period: f64,
    #[arg(long, default_value_t = 1.0)]
    roughness: f64,
    /// Datasets drawn from the generating process.
    #[arg(long, default_value_t = 100)]
    n_sets: usize,
    /// Points per dataset.
    #[arg(long, default_value_t = 1000)]
    n_points: usize,
    /// Comma-separated subsample fractions in (0, 1].
    #[arg(long, default_value = "0.05,0.2,0.5,0.95")]
    fractions: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 200)]
    max_iter: usize,
    /// Simplex value-spread stopping tolerance.
    #[arg(long, default_value_t = 1e-6)]
    f_tol: f64,
    #[arg(long, default_value_t = 4)]
    restarts: usize,
    /// Output JSON path.
    #[arg(long, default_value = "recovery.json")]
    out: PathBuf,
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_CONFIG,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(cli) {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::exit(EXIT_CONFIG);
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<i32> {
    match cli.command {
        Command::IngestCheck { input, segment } => ingest_check(&input, segment),
        Command::Synth(args) => run_synth(&args),
        Command::Backtest(args) => run_single_backtest(&args),
        Command::Compare(args) => {
            let cfg = build_run_config(&args)?;
            let outcome = run_compare(&cfg)?;
            for table in &outcome.tables {
                if table.aggregate == Aggregate::Mean {
                    println!("{}", table.to_text());
                }
            }
            println!(
                "{} runs ({} failed); wrote {} files to {}",
                outcome.total_runs,
                outcome.failed_runs,
                outcome.written.len(),
                cfg.output_dir.display()
            );
            Ok(if outcome.failed_runs == 0 { EXIT_OK } else { EXIT_RUN_FAILED })
        }
        Command::Recovery(args) => run_recovery(&args),
    }
}

fn ingest_check(input: &PathBuf, segment: usize) -> anyhow::Result<i32> {
    let series = ingest_csv(input).with_context(|| format!("reading {}", input.display()))?;
    let n = series.timestamps.len();
    let (lo, hi) = series
        .prices
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &p| (lo.min(p), hi.max(p)));
    println!(
        "ok: {n} rows, timestamps {}..{}, prices {}..{}",
        series.timestamps[0],
        series.timestamps[n - 1],
        lo,
        hi
    );
    let segments = split_segments(&series, segment)?;
    let partial = segments.iter().filter(|s| s.partial).count();
    println!(
        "segments at {segment} points: {} full, {partial} partial",
        segments.len() - partial
    );
    for s in segments.iter().filter(|s| s.partial) {
        println!("  segment {} is partial ({} points)", s.index, s.prices.timestamps.len());
    }
    Ok(EXIT_OK)
}

fn kernel_spec_from(
    family: KernelFamily,
    output_scale: f64,
    length_scale: f64,
    noise: f64,
    period: f64,
    roughness: f64,
) -> KernelSpec {
    match family {
        KernelFamily::SquaredExponential => {
            KernelSpec::squared_exponential(output_scale, length_scale, noise)
        }
        KernelFamily::Matern32 => KernelSpec::matern32(output_scale, length_scale, noise),
        KernelFamily::QuasiPeriodic => {
            KernelSpec::quasi_periodic(output_scale, length_scale, noise, period, roughness)
        }
    }
}

fn run_synth(args: &SynthArgs) -> anyhow::Result<i32> {
    let generator = match args.generator.as_str() {
        "sinvol" => Generator::SinVol {
            amplitude: args.amplitude,
            period: args.period,
            base: args.base,
        },
        "garch" => Generator::GarchSim(
            GarchSpec::vanilla(1, 1),
            GarchParams::vanilla(args.alpha0, vec![args.alpha], vec![args.beta]),
        ),
        "gp" => Generator::GpDraw(kernel_spec_from(
            args.kernel.parse()?,
            args.output_scale,
            args.length_scale,
            args.noise,
            args.period,
            args.roughness,
        )),
        other => bail!("unknown generator '{other}' (expected sinvol, garch, or gp)"),
    };
    let spec = SynthSpec {
        generator,
        n: args.n,
        seed: args.seed,
    };
    let series = synth::generate(&spec)?;
    write_prices(&args.out, &series)?;
    println!("wrote {} points to {}", args.n, args.out.display());
    Ok(EXIT_OK)
}

/// Everything the single-run `backtest` subcommand emits as JSON.
#[derive(Serialize)]
struct BacktestSummary<'a> {
    schema_version: u32,
    strategy: &'a Strategy,
    rolling: &'a RollingConfig,
    proxy: gpvol::returns::ProxyKind,
    steps: usize,
    suite: &'a gpvol::metrics::MetricSuite,
    residual_mean: f64,
    residual_calibrated_std: f64,
    fallbacks: usize,
    inference_failures: usize,
    records_file: String,
}

fn run_single_backtest(args: &BacktestArgs) -> anyhow::Result<i32> {
    let kind: StrategyKind = args.strategy.parse()?;
    let strategy = if kind.is_gp() {
        Strategy::gp(kind, args.kernel.parse()?, args.hyper_update)?
    } else {
        Strategy::baseline(kind, args.hyper_update)?
    };
    let rolling = RollingConfig {
        training: args.training,
        window: args.window,
        segment: args.segment,
        interval_z: args.interval_z,
        floor: args.floor,
        seed: args.seed,
    };
    let fit = SimplexConfig {
        max_iter: args.fit_max_iter,
        f_tol: 1e-7,
        x_tol: 1e-7,
        restarts: args.fit_restarts,
        seed: args.seed,
    };
    let warm = SimplexConfig {
        max_iter: args.warm_max_iter,
        f_tol: 1e-6,
        x_tol: 1e-6,
        restarts: 1,
        seed: args.seed,
    };
    let series =
        ingest_csv(&args.input).with_context(|| format!("reading {}", args.input.display()))?;
    let report =
        match run_backtest_with(&series, &strategy, &rolling, &fit, &warm, args.prior_log_std) {
            Ok(report) => report,
            Err(e) => {
                eprintln!("error: backtest failed: {e}");
                return Ok(EXIT_RUN_FAILED);
            }
        };

    std::fs::create_dir_all(&args.out)?;
    let stem = args
        .input
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "input".into());
    let records_file = format!("{stem}_{}.csv", strategy_slug(&strategy.label()));
    std::fs::write(args.out.join(&records_file), records_csv(&report))?;
    let summary = BacktestSummary {
        schema_version: SCHEMA_VERSION,
        strategy: &report.strategy,
        rolling: &rolling,
        proxy: report.proxy,
        steps: report.records.len(),
        suite: &report.suite,
        residual_mean: report.residuals.mean,
        residual_calibrated_std: report.residuals.calibrated_std,
        fallbacks: report.fallbacks,
        inference_failures: report.inference_failures,
        records_file: records_file.clone(),
    };
    let summary_path = args.out.join(format!("{stem}_{}.json", strategy_slug(&strategy.label())));
    let mut body = serde_json::to_string_pretty(&summary)?;
    body.push('\n');
    std::fs::write(&summary_path, body)?;

    let s = &report.suite;
    println!(
        "{} on {stem}: {} steps, MSE1 {:.6e}, MAE1 {:.6e}, sMAPE {:.2}, MdRAE {}",
        strategy.label(),
        report.records.len(),
        s.mse1,
        s.mae1,
        s.smape,
        s.mdrae.map_or("undefined".into(), |v| format!("{v:.4}")),
    );
    println!(
        "residuals: mean {:.4}, calibrated std {:.4}; wrote {} and {}",
        report.residuals.mean,
        report.residuals.calibrated_std,
        args.out.join(&records_file).display(),
        summary_path.display()
    );
    Ok(EXIT_OK)
}

/// Merge defaults, the config file, and explicit flags (strongest last).
fn build_run_config(args: &CompareArgs) -> anyhow::Result<RunConfig> {
    let file: BTreeMap<String, String> = match &args.config {
        Some(path) => parse_config(
            &std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?,
        )?,
        None => BTreeMap::new(),
    };

    fn pick<T: FromStr>(
        flag: Option<T>,
        file: &BTreeMap<String, String>,
        key: &str,
        default: T,
    ) -> anyhow::Result<T> {
        if let Some(v) = flag {
            return Ok(v);
        }
        match file.get(key) {
            Some(s) => Ok(parse_value(key, s)?),
            None => Ok(default),
        }
    }
    fn pick_optional<T: FromStr>(
        flag: Option<T>,
        file: &BTreeMap<String, String>,
        key: &str,
    ) -> anyhow::Result<Option<T>> {
        if flag.is_some() {
            return Ok(flag);
        }
        match file.get(key) {
            Some(s) => Ok(Some(parse_value(key, s)?)),
            None => Ok(None),
        }
    }

    let inputs: Vec<PathBuf> = if !args.inputs.is_empty() {
        args.inputs.clone()
    } else {
        file.get("input")
            .map(|v| split_list(v).into_iter().map(PathBuf::from).collect())
            .unwrap_or_default()
    };

    let strategy_list = args
        .strategies
        .clone()
        .or_else(|| file.get("strategies").cloned())
        .unwrap_or_else(|| {
            "gp-abs,gp-squared,gp-abs-envelope,gp-combined-envelope,garch,egarch,gjr-garch".into()
        });
    let strategies: Vec<StrategyKind> = split_list(&strategy_list)
        .iter()
        .map(|s| s.parse())
        .collect::<gpvol::Result<_>>()?;

    let kernel_list = args
        .kernels
        .clone()
        .or_else(|| file.get("kernels").cloned())
        .unwrap_or_else(|| "matern32".into());
    let kernels: Vec<KernelFamily> = split_list(&kernel_list)
        .iter()
        .map(|s| s.parse())
        .collect::<gpvol::Result<_>>()?;

    let formats = args
        .formats
        .clone()
        .or_else(|| file.get("formats").cloned())
        .unwrap_or_else(|| "csv,json".into());
    let (mut csv, mut json) = (false, false);
    for fmt in split_list(&formats) {
        match fmt.as_str() {
            "csv" => csv = true,
            "json" => json = true,
            other => bail!("unknown output format '{other}' (expected csv or json)"),
        }
    }

    let workers = match pick_optional(args.workers, &file, "workers")? {
        Some(w) => w,
        None => match std::env::var(WORKERS_ENV) {
            Ok(v) => v.parse().with_context(|| {
                format!("{WORKERS_ENV} must be a worker count, got '{v}'")
            })?,
            Err(_) => 0,
        },
    };

    let seed = pick(args.seed, &file, "seed", 0)?;
    let rolling = RollingConfig {
        training: pick(args.training, &file, "training", 100)?,
        window: pick(args.window, &file, "window", 100)?,
        segment: pick(args.segment, &file, "segment", 3140)?,
        interval_z: pick(args.interval_z, &file, "interval-z", 1.96)?,
        floor: pick_optional(args.floor, &file, "floor")?,
        seed,
    };
    let fit = SimplexConfig {
        max_iter: pick(args.fit_max_iter, &file, "fit-max-iter", 300)?,
        f_tol: 1e-7,
        x_tol: 1e-7,
        restarts: pick(args.fit_restarts, &file, "fit-restarts", 8)?,
        seed,
    };
    let warm = SimplexConfig {
        max_iter: pick(args.warm_max_iter, &file, "warm-max-iter", 40)?,
        f_tol: 1e-6,
        x_tol: 1e-6,
        restarts: 1,
        seed,
    };

    Ok(RunConfig {
        inputs,
        strategies,
        kernels,
        hyper_update: pick(args.hyper_update, &file, "hyper-update", false)?,
        rolling,
        fit,
        warm,
        prior_log_std: pick_optional(args.prior_log_std, &file, "prior-log-std")?,
        output_dir: pick(args.out.clone(), &file, "out", PathBuf::from("gpvol-out"))?,
        csv,
        json,
        workers,
        records: pick(args.records, &file, "records", true)?,
    })
}

fn run_recovery(args: &RecoveryArgs) -> anyhow::Result<i32> {
    let spec = kernel_spec_from(
        args.kernel.parse()?,
        args.output_scale,
        args.length_scale,
        args.noise,
        args.period,
        args.roughness,
    );
    let fractions: Vec<f64> = split_list(&args.fractions)
        .iter()
        .map(|s| parse_value("fractions", s))
        .collect::<gpvol::Result<_>>()?;
    let cfg = SimplexConfig {
        max_iter: args.max_iter,
        f_tol: args.f_tol,
        x_tol: 1e-6,
        restarts: args.restarts,
        seed: args.seed,
    };
    let report =
        synth::recovery_experiment(&spec, args.n_sets, args.n_points, &fractions, &cfg, args.seed)?;

    #[derive(Serialize)]
    struct RecoveryEmission<'a> {
        schema_version: u32,
        report: &'a synth::RecoveryReport,
    }
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let mut body = serde_json::to_string_pretty(&RecoveryEmission {
        schema_version: SCHEMA_VERSION,
        report: &report,
    })?;
    body.push('\n');
    std::fs::write(&args.out, body)?;

    println!(
        "recovery: {} kernel, {} datasets of {} points",
        args.kernel, report.n_sets, report.n_points
    );
    for f in &report.fractions {
        println!(
            "  fraction {:.2}: median RMSE {:.6} (mean {:.6}), {} failures",
            f.fraction, f.median_rmse, f.mean_rmse, f.failures
        );
    }
    println!("wrote {}", args.out.display());
    Ok(EXIT_OK)
}
