//! Experiment orchestration: every (segment × strategy) backtest, run in
//! parallel and merged deterministically into comparison tables, per-step
//! record files, and one consolidated JSON report.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use gpvol::forecast::{
    run_backtest_with, BacktestReport, RollingConfig, Strategy, StrategyKind,
};
use gpvol::gp::KernelFamily;
use gpvol::inference::SimplexConfig;
use gpvol::metrics::{compute_suite, MetricSuite};
use gpvol::returns::ProxyKind;
use gpvol::{Error, Result};

use crate::data::{ingest_csv, split_segments, Segment};
use crate::report::{
    prices_csv, proxy_slug, records_csv, Aggregate, ComparisonTable, SCHEMA_VERSION,
};

/// A full comparison request.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub inputs: Vec<PathBuf>,
    /// Strategy kinds; GP kinds are crossed with every kernel.
    pub strategies: Vec<StrategyKind>,
    pub kernels: Vec<KernelFamily>,
    pub hyper_update: bool,
    pub rolling: RollingConfig,
    /// Cold-fit optimizer budget (training windows, GARCH likelihoods).
    pub fit: SimplexConfig,
    /// Warm per-step update budget.
    pub warm: SimplexConfig,
    /// Replacement for the default hyperprior width, if any.
    pub prior_log_std: Option<f64>,
    pub output_dir: PathBuf,
    pub csv: bool,
    pub json: bool,
    /// Worker threads; 0 uses every core.
    pub workers: usize,
    /// Emit per-step record CSVs alongside the tables.
    pub records: bool,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.inputs.is_empty() {
            return Err(Error::InvalidInput("at least one input file is required".into()));
        }
        if self.strategies.is_empty() {
            return Err(Error::InvalidInput("at least one strategy is required".into()));
        }
        if !(self.csv || self.json) {
            return Err(Error::InvalidInput(
                "no output format selected; enable csv, json, or both".into(),
            ));
        }
        if self.strategies.iter().any(|k| k.is_gp()) && self.kernels.is_empty() {
            return Err(Error::InvalidInput(
                "GP strategies are requested but the kernel list is empty".into(),
            ));
        }
        self.rolling.validate()
    }

    /// The concrete strategy rows: GP kinds × kernels, baselines once.
    pub fn expand_strategies(&self) -> Result<Vec<Strategy>> {
        let mut out = Vec::new();
        for &kind in &self.strategies {
            if kind.is_gp() {
                for &kernel in &self.kernels {
                    out.push(Strategy::gp(kind, kernel, self.hyper_update)?);
                }
            } else {
                out.push(Strategy::baseline(kind, self.hyper_update)?);
            }
        }
        Ok(out)
    }
}

/// One ingested input with its runnable segments.
struct Dataset {
    name: String,
    segments: Vec<Segment>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct SkippedSegment {
    segment: usize,
    points: usize,
    reason: String,
}

/// Everything `run_compare` leaves behind, for the caller to print.
pub struct RunOutcome {
    pub tables: Vec<ComparisonTable>,
    pub total_runs: usize,
    pub failed_runs: usize,
    pub written: Vec<PathBuf>,
}

#[derive(Serialize)]
struct DatasetSummary {
    name: String,
    source: PathBuf,
    points: usize,
    segments: usize,
    partial_segments: usize,
    skipped: Vec<SkippedSegment>,
}

#[derive(Serialize)]
struct RunSummary {
    dataset: String,
    segment: usize,
    partial: bool,
    strategy: String,
    error: Option<String>,
    proxy: Option<ProxyKind>,
    suite: Option<MetricSuite>,
    residual_mean: Option<f64>,
    residual_calibrated_std: Option<f64>,
    fallbacks: Option<usize>,
    inference_failures: Option<usize>,
    records_file: Option<String>,
}

#[derive(Serialize)]
struct JsonReport<'a> {
    schema_version: u32,
    config: &'a RunConfig,
    datasets: Vec<DatasetSummary>,
    runs: Vec<RunSummary>,
    tables: &'a [ComparisonTable],
}

/// Execute every (segment × strategy) backtest and emit the configured
/// outputs. Individual run failures become failed table cells and a nonzero
/// `failed_runs`; the remaining runs proceed.
pub fn run_compare(cfg: &RunConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let strategies = cfg.expand_strategies()?;
    let labels: Vec<String> = strategies.iter().map(Strategy::label).collect();

    let mut datasets = Vec::with_capacity(cfg.inputs.len());
    let mut summaries = Vec::with_capacity(cfg.inputs.len());
    for (i, input) in cfg.inputs.iter().enumerate() {
        let series = ingest_csv(input)?;
        let points = series.timestamps.len();
        let name = dataset_name(input, i, &datasets);
        let all = split_segments(&series, cfg.rolling.segment)?;
        let partial_segments = all.iter().filter(|s| s.partial).count();
        // A segment must hold training returns plus at least one step.
        let min_points = cfg.rolling.training + 2;
        let (segments, skipped): (Vec<Segment>, Vec<Segment>) =
            all.into_iter().partition(|s| s.prices.timestamps.len() >= min_points);
        let skipped: Vec<SkippedSegment> = skipped
            .into_iter()
            .map(|s| SkippedSegment {
                segment: s.index,
                points: s.prices.timestamps.len(),
                reason: format!("shorter than training + 2 = {min_points} points"),
            })
            .collect();
        for s in &skipped {
            eprintln!(
                "warning: {name} segment {} skipped ({} points, {})",
                s.segment, s.points, s.reason
            );
        }
        summaries.push(DatasetSummary {
            name: name.clone(),
            source: input.clone(),
            points,
            segments: segments.len(),
            partial_segments,
            skipped,
        });
        datasets.push(Dataset { name, segments });
    }
    if datasets.iter().all(|d| d.segments.is_empty()) {
        return Err(Error::InvalidInput(
            "no segment is long enough to backtest; shrink training or provide more data".into(),
        ));
    }

    // One job per (dataset, segment, strategy), merged by index so the
    // output never depends on scheduling.
    let n_strategies = strategies.len();
    let jobs: Vec<(usize, usize, usize)> = datasets
        .iter()
        .enumerate()
        .flat_map(|(d, ds)| {
            (0..ds.segments.len()).flat_map(move |s| (0..n_strategies).map(move |k| (d, s, k)))
        })
        .collect();
    let execute = || {
        jobs.par_iter()
            .map(|&(d, s, k)| {
                run_backtest_with(
                    &datasets[d].segments[s].prices,
                    &strategies[k],
                    &cfg.rolling,
                    &cfg.fit,
                    &cfg.warm,
                    cfg.prior_log_std,
                )
            })
            .collect::<Vec<Result<BacktestReport>>>()
    };
    let results = if cfg.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .map_err(|e| Error::InvalidInput(format!("cannot build worker pool: {e}")))?
            .install(execute)
    } else {
        execute()
    };

    let mut failed_runs = 0usize;
    for (&(d, s, k), result) in jobs.iter().zip(&results) {
        if let Err(e) = result {
            failed_runs += 1;
            eprintln!(
                "error: {} segment {} / {} failed: {e}",
                datasets[d].name, datasets[d].segments[s].index, labels[k]
            );
        }
    }

    std::fs::create_dir_all(&cfg.output_dir)?;
    let mut written = Vec::new();
    let mut tables = Vec::new();
    let mut run_summaries = Vec::new();
    // Jobs are laid out dataset-major, then segment, then strategy.
    let mut offsets = Vec::with_capacity(datasets.len());
    let mut acc = 0usize;
    for dataset in &datasets {
        offsets.push(acc);
        acc += dataset.segments.len() * strategies.len();
    }
    let job_index = |d: usize, s: usize, k: usize| offsets[d] + s * strategies.len() + k;
    for (d, dataset) in datasets.iter().enumerate() {
        for proxy in [ProxyKind::Abs, ProxyKind::Squared] {
            // suites[k][s]: strategy k's metric suite on segment s under
            // this table's proxy, None when the run failed.
            let suites: Vec<Vec<Option<MetricSuite>>> = (0..strategies.len())
                .map(|k| {
                    (0..dataset.segments.len())
                        .map(|s| {
                            results[job_index(d, s, k)]
                                .as_ref()
                                .ok()
                                .and_then(|r| suite_for(r, proxy))
                        })
                        .collect()
                })
                .collect();
            for aggregate in [Aggregate::Mean, Aggregate::Median] {
                let table =
                    ComparisonTable::build(&dataset.name, proxy, aggregate, &labels, &suites)?;
                if cfg.csv {
                    let path = cfg.output_dir.join(format!(
                        "{}_{}_{}.csv",
                        dataset.name,
                        proxy_slug(proxy),
                        aggregate.name()
                    ));
                    std::fs::write(&path, table.to_csv())?;
                    written.push(path);
                }
                tables.push(table);
            }
        }
    }

    for (&(d, s, k), result) in jobs.iter().zip(&results) {
        let dataset = &datasets[d];
        let segment = &dataset.segments[s];
        let mut summary = RunSummary {
            dataset: dataset.name.clone(),
            segment: segment.index,
            partial: segment.partial,
            strategy: labels[k].clone(),
            error: None,
            proxy: None,
            suite: None,
            residual_mean: None,
            residual_calibrated_std: None,
            fallbacks: None,
            inference_failures: None,
            records_file: None,
        };
        match result {
            Ok(report) => {
                summary.proxy = Some(report.proxy);
                summary.suite = Some(report.suite.clone());
                summary.residual_mean = Some(report.residuals.mean);
                summary.residual_calibrated_std = Some(report.residuals.calibrated_std);
                summary.fallbacks = Some(report.fallbacks);
                summary.inference_failures = Some(report.inference_failures);
                if cfg.records && cfg.csv {
                    let file = format!(
                        "{}_seg{}_{}.csv",
                        dataset.name,
                        segment.index,
                        strategy_slug(&labels[k])
                    );
                    let path = cfg.output_dir.join(&file);
                    std::fs::write(&path, records_csv(report))?;
                    written.push(path);
                    summary.records_file = Some(file);
                }
            }
            Err(e) => summary.error = Some(e.to_string()),
        }
        run_summaries.push(summary);
    }

    if cfg.json {
        let report = JsonReport {
            schema_version: SCHEMA_VERSION,
            config: cfg,
            datasets: summaries,
            runs: run_summaries,
            tables: &tables,
        };
        let path = cfg.output_dir.join("report.json");
        let mut body = serde_json::to_string_pretty(&report)
            .map_err(|e| Error::InvalidInput(format!("cannot serialize report: {e}")))?;
        body.push('\n');
        std::fs::write(&path, body)?;
        written.push(path);
    }

    Ok(RunOutcome {
        tables,
        total_runs: jobs.len(),
        failed_runs,
        written,
    })
}

/// The run's metrics under `proxy`: native when it matches the report,
/// otherwise derived by squaring (abs → squared) or square-rooting
/// (squared → abs) both forecast and realized series elementwise.
pub fn suite_for(report: &BacktestReport, proxy: ProxyKind) -> Option<MetricSuite> {
    if report.proxy == proxy {
        return Some(report.suite.clone());
    }
    let transform: fn(f64) -> f64 = match (report.proxy, proxy) {
        (ProxyKind::Abs, ProxyKind::Squared) => |v| v * v,
        (ProxyKind::Squared, ProxyKind::Abs) => f64::sqrt,
        _ => return None,
    };
    let realized: Vec<f64> = report.records.iter().map(|r| transform(r.realized)).collect();
    let forecast: Vec<f64> = report.records.iter().map(|r| transform(r.forecast)).collect();
    compute_suite(&realized, &forecast).ok()
}

/// Unique dataset name from the file stem; collisions get a positional
/// suffix.
fn dataset_name(input: &Path, index: usize, existing: &[Dataset]) -> String {
    let stem = input
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| format!("input{index}"));
    if existing.iter().any(|d| d.name == stem) {
        format!("{stem}-{index}")
    } else {
        stem
    }
}

/// Strategy label to a file-name-safe slug: `gp-abs(matern32)+hu` becomes
/// `gp-abs-matern32-hu`.
pub fn strategy_slug(label: &str) -> String {
    let mut out = String::with_capacity(label.len());
    for c in label.chars() {
        match c {
            '(' | '+' => out.push('-'),
            ')' => {}
            c => out.push(c),
        }
    }
    out
}

/// Write a synthetic series to `path` in the ingestion format.
pub fn write_prices(path: &Path, series: &gpvol::returns::PriceSeries) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(path, prices_csv(series))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use gpvol::forecast::run_backtest;
    use gpvol::synth;

    fn tiny_config(dir: &Path, input: PathBuf) -> RunConfig {
        RunConfig {
            inputs: vec![input],
            strategies: vec![StrategyKind::GpAbs, StrategyKind::Garch],
            kernels: vec![KernelFamily::Matern32],
            hyper_update: false,
            rolling: RollingConfig {
                training: 60,
                window: 60,
                segment: 220,
                ..RollingConfig::default()
            },
            fit: SimplexConfig {
                max_iter: 200,
                restarts: 4,
                f_tol: 1e-6,
                x_tol: 1e-6,
                seed: 0,
            },
            warm: SimplexConfig {
                max_iter: 30,
                restarts: 1,
                f_tol: 1e-5,
                x_tol: 1e-5,
                seed: 0,
            },
            prior_log_std: None,
            output_dir: dir.to_path_buf(),
            csv: true,
            json: true,
            workers: 1,
            records: true,
        }
    }

    fn synth_input(dir: &Path, n: usize, seed: u64) -> PathBuf {
        let spec = synth::SynthSpec {
            generator: synth::Generator::SinVol {
                amplitude: 0.004,
                period: 60.0,
                base: 0.01,
            },
            n,
            seed,
        };
        let series = synth::generate(&spec).unwrap();
        let path = dir.join(format!("sinvol-{seed}.csv"));
        write_prices(&path, &series).unwrap();
        path
    }

    #[test]
    fn expansion_crosses_gp_kinds_with_kernels() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_config(dir.path(), PathBuf::from("unused.csv"));
        cfg.kernels = vec![KernelFamily::SquaredExponential, KernelFamily::Matern32];
        let strategies = cfg.expand_strategies().unwrap();
        let labels: Vec<String> = strategies.iter().map(Strategy::label).collect();
        assert_eq!(labels, vec!["gp-abs(se)", "gp-abs(matern32)", "garch"]);
    }

    #[test]
    fn validation_catches_empty_lists() {
        let dir = tempfile::tempdir().unwrap();
        let base = tiny_config(dir.path(), PathBuf::from("x.csv"));
        let mut no_strategies = base.clone();
        no_strategies.strategies.clear();
        assert!(no_strategies.validate().is_err());
        let mut no_formats = base.clone();
        no_formats.csv = false;
        no_formats.json = false;
        assert!(no_formats.validate().is_err());
        let mut no_kernels = base;
        no_kernels.kernels.clear();
        assert!(no_kernels.validate().is_err());
    }

    #[test]
    fn compare_emits_tables_records_and_json() {
        let dir = tempfile::tempdir().unwrap();
        let input = synth_input(dir.path(), 290, 4);
        let out = dir.path().join("out");
        let cfg = tiny_config(&out, input);
        let outcome = run_compare(&cfg).unwrap();
        // 290 points → one full 220-point segment + one 70-point partial
        // (skipped at training 60 + 2 > 70? 70 ≥ 62, so it runs too).
        assert_eq!(outcome.total_runs, 4);
        assert_eq!(outcome.failed_runs, 0);
        // Tables: 1 dataset × 2 proxies × 2 aggregates.
        assert_eq!(outcome.tables.len(), 4);
        assert!(out.join("sinvol-4_abs_mean.csv").is_file());
        assert!(out.join("sinvol-4_squared_median.csv").is_file());
        assert!(out.join("report.json").is_file());
        assert!(out.join("sinvol-4_seg0_gp-abs-matern32.csv").is_file());
        assert!(out.join("sinvol-4_seg1_garch.csv").is_file());

        let json: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap())
                .unwrap();
        assert_eq!(json["schema_version"], 1);
        assert_eq!(json["runs"].as_array().unwrap().len(), 4);
        assert_eq!(json["datasets"][0]["partial_segments"], 1);
    }

    #[test]
    fn failed_cells_do_not_abort_the_rest() {
        // Too little data for GARCH estimation (< 50 training returns) but
        // plenty for the GP: the GARCH cells fail, the GP cells survive.
        let dir = tempfile::tempdir().unwrap();
        let input = synth_input(dir.path(), 120, 9);
        let out = dir.path().join("out");
        let mut cfg = tiny_config(&out, input);
        cfg.rolling.training = 40;
        cfg.rolling.window = 40;
        cfg.rolling.segment = 120;
        let outcome = run_compare(&cfg).unwrap();
        assert_eq!(outcome.total_runs, 2);
        assert_eq!(outcome.failed_runs, 1);
        let abs_mean = &outcome.tables[0];
        let csv = abs_mean.to_csv();
        assert!(csv.contains("garch,0,failed"), "{csv}");
        assert!(!csv.contains("gp-abs(matern32),0"), "{csv}");
    }

    #[test]
    fn derived_suites_square_and_root_consistently() {
        let (returns, _) = synth::simulate_sinvol(0.004, 60.0, 0.01, 240, 8).unwrap();
        let prices = synth::returns_to_prices(&returns, 100.0);
        let strategy = Strategy::gp(StrategyKind::GpAbs, KernelFamily::Matern32, false).unwrap();
        let cfg = RollingConfig {
            training: 60,
            window: 60,
            segment: 240,
            ..RollingConfig::default()
        };
        let report = run_backtest(&prices, &strategy, &cfg).unwrap();
        let native = suite_for(&report, ProxyKind::Abs).unwrap();
        assert_eq!(native.mse1, report.suite.mse1);
        let squared = suite_for(&report, ProxyKind::Squared).unwrap();
        // MSE₂ of the abs-native run is the squared table's MSE₁ by
        // construction of the transforms.
        assert!((squared.mse1 - report.suite.mse2).abs() < 1e-15 * report.suite.mse2.max(1.0));
        assert!(suite_for(&report, ProxyKind::AbsEnvelope).is_none());
    }

    #[test]
    fn identical_configs_produce_identical_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let input = synth_input(dir.path(), 290, 12);
        let out_a = dir.path().join("a");
        let out_b = dir.path().join("b");
        let mut cfg_a = tiny_config(&out_a, input.clone());
        cfg_a.workers = 2;
        let cfg_b = tiny_config(&out_b, input);
        run_compare(&cfg_a).unwrap();
        run_compare(&cfg_b).unwrap();
        for entry in std::fs::read_dir(&out_a).unwrap() {
            let path = entry.unwrap().path();
            let name = path.file_name().unwrap().to_string_lossy().into_owned();
            if name == "report.json" {
                // The config echo embeds the differing output dirs; compare
                // everything but that block.
                let a: serde_json::Value =
                    serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
                let b: serde_json::Value = serde_json::from_str(
                    &std::fs::read_to_string(out_b.join(&name)).unwrap(),
                )
                .unwrap();
                assert_eq!(a["runs"], b["runs"]);
                assert_eq!(a["tables"], b["tables"]);
                continue;
            }
            let a = std::fs::read(&path).unwrap();
            let b = std::fs::read(out_b.join(&name)).unwrap();
            assert_eq!(a, b, "{name} differs between identical runs");
        }
    }
}
