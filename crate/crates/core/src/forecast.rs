//! One-step-ahead rolling volatility forecasting.
//!
//! Each strategy walks a price segment the same way: fit on the first
//! `training` observations, then repeatedly forecast the next step from data
//! seen so far, observe the realized value, and roll the window forward. GP
//! strategies regress on a log proxy (absolute returns, squared returns, or
//! return envelopes) and invert the transform for a positive point forecast
//! with an asymmetric interval; GARCH-family strategies iterate their
//! conditional-variance recursion. Causality is strict: the forecast for
//! step t never touches data at or after t.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::garch::{self, GarchParams, GarchSpec, GarchState};
use crate::gp::{CholeskyState, KernelFamily, Posterior};
use crate::inference::{map_estimate, warm_update, HyperPrior, MapResult, SimplexConfig};
use crate::metrics::{compute_suite, residual_stats, MetricSuite, ResidualStats};
use crate::returns::{
    default_floor, log_returns, make_proxy, to_log_space, PriceSeries, ProxyKind, ReturnSeries,
};

/// The available forecasters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyKind {
    /// GP on log absolute returns.
    GpAbs,
    /// GP on log squared returns.
    GpSquared,
    /// GP on the maxima envelope of log absolute returns.
    GpAbsEnvelope,
    /// Average of GPs on the positive- and negative-return envelopes.
    GpCombinedEnvelope,
    /// GARCH(1,1) conditional standard deviation.
    Garch,
    /// EGARCH(1,1) conditional standard deviation.
    EGarch,
    /// GJR-GARCH(1,1,1) conditional standard deviation.
    GjrGarch,
}

impl StrategyKind {
    pub fn is_gp(self) -> bool {
        matches!(
            self,
            StrategyKind::GpAbs
                | StrategyKind::GpSquared
                | StrategyKind::GpAbsEnvelope
                | StrategyKind::GpCombinedEnvelope
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::GpAbs => "gp-abs",
            StrategyKind::GpSquared => "gp-squared",
            StrategyKind::GpAbsEnvelope => "gp-abs-envelope",
            StrategyKind::GpCombinedEnvelope => "gp-combined-envelope",
            StrategyKind::Garch => "garch",
            StrategyKind::EGarch => "egarch",
            StrategyKind::GjrGarch => "gjr-garch",
        }
    }
}

impl std::str::FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gp-abs" => Ok(StrategyKind::GpAbs),
            "gp-squared" => Ok(StrategyKind::GpSquared),
            "gp-abs-envelope" => Ok(StrategyKind::GpAbsEnvelope),
            "gp-combined-envelope" => Ok(StrategyKind::GpCombinedEnvelope),
            "garch" => Ok(StrategyKind::Garch),
            "egarch" => Ok(StrategyKind::EGarch),
            "gjr-garch" => Ok(StrategyKind::GjrGarch),
            other => Err(Error::invalid(format!(
                "unknown strategy '{other}' (expected gp-abs, gp-squared, gp-abs-envelope, \
                 gp-combined-envelope, garch, egarch or gjr-garch)"
            ))),
        }
    }
}

/// A forecaster: the strategy tag, the kernel for GP tags, and whether
/// hyperparameters are re-estimated as the window rolls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Strategy {
    pub kind: StrategyKind,
    /// Present exactly when `kind` is a GP strategy.
    pub kernel: Option<KernelFamily>,
    pub hyper_update: bool,
}

impl Strategy {
    pub fn gp(kind: StrategyKind, kernel: KernelFamily, hyper_update: bool) -> Result<Self> {
        if !kind.is_gp() {
            return Err(Error::invalid(format!(
                "{} is not a GP strategy and takes no kernel",
                kind.name()
            )));
        }
        Ok(Strategy {
            kind,
            kernel: Some(kernel),
            hyper_update,
        })
    }

    pub fn baseline(kind: StrategyKind, hyper_update: bool) -> Result<Self> {
        if kind.is_gp() {
            return Err(Error::invalid(format!(
                "{} is a GP strategy and needs a kernel",
                kind.name()
            )));
        }
        Ok(Strategy {
            kind,
            kernel: None,
            hyper_update,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind.is_gp() != self.kernel.is_some() {
            return Err(Error::invalid(format!(
                "strategy {} must carry a kernel iff it is a GP strategy",
                self.kind.name()
            )));
        }
        Ok(())
    }

    /// Row label for comparison tables, e.g. `gp-abs(matern32)+hu`.
    pub fn label(&self) -> String {
        let mut label = self.kind.name().to_string();
        if let Some(kernel) = self.kernel {
            label.push('(');
            label.push_str(kernel.name());
            label.push(')');
        }
        if self.hyper_update {
            label.push_str("+hu");
        }
        label
    }

    fn family(&self) -> KernelFamily {
        self.kernel.expect("validated GP strategy")
    }
}

/// Rolling-walk settings shared by every strategy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RollingConfig {
    /// Observations fitted before the first forecast.
    pub training: usize,
    /// Maximum window length once rolling (GP strategies count proxy or
    /// envelope points; GARCH refits count returns).
    pub window: usize,
    /// Upper bound on the returns processed in one run.
    pub segment: usize,
    /// Interval half-width in posterior standard deviations.
    pub interval_z: f64,
    /// Proxy floor; derived from the training returns when absent.
    pub floor: Option<f64>,
    pub seed: u64,
}

impl Default for RollingConfig {
    fn default() -> Self {
        RollingConfig {
            training: 100,
            window: 100,
            segment: 3140,
            interval_z: 1.96,
            floor: None,
            seed: 0,
        }
    }
}

impl RollingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.training < 16 {
            return Err(Error::invalid(format!(
                "training length must be at least 16, got {}",
                self.training
            )));
        }
        if !(self.training <= self.window && self.window <= self.segment) {
            return Err(Error::invalid(format!(
                "need training ≤ window ≤ segment, got {} / {} / {}",
                self.training, self.window, self.segment
            )));
        }
        if !(self.interval_z > 0.0 && self.interval_z.is_finite()) {
            return Err(Error::invalid("interval multiplier must be positive and finite"));
        }
        if let Some(f) = self.floor {
            if !(f > 0.0 && f.is_finite()) {
                return Err(Error::invalid(format!("floor must be positive and finite, got {f}")));
            }
        }
        Ok(())
    }
}

/// One out-of-sample step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ForecastRecord {
    /// Time index of the step being forecast.
    pub time: i64,
    /// Point forecast in natural (proxy) space.
    pub forecast: f64,
    /// Interval bounds in natural space; always `lower ≤ forecast ≤ upper`.
    pub lower: f64,
    pub upper: f64,
    /// The proxy value observed at this step.
    pub realized: f64,
    /// Log-space posterior mean (= ln forecast).
    pub log_mean: f64,
    /// Log-space posterior variance (0 for GARCH strategies, which carry no
    /// posterior).
    pub log_variance: f64,
    /// True when this step leaned on a fallback: a degenerate window, a
    /// failed hyperparameter update, or a missing envelope side.
    pub fallback: bool,
}

/// Everything one rolling run produces.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BacktestReport {
    pub strategy: Strategy,
    /// The proxy the forecasts are evaluated against.
    pub proxy: ProxyKind,
    pub records: Vec<ForecastRecord>,
    /// Losses of the point forecasts against the realized proxy.
    pub suite: MetricSuite,
    /// Raw returns normalized by the forecasts, e_t = r_t / h_t.
    pub residuals: ResidualStats,
    /// Steps that used a fallback (see [`ForecastRecord::fallback`]).
    pub fallbacks: usize,
    /// Hyperparameter updates that failed and kept the previous estimate.
    pub inference_failures: usize,
}

/// Invert the log transform: point forecast and interval in natural space.
///
/// The interval is asymmetric around the point forecast because exp is
/// convex; its width collapses to zero with the posterior variance.
pub fn back_transform(post: &Posterior, z: f64) -> (f64, f64, f64) {
    let sd = post.variance.max(0.0).sqrt();
    (
        post.mean.exp(),
        (post.mean - z * sd).exp(),
        (post.mean + z * sd).exp(),
    )
}

/// Average the two single-sided envelope forecasts.
///
/// When one side is missing (its envelope window was unusable) the other is
/// returned alone and the fallback flag is raised; both missing is an error.
pub fn combine_envelopes(pos: Option<f64>, neg: Option<f64>) -> Result<(f64, bool)> {
    match (pos, neg) {
        (Some(p), Some(n)) if p > 0.0 && n > 0.0 => Ok((0.5 * (p + n), false)),
        (Some(p), None) if p > 0.0 => Ok((p, true)),
        (None, Some(n)) if n > 0.0 => Ok((n, true)),
        (None, None) => Err(Error::invalid("both envelope sides are missing")),
        _ => Err(Error::invalid("envelope forecasts must be strictly positive")),
    }
}

/// Posterior at the next raw time index from an envelope window.
///
/// The query point is the next *raw* step, not the hypothetical next
/// envelope point, so envelope forecasts are commensurable with the other
/// strategies under the same realized proxy.
pub fn envelope_forecast_step(state: &CholeskyState, x_next: f64) -> Result<Posterior> {
    if state.len() < 3 {
        return Err(Error::invalid(format!(
            "envelope window has {} points; at least 3 are needed to forecast",
            state.len()
        )));
    }
    state.posterior_at(x_next)
}

/// Run one strategy over one price segment with library-default optimizer
/// budgets: a 8-restart cold fit on the training window and single-descent
/// warm updates while rolling.
pub fn run_backtest(
    prices: &PriceSeries,
    strategy: &Strategy,
    cfg: &RollingConfig,
) -> Result<BacktestReport> {
    let fit_cfg = SimplexConfig {
        max_iter: 300,
        f_tol: 1e-7,
        x_tol: 1e-7,
        restarts: 8,
        seed: cfg.seed,
    };
    let warm_cfg = SimplexConfig {
        max_iter: 40,
        f_tol: 1e-6,
        x_tol: 1e-6,
        restarts: 1,
        seed: cfg.seed,
    };
    run_backtest_with(prices, strategy, cfg, &fit_cfg, &warm_cfg, None)
}

/// [`run_backtest`] with explicit optimizer budgets for the cold training
/// fit and the per-step warm updates, and an optional replacement for the
/// default hyperprior width.
pub fn run_backtest_with(
    prices: &PriceSeries,
    strategy: &Strategy,
    cfg: &RollingConfig,
    fit_cfg: &SimplexConfig,
    warm_cfg: &SimplexConfig,
    prior_log_std: Option<f64>,
) -> Result<BacktestReport> {
    cfg.validate()?;
    strategy.validate()?;
    let full = log_returns(prices)?;
    let n = full.len().min(cfg.segment);
    if n < cfg.training + 1 {
        return Err(Error::invalid(format!(
            "segment yields {n} returns; training {} leaves no step to forecast",
            cfg.training
        )));
    }
    let returns = ReturnSeries {
        timestamps: full.timestamps[..n].to_vec(),
        values: full.values[..n].to_vec(),
        flavor: full.flavor,
    };
    // The floor comes from training data only, so later observations cannot
    // leak backwards through it.
    let floor = match cfg.floor {
        Some(f) => f,
        None => default_floor(&returns.values[..cfg.training]),
    };
    let job = GpJob {
        cfg,
        fit_cfg,
        warm_cfg,
        prior_log_std,
        floor,
    };
    match strategy.kind {
        StrategyKind::GpAbs => run_gp_direct(&returns, ProxyKind::Abs, strategy, &job),
        StrategyKind::GpSquared => run_gp_direct(&returns, ProxyKind::Squared, strategy, &job),
        StrategyKind::GpAbsEnvelope => run_gp_abs_envelope(&returns, strategy, &job),
        StrategyKind::GpCombinedEnvelope => run_gp_combined(&returns, strategy, &job),
        StrategyKind::Garch | StrategyKind::EGarch | StrategyKind::GjrGarch => {
            run_garch(&returns, strategy, cfg, fit_cfg, floor)
        }
    }
}

/// Everything a GP runner needs besides the data: rolling settings,
/// optimizer budgets, the prior-width override, and the proxy floor.
struct GpJob<'a> {
    cfg: &'a RollingConfig,
    fit_cfg: &'a SimplexConfig,
    warm_cfg: &'a SimplexConfig,
    prior_log_std: Option<f64>,
    floor: f64,
}

/// Shared tail: metric suite, residuals, and report assembly.
fn assemble_report(
    strategy: &Strategy,
    proxy: ProxyKind,
    returns: &ReturnSeries,
    training: usize,
    records: Vec<ForecastRecord>,
    inference_failures: usize,
) -> Result<BacktestReport> {
    let realized: Vec<f64> = records.iter().map(|r| r.realized).collect();
    let forecasts: Vec<f64> = records.iter().map(|r| r.forecast).collect();
    let suite = compute_suite(&realized, &forecasts)?;
    let residuals = residual_stats(&returns.values[training..training + records.len()], &forecasts)?;
    let fallbacks = records.iter().filter(|r| r.fallback).count();
    Ok(BacktestReport {
        strategy: *strategy,
        proxy,
        records,
        suite,
        residuals,
        fallbacks,
        inference_failures,
    })
}

/// GP regression directly on the per-step log proxy (|r| or r²).
fn run_gp_direct(
    returns: &ReturnSeries,
    kind: ProxyKind,
    strategy: &Strategy,
    job: &GpJob,
) -> Result<BacktestReport> {
    let cfg = job.cfg;
    let family = strategy.family();
    let proxy = make_proxy(returns, kind, Some(job.floor))?;
    let points = to_log_space(&proxy)?;
    let (times, logv): (Vec<f64>, Vec<f64>) = points.into_iter().unzip();
    let n = times.len();
    let train = cfg.training;

    let prior =
        HyperPrior::from_window_with(family, &times[..train], &logv[..train], job.prior_log_std)?;
    let mut current = map_estimate(family, &times[..train], &logv[..train], &prior, job.fit_cfg)?;
    let mut state =
        CholeskyState::build(current.spec, times[..train].to_vec(), logv[..train].to_vec())?;

    let mut records = Vec::with_capacity(n - train);
    let mut inference_failures = 0usize;
    let mut flag_next = current.degenerate;
    for i in train..n {
        let post = state.posterior_at(times[i])?;
        let (forecast, lower, upper) = back_transform(&post, cfg.interval_z);
        records.push(ForecastRecord {
            time: proxy.timestamps[i],
            forecast,
            lower,
            upper,
            realized: proxy.values[i],
            log_mean: post.mean,
            log_variance: post.variance,
            fallback: flag_next,
        });
        flag_next = false;

        state.append(times[i], logv[i])?;
        if state.len() > cfg.window {
            state.drop_oldest()?;
        }
        debug_assert_eq!(state.len(), (i + 1).min(cfg.window));

        if strategy.hyper_update {
            flag_next = roll_hyperparameters(&mut state, &mut current, job)
                .unwrap_or_else(|| {
                    inference_failures += 1;
                    true
                });
        }
    }
    assemble_report(strategy, kind, returns, train, records, inference_failures)
}

/// One warm hyperparameter update on the state's current window. Returns
/// `Some(degenerate)` on success and `None` when the update failed and the
/// previous estimate was kept.
fn roll_hyperparameters(
    state: &mut CholeskyState,
    current: &mut MapResult,
    job: &GpJob,
) -> Option<bool> {
    let family = current.spec.family;
    let updated =
        HyperPrior::from_window_with(family, state.times(), state.values(), job.prior_log_std)
            .and_then(|prior| {
                warm_update(current, state.times(), state.values(), &prior, job.warm_cfg)
            });
    match updated {
        Ok(upd) => {
            let degenerate = upd.degenerate;
            if upd.spec != current.spec {
                state.set_spec(upd.spec).ok()?;
            }
            *current = upd;
            Some(degenerate)
        }
        Err(e) => {
            log::debug!("warm update failed, keeping previous hyperparameters: {e}");
            None
        }
    }
}

/// Detects maxima of a side series as they become confirmable.
///
/// The first side point joins the envelope immediately (it stays the left
/// endpoint of any batch extraction); every later point is confirmed as a
/// maximum — with the same non-strict comparisons as
/// [`crate::returns::extract_envelope`] — once its right neighbour arrives.
/// The newest point is therefore never in the envelope yet.
pub(crate) struct CausalEnvelope {
    /// Value of the side point immediately before `pending`.
    left: Option<f64>,
    /// Newest side point, awaiting its right neighbour.
    pending: Option<(f64, f64)>,
}

impl CausalEnvelope {
    pub(crate) fn new() -> Self {
        CausalEnvelope {
            left: None,
            pending: None,
        }
    }

    /// Feed the next side observation; returns a point that just became a
    /// confirmed envelope member, if any.
    pub(crate) fn observe(&mut self, t: f64, v: f64) -> Option<(f64, f64)> {
        let Some(left) = self.left else {
            self.left = Some(v);
            return Some((t, v));
        };
        match self.pending.replace((t, v)) {
            None => None,
            Some((pt, pv)) => {
                self.left = Some(pv);
                (pv >= left && pv >= v).then_some((pt, pv))
            }
        }
    }
}

/// One side's GP: its causal envelope detector, rolling window, and current
/// hyperparameters.
struct EnvelopeSideModel {
    envelope: CausalEnvelope,
    state: CholeskyState,
    current: MapResult,
}

impl EnvelopeSideModel {
    /// Confirmed envelope points of `(times, values)` fed in order.
    fn collect_training(
        envelope: &mut CausalEnvelope,
        times: &[f64],
        logv: &[f64],
    ) -> Vec<(f64, f64)> {
        times
            .iter()
            .zip(logv)
            .filter_map(|(&t, &v)| envelope.observe(t, v))
            .collect()
    }

    fn fit(
        family: KernelFamily,
        envelope: CausalEnvelope,
        training_points: Vec<(f64, f64)>,
        job: &GpJob,
        side: &str,
    ) -> Result<Self> {
        if training_points.len() < 8 {
            return Err(Error::Estimation(format!(
                "{side} envelope has only {} points after training; at least 8 are needed",
                training_points.len()
            )));
        }
        let start = training_points.len().saturating_sub(job.cfg.window);
        let (times, logv): (Vec<f64>, Vec<f64>) = training_points[start..].iter().copied().unzip();
        let prior = HyperPrior::from_window_with(family, &times, &logv, job.prior_log_std)?;
        let current = map_estimate(family, &times, &logv, &prior, job.fit_cfg)?;
        let state = CholeskyState::build(current.spec, times, logv)?;
        Ok(EnvelopeSideModel {
            envelope,
            state,
            current,
        })
    }

    /// Absorb one side observation; rolls the window and (optionally) warms
    /// the hyperparameters when a new envelope point is confirmed. Returns
    /// whether the next record must be flagged.
    fn observe(
        &mut self,
        t: f64,
        logv: f64,
        hyper_update: bool,
        job: &GpJob,
        inference_failures: &mut usize,
    ) -> Result<bool> {
        let Some((et, ev)) = self.envelope.observe(t, logv) else {
            return Ok(false);
        };
        self.state.append(et, ev)?;
        if self.state.len() > job.cfg.window {
            self.state.drop_oldest()?;
        }
        if !hyper_update {
            return Ok(false);
        }
        match roll_hyperparameters(&mut self.state, &mut self.current, job) {
            Some(degenerate) => Ok(degenerate),
            None => {
                *inference_failures += 1;
                Ok(true)
            }
        }
    }
}

/// GP on the maxima envelope of the absolute-return proxy.
fn run_gp_abs_envelope(
    returns: &ReturnSeries,
    strategy: &Strategy,
    job: &GpJob,
) -> Result<BacktestReport> {
    let cfg = job.cfg;
    let family = strategy.family();
    let proxy = make_proxy(returns, ProxyKind::Abs, Some(job.floor))?;
    let points = to_log_space(&proxy)?;
    let (times, logv): (Vec<f64>, Vec<f64>) = points.into_iter().unzip();
    let n = times.len();
    let train = cfg.training;

    let mut envelope = CausalEnvelope::new();
    let training_points =
        EnvelopeSideModel::collect_training(&mut envelope, &times[..train], &logv[..train]);
    let mut side =
        EnvelopeSideModel::fit(family, envelope, training_points, job, "absolute-return")?;

    let mut records = Vec::with_capacity(n - train);
    let mut inference_failures = 0usize;
    let mut flag_next = side.current.degenerate;
    for i in train..n {
        let post = envelope_forecast_step(&side.state, times[i])?;
        let (forecast, lower, upper) = back_transform(&post, cfg.interval_z);
        records.push(ForecastRecord {
            time: proxy.timestamps[i],
            forecast,
            lower,
            upper,
            realized: proxy.values[i],
            log_mean: post.mean,
            log_variance: post.variance,
            fallback: flag_next,
        });
        flag_next = side.observe(
            times[i],
            logv[i],
            strategy.hyper_update,
            job,
            &mut inference_failures,
        )?;
    }
    assemble_report(strategy, ProxyKind::Abs, returns, train, records, inference_failures)
}

/// Average of GPs on the positive- and negative-return envelopes, evaluated
/// against the absolute-return proxy.
fn run_gp_combined(
    returns: &ReturnSeries,
    strategy: &Strategy,
    job: &GpJob,
) -> Result<BacktestReport> {
    let cfg = job.cfg;
    let floor = job.floor;
    let family = strategy.family();
    let proxy = make_proxy(returns, ProxyKind::Abs, Some(floor))?;
    let n = returns.len();
    let train = cfg.training;
    // Side membership mirrors split_signed: r ≥ 0 goes to the positive side.
    let side_of = |r: f64| r >= 0.0;
    let side_log = |r: f64| r.abs().max(floor).ln();

    let mut pos_env = CausalEnvelope::new();
    let mut neg_env = CausalEnvelope::new();
    let mut pos_training = Vec::new();
    let mut neg_training = Vec::new();
    for i in 0..train {
        let t = returns.timestamps[i] as f64;
        let v = side_log(returns.values[i]);
        let confirmed = if side_of(returns.values[i]) {
            pos_env.observe(t, v)
        } else {
            neg_env.observe(t, v)
        };
        if let Some(p) = confirmed {
            if side_of(returns.values[i]) {
                pos_training.push(p);
            } else {
                neg_training.push(p);
            }
        }
    }
    let mut pos = EnvelopeSideModel::fit(family, pos_env, pos_training, job, "positive")?;
    let mut neg = EnvelopeSideModel::fit(family, neg_env, neg_training, job, "negative")?;

    let mut records = Vec::with_capacity(n - train);
    let mut inference_failures = 0usize;
    let mut flag_next = pos.current.degenerate || neg.current.degenerate;
    for i in train..n {
        let x = returns.timestamps[i] as f64;
        let p_post = envelope_forecast_step(&pos.state, x)?;
        let n_post = envelope_forecast_step(&neg.state, x)?;
        let (pf, plo, phi) = back_transform(&p_post, cfg.interval_z);
        let (nf, nlo, nhi) = back_transform(&n_post, cfg.interval_z);
        let (forecast, side_fallback) = combine_envelopes(Some(pf), Some(nf))?;
        records.push(ForecastRecord {
            time: returns.timestamps[i],
            forecast,
            lower: 0.5 * (plo + nlo),
            upper: 0.5 * (phi + nhi),
            realized: proxy.values[i],
            log_mean: forecast.ln(),
            log_variance: 0.5 * (p_post.variance + n_post.variance),
            fallback: flag_next || side_fallback,
        });
        let model = if side_of(returns.values[i]) { &mut pos } else { &mut neg };
        flag_next = model.observe(
            x,
            side_log(returns.values[i]),
            strategy.hyper_update,
            job,
            &mut inference_failures,
        )?;
    }
    assemble_report(strategy, ProxyKind::Abs, returns, train, records, inference_failures)
}

/// GARCH-family conditional standard deviation against the absolute-return
/// proxy. With `hyper_update` the coefficients are refit on the trailing
/// window every step (a fit failure aborts the run); without it the training
/// fit is held fixed and the variance recursion advances online.
fn run_garch(
    returns: &ReturnSeries,
    strategy: &Strategy,
    cfg: &RollingConfig,
    fit_cfg: &SimplexConfig,
    floor: f64,
) -> Result<BacktestReport> {
    let spec = match strategy.kind {
        StrategyKind::Garch => GarchSpec::vanilla(1, 1),
        StrategyKind::EGarch => GarchSpec::egarch(1, 1),
        StrategyKind::GjrGarch => GarchSpec::gjr(1, 1, 1),
        _ => unreachable!("dispatched on a GARCH kind"),
    };
    let train = cfg.training;
    let n = returns.len();
    let proxy = make_proxy(returns, ProxyKind::Abs, Some(floor))?;
    let mut params = garch::fit(&spec, &returns.values[..train], fit_cfg)?;
    // Per-step refits run thousands of times; a looser tolerance with a
    // generous iteration cap keeps them cheap without spurious
    // non-convergence on short, flat-likelihood windows.
    let refit_cfg = SimplexConfig {
        max_iter: 600,
        f_tol: 1e-5,
        x_tol: 1e-5,
        restarts: 1,
        seed: fit_cfg.seed,
    };

    let mut state = replay_state(&spec, &params, &returns.values[..train])?;
    let mut records = Vec::with_capacity(n - train);
    let mut inference_failures = 0usize;
    for i in train..n {
        let mut stale = false;
        let variance = if strategy.hyper_update {
            let lo = i.saturating_sub(cfg.window);
            // A refit can legitimately stall on a stretch whose likelihood
            // is flat or boundary-seeking; carry the previous parameters
            // forward, mirroring the hyperparameter fallback on the GP side.
            match garch::fit(&spec, &returns.values[lo..i], &refit_cfg) {
                Ok(p) => params = p,
                Err(_) => {
                    inference_failures += 1;
                    stale = true;
                }
            }
            replay_state(&spec, &params, &returns.values[lo..i])?.current_variance()
        } else {
            state.current_variance()
        };
        let h = variance.sqrt();
        records.push(ForecastRecord {
            time: returns.timestamps[i],
            forecast: h,
            lower: h,
            upper: h,
            realized: proxy.values[i],
            log_mean: h.ln(),
            log_variance: 0.0,
            fallback: stale,
        });
        if !strategy.hyper_update {
            state.advance(&spec, &params, returns.values[i])?;
        }
    }
    assemble_report(strategy, ProxyKind::Abs, returns, train, records, inference_failures)
}

/// Run the variance recursion over a return slice from its own pre-sample
/// variance; the resulting state forecasts the step after the slice.
fn replay_state(spec: &GarchSpec, params: &GarchParams, returns: &[f64]) -> Result<GarchState> {
    let presample = returns.iter().map(|r| r * r).sum::<f64>() / returns.len() as f64;
    let mut state = GarchState::new(spec, presample.max(f64::MIN_POSITIVE))?;
    for &r in returns {
        state.advance(spec, params, r)?;
    }
    Ok(state)
}
