//! MAP estimation of kernel hyperparameters.
//!
//! The posterior over log-hyperparameters combines the GP marginal
//! likelihood with an independent Gaussian prior per coordinate. The
//! negative log posterior is minimized by multi-start Nelder-Mead: M
//! restarts drawn uniformly from the prior's ±2σ box for cold estimation,
//! and a single descent seeded at the previous optimum for the warm updates
//! made during rolling forecasts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::gp::{kernel_base, KernelFamily, KernelSpec, PackedLower};
use crate::simplex::{minimize, SimplexOptions};

/// Log-space step used to build each restart's initial simplex.
const INIT_STEP: f64 = 0.5;

/// Default prior standard deviation for every log-hyperparameter.
const PRIOR_LOG_STD: f64 = 1.5;

/// Windows whose values have sample std below this are treated as constant
/// (floored zero-return stretches produce these).
const DEGENERATE_STD: f64 = 1e-14;

/// Independent Gaussian prior over log-hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperPrior {
    means: Vec<f64>,
    stds: Vec<f64>,
}

impl HyperPrior {
    pub fn new(means: Vec<f64>, stds: Vec<f64>) -> Result<Self> {
        if means.len() != stds.len() {
            return Err(Error::invalid(format!(
                "prior mean/std length mismatch: {} vs {}",
                means.len(),
                stds.len()
            )));
        }
        if means.iter().chain(&stds).any(|v| !v.is_finite()) {
            return Err(Error::invalid("prior parameters must be finite"));
        }
        if stds.iter().any(|&s| s <= 0.0) {
            return Err(Error::invalid("prior standard deviations must be positive"));
        }
        Ok(HyperPrior { means, stds })
    }

    /// Data-scaled default prior: means set from window statistics — output
    /// scale at the sample std of y, length scale at a tenth of the window
    /// span, noise at a tenth of the std; for the quasi-periodic kernel the
    /// period starts at a quarter span and the roughness at 1. All stds 1.5.
    pub fn from_window(family: KernelFamily, times: &[f64], values: &[f64]) -> Result<Self> {
        Self::from_window_with(family, times, values, None)
    }

    /// [`HyperPrior::from_window`] with the common prior width replaced by
    /// `log_std` when given.
    pub fn from_window_with(
        family: KernelFamily,
        times: &[f64],
        values: &[f64],
        log_std: Option<f64>,
    ) -> Result<Self> {
        if times.len() < 2 || times.len() != values.len() {
            return Err(Error::invalid(
                "prior construction needs at least two aligned (time, value) pairs",
            ));
        }
        let span = times[times.len() - 1] - times[0];
        if !(span > 0.0) {
            return Err(Error::invalid("window span must be positive"));
        }
        // Floor the std so constant windows still yield a finite (if very
        // diffuse-tailed) prior; estimation handles them separately anyway.
        let std = sample_std(values).max(1e-12);
        let mut means = vec![std.ln(), (span / 10.0).ln(), (0.1 * std).ln()];
        if family == KernelFamily::QuasiPeriodic {
            means.push((span / 4.0).ln());
            means.push(0.0);
        }
        let dim = means.len();
        HyperPrior::new(means, vec![log_std.unwrap_or(PRIOR_LOG_STD); dim])
    }

    pub fn dim(&self) -> usize {
        self.means.len()
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn stds(&self) -> &[f64] {
        &self.stds
    }

    /// Quadratic penalty Σ_k (x_k − μ_k)² / (2 s_k²).
    pub fn penalty(&self, log_params: &[f64]) -> f64 {
        self.means
            .iter()
            .zip(&self.stds)
            .zip(log_params)
            .map(|((&m, &s), &x)| {
                let z = (x - m) / s;
                0.5 * z * z
            })
            .sum()
    }
}

/// Settings for the multi-start Nelder-Mead search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimplexConfig {
    pub max_iter: usize,
    pub f_tol: f64,
    pub x_tol: f64,
    /// Restart count M for cold estimation.
    pub restarts: usize,
    pub seed: u64,
}

impl Default for SimplexConfig {
    fn default() -> Self {
        SimplexConfig {
            max_iter: 500,
            f_tol: 1e-8,
            x_tol: 1e-8,
            restarts: 32,
            seed: 0,
        }
    }
}

impl SimplexConfig {
    fn validate(&self) -> Result<()> {
        if self.max_iter == 0 || self.restarts == 0 {
            return Err(Error::invalid("simplex iteration and restart counts must be ≥ 1"));
        }
        if !(self.f_tol > 0.0 && self.x_tol > 0.0) {
            return Err(Error::invalid("simplex tolerances must be positive"));
        }
        Ok(())
    }

    fn options(&self) -> SimplexOptions {
        SimplexOptions {
            max_iter: self.max_iter,
            f_tol: self.f_tol,
            x_tol: self.x_tol,
        }
    }
}

/// Outcome of a MAP search.
#[derive(Debug, Clone, PartialEq)]
pub struct MapResult {
    pub spec: KernelSpec,
    /// Achieved negative log posterior.
    pub value: f64,
    /// Iterations spent by the winning descent.
    pub iterations: usize,
    /// Restart index that produced the winner (0 for warm updates).
    pub restart: usize,
    /// True when the window was constant and the prior mean was returned
    /// without a search.
    pub degenerate: bool,
}

/// Negative log posterior of log-hyperparameters on a window:
/// neg_log_marginal + Gaussian prior penalty. Returns `f64::INFINITY` when
/// the covariance cannot be factorized even with jitter, so the optimizer
/// treats that point as rejected.
pub fn neg_log_posterior(
    spec: &KernelSpec,
    times: &[f64],
    values: &[f64],
    prior: &HyperPrior,
) -> f64 {
    let objective = WindowObjective::new(spec.family, times, values, prior);
    objective.eval(&spec.log_params())
}

/// Cold MAP estimation: M Nelder-Mead descents from uniform random starts
/// in the prior's ±2σ log-space box, keeping the lowest negative log
/// posterior. Restart k's start point depends only on the seed and k, so a
/// larger M extends (never reshuffles) the restart ladder.
pub fn map_estimate(
    family: KernelFamily,
    times: &[f64],
    values: &[f64],
    prior: &HyperPrior,
    cfg: &SimplexConfig,
) -> Result<MapResult> {
    cfg.validate()?;
    if times.len() < 8 {
        return Err(Error::invalid(format!(
            "MAP estimation needs a window of at least 8 points, got {}",
            times.len()
        )));
    }
    check_dim(family, prior)?;
    if sample_std(values) < DEGENERATE_STD {
        return degenerate_result(family, times, values, prior);
    }

    let objective = WindowObjective::new(family, times, values, prior);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let dim = prior.dim();
    let mut best: Option<MapResult> = None;
    for restart in 0..cfg.restarts {
        let start: Vec<f64> = (0..dim)
            .map(|k| {
                let half = 2.0 * prior.stds[k];
                rng.gen_range(prior.means[k] - half..prior.means[k] + half)
            })
            .collect();
        let out = minimize(&mut |x| objective.eval(x), &start, INIT_STEP, &cfg.options());
        if !out.value.is_finite() {
            continue;
        }
        if cfg!(debug_assertions) {
            // The simplex keeps its best vertex, so the descent can never
            // end above its own starting point.
            let start_value = objective.eval(&start);
            debug_assert!(out.value <= start_value + 1e-12 || !start_value.is_finite());
        }
        if best.as_ref().map_or(true, |b| out.value < b.value) {
            best = Some(MapResult {
                spec: KernelSpec::from_log_params(family, &out.x)?,
                value: out.value,
                iterations: out.iterations,
                restart,
                degenerate: false,
            });
        }
    }
    best.ok_or_else(|| {
        Error::Estimation(format!(
            "all {} restarts rejected for {} kernel on window of {}",
            cfg.restarts,
            family.name(),
            times.len()
        ))
    })
}

/// Warm re-estimation during rolling forecasts: one descent seeded at the
/// previous optimum, keeping whichever of {previous point, descended point}
/// scores lower on the new window.
pub fn warm_update(
    prev: &MapResult,
    times: &[f64],
    values: &[f64],
    prior: &HyperPrior,
    cfg: &SimplexConfig,
) -> Result<MapResult> {
    cfg.validate()?;
    check_dim(prev.spec.family, prior)?;
    if sample_std(values) < DEGENERATE_STD {
        return degenerate_result(prev.spec.family, times, values, prior);
    }
    let objective = WindowObjective::new(prev.spec.family, times, values, prior);
    let start = prev.spec.log_params();
    let prev_value = objective.eval(&start);
    let out = minimize(&mut |x| objective.eval(x), &start, INIT_STEP, &cfg.options());
    if out.value.is_finite() && out.value < prev_value {
        Ok(MapResult {
            spec: KernelSpec::from_log_params(prev.spec.family, &out.x)?,
            value: out.value,
            iterations: out.iterations,
            restart: 0,
            degenerate: false,
        })
    } else if prev_value.is_finite() {
        Ok(MapResult {
            spec: prev.spec,
            value: prev_value,
            iterations: out.iterations,
            restart: 0,
            degenerate: false,
        })
    } else {
        Err(Error::Estimation(
            "warm update rejected both the previous optimum and its descent".into(),
        ))
    }
}

fn check_dim(family: KernelFamily, prior: &HyperPrior) -> Result<()> {
    if prior.dim() != family.param_count() {
        return Err(Error::invalid(format!(
            "prior dimension {} does not match {} kernel ({} hyperparameters)",
            prior.dim(),
            family.name(),
            family.param_count()
        )));
    }
    Ok(())
}

/// Constant windows carry no scale information; return the prior mean with
/// a flag instead of failing the whole run.
fn degenerate_result(
    family: KernelFamily,
    times: &[f64],
    values: &[f64],
    prior: &HyperPrior,
) -> Result<MapResult> {
    log::warn!(
        "window of {} is constant; hyperparameters fall back to the prior mean",
        values.len()
    );
    let spec = KernelSpec::from_log_params(family, prior.means())?;
    Ok(MapResult {
        value: neg_log_posterior(&spec, times, values, prior),
        spec,
        iterations: 0,
        restart: 0,
        degenerate: true,
    })
}

fn sample_std(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    var.sqrt()
}

/// The negative-log-posterior objective with pairwise distances, centred
/// values, and constants hoisted out of the per-evaluation loop.
struct WindowObjective<'a> {
    family: KernelFamily,
    n: usize,
    /// Strict lower triangle of pairwise |t_i − t_j|, row-major.
    dists: Vec<f64>,
    /// Values minus their sample mean.
    centred: Vec<f64>,
    prior: &'a HyperPrior,
    norm_const: f64,
}

impl<'a> WindowObjective<'a> {
    fn new(family: KernelFamily, times: &[f64], values: &[f64], prior: &'a HyperPrior) -> Self {
        let n = times.len();
        debug_assert_eq!(n, values.len());
        let mut dists = Vec::with_capacity(n * (n - 1) / 2);
        for i in 0..n {
            for j in 0..i {
                dists.push((times[i] - times[j]).abs());
            }
        }
        let mean = if n == 0 {
            0.0
        } else {
            values.iter().sum::<f64>() / n as f64
        };
        WindowObjective {
            family,
            n,
            dists,
            centred: values.iter().map(|v| v - mean).collect(),
            prior,
            norm_const: 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln(),
        }
    }

    fn eval(&self, log_params: &[f64]) -> f64 {
        let spec = match KernelSpec::from_log_params(self.family, log_params) {
            Ok(s) => s,
            Err(_) => return f64::INFINITY,
        };
        let diag = kernel_base(&spec, 0.0) + spec.noise_variance();
        let mut packed = Vec::with_capacity(self.n * (self.n + 1) / 2);
        let mut k = 0;
        for i in 0..self.n {
            for _ in 0..i {
                packed.push(kernel_base(&spec, self.dists[k]));
                k += 1;
            }
            packed.push(diag);
        }
        let factor = match PackedLower::factorize(packed, self.n) {
            Ok(f) => f,
            Err(_) => return f64::INFINITY,
        };
        let mut z = self.centred.clone();
        factor.solve_lower(&mut z);
        let quad: f64 = z.iter().map(|v| v * v).sum();
        let nlm = 0.5 * quad + factor.sum_log_diag() + self.norm_const;
        nlm + self.prior.penalty(log_params)
    }
}
