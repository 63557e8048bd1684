//! Synthetic data generation and the hyperparameter-recovery experiment.
//!
//! Three generators cover the validation needs: draws from a GP with known
//! hyperparameters (recovery and coverage oracles), GARCH-simulated return
//! paths (baseline refitting oracles), and a sinusoidal-volatility process
//! whose true σ_t is known in closed form (forecast-quality oracles).
//! Everything is deterministic given its seed.

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::garch::{GarchParams, GarchSpec, GarchState, GarchVariant};
use crate::gp::{latent_covariance_factor, CholeskyState, KernelFamily, KernelSpec, PackedLower};
use crate::inference::{map_estimate, HyperPrior, SimplexConfig};
use crate::returns::{PriceSeries, ReturnFlavor, ReturnSeries};

/// Steps discarded before a simulated GARCH path is recorded.
const BURN_IN: usize = 500;

/// One synthetic-series request, as configured from the CLI.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub generator: Generator,
    pub n: usize,
    pub seed: u64,
}

/// The available generators.
#[derive(Debug, Clone, PartialEq)]
pub enum Generator {
    /// Price level whose log follows a GP draw (noise included).
    GpDraw(KernelSpec),
    /// Prices compounded from GARCH-simulated log returns.
    GarchSim(GarchSpec, GarchParams),
    /// Prices compounded from returns r_t ~ N(0, σ_t²) with
    /// σ_t = base + amplitude·sin(2πt/period).
    SinVol {
        amplitude: f64,
        period: f64,
        base: f64,
    },
}

/// Run a generator to a price series (the backtest input format).
pub fn generate(spec: &SynthSpec) -> Result<PriceSeries> {
    if spec.n < 2 {
        return Err(Error::invalid("synthetic series need n ≥ 2"));
    }
    match &spec.generator {
        Generator::GpDraw(kernel) => {
            let times: Vec<f64> = (0..spec.n).map(|i| i as f64).collect();
            let y = sample_gp(kernel, &times, true, spec.seed)?;
            let timestamps: Vec<i64> = (0..spec.n as i64).collect();
            PriceSeries::new(timestamps, y.iter().map(|v| v.exp()).collect())
        }
        Generator::GarchSim(garch, params) => {
            let returns = simulate_garch(garch, params, spec.n - 1, spec.seed)?;
            Ok(returns_to_prices(&returns, 100.0))
        }
        Generator::SinVol {
            amplitude,
            period,
            base,
        } => {
            let (returns, _) = simulate_sinvol(*amplitude, *period, *base, spec.n - 1, spec.seed)?;
            Ok(returns_to_prices(&returns, 100.0))
        }
    }
}

/// Reusable sampler for repeated draws over a fixed time grid: the latent
/// covariance is factored once and shared.
pub struct GpSampler {
    noise: f64,
    factor: PackedLower,
    n: usize,
}

impl GpSampler {
    pub fn new(spec: &KernelSpec, times: &[f64]) -> Result<Self> {
        Ok(GpSampler {
            noise: spec.noise(),
            factor: latent_covariance_factor(spec, times)?,
            n: times.len(),
        })
    }

    /// One draw: the latent function L·z and the observation y = f + σ_n·ε.
    pub fn draw(&self, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
        let z: Vec<f64> = (0..self.n).map(|_| rng.sample(StandardNormal)).collect();
        let latent = self.factor.mul_lower(&z);
        let observed = latent
            .iter()
            .map(|f| f + self.noise * rng.sample::<f64, _>(StandardNormal))
            .collect();
        (latent, observed)
    }
}

/// One draw from the GP spec over the given times, with or without the
/// observation noise added.
pub fn sample_gp(spec: &KernelSpec, times: &[f64], with_noise: bool, seed: u64) -> Result<Vec<f64>> {
    let sampler = GpSampler::new(spec, times)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (latent, observed) = sampler.draw(&mut rng);
    Ok(if with_noise { observed } else { latent })
}

/// Generate a GARCH return path: iterate the variance recursion and draw
/// r_t ~ N(0, σ_t²), discarding [`BURN_IN`] warm-up steps.
pub fn simulate_garch(
    spec: &GarchSpec,
    params: &GarchParams,
    n: usize,
    seed: u64,
) -> Result<ReturnSeries> {
    params.validate(spec)?;
    if n == 0 {
        return Err(Error::invalid("cannot simulate an empty return series"));
    }
    let start_variance = match spec.variant {
        GarchVariant::Vanilla | GarchVariant::Gjr => {
            params.alpha0 / (1.0 - params.persistence())
        }
        GarchVariant::EGarch => {
            let b: f64 = params.beta.iter().sum();
            (params.alpha0 / (1.0 - b)).exp()
        }
    };
    if !(start_variance > 0.0 && start_variance.is_finite()) {
        return Err(Error::invalid(format!(
            "degenerate long-run variance {start_variance}"
        )));
    }
    let mut state = GarchState::new(spec, start_variance)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(n);
    for t in 0..BURN_IN + n {
        let sigma = state.current_variance().sqrt();
        let r = sigma * rng.sample::<f64, _>(StandardNormal);
        state.advance(spec, params, r)?;
        if t >= BURN_IN {
            values.push(r);
        }
    }
    Ok(ReturnSeries {
        timestamps: (1..=n as i64).collect(),
        values,
        flavor: ReturnFlavor::Log,
    })
}

/// Generate returns under a deterministic sinusoidal volatility
/// σ_t = base + amplitude·sin(2πt/period); returns the series together with
/// the true σ_t sequence (the forecast target oracles compare against).
pub fn simulate_sinvol(
    amplitude: f64,
    period: f64,
    base: f64,
    n: usize,
    seed: u64,
) -> Result<(ReturnSeries, Vec<f64>)> {
    if !(base > 0.0 && amplitude >= 0.0 && base > amplitude) {
        return Err(Error::invalid(format!(
            "sinusoidal volatility needs base > amplitude ≥ 0, got base {base}, amplitude {amplitude}"
        )));
    }
    if !(period > 0.0) {
        return Err(Error::invalid("volatility period must be positive"));
    }
    if n == 0 {
        return Err(Error::invalid("cannot simulate an empty return series"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(n);
    let mut sigmas = Vec::with_capacity(n);
    for t in 1..=n {
        let sigma = base + amplitude * (2.0 * std::f64::consts::PI * t as f64 / period).sin();
        sigmas.push(sigma);
        values.push(sigma * rng.sample::<f64, _>(StandardNormal));
    }
    Ok((
        ReturnSeries {
            timestamps: (1..=n as i64).collect(),
            values,
            flavor: ReturnFlavor::Log,
        },
        sigmas,
    ))
}

/// Compound a return series into a price path starting at `p0`.
pub fn returns_to_prices(returns: &ReturnSeries, p0: f64) -> PriceSeries {
    assert!(p0 > 0.0, "starting price must be positive");
    let mut timestamps = Vec::with_capacity(returns.len() + 1);
    timestamps.push(returns.timestamps.first().map_or(0, |t| t - 1));
    timestamps.extend(&returns.timestamps);
    let mut prices = Vec::with_capacity(returns.len() + 1);
    let mut level = p0;
    prices.push(level);
    for &r in &returns.values {
        level = match returns.flavor {
            ReturnFlavor::Log => level * r.exp(),
            ReturnFlavor::Arithmetic => level * (1.0 + r),
        };
        prices.push(level);
    }
    PriceSeries::new(timestamps, prices).expect("compounded prices are valid by construction")
}

/// Aggregate outcome of the recovery experiment for one subsample fraction.
#[derive(Debug, Clone, Serialize)]
pub struct FractionSummary {
    pub fraction: f64,
    /// Posterior-mean RMSE against the latent function, one per dataset
    /// whose estimation succeeded.
    pub rmses: Vec<f64>,
    pub median_rmse: f64,
    pub mean_rmse: f64,
    /// Coordinate-wise median of the recovered log-hyperparameters.
    pub median_recovered_log_params: Vec<f64>,
    pub failures: usize,
}

/// Full recovery-experiment report.
#[derive(Debug, Clone, Serialize)]
pub struct RecoveryReport {
    pub true_spec: KernelSpec,
    pub n_sets: usize,
    pub n_points: usize,
    pub fractions: Vec<FractionSummary>,
}

/// The consistency experiment: draw `n_sets` datasets from a known GP,
/// subsample each at every fraction, re-estimate hyperparameters by MAP
/// on the subsample, and measure the refit posterior mean against the
/// latent function over the full grid. Datasets run in parallel; results
/// are merged in dataset order so the report is deterministic.
pub fn recovery_experiment(
    spec: &KernelSpec,
    n_sets: usize,
    n_points: usize,
    fractions: &[f64],
    cfg: &SimplexConfig,
    seed: u64,
) -> Result<RecoveryReport> {
    if n_sets == 0 || n_points < 16 {
        return Err(Error::invalid(
            "recovery experiment needs n_sets ≥ 1 and n_points ≥ 16",
        ));
    }
    if fractions.is_empty() {
        return Err(Error::invalid("at least one subsample fraction is required"));
    }
    for &f in fractions {
        if !(f > 0.0 && f <= 1.0) {
            return Err(Error::invalid(format!("fraction {f} outside (0, 1]")));
        }
        if (f * n_points as f64).round() < 8.0 {
            return Err(Error::invalid(format!(
                "fraction {f} of {n_points} points leaves too few for estimation"
            )));
        }
    }
    let times: Vec<f64> = (0..n_points).map(|i| i as f64).collect();
    let sampler = GpSampler::new(spec, &times)?;

    // One job per dataset, keyed by index for a schedule-independent merge.
    let per_dataset: Vec<Vec<Option<(f64, Vec<f64>)>>> = (0..n_sets)
        .into_par_iter()
        .map(|d| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(d as u64 + 1);
            let (latent, observed) = sampler.draw(&mut rng);
            fractions
                .iter()
                .enumerate()
                .map(|(fi, &fraction)| {
                    let m = ((fraction * n_points as f64).round() as usize).min(n_points);
                    let mut picked = sample_indices(&mut rng, n_points, m).into_vec();
                    picked.sort_unstable();
                    let sub_times: Vec<f64> = picked.iter().map(|&i| times[i]).collect();
                    let sub_values: Vec<f64> = picked.iter().map(|&i| observed[i]).collect();
                    let job_cfg = SimplexConfig {
                        seed: seed ^ ((d * fractions.len() + fi) as u64).wrapping_mul(0x9e37),
                        ..*cfg
                    };
                    // An even signal/noise split keeps the search centered
                    // the same way at every fraction, so rung differences
                    // reflect likelihood precision rather than how far the
                    // start happened to sit from the truth.
                    let prior = equal_split_prior(spec.family, &sub_times, &sub_values).ok()?;
                    let fit = map_estimate(spec.family, &sub_times, &sub_values, &prior, &job_cfg)
                        .ok()?;
                    let state = CholeskyState::build(fit.spec, sub_times, sub_values).ok()?;
                    let means = state.posterior_means(&times).ok()?;
                    let rmse = (means
                        .iter()
                        .zip(&latent)
                        .map(|(m, f)| (m - f) * (m - f))
                        .sum::<f64>()
                        / n_points as f64)
                        .sqrt();
                    Some((rmse, fit.spec.log_params()))
                })
                .collect()
        })
        .collect();

    let fractions_out = fractions
        .iter()
        .enumerate()
        .map(|(fi, &fraction)| {
            let mut rmses = Vec::new();
            let mut param_columns: Vec<Vec<f64>> = vec![Vec::new(); spec.family.param_count()];
            let mut failures = 0usize;
            for dataset in &per_dataset {
                match &dataset[fi] {
                    Some((rmse, params)) => {
                        rmses.push(*rmse);
                        for (col, &v) in param_columns.iter_mut().zip(params) {
                            col.push(v);
                        }
                    }
                    None => failures += 1,
                }
            }
            if rmses.is_empty() {
                return Err(Error::Estimation(format!(
                    "every dataset failed at fraction {fraction}"
                )));
            }
            Ok(FractionSummary {
                fraction,
                median_rmse: median(&mut rmses.clone()),
                mean_rmse: rmses.iter().sum::<f64>() / rmses.len() as f64,
                median_recovered_log_params: param_columns
                    .iter_mut()
                    .map(|col| median(col))
                    .collect(),
                rmses,
                failures,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(RecoveryReport {
        true_spec: *spec,
        n_sets,
        n_points,
        fractions: fractions_out,
    })
}

fn median(values: &mut [f64]) -> f64 {
    assert!(!values.is_empty());
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Log-space prior centered on an even split of the window variance
/// between signal and noise, with the usual span-derived length scale.
/// The width matches the window-derived prior used by the forecasting
/// pipeline.
fn equal_split_prior(family: KernelFamily, times: &[f64], values: &[f64]) -> Result<HyperPrior> {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var =
        values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0).max(1.0);
    let half = (0.5 * var).max(1e-24);
    let span = times[times.len() - 1] - times[0];
    let mut means = vec![0.5 * half.ln(), (span / 10.0).ln(), 0.5 * half.ln()];
    if family == KernelFamily::QuasiPeriodic {
        means.push((span / 4.0).ln());
        means.push(0.0);
    }
    let dim = means.len();
    HyperPrior::new(means, vec![1.5; dim])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::KernelFamily;

    #[test]
    fn gp_draws_are_deterministic_per_seed() {
        let spec = KernelSpec::squared_exponential(1.0, 4.0, 0.2);
        let times: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let a = sample_gp(&spec, &times, true, 7).unwrap();
        let b = sample_gp(&spec, &times, true, 7).unwrap();
        let c = sample_gp(&spec, &times, true, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn vanishing_output_scale_collapses_draws_to_zero() {
        let spec = KernelSpec::squared_exponential(1e-8, 4.0, 0.0);
        let times: Vec<f64> = (0..30).map(|i| i as f64).collect();
        let draw = sample_gp(&spec, &times, false, 3).unwrap();
        assert!(draw.iter().all(|v| v.abs() < 1e-6));
    }

    #[test]
    fn single_point_draw_variance_matches_spec() {
        let spec = KernelSpec::squared_exponential(1.5, 3.0, 0.5);
        let times = [0.0];
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let sampler = GpSampler::new(&spec, &times).unwrap();
        let mut sq = 0.0;
        let reps = 1000;
        for _ in 0..reps {
            let (_, observed) = sampler.draw(&mut rng);
            sq += observed[0] * observed[0];
        }
        let want = 1.5f64.powi(2) + 0.5f64.powi(2);
        let got = sq / reps as f64;
        assert!(
            (got - want).abs() < 0.1 * want,
            "draw variance {got:.3} vs σ_h² + σ_n² = {want:.3}"
        );
    }

    #[test]
    fn two_point_draw_covariance_matches_kernel() {
        let spec = KernelSpec::matern32(1.0, 2.0, 0.1);
        let times = [0.0, 1.5];
        let sampler = GpSampler::new(&spec, &times).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let reps = 2000;
        let mut cov = 0.0;
        for _ in 0..reps {
            let (latent, _) = sampler.draw(&mut rng);
            cov += latent[0] * latent[1];
        }
        cov /= reps as f64;
        let want = crate::gp::kernel_eval(&spec, 0.0, 1.5);
        assert!(
            (cov - want).abs() < 0.15 * want.abs().max(0.1),
            "empirical covariance {cov:.4} vs kernel {want:.4}"
        );
    }

    #[test]
    fn garch_simulation_without_memory_is_iid() {
        let spec = GarchSpec::vanilla(1, 1);
        let params = GarchParams::vanilla(0.7, vec![0.0], vec![0.0]);
        let r = simulate_garch(&spec, &params, 10_000, 5).unwrap();
        let var = r.values.iter().map(|v| v * v).sum::<f64>() / r.values.len() as f64;
        assert!((var - 0.7).abs() < 0.05 * 0.7, "sample variance {var:.4}");
    }

    #[test]
    fn garch_long_run_variance_matches_closed_form() {
        let spec = GarchSpec::vanilla(1, 1);
        let params = GarchParams::vanilla(0.05, vec![0.10], vec![0.85]);
        let r = simulate_garch(&spec, &params, 100_000, 17).unwrap();
        let var = r.values.iter().map(|v| v * v).sum::<f64>() / r.values.len() as f64;
        let want = params.unconditional_variance();
        assert!(
            (var - want).abs() < 0.1 * want,
            "sample variance {var:.4} vs α₀/(1−α−β) = {want:.4}"
        );
    }

    #[test]
    fn persistent_garch_is_heavy_tailed() {
        let spec = GarchSpec::vanilla(1, 1);
        let params = GarchParams::vanilla(0.05, vec![0.10], vec![0.85]);
        let r = simulate_garch(&spec, &params, 50_000, 23).unwrap();
        let n = r.values.len() as f64;
        let m2 = r.values.iter().map(|v| v * v).sum::<f64>() / n;
        let m4 = r.values.iter().map(|v| v.powi(4)).sum::<f64>() / n;
        let kurtosis = m4 / (m2 * m2);
        assert!(kurtosis > 3.0, "kurtosis {kurtosis:.2} not heavy-tailed");
    }

    #[test]
    fn nonstationary_simulation_is_rejected() {
        let spec = GarchSpec::vanilla(1, 1);
        let params = GarchParams::vanilla(0.05, vec![0.3], vec![0.75]);
        assert!(simulate_garch(&spec, &params, 100, 1).is_err());
    }

    #[test]
    fn sinvol_sigma_is_positive_and_periodic() {
        let (r, sigma) = simulate_sinvol(0.5, 100.0, 1.0, 400, 9).unwrap();
        assert_eq!(r.len(), 400);
        assert!(sigma.iter().all(|s| *s > 0.0));
        // One full period apart, the true volatility repeats.
        assert!((sigma[0] - sigma[100]).abs() < 1e-12);
        assert!(simulate_sinvol(1.0, 100.0, 0.8, 50, 1).is_err());
    }

    #[test]
    fn price_compounding_round_trips_log_returns() {
        let returns = ReturnSeries {
            timestamps: vec![1, 2, 3, 4],
            values: vec![0.02, -0.01, 0.005, -0.03],
            flavor: ReturnFlavor::Log,
        };
        let prices = returns_to_prices(&returns, 100.0);
        let back = crate::returns::log_returns(&prices).unwrap();
        assert_eq!(back.timestamps, returns.timestamps);
        for (a, b) in back.values.iter().zip(&returns.values) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn generate_emits_positive_prices_for_every_generator() {
        for generator in [
            Generator::GpDraw(KernelSpec::squared_exponential(0.5, 10.0, 0.05)),
            Generator::GarchSim(
                GarchSpec::vanilla(1, 1),
                GarchParams::vanilla(1e-4, vec![0.1], vec![0.85]),
            ),
            Generator::SinVol {
                amplitude: 0.005,
                period: 200.0,
                base: 0.01,
            },
        ] {
            let prices = generate(&SynthSpec {
                generator,
                n: 300,
                seed: 4,
            })
            .unwrap();
            assert_eq!(prices.prices.len(), 300);
            assert!(prices.prices.iter().all(|p| *p > 0.0));
        }
    }

    #[test]
    fn full_data_refit_with_true_start_reaches_noise_floor() {
        // With the true hyperparameters and every point observed, the
        // posterior mean has to sit within the noise level of the latent
        // function.
        let spec = KernelSpec::squared_exponential(1.0, 5.0, 0.1);
        let times: Vec<f64> = (0..200).map(|i| i as f64).collect();
        let sampler = GpSampler::new(&spec, &times).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let (latent, observed) = sampler.draw(&mut rng);
        let state = CholeskyState::build(spec, times.clone(), observed).unwrap();
        let means = state.posterior_means(&times).unwrap();
        let rmse = (means
            .iter()
            .zip(&latent)
            .map(|(m, f)| (m - f) * (m - f))
            .sum::<f64>()
            / times.len() as f64)
            .sqrt();
        assert!(rmse < 0.1, "posterior-mean RMSE {rmse:.4} above the noise floor");
    }

    #[test]
    fn recovery_experiment_smoke() {
        let spec = KernelSpec::squared_exponential(1.0, 5.0, 0.1);
        let cfg = SimplexConfig {
            restarts: 1,
            max_iter: 40,
            f_tol: 1e-6,
            ..SimplexConfig::default()
        };
        let report =
            recovery_experiment(&spec, 3, 120, &[0.5, 0.95], &cfg, 77).unwrap();
        assert_eq!(report.fractions.len(), 2);
        for f in &report.fractions {
            assert!(f.median_rmse.is_finite() && f.median_rmse >= 0.0);
            assert_eq!(f.rmses.len() + f.failures, 3);
            assert_eq!(
                f.median_recovered_log_params.len(),
                KernelFamily::SquaredExponential.param_count()
            );
        }
        // Deterministic under the same seed despite the parallel dispatch.
        let again = recovery_experiment(&spec, 3, 120, &[0.5, 0.95], &cfg, 77).unwrap();
        assert_eq!(report.fractions[0].rmses, again.fractions[0].rmses);
    }
}
