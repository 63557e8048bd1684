//! Gaussian-process regression over a rolling window of scalar observations.
//!
//! [`CholeskyState`] owns the window of (time, y) pairs together with the
//! lower-triangular factor of V = K + σ_n²·I and keeps the factor current
//! under three incremental edits: append a new observation, drop the oldest,
//! drop the newest. Posterior queries and the negative log marginal
//! likelihood are all computed through triangular solves on that factor.
//!
//! The prior mean is the window's sample mean of y, recomputed on every
//! query, so posteriors revert to the current window level far from data.

mod kernel;
mod linalg;

pub use kernel::{kernel_eval, KernelFamily, KernelSpec};
pub(crate) use kernel::{effective_diag, kernel_base};
pub(crate) use linalg::{dot, PackedLower};

use crate::error::{Error, Result};

/// Jitter ladder: multiples of the mean diagonal tried when a factorization
/// hits a non-positive pivot, escalating tenfold per step.
const JITTER_LADDER: [f64; 7] = [1e-10, 1e-9, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4];

/// Posterior of the latent function at a single query time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Posterior {
    pub mean: f64,
    pub variance: f64,
    /// True when the query time lies at or before the newest window point,
    /// i.e. the GP interpolated instead of extrapolating forward.
    pub interpolated: bool,
}

/// A window of observations with the Cholesky factor of its covariance.
#[derive(Debug, Clone)]
pub struct CholeskyState {
    spec: KernelSpec,
    times: Vec<f64>,
    values: Vec<f64>,
    factor: PackedLower,
    /// Diagonal inflation actually applied (0 when the plain matrix factors).
    jitter: f64,
    /// Full refactorizations forced by incremental-edit failures.
    rebuilds: usize,
}

impl CholeskyState {
    /// Factor the covariance of the given window. Times must be strictly
    /// increasing and aligned with `values`.
    pub fn build(spec: KernelSpec, times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::invalid(format!(
                "time/value length mismatch: {} vs {}",
                times.len(),
                values.len()
            )));
        }
        for w in times.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::invalid(format!(
                    "window times not strictly increasing at {} -> {}",
                    w[0], w[1]
                )));
            }
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("window values must be finite"));
        }
        let (factor, jitter) = factor_with_ladder(&spec, &times)?;
        Ok(CholeskyState {
            spec,
            times,
            values,
            factor,
            jitter,
            rebuilds: 0,
        })
    }

    /// An empty window ready to receive appends.
    pub fn new_empty(spec: KernelSpec) -> Self {
        CholeskyState {
            spec,
            times: Vec::new(),
            values: Vec::new(),
            factor: PackedLower::empty(),
            jitter: 0.0,
            rebuilds: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Count of incremental-edit failures that forced a full refactorization.
    pub fn rebuilds(&self) -> usize {
        self.rebuilds
    }

    /// Sample mean of the window's y values — the GP's constant prior mean.
    pub fn window_mean(&self) -> f64 {
        if self.values.is_empty() {
            0.0
        } else {
            self.values.iter().sum::<f64>() / self.values.len() as f64
        }
    }

    /// Append an observation at a time strictly after the newest window
    /// point. Extends the factor in O(n²); falls back to a full (re-jittered)
    /// factorization if the incremental pivot fails.
    pub fn append(&mut self, time: f64, value: f64) -> Result<()> {
        if let Some(&last) = self.times.last() {
            if !(time > last) {
                return Err(Error::invalid(format!(
                    "append time {time} not after newest window time {last}"
                )));
            }
        }
        if !(time.is_finite() && value.is_finite()) {
            return Err(Error::invalid("appended observation must be finite"));
        }
        let col: Vec<f64> = self
            .times
            .iter()
            .map(|&t| kernel_eval(&self.spec, time, t))
            .collect();
        let diag = effective_diag(&self.spec) + self.jitter;
        match self.factor.append_row(&col, diag) {
            Ok(()) => {
                self.times.push(time);
                self.values.push(value);
                Ok(())
            }
            Err(_) => {
                self.times.push(time);
                self.values.push(value);
                self.refactor()
            }
        }
    }

    /// Drop the oldest observation, restoring the factor of the trailing
    /// window via a rank-one update. Falls back to a full refactorization if
    /// the update degenerates numerically.
    pub fn drop_oldest(&mut self) -> Result<()> {
        if self.is_empty() {
            return Err(Error::invalid("cannot drop from an empty window"));
        }
        self.times.remove(0);
        self.values.remove(0);
        match self.factor.drop_first() {
            Ok(()) => Ok(()),
            Err(_) => self.refactor(),
        }
    }

    /// Drop the newest observation; the factor of a leading principal
    /// submatrix is its leading block, so this is exact and O(1).
    pub fn drop_newest(&mut self) -> Result<()> {
        if self.is_empty() {
            return Err(Error::invalid("cannot drop from an empty window"));
        }
        self.times.pop();
        self.values.pop();
        self.factor.pop_last();
        Ok(())
    }

    /// Posterior mean and variance of the latent function at `x_star`:
    /// m★ = μ + k★ᵀ V⁻¹ (y − μ) and σ★² = k(x★,x★) − k★ᵀ V⁻¹ k★, with μ the
    /// window sample mean. Queries at or before the newest window point are
    /// permitted but flagged as interpolation.
    pub fn posterior_at(&self, x_star: f64) -> Result<Posterior> {
        if self.is_empty() {
            return Err(Error::invalid("posterior query on an empty window"));
        }
        if !x_star.is_finite() {
            return Err(Error::invalid("query time must be finite"));
        }
        let n = self.len();
        let mu = self.window_mean();
        let mut z: Vec<f64> = self.values.iter().map(|y| y - mu).collect();
        self.factor.solve_lower(&mut z);
        let mut u: Vec<f64> = self
            .times
            .iter()
            .map(|&t| kernel_eval(&self.spec, x_star, t))
            .collect();
        self.factor.solve_lower(&mut u);
        let mean = mu + dot(&u, &z);
        let prior_var = kernel_eval(&self.spec, x_star, x_star);
        let variance = (prior_var - dot(&u, &u)).max(0.0);
        if !(mean.is_finite() && variance.is_finite()) {
            return Err(Error::numerical(format!(
                "posterior at {x_star} is not finite (n = {n}, jitter = {})",
                self.jitter
            )));
        }
        Ok(Posterior {
            mean,
            variance,
            interpolated: x_star <= *self.times.last().expect("non-empty"),
        })
    }

    /// Posterior means at many query times, sharing one solve of
    /// α = V⁻¹ (y − μ) across all queries.
    pub fn posterior_means(&self, xs: &[f64]) -> Result<Vec<f64>> {
        if self.is_empty() {
            return Err(Error::invalid("posterior query on an empty window"));
        }
        let mu = self.window_mean();
        let mut alpha: Vec<f64> = self.values.iter().map(|y| y - mu).collect();
        self.factor.solve_lower(&mut alpha);
        self.factor.solve_lower_transpose(&mut alpha);
        let mut k_star = vec![0.0; self.len()];
        Ok(xs
            .iter()
            .map(|&x| {
                for (k, &t) in k_star.iter_mut().zip(&self.times) {
                    *k = kernel_eval(&self.spec, x, t);
                }
                mu + dot(&k_star, &alpha)
            })
            .collect())
    }

    /// Negative log marginal likelihood of the window under its kernel:
    /// ½ (y−μ)ᵀ V⁻¹ (y−μ) + Σᵢ ln Lᵢᵢ + (n/2)·ln 2π.
    pub fn neg_log_marginal(&self) -> Result<f64> {
        if self.is_empty() {
            return Err(Error::invalid("marginal likelihood of an empty window"));
        }
        let n = self.len() as f64;
        let mu = self.window_mean();
        let mut z: Vec<f64> = self.values.iter().map(|y| y - mu).collect();
        self.factor.solve_lower(&mut z);
        let quad = dot(&z, &z);
        let value = 0.5 * quad + self.factor.sum_log_diag() + 0.5 * n * (2.0 * std::f64::consts::PI).ln();
        if value.is_finite() {
            Ok(value)
        } else {
            Err(Error::numerical("negative log marginal likelihood is not finite"))
        }
    }

    /// Replace the kernel and refactor the current window under it.
    pub fn set_spec(&mut self, spec: KernelSpec) -> Result<()> {
        self.spec = spec;
        let (factor, jitter) = factor_with_ladder(&self.spec, &self.times)?;
        self.factor = factor;
        self.jitter = jitter;
        Ok(())
    }

    /// Elementwise distance between this factor and a fresh factorization of
    /// the same window (diagnostic for incremental drift).
    pub fn factor_drift(&self) -> Result<f64> {
        let fresh = CholeskyState::build(self.spec, self.times.clone(), self.values.clone())?;
        if (fresh.jitter - self.jitter).abs() > 0.0 {
            // Different jitter levels are not comparable elementwise.
            return Err(Error::numerical(format!(
                "jitter mismatch: incremental {} vs fresh {}",
                self.jitter, fresh.jitter
            )));
        }
        Ok(self.factor.max_abs_diff(&fresh.factor))
    }

    fn refactor(&mut self) -> Result<()> {
        let (factor, jitter) = factor_with_ladder(&self.spec, &self.times)?;
        self.factor = factor;
        self.jitter = jitter;
        self.rebuilds += 1;
        log::debug!(
            "incremental factor edit failed; refactored window of {} at jitter {}",
            self.times.len(),
            jitter
        );
        Ok(())
    }
}

/// Packed lower storage of V = K + σ_n²·I (+ jitter·I) over the given times.
fn packed_covariance(spec: &KernelSpec, times: &[f64], jitter: f64) -> Vec<f64> {
    let n = times.len();
    let mut packed = Vec::with_capacity(n * (n + 1) / 2);
    for i in 0..n {
        for j in 0..i {
            packed.push(kernel_eval(spec, times[i], times[j]));
        }
        packed.push(effective_diag(spec) + jitter);
    }
    packed
}

/// Cholesky factor of the noise-free covariance K(times, times), escalating
/// through the jitter ladder. Used to draw latent functions; the observation
/// noise is never part of the latent draw.
pub(crate) fn latent_covariance_factor(spec: &KernelSpec, times: &[f64]) -> Result<PackedLower> {
    let n = times.len();
    if n == 0 {
        return Ok(PackedLower::empty());
    }
    let diag = kernel_base(spec, 0.0);
    if !(diag.is_finite() && diag > 0.0) {
        return Err(Error::numerical(format!(
            "latent covariance diagonal is degenerate ({diag})"
        )));
    }
    let mut last = None;
    for &scale in std::iter::once(&0.0).chain(JITTER_LADDER.iter()) {
        let mut packed = Vec::with_capacity(n * (n + 1) / 2);
        for i in 0..n {
            for j in 0..i {
                packed.push(kernel_base(spec, (times[i] - times[j]).abs()));
            }
            packed.push(diag + scale * diag);
        }
        match PackedLower::factorize(packed, n) {
            Ok(factor) => return Ok(factor),
            Err(f) => last = Some(f),
        }
    }
    let f = last.expect("at least one attempt");
    Err(Error::numerical(format!(
        "latent covariance factorization failed for {n} points (pivot {:e} at row {})",
        f.pivot, f.row
    )))
}

/// Factor with the escalating jitter ladder; reports the jitter applied.
fn factor_with_ladder(spec: &KernelSpec, times: &[f64]) -> Result<(PackedLower, f64)> {
    let n = times.len();
    if n == 0 {
        return Ok((PackedLower::empty(), 0.0));
    }
    let diag = effective_diag(spec);
    if !(diag.is_finite() && diag > 0.0) {
        return Err(Error::numerical(format!(
            "covariance diagonal is degenerate ({diag})"
        )));
    }
    let mut last = None;
    for (attempt, &scale) in std::iter::once(&0.0).chain(JITTER_LADDER.iter()).enumerate() {
        let jitter = scale * diag;
        match PackedLower::factorize(packed_covariance(spec, times, jitter), n) {
            Ok(factor) => {
                if attempt > 0 {
                    log::debug!("factorization needed jitter {jitter} (attempt {attempt})");
                }
                return Ok((factor, jitter));
            }
            Err(f) => last = Some(f),
        }
    }
    let f = last.expect("at least one attempt");
    Err(Error::numerical(format!(
        "covariance factorization failed for window of {n} despite jitter up to {:e} \
         (pivot {:e} at row {})",
        JITTER_LADDER[JITTER_LADDER.len() - 1] * diag,
        f.pivot,
        f.row
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn se(output: f64, len: f64, noise: f64) -> KernelSpec {
        KernelSpec::squared_exponential(output, len, noise)
    }

    #[test]
    fn single_point_factor_value() {
        let state = CholeskyState::build(se(1.0, 1.0, 0.1), vec![0.0], vec![0.3]).unwrap();
        assert_abs_diff_eq!(state.factor.at(0, 0), 1.01f64.sqrt(), epsilon = 1e-15);
        assert_eq!(state.jitter(), 0.0);
    }

    #[test]
    fn distant_points_decouple() {
        let state = CholeskyState::build(se(1.0, 1.0, 0.1), vec![0.0, 1e8], vec![0.0, 1.0]).unwrap();
        assert!(state.factor.at(1, 0).abs() < 1e-12);
        assert_abs_diff_eq!(state.factor.at(1, 1), 1.01f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn factor_reconstructs_covariance() {
        let spec = se(1.3, 4.0, 0.2);
        let times: Vec<f64> = vec![0.0, 1.0, 2.5, 4.0, 7.0];
        let state = CholeskyState::build(spec, times.clone(), vec![0.0; 5]).unwrap();
        for i in 0..5 {
            for j in 0..=i {
                let mut s = 0.0;
                for k in 0..=j {
                    s += state.factor.at(i, k) * state.factor.at(j, k);
                }
                let expect = if i == j {
                    kernel_eval(&spec, times[i], times[i]) + spec.noise_variance()
                } else {
                    kernel_eval(&spec, times[i], times[j])
                };
                assert_abs_diff_eq!(s, expect, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn noiseless_interpolation_recovers_observation() {
        let state = CholeskyState::build(se(1.0, 2.0, 0.0), vec![5.0], vec![1.7]).unwrap();
        let p = state.posterior_at(5.0).unwrap();
        assert_abs_diff_eq!(p.mean, 1.7, epsilon = 1e-10);
        assert!(p.variance.abs() < 1e-10);
        assert!(p.interpolated);
    }

    #[test]
    fn far_queries_revert_to_window_mean_and_prior_variance() {
        let spec = se(1.5, 2.0, 0.1);
        let state = CholeskyState::build(
            spec,
            vec![0.0, 1.0, 2.0, 3.0],
            vec![1.0, 2.0, 3.0, 2.0],
        )
        .unwrap();
        let p = state.posterior_at(1e6).unwrap();
        assert_abs_diff_eq!(p.mean, 2.0, epsilon = 1e-9);
        assert_abs_diff_eq!(p.variance, 2.25, epsilon = 1e-9);
        assert!(!p.interpolated);
    }

    #[test]
    fn posterior_variance_never_exceeds_prior_plus_noise() {
        let spec = se(1.2, 3.0, 0.3);
        let state = CholeskyState::build(
            spec,
            (0..30).map(|i| i as f64).collect(),
            (0..30).map(|i| (i as f64 * 0.3).sin()).collect(),
        )
        .unwrap();
        for q in [-5.0, 0.5, 14.2, 29.0, 31.0, 300.0] {
            let p = state.posterior_at(q).unwrap();
            let bound = kernel_eval(&spec, q, q) + spec.noise_variance() + 1e-10;
            assert!(p.variance >= 0.0 && p.variance <= bound);
        }
    }

    #[test]
    fn neg_log_marginal_single_unit_point() {
        // V = [1] and y equal to the window mean gives ½·ln 2π exactly.
        let state = CholeskyState::build(se(1.0, 1.0, 0.0), vec![0.0], vec![0.4]).unwrap();
        let nlm = state.neg_log_marginal().unwrap();
        assert_abs_diff_eq!(nlm, 0.5 * (2.0 * std::f64::consts::PI).ln(), epsilon = 1e-12);
    }

    #[test]
    fn marginal_prefers_true_noise_scale() {
        // Data generated as pure noise around a constant: a spec with the
        // matching noise level must beat one that treats noise as tiny.
        let times: Vec<f64> = (0..40).map(|i| i as f64).collect();
        let mut rng_state = 88172645463325252u64;
        let mut xorshift = || {
            rng_state ^= rng_state << 13;
            rng_state ^= rng_state >> 7;
            rng_state ^= rng_state << 17;
            (rng_state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let values: Vec<f64> = (0..40).map(|_| xorshift() * 0.6).collect();
        let good = CholeskyState::build(se(1.0, 3.0, 0.2), times.clone(), values.clone()).unwrap();
        let bad = CholeskyState::build(se(1.0, 3.0, 0.002), times, values).unwrap();
        assert!(
            good.neg_log_marginal().unwrap() < bad.neg_log_marginal().unwrap(),
            "matching noise scale should have lower negative log marginal"
        );
    }

    #[test]
    fn append_from_empty_matches_build() {
        let spec = se(1.0, 2.0, 0.1);
        let mut inc = CholeskyState::new_empty(spec);
        for (t, y) in [(0.0, 0.5), (1.0, -0.2), (2.0, 0.9), (3.5, 0.1)] {
            inc.append(t, y).unwrap();
        }
        assert_abs_diff_eq!(inc.factor_drift().unwrap(), 0.0, epsilon = 1e-8);
        let first = CholeskyState::build(spec, vec![0.0], vec![0.5]).unwrap();
        assert_abs_diff_eq!(
            first.factor.at(0, 0),
            effective_diag(&spec).sqrt(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn append_rejects_non_increasing_time() {
        let spec = se(1.0, 2.0, 0.1);
        let mut state = CholeskyState::build(spec, vec![0.0, 1.0], vec![0.0, 0.0]).unwrap();
        assert!(state.append(1.0, 0.3).is_err());
        assert!(state.append(0.5, 0.3).is_err());
    }

    #[test]
    fn append_then_query_returns_observation_when_noiseless() {
        let spec = se(1.0, 2.0, 0.0);
        let mut state = CholeskyState::build(spec, vec![0.0, 1.0], vec![0.1, 0.2]).unwrap();
        state.append(2.0, 0.7).unwrap();
        let p = state.posterior_at(2.0).unwrap();
        assert_abs_diff_eq!(p.mean, 0.7, epsilon = 1e-8);
    }

    #[test]
    fn rolling_window_drift_stays_small() {
        let spec = se(1.0, 5.0, 0.15);
        let window = 30;
        let series: Vec<f64> = (0..150).map(|i| ((i as f64) * 0.21).sin()).collect();
        let mut state = CholeskyState::build(
            spec,
            (0..window).map(|i| i as f64).collect(),
            series[..window].to_vec(),
        )
        .unwrap();
        for k in window..150 {
            state.append(k as f64, series[k]).unwrap();
            state.drop_oldest().unwrap();
            assert_eq!(state.len(), window);
        }
        assert!(state.factor_drift().unwrap() < 1e-8);
        assert_eq!(state.rebuilds(), 0);
    }

    #[test]
    fn drop_to_single_point() {
        let spec = se(1.0, 2.0, 0.1);
        let mut state = CholeskyState::build(spec, vec![0.0, 1.0], vec![0.3, 0.6]).unwrap();
        state.drop_oldest().unwrap();
        assert_eq!(state.len(), 1);
        assert_abs_diff_eq!(state.factor.at(0, 0), 1.01f64.sqrt(), epsilon = 1e-10);
        assert_eq!(state.values(), &[0.6]);
    }

    #[test]
    fn drop_newest_is_exact() {
        let spec = se(1.0, 3.0, 0.2);
        let mut state = CholeskyState::build(
            spec,
            vec![0.0, 1.0, 2.0, 3.0],
            vec![0.1, 0.4, -0.2, 0.8],
        )
        .unwrap();
        state.drop_newest().unwrap();
        assert_eq!(state.len(), 3);
        assert_abs_diff_eq!(state.factor_drift().unwrap(), 0.0, epsilon = 0.0);
    }

    #[test]
    fn near_duplicate_times_trigger_jitter_not_failure() {
        // Two nearly coincident points under a noiseless kernel give a
        // numerically singular covariance; the ladder must rescue it.
        let spec = se(1.0, 10.0, 0.0);
        let state = CholeskyState::build(spec, vec![0.0, 1e-9], vec![0.5, 0.5]).unwrap();
        assert!(state.jitter() > 0.0);
    }

    #[test]
    fn set_spec_refactors() {
        let mut state = CholeskyState::build(se(1.0, 2.0, 0.1), vec![0.0, 2.0], vec![0.3, 0.9]).unwrap();
        let before = state.posterior_at(3.0).unwrap();
        state.set_spec(se(2.0, 2.0, 0.1)).unwrap();
        let after = state.posterior_at(3.0).unwrap();
        assert!((before.variance - after.variance).abs() > 1e-6);
    }
}
