//! Covariance kernels over scalar time indices.
//!
//! Hyperparameters are stored and optimized in log-space; accessors expose
//! the natural-scale values. Three families are supported:
//!
//! - squared exponential: k(d) = σ_h² · exp(−(d / (√2·ℓ))²)
//! - Matérn 3/2:          k(d) = σ_h² · (1 + √3·d/ℓ) · exp(−√3·d/ℓ)
//! - quasi-periodic:      k(x_i, x_j) = σ_h² · exp(−sin²(π·d/T)/(2w²) − d²/ℓ²)
//!                                      + [x_i == x_j] · σ_n²
//!
//! The quasi-periodic kernel carries the observation noise on its own
//! diagonal; for the other families the noise is added once when covariance
//! matrices are assembled (see [`super::CholeskyState`]).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Supported kernel families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelFamily {
    SquaredExponential,
    Matern32,
    QuasiPeriodic,
}

impl KernelFamily {
    /// Number of log-hyperparameters: (σ_h, ℓ, σ_n) plus (T, w) when periodic.
    pub fn param_count(self) -> usize {
        match self {
            KernelFamily::QuasiPeriodic => 5,
            _ => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            KernelFamily::SquaredExponential => "se",
            KernelFamily::Matern32 => "matern32",
            KernelFamily::QuasiPeriodic => "quasi-periodic",
        }
    }
}

impl std::str::FromStr for KernelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "se" | "squared-exponential" => Ok(KernelFamily::SquaredExponential),
            "matern32" | "matern" => Ok(KernelFamily::Matern32),
            "quasi-periodic" | "qp" => Ok(KernelFamily::QuasiPeriodic),
            other => Err(Error::invalid(format!(
                "unknown kernel '{other}' (expected se, matern32 or quasi-periodic)"
            ))),
        }
    }
}

/// A kernel family with its log-space hyperparameters.
///
/// `log_period` and `log_roughness` are only meaningful for the
/// quasi-periodic family and are kept at 0 otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    /// ln σ_h (output scale).
    pub log_output_scale: f64,
    /// ln ℓ (length scale, in time steps).
    pub log_length_scale: f64,
    /// ln σ_n (observation noise standard deviation).
    pub log_noise: f64,
    /// ln T (period, quasi-periodic only).
    pub log_period: f64,
    /// ln w (periodic roughness, quasi-periodic only).
    pub log_roughness: f64,
}

impl KernelSpec {
    pub fn squared_exponential(output_scale: f64, length_scale: f64, noise: f64) -> Self {
        Self::non_periodic(KernelFamily::SquaredExponential, output_scale, length_scale, noise)
    }

    pub fn matern32(output_scale: f64, length_scale: f64, noise: f64) -> Self {
        Self::non_periodic(KernelFamily::Matern32, output_scale, length_scale, noise)
    }

    fn non_periodic(family: KernelFamily, output_scale: f64, length_scale: f64, noise: f64) -> Self {
        KernelSpec {
            family,
            log_output_scale: output_scale.ln(),
            log_length_scale: length_scale.ln(),
            log_noise: noise.ln(),
            log_period: 0.0,
            log_roughness: 0.0,
        }
    }

    pub fn quasi_periodic(
        output_scale: f64,
        length_scale: f64,
        noise: f64,
        period: f64,
        roughness: f64,
    ) -> Self {
        KernelSpec {
            family: KernelFamily::QuasiPeriodic,
            log_output_scale: output_scale.ln(),
            log_length_scale: length_scale.ln(),
            log_noise: noise.ln(),
            log_period: period.ln(),
            log_roughness: roughness.ln(),
        }
    }

    pub fn output_scale(&self) -> f64 {
        self.log_output_scale.exp()
    }

    pub fn length_scale(&self) -> f64 {
        self.log_length_scale.exp()
    }

    pub fn noise(&self) -> f64 {
        self.log_noise.exp()
    }

    pub fn noise_variance(&self) -> f64 {
        (2.0 * self.log_noise).exp()
    }

    pub fn period(&self) -> f64 {
        self.log_period.exp()
    }

    pub fn roughness(&self) -> f64 {
        self.log_roughness.exp()
    }

    /// The log-hyperparameters as a vector, in the order the optimizer uses:
    /// [ln σ_h, ln ℓ, ln σ_n] plus [ln T, ln w] for the quasi-periodic family.
    pub fn log_params(&self) -> Vec<f64> {
        match self.family {
            KernelFamily::QuasiPeriodic => vec![
                self.log_output_scale,
                self.log_length_scale,
                self.log_noise,
                self.log_period,
                self.log_roughness,
            ],
            _ => vec![self.log_output_scale, self.log_length_scale, self.log_noise],
        }
    }

    /// Rebuild a spec from the optimizer's log-parameter vector.
    pub fn from_log_params(family: KernelFamily, params: &[f64]) -> Result<Self> {
        if params.len() != family.param_count() {
            return Err(Error::invalid(format!(
                "kernel {} expects {} log-parameters, got {}",
                family.name(),
                family.param_count(),
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::invalid("log-parameters must be finite"));
        }
        Ok(KernelSpec {
            family,
            log_output_scale: params[0],
            log_length_scale: params[1],
            log_noise: params[2],
            log_period: if family == KernelFamily::QuasiPeriodic { params[3] } else { 0.0 },
            log_roughness: if family == KernelFamily::QuasiPeriodic { params[4] } else { 0.0 },
        })
    }
}

/// Evaluate the kernel at a pair of time points.
///
/// For the quasi-periodic family this includes the + [x_i == x_j]·σ_n² term,
/// i.e. its stated diagonal value is σ_h² + σ_n²; the other families evaluate
/// to σ_h² on the diagonal and the noise is added at matrix-assembly time.
pub fn kernel_eval(spec: &KernelSpec, xi: f64, xj: f64) -> f64 {
    let base = kernel_base(spec, (xi - xj).abs());
    if spec.family == KernelFamily::QuasiPeriodic && xi == xj {
        base + spec.noise_variance()
    } else {
        base
    }
}

/// Noise-free kernel value at absolute distance `d`. All three families are
/// stationary, so this is the whole covariance story except for the noise
/// term on the diagonal.
pub(crate) fn kernel_base(spec: &KernelSpec, d: f64) -> f64 {
    let sh2 = (2.0 * spec.log_output_scale).exp();
    let ell = spec.length_scale();
    match spec.family {
        KernelFamily::SquaredExponential => {
            let u = d / (std::f64::consts::SQRT_2 * ell);
            sh2 * (-(u * u)).exp()
        }
        KernelFamily::Matern32 => {
            let u = 3f64.sqrt() * d / ell;
            sh2 * (1.0 + u) * (-u).exp()
        }
        KernelFamily::QuasiPeriodic => {
            let s = (std::f64::consts::PI * d / spec.period()).sin();
            let w = spec.roughness();
            sh2 * (-(s * s) / (2.0 * w * w) - (d * d) / (ell * ell)).exp()
        }
    }
}

/// The diagonal entry the assembled covariance matrix carries for every
/// window point: kernel value at zero distance plus the noise variance
/// (which the quasi-periodic kernel defines as its own diagonal term).
pub(crate) fn effective_diag(spec: &KernelSpec) -> f64 {
    kernel_base(spec, 0.0) + spec.noise_variance()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn diagonal_values_match_family_statement() {
        let se = KernelSpec::squared_exponential(2.0, 3.0, 0.5);
        assert_abs_diff_eq!(kernel_eval(&se, 7.0, 7.0), 4.0, epsilon = 1e-12);
        let m = KernelSpec::matern32(2.0, 3.0, 0.5);
        assert_abs_diff_eq!(kernel_eval(&m, 7.0, 7.0), 4.0, epsilon = 1e-12);
        let qp = KernelSpec::quasi_periodic(2.0, 3.0, 0.5, 10.0, 1.0);
        assert_abs_diff_eq!(kernel_eval(&qp, 7.0, 7.0), 4.0 + 0.25, epsilon = 1e-12);
    }

    #[test]
    fn se_at_sqrt2_distance_is_exp_minus_one() {
        let se = KernelSpec::squared_exponential(1.0, 1.0, 0.1);
        assert_abs_diff_eq!(
            kernel_eval(&se, 0.0, std::f64::consts::SQRT_2),
            (-1.0f64).exp(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn matern_decay_hand_value() {
        // k(d)/σ_h² = (1 + √3 d/ℓ) exp(−√3 d/ℓ) evaluated directly.
        let m = KernelSpec::matern32(1.5, 2.0, 0.1);
        let u = 3f64.sqrt() * 5.0 / 2.0;
        assert_abs_diff_eq!(
            kernel_eval(&m, 1.0, 6.0),
            2.25 * (1.0 + u) * (-u).exp(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn qp_noise_only_on_coincident_points() {
        let qp = KernelSpec::quasi_periodic(1.0, 5.0, 0.3, 12.0, 0.8);
        let on = kernel_eval(&qp, 4.0, 4.0);
        let off = kernel_eval(&qp, 4.0, 4.0 + 1e-9);
        assert!(on - off > 0.09 - 1e-6, "diagonal must carry σ_n² = 0.09");
    }

    #[test]
    fn qp_periodicity_shows_in_values() {
        // At multiples of the period the sin² term vanishes; only the d²/ℓ²
        // decay remains.
        let qp = KernelSpec::quasi_periodic(1.0, 1000.0, 1e-9, 10.0, 0.7);
        let at_period = kernel_eval(&qp, 0.0, 10.0);
        let expect = (-100.0f64 / 1_000_000.0).exp();
        assert_abs_diff_eq!(at_period, expect, epsilon = 1e-9);
    }

    #[test]
    fn log_param_round_trip() {
        let qp = KernelSpec::quasi_periodic(1.3, 5.0, 0.3, 12.0, 0.8);
        let p = qp.log_params();
        assert_eq!(p.len(), 5);
        let back = KernelSpec::from_log_params(KernelFamily::QuasiPeriodic, &p).unwrap();
        assert_eq!(qp, back);
        let se = KernelSpec::squared_exponential(1.0, 2.0, 0.1);
        let back = KernelSpec::from_log_params(KernelFamily::SquaredExponential, &se.log_params()).unwrap();
        assert_eq!(se, back);
        assert!(KernelSpec::from_log_params(KernelFamily::SquaredExponential, &[0.0]).is_err());
    }

    proptest! {
        #[test]
        fn prop_kernels_symmetric_positive(
            family_ix in 0usize..3,
            ls in -2.0f64..3.0,
            los in -2.0f64..2.0,
            ln in -4.0f64..0.0,
            lt in 0.5f64..4.0,
            lw in -1.0f64..1.0,
            xi in -100.0f64..100.0,
            xj in -100.0f64..100.0,
        ) {
            let family = [KernelFamily::SquaredExponential, KernelFamily::Matern32, KernelFamily::QuasiPeriodic][family_ix];
            let spec = KernelSpec {
                family,
                log_output_scale: los,
                log_length_scale: ls,
                log_noise: ln,
                log_period: lt,
                log_roughness: lw,
            };
            let a = kernel_eval(&spec, xi, xj);
            let b = kernel_eval(&spec, xj, xi);
            // off-diagonal values may underflow to zero at large distances,
            // but can never go negative
            prop_assert!(a >= 0.0);
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
            // diagonal is strictly positive and dominates off-diagonal magnitudes
            let diag = kernel_eval(&spec, xi, xi);
            prop_assert!(diag > 0.0);
            prop_assert!(a <= diag + 1e-12);
        }
    }
}
