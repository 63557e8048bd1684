//! Forecast evaluation: the six loss measures and the residual-unbiasedness
//! diagnostic.
//!
//! All measures compare a realized volatility proxy σ_t against a forecast
//! h_t issued one step earlier. MdRAE is relative to the no-change model
//! (tomorrow equals today), so values below 1 mean the forecaster beats
//! persistence. sMAPE is bounded in [0, 200] and scale-free.

use serde::Serialize;

use crate::error::{Error, Result};

/// E|z| for standard normal z: the factor linking a mean-absolute-return
/// proxy to the volatility it estimates, √(2/π).
pub const ABS_NORMAL_MEAN: f64 = 0.7978845608028654;

/// The six losses over one (realized, forecast) pairing, with the effective
/// term counts after exclusions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricSuite {
    /// n⁻¹ Σ (σ_t − h_t)².
    pub mse1: f64,
    /// n⁻¹ Σ (σ_t² − h_t²)².
    pub mse2: f64,
    /// n⁻¹ Σ |σ_t − h_t|.
    pub mae1: f64,
    /// n⁻¹ Σ |σ_t² − h_t²|.
    pub mae2: f64,
    /// median_t |(σ_t − h_t) / (σ_t − σ_{t−1})|, skipping flat steps;
    /// `None` when every denominator is zero.
    pub mdrae: Option<f64>,
    /// n⁻¹ Σ 200·|σ_t − h_t| / (σ_t + h_t) over terms with σ_t + h_t > 0.
    pub smape: f64,
    /// Pairs entering MSE and MAE (the full series length).
    pub n: usize,
    /// Terms entering the MdRAE median.
    pub n_mdrae: usize,
    /// Terms entering the sMAPE mean.
    pub n_smape: usize,
}

/// Evaluate every measure for a forecast sequence against the realized proxy.
pub fn compute_suite(sigma: &[f64], h: &[f64]) -> Result<MetricSuite> {
    if sigma.is_empty() || sigma.len() != h.len() {
        return Err(Error::invalid(format!(
            "metric inputs must be non-empty and aligned, got {} realized vs {} forecast",
            sigma.len(),
            h.len()
        )));
    }
    if sigma.iter().chain(h).any(|v| !v.is_finite()) {
        return Err(Error::invalid("metric inputs must be finite"));
    }
    let n = sigma.len() as f64;
    let mut mse1 = 0.0;
    let mut mse2 = 0.0;
    let mut mae1 = 0.0;
    let mut mae2 = 0.0;
    let mut smape_sum = 0.0;
    let mut n_smape = 0usize;
    for (&s, &f) in sigma.iter().zip(h) {
        let d = s - f;
        let d2 = s * s - f * f;
        mse1 += d * d;
        mse2 += d2 * d2;
        mae1 += d.abs();
        mae2 += d2.abs();
        if s + f > 0.0 {
            smape_sum += 200.0 * d.abs() / (s + f);
            n_smape += 1;
        }
    }
    let mut ratios: Vec<f64> = sigma
        .windows(2)
        .zip(&h[1..])
        .filter(|(w, _)| w[1] != w[0])
        .map(|(w, &f)| ((w[1] - f) / (w[1] - w[0])).abs())
        .collect();
    let n_mdrae = ratios.len();
    let mdrae = if ratios.is_empty() {
        None
    } else {
        Some(median_in_place(&mut ratios))
    };
    Ok(MetricSuite {
        mse1: mse1 / n,
        mse2: mse2 / n,
        mae1: mae1 / n,
        mae2: mae2 / n,
        mdrae,
        smape: if n_smape == 0 { 0.0 } else { smape_sum / n_smape as f64 },
        n: sigma.len(),
        n_mdrae,
        n_smape,
    })
}

/// The persistence benchmark: forecast each realized value by its
/// predecessor (the first element forecasts itself).
pub fn no_change_forecast(sigma: &[f64]) -> Vec<f64> {
    let mut h = Vec::with_capacity(sigma.len());
    if let Some(&first) = sigma.first() {
        h.push(first);
        h.extend_from_slice(&sigma[..sigma.len() - 1]);
    }
    h
}

/// Standardized-residual summary for the unbiasedness check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualStats {
    /// e_t = r_t / h_t over the included pairs.
    pub residuals: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation of the raw residuals.
    pub std: f64,
    /// Standard deviation after rescaling the forecasts by
    /// [`ABS_NORMAL_MEAN`], for forecasters that target E|r| rather than σ.
    pub calibrated_std: f64,
    /// The factor applied for `calibrated_std` (always √(2/π), recorded so
    /// downstream reports are self-describing).
    pub calibration: f64,
    /// Pairs dropped because the forecast was zero.
    pub excluded: usize,
}

/// Normalize raw returns by the volatility forecast issued for them.
///
/// Under an unbiased, well-calibrated forecaster the residuals are mean-zero
/// with unit standard deviation (after the E|r| calibration when the
/// forecast targets mean absolute return).
pub fn residual_stats(returns: &[f64], h: &[f64]) -> Result<ResidualStats> {
    if returns.is_empty() || returns.len() != h.len() {
        return Err(Error::invalid(format!(
            "residuals need non-empty aligned inputs, got {} returns vs {} forecasts",
            returns.len(),
            h.len()
        )));
    }
    let mut residuals = Vec::with_capacity(returns.len());
    let mut excluded = 0usize;
    for (&r, &f) in returns.iter().zip(h) {
        if f == 0.0 || !f.is_finite() || !r.is_finite() {
            excluded += 1;
        } else {
            residuals.push(r / f);
        }
    }
    if residuals.len() < 2 {
        return Err(Error::invalid(
            "fewer than two usable residuals; cannot form a standard deviation",
        ));
    }
    let n = residuals.len() as f64;
    let mean = residuals.iter().sum::<f64>() / n;
    let var = residuals.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / (n - 1.0);
    let std = var.sqrt();
    Ok(ResidualStats {
        mean,
        std,
        // Dividing every forecast by √(2/π) multiplies every residual — and
        // hence their spread — by that same factor.
        calibrated_std: std * ABS_NORMAL_MEAN,
        calibration: ABS_NORMAL_MEAN,
        excluded,
        residuals,
    })
}

fn median_in_place(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}
