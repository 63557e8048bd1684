//! GARCH-family conditional-variance models: the comparison baselines.
//!
//! Three variants share one recursion interface:
//!
//! - vanilla GARCH(p,q):  σ_t² = α₀ + Σ_j α_j r²_{t−j} + Σ_i β_i σ²_{t−i}
//! - EGARCH(p,q):     log σ_t² = α₀ + Σ_j α_j g(r_{t−j}) + Σ_i β_i log σ²_{t−i},
//!                    g(x) = θx + λ|x|
//! - GJR-GARCH(p,q,r): vanilla plus Σ_k γ_k r²_{t−k}·[r_{t−k} < 0]
//!
//! Parameters are estimated by Gaussian maximum likelihood through the
//! shared Nelder-Mead search, working in an unconstrained transform of the
//! parameter space so stationarity and positivity hold by construction at
//! every step the optimizer visits.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::inference::SimplexConfig;
use crate::simplex::{minimize, SimplexOptions};

/// Relative floor applied to conditional variances inside likelihoods,
/// guarding divisions on degenerate parameter proposals.
const VARIANCE_FLOOR_RATIO: f64 = 1e-12;

/// Margin keeping transformed parameters strictly inside their open sets.
const EDGE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GarchVariant {
    Vanilla,
    EGarch,
    Gjr,
}

impl GarchVariant {
    pub fn name(self) -> &'static str {
        match self {
            GarchVariant::Vanilla => "garch",
            GarchVariant::EGarch => "egarch",
            GarchVariant::Gjr => "gjr-garch",
        }
    }
}

/// Model shape: variant plus recursion orders.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GarchSpec {
    pub variant: GarchVariant,
    /// Number of past conditional variances (the β terms).
    pub p: usize,
    /// Number of past returns (the α terms).
    pub q: usize,
    /// Number of leverage terms (GJR only; 0 otherwise).
    pub r: usize,
}

impl GarchSpec {
    pub fn new(variant: GarchVariant, p: usize, q: usize, r: usize) -> Result<Self> {
        if q == 0 {
            return Err(Error::invalid("GARCH needs q ≥ 1 (at least one return lag)"));
        }
        match variant {
            GarchVariant::Gjr => {
                if r == 0 || r > q {
                    return Err(Error::invalid(format!(
                        "GJR leverage order must satisfy 1 ≤ r ≤ q, got r = {r}, q = {q}"
                    )));
                }
            }
            _ => {
                if r != 0 {
                    return Err(Error::invalid(format!(
                        "leverage order r = {r} is only meaningful for GJR"
                    )));
                }
            }
        }
        Ok(GarchSpec { variant, p, q, r })
    }

    pub fn vanilla(p: usize, q: usize) -> Self {
        GarchSpec::new(GarchVariant::Vanilla, p, q, 0).expect("q ≥ 1")
    }

    pub fn egarch(p: usize, q: usize) -> Self {
        GarchSpec::new(GarchVariant::EGarch, p, q, 0).expect("q ≥ 1")
    }

    pub fn gjr(p: usize, q: usize, r: usize) -> Self {
        GarchSpec::new(GarchVariant::Gjr, p, q, r).expect("valid orders")
    }

    /// Dimension of the unconstrained optimization space.
    fn transform_dim(&self) -> usize {
        match self.variant {
            // ln α₀, logit of total persistence, softmax logits for the
            // weight shares (last share pinned).
            GarchVariant::Vanilla | GarchVariant::Gjr => 2 + (self.q + self.p + self.r - 1),
            // α₀ and the α_j are free-signed; Σβ takes one tanh coordinate
            // plus p−1 share logits when p > 0; θ and λ are free.
            GarchVariant::EGarch => 3 + self.q + self.p,
        }
    }
}

/// Coefficients for one [`GarchSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct GarchParams {
    pub alpha0: f64,
    /// Return-lag coefficients α₁..α_q.
    pub alpha: Vec<f64>,
    /// Variance-lag coefficients β₁..β_p.
    pub beta: Vec<f64>,
    /// Leverage coefficients γ₁..γ_r (GJR only).
    pub gamma: Vec<f64>,
    /// EGARCH sign response.
    pub theta: f64,
    /// EGARCH magnitude response.
    pub lambda: f64,
}

impl GarchParams {
    pub fn vanilla(alpha0: f64, alpha: Vec<f64>, beta: Vec<f64>) -> Self {
        GarchParams {
            alpha0,
            alpha,
            beta,
            gamma: Vec::new(),
            theta: 0.0,
            lambda: 0.0,
        }
    }

    /// Check the stationarity/positivity invariants against a spec.
    pub fn validate(&self, spec: &GarchSpec) -> Result<()> {
        if self.alpha.len() != spec.q || self.beta.len() != spec.p || self.gamma.len() != spec.r {
            return Err(Error::invalid(format!(
                "coefficient counts (q={}, p={}, r={}) do not match orders (q={}, p={}, r={})",
                self.alpha.len(),
                self.beta.len(),
                self.gamma.len(),
                spec.q,
                spec.p,
                spec.r
            )));
        }
        let all = self
            .alpha
            .iter()
            .chain(&self.beta)
            .chain(&self.gamma)
            .chain([&self.alpha0, &self.theta, &self.lambda]);
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("GARCH parameters must be finite"));
        }
        match spec.variant {
            GarchVariant::Vanilla | GarchVariant::Gjr => {
                if !(self.alpha0 > 0.0) {
                    return Err(Error::invalid("α₀ must be strictly positive"));
                }
                if self.alpha.iter().chain(&self.beta).chain(&self.gamma).any(|&v| v < 0.0) {
                    return Err(Error::invalid("α, β, γ coefficients must be non-negative"));
                }
                let persistence = self.persistence();
                if persistence >= 1.0 {
                    return Err(Error::invalid(format!(
                        "non-stationary parameters: Σα + Σβ + ½Σγ = {persistence} ≥ 1"
                    )));
                }
            }
            GarchVariant::EGarch => {
                let b: f64 = self.beta.iter().sum();
                if b.abs() >= 1.0 {
                    return Err(Error::invalid(format!(
                        "EGARCH log-variance recursion is explosive: |Σβ| = {} ≥ 1",
                        b.abs()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Σα + Σβ + ½Σγ, the stationarity measure for vanilla/GJR.
    pub fn persistence(&self) -> f64 {
        self.alpha.iter().sum::<f64>()
            + self.beta.iter().sum::<f64>()
            + 0.5 * self.gamma.iter().sum::<f64>()
    }

    /// Long-run variance α₀ / (1 − Σα − Σβ) of a vanilla model.
    pub fn unconditional_variance(&self) -> f64 {
        self.alpha0 / (1.0 - self.alpha.iter().sum::<f64>() - self.beta.iter().sum::<f64>())
    }
}

/// Rolling buffers of recent returns and conditional variances,
/// newest-first. After absorbing the return observed at time t, the head
/// variance is σ²_{t+1} — the one-step-ahead forecast.
#[derive(Debug, Clone)]
pub struct GarchState {
    /// r_t, r_{t−1}, …, r_{t−q+1}.
    returns: Vec<f64>,
    /// σ²_{t+1}, σ²_t, …; always at least one entry.
    variances: Vec<f64>,
}

impl GarchState {
    /// Pre-sample initialization: every past variance is the training-sample
    /// variance, every past return its positive square root (so GJR leverage
    /// indicators start inactive).
    pub fn new(spec: &GarchSpec, presample_variance: f64) -> Result<Self> {
        if !(presample_variance > 0.0 && presample_variance.is_finite()) {
            return Err(Error::invalid(format!(
                "pre-sample variance must be positive and finite, got {presample_variance}"
            )));
        }
        Ok(GarchState {
            returns: vec![presample_variance.sqrt(); spec.q],
            variances: vec![presample_variance; spec.p.max(1)],
        })
    }

    /// The conditional variance applying to the next (unseen) return.
    pub fn current_variance(&self) -> f64 {
        self.variances[0]
    }

    /// Absorb an observed return: computes σ² for the following step per the
    /// variant's recursion, pushes both, and returns the new variance.
    pub fn advance(&mut self, spec: &GarchSpec, params: &GarchParams, r: f64) -> Result<f64> {
        let v = variance_step(spec, params, self, r)?;
        self.returns.insert(0, r);
        self.returns.truncate(spec.q);
        self.variances.insert(0, v);
        self.variances.truncate(spec.p.max(1));
        Ok(v)
    }
}

/// One recursion step: the conditional variance implied by the state with
/// `r_prev` standing as the most recent return (not yet absorbed).
pub fn variance_step(
    spec: &GarchSpec,
    params: &GarchParams,
    state: &GarchState,
    r_prev: f64,
) -> Result<f64> {
    // Lag j reads r_{t−j}: j = 1 is r_prev, deeper lags come off the buffer.
    let ret = |j: usize| -> f64 {
        if j == 1 {
            r_prev
        } else {
            state.returns[j - 2]
        }
    };
    let v = match spec.variant {
        GarchVariant::Vanilla | GarchVariant::Gjr => {
            let mut v = params.alpha0;
            for (j, &a) in params.alpha.iter().enumerate() {
                let r = ret(j + 1);
                v += a * r * r;
            }
            for (i, &b) in params.beta.iter().enumerate() {
                v += b * state.variances[i];
            }
            for (k, &g) in params.gamma.iter().enumerate() {
                let r = ret(k + 1);
                if r < 0.0 {
                    v += g * r * r;
                }
            }
            v
        }
        GarchVariant::EGarch => {
            let mut lv = params.alpha0;
            for (j, &a) in params.alpha.iter().enumerate() {
                let r = ret(j + 1);
                lv += a * (params.theta * r + params.lambda * r.abs());
            }
            for (i, &b) in params.beta.iter().enumerate() {
                lv += b * state.variances[i].ln();
            }
            lv.exp()
        }
    };
    if !(v > 0.0 && v.is_finite()) {
        return Err(Error::numerical(format!(
            "conditional variance left (0, ∞): {v} under {} parameters",
            spec.variant.name()
        )));
    }
    Ok(v)
}

/// One-step-ahead variance forecast from a warmed state — the head of the
/// variance buffer, since `advance` already ran the recursion when the
/// latest return was absorbed.
pub fn forecast_one_step(state: &GarchState) -> f64 {
    state.current_variance()
}

/// Gaussian log-likelihood Σ_t [−½ log 2πσ_t² − r_t²/(2σ_t²)] of a return
/// sample, recursing from pre-sample state.
pub fn log_likelihood(
    spec: &GarchSpec,
    params: &GarchParams,
    returns: &[f64],
    presample_variance: f64,
) -> Result<f64> {
    let mut state = GarchState::new(spec, presample_variance)?;
    let floor = VARIANCE_FLOOR_RATIO * presample_variance;
    let mut ll = 0.0;
    for &r in returns {
        let v = state.current_variance().max(floor);
        ll -= 0.5 * ((2.0 * std::f64::consts::PI * v).ln() + r * r / v);
        state.advance(spec, params, r)?;
    }
    Ok(ll)
}

/// Maximum-likelihood fit via multi-start Nelder-Mead in the unconstrained
/// transform. The first start is a standard persistent-volatility guess;
/// further restarts jitter it. Fails only when every restart is rejected or
/// none converges.
pub fn fit(spec: &GarchSpec, returns: &[f64], cfg: &SimplexConfig) -> Result<GarchParams> {
    if returns.len() < 50 {
        return Err(Error::invalid(format!(
            "GARCH estimation needs at least 50 returns, got {}",
            returns.len()
        )));
    }
    if returns.iter().any(|r| !r.is_finite()) {
        return Err(Error::invalid("returns must be finite"));
    }
    // Pre-sample variance under the models' zero-mean convention.
    let presample = returns.iter().map(|r| r * r).sum::<f64>() / returns.len() as f64;
    if presample <= 0.0 {
        return Err(Error::FitFailed(
            "all returns are exactly zero; conditional variance is unidentified".into(),
        ));
    }

    let mut objective = |u: &[f64]| -> f64 {
        let params = unconstrained_to_params(spec, u);
        match log_likelihood(spec, &params, returns, presample) {
            Ok(ll) if ll.is_finite() => -ll,
            _ => f64::INFINITY,
        }
    };

    let opts = SimplexOptions {
        max_iter: cfg.max_iter,
        f_tol: cfg.f_tol,
        x_tol: cfg.x_tol,
    };
    let base = default_start(spec, presample);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<(f64, Vec<f64>, bool)> = None;
    for restart in 0..cfg.restarts {
        let start: Vec<f64> = if restart == 0 {
            base.clone()
        } else {
            base.iter().map(|u| u + rng.gen_range(-1.0..1.0)).collect()
        };
        let out = minimize(&mut objective, &start, 0.25, &opts);
        if !out.value.is_finite() {
            continue;
        }
        if best.as_ref().map_or(true, |(v, _, _)| out.value < *v) {
            best = Some((out.value, out.x, out.converged));
        }
    }
    match best {
        Some((value, u, converged)) => {
            let params = unconstrained_to_params(spec, &u);
            params.validate(spec)?;
            if !converged {
                return Err(Error::FitFailed(format!(
                    "likelihood search did not converge for {}; best NLL {value:.6} at α₀ = {:.3e}",
                    spec.variant.name(),
                    params.alpha0
                )));
            }
            Ok(params)
        }
        None => Err(Error::FitFailed(format!(
            "every restart rejected for {} on {} returns",
            spec.variant.name(),
            returns.len()
        ))),
    }
}

/// Map an unconstrained vector into valid parameters; total by construction.
fn unconstrained_to_params(spec: &GarchSpec, u: &[f64]) -> GarchParams {
    debug_assert_eq!(u.len(), spec.transform_dim());
    match spec.variant {
        GarchVariant::Vanilla | GarchVariant::Gjr => {
            let alpha0 = u[0].exp();
            // sigmoid saturates to exactly 1.0 for arguments above ~37, which
            // would put the stationarity sum on the forbidden boundary when a
            // flat likelihood (short or near-integrated windows) pushes the
            // search that far out.
            let persistence = sigmoid(u[1]).min(1.0 - EDGE);
            let m = spec.q + spec.p + spec.r;
            let weights = pinned_softmax(&u[2..2 + (m - 1)]);
            let alpha = weights[..spec.q].iter().map(|w| persistence * w).collect();
            let beta = weights[spec.q..spec.q + spec.p]
                .iter()
                .map(|w| persistence * w)
                .collect();
            // ½γ enters the stationarity sum, so the share buys twice as
            // much leverage coefficient.
            let gamma = weights[spec.q + spec.p..]
                .iter()
                .map(|w| 2.0 * persistence * w)
                .collect();
            GarchParams {
                alpha0,
                alpha,
                beta,
                gamma,
                theta: 0.0,
                lambda: 0.0,
            }
        }
        GarchVariant::EGarch => {
            let alpha0 = u[0];
            let alpha: Vec<f64> = u[1..1 + spec.q].to_vec();
            let beta = if spec.p == 0 {
                Vec::new()
            } else {
                let total = u[1 + spec.q].tanh();
                let weights = pinned_softmax(&u[2 + spec.q..2 + spec.q + (spec.p - 1)]);
                weights.iter().map(|w| total * w).collect()
            };
            let theta = u[u.len() - 2];
            let lambda = u[u.len() - 1];
            GarchParams {
                alpha0,
                alpha,
                beta,
                gamma: Vec::new(),
                theta,
                lambda,
            }
        }
    }
}

/// Inverse of [`unconstrained_to_params`] for valid parameters (shares are
/// floored away from zero so the logits stay finite).
fn params_to_unconstrained(spec: &GarchSpec, params: &GarchParams) -> Result<Vec<f64>> {
    params.validate(spec)?;
    let mut u = Vec::with_capacity(spec.transform_dim());
    match spec.variant {
        GarchVariant::Vanilla | GarchVariant::Gjr => {
            u.push(params.alpha0.ln());
            let s = params.persistence().clamp(EDGE, 1.0 - EDGE);
            u.push((s / (1.0 - s)).ln());
            let shares: Vec<f64> = params
                .alpha
                .iter()
                .chain(&params.beta)
                .map(|c| (c / s).max(EDGE))
                .chain(params.gamma.iter().map(|g| (0.5 * g / s).max(EDGE)))
                .collect();
            let last = shares[shares.len() - 1];
            u.extend(shares[..shares.len() - 1].iter().map(|w| (w / last).ln()));
        }
        GarchVariant::EGarch => {
            u.push(params.alpha0);
            u.extend(&params.alpha);
            if spec.p > 0 {
                let total: f64 = params.beta.iter().sum();
                let t = total.clamp(-1.0 + EDGE, 1.0 - EDGE);
                u.push(0.5 * ((1.0 + t) / (1.0 - t)).ln());
                if total.abs() > EDGE {
                    let shares: Vec<f64> =
                        params.beta.iter().map(|b| (b / total).max(EDGE)).collect();
                    let last = shares[spec.p - 1];
                    u.extend(shares[..spec.p - 1].iter().map(|w| (w / last).ln()));
                } else {
                    u.extend(std::iter::repeat(0.0).take(spec.p - 1));
                }
            }
            u.push(params.theta);
            u.push(params.lambda);
        }
    }
    Ok(u)
}

/// Textbook persistent-volatility starting point: persistence 0.9, mostly
/// carried by the β terms, with α₀ targeting the sample variance.
fn default_start(spec: &GarchSpec, presample: f64) -> Vec<f64> {
    let params = match spec.variant {
        GarchVariant::Vanilla | GarchVariant::Gjr => {
            let s = 0.9;
            let (a_share, b_share, g_share) = if spec.p == 0 {
                (1.0 - 0.1 * spec.r as f64, 0.0, 0.1)
            } else {
                match spec.r {
                    0 => (0.12, 0.88, 0.0),
                    _ => (0.10, 0.85, 0.05),
                }
            };
            GarchParams {
                alpha0: presample * (1.0 - s),
                alpha: vec![s * a_share / spec.q as f64; spec.q],
                beta: if spec.p == 0 {
                    Vec::new()
                } else {
                    vec![s * b_share / spec.p as f64; spec.p]
                },
                gamma: if spec.r == 0 {
                    Vec::new()
                } else {
                    vec![2.0 * s * g_share / spec.r as f64; spec.r]
                },
                theta: 0.0,
                lambda: 0.0,
            }
        }
        GarchVariant::EGarch => {
            let b_total = if spec.p == 0 { 0.0 } else { 0.9 };
            GarchParams {
                alpha0: (1.0 - b_total) * presample.ln(),
                alpha: vec![0.1; spec.q],
                beta: if spec.p == 0 {
                    Vec::new()
                } else {
                    vec![b_total / spec.p as f64; spec.p]
                },
                gamma: Vec::new(),
                theta: -0.1,
                lambda: 0.2,
            }
        }
    };
    params_to_unconstrained(spec, &params).expect("default start is valid")
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Softmax over `logits` extended with one pinned zero logit; returns all
/// `logits.len() + 1` weights (positive, summing to 1).
fn pinned_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().fold(0.0f64, |a, &b| a.max(b));
    let mut w: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    w.push((-max).exp());
    let sum: f64 = w.iter().sum();
    for v in w.iter_mut() {
        *v /= sum;
    }
    w
}
