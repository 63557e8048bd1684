//! Price series, returns, volatility proxies and envelopes.
//!
//! The regression targets used elsewhere in the crate are built here:
//!
//! - returns from a price series (arithmetic or log),
//! - positive volatility proxies (|r| or r², floored away from zero),
//! - the signed split g⁺/g⁻ of a return series,
//! - local-extrema envelopes of a proxy series,
//! - the log transform handed to the Gaussian process.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fallback floor when a return series contains no non-zero value.
pub const FLOOR_FALLBACK: f64 = 1e-12;

/// A strictly increasing sequence of (timestamp, price) observations.
///
/// Timestamps are integer step indices; calendar handling is out of scope and
/// ingestion maps irregular stamps to ordinals before data reaches this type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceSeries {
    pub timestamps: Vec<i64>,
    pub prices: Vec<f64>,
}

impl PriceSeries {
    /// Build a series after validating the type invariants.
    pub fn new(timestamps: Vec<i64>, prices: Vec<f64>) -> Result<Self> {
        if timestamps.len() != prices.len() {
            return Err(Error::invalid(format!(
                "timestamp/price length mismatch: {} vs {}",
                timestamps.len(),
                prices.len()
            )));
        }
        for w in timestamps.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::invalid(format!(
                    "timestamps not strictly increasing at {} -> {}",
                    w[0], w[1]
                )));
            }
        }
        for (i, &p) in prices.iter().enumerate() {
            if !(p.is_finite() && p > 0.0) {
                return Err(Error::invalid(format!(
                    "price at row {i} is {p}; prices must be positive and finite"
                )));
            }
        }
        Ok(Self { timestamps, prices })
    }

    /// Series with implicit timestamps `0..n`.
    pub fn from_prices(prices: Vec<f64>) -> Result<Self> {
        let timestamps = (0..prices.len() as i64).collect();
        Self::new(timestamps, prices)
    }

    pub fn len(&self) -> usize {
        self.prices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prices.is_empty()
    }
}

/// Which return definition produced a [`ReturnSeries`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReturnFlavor {
    Arithmetic,
    Log,
}

/// Returns derived from a price series; one fewer point than the prices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnSeries {
    pub timestamps: Vec<i64>,
    pub values: Vec<f64>,
    pub flavor: ReturnFlavor,
}

impl ReturnSeries {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// r_t = (p_t - p_{t-1}) / p_{t-1}, indexed by the later timestamp.
pub fn arithmetic_returns(prices: &PriceSeries) -> Result<ReturnSeries> {
    returns_impl(prices, ReturnFlavor::Arithmetic)
}

/// r_t = ln p_t - ln p_{t-1}, indexed by the later timestamp.
pub fn log_returns(prices: &PriceSeries) -> Result<ReturnSeries> {
    returns_impl(prices, ReturnFlavor::Log)
}

fn returns_impl(prices: &PriceSeries, flavor: ReturnFlavor) -> Result<ReturnSeries> {
    if prices.len() < 2 {
        return Err(Error::invalid(format!(
            "need at least 2 prices to form returns, got {}",
            prices.len()
        )));
    }
    let values = prices
        .prices
        .windows(2)
        .map(|w| match flavor {
            ReturnFlavor::Arithmetic => (w[1] - w[0]) / w[0],
            ReturnFlavor::Log => w[1].ln() - w[0].ln(),
        })
        .collect();
    Ok(ReturnSeries {
        timestamps: prices.timestamps[1..].to_vec(),
        values,
        flavor,
    })
}

/// What a [`ProxySeries`] holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProxyKind {
    /// |r_t|, floored.
    Abs,
    /// r_t², floored at floor².
    Squared,
    /// Maxima envelope of a magnitude proxy.
    AbsEnvelope,
    /// Maxima envelope of the positive-return magnitudes g⁺.
    PosEnvelope,
    /// Maxima envelope of the negative-return magnitudes g⁻.
    NegEnvelope,
}

/// Which local extrema [`extract_envelope`] keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnvelopeSide {
    Maxima,
    Minima,
}

/// A strictly positive series derived from returns, safe to log-transform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxySeries {
    pub timestamps: Vec<i64>,
    pub values: Vec<f64>,
    pub kind: ProxyKind,
    /// Floor that was applied to keep values strictly positive.
    pub floor: f64,
}

impl ProxySeries {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// The signed split of a return series: g⁺ holds r_t for r_t ≥ 0 and g⁻ holds
/// -r_t for r_t < 0 (zeros land on the positive side). Both are floored
/// magnitude series; together they partition the input timestamps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignedSplit {
    pub positive: ProxySeries,
    pub negative: ProxySeries,
}

/// Default proxy floor: half the smallest non-zero |r| in the series, falling
/// back to [`FLOOR_FALLBACK`] when every value is zero.
pub fn default_floor(values: &[f64]) -> f64 {
    let smallest = values
        .iter()
        .map(|v| v.abs())
        .filter(|&a| a > 0.0)
        .fold(f64::INFINITY, f64::min);
    if smallest.is_finite() {
        smallest / 2.0
    } else {
        FLOOR_FALLBACK
    }
}

/// Build a volatility proxy from returns.
///
/// `floor` defaults to [`default_floor`] of the input. Abs yields
/// max(|r_t|, floor); Squared yields max(r_t², floor²).
pub fn make_proxy(returns: &ReturnSeries, kind: ProxyKind, floor: Option<f64>) -> Result<ProxySeries> {
    if returns.is_empty() {
        return Err(Error::invalid("cannot build a proxy from an empty return series"));
    }
    if !matches!(kind, ProxyKind::Abs | ProxyKind::Squared) {
        return Err(Error::invalid(
            "make_proxy builds abs or squared proxies; envelopes come from extract_envelope",
        ));
    }
    let floor = match floor {
        Some(f) if f > 0.0 && f.is_finite() => f,
        Some(f) => return Err(Error::invalid(format!("floor must be positive and finite, got {f}"))),
        None => default_floor(&returns.values),
    };
    let values = returns
        .values
        .iter()
        .map(|&r| match kind {
            ProxyKind::Abs => r.abs().max(floor),
            ProxyKind::Squared => (r * r).max(floor * floor),
            _ => unreachable!(),
        })
        .collect();
    Ok(ProxySeries {
        timestamps: returns.timestamps.clone(),
        values,
        kind,
        floor,
    })
}

/// Split returns into positive and negative magnitude series (see
/// [`SignedSplit`]). Both sides share the same floor, derived from the full
/// series when not supplied.
pub fn split_signed(returns: &ReturnSeries, floor: Option<f64>) -> Result<SignedSplit> {
    if returns.is_empty() {
        return Err(Error::invalid("cannot split an empty return series"));
    }
    let floor = match floor {
        Some(f) if f > 0.0 && f.is_finite() => f,
        Some(f) => return Err(Error::invalid(format!("floor must be positive and finite, got {f}"))),
        None => default_floor(&returns.values),
    };
    let mut pos_t = Vec::new();
    let mut pos_v = Vec::new();
    let mut neg_t = Vec::new();
    let mut neg_v = Vec::new();
    for (&t, &r) in returns.timestamps.iter().zip(&returns.values) {
        if r >= 0.0 {
            pos_t.push(t);
            pos_v.push(r.max(floor));
        } else {
            neg_t.push(t);
            neg_v.push((-r).max(floor));
        }
    }
    Ok(SignedSplit {
        positive: ProxySeries {
            timestamps: pos_t,
            values: pos_v,
            kind: ProxyKind::Abs,
            floor,
        },
        negative: ProxySeries {
            timestamps: neg_t,
            values: neg_v,
            kind: ProxyKind::Abs,
            floor,
        },
    })
}

/// Keep local extrema of a proxy series.
///
/// An interior point survives when it is ≥ (maxima) or ≤ (minima) both of its
/// neighbours — comparisons are non-strict, so plateau points are kept — and
/// the two endpoints always survive. Timestamps are preserved, so the result
/// is generally non-contiguous in time.
pub fn extract_envelope(series: &ProxySeries, side: EnvelopeSide) -> Result<ProxySeries> {
    if series.is_empty() {
        return Err(Error::invalid("cannot take the envelope of an empty series"));
    }
    let n = series.len();
    let keep = |i: usize| -> bool {
        if i == 0 || i == n - 1 {
            return true;
        }
        let (a, b, c) = (series.values[i - 1], series.values[i], series.values[i + 1]);
        match side {
            EnvelopeSide::Maxima => b >= a && b >= c,
            EnvelopeSide::Minima => b <= a && b <= c,
        }
    };
    let mut timestamps = Vec::new();
    let mut values = Vec::new();
    for i in 0..n {
        if keep(i) {
            timestamps.push(series.timestamps[i]);
            values.push(series.values[i]);
        }
    }
    let kind = match series.kind {
        ProxyKind::Abs | ProxyKind::Squared => ProxyKind::AbsEnvelope,
        k => k,
    };
    Ok(ProxySeries {
        timestamps,
        values,
        kind,
        floor: series.floor,
    })
}

/// Log-transform a proxy series into (time, ln value) pairs for the GP.
pub fn to_log_space(series: &ProxySeries) -> Result<Vec<(f64, f64)>> {
    series
        .timestamps
        .iter()
        .zip(&series.values)
        .map(|(&t, &v)| {
            if v > 0.0 && v.is_finite() {
                Ok((t as f64, v.ln()))
            } else {
                Err(Error::invalid(format!(
                    "proxy value {v} at time {t} is not strictly positive and finite"
                )))
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn prices(p: &[f64]) -> PriceSeries {
        PriceSeries::from_prices(p.to_vec()).unwrap()
    }

    fn rets(v: &[f64]) -> ReturnSeries {
        ReturnSeries {
            timestamps: (1..=v.len() as i64).collect(),
            values: v.to_vec(),
            flavor: ReturnFlavor::Log,
        }
    }

    #[test]
    fn arithmetic_returns_match_hand_values() {
        assert_eq!(arithmetic_returns(&prices(&[100.0, 100.0])).unwrap().values, vec![0.0]);
        let r = arithmetic_returns(&prices(&[100.0, 110.0])).unwrap();
        assert_abs_diff_eq!(r.values[0], 0.10, epsilon = 1e-15);
        let r = arithmetic_returns(&prices(&[100.0, 90.0, 99.0])).unwrap();
        assert_abs_diff_eq!(r.values[0], -0.10, epsilon = 1e-15);
        assert_abs_diff_eq!(r.values[1], 0.10, epsilon = 1e-15);
        assert_eq!(r.timestamps, vec![1, 2]);
    }

    #[test]
    fn log_returns_match_direct_evaluation() {
        let r = log_returns(&prices(&[100.0, 100.0])).unwrap();
        assert_eq!(r.values, vec![0.0]);
        let r = log_returns(&prices(&[1.0, std::f64::consts::E])).unwrap();
        assert_abs_diff_eq!(r.values[0], 1.0, epsilon = 1e-15);
        let r = log_returns(&prices(&[100.0, 110.0])).unwrap();
        assert_abs_diff_eq!(r.values[0], 1.1f64.ln(), epsilon = 1e-15);
    }

    #[test]
    fn returns_need_two_prices() {
        assert!(log_returns(&prices(&[100.0])).is_err());
    }

    #[test]
    fn log_returns_telescope() {
        let p = prices(&[100.0, 101.5, 99.0, 104.0, 103.2]);
        let r = log_returns(&p).unwrap();
        let total: f64 = r.values.iter().sum();
        assert_abs_diff_eq!(total, (103.2f64 / 100.0).ln(), epsilon = 1e-12);
    }

    #[test]
    fn proxy_abs_and_squared() {
        let r = rets(&[0.01, -0.02, 0.0]);
        let p = make_proxy(&r, ProxyKind::Abs, Some(1e-6)).unwrap();
        assert_eq!(p.values, vec![0.01, 0.02, 1e-6]);
        let p = make_proxy(&r, ProxyKind::Squared, Some(1e-6)).unwrap();
        assert_abs_diff_eq!(p.values[0], 1e-4, epsilon = 1e-18);
        assert_abs_diff_eq!(p.values[1], 4e-4, epsilon = 1e-18);
        assert_abs_diff_eq!(p.values[2], 1e-12, epsilon = 1e-24);
    }

    #[test]
    fn default_floor_is_half_smallest_nonzero() {
        assert_abs_diff_eq!(default_floor(&[0.0, -0.02, 0.01]), 0.005, epsilon = 1e-15);
        assert_eq!(default_floor(&[0.0, 0.0]), FLOOR_FALLBACK);
    }

    #[test]
    fn split_assigns_zeros_to_positive_side() {
        let r = rets(&[0.01, -0.02, 0.0, 0.03]);
        let s = split_signed(&r, Some(1e-9)).unwrap();
        assert_eq!(s.positive.timestamps, vec![1, 3, 4]);
        assert_eq!(s.negative.timestamps, vec![2]);
        assert_eq!(s.positive.values, vec![0.01, 1e-9, 0.03]);
        assert_eq!(s.negative.values, vec![0.02]);
    }

    #[test]
    fn envelope_maxima_hand_case() {
        let p = ProxySeries {
            timestamps: vec![0, 1, 2, 3, 4],
            values: vec![1.0, 3.0, 2.0, 5.0, 4.0],
            kind: ProxyKind::Abs,
            floor: 1e-12,
        };
        let e = extract_envelope(&p, EnvelopeSide::Maxima).unwrap();
        assert_eq!(e.timestamps, vec![0, 1, 3, 4]);
        assert_eq!(e.values, vec![1.0, 3.0, 5.0, 4.0]);
        assert_eq!(e.kind, ProxyKind::AbsEnvelope);
    }

    #[test]
    fn envelope_minima_keeps_endpoints() {
        let p = ProxySeries {
            timestamps: vec![0, 1, 2],
            values: vec![5.0, 1.0, 5.0],
            kind: ProxyKind::Abs,
            floor: 1e-12,
        };
        let e = extract_envelope(&p, EnvelopeSide::Minima).unwrap();
        assert_eq!(e.timestamps, vec![0, 1, 2]);
    }

    #[test]
    fn envelope_keeps_plateaus() {
        let p = ProxySeries {
            timestamps: vec![0, 1, 2, 3],
            values: vec![2.0, 2.0, 2.0, 2.0],
            kind: ProxyKind::Abs,
            floor: 1e-12,
        };
        let e = extract_envelope(&p, EnvelopeSide::Maxima).unwrap();
        assert_eq!(e.len(), 4);
    }

    #[test]
    fn log_space_hand_values() {
        let p = ProxySeries {
            timestamps: vec![0],
            values: vec![1.0],
            kind: ProxyKind::Abs,
            floor: 1e-12,
        };
        assert_eq!(to_log_space(&p).unwrap(), vec![(0.0, 0.0)]);
        let p = ProxySeries {
            timestamps: vec![0],
            values: vec![std::f64::consts::E.powi(2)],
            kind: ProxyKind::Abs,
            floor: 1e-12,
        };
        assert_abs_diff_eq!(to_log_space(&p).unwrap()[0].1, 2.0, epsilon = 1e-12);
        let p = ProxySeries {
            timestamps: vec![0, 1],
            values: vec![0.5, 2.0],
            kind: ProxyKind::Abs,
            floor: 1e-12,
        };
        let y = to_log_space(&p).unwrap();
        assert_abs_diff_eq!(y[0].1, -(2f64.ln()), epsilon = 1e-12);
        assert_abs_diff_eq!(y[1].1, 2f64.ln(), epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn prop_log_returns_telescope(p in proptest::collection::vec(1.0f64..1000.0, 2..40)) {
            let series = prices(&p);
            let r = log_returns(&series).unwrap();
            let total: f64 = r.values.iter().sum();
            let expect = (p[p.len() - 1] / p[0]).ln();
            prop_assert!((total - expect).abs() < 1e-10);
        }

        #[test]
        fn prop_split_partitions(v in proptest::collection::vec(-0.1f64..0.1, 1..60)) {
            let r = rets(&v);
            let s = split_signed(&r, None).unwrap();
            prop_assert_eq!(s.positive.len() + s.negative.len(), r.len());
            let mut all: Vec<i64> = s.positive.timestamps.iter().chain(&s.negative.timestamps).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, r.timestamps);
        }

        #[test]
        fn prop_envelope_scale_invariant(
            v in proptest::collection::vec(0.001f64..10.0, 2..50),
            c in 0.01f64..100.0,
        ) {
            let base = ProxySeries {
                timestamps: (0..v.len() as i64).collect(),
                values: v.clone(),
                kind: ProxyKind::Abs,
                floor: 1e-12,
            };
            let scaled = ProxySeries {
                values: v.iter().map(|x| x * c).collect(),
                ..base.clone()
            };
            let e1 = extract_envelope(&base, EnvelopeSide::Maxima).unwrap();
            let e2 = extract_envelope(&scaled, EnvelopeSide::Maxima).unwrap();
            prop_assert_eq!(e1.timestamps, e2.timestamps);
        }

        #[test]
        fn prop_envelope_idempotent_subset(v in proptest::collection::vec(0.001f64..10.0, 2..50)) {
            let base = ProxySeries {
                timestamps: (0..v.len() as i64).collect(),
                values: v,
                kind: ProxyKind::Abs,
                floor: 1e-12,
            };
            let e1 = extract_envelope(&base, EnvelopeSide::Maxima).unwrap();
            let e2 = extract_envelope(&e1, EnvelopeSide::Maxima).unwrap();
            // Envelope of an envelope keeps a subset of the envelope's points.
            for t in &e2.timestamps {
                prop_assert!(e1.timestamps.contains(t));
            }
        }

        #[test]
        fn prop_proxy_values_at_least_floor(v in proptest::collection::vec(-0.1f64..0.1, 1..60)) {
            let r = rets(&v);
            let p = make_proxy(&r, ProxyKind::Abs, None).unwrap();
            for &x in &p.values {
                prop_assert!(x >= p.floor && x > 0.0);
            }
        }
    }
}
