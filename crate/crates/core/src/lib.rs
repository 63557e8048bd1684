//! Volatility forecasting with Gaussian processes on transformed return
//! series, plus GARCH-family baselines and the rolling backtest machinery
//! to compare them.
//!
//! The pipeline runs: prices → returns → a positive volatility proxy
//! (absolute returns, squared returns, or local-extrema envelopes) → log
//! space, where a GP with a stationary kernel is fit over a rolling window
//! and its one-step-ahead posterior is transformed back into a volatility
//! forecast with an uncertainty band. Kernel hyperparameters are refreshed
//! by MAP estimation with log-normal priors. Everything downstream of a
//! seed is deterministic.

pub mod error;
pub mod forecast;
pub mod garch;
pub mod gp;
pub mod inference;
pub mod metrics;
pub mod returns;
mod simplex;
pub mod synth;

pub use error::{Error, Result};
