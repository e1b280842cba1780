//! Intraday overreaction-to-momentum pipeline.
//!
//! Market bars and tweet-emotion scores are aligned on a common interval grid,
//! next-interval overreactions are labeled relative to rolling volatility and
//! trading cost, three-class probabilistic models are fitted on leakage-safe
//! chronological splits, and their predictions are turned into cost-aware
//! strategies evaluated with annualized risk metrics, Sharpe-difference tests
//! and Shapley attributions.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytics;
pub mod backtest;
pub mod emotion_features;
pub mod error;
pub mod experiment;
pub mod labeling;
pub mod market_data;
pub mod modeling;
pub mod rng;
pub mod synth;

pub use error::{Error, Result};
