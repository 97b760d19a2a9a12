//! Order-statistic jump detection and local volatility estimation.

pub mod deconv;
pub mod error;
pub mod estimators;
pub mod ordstat;
pub mod backtest;
pub mod cli;
pub mod simulate;
pub mod special;
pub mod var;

pub use error::{Error, Result};
