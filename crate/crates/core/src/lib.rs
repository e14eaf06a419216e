//! Credit-risk engine for loan portfolios.
//!
//! Per-loan monthly return distributions come from one of two neural models:
//! a default-rate / default-lifetime pair (two-point distribution) or a
//! Weibull survival network supervised by an expert default classifier
//! (one mass per default month plus full repayment). Portfolio weights are
//! then chosen to minimize scenario VaR or CVaR over a Monte-Carlo matrix.

pub mod data;
pub mod denn;
pub mod error;
pub mod harness;
pub mod kv;
pub mod loan_math;
pub mod neural;
pub mod risk_opt;
pub mod rng;
pub mod simulation;
pub mod survival;

pub use error::{Error, Result};
