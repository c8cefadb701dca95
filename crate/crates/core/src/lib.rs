//! Learning solutions of parametric path-dependent PDEs.
//!
//! The price of a path-dependent claim is the discounted conditional
//! expectation of its payoff. This crate simulates the underlying model,
//! encodes path histories as streams of truncated signatures, trains
//! feed-forward or LSTM networks for the price and its path derivative,
//! and uses the learned hedge as a control variate to obtain de-biased
//! Monte Carlo prices with confidence intervals.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod market_models;
pub mod rng;
pub mod signatures;
pub mod payoffs;
pub mod nets;
pub mod training;
pub mod pricing;
pub mod evaluation;
pub mod cli;

pub use error::{PpdeError, Result};
