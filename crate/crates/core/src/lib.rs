//! Recursive theory-of-mind agents for repeated Bayesian games, and the ℵ
//! mechanism that lets a lower-depth agent notice it is being manipulated.

pub mod aleph;
pub mod domain;
pub mod error;
pub mod harness;
pub mod iug;
pub mod metrics;
pub mod planning;
pub mod zerosum;

pub use error::{Error, Result};
