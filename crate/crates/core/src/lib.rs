//! Risk-limiting audit engine.

pub mod assorters;
pub mod ballots;
pub mod comparison;
pub mod engine;
pub mod error;
pub mod nonneg_mean;
pub mod rational;
pub mod service;
pub mod simulate;
pub mod stratification;

pub use error::{AuditError, Result};
