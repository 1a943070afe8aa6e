//! Component-based auto-tuning of coupled in-situ workflows.

pub mod baselines;
pub mod combiner;
pub mod error;
pub mod executor;
pub mod harness;
pub mod metrics;
pub mod parallel;
pub mod space;
pub mod surrogate;
pub mod tuner;
pub mod workflow;

pub use error::{Error, Result};
