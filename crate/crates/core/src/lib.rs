//! Online tuning engine for recurring jobs.
//!
//! The engine minimizes `T^β · R^(1−β)` (runtime against resource usage)
//! with a Gaussian-process surrogate and expected improvement, restricted to
//! a safe region and to the most important parameters, interleaved with
//! surrogate-gradient steps and warm-started from similar past tasks.

pub mod acquisition;
pub mod agd;
pub mod engine;
pub mod error;
pub mod forest;
pub mod history;
pub mod meta;
pub mod sampling;
pub mod space;
pub mod stats;
pub mod subspace;
pub mod surrogate;

pub use error::{Error, Result};

/// Version string reported by the service.
pub const ENGINE_VERSION: &str = env!("CARGO_PKG_VERSION");
