//! Synthetic workloads for exercising the tuner: a deterministic job
//! simulator, exhaustive oracles over discretized spaces, and scripted
//! ablation benchmarks.

pub mod benchmark;
pub mod error;
pub mod families;
pub mod oracle;
pub mod scenario;
pub mod simulator;

pub use benchmark::{run_benchmark, BenchmarkReport, RunReport};
pub use error::{HarnessError, Result};
pub use oracle::{brute_force_optimum, grid, Bound, GridOptions, OracleResult};
pub use scenario::BenchmarkScenario;
pub use simulator::{simulate_execution, simulate_noiseless, ExecutionResult, SyntheticJobSpec};
