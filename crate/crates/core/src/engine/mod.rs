//! The tuning loop: warm start, then Bayesian optimization over the safe
//! part of an adaptive sub-space, with a gradient step every few
//! iterations, early stopping and restart on sustained degradation.

mod task;
mod tuner;

pub use task::{ConstraintDef, ResourceFunctionSpec, TaskDefinition, CORES, INSTANCES, MEMORY};
pub use tuner::{
    derive_seed, Measurement, MetaContext, Suggestion, SubspaceMode, TaskStatus, Tuner, TunerOptions,
};
