//! The parallel runtime: kernel compilation, pooled memory, reduce
//! aggregation state, and the tiered pull-based scheduler.

pub mod compile;
pub mod hash;
pub mod pool;
pub mod reduce;
mod scheduler;

pub use scheduler::{
    execute, ExecError, ExecOptions, ExecStats, ExecutorStats, TierTopology,
};
