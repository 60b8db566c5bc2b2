//! An embedded analytics engine that compiles workflows of relational
//! operators and user-defined functions into vectorized, multi-threaded
//! execution plans.
//!
//! The pieces, front to back:
//!
//! - [`relation`] / [`context`]: columnar relations plus the shared-state
//!   Context that together form a [`algebra::TupleSet`].
//! - [`ir`]: a small straight-line SSA language UDFs are written in, with a
//!   reference interpreter used as the correctness oracle.
//! - [`algebra`]: the logical operator algebra and workflow builder.
//! - [`analyzer`]: static UDF statistics — vectorizability, predicted compute
//!   cycles, predicted memory-load cycles, and a compute/memory-bound verdict.
//! - [`planner`]: logical rewrites (predicate pushdown, join ordering) and
//!   pipeline-breaker marking.
//! - [`synthesizer`]: turns an abstract plan into an executable one under a
//!   chosen strategy (pipeline, operator-at-a-time, tiled, or adaptive).
//! - [`exec`]: the tiered pull-based parallel runtime.
//! - [`workloads`]: ready-made ML workflows (k-means, linear and logistic
//!   regression, naive Bayes) and matching data generators.
//! - [`harness`]: timing/benchmark helpers behind the CLI and examples.

pub mod algebra;
pub mod analyzer;
pub mod config;
pub mod corpus;
pub mod context;
pub mod engine;
pub mod exec;
pub mod harness;
pub mod planner;
pub mod ir;
pub mod reference;
pub mod synthesizer;
pub mod relation;
pub mod scalar;
pub mod workloads;

pub use algebra::{TupleSet, Workflow, WorkflowError};
pub use analyzer::{Boundedness, FunctionStats, HardwareProfile};
pub use config::EngineConfig;
pub use context::{Context, ContextValue, Shape};
pub use engine::Engine;
pub use exec::{ExecOptions, TierTopology};
pub use ir::{Kind, UdfBuilder, UdfProgram};
pub use relation::{Relation, Schema};
pub use synthesizer::Strategy;
pub use scalar::{Scalar, ScalarType};
