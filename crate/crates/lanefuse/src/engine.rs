//! Front door tying the layers together: plan a workflow, synthesize it
//! under a strategy, and execute it on the parallel runtime.

use crate::algebra::{TupleSet, Workflow};
use crate::analyzer::HardwareProfile;
use crate::config::EngineConfig;
use crate::exec::{self, ExecOptions, ExecStats, TierTopology};
use crate::planner::{self, PlanError};
use crate::synthesizer::{
    self, ExecutionPlan, Strategy, SynthesisError, SynthesisOptions,
};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Synthesis(#[from] SynthesisError),
    #[error(transparent)]
    Exec(#[from] exec::ExecError),
}

/// A configured engine instance. Cheap to clone; holds no job state.
#[derive(Debug, Clone, Default)]
pub struct Engine {
    pub hw: HardwareProfile,
    pub topo: TierTopology,
    pub exec_opts: ExecOptions,
    pub synth_opts: SynthesisOptions,
}

impl Engine {
    pub fn new() -> Self {
        Engine::default()
    }

    pub fn from_config(cfg: &EngineConfig) -> Self {
        Engine {
            hw: cfg.hardware.clone(),
            topo: cfg.topology.clone(),
            ..Engine::default()
        }
    }

    /// Replace the executor count, keeping block sizes and node count.
    pub fn with_executors(mut self, executors: usize) -> Self {
        self.topo.executors_per_node = executors.max(1);
        self
    }

    pub fn with_synthesis(mut self, opts: SynthesisOptions) -> Self {
        self.synth_opts = opts;
        self
    }

    /// Plan and synthesize without executing.
    pub fn prepare(
        &self,
        workflow: &Workflow,
        strategy: Strategy,
    ) -> Result<ExecutionPlan, EngineError> {
        let abstract_plan = planner::plan(workflow, &self.hw)?;
        Ok(synthesizer::synthesize_with(
            &abstract_plan,
            strategy,
            &self.hw,
            self.synth_opts,
        )?)
    }

    /// Plan, synthesize and execute a workflow end to end.
    pub fn run(
        &self,
        workflow: &Workflow,
        strategy: Strategy,
    ) -> Result<(TupleSet, ExecStats), EngineError> {
        let plan = self.prepare(workflow, strategy)?;
        self.execute(&plan)
    }

    /// Execute an already synthesized plan.
    pub fn execute(&self, plan: &ExecutionPlan) -> Result<(TupleSet, ExecStats), EngineError> {
        Ok(exec::execute(plan, &self.topo, &self.exec_opts)?)
    }
}
