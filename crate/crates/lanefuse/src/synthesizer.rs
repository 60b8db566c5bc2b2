//! Lowers an abstract plan to an executable one under a chosen strategy.
//!
//! Strategies differ only in how they chop chains of per-tuple operators
//! into stages and what materialization runs between them:
//!
//! - pipeline: everything between breakers fused into one scalar pass
//! - operator-at-a-time: one stage per operator, full materialization
//! - tiled: one stage per operator over cache-resident blocks
//! - adaptive: consecutive maps split into maximal vectorizable /
//!   nonvectorizable runs; vectorizable runs execute lane-parallel with
//!   cache-block materialization between runs. A vectorizable run at the
//!   start of a pipeline stays fused with its successors when it is
//!   memory-bound — lanes cannot make memory-starved code faster.
//!
//! Reduces are lowered to one of three shapes: a reduction variable
//! (single-key, per-partition partial accumulators), direct Context
//! indexing (statically shaped Context aggregation), or a hash table
//! (keyed reduce).

use crate::algebra::{Operator, Source};
use crate::analyzer::{Boundedness, HardwareProfile};
use crate::context::Context;
use crate::ir::UdfProgram;
use crate::planner::AbstractPlan;
use crate::relation::Schema;
use serde::Serialize;
use std::collections::HashMap;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Pipeline,
    OperatorAtATime,
    Tiled,
    Adaptive,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::Pipeline,
        Strategy::OperatorAtATime,
        Strategy::Tiled,
        Strategy::Adaptive,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Pipeline => "pipeline",
            Strategy::OperatorAtATime => "operator-at-a-time",
            Strategy::Tiled => "tiled",
            Strategy::Adaptive => "adaptive",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "pipeline" => Ok(Strategy::Pipeline),
            "operator" | "operator-at-a-time" => Ok(Strategy::OperatorAtATime),
            "tiled" => Ok(Strategy::Tiled),
            "adaptive" => Ok(Strategy::Adaptive),
            other => Err(format!(
                "unknown strategy `{other}` (expected pipeline|operator|tiled|adaptive)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    ScalarFused,
    LaneParallel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Materialization {
    None,
    Full,
    CacheBlock,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReduceLowering {
    None,
    ReductionVariable,
    DirectIndex,
    HashTable,
}

/// One per-tuple operator inside a stage.
#[derive(Debug, Clone)]
pub enum StageOp {
    Map(Arc<UdfProgram>),
    Filter(Arc<UdfProgram>),
    FlatMap(Arc<UdfProgram>),
    Reduce {
        udf: Arc<UdfProgram>,
        key: Option<Arc<UdfProgram>>,
    },
}

impl StageOp {
    pub fn udf(&self) -> &Arc<UdfProgram> {
        match self {
            StageOp::Map(u) | StageOp::Filter(u) | StageOp::FlatMap(u) => u,
            StageOp::Reduce { udf, .. } => udf,
        }
    }

    pub fn name(&self) -> &str {
        &self.udf().name
    }
}

#[derive(Debug, Clone)]
pub struct Stage {
    pub ops: Vec<StageOp>,
    pub mode: Mode,
    pub materialization: Materialization,
    pub reduce_lowering: ReduceLowering,
}

impl Stage {
    pub fn has_reduce(&self) -> bool {
        self.reduce_lowering != ReduceLowering::None
    }
}

pub type SlotId = usize;

#[derive(Debug, Clone)]
pub enum JoinKind {
    Cartesian,
    Theta(Arc<UdfProgram>),
    Union,
    Difference,
}

/// One sequentially executed step of the plan. Segments are internally
/// data-parallel; everything else is coordination or glue.
#[derive(Debug, Clone)]
pub enum Phase {
    Load {
        source: Arc<Source>,
        out: SlotId,
    },
    Segment {
        input: SlotId,
        stages: Vec<Stage>,
        out: SlotId,
        out_schema: Schema,
    },
    Join {
        kind: JoinKind,
        left: SlotId,
        right: SlotId,
        /// Planner swapped this join's inputs (smaller side first); the
        /// executor runs the outer loop over `right` so row enumeration
        /// order matches the unswapped workflow.
        outer_right: bool,
        out: SlotId,
        out_schema: Schema,
    },
    Update {
        udf: Arc<UdfProgram>,
    },
}

/// A synthesized, self-contained program: phases over relation slots, with
/// an optional loop re-running the first `loop_body_len` phases while the
/// invariant holds.
#[derive(Debug, Clone)]
pub struct ExecutionPlan {
    pub strategy: Strategy,
    pub phases: Vec<Phase>,
    pub invariant: Option<Arc<UdfProgram>>,
    /// Number of leading phases constituting the loop body (the whole plan
    /// when no loop is present).
    pub loop_body_len: usize,
    pub out_slot: SlotId,
    pub slot_count: usize,
    pub initial_context: Context,
    pub out_schema: Schema,
}

#[derive(Debug, Error)]
pub enum SynthesisError {
    #[error("workflow node {0} has no consumer and is not the head; dead operators are not supported")]
    DeadNode(usize),
}

/// Decide the aggregation shape for one reduce operator.
pub fn lower_reduce(udf: &UdfProgram, key: Option<&UdfProgram>) -> ReduceLowering {
    if key.is_some() {
        return ReduceLowering::HashTable;
    }
    if udf.acc.is_empty() && udf.writes_context() {
        // all output lands in statically shaped Context entries
        return ReduceLowering::DirectIndex;
    }
    ReduceLowering::ReductionVariable
}

/// Options modifying synthesis; used by the differential benchmarks to
/// force the hash-table lowering onto reduces that would normally get a
/// cheaper shape.
#[derive(Debug, Clone, Copy, Default)]
pub struct SynthesisOptions {
    pub force_hash_reduce: bool,
}

pub fn synthesize(
    plan: &AbstractPlan,
    strategy: Strategy,
    hw: &HardwareProfile,
) -> Result<ExecutionPlan, SynthesisError> {
    synthesize_with(plan, strategy, hw, SynthesisOptions::default())
}

pub fn synthesize_with(
    plan: &AbstractPlan,
    strategy: Strategy,
    hw: &HardwareProfile,
    opts: SynthesisOptions,
) -> Result<ExecutionPlan, SynthesisError> {
    let w = &plan.workflow;
    let mut consumers: Vec<usize> = vec![0; w.nodes.len()];
    for n in &w.nodes {
        for &i in &n.inputs {
            consumers[i] += 1;
        }
    }

    let mut phases: Vec<Phase> = Vec::new();
    let mut slot_of: HashMap<usize, SlotId> = HashMap::new();
    let mut slot_count = 0usize;
    let mut invariant: Option<Arc<UdfProgram>> = None;
    let mut loop_body_len: Option<usize> = None;
    // chains in construction: node index of current tail -> (input slot, ops)
    let mut pending: HashMap<usize, (SlotId, Vec<StageOp>)> = HashMap::new();

    let chainable = |op: &Operator| {
        matches!(
            op,
            Operator::Selection(_)
                | Operator::Projection(_)
                | Operator::Rename(_)
                | Operator::Map(_)
                | Operator::FlatMap(_)
                | Operator::Filter(_)
                | Operator::Reduce { .. }
        )
    };

    // The planner's rewrites (join reordering inserts fix-up projections at
    // the end of the node list) can leave nodes out of index order, so walk
    // the DAG topologically rather than by index.
    for idx in topo_order(w) {
        let node = &w.nodes[idx];
        match &node.op {
            Operator::Source { source, .. } => {
                let out = slot_count;
                slot_count += 1;
                phases.push(Phase::Load {
                    source: Arc::clone(source),
                    out,
                });
                slot_of.insert(idx, out);
            }
            Operator::Update(u) => {
                phases.push(Phase::Update {
                    udf: Arc::clone(u),
                });
                slot_of.insert(idx, slot_of[&node.inputs[0]]);
            }
            Operator::Loop(inv) => {
                invariant = Some(Arc::clone(inv));
                loop_body_len = Some(phases.len());
                slot_of.insert(idx, slot_of[&node.inputs[0]]);
            }
            Operator::Cartesian | Operator::ThetaJoin(_) | Operator::Union
            | Operator::Difference => {
                let kind = match &node.op {
                    Operator::Cartesian => JoinKind::Cartesian,
                    Operator::ThetaJoin(t) => JoinKind::Theta(Arc::clone(t)),
                    Operator::Union => JoinKind::Union,
                    _ => JoinKind::Difference,
                };
                let out = slot_count;
                slot_count += 1;
                phases.push(Phase::Join {
                    kind,
                    left: slot_of[&node.inputs[0]],
                    right: slot_of[&node.inputs[1]],
                    outer_right: plan.info.get(idx).is_some_and(|i| i.join_outer_right),
                    out,
                    out_schema: node.schema.clone(),
                });
                slot_of.insert(idx, out);
            }
            op if chainable(op) => {
                let input_node = node.inputs[0];
                let (input_slot, mut ops) = match pending.remove(&input_node) {
                    Some(chain) => chain,
                    None => (slot_of[&input_node], Vec::new()),
                };
                let stage_op = match op {
                    Operator::Selection(p) | Operator::Filter(p) => {
                        StageOp::Filter(Arc::clone(p))
                    }
                    Operator::Projection(u) | Operator::Rename(u) | Operator::Map(u) => {
                        StageOp::Map(Arc::clone(u))
                    }
                    Operator::FlatMap(u) => StageOp::FlatMap(Arc::clone(u)),
                    Operator::Reduce { udf, key } => StageOp::Reduce {
                        udf: Arc::clone(udf),
                        key: key.clone(),
                    },
                    _ => unreachable!(),
                };
                let is_reduce = matches!(stage_op, StageOp::Reduce { .. });
                ops.push(stage_op);
                // a reduce is a breaker; otherwise keep chaining while the
                // single consumer is chainable too
                let close = is_reduce
                    || idx == w.head
                    || !w
                        .nodes
                        .iter()
                        .enumerate()
                        .any(|(j, m)| m.inputs.contains(&idx) && chainable(&w.nodes[j].op));
                if close {
                    let out = slot_count;
                    slot_count += 1;
                    let stages = chop_into_stages(&ops, strategy, plan, hw, opts);
                    phases.push(Phase::Segment {
                        input: input_slot,
                        stages,
                        out,
                        out_schema: node.schema.clone(),
                    });
                    slot_of.insert(idx, out);
                } else {
                    pending.insert(idx, (input_slot, ops));
                }
            }
            _ => unreachable!(),
        }
    }

    let out_slot = slot_of[&w.head];
    let loop_body_len = loop_body_len.unwrap_or(phases.len());
    Ok(ExecutionPlan {
        strategy,
        phases,
        invariant,
        loop_body_len,
        out_slot,
        slot_count,
        initial_context: w.initial_context(),
        out_schema: w.head_schema().clone(),
    })
}

/// Deterministic topological order (lowest ready index first). Workflows
/// are index-ordered as built, but planner rewrites may append nodes that
/// earlier nodes consume.
fn topo_order(w: &crate::algebra::Workflow) -> Vec<usize> {
    let n = w.nodes.len();
    let mut indegree: Vec<usize> = w.nodes.iter().map(|m| m.inputs.len()).collect();
    let mut order = Vec::with_capacity(n);
    let mut done = vec![false; n];
    while order.len() < n {
        let next = (0..n)
            .find(|&i| !done[i] && indegree[i] == 0)
            .expect("workflow DAG is acyclic");
        done[next] = true;
        order.push(next);
        for (j, m) in w.nodes.iter().enumerate() {
            if !done[j] {
                indegree[j] -= m.inputs.iter().filter(|&&i| i == next).count();
            }
        }
    }
    order
}

/// Is this op a map whose UDF can run lane-parallel? Filters and flatmaps
/// never do — only maps (and trailing reduces, which stay scalar) are
/// optimized this way.
fn lane_capable(op: &StageOp, plan: &AbstractPlan, hw: &HardwareProfile) -> bool {
    if hw.lanes() <= 1 {
        return false;
    }
    match op {
        StageOp::Map(u) => stat_of(plan, u).map(|s| s.vectorizable).unwrap_or(false),
        _ => false,
    }
}

fn stat_of<'a>(
    plan: &'a AbstractPlan,
    udf: &Arc<UdfProgram>,
) -> Option<&'a crate::analyzer::FunctionStats> {
    plan.workflow
        .nodes
        .iter()
        .zip(&plan.info)
        .find(|(n, _)| n.op.udf().map(|u| Arc::ptr_eq(u, udf)).unwrap_or(false))
        .and_then(|(_, i)| i.stats.as_ref())
}

fn chop_into_stages(
    ops: &[StageOp],
    strategy: Strategy,
    plan: &AbstractPlan,
    hw: &HardwareProfile,
    opts: SynthesisOptions,
) -> Vec<Stage> {
    let lowering = |op: &StageOp| match op {
        StageOp::Reduce { udf, key } => {
            if opts.force_hash_reduce {
                ReduceLowering::HashTable
            } else {
                lower_reduce(udf, key.as_deref())
            }
        }
        _ => ReduceLowering::None,
    };

    match strategy {
        Strategy::Pipeline => {
            let red = ops.iter().map(lowering).find(|l| *l != ReduceLowering::None);
            vec![Stage {
                ops: ops.to_vec(),
                mode: Mode::ScalarFused,
                materialization: Materialization::None,
                reduce_lowering: red.unwrap_or(ReduceLowering::None),
            }]
        }
        Strategy::OperatorAtATime | Strategy::Tiled => {
            let mat = if strategy == Strategy::Tiled {
                Materialization::CacheBlock
            } else {
                Materialization::Full
            };
            ops.iter()
                .map(|op| Stage {
                    ops: vec![op.clone()],
                    mode: if lane_capable(op, plan, hw) {
                        Mode::LaneParallel
                    } else {
                        Mode::ScalarFused
                    },
                    materialization: mat,
                    reduce_lowering: lowering(op),
                })
                .collect()
        }
        Strategy::Adaptive => adaptive_stages(ops, plan, hw, lowering),
    }
}

fn adaptive_stages(
    ops: &[StageOp],
    plan: &AbstractPlan,
    hw: &HardwareProfile,
    lowering: impl Fn(&StageOp) -> ReduceLowering,
) -> Vec<Stage> {
    // split off a trailing reduce; it is appended to the last stage
    let (per_tuple, trailing_reduce) = match ops.last() {
        Some(StageOp::Reduce { .. }) => (&ops[..ops.len() - 1], ops.last().cloned()),
        _ => (ops, None),
    };

    // maximal runs of equal lane-capability, in plan order
    let mut runs: Vec<(bool, Vec<StageOp>)> = Vec::new();
    for op in per_tuple {
        let v = lane_capable(op, plan, hw);
        match runs.last_mut() {
            Some((rv, run)) if *rv == v => run.push(op.clone()),
            _ => runs.push((v, vec![op.clone()])),
        }
    }

    // exception: a vectorizable run opening the pipeline stays fused with
    // its successors when memory-bound — it gains nothing from lanes
    if let Some((true, run)) = runs.first() {
        let all_memory_bound = run.iter().all(|op| {
            stat_of(plan, op.udf())
                .map(|s| s.boundedness == Boundedness::MemoryBound)
                .unwrap_or(true)
        });
        if all_memory_bound && runs.len() > 1 {
            let (_, mut head) = runs.remove(0);
            let (_, next) = &mut runs[0];
            head.append(next);
            *next = head;
            runs[0].0 = false;
        }
    }

    let mut stages: Vec<Stage> = runs
        .into_iter()
        .map(|(v, run)| Stage {
            ops: run,
            mode: if v { Mode::LaneParallel } else { Mode::ScalarFused },
            materialization: Materialization::CacheBlock,
            reduce_lowering: ReduceLowering::None,
        })
        .collect();

    if let Some(red) = trailing_reduce {
        let red_lowering = lowering(&red);
        match stages.last_mut() {
            // reduces ride at the end of scalar map pipelines for locality
            Some(last) if last.mode == Mode::ScalarFused => {
                last.ops.push(red);
                last.reduce_lowering = red_lowering;
            }
            _ => stages.push(Stage {
                ops: vec![red],
                mode: Mode::ScalarFused,
                materialization: Materialization::CacheBlock,
                reduce_lowering: red_lowering,
            }),
        }
    }
    if stages.is_empty() {
        // chain was a bare reduce with nothing before it
        stages.push(Stage {
            ops: ops.to_vec(),
            mode: Mode::ScalarFused,
            materialization: Materialization::CacheBlock,
            reduce_lowering: ops.iter().map(&lowering).find(|l| *l != ReduceLowering::None)
                .unwrap_or(ReduceLowering::None),
        });
    }
    stages
}

/// Text rendering of the stage structure for `--explain-plan`.
pub fn explain(plan: &ExecutionPlan) -> String {
    let mut out = format!("strategy: {}\n", plan.strategy.name());
    for (i, ph) in plan.phases.iter().enumerate() {
        let looped = if i < plan.loop_body_len && plan.invariant.is_some() {
            " (looped)"
        } else {
            ""
        };
        match ph {
            Phase::Load { out: o, .. } => {
                out.push_str(&format!("phase {i}: load -> slot {o}{looped}\n"));
            }
            Phase::Update { udf } => {
                out.push_str(&format!("phase {i}: update {}{looped}\n", udf.name));
            }
            Phase::Join {
                kind, left, right, out: o, ..
            } => {
                let k = match kind {
                    JoinKind::Cartesian => "cartesian",
                    JoinKind::Theta(_) => "theta-join",
                    JoinKind::Union => "union",
                    JoinKind::Difference => "difference",
                };
                out.push_str(&format!(
                    "phase {i}: {k} slots ({left}, {right}) -> slot {o}{looped}\n"
                ));
            }
            Phase::Segment {
                input, stages, out: o, ..
            } => {
                out.push_str(&format!(
                    "phase {i}: segment slot {input} -> slot {o}{looped}\n"
                ));
                for (j, st) in stages.iter().enumerate() {
                    let names: Vec<&str> = st.ops.iter().map(|op| op.name()).collect();
                    out.push_str(&format!(
                        "  stage {j}: [{}] mode={:?} mat={:?} reduce={:?}\n",
                        names.join(", "),
                        st.mode,
                        st.materialization,
                        st.reduce_lowering
                    ));
                }
            }
        }
    }
    out
}

/// Serializable stage summary for JSON reports.
#[derive(Debug, Serialize)]
pub struct StageSummary {
    pub ops: Vec<String>,
    pub mode: Mode,
    pub materialization: Materialization,
    pub reduce_lowering: ReduceLowering,
}

pub fn stage_summaries(plan: &ExecutionPlan) -> Vec<StageSummary> {
    plan.phases
        .iter()
        .filter_map(|p| match p {
            Phase::Segment { stages, .. } => Some(stages),
            _ => None,
        })
        .flatten()
        .map(|s| StageSummary {
            ops: s.ops.iter().map(|o| o.name().to_string()).collect(),
            mode: s.mode,
            materialization: s.materialization,
            reduce_lowering: s.reduce_lowering,
        })
        .collect()
}
