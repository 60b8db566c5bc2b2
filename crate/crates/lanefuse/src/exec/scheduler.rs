//! The tiered, pull-based parallel runtime.
//!
//! One `execute` call plays all three coordination roles in-process: a
//! global cursor hands coarse block ranges to per-node local managers,
//! and executor threads pull cache-sized fine blocks from their node's
//! manager (a few blocks ahead, so a slow block never idles the queue).
//! Work distribution is therefore demand-driven: a slow executor simply
//! pulls fewer blocks.
//!
//! Determinism: fine block boundaries depend only on the input size and
//! `exec_block_bytes`, never on who processed what. Per-block outputs are
//! reassembled — and reduce partials merged — in ascending block order, so
//! results are bit-identical for every node/executor count.

use super::compile::{
    compile_udf, eval_columnar, eval_scalar, read_row, ColScratch, CompiledUdf,
};
use super::pool::{BufferPool, PoolStats};
use super::reduce::ReducePartial;
use crate::algebra::TupleSet;
use crate::context::Context;
use crate::ir::interp::{interpret, InterpError};
use crate::relation::{Column, Relation, RelationError, Schema};
use crate::scalar::{Scalar, ScalarType};
use crate::synthesizer::{
    ExecutionPlan, JoinKind, Materialization, Mode, Phase, ReduceLowering, Stage, StageOp,
};
use serde::Serialize;
use std::collections::{BTreeMap, VecDeque};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};
use thiserror::Error;

/// Shape of the simulated cluster: how many local managers (nodes), how
/// many executor threads each drives, and the two block granularities.
#[derive(Debug, Clone, Serialize)]
pub struct TierTopology {
    pub node_count: usize,
    pub executors_per_node: usize,
    /// Granularity at which local managers request rows from the global
    /// cursor.
    pub gm_block_bytes: usize,
    /// Cache-sized granularity at which executors pull from their manager.
    pub exec_block_bytes: usize,
    /// Coarse blocks a manager queues ahead of demand.
    pub prefetch_depth: usize,
}

impl TierTopology {
    pub fn single(executors: usize) -> Self {
        TierTopology {
            node_count: 1,
            executors_per_node: executors.max(1),
            ..TierTopology::default()
        }
    }

    pub fn executors(&self) -> usize {
        self.node_count * self.executors_per_node
    }

    pub fn validate(&self) -> Result<(), ExecError> {
        if self.node_count == 0
            || self.executors_per_node == 0
            || self.exec_block_bytes == 0
            || self.gm_block_bytes < self.exec_block_bytes
        {
            return Err(ExecError::BadTopology(format!(
                "need nodes > 0, executors > 0 and gm_block_bytes ({}) >= exec_block_bytes ({}) > 0",
                self.gm_block_bytes, self.exec_block_bytes
            )));
        }
        Ok(())
    }
}

impl Default for TierTopology {
    fn default() -> Self {
        TierTopology {
            node_count: 1,
            executors_per_node: 4,
            gm_block_bytes: 4 << 20,
            exec_block_bytes: 256 << 10,
            prefetch_depth: 2,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ExecOptions {
    /// Artificial per-block slowdown per global executor id; used by the
    /// load-balancing benchmarks to simulate a straggler.
    pub per_executor_delay: Vec<Duration>,
    /// Buffer pool cap in bytes (0 picks the default).
    pub pool_cap_bytes: usize,
}

const DEFAULT_POOL_CAP: usize = 256 << 20;

#[derive(Debug, Clone, Default, Serialize)]
pub struct ExecutorStats {
    pub node: usize,
    pub executor: usize,
    pub blocks: usize,
    pub rows: usize,
    pub busy_ms: f64,
    pub idle_ms: f64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct ExecStats {
    pub executors: Vec<ExecutorStats>,
    pub pool: PoolStats,
    pub loop_iterations: usize,
    pub blocks_total: usize,
    pub rows_total: usize,
}

#[derive(Debug, Error)]
pub enum ExecError {
    #[error("invalid topology: {0}")]
    BadTopology(String),
    #[error(transparent)]
    Interp(#[from] InterpError),
    #[error(transparent)]
    Relation(#[from] RelationError),
    #[error("loop did not converge within {0} iterations")]
    LoopLimit(usize),
    #[error("plan reads slot {0} before any phase wrote it")]
    EmptySlot(usize),
}

/// Run a synthesized plan to completion and return the result TupleSet
/// plus scheduler statistics. Blocking; safe to call concurrently on
/// distinct plans.
pub fn execute(
    plan: &ExecutionPlan,
    topo: &TierTopology,
    opts: &ExecOptions,
) -> Result<(TupleSet, ExecStats), ExecError> {
    topo.validate()?;
    let cap = if opts.pool_cap_bytes == 0 {
        DEFAULT_POOL_CAP
    } else {
        opts.pool_cap_bytes
    };
    let mut env = Env {
        topo,
        opts,
        pool: Arc::new(BufferPool::new(cap)),
        stats: ExecStats {
            executors: (0..topo.executors())
                .map(|id| ExecutorStats {
                    node: id / topo.executors_per_node,
                    executor: id % topo.executors_per_node,
                    ..ExecutorStats::default()
                })
                .collect(),
            ..ExecStats::default()
        },
        slots: vec![None; plan.slot_count],
        ctx: plan.initial_context.clone(),
    };

    let body = &plan.phases[..plan.loop_body_len];
    run_phases(body, &mut env)?;
    if let Some(inv) = &plan.invariant {
        let mut iterations = 0usize;
        loop {
            let ev = interpret(inv, None, &mut env.ctx)?;
            if ev.boolean != Some(true) {
                break;
            }
            iterations += 1;
            if iterations > crate::reference::MAX_LOOP_ITERATIONS {
                return Err(ExecError::LoopLimit(crate::reference::MAX_LOOP_ITERATIONS));
            }
            env.stats.loop_iterations = iterations;
            run_phases(body, &mut env)?;
        }
    }
    run_phases(&plan.phases[plan.loop_body_len..], &mut env)?;

    let rel = env.slots[plan.out_slot]
        .take()
        .ok_or(ExecError::EmptySlot(plan.out_slot))?;
    env.stats.pool = env.pool.stats();
    let rel = Arc::try_unwrap(rel).unwrap_or_else(|a| (*a).clone());
    Ok((TupleSet::new(rel, env.ctx), env.stats))
}

struct Env<'a> {
    topo: &'a TierTopology,
    opts: &'a ExecOptions,
    pool: Arc<BufferPool>,
    stats: ExecStats,
    slots: Vec<Option<Arc<Relation>>>,
    ctx: Context,
}

fn run_phases(phases: &[Phase], env: &mut Env) -> Result<(), ExecError> {
    for phase in phases {
        match phase {
            Phase::Load { source, out } => {
                env.slots[*out] = Some(source.materialize()?);
            }
            Phase::Update { udf } => {
                interpret(udf, None, &mut env.ctx)?;
            }
            Phase::Join {
                kind,
                left,
                right,
                outer_right,
                out,
                out_schema,
            } => {
                let l = take_slot(&env.slots, *left)?;
                let r = take_slot(&env.slots, *right)?;
                let rel = run_join(kind, &l, &r, *outer_right, out_schema, &mut env.ctx)?;
                env.slots[*out] = Some(Arc::new(rel));
            }
            Phase::Segment {
                input,
                stages,
                out,
                out_schema,
            } => {
                let rel = take_slot(&env.slots, *input)?;
                let result = run_segment(&rel, stages, out_schema, env)?;
                env.slots[*out] = Some(Arc::new(result));
            }
        }
    }
    Ok(())
}

fn take_slot(slots: &[Option<Arc<Relation>>], i: usize) -> Result<Arc<Relation>, ExecError> {
    slots[i].clone().ok_or(ExecError::EmptySlot(i))
}

/// Joins and set operators are coordination glue, not data-parallel
/// segments; they run in the driving thread with the same semantics as the
/// reference evaluator.
fn run_join(
    kind: &JoinKind,
    left: &Relation,
    right: &Relation,
    outer_right: bool,
    schema: &Schema,
    ctx: &mut Context,
) -> Result<Relation, ExecError> {
    // When the planner swapped this join's inputs, the right side is the
    // workflow's original left: run the outer loop over it so the product
    // is enumerated in exactly the order the unswapped workflow defines.
    let pairs = |lc: usize, rc: usize| -> Box<dyn Iterator<Item = (usize, usize)>> {
        if outer_right {
            Box::new((0..rc).flat_map(move |j| (0..lc).map(move |i| (i, j))))
        } else {
            Box::new((0..lc).flat_map(move |i| (0..rc).map(move |j| (i, j))))
        }
    };
    let mut out = Relation::empty(schema.clone());
    match kind {
        JoinKind::Cartesian => {
            for (i, j) in pairs(left.cardinality(), right.cardinality()) {
                let mut row = left.row(i);
                row.extend(right.row(j));
                out.push_row(&row);
            }
        }
        JoinKind::Theta(theta) => {
            for (i, j) in pairs(left.cardinality(), right.cardinality()) {
                let mut row = left.row(i);
                row.extend(right.row(j));
                let ev = interpret(theta, Some(&row), ctx)?;
                if ev.boolean == Some(true) {
                    out.push_row(&row);
                }
            }
        }
        JoinKind::Union => {
            out.append(left);
            out.append(right);
        }
        JoinKind::Difference => {
            let mut counts: BTreeMap<Vec<u32>, usize> = BTreeMap::new();
            for j in 0..right.cardinality() {
                *counts.entry(raw_row(right, j)).or_insert(0) += 1;
            }
            for i in 0..left.cardinality() {
                match counts.get_mut(&raw_row(left, i)) {
                    Some(c) if *c > 0 => *c -= 1,
                    _ => out.push_row(&left.row(i)),
                }
            }
        }
    }
    Ok(out)
}

fn raw_row(rel: &Relation, i: usize) -> Vec<u32> {
    rel.columns
        .iter()
        .map(|c| match c {
            Column::F32(v) => v[i].to_bits(),
            Column::I32(v) => v[i] as u32,
        })
        .collect()
}

// ---------------------------------------------------------------------
// segment execution
// ---------------------------------------------------------------------

enum CStageOp {
    Map(CompiledUdf),
    Filter(CompiledUdf),
    FlatMap(CompiledUdf),
    Reduce {
        body: CompiledUdf,
        key: Option<CompiledUdf>,
        lowering: ReduceLowering,
    },
}

enum CStage {
    /// Vectorizable maps evaluated column-at-a-time.
    Lane(Vec<CompiledUdf>),
    /// Per-tuple fused chain, optionally ending in a reduce.
    Chain(Vec<CStageOp>),
}

struct CompiledStage {
    stage: CStage,
    out_types: Vec<ScalarType>,
    full: bool,
}

impl CompiledStage {
    fn reduce(&self) -> Option<(&CompiledUdf, Option<&CompiledUdf>, ReduceLowering)> {
        match &self.stage {
            CStage::Chain(ops) => match ops.last() {
                Some(CStageOp::Reduce { body, key, lowering }) => {
                    Some((body, key.as_ref(), *lowering))
                }
                _ => None,
            },
            CStage::Lane(_) => None,
        }
    }
}

fn compile_stages(stages: &[Stage], mut in_types: Vec<ScalarType>, ctx: &Context) -> Vec<CompiledStage> {
    let mut out = Vec::with_capacity(stages.len());
    for stage in stages {
        let cstage = match stage.mode {
            Mode::LaneParallel => CStage::Lane(
                stage
                    .ops
                    .iter()
                    .map(|op| match op {
                        StageOp::Map(u) => compile_udf(u, ctx),
                        other => unreachable!(
                            "lane-parallel stages hold only maps, found {}",
                            other.name()
                        ),
                    })
                    .collect(),
            ),
            Mode::ScalarFused => CStage::Chain(
                stage
                    .ops
                    .iter()
                    .map(|op| match op {
                        StageOp::Map(u) => CStageOp::Map(compile_udf(u, ctx)),
                        StageOp::Filter(u) => CStageOp::Filter(compile_udf(u, ctx)),
                        StageOp::FlatMap(u) => CStageOp::FlatMap(compile_udf(u, ctx)),
                        StageOp::Reduce { udf, key } => CStageOp::Reduce {
                            body: compile_udf(udf, ctx),
                            key: key.as_ref().map(|k| compile_udf(k, ctx)),
                            lowering: stage.reduce_lowering,
                        },
                    })
                    .collect(),
            ),
        };
        // trace per-op output types to know what each stage materializes
        for op in &stage.ops {
            in_types = match op {
                StageOp::Map(u) | StageOp::FlatMap(u) => u.output.clone(),
                StageOp::Filter(_) => in_types,
                StageOp::Reduce { udf, key } => {
                    let mut t = Vec::new();
                    if key.is_some() {
                        t.push(ScalarType::I32);
                    }
                    t.extend(udf.acc.iter().copied());
                    t
                }
            };
        }
        out.push(CompiledStage {
            stage: cstage,
            out_types: in_types.clone(),
            full: stage.materialization == Materialization::Full,
        });
    }
    out
}

fn run_segment(
    input: &Relation,
    stages: &[Stage],
    out_schema: &Schema,
    env: &mut Env,
) -> Result<Relation, ExecError> {
    debug_assert!(stages
        .iter()
        .enumerate()
        .all(|(i, s)| !s.has_reduce() || i == stages.len() - 1));
    let compiled = compile_stages(stages, input.schema.types(), &env.ctx);

    if compiled.iter().any(|s| s.full) {
        // operator-at-a-time: every stage materializes its whole output
        // before the next starts
        let mut cur = input.clone();
        for (i, stage) in compiled.iter().enumerate() {
            let schema = if i == compiled.len() - 1 {
                out_schema.clone()
            } else {
                anon_schema(&stage.out_types)
            };
            cur = run_pass(&cur, std::slice::from_ref(stage), &schema, env)?;
        }
        Ok(cur)
    } else {
        run_pass(input, &compiled, out_schema, env)
    }
}

fn anon_schema(types: &[ScalarType]) -> Schema {
    let names: Vec<String> = (0..types.len()).map(|i| format!("f{i}")).collect();
    Schema::new(names.iter().map(String::as_str).zip(types.iter().copied()).collect())
}

struct BlockOut {
    idx: usize,
    cols: Option<Vec<Column>>,
    partial: Option<ReducePartial>,
    rows_in: usize,
}

/// One data-parallel pass over `input`: all executors pull blocks, run
/// `stages` over each, and the results are reassembled in block order.
fn run_pass(
    input: &Relation,
    stages: &[CompiledStage],
    out_schema: &Schema,
    env: &mut Env,
) -> Result<Relation, ExecError> {
    let topo = env.topo;
    let rows = input.cardinality();
    let row_bytes = input.schema.row_bytes().max(4);
    let fine_rows = (topo.exec_block_bytes / row_bytes).max(1);
    let fines_per_coarse = (topo.gm_block_bytes / topo.exec_block_bytes).max(1);
    let n_fine = rows.div_ceil(fine_rows);
    let n_coarse = n_fine.div_ceil(fines_per_coarse);

    let gm_cursor = AtomicUsize::new(0);
    let lm_queues: Vec<Mutex<VecDeque<usize>>> = (0..topo.node_count)
        .map(|_| Mutex::new(VecDeque::new()))
        .collect();
    let results: Mutex<Vec<BlockOut>> = Mutex::new(Vec::with_capacity(n_fine));
    let pool = &env.pool;

    let mut per_exec: Vec<ExecutorStats> = Vec::new();
    std::thread::scope(|s| {
        let mut handles = Vec::new();
        for id in 0..topo.executors() {
            let node = id / topo.executors_per_node;
            let lm = &lm_queues[node];
            let gm = &gm_cursor;
            let results = &results;
            let delay = env.opts.per_executor_delay.get(id).copied();
            handles.push(s.spawn(move || {
                let mut st = ExecutorStats {
                    node,
                    executor: id % topo.executors_per_node,
                    ..ExecutorStats::default()
                };
                let mut scratch = Scratch::default();
                let started = Instant::now();
                let mut busy = Duration::ZERO;
                loop {
                    let fine = pull_block(
                        lm,
                        gm,
                        n_coarse,
                        fines_per_coarse,
                        n_fine,
                        topo.prefetch_depth,
                    );
                    let Some(b) = fine else { break };
                    let t0 = Instant::now();
                    let start = b * fine_rows;
                    let end = (start + fine_rows).min(rows);
                    let out = run_block(stages, input, b, start, end, &mut scratch, pool);
                    if let Some(d) = delay {
                        std::thread::sleep(d);
                    }
                    busy += t0.elapsed();
                    st.blocks += 1;
                    st.rows += end - start;
                    results.lock().unwrap().push(out);
                }
                st.busy_ms = busy.as_secs_f64() * 1e3;
                st.idle_ms = (started.elapsed() - busy).as_secs_f64() * 1e3;
                st
            }));
        }
        for h in handles {
            // a panicking executor propagates here and aborts the job
            per_exec.push(h.join().expect("executor failed; aborting job"));
        }
    });

    for (agg, st) in env.stats.executors.iter_mut().zip(&per_exec) {
        agg.blocks += st.blocks;
        agg.rows += st.rows;
        agg.busy_ms += st.busy_ms;
        agg.idle_ms += st.idle_ms;
    }
    env.stats.blocks_total += n_fine;
    env.stats.rows_total += rows;

    let mut blocks = results.into_inner().unwrap();
    blocks.sort_unstable_by_key(|b| b.idx);
    debug_assert_eq!(blocks.iter().map(|b| b.rows_in).sum::<usize>(), rows);

    let last = stages.last().expect("segment has at least one stage");
    if let Some((body, key, lowering)) = last.reduce() {
        // barrier: merge partials in block order, apply Context deltas once
        let mut merged = ReducePartial::new(body, lowering, key.is_some());
        for b in &blocks {
            merged.merge(b.partial.as_ref().expect("reduce block partial"));
        }
        merged
            .context_deltas(body)
            .apply(&mut env.ctx)
            .expect("context keys validated at workflow build");
        let mut out = Relation::empty(out_schema.clone());
        if key.is_some() {
            for (k, accs) in merged.group_rows() {
                let mut row = vec![Scalar::I32(k)];
                row.extend(accs);
                out.push_row(&row);
            }
        } else if let Some(row) = merged.acc_row() {
            out.push_row(&row);
        }
        Ok(out)
    } else {
        let mut cols: Vec<Column> = out_schema
            .types()
            .iter()
            .map(|t| Column::with_capacity(*t, 0))
            .collect();
        for b in &mut blocks {
            let bc = b.cols.take().expect("non-reduce block output");
            for (dst, src) in cols.iter_mut().zip(&bc) {
                dst.extend_from(src);
            }
            release_cols(pool, bc);
        }
        Ok(Relation::from_columns(out_schema.clone(), cols)?)
    }
}

/// Pull the next fine block index for an executor: drain the node queue,
/// refilling it `prefetch_depth` coarse blocks at a time from the global
/// cursor.
fn pull_block(
    lm: &Mutex<VecDeque<usize>>,
    gm: &AtomicUsize,
    n_coarse: usize,
    fines_per_coarse: usize,
    n_fine: usize,
    prefetch_depth: usize,
) -> Option<usize> {
    let mut q = lm.lock().unwrap();
    if q.is_empty() {
        for _ in 0..prefetch_depth.max(1) {
            let c = gm.fetch_add(1, Ordering::Relaxed);
            if c >= n_coarse {
                break;
            }
            let lo = c * fines_per_coarse;
            let hi = (lo + fines_per_coarse).min(n_fine);
            q.extend(lo..hi);
        }
    }
    q.pop_front()
}

// ---------------------------------------------------------------------
// per-block stage evaluation
// ---------------------------------------------------------------------

#[derive(Default)]
struct Scratch {
    col: ColScratch,
    /// Per-chain-op register files and row buffers (indexed by op depth).
    regs: Vec<Vec<u32>>,
    rows: Vec<Vec<u32>>,
    emits: Vec<Vec<Vec<u32>>>,
    key_regs: Vec<u32>,
    key_row: Vec<u32>,
    key_emits: Vec<Vec<u32>>,
    row_buf: Vec<u32>,
}

fn run_block(
    stages: &[CompiledStage],
    input: &Relation,
    idx: usize,
    start: usize,
    end: usize,
    scratch: &mut Scratch,
    pool: &BufferPool,
) -> BlockOut {
    let mut cur: Option<Vec<Column>> = None;
    let mut partial: Option<ReducePartial> = None;
    for stage in stages {
        let (cols, at): (&[Column], usize) = match &cur {
            None => (&input.columns, start),
            Some(v) => (v.as_slice(), 0),
        };
        let n = match &cur {
            None => end - start,
            Some(v) => v.first().map_or(0, Column::len),
        };
        let next = match &stage.stage {
            CStage::Lane(udfs) => {
                let mut stage_cur: Option<Vec<Column>> = None;
                for c in udfs {
                    let mut out = alloc_cols(pool, &c.out_is_f32, n);
                    let (icols, iat) = match &stage_cur {
                        None => (cols, at),
                        Some(v) => (v.as_slice(), 0),
                    };
                    eval_columnar(c, icols, iat, n, &mut out, &mut scratch.col, None);
                    if let Some(prev) = stage_cur.replace(out) {
                        release_cols(pool, prev);
                    }
                }
                stage_cur
            }
            CStage::Chain(ops) if columnar_chain(ops) => {
                // Fast path: a chain of plain maps, optionally ending in an
                // unkeyed reduce, runs column-at-a-time. Filters, flatmaps
                // and keyed reduces fall through to the per-tuple path.
                let mut stage_cur: Option<Vec<Column>> = None;
                for op in ops {
                    let (icols, iat) = match &stage_cur {
                        None => (cols, at),
                        Some(v) => (v.as_slice(), 0),
                    };
                    match op {
                        CStageOp::Map(c) => {
                            let mut out = alloc_cols(pool, &c.out_is_f32, n);
                            eval_columnar(c, icols, iat, n, &mut out, &mut scratch.col, None);
                            if let Some(prev) = stage_cur.replace(out) {
                                release_cols(pool, prev);
                            }
                        }
                        CStageOp::Reduce { body, lowering, .. } => {
                            let mut p = ReducePartial::new(body, *lowering, false);
                            eval_columnar(
                                body,
                                icols,
                                iat,
                                n,
                                &mut [],
                                &mut scratch.col,
                                Some(&mut p),
                            );
                            partial = Some(p);
                            if let Some(prev) = stage_cur.take() {
                                release_cols(pool, prev);
                            }
                        }
                        _ => unreachable!("columnar_chain admits only maps and reduce"),
                    }
                }
                stage_cur
            }
            CStage::Chain(ops) if matches!(ops.last(), Some(CStageOp::Reduce { key: None, .. })) => {
                // Fused chain ending in an unkeyed reduce: rows stream
                // tuple-at-a-time through the (non-vectorizable) maps into
                // a block-local buffer, and the reduce sinks that buffer
                // column-at-a-time — the same accumulator shape a
                // standalone reduce stage uses, without the cross-stage
                // materialization a split plan pays.
                scratch.ensure(ops);
                let (body, lowering) = match ops.last() {
                    Some(CStageOp::Reduce { body, lowering, .. }) => (body, *lowering),
                    _ => unreachable!(),
                };
                let head = &ops[..ops.len() - 1];
                let mut buffered = if head.is_empty() {
                    None
                } else {
                    let mut sink = Some(alloc_cols(pool, &body.in_is_f32, n));
                    let mut no_partial = None;
                    for i in 0..n {
                        let mut row = std::mem::take(&mut scratch.row_buf);
                        read_row_raw(cols, at + i, &mut row);
                        feed(head, 0, &row, scratch, &mut sink, &mut no_partial);
                        scratch.row_buf = row;
                    }
                    sink
                };
                let (rcols, rat, rn) = match &buffered {
                    None => (cols, at, n),
                    Some(v) => (v.as_slice(), 0, v.first().map_or(0, Column::len)),
                };
                let mut p = ReducePartial::new(body, lowering, false);
                eval_columnar(body, rcols, rat, rn, &mut [], &mut scratch.col, Some(&mut p));
                partial = Some(p);
                if let Some(b) = buffered.take() {
                    release_cols(pool, b);
                }
                None
            }
            CStage::Chain(ops) => {
                scratch.ensure(ops);
                let has_reduce = matches!(ops.last(), Some(CStageOp::Reduce { .. }));
                if has_reduce {
                    let (body, key, lowering) = match ops.last() {
                        Some(CStageOp::Reduce { body, key, lowering }) => {
                            (body, key.as_ref(), *lowering)
                        }
                        _ => unreachable!(),
                    };
                    partial = Some(ReducePartial::new(body, lowering, key.is_some()));
                }
                let mut sink = if has_reduce {
                    None
                } else {
                    Some(typed_cols(pool, &stage.out_types, n))
                };
                for i in 0..n {
                    let mut row = std::mem::take(&mut scratch.row_buf);
                    read_row_raw(cols, at + i, &mut row);
                    feed(ops, 0, &row, scratch, &mut sink, &mut partial);
                    scratch.row_buf = row;
                }
                sink
            }
        };
        if let Some(prev) = cur {
            release_cols(pool, prev);
        }
        cur = next;
        if cur.is_none() {
            break; // reduce consumed the block
        }
    }
    BlockOut {
        idx,
        cols: cur,
        partial,
        rows_in: end - start,
    }
}

/// True when every op is a plain map except an optional trailing unkeyed
/// reduce — the shapes the columnar evaluator covers in full.
fn columnar_chain(ops: &[CStageOp]) -> bool {
    ops.iter().enumerate().all(|(i, op)| match op {
        // Only vectorizable maps qualify: a chain holding a map the
        // analyzer rejected models a scalar fused loop and must pay
        // tuple-at-a-time cost. Trailing reduces always sink columnar —
        // their per-row accumulator traffic is the same either way.
        CStageOp::Map(c) => c.vectorizable,
        CStageOp::Reduce { key: None, .. } => i == ops.len() - 1,
        _ => false,
    })
}

impl Scratch {
    fn ensure(&mut self, ops: &[CStageOp]) {
        if self.regs.len() < ops.len() {
            self.regs.resize(ops.len(), Vec::new());
            self.rows.resize(ops.len(), Vec::new());
            self.emits.resize(ops.len(), Vec::new());
        }
    }
}

/// Push one tuple through the fused chain starting at `depth`.
fn feed(
    ops: &[CStageOp],
    depth: usize,
    row: &[u32],
    scratch: &mut Scratch,
    sink: &mut Option<Vec<Column>>,
    partial: &mut Option<ReducePartial>,
) {
    if depth == ops.len() {
        push_raw_row(sink.as_mut().expect("chain without reduce has a sink"), row);
        return;
    }
    match &ops[depth] {
        CStageOp::Filter(c) => {
            let mut regs = std::mem::take(&mut scratch.regs[depth]);
            regs.clear();
            regs.resize(c.n_regs, 0);
            let keep = eval_scalar(c, row, &mut regs, &mut [], &mut scratch.key_emits, None);
            scratch.key_emits.clear();
            scratch.regs[depth] = regs;
            if keep {
                feed(ops, depth + 1, row, scratch, sink, partial);
            }
        }
        CStageOp::Map(c) => {
            let mut regs = std::mem::take(&mut scratch.regs[depth]);
            let mut out = std::mem::take(&mut scratch.rows[depth]);
            regs.clear();
            regs.resize(c.n_regs, 0);
            out.clear();
            out.resize(c.out_is_f32.len(), 0);
            eval_scalar(c, row, &mut regs, &mut out, &mut scratch.key_emits, None);
            scratch.key_emits.clear();
            scratch.regs[depth] = regs;
            feed(ops, depth + 1, &out, scratch, sink, partial);
            scratch.rows[depth] = out;
        }
        CStageOp::FlatMap(c) => {
            let mut regs = std::mem::take(&mut scratch.regs[depth]);
            let mut emits = std::mem::take(&mut scratch.emits[depth]);
            regs.clear();
            regs.resize(c.n_regs, 0);
            emits.clear();
            eval_scalar(c, row, &mut regs, &mut [], &mut emits, None);
            scratch.regs[depth] = regs;
            for t in &emits {
                feed(ops, depth + 1, t, scratch, sink, partial);
            }
            scratch.emits[depth] = emits;
        }
        CStageOp::Reduce { body, key, .. } => {
            let p = partial.as_mut().expect("reduce partial allocated");
            if let Some(k) = key {
                scratch.key_regs.clear();
                scratch.key_regs.resize(k.n_regs, 0);
                scratch.key_row.clear();
                scratch.key_row.resize(k.out_is_f32.len().max(1), 0);
                scratch.key_emits.clear();
                eval_scalar(
                    k,
                    row,
                    &mut scratch.key_regs,
                    &mut scratch.key_row,
                    &mut scratch.key_emits,
                    None,
                );
                let kv = if let Some(t) = scratch.key_emits.first() {
                    t[0] as i32
                } else {
                    scratch.key_row[0] as i32
                };
                p.set_key(kv);
            }
            let mut regs = std::mem::take(&mut scratch.regs[depth]);
            regs.clear();
            regs.resize(body.n_regs, 0);
            scratch.key_emits.clear();
            eval_scalar(body, row, &mut regs, &mut [], &mut scratch.key_emits, Some(p));
            scratch.regs[depth] = regs;
        }
    }
}

#[inline]
fn read_row_raw(cols: &[Column], i: usize, buf: &mut Vec<u32>) {
    read_row(cols, i, buf);
}

#[inline]
fn push_raw_row(cols: &mut [Column], row: &[u32]) {
    for (c, raw) in cols.iter_mut().zip(row) {
        match c {
            Column::F32(v) => v.push(f32::from_bits(*raw)),
            Column::I32(v) => v.push(*raw as i32),
        }
    }
}

// pooled column buffers: the pool stores raw u32 words; columns reuse them
// through layout-compatible casts

fn alloc_cols(pool: &BufferPool, is_f32: &[bool], rows_hint: usize) -> Vec<Column> {
    is_f32
        .iter()
        .map(|f| {
            let buf = pool.alloc(rows_hint);
            if *f {
                Column::F32(bytemuck::allocation::cast_vec(buf))
            } else {
                Column::I32(bytemuck::allocation::cast_vec(buf))
            }
        })
        .collect()
}

fn typed_cols(pool: &BufferPool, types: &[ScalarType], rows_hint: usize) -> Vec<Column> {
    let flags: Vec<bool> = types.iter().map(|t| *t == ScalarType::F32).collect();
    alloc_cols(pool, &flags, rows_hint)
}

fn release_cols(pool: &BufferPool, cols: Vec<Column>) {
    for c in cols {
        match c {
            Column::F32(v) => pool.release(bytemuck::allocation::cast_vec(v)),
            Column::I32(v) => pool.release(bytemuck::allocation::cast_vec(v)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::Workflow;
    use crate::analyzer::HardwareProfile;
    use crate::context::{ContextValue, Shape};
    use crate::ir::{CmpOp, Kind, UdfBuilder};
    use crate::planner;
    use crate::scalar::Scalar;
    use crate::synthesizer::{synthesize, Strategy};
    use std::sync::Arc;

    fn tiny_topo(executors: usize) -> TierTopology {
        // absurdly small blocks so even 100-row inputs split across workers
        TierTopology {
            node_count: 1,
            executors_per_node: executors,
            gm_block_bytes: 256,
            exec_block_bytes: 64,
            prefetch_depth: 2,
        }
    }

    fn run_all_ways(w: &Workflow) -> Vec<TupleSet> {
        let hw = HardwareProfile::default();
        let plan = planner::plan(w, &hw).unwrap();
        let mut out = Vec::new();
        for strat in Strategy::ALL {
            let ep = synthesize(&plan, strat, &hw).unwrap();
            for execs in [1, 2, 4] {
                let (ts, stats) =
                    execute(&ep, &tiny_topo(execs), &ExecOptions::default()).unwrap();
                assert_eq!(
                    stats.executors.len(),
                    execs,
                    "stats sized by executor count"
                );
                out.push(ts);
            }
        }
        out
    }

    fn assert_matches_reference(w: &Workflow) {
        let oracle = crate::reference::evaluate(w).unwrap();
        for ts in run_all_ways(w) {
            assert!(
                ts.relation.bit_eq(&oracle.relation),
                "relation diverged from reference\nruntime: {:?}\noracle: {:?}",
                ts.relation,
                oracle.relation
            );
            assert_eq!(ts.context, oracle.context, "context diverged");
        }
    }

    fn f32_source(n: usize, ctx: Context) -> Workflow {
        let schema = crate::relation::Schema::f32_cols(2);
        let rows: Vec<Vec<Scalar>> = (0..n)
            .map(|i| vec![Scalar::F32(i as f32), Scalar::F32((i % 7) as f32)])
            .collect();
        Workflow::from_relation(Relation::from_rows(schema, &rows), ctx)
    }

    #[test]
    fn map_filter_matches_reference_all_strategies() {
        let mut mb = UdfBuilder::new("affine", Kind::Map)
            .input(&[ScalarType::F32, ScalarType::F32])
            .output(&[ScalarType::F32, ScalarType::F32]);
        let x = mb.load_field(0);
        let y = mb.load_field(1);
        let s = mb.add(x, y);
        let p = mb.mul(x, y);
        mb.store_field(0, s);
        mb.store_field(1, p);
        let m = Arc::new(mb.build().unwrap());

        let mut pb = UdfBuilder::new("keep", Kind::Predicate)
            .input(&[ScalarType::F32, ScalarType::F32]);
        let x = pb.load_field(0);
        let t = pb.const_f32(40.0);
        let c = pb.cmp(CmpOp::Lt, x, t);
        pb.return_bool(c);
        let pred = Arc::new(pb.build().unwrap());

        let w = f32_source(100, Context::new())
            .map(m)
            .unwrap()
            .filter(pred)
            .unwrap();
        assert_matches_reference(&w);
    }

    #[test]
    fn flatmap_matches_reference() {
        // duplicate rows whose second field is zero, drop the rest
        let mut fb = UdfBuilder::new("dup0", Kind::FlatMap)
            .input(&[ScalarType::F32, ScalarType::F32])
            .output(&[ScalarType::F32]);
        let x = fb.load_field(0);
        let y = fb.load_field(1);
        let z = fb.const_f32(0.0);
        let c = fb.cmp(CmpOp::Eq, y, z);
        let zero_i = fb.const_i32(0);
        let one_i = fb.const_i32(1);
        let sel = fb.select(c, one_i, zero_i);
        let is_dup = fb.cmp(CmpOp::Eq, sel, one_i);
        // no branching: emit both copies only via two flat emits guarded by
        // the same predicate is impossible in straight-line code, so emit
        // x when y==0 and x+1 otherwise (still exercises emit machinery)
        let one_f = fb.const_f32(1.0);
        let xe = fb.add(x, one_f);
        let _ = is_dup;
        fb.emit(&[x]);
        fb.emit(&[xe]);
        let f = Arc::new(fb.build().unwrap());

        let w = f32_source(60, Context::new()).flatmap(f).unwrap();
        assert_matches_reference(&w);
    }

    #[test]
    fn unkeyed_reduce_with_context_matches_reference() {
        // per-cluster sums indexed by a data-dependent context index
        let mut rb = UdfBuilder::new("bin-sums", Kind::ReduceBody)
            .input(&[ScalarType::F32, ScalarType::F32])
            .ctx_write("sums", ScalarType::F32, Shape::Vector(7))
            .ctx_write("counts", ScalarType::I32, Shape::Vector(7));
        let x = rb.load_field(0);
        let bin_f = rb.load_field(1);
        let bin = rb.cast(ScalarType::I32, bin_f);
        rb.ctx_add("sums", &[crate::ir::IndexExpr::Value(bin)], x);
        rb.ctx_increment("counts", &[crate::ir::IndexExpr::Value(bin)]);
        let body = Arc::new(rb.build().unwrap());

        let ctx = Context::new()
            .with("sums", ContextValue::vector_f32(vec![0.0; 7]))
            .with("counts", ContextValue::vector_i32(vec![0; 7]));
        let w = f32_source(100, ctx).reduce(body, None).unwrap();
        assert_matches_reference(&w);
    }

    #[test]
    fn keyed_reduce_matches_reference() {
        let mut kb = UdfBuilder::new("by-bin", Kind::Key)
            .input(&[ScalarType::F32, ScalarType::F32])
            .output(&[ScalarType::I32]);
        let y = kb.load_field(1);
        let k = kb.cast(ScalarType::I32, y);
        kb.emit(&[k]);
        let key = Arc::new(kb.build().unwrap());

        let mut rb = UdfBuilder::new("sum-count", Kind::ReduceBody)
            .input(&[ScalarType::F32, ScalarType::F32])
            .acc_slots(&[ScalarType::F32, ScalarType::I32]);
        let x = rb.load_field(0);
        rb.acc_add(0, x);
        rb.acc_increment(1);
        let body = Arc::new(rb.build().unwrap());

        let w = f32_source(90, Context::new()).reduce(body, Some(key)).unwrap();
        assert_matches_reference(&w);
    }

    #[test]
    fn looped_reduce_update_matches_reference() {
        // accumulate the column into ctx each pass, 4 passes
        let mut rb = UdfBuilder::new("sum", Kind::ReduceBody)
            .input(&[ScalarType::F32, ScalarType::F32])
            .ctx_write("total", ScalarType::F32, Shape::Scalar);
        let x = rb.load_field(0);
        rb.ctx_add("total", &[], x);
        let body = Arc::new(rb.build().unwrap());

        let mut ub = UdfBuilder::new("tick", Kind::Update).ctx_write(
            "iter",
            ScalarType::I32,
            Shape::Scalar,
        );
        ub.ctx_increment("iter", &[]);
        let tick = Arc::new(ub.build().unwrap());

        let mut ib = UdfBuilder::new("under4", Kind::Invariant).ctx_read(
            "iter",
            ScalarType::I32,
            Shape::Scalar,
        );
        let i = ib.load_ctx("iter", &[]);
        let four = ib.const_i32(4);
        let c = ib.cmp(CmpOp::Lt, i, four);
        ib.return_bool(c);
        let inv = Arc::new(ib.build().unwrap());

        let ctx = Context::new()
            .with("total", ContextValue::scalar(Scalar::F32(0.0)))
            .with("iter", ContextValue::scalar(Scalar::I32(0)));
        let w = f32_source(32, ctx)
            .reduce(body, None)
            .unwrap()
            .update(tick)
            .unwrap()
            .loop_while(inv)
            .unwrap();
        assert_matches_reference(&w);
    }

    #[test]
    fn rows_processed_covers_input_exactly() {
        let mut mb = UdfBuilder::new("id", Kind::Map)
            .input(&[ScalarType::F32, ScalarType::F32])
            .output(&[ScalarType::F32, ScalarType::F32]);
        let x = mb.load_field(0);
        let y = mb.load_field(1);
        mb.store_field(0, x);
        mb.store_field(1, y);
        let m = Arc::new(mb.build().unwrap());
        let w = f32_source(257, Context::new()).map(m).unwrap();

        let hw = HardwareProfile::default();
        let plan = planner::plan(&w, &hw).unwrap();
        let ep = synthesize(&plan, Strategy::Pipeline, &hw).unwrap();
        let (_, stats) = execute(&ep, &tiny_topo(3), &ExecOptions::default()).unwrap();
        let rows: usize = stats.executors.iter().map(|e| e.rows).sum();
        assert_eq!(rows, 257);
        assert_eq!(stats.rows_total, 257);
    }
}
