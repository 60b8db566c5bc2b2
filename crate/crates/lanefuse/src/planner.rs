//! Logical planning: relational rewrites over a workflow plus per-node
//! annotations (pipeline-breaker flags, UDF statistics, cardinality
//! estimates).
//!
//! Two rewrites are applied, both semantics-preserving:
//!
//! 1. Predicate pushdown — a selection/filter moves below a map when every
//!    field the predicate reads is passed through that map unchanged; field
//!    indices are remapped through the pass-through mapping.
//! 2. Join input ordering — cartesian/θ-join inputs are swapped so the
//!    smaller estimated side drives the outer loop; a pass-through
//!    projection restores the original column order so results are
//!    unchanged.

use crate::algebra::{Operator, Workflow};
use crate::analyzer::{analyze, AnalyzerError, FunctionStats, HardwareProfile};
use crate::ir::{Instr, UdfProgram};
use crate::relation::Schema;
use std::collections::BTreeMap;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("workflow node {0} references a later node; the DAG is not topologically ordered")]
    NotTopological(usize),
    #[error(transparent)]
    Analyzer(#[from] AnalyzerError),
    #[error("internal rewrite produced an invalid UDF: {0}")]
    Rewrite(#[from] crate::ir::ContractViolation),
}

/// Per-node planning annotations, parallel to `workflow.nodes`.
#[derive(Debug, Clone)]
pub struct NodeInfo {
    pub breaker: bool,
    pub stats: Option<FunctionStats>,
    pub est_rows: f64,
    /// The join-ordering rewrite swapped this node's inputs; the executor
    /// must run its outer loop over the right input to keep row
    /// enumeration order identical to the unswapped workflow.
    pub join_outer_right: bool,
}

/// A rewritten workflow plus its annotations, ready for synthesis.
#[derive(Debug, Clone)]
pub struct AbstractPlan {
    pub workflow: Workflow,
    pub info: Vec<NodeInfo>,
}

/// Selectivity assumed for selections, filters, and θ-joins; there is no
/// statistics subsystem, and the estimate only drives join input ordering.
pub const DEFAULT_SELECTIVITY: f64 = 0.5;

pub fn plan(workflow: &Workflow, hw: &HardwareProfile) -> Result<AbstractPlan, PlanError> {
    let mut w = workflow.clone();
    for (i, n) in w.nodes.iter().enumerate() {
        if n.inputs.iter().any(|&j| j >= i) {
            return Err(PlanError::NotTopological(i));
        }
    }
    push_down_predicates(&mut w)?;
    let swapped_joins = order_join_inputs(&mut w)?;

    let est = estimate_rows(&w);
    let mut info = Vec::with_capacity(w.nodes.len());
    for (i, n) in w.nodes.iter().enumerate() {
        let stats = match n.op.udf() {
            Some(u) => Some(analyze(u, hw)?),
            None => None,
        };
        info.push(NodeInfo {
            breaker: n.op.is_breaker(),
            stats,
            est_rows: est[i],
            join_outer_right: swapped_joins.contains(&i),
        });
    }
    Ok(AbstractPlan { workflow: w, info })
}

/// Clone a UDF with every `load-field i` replaced by `load-field map[i]`
/// and the input row type switched to `new_input`.
fn remap_input_fields(
    p: &UdfProgram,
    map: &BTreeMap<usize, usize>,
    new_input: &[crate::scalar::ScalarType],
) -> Result<UdfProgram, crate::ir::ContractViolation> {
    let mut q = p.clone();
    q.input = new_input.to_vec();
    for ins in &mut q.body {
        if let Instr::LoadField(i) = ins {
            *i = map[i];
        }
    }
    q.validate()?;
    Ok(q)
}

fn read_fields(p: &UdfProgram) -> Vec<usize> {
    let mut fs: Vec<usize> = p
        .body
        .iter()
        .filter_map(|ins| match ins {
            Instr::LoadField(i) => Some(*i),
            _ => None,
        })
        .collect();
    fs.sort_unstable();
    fs.dedup();
    fs
}

/// Repeatedly swap selection/filter nodes below pass-through-compatible
/// maps until no more moves apply.
fn push_down_predicates(w: &mut Workflow) -> Result<(), PlanError> {
    loop {
        let mut moved = false;
        for s in 0..w.nodes.len() {
            let pred = match &w.nodes[s].op {
                Operator::Selection(p) => Operator::Selection(Arc::clone(p)),
                Operator::Filter(p) => Operator::Filter(Arc::clone(p)),
                _ => continue,
            };
            let m = w.nodes[s].inputs[0];
            let (map_udf, map_op): (_, fn(Arc<UdfProgram>) -> Operator) = match &w.nodes[m].op {
                Operator::Map(u) => (Arc::clone(u), Operator::Map),
                Operator::Projection(u) => (Arc::clone(u), Operator::Projection),
                Operator::Rename(u) => (Arc::clone(u), Operator::Rename),
                _ => continue,
            };
            // pass-through mapping: output field -> input field
            let passthrough: BTreeMap<usize, usize> =
                map_udf.passthrough_fields().into_iter().collect();
            let p = pred.udf().unwrap();
            if !read_fields(p).iter().all(|f| passthrough.contains_key(f)) {
                continue;
            }
            let remapped = Arc::new(remap_input_fields(p, &passthrough, &map_udf.input)?);
            let upstream = w.nodes[m].inputs[0];
            let map_schema = w.nodes[m].schema.clone();
            let below_schema = w.nodes[upstream].schema.clone();
            // position m becomes the pushed-down predicate, position s the map
            w.nodes[m].op = match pred {
                Operator::Selection(_) => Operator::Selection(remapped),
                _ => Operator::Filter(remapped),
            };
            w.nodes[m].schema = below_schema;
            w.nodes[s].op = map_op(map_udf);
            w.nodes[s].schema = map_schema;
            moved = true;
        }
        if !moved {
            return Ok(());
        }
    }
}

/// Put the smaller estimated input on the left of every cartesian/θ-join,
/// appending a pass-through projection to restore column order when a swap
/// happens.
fn order_join_inputs(w: &mut Workflow) -> Result<Vec<usize>, PlanError> {
    let mut est = estimate_rows(w);
    let mut swapped = Vec::new();
    let original_len = w.nodes.len();
    for j in 0..original_len {
        let is_join = matches!(
            w.nodes[j].op,
            Operator::Cartesian | Operator::ThetaJoin(_)
        );
        if !is_join || w.nodes[j].inputs.len() != 2 {
            continue;
        }
        let (l, r) = (w.nodes[j].inputs[0], w.nodes[j].inputs[1]);
        if est[l] <= est[r] {
            continue;
        }
        let left_schema = w.nodes[l].schema.clone();
        let right_schema = w.nodes[r].schema.clone();
        let left_arity = left_schema.arity();
        let right_arity = right_schema.arity();
        w.nodes[j].inputs.swap(0, 1);
        w.nodes[j].schema = Schema::concat(&right_schema, &left_schema);
        if let Operator::ThetaJoin(theta) = &w.nodes[j].op {
            // old layout (L, R) -> new layout (R, L)
            let mut map = BTreeMap::new();
            for i in 0..left_arity {
                map.insert(i, i + right_arity);
            }
            for i in 0..right_arity {
                map.insert(left_arity + i, i);
            }
            let new_input = w.nodes[j].schema.types();
            let remapped = remap_input_fields(theta, &map, &new_input)?;
            w.nodes[j].op = Operator::ThetaJoin(Arc::new(remapped));
        }
        // restore the (L, R) column order downstream
        let types = w.nodes[j].schema.types();
        let mut b = crate::ir::UdfBuilder::new("restore-order", crate::ir::Kind::Map)
            .input(&types)
            .output(
                &left_schema
                    .types()
                    .iter()
                    .chain(right_schema.types().iter())
                    .copied()
                    .collect::<Vec<_>>(),
            );
        for i in 0..left_arity {
            let v = b.load_field(right_arity + i);
            b.store_field(i, v);
        }
        for i in 0..right_arity {
            let v = b.load_field(i);
            b.store_field(left_arity + i, v);
        }
        let restore = Arc::new(b.build()?);
        // Splice the restoring projection in immediately, before any outer
        // join is examined: a downstream join must see the restored (L, R)
        // schema as its input, not the swapped one.
        w.nodes.push(crate::algebra::OperatorNode {
            op: Operator::Projection(restore),
            inputs: vec![j],
            schema: Schema::concat(&left_schema, &right_schema),
        });
        let new_idx = w.nodes.len() - 1;
        est.push(est[j]);
        for (i, n) in w.nodes.iter_mut().enumerate() {
            if i == new_idx {
                continue;
            }
            for inp in &mut n.inputs {
                if *inp == j {
                    *inp = new_idx;
                }
            }
        }
        if w.head == j {
            w.head = new_idx;
        }
        swapped.push(j);
    }
    Ok(swapped)
}

/// Cardinality estimates per node, in row counts. Sources read the file to
/// count rows; everything else is arithmetic over the inputs.
fn estimate_rows(w: &Workflow) -> Vec<f64> {
    let mut est = vec![0.0f64; w.nodes.len()];
    for (i, n) in w.nodes.iter().enumerate() {
        est[i] = match &n.op {
            Operator::Source { source, .. } => source.estimated_rows() as f64,
            Operator::Selection(_) | Operator::Filter(_) => {
                est[n.inputs[0]] * DEFAULT_SELECTIVITY
            }
            Operator::Projection(_) | Operator::Rename(_) | Operator::Map(_) => est[n.inputs[0]],
            Operator::FlatMap(u) => {
                let emits = u
                    .body
                    .iter()
                    .filter(|ins| matches!(ins, Instr::EmitTuple(_)))
                    .count();
                est[n.inputs[0]] * emits as f64
            }
            Operator::Cartesian => est[n.inputs[0]] * est[n.inputs[1]],
            Operator::ThetaJoin(_) => {
                est[n.inputs[0]] * est[n.inputs[1]] * DEFAULT_SELECTIVITY
            }
            Operator::Union => est[n.inputs[0]] + est[n.inputs[1]],
            Operator::Difference => est[n.inputs[0]],
            Operator::Reduce { key, .. } => {
                if key.is_some() {
                    est[n.inputs[0]].sqrt().max(1.0)
                } else {
                    1.0
                }
            }
            Operator::Update(_) | Operator::Loop(_) => est[n.inputs[0]],
        };
    }
    est
}

/// Human-readable stage listing for `plan --explain`.
pub fn explain(plan: &AbstractPlan) -> String {
    let mut out = String::new();
    for (i, n) in plan.workflow.nodes.iter().enumerate() {
        let info = &plan.info[i];
        let marker = if info.breaker { " [breaker]" } else { "" };
        let stats = match &info.stats {
            Some(s) => format!(
                "  udf={} vectorizable={} compute={:.2} load={:.2}",
                s.name,
                if s.vectorizable { "yes" } else { "no" },
                s.predicted_compute_cycles,
                s.load_cycles
            ),
            None => String::new(),
        };
        out.push_str(&format!(
            "#{i:<3} {:<12} inputs={:?} rows~{:.0}{}{}\n",
            n.op.name(),
            n.inputs,
            info.est_rows,
            marker,
            stats
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::context::Context;
    use crate::ir::{CmpOp, Kind, UdfBuilder};
    use crate::relation::Relation;
    use crate::scalar::{Scalar, ScalarType};

    fn src(vals: &[(f32, f32)]) -> Workflow {
        let rows: Vec<Vec<Scalar>> = vals
            .iter()
            .map(|(a, b)| vec![Scalar::F32(*a), Scalar::F32(*b)])
            .collect();
        Workflow::from_relation(Relation::from_rows(Schema::f32_cols(2), &rows), Context::new())
    }

    /// map keeps field 0, rewrites field 1
    fn half_passthrough_map() -> Arc<UdfProgram> {
        let mut b = UdfBuilder::new("shift", Kind::Map)
            .input(&[ScalarType::F32, ScalarType::F32])
            .output(&[ScalarType::F32, ScalarType::F32]);
        let a = b.load_field(0);
        let x = b.load_field(1);
        let one = b.const_f32(1.0);
        let y = b.add(x, one);
        b.store_field(0, a);
        b.store_field(1, y);
        Arc::new(b.build().unwrap())
    }

    fn pred_on(field: usize) -> Arc<UdfProgram> {
        let mut b = UdfBuilder::new("pos", Kind::Predicate)
            .input(&[ScalarType::F32, ScalarType::F32]);
        let x = b.load_field(field);
        let zero = b.const_f32(0.0);
        let c = b.cmp(CmpOp::Gt, x, zero);
        b.return_bool(c);
        Arc::new(b.build().unwrap())
    }

    #[test]
    fn pushdown_moves_selection_below_passthrough_map() {
        let w = src(&[(1.0, 2.0), (-1.0, 3.0)])
            .map(half_passthrough_map())
            .unwrap()
            .selection(pred_on(0))
            .unwrap();
        let p = plan(&w, &HardwareProfile::default()).unwrap();
        let names: Vec<&str> = p.workflow.nodes.iter().map(|n| n.op.name()).collect();
        assert_eq!(names, vec!["source", "selection", "map"]);
        // results unchanged
        let before = crate::reference::evaluate(&w).unwrap();
        let after = crate::reference::evaluate(&p.workflow).unwrap();
        assert!(before.relation.bit_eq(&after.relation));
    }

    #[test]
    fn pushdown_blocked_when_predicate_reads_computed_field() {
        let w = src(&[(1.0, 2.0)])
            .map(half_passthrough_map())
            .unwrap()
            .selection(pred_on(1))
            .unwrap();
        let p = plan(&w, &HardwareProfile::default()).unwrap();
        let names: Vec<&str> = p.workflow.nodes.iter().map(|n| n.op.name()).collect();
        assert_eq!(names, vec!["source", "map", "selection"]);
    }

    #[test]
    fn join_inputs_ordered_by_cardinality_with_order_restored() {
        let big = src(&[(1.0, 1.0), (2.0, 2.0), (3.0, 3.0)]);
        let small = src(&[(9.0, 9.0)]);
        let w = big.cartesian(small).unwrap();
        let before = crate::reference::evaluate(&w).unwrap();
        let p = plan(&w, &HardwareProfile::default()).unwrap();
        let join = p
            .workflow
            .nodes
            .iter()
            .find(|n| matches!(n.op, Operator::Cartesian))
            .unwrap();
        // smaller side now drives the join
        let left_est = p.info[join.inputs[0]].est_rows;
        let right_est = p.info[join.inputs[1]].est_rows;
        assert!(left_est <= right_est);
        let after = crate::reference::evaluate(&p.workflow).unwrap();
        assert!(before.relation.bit_eq(&after.relation), "column order must be restored");
    }

    #[test]
    fn breakers_marked_exactly_on_reduce_update_loop() {
        let mut rb = UdfBuilder::new("count", Kind::ReduceBody)
            .input(&[ScalarType::F32, ScalarType::F32])
            .acc_slots(&[ScalarType::I32]);
        rb.acc_increment(0);
        let w = src(&[(1.0, 2.0)])
            .map(half_passthrough_map())
            .unwrap()
            .reduce(Arc::new(rb.build().unwrap()), None)
            .unwrap();
        let p = plan(&w, &HardwareProfile::default()).unwrap();
        for (n, info) in p.workflow.nodes.iter().zip(&p.info) {
            assert_eq!(
                info.breaker,
                matches!(
                    n.op,
                    Operator::Reduce { .. } | Operator::Update(_) | Operator::Loop(_)
                ),
                "node {}",
                n.op.name()
            );
        }
    }
}
