//! Sequential reference evaluator for workflows.
//!
//! Executes the logical DAG operator-by-operator, tuple-by-tuple, using the
//! UDF interpreter. Deliberately slow and obvious: this is the oracle the
//! parallel runtime and every synthesis strategy are differentially tested
//! against.

use crate::algebra::{Operator, TupleSet, Workflow};
use crate::context::Context;
use crate::ir::interp::{interpret, InterpError};
use crate::ir::UdfProgram;
use crate::relation::{Relation, RelationError, Schema};
use crate::scalar::Scalar;
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Interp(#[from] InterpError),
    #[error(transparent)]
    Relation(#[from] RelationError),
    #[error("loop did not converge within {0} iterations")]
    LoopLimit(usize),
}

/// Iteration cap for `loop` so a broken invariant cannot spin forever.
pub const MAX_LOOP_ITERATIONS: usize = 10_000;

/// Evaluate a workflow sequentially and return the resulting TupleSet.
pub fn evaluate(workflow: &Workflow) -> Result<TupleSet, EvalError> {
    let mut ctx = workflow.initial_context();
    let rel = eval_node(workflow, workflow.head, &mut ctx)?;
    Ok(TupleSet::new(rel, ctx))
}

fn eval_node(w: &Workflow, node: usize, ctx: &mut Context) -> Result<Relation, EvalError> {
    let n = &w.nodes[node];
    match &n.op {
        Operator::Source { source, .. } => Ok((*source.materialize()?).clone()),
        Operator::Selection(p) | Operator::Filter(p) => {
            let input = eval_node(w, n.inputs[0], ctx)?;
            let mut out = Relation::empty(n.schema.clone());
            for i in 0..input.cardinality() {
                let row = input.row(i);
                let ev = interpret(p, Some(&row), ctx)?;
                if ev.boolean == Some(true) {
                    out.push_row(&row);
                }
            }
            Ok(out)
        }
        Operator::Projection(u) | Operator::Rename(u) | Operator::Map(u) => {
            let input = eval_node(w, n.inputs[0], ctx)?;
            apply_map(u, &input, &n.schema, ctx)
        }
        Operator::FlatMap(u) => {
            let input = eval_node(w, n.inputs[0], ctx)?;
            let mut out = Relation::empty(n.schema.clone());
            for i in 0..input.cardinality() {
                let ev = interpret(u, Some(&input.row(i)), ctx)?;
                for t in &ev.tuples {
                    out.push_row(t);
                }
            }
            Ok(out)
        }
        Operator::Cartesian => {
            let left = eval_node(w, n.inputs[0], ctx)?;
            let right = eval_node(w, n.inputs[1], ctx)?;
            let mut out = Relation::empty(n.schema.clone());
            for i in 0..left.cardinality() {
                let l = left.row(i);
                for j in 0..right.cardinality() {
                    let mut row = l.clone();
                    row.extend(right.row(j));
                    out.push_row(&row);
                }
            }
            Ok(out)
        }
        Operator::ThetaJoin(theta) => {
            let left = eval_node(w, n.inputs[0], ctx)?;
            let right = eval_node(w, n.inputs[1], ctx)?;
            let mut out = Relation::empty(n.schema.clone());
            for i in 0..left.cardinality() {
                let l = left.row(i);
                for j in 0..right.cardinality() {
                    let mut row = l.clone();
                    row.extend(right.row(j));
                    let ev = interpret(theta, Some(&row), ctx)?;
                    if ev.boolean == Some(true) {
                        out.push_row(&row);
                    }
                }
            }
            Ok(out)
        }
        Operator::Union => {
            // Bag semantics: concatenation, left rows first.
            let mut left = eval_node(w, n.inputs[0], ctx)?;
            let right = eval_node(w, n.inputs[1], ctx)?;
            left.append(&right);
            Ok(left)
        }
        Operator::Difference => {
            // Bag difference: each right row cancels one matching left row.
            let left = eval_node(w, n.inputs[0], ctx)?;
            let right = eval_node(w, n.inputs[1], ctx)?;
            let mut counts: BTreeMap<Vec<u32>, usize> = BTreeMap::new();
            for j in 0..right.cardinality() {
                *counts.entry(row_bits(&right.row(j))).or_insert(0) += 1;
            }
            let mut out = Relation::empty(n.schema.clone());
            for i in 0..left.cardinality() {
                let row = left.row(i);
                match counts.get_mut(&row_bits(&row)) {
                    Some(c) if *c > 0 => *c -= 1,
                    _ => out.push_row(&row),
                }
            }
            Ok(out)
        }
        Operator::Reduce { udf, key } => {
            let input = eval_node(w, n.inputs[0], ctx)?;
            eval_reduce(udf, key.as_deref(), &input, &n.schema, ctx)
        }
        Operator::Update(u) => {
            let input = eval_node(w, n.inputs[0], ctx)?;
            interpret(u, None, ctx)?;
            Ok(input)
        }
        Operator::Loop(inv) => {
            // The body (everything upstream) runs once, then repeats while
            // the invariant holds. The Context carries state across
            // iterations; the relation is re-derived each time.
            let mut rel = eval_node(w, n.inputs[0], ctx)?;
            for _ in 0..MAX_LOOP_ITERATIONS {
                let ev = interpret(inv, None, ctx)?;
                if ev.boolean != Some(true) {
                    return Ok(rel);
                }
                rel = eval_node(w, n.inputs[0], ctx)?;
            }
            Err(EvalError::LoopLimit(MAX_LOOP_ITERATIONS))
        }
    }
}

fn apply_map(
    u: &UdfProgram,
    input: &Relation,
    schema: &Schema,
    ctx: &mut Context,
) -> Result<Relation, EvalError> {
    let mut out = Relation::empty(schema.clone());
    for i in 0..input.cardinality() {
        let ev = interpret(u, Some(&input.row(i)), ctx)?;
        debug_assert_eq!(ev.tuples.len(), 1);
        out.push_row(&ev.tuples[0]);
    }
    Ok(out)
}

fn eval_reduce(
    udf: &UdfProgram,
    key: Option<&UdfProgram>,
    input: &Relation,
    schema: &Schema,
    ctx: &mut Context,
) -> Result<Relation, EvalError> {
    let mut out = Relation::empty(schema.clone());
    match key {
        None => {
            // Single group: fold every tuple into one accumulator vector and
            // one staged update set, applied when the reduce completes.
            let mut accs: Vec<Scalar> = udf.acc_init();
            let mut staged = crate::context::UpdateSet::new();
            for i in 0..input.cardinality() {
                let ev = interpret(udf, Some(&input.row(i)), ctx)?;
                for (slot, op) in ev.acc_deltas {
                    apply_acc(&mut accs, slot, op);
                }
                staged.extend(ev.deltas);
            }
            staged
                .apply(ctx)
                .expect("context keys validated at workflow build");
            if !accs.is_empty() {
                out.push_row(&accs);
            }
            Ok(out)
        }
        Some(k) => {
            // Keyed groups, output sorted by key for determinism.
            let mut groups: BTreeMap<i32, Vec<Scalar>> = BTreeMap::new();
            let mut staged = crate::context::UpdateSet::new();
            for i in 0..input.cardinality() {
                let row = input.row(i);
                let kv = interpret(k, Some(&row), ctx)?;
                let kid = kv.tuples[0][0].as_i32();
                let accs = groups.entry(kid).or_insert_with(|| udf.acc_init());
                let ev = interpret(udf, Some(&row), ctx)?;
                for (slot, op) in ev.acc_deltas {
                    apply_acc(accs, slot, op);
                }
                staged.extend(ev.deltas);
            }
            staged
                .apply(ctx)
                .expect("context keys validated at workflow build");
            for (kid, accs) in groups {
                let mut row = vec![Scalar::I32(kid)];
                row.extend(accs);
                out.push_row(&row);
            }
            Ok(out)
        }
    }
}

fn apply_acc(accs: &mut [Scalar], slot: usize, op: crate::context::DeltaOp) {
    use crate::context::DeltaOp;
    match (&mut accs[slot], op) {
        (Scalar::F32(a), DeltaOp::Add(v)) => *a += v.as_f32(),
        (Scalar::I32(a), DeltaOp::Add(v)) => *a = a.wrapping_add(v.as_i32()),
        (Scalar::F32(a), DeltaOp::Increment) => *a += 1.0,
        (Scalar::I32(a), DeltaOp::Increment) => *a = a.wrapping_add(1),
    }
}

fn row_bits(row: &[Scalar]) -> Vec<u32> {
    row.iter()
        .map(|s| match s {
            Scalar::F32(v) => v.to_bits(),
            Scalar::I32(v) => *v as u32,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::context::{Context, ContextValue, Shape};
    use crate::ir::{CmpOp, Kind, UdfBuilder};
    use crate::relation::Schema;
    use crate::scalar::ScalarType;
    use std::sync::Arc;

    fn f32_rows(vals: &[&[f32]]) -> Relation {
        let schema = Schema::f32_cols(vals[0].len());
        let rows: Vec<Vec<Scalar>> = vals
            .iter()
            .map(|r| r.iter().map(|v| Scalar::F32(*v)).collect())
            .collect();
        Relation::from_rows(schema, &rows)
    }

    #[test]
    fn map_then_filter_chain() {
        // double every value, keep those > 3
        let mut mb = UdfBuilder::new("double", Kind::Map)
            .input(&[ScalarType::F32])
            .output(&[ScalarType::F32]);
        let x = mb.load_field(0);
        let two = mb.const_f32(2.0);
        let d = mb.mul(x, two);
        mb.store_field(0, d);
        let double = Arc::new(mb.build().unwrap());

        let mut pb = UdfBuilder::new("gt3", Kind::Predicate).input(&[ScalarType::F32]);
        let x = pb.load_field(0);
        let three = pb.const_f32(3.0);
        let c = pb.cmp(CmpOp::Gt, x, three);
        pb.return_bool(c);
        let pred = Arc::new(pb.build().unwrap());

        let w = Workflow::from_relation(f32_rows(&[&[1.0], &[2.0], &[3.0]]), Context::new())
            .map(double)
            .unwrap()
            .filter(pred)
            .unwrap();
        let ts = evaluate(&w).unwrap();
        assert_eq!(ts.relation.cardinality(), 2);
        assert_eq!(ts.relation.row(0)[0].as_f32(), 4.0);
        assert_eq!(ts.relation.row(1)[0].as_f32(), 6.0);
    }

    #[test]
    fn cartesian_cardinality_product() {
        let a = Workflow::from_relation(f32_rows(&[&[1.0], &[2.0]]), Context::new());
        let b = Workflow::from_relation(f32_rows(&[&[10.0], &[20.0], &[30.0]]), Context::new());
        let w = a.cartesian(b).unwrap();
        let ts = evaluate(&w).unwrap();
        assert_eq!(ts.relation.cardinality(), 6);
        assert_eq!(ts.relation.schema.arity(), 2);
        // first row pairs first-left with first-right
        assert_eq!(ts.relation.row(0), vec![Scalar::F32(1.0), Scalar::F32(10.0)]);
    }

    #[test]
    fn bag_difference_cancels_one_per_match() {
        let a = Workflow::from_relation(f32_rows(&[&[1.0], &[1.0], &[2.0]]), Context::new());
        let b = Workflow::from_relation(f32_rows(&[&[1.0]]), Context::new());
        let w = a.difference(b).unwrap();
        let ts = evaluate(&w).unwrap();
        assert_eq!(ts.relation.cardinality(), 2);
        assert_eq!(ts.relation.row(0)[0].as_f32(), 1.0);
        assert_eq!(ts.relation.row(1)[0].as_f32(), 2.0);
    }

    #[test]
    fn keyed_reduce_counts_per_group() {
        // key = value as i32, acc = count
        let mut kb = UdfBuilder::new("asint", Kind::Key)
            .input(&[ScalarType::F32])
            .output(&[ScalarType::I32]);
        let x = kb.load_field(0);
        let k = kb.cast(ScalarType::I32, x);
        kb.emit(&[k]);
        let key = Arc::new(kb.build().unwrap());

        let mut rb = UdfBuilder::new("count", Kind::ReduceBody)
            .input(&[ScalarType::F32])
            .acc_slots(&[ScalarType::I32]);
        rb.acc_increment(0);
        let body = Arc::new(rb.build().unwrap());

        let w = Workflow::from_relation(
            f32_rows(&[&[1.0], &[2.0], &[1.0], &[1.0]]),
            Context::new(),
        )
        .reduce(body, Some(key))
        .unwrap();
        let ts = evaluate(&w).unwrap();
        assert_eq!(ts.relation.cardinality(), 2);
        assert_eq!(ts.relation.row(0), vec![Scalar::I32(1), Scalar::I32(3)]);
        assert_eq!(ts.relation.row(1), vec![Scalar::I32(2), Scalar::I32(1)]);
    }

    #[test]
    fn loop_runs_until_invariant_fails() {
        // sum the column into ctx each pass; stop after 3 iterations
        let mut rb = UdfBuilder::new("sum", Kind::ReduceBody)
            .input(&[ScalarType::F32])
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

        let mut ib = UdfBuilder::new("under3", Kind::Invariant).ctx_read(
            "iter",
            ScalarType::I32,
            Shape::Scalar,
        );
        let i = ib.load_ctx("iter", &[]);
        let three = ib.const_i32(3);
        let c = ib.cmp(CmpOp::Lt, i, three);
        ib.return_bool(c);
        let inv = Arc::new(ib.build().unwrap());

        let ctx = Context::new()
            .with("total", ContextValue::scalar(Scalar::F32(0.0)))
            .with("iter", ContextValue::scalar(Scalar::I32(0)));
        let w = Workflow::from_relation(f32_rows(&[&[1.0], &[2.0]]), ctx)
            .reduce(body, None)
            .unwrap()
            .update(tick)
            .unwrap()
            .loop_while(inv)
            .unwrap();
        let ts = evaluate(&w).unwrap();
        assert_eq!(ts.context.get("iter").unwrap().get_flat(0).as_i32(), 3);
        assert_eq!(ts.context.get("total").unwrap().get_flat(0).as_f32(), 9.0);
    }
}
