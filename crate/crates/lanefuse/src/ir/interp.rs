//! Strict sequential evaluation of a validated UDF body.
//!
//! This is the correctness oracle for every synthesized execution strategy:
//! identical inputs give bit-identical outputs. Division by zero follows IEEE
//! for floats and yields 0 for integers; it never traps. Integer arithmetic
//! wraps so results stay permutation-independent.

use super::{CmpOp, IndexExpr, Instr, Kind, UdfProgram, ValueId};
use crate::context::{Context, DeltaOp, UpdateSet};
use crate::scalar::Scalar;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum InterpError {
    #[error("{udf}: context key `{key}` missing from the runtime Context")]
    MissingContextKey { udf: String, key: String },
    #[error("{udf}: runtime index {index:?} out of range for `{key}`")]
    IndexOutOfRange {
        udf: String,
        key: String,
        index: Vec<i64>,
    },
    #[error("{udf}: map UDF produced no value for output field {field}")]
    MissingOutputField { udf: String, field: usize },
}

/// Everything one invocation of a UDF produced.
#[derive(Debug, Default, Clone)]
pub struct UdfEval {
    /// Emitted tuples: the single stored tuple for maps, each `emit-tuple`
    /// for flatmaps and keys.
    pub tuples: Vec<Vec<Scalar>>,
    /// Predicate / invariant result.
    pub boolean: Option<bool>,
    /// Staged Context deltas (reduce bodies).
    pub deltas: UpdateSet,
    /// Staged accumulator deltas (reduce bodies): (slot, op).
    pub acc_deltas: Vec<(usize, DeltaOp)>,
}

fn wrap_div(a: i32, b: i32) -> i32 {
    if b == 0 {
        0
    } else {
        a.wrapping_div(b)
    }
}

pub(crate) fn cmp_f32(op: CmpOp, a: f32, b: f32) -> bool {
    match op {
        CmpOp::Lt => a < b,
        CmpOp::Le => a <= b,
        CmpOp::Eq => a == b,
        CmpOp::Ne => a != b,
        CmpOp::Ge => a >= b,
        CmpOp::Gt => a > b,
    }
}

pub(crate) fn cmp_i32(op: CmpOp, a: i32, b: i32) -> bool {
    match op {
        CmpOp::Lt => a < b,
        CmpOp::Le => a <= b,
        CmpOp::Eq => a == b,
        CmpOp::Ne => a != b,
        CmpOp::Ge => a >= b,
        CmpOp::Gt => a > b,
    }
}

/// Argmin over f32 candidates; ties (and leading NaNs) keep the lowest index.
pub(crate) fn min_select(vals: &[f32]) -> i32 {
    let mut best = 0usize;
    for (i, v) in vals.iter().enumerate().skip(1) {
        if *v < vals[best] {
            best = i;
        }
    }
    best as i32
}

/// Interpret one invocation. `row` must be `Some` for tuple-consuming kinds
/// and is ignored otherwise. Update UDFs mutate `ctx` in place; every other
/// kind treats it as read-only.
pub fn interpret(
    p: &UdfProgram,
    row: Option<&[Scalar]>,
    ctx: &mut Context,
) -> Result<UdfEval, InterpError> {
    let mut regs: Vec<Scalar> = vec![Scalar::I32(0); p.body.len()];
    let mut out = UdfEval::default();
    let mut stored: Vec<Option<Scalar>> = vec![None; p.output.len()];

    let resolve_index = |p: &UdfProgram,
                         regs: &[Scalar],
                         ctx: &Context,
                         key: &str,
                         index: &[IndexExpr]|
     -> Result<usize, InterpError> {
        let entry = ctx.get(key).ok_or_else(|| InterpError::MissingContextKey {
            udf: p.name.clone(),
            key: key.to_string(),
        })?;
        let raw: Vec<i64> = index
            .iter()
            .map(|e| match e {
                IndexExpr::Const(i) => *i as i64,
                IndexExpr::Value(v) => regs[v.idx()].as_i32() as i64,
            })
            .collect();
        if raw.iter().any(|i| *i < 0) {
            return Err(InterpError::IndexOutOfRange {
                udf: p.name.clone(),
                key: key.to_string(),
                index: raw,
            });
        }
        let idx: Vec<usize> = raw.iter().map(|i| *i as usize).collect();
        entry
            .shape
            .flat_index(&idx)
            .ok_or_else(|| InterpError::IndexOutOfRange {
                udf: p.name.clone(),
                key: key.to_string(),
                index: raw,
            })
    };

    for (at, ins) in p.body.iter().enumerate() {
        let val = |v: ValueId| regs[v.idx()];
        match ins {
            Instr::Const(s) => regs[at] = *s,
            Instr::Cast(to, v) => {
                regs[at] = match to {
                    crate::scalar::ScalarType::F32 => Scalar::F32(val(*v).as_f32()),
                    crate::scalar::ScalarType::I32 => Scalar::I32(val(*v).as_i32()),
                }
            }
            Instr::LoadField(i) => {
                regs[at] = row.expect("tuple-consuming UDF invoked without a row")[*i];
            }
            Instr::StoreField(i, v) => stored[*i] = Some(val(*v)),
            Instr::LoadContext { key, index } => {
                let flat = resolve_index(p, &regs, ctx, key, index)?;
                regs[at] = ctx.get(key).unwrap().get_flat(flat);
            }
            Instr::ContextStore { key, index, value } => {
                let flat = resolve_index(p, &regs, ctx, key, index)?;
                let v = val(*value);
                ctx.get_mut(key).unwrap().set_flat(flat, v);
            }
            Instr::ContextAdd { key, index, value } => {
                let flat = resolve_index(p, &regs, ctx, key, index)?;
                let v = val(*value);
                if p.kind == Kind::Update {
                    ctx.get_mut(key).unwrap().add_flat(flat, v);
                } else {
                    out.deltas.push(key, flat, DeltaOp::Add(v));
                }
            }
            Instr::ContextIncrement { key, index } => {
                let flat = resolve_index(p, &regs, ctx, key, index)?;
                if p.kind == Kind::Update {
                    ctx.get_mut(key).unwrap().add_flat(flat, Scalar::I32(1));
                } else {
                    out.deltas.push(key, flat, DeltaOp::Increment);
                }
            }
            Instr::AccAdd { slot, value } => {
                out.acc_deltas.push((*slot, DeltaOp::Add(val(*value))));
            }
            Instr::AccIncrement { slot } => {
                out.acc_deltas.push((*slot, DeltaOp::Increment));
            }
            Instr::Add(a, b) => {
                regs[at] = match (val(*a), val(*b)) {
                    (Scalar::F32(x), Scalar::F32(y)) => Scalar::F32(x + y),
                    (Scalar::I32(x), Scalar::I32(y)) => Scalar::I32(x.wrapping_add(y)),
                    _ => unreachable!("validated types"),
                }
            }
            Instr::Sub(a, b) => {
                regs[at] = match (val(*a), val(*b)) {
                    (Scalar::F32(x), Scalar::F32(y)) => Scalar::F32(x - y),
                    (Scalar::I32(x), Scalar::I32(y)) => Scalar::I32(x.wrapping_sub(y)),
                    _ => unreachable!("validated types"),
                }
            }
            Instr::Mul(a, b) => {
                regs[at] = match (val(*a), val(*b)) {
                    (Scalar::F32(x), Scalar::F32(y)) => Scalar::F32(x * y),
                    (Scalar::I32(x), Scalar::I32(y)) => Scalar::I32(x.wrapping_mul(y)),
                    _ => unreachable!("validated types"),
                }
            }
            Instr::Div(a, b) => {
                regs[at] = match (val(*a), val(*b)) {
                    (Scalar::F32(x), Scalar::F32(y)) => Scalar::F32(x / y),
                    (Scalar::I32(x), Scalar::I32(y)) => Scalar::I32(wrap_div(x, y)),
                    _ => unreachable!("validated types"),
                }
            }
            Instr::Sqrt(v) => regs[at] = Scalar::F32(val(*v).as_f32().sqrt()),
            Instr::Exp(v) => regs[at] = Scalar::F32(val(*v).as_f32().exp()),
            Instr::Ln(v) => regs[at] = Scalar::F32(val(*v).as_f32().ln()),
            Instr::MinSelect(vs) => {
                let vals: Vec<f32> = vs.iter().map(|v| val(*v).as_f32()).collect();
                regs[at] = Scalar::I32(min_select(&vals));
            }
            Instr::Cmp(op, a, b) => {
                let r = match (val(*a), val(*b)) {
                    (Scalar::F32(x), Scalar::F32(y)) => cmp_f32(*op, x, y),
                    (Scalar::I32(x), Scalar::I32(y)) => cmp_i32(*op, x, y),
                    _ => unreachable!("validated types"),
                };
                regs[at] = Scalar::I32(r as i32);
            }
            Instr::Select {
                cond,
                on_true,
                on_false,
            } => {
                regs[at] = if val(*cond).as_i32() != 0 {
                    val(*on_true)
                } else {
                    val(*on_false)
                };
            }
            Instr::EmitTuple(vs) => {
                out.tuples.push(vs.iter().map(|v| val(*v)).collect());
            }
            Instr::ReturnBool(v) => {
                out.boolean = Some(val(*v).as_i32() != 0);
            }
        }
    }

    if p.kind == Kind::Map {
        let mut tuple = Vec::with_capacity(p.output.len());
        for (field, v) in stored.into_iter().enumerate() {
            tuple.push(v.ok_or_else(|| InterpError::MissingOutputField {
                udf: p.name.clone(),
                field,
            })?);
        }
        out.tuples.push(tuple);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::context::{ContextValue, Shape};
    use crate::ir::{Kind, UdfBuilder};
    use crate::scalar::ScalarType;

    #[test]
    fn doubling_map() {
        let mut b = UdfBuilder::new("double", Kind::Map)
            .input(&[ScalarType::F32])
            .output(&[ScalarType::F32]);
        let x = b.load_field(0);
        let two = b.const_f32(2.0);
        let y = b.mul(x, two);
        b.store_field(0, y);
        let p = b.build().unwrap();

        let mut ctx = Context::new();
        let out = interpret(&p, Some(&[Scalar::F32(3.0)]), &mut ctx).unwrap();
        assert_eq!(out.tuples, vec![vec![Scalar::F32(6.0)]]);
    }

    #[test]
    fn distance_to_three_centroids() {
        // Euclidean distance from (0,0) to centroids (0,0), (3,4), (6,8).
        let mut b = UdfBuilder::new("distance", Kind::Map)
            .input(&[ScalarType::F32, ScalarType::F32])
            .output(&[ScalarType::F32; 5])
            .ctx_read("k", ScalarType::F32, Shape::Matrix(3, 2));
        let x = b.load_field(0);
        let y = b.load_field(1);
        b.store_field(0, x);
        b.store_field(1, y);
        for i in 0..3 {
            let kx = b.load_ctx("k", &[IndexExpr::Const(i), IndexExpr::Const(0)]);
            let dx = b.sub(kx, x);
            let dx2 = b.mul(dx, dx);
            let ky = b.load_ctx("k", &[IndexExpr::Const(i), IndexExpr::Const(1)]);
            let dy = b.sub(ky, y);
            let dy2 = b.mul(dy, dy);
            let s = b.add(dx2, dy2);
            let d = b.sqrt(s);
            b.store_field(2 + i, d);
        }
        let p = b.build().unwrap();

        let mut ctx = Context::new().with(
            "k",
            ContextValue::matrix_f32(3, 2, vec![0.0, 0.0, 3.0, 4.0, 6.0, 8.0]),
        );
        let out = interpret(&p, Some(&[Scalar::F32(0.0), Scalar::F32(0.0)]), &mut ctx).unwrap();
        assert_eq!(
            out.tuples[0][2..],
            [Scalar::F32(0.0), Scalar::F32(5.0), Scalar::F32(10.0)]
        );
    }

    #[test]
    fn argmin_breaks_ties_low() {
        assert_eq!(min_select(&[0.0, 5.0, 10.0]), 0);
        assert_eq!(min_select(&[5.0, 1.0, 1.0]), 1);
        assert_eq!(min_select(&[2.0, 2.0]), 0);
    }

    #[test]
    fn division_by_zero_never_traps() {
        let mut b = UdfBuilder::new("divz", Kind::Map)
            .input(&[ScalarType::F32])
            .output(&[ScalarType::F32]);
        let x = b.load_field(0);
        let zero = b.const_f32(0.0);
        let q = b.div(x, zero);
        b.store_field(0, q);
        let p = b.build().unwrap();
        let mut ctx = Context::new();
        let out = interpret(&p, Some(&[Scalar::F32(1.0)]), &mut ctx).unwrap();
        assert_eq!(out.tuples[0][0], Scalar::F32(f32::INFINITY));
    }

    #[test]
    fn reduce_stages_deltas_without_mutating() {
        let mut b = UdfBuilder::new("sum", Kind::ReduceBody)
            .input(&[ScalarType::I32])
            .ctx_write("total", ScalarType::I32, Shape::Scalar);
        let x = b.load_field(0);
        b.ctx_add("total", &[], x);
        let p = b.build().unwrap();

        let mut ctx = Context::new().with("total", ContextValue::scalar(Scalar::I32(0)));
        let out = interpret(&p, Some(&[Scalar::I32(7)]), &mut ctx).unwrap();
        assert_eq!(ctx.get("total").unwrap().get_flat(0), Scalar::I32(0));
        assert_eq!(out.deltas.deltas.len(), 1);
    }

    #[test]
    fn interpret_is_deterministic() {
        let mut b = UdfBuilder::new("mix", Kind::Map)
            .input(&[ScalarType::F32, ScalarType::F32])
            .output(&[ScalarType::F32]);
        let x = b.load_field(0);
        let y = b.load_field(1);
        let s = b.add(x, y);
        let q = b.sqrt(s);
        let e = b.exp(q);
        b.store_field(0, e);
        let p = b.build().unwrap();
        let row = [Scalar::F32(0.3), Scalar::F32(1.7)];
        let mut ctx = Context::new();
        let a = interpret(&p, Some(&row), &mut ctx).unwrap();
        let b2 = interpret(&p, Some(&row), &mut ctx).unwrap();
        assert!(a.tuples[0][0].bit_eq(&b2.tuples[0][0]));
    }
}
