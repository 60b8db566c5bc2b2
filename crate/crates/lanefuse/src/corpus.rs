//! Seed-deterministic random workflow generator for differential testing:
//! small relations, short operator chains, randomly built straight-line
//! UDFs. Every case is valid by construction (the builders typecheck),
//! executes in bounded time, and can be run both through the reference
//! evaluator and the parallel runtime.

use crate::algebra::Workflow;
use crate::context::{Context, ContextValue, Shape};
use crate::ir::{CmpOp, IndexExpr, Kind, UdfBuilder, UdfProgram, ValueId};
use crate::relation::{Relation, Schema};
use crate::scalar::{Scalar, ScalarType};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

const F32: ScalarType = ScalarType::F32;
const I32: ScalarType = ScalarType::I32;

/// Generate `count` random workflows. Each case derives its own RNG from
/// `seed` and its index, so cases are independent and reproducible.
pub fn suite(count: usize, seed: u64) -> Vec<(String, Workflow)> {
    (0..count)
        .map(|i| {
            let mut gen = Gen {
                rng: ChaCha8Rng::seed_from_u64(seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)),
                udf_counter: 0,
            };
            (format!("case-{i:03}"), gen.workflow())
        })
        .collect()
}

struct Gen {
    rng: ChaCha8Rng,
    udf_counter: usize,
}

impl Gen {
    fn workflow(&mut self) -> Workflow {
        if self.rng.gen_bool(0.15) {
            self.looped_workflow()
        } else {
            self.chain_workflow()
        }
    }

    // ---- building blocks ----------------------------------------------

    fn name(&mut self, stem: &str) -> String {
        self.udf_counter += 1;
        format!("{stem}-{}", self.udf_counter)
    }

    fn rand_ty(&mut self) -> ScalarType {
        if self.rng.gen_bool(0.5) {
            F32
        } else {
            I32
        }
    }

    fn rand_schema(&mut self) -> Vec<ScalarType> {
        let arity = self.rng.gen_range(1..=3);
        (0..arity).map(|_| self.rand_ty()).collect()
    }

    fn rand_scalar(&mut self, ty: ScalarType) -> Scalar {
        match ty {
            // f32 values on a 1/8 grid: exactly representable, keeps
            // magnitudes tame without avoiding interesting arithmetic
            F32 => Scalar::F32(self.rng.gen_range(-160..=160) as f32 / 8.0),
            I32 => Scalar::I32(self.rng.gen_range(-20..=20)),
        }
    }

    fn rand_relation(&mut self, types: &[ScalarType], max_rows: usize) -> Relation {
        let schema = Schema::new(
            types
                .iter()
                .enumerate()
                .map(|(i, t)| (format!("c{i}"), *t))
                .collect::<Vec<_>>()
                .iter()
                .map(|(n, t)| (n.as_str(), *t))
                .collect(),
        );
        // zero-row relations ~5% of the time to exercise empty inputs
        let rows = if self.rng.gen_bool(0.05) {
            0
        } else {
            self.rng.gen_range(1..=max_rows)
        };
        let rows: Vec<Vec<Scalar>> = (0..rows)
            .map(|_| types.iter().map(|t| self.rand_scalar(*t)).collect())
            .collect();
        Relation::from_rows(schema, &rows)
    }

    /// Pick an existing value of `ty`, or mint a constant.
    fn pick(&mut self, b: &mut UdfBuilder, vals: &[(ValueId, ScalarType)], ty: ScalarType) -> ValueId {
        let cands: Vec<ValueId> = vals
            .iter()
            .filter(|(_, t)| *t == ty)
            .map(|(v, _)| *v)
            .collect();
        if cands.is_empty() || self.rng.gen_bool(0.15) {
            match self.rand_scalar(ty) {
                Scalar::F32(v) => b.const_f32(v),
                Scalar::I32(v) => b.const_i32(v),
            }
        } else {
            cands[self.rng.gen_range(0..cands.len())]
        }
    }

    fn rand_cmp_op(&mut self) -> CmpOp {
        match self.rng.gen_range(0..6) {
            0 => CmpOp::Lt,
            1 => CmpOp::Le,
            2 => CmpOp::Eq,
            3 => CmpOp::Ne,
            4 => CmpOp::Ge,
            _ => CmpOp::Gt,
        }
    }

    /// Append 1..=4 random pure instructions, tracking value types.
    fn grow_exprs(&mut self, b: &mut UdfBuilder, vals: &mut Vec<(ValueId, ScalarType)>) {
        for _ in 0..self.rng.gen_range(1..=4) {
            let choice = self.rng.gen_range(0..8);
            let (v, ty) = match choice {
                0..=2 => {
                    let ty = self.rand_ty();
                    let a = self.pick(b, vals, ty);
                    let c = self.pick(b, vals, ty);
                    let v = match self.rng.gen_range(0..4) {
                        0 => b.add(a, c),
                        1 => b.sub(a, c),
                        2 => b.mul(a, c),
                        _ => b.div(a, c),
                    };
                    (v, ty)
                }
                3 => {
                    let a = self.pick(b, vals, F32);
                    let v = match self.rng.gen_range(0..3) {
                        0 => b.sqrt(a),
                        1 => b.exp(a),
                        _ => b.ln(a),
                    };
                    (v, F32)
                }
                4 => {
                    let to = self.rand_ty();
                    let from = match to {
                        F32 => I32,
                        I32 => F32,
                    };
                    let a = self.pick(b, vals, from);
                    (b.cast(to, a), to)
                }
                5 => {
                    let ty = self.rand_ty();
                    let a = self.pick(b, vals, ty);
                    let c = self.pick(b, vals, ty);
                    let op = self.rand_cmp_op();
                    (b.cmp(op, a, c), I32)
                }
                6 => {
                    let ty = self.rand_ty();
                    let cond = self.pick(b, vals, I32);
                    let t = self.pick(b, vals, ty);
                    let f = self.pick(b, vals, ty);
                    (b.select(cond, t, f), ty)
                }
                _ => {
                    let n = self.rng.gen_range(2..=3);
                    let ops: Vec<ValueId> = (0..n).map(|_| self.pick(b, vals, F32)).collect();
                    (b.min_select(&ops), I32)
                }
            };
            vals.push((v, ty));
        }
    }

    fn load_all(b: &mut UdfBuilder, input: &[ScalarType]) -> Vec<(ValueId, ScalarType)> {
        input
            .iter()
            .enumerate()
            .map(|(i, t)| (b.load_field(i), *t))
            .collect()
    }

    // ---- UDF generators -----------------------------------------------

    fn map_udf(&mut self, input: &[ScalarType]) -> (UdfProgram, Vec<ScalarType>) {
        let out: Vec<ScalarType> = self.rand_schema();
        let name = self.name("rand-map");
        let mut b = UdfBuilder::new(&name, Kind::Map).input(input).output(&out);
        let mut vals = Self::load_all(&mut b, input);
        self.grow_exprs(&mut b, &mut vals);
        for (i, ty) in out.iter().enumerate() {
            let v = self.pick(&mut b, &vals, *ty);
            b.store_field(i, v);
        }
        (b.build().expect("random map is valid"), out)
    }

    fn predicate_udf(&mut self, input: &[ScalarType]) -> UdfProgram {
        let name = self.name("rand-pred");
        let mut b = UdfBuilder::new(&name, Kind::Predicate).input(input);
        let mut vals = Self::load_all(&mut b, input);
        self.grow_exprs(&mut b, &mut vals);
        let ty = self.rand_ty();
        let a = self.pick(&mut b, &vals, ty);
        let c = self.pick(&mut b, &vals, ty);
        let op = self.rand_cmp_op();
        let cond = b.cmp(op, a, c);
        b.return_bool(cond);
        b.build().expect("random predicate is valid")
    }

    fn flatmap_udf(&mut self, input: &[ScalarType]) -> (UdfProgram, Vec<ScalarType>, usize) {
        let out: Vec<ScalarType> = self.rand_schema();
        let emits = self.rng.gen_range(0..=2);
        let name = self.name("rand-flatmap");
        let mut b = UdfBuilder::new(&name, Kind::FlatMap).input(input).output(&out);
        let mut vals = Self::load_all(&mut b, input);
        self.grow_exprs(&mut b, &mut vals);
        for _ in 0..emits {
            let row: Vec<ValueId> = out
                .iter()
                .map(|ty| self.pick(&mut b, &vals, *ty))
                .collect();
            b.emit(&row);
        }
        (b.build().expect("random flatmap is valid"), out, emits)
    }

    fn key_udf(&mut self, input: &[ScalarType]) -> UdfProgram {
        let name = self.name("rand-key");
        let mut b = UdfBuilder::new(&name, Kind::Key).input(input).output(&[I32]);
        let mut vals = Self::load_all(&mut b, input);
        self.grow_exprs(&mut b, &mut vals);
        // keep cardinality small: fold a comparison into one of two
        // constant buckets, sometimes offset by a loaded i32
        let ty = self.rand_ty();
        let a = self.pick(&mut b, &vals, ty);
        let c = self.pick(&mut b, &vals, ty);
        let op = self.rand_cmp_op();
        let cond = b.cmp(op, a, c);
        let lo = b.const_i32(self.rng.gen_range(-3..=0));
        let hi = b.const_i32(self.rng.gen_range(1..=3));
        let key = b.select(cond, lo, hi);
        b.emit(&[key]);
        b.build().expect("random key is valid")
    }

    fn reduce_udf(&mut self, input: &[ScalarType]) -> (UdfProgram, Vec<ScalarType>) {
        let slots: Vec<ScalarType> = (0..self.rng.gen_range(1..=2))
            .map(|_| self.rand_ty())
            .collect();
        let name = self.name("rand-reduce");
        let mut b = UdfBuilder::new(&name, Kind::ReduceBody)
            .input(input)
            .acc_slots(&slots);
        let mut vals = Self::load_all(&mut b, input);
        self.grow_exprs(&mut b, &mut vals);
        for (slot, ty) in slots.iter().enumerate() {
            if *ty == I32 && self.rng.gen_bool(0.3) {
                b.acc_increment(slot);
            } else {
                let v = self.pick(&mut b, &vals, *ty);
                b.acc_add(slot, v);
            }
        }
        (b.build().expect("random reduce is valid"), slots)
    }

    // ---- workflow shapes ----------------------------------------------

    /// A chain of up to 6 random operators over one or two small sources.
    fn chain_workflow(&mut self) -> Workflow {
        let mut types = self.rand_schema();
        let base = self.rand_relation(&types, 1000);
        let mut est_rows = base.cardinality().max(1);
        let mut w = Workflow::from_relation(base, Context::new());
        let mut reduced = false;
        let n_ops = self.rng.gen_range(1..=6);
        let mut ops = 0;
        while ops < n_ops {
            let choice = self.rng.gen_range(0..10);
            match choice {
                0..=2 => {
                    let (udf, out) = self.map_udf(&types);
                    w = w.map(Arc::new(udf)).expect("map chain");
                    types = out;
                }
                3 => {
                    let udf = self.predicate_udf(&types);
                    w = if self.rng.gen_bool(0.5) {
                        w.filter(Arc::new(udf)).expect("filter chain")
                    } else {
                        w.selection(Arc::new(udf)).expect("selection chain")
                    };
                }
                4 => {
                    let (udf, out) = self.map_udf(&types);
                    // projection shares the map contract minus Context
                    w = w.projection(Arc::new(udf)).expect("projection chain");
                    types = out;
                }
                5 if !reduced => {
                    let (udf, out, emits) = self.flatmap_udf(&types);
                    if est_rows * emits.max(1) > 4000 {
                        continue;
                    }
                    w = w.flatmap(Arc::new(udf)).expect("flatmap chain");
                    types = out;
                    est_rows *= emits.max(1);
                }
                6 | 7 if !reduced => {
                    let keyed = self.rng.gen_bool(0.5);
                    let key = keyed.then(|| Arc::new(self.key_udf(&types)));
                    let (udf, slots) = self.reduce_udf(&types);
                    w = w.reduce(Arc::new(udf), key).expect("reduce chain");
                    types = if keyed {
                        let mut t = vec![I32];
                        t.extend(&slots);
                        t
                    } else {
                        slots
                    };
                    est_rows = 8;
                    reduced = true;
                }
                8 if !reduced => {
                    // union or difference against a fresh same-typed source
                    let other = self.rand_relation(&types, 200);
                    let rhs = Workflow::from_relation(other, Context::new());
                    est_rows += 200;
                    w = if self.rng.gen_bool(0.5) {
                        w.union(rhs).expect("union chain")
                    } else {
                        w.difference(rhs).expect("difference chain")
                    };
                }
                9 if !reduced && est_rows <= 300 => {
                    let rtypes = self.rand_schema();
                    let other = self.rand_relation(&rtypes, 5);
                    let rhs = Workflow::from_relation(other, Context::new());
                    let mut joined = types.clone();
                    joined.extend(&rtypes);
                    est_rows *= 5;
                    w = if self.rng.gen_bool(0.5) {
                        w.cartesian(rhs).expect("cartesian chain")
                    } else {
                        let theta = self.predicate_udf(&joined);
                        w.theta_join(rhs, Arc::new(theta)).expect("theta chain")
                    };
                    types = joined;
                }
                _ => continue,
            }
            ops += 1;
        }
        w
    }

    /// An iterative shape: map → reduce-into-Context → update → loop.
    fn looped_workflow(&mut self) -> Workflow {
        let types = self.rand_schema();
        let data = self.rand_relation(&types, 500);
        let slots = 4usize;
        let iters = self.rng.gen_range(1..=3);
        let ctx = Context::new()
            .with("acc", ContextValue::zeros(F32, Shape::Vector(slots)))
            .with("iter", ContextValue::scalar(Scalar::I32(0)));

        let (map, mapped) = self.map_udf(&types);

        // reduce body folding random expressions into fixed Context cells
        let rname = self.name("rand-ctx-reduce");
        let mut b = UdfBuilder::new(&rname, Kind::ReduceBody)
            .input(&mapped)
            .ctx_write("acc", F32, Shape::Vector(slots));
        let mut vals = Self::load_all(&mut b, &mapped);
        self.grow_exprs(&mut b, &mut vals);
        for _ in 0..self.rng.gen_range(1..=2) {
            let idx = self.rng.gen_range(0..slots);
            let v = self.pick(&mut b, &vals, F32);
            b.ctx_add("acc", &[IndexExpr::Const(idx)], v);
        }
        let reduce = b.build().expect("ctx reduce is valid");

        // update: damp the accumulator and advance the counter
        let uname = self.name("rand-update");
        let mut b = UdfBuilder::new(&uname, Kind::Update)
            .ctx_read("acc", F32, Shape::Vector(slots))
            .ctx_write("acc", F32, Shape::Vector(slots))
            .ctx_write("iter", I32, Shape::Scalar);
        let half = b.const_f32(0.5);
        for i in 0..slots {
            let v = b.load_ctx("acc", &[IndexExpr::Const(i)]);
            let d = b.mul(v, half);
            b.ctx_store("acc", &[IndexExpr::Const(i)], d);
        }
        b.ctx_increment("iter", &[]);
        let update = b.build().expect("update is valid");

        let iname = self.name("rand-invariant");
        let mut b = UdfBuilder::new(&iname, Kind::Invariant).ctx_read("iter", I32, Shape::Scalar);
        let i = b.load_ctx("iter", &[]);
        let lim = b.const_i32(iters);
        let c = b.cmp(CmpOp::Lt, i, lim);
        b.return_bool(c);
        let invariant = b.build().expect("invariant is valid");

        Workflow::from_relation(data, ctx)
            .map(Arc::new(map))
            .expect("looped map")
            .reduce(Arc::new(reduce), None)
            .expect("looped reduce")
            .update(Arc::new(update))
            .expect("looped update")
            .loop_while(Arc::new(invariant))
            .expect("looped loop")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reference::evaluate;

    #[test]
    fn suite_is_deterministic() {
        let a = suite(10, 99);
        let b = suite(10, 99);
        for ((na, wa), (nb, wb)) in a.iter().zip(&b) {
            assert_eq!(na, nb);
            let ra = evaluate(wa).unwrap();
            let rb = evaluate(wb).unwrap();
            assert!(ra.relation.bit_eq(&rb.relation), "{na} differs across runs");
        }
    }

    #[test]
    fn all_cases_evaluate_under_reference() {
        for (name, w) in suite(100, 2024) {
            evaluate(&w).unwrap_or_else(|e| panic!("{name} failed reference eval: {e}"));
        }
    }
}
