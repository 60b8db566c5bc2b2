//! Compilation of UDF programs into flat bytecode kernels, plus the two
//! evaluators: a per-tuple scalar interpreter for fused pipelines and a
//! columnar per-instruction evaluator for lane-parallel map stages (tight
//! typed loops the optimizer turns into SIMD).
//!
//! Compilation happens per segment execution with the Context frozen:
//! constant-indexed Context reads are folded into immediates, so an
//! iterating workflow (whose Context changes between passes) recompiles its
//! kernels each pass. Compilation is microseconds; the fold is what lets
//! the columnar loops run branch- and indirection-free.

use crate::context::{Context, ContextData};
use crate::ir::{CmpOp, IndexExpr, Instr, Kind, UdfProgram};
use crate::relation::Column;
use crate::scalar::ScalarType;

type Reg = u16;

/// One dynamic term of a Context element address: `reg × stride`.
#[derive(Debug, Clone, Copy)]
pub struct CtxTerm {
    pub reg: Reg,
    pub stride: u32,
}

#[derive(Debug, Clone)]
pub enum COp {
    Const { dst: Reg, bits: u32, is_f32: bool },
    Mov { dst: Reg, src: Reg },
    CastFtoI { dst: Reg, src: Reg },
    CastItoF { dst: Reg, src: Reg },
    LoadField { dst: Reg, field: u16, is_f32: bool },
    StoreField { field: u16, src: Reg, is_f32: bool },
    /// Data-dependent Context read out of the compile-time snapshot.
    CtxLoad {
        dst: Reg,
        key: u16,
        base: u32,
        terms: Vec<CtxTerm>,
        len: u32,
    },
    CtxAdd {
        wkey: u16,
        base: u32,
        terms: Vec<CtxTerm>,
        len: u32,
        src: Reg,
        is_f32: bool,
    },
    CtxInc {
        wkey: u16,
        base: u32,
        terms: Vec<CtxTerm>,
        len: u32,
        is_f32: bool,
    },
    AccAddF { slot: u16, src: Reg },
    AccAddI { slot: u16, src: Reg },
    AccInc { slot: u16 },
    AddF { dst: Reg, a: Reg, b: Reg },
    AddI { dst: Reg, a: Reg, b: Reg },
    SubF { dst: Reg, a: Reg, b: Reg },
    SubI { dst: Reg, a: Reg, b: Reg },
    MulF { dst: Reg, a: Reg, b: Reg },
    MulI { dst: Reg, a: Reg, b: Reg },
    DivF { dst: Reg, a: Reg, b: Reg },
    DivI { dst: Reg, a: Reg, b: Reg },
    SqrtF { dst: Reg, src: Reg },
    ExpF { dst: Reg, src: Reg },
    LnF { dst: Reg, src: Reg },
    /// Argmin; each source carries its f32-ness so integer candidates get
    /// the same as-cast the reference interpreter applies.
    MinSel { dst: Reg, srcs: Vec<(Reg, bool)> },
    CmpF { dst: Reg, op: CmpOp, a: Reg, b: Reg },
    CmpI { dst: Reg, op: CmpOp, a: Reg, b: Reg },
    Select { dst: Reg, cond: Reg, t: Reg, f: Reg, is_f32: bool },
    Emit { srcs: Vec<Reg> },
    ReturnBool { src: Reg },
}

/// A compiled kernel: bytecode plus the frozen Context data it references.
#[derive(Debug, Clone)]
pub struct CompiledUdf {
    pub name: String,
    pub kind: Kind,
    pub ops: Vec<COp>,
    pub n_regs: usize,
    pub in_is_f32: Vec<bool>,
    pub out_is_f32: Vec<bool>,
    pub acc_is_f32: Vec<bool>,
    /// Snapshots of dynamically indexed Context reads, one per `CtxLoad.key`.
    pub snap: Vec<SnapKey>,
    /// Layout of Context writes, one per `CtxAdd`/`CtxInc` `wkey`:
    /// (name, is_f32, flattened length).
    pub writes: Vec<(String, bool, usize)>,
    /// Analyzer verdict for the source program; gates the column-at-a-time
    /// map path (non-vectorizable maps run tuple-at-a-time, mirroring the
    /// scalar loops the fused strategies model).
    pub vectorizable: bool,
}

#[derive(Debug, Clone)]
pub struct SnapKey {
    pub name: String,
    pub is_f32: bool,
    pub data: Vec<u32>,
}

fn flat_parts(
    index: &[IndexExpr],
    shape: crate::context::Shape,
) -> (u32, Vec<CtxTerm>) {
    use crate::context::Shape;
    let strides: Vec<usize> = match shape {
        Shape::Scalar => vec![],
        Shape::Vector(_) => vec![1],
        Shape::Matrix(_, c) => vec![c, 1],
    };
    let mut base = 0u32;
    let mut terms = Vec::new();
    for (e, s) in index.iter().zip(&strides) {
        match e {
            IndexExpr::Const(i) => base += (*i * *s) as u32,
            IndexExpr::Value(v) => terms.push(CtxTerm {
                reg: v.idx() as Reg,
                stride: *s as u32,
            }),
        }
    }
    (base, terms)
}

/// Compile a validated UDF against the current Context. Update-kind UDFs
/// are executed by the reference interpreter instead (they run once, in a
/// single thread) and are rejected here.
pub fn compile_udf(p: &UdfProgram, ctx: &Context) -> CompiledUdf {
    assert_ne!(p.kind, Kind::Update, "update UDFs run interpreted");
    let mut ops = Vec::with_capacity(p.body.len());
    let mut snap: Vec<SnapKey> = Vec::new();
    let writes: Vec<(String, bool, usize)> = p
        .ctx_writes
        .iter()
        .map(|a| (a.key.clone(), a.ty == ScalarType::F32, a.shape.len()))
        .collect();
    let wkey_of = |key: &str| -> u16 {
        writes
            .iter()
            .position(|(k, _, _)| k == key)
            .expect("validated write") as u16
    };
    let types = p.value_types().expect("validated UDF");
    let is_f32 = |v: crate::ir::ValueId| types[v.idx()] == Some(ScalarType::F32);

    for (at, ins) in p.body.iter().enumerate() {
        let dst = at as Reg;
        let op = match ins {
            Instr::Const(s) => COp::Const {
                dst,
                bits: match s {
                    crate::scalar::Scalar::F32(v) => v.to_bits(),
                    crate::scalar::Scalar::I32(v) => *v as u32,
                },
                is_f32: s.ty() == ScalarType::F32,
            },
            Instr::Cast(to, v) => {
                let src = v.idx() as Reg;
                match (is_f32(*v), *to == ScalarType::F32) {
                    (true, true) | (false, false) => COp::Mov { dst, src },
                    (true, false) => COp::CastFtoI { dst, src },
                    (false, true) => COp::CastItoF { dst, src },
                }
            }
            Instr::LoadField(i) => COp::LoadField {
                dst,
                field: *i as u16,
                is_f32: p.input[*i] == ScalarType::F32,
            },
            Instr::StoreField(i, v) => COp::StoreField {
                field: *i as u16,
                src: v.idx() as Reg,
                is_f32: p.output[*i] == ScalarType::F32,
            },
            Instr::LoadContext { key, index } => {
                let entry = ctx.get(key).expect("declared context key");
                let (base, terms) = flat_parts(index, entry.shape);
                if terms.is_empty() {
                    // constant address: fold the value into an immediate
                    let bits = match &entry.data {
                        ContextData::F32(v) => v[base as usize].to_bits(),
                        ContextData::I32(v) => v[base as usize] as u32,
                    };
                    COp::Const {
                        dst,
                        bits,
                        is_f32: entry.ty() == ScalarType::F32,
                    }
                } else {
                    let kid = match snap.iter().position(|s| &s.name == key) {
                        Some(i) => i,
                        None => {
                            snap.push(SnapKey {
                                name: key.clone(),
                                is_f32: entry.ty() == ScalarType::F32,
                                data: match &entry.data {
                                    ContextData::F32(v) => {
                                        v.iter().map(|x| x.to_bits()).collect()
                                    }
                                    ContextData::I32(v) => {
                                        v.iter().map(|x| *x as u32).collect()
                                    }
                                },
                            });
                            snap.len() - 1
                        }
                    };
                    COp::CtxLoad {
                        dst,
                        key: kid as u16,
                        base,
                        terms,
                        len: entry.shape.len() as u32,
                    }
                }
            }
            Instr::ContextStore { .. } => unreachable!("update UDFs run interpreted"),
            Instr::ContextAdd { key, index, value } => {
                let acc = p.ctx_writes.iter().find(|a| &a.key == key).unwrap();
                let (base, terms) = flat_parts(index, acc.shape);
                COp::CtxAdd {
                    wkey: wkey_of(key),
                    base,
                    terms,
                    len: acc.shape.len() as u32,
                    src: value.idx() as Reg,
                    is_f32: acc.ty == ScalarType::F32,
                }
            }
            Instr::ContextIncrement { key, index } => {
                let acc = p.ctx_writes.iter().find(|a| &a.key == key).unwrap();
                let (base, terms) = flat_parts(index, acc.shape);
                COp::CtxInc {
                    wkey: wkey_of(key),
                    base,
                    terms,
                    len: acc.shape.len() as u32,
                    is_f32: acc.ty == ScalarType::F32,
                }
            }
            Instr::AccAdd { slot, value } => {
                if p.acc[*slot] == ScalarType::F32 {
                    COp::AccAddF {
                        slot: *slot as u16,
                        src: value.idx() as Reg,
                    }
                } else {
                    COp::AccAddI {
                        slot: *slot as u16,
                        src: value.idx() as Reg,
                    }
                }
            }
            Instr::AccIncrement { slot } => COp::AccInc { slot: *slot as u16 },
            Instr::Add(a, b) => {
                let f = is_f32(*a);
                let (a, b) = (a.idx() as Reg, b.idx() as Reg);
                if f { COp::AddF { dst, a, b } } else { COp::AddI { dst, a, b } }
            }
            Instr::Sub(a, b) => {
                let f = is_f32(*a);
                let (a, b) = (a.idx() as Reg, b.idx() as Reg);
                if f { COp::SubF { dst, a, b } } else { COp::SubI { dst, a, b } }
            }
            Instr::Mul(a, b) => {
                let f = is_f32(*a);
                let (a, b) = (a.idx() as Reg, b.idx() as Reg);
                if f { COp::MulF { dst, a, b } } else { COp::MulI { dst, a, b } }
            }
            Instr::Div(a, b) => {
                let f = is_f32(*a);
                let (a, b) = (a.idx() as Reg, b.idx() as Reg);
                if f { COp::DivF { dst, a, b } } else { COp::DivI { dst, a, b } }
            }
            Instr::Sqrt(v) => COp::SqrtF { dst, src: v.idx() as Reg },
            Instr::Exp(v) => COp::ExpF { dst, src: v.idx() as Reg },
            Instr::Ln(v) => COp::LnF { dst, src: v.idx() as Reg },
            Instr::MinSelect(vs) => COp::MinSel {
                dst,
                srcs: vs.iter().map(|v| (v.idx() as Reg, is_f32(*v))).collect(),
            },
            Instr::Cmp(op, a, b) => {
                if is_f32(*a) {
                    COp::CmpF {
                        dst,
                        op: *op,
                        a: a.idx() as Reg,
                        b: b.idx() as Reg,
                    }
                } else {
                    COp::CmpI {
                        dst,
                        op: *op,
                        a: a.idx() as Reg,
                        b: b.idx() as Reg,
                    }
                }
            }
            Instr::Select { cond, on_true, on_false } => COp::Select {
                dst,
                cond: cond.idx() as Reg,
                t: on_true.idx() as Reg,
                f: on_false.idx() as Reg,
                is_f32: is_f32(*on_true),
            },
            Instr::EmitTuple(vs) => COp::Emit {
                srcs: vs.iter().map(|v| v.idx() as Reg).collect(),
            },
            Instr::ReturnBool(v) => COp::ReturnBool { src: v.idx() as Reg },
        };
        ops.push(op);
    }

    CompiledUdf {
        name: p.name.clone(),
        kind: p.kind,
        ops,
        n_regs: p.body.len(),
        in_is_f32: p.input.iter().map(|t| *t == ScalarType::F32).collect(),
        out_is_f32: p.output.iter().map(|t| *t == ScalarType::F32).collect(),
        acc_is_f32: p.acc.iter().map(|t| *t == ScalarType::F32).collect(),
        snap,
        writes,
        vectorizable: crate::analyzer::analyze_vectorizability(p),
    }
}

#[inline]
fn wrap_div(a: i32, b: i32) -> i32 {
    if b == 0 {
        0
    } else {
        a.wrapping_div(b)
    }
}

#[inline]
fn cmp_f(op: CmpOp, a: f32, b: f32) -> bool {
    match op {
        CmpOp::Lt => a < b,
        CmpOp::Le => a <= b,
        CmpOp::Eq => a == b,
        CmpOp::Ne => a != b,
        CmpOp::Ge => a >= b,
        CmpOp::Gt => a > b,
    }
}

#[inline]
fn cmp_i(op: CmpOp, a: i32, b: i32) -> bool {
    match op {
        CmpOp::Lt => a < b,
        CmpOp::Le => a <= b,
        CmpOp::Eq => a == b,
        CmpOp::Ne => a != b,
        CmpOp::Ge => a >= b,
        CmpOp::Gt => a > b,
    }
}

#[inline]
fn resolve_flat(base: u32, terms: &[CtxTerm], regs: &[u32], len: u32, name: &str) -> usize {
    let mut flat = base as i64;
    for t in terms {
        flat += (regs[t.reg as usize] as i32 as i64) * t.stride as i64;
    }
    if flat < 0 || flat >= len as i64 {
        panic!("runtime context index {flat} out of range for `{name}` (len {len})");
    }
    flat as usize
}

/// Aggregation sink for one block's worth of reduce folding. See the
/// runtime module for how partials merge deterministically.
pub use super::reduce::ReducePartial;

/// Evaluate a compiled kernel for one tuple. Returns the predicate result
/// (true for non-predicates). Map outputs land in `out_row`, emits in
/// `emits`, reduce deltas in `sink`.
#[allow(clippy::too_many_arguments)]
pub fn eval_scalar(
    c: &CompiledUdf,
    row: &[u32],
    regs: &mut [u32],
    out_row: &mut [u32],
    emits: &mut Vec<Vec<u32>>,
    mut sink: Option<&mut ReducePartial>,
) -> bool {
    let mut verdict = true;
    for op in &c.ops {
        match op {
            COp::Const { dst, bits, .. } => regs[*dst as usize] = *bits,
            COp::Mov { dst, src } => regs[*dst as usize] = regs[*src as usize],
            COp::CastFtoI { dst, src } => {
                regs[*dst as usize] = (f32::from_bits(regs[*src as usize]) as i32) as u32
            }
            COp::CastItoF { dst, src } => {
                regs[*dst as usize] = ((regs[*src as usize] as i32) as f32).to_bits()
            }
            COp::LoadField { dst, field, .. } => regs[*dst as usize] = row[*field as usize],
            COp::StoreField { field, src, .. } => {
                out_row[*field as usize] = regs[*src as usize]
            }
            COp::CtxLoad { dst, key, base, terms, len } => {
                let k = &c.snap[*key as usize];
                let flat = resolve_flat(*base, terms, regs, *len, &k.name);
                regs[*dst as usize] = k.data[flat];
            }
            COp::CtxAdd { wkey, base, terms, len, src, is_f32 } => {
                let flat = resolve_flat(*base, terms, regs, *len, &c.writes[*wkey as usize].0);
                let s = sink.as_deref_mut().expect("reduce sink");
                s.ctx_add(*wkey as usize, flat, regs[*src as usize], *is_f32);
            }
            COp::CtxInc { wkey, base, terms, len, is_f32 } => {
                let flat = resolve_flat(*base, terms, regs, *len, &c.writes[*wkey as usize].0);
                let s = sink.as_deref_mut().expect("reduce sink");
                s.ctx_inc(*wkey as usize, flat, *is_f32);
            }
            COp::AccAddF { slot, src } => {
                let v = f32::from_bits(regs[*src as usize]);
                sink.as_deref_mut().expect("reduce sink").acc_add_f32(*slot as usize, v);
            }
            COp::AccAddI { slot, src } => {
                let v = regs[*src as usize] as i32;
                sink.as_deref_mut().expect("reduce sink").acc_add_i32(*slot as usize, v);
            }
            COp::AccInc { slot } => {
                sink.as_deref_mut().expect("reduce sink").acc_inc(*slot as usize);
            }
            COp::AddF { dst, a, b } => {
                regs[*dst as usize] = (f32::from_bits(regs[*a as usize])
                    + f32::from_bits(regs[*b as usize]))
                .to_bits()
            }
            COp::AddI { dst, a, b } => {
                regs[*dst as usize] =
                    (regs[*a as usize] as i32).wrapping_add(regs[*b as usize] as i32) as u32
            }
            COp::SubF { dst, a, b } => {
                regs[*dst as usize] = (f32::from_bits(regs[*a as usize])
                    - f32::from_bits(regs[*b as usize]))
                .to_bits()
            }
            COp::SubI { dst, a, b } => {
                regs[*dst as usize] =
                    (regs[*a as usize] as i32).wrapping_sub(regs[*b as usize] as i32) as u32
            }
            COp::MulF { dst, a, b } => {
                regs[*dst as usize] = (f32::from_bits(regs[*a as usize])
                    * f32::from_bits(regs[*b as usize]))
                .to_bits()
            }
            COp::MulI { dst, a, b } => {
                regs[*dst as usize] =
                    (regs[*a as usize] as i32).wrapping_mul(regs[*b as usize] as i32) as u32
            }
            COp::DivF { dst, a, b } => {
                regs[*dst as usize] = (f32::from_bits(regs[*a as usize])
                    / f32::from_bits(regs[*b as usize]))
                .to_bits()
            }
            COp::DivI { dst, a, b } => {
                regs[*dst as usize] =
                    wrap_div(regs[*a as usize] as i32, regs[*b as usize] as i32) as u32
            }
            COp::SqrtF { dst, src } => {
                regs[*dst as usize] = f32::from_bits(regs[*src as usize]).sqrt().to_bits()
            }
            COp::ExpF { dst, src } => {
                regs[*dst as usize] = f32::from_bits(regs[*src as usize]).exp().to_bits()
            }
            COp::LnF { dst, src } => {
                regs[*dst as usize] = f32::from_bits(regs[*src as usize]).ln().to_bits()
            }
            COp::MinSel { dst, srcs } => {
                let as_f = |(r, f): (Reg, bool)| {
                    if f {
                        f32::from_bits(regs[r as usize])
                    } else {
                        regs[r as usize] as i32 as f32
                    }
                };
                let mut best = 0usize;
                let mut best_v = as_f(srcs[0]);
                for (i, s) in srcs.iter().enumerate().skip(1) {
                    let v = as_f(*s);
                    if v < best_v {
                        best = i;
                        best_v = v;
                    }
                }
                regs[*dst as usize] = best as u32;
            }
            COp::CmpF { dst, op, a, b } => {
                regs[*dst as usize] = cmp_f(
                    *op,
                    f32::from_bits(regs[*a as usize]),
                    f32::from_bits(regs[*b as usize]),
                ) as u32
            }
            COp::CmpI { dst, op, a, b } => {
                regs[*dst as usize] =
                    cmp_i(*op, regs[*a as usize] as i32, regs[*b as usize] as i32) as u32
            }
            COp::Select { dst, cond, t, f, .. } => {
                regs[*dst as usize] = if regs[*cond as usize] as i32 != 0 {
                    regs[*t as usize]
                } else {
                    regs[*f as usize]
                }
            }
            COp::Emit { srcs } => {
                emits.push(srcs.iter().map(|s| regs[*s as usize]).collect());
            }
            COp::ReturnBool { src } => verdict = regs[*src as usize] as i32 != 0,
        }
    }
    verdict
}

/// Reusable columnar register buffers for one executor.
#[derive(Debug, Default)]
pub struct ColScratch {
    pub f: Vec<Vec<f32>>,
    pub i: Vec<Vec<i32>>,
}

/// Rows per columnar chunk: small enough that all live register columns
/// stay cache-resident.
pub const COL_CHUNK: usize = 1024;

/// Evaluate a kernel over `rows` of `input` starting at `start`,
/// column-at-a-time in cache-resident chunks. Map outputs append to `out`
/// (one pre-typed column per output field); reduce deltas fold into
/// `sink`, applied in row order within each chunk so the result is
/// bit-identical to the per-tuple evaluator. Emitting kernels (flatmap,
/// key) and predicates stay on the per-tuple path.
pub fn eval_columnar(
    c: &CompiledUdf,
    input: &[Column],
    start: usize,
    rows: usize,
    out: &mut [Column],
    scratch: &mut ColScratch,
    mut sink: Option<&mut ReducePartial>,
) {
    scratch.f.resize(c.n_regs, Vec::new());
    scratch.i.resize(c.n_regs, Vec::new());

    let mut done = 0usize;
    while done < rows {
        let n = (rows - done).min(COL_CHUNK);
        let at = start + done;
        for op in &c.ops {
            match op {
                COp::Const { dst, bits, is_f32 } => {
                    if *is_f32 {
                        let v = f32::from_bits(*bits);
                        let d = &mut scratch.f[*dst as usize];
                        d.clear();
                        d.resize(n, v);
                    } else {
                        let v = *bits as i32;
                        let d = &mut scratch.i[*dst as usize];
                        d.clear();
                        d.resize(n, v);
                    }
                }
                COp::Mov { dst, src } => {
                    // same-type cast; types were resolved at compile time
                    let (a, b) = (*dst as usize, *src as usize);
                    if !scratch.f[b].is_empty() {
                        let v = std::mem::take(&mut scratch.f[a]);
                        let mut v = v;
                        v.clear();
                        v.extend_from_slice(&scratch.f[b]);
                        scratch.f[a] = v;
                    } else {
                        let mut v = std::mem::take(&mut scratch.i[a]);
                        v.clear();
                        v.extend_from_slice(&scratch.i[b]);
                        scratch.i[a] = v;
                    }
                }
                COp::CastFtoI { dst, src } => {
                    let mut d = std::mem::take(&mut scratch.i[*dst as usize]);
                    d.clear();
                    d.extend(scratch.f[*src as usize].iter().map(|v| *v as i32));
                    scratch.i[*dst as usize] = d;
                }
                COp::CastItoF { dst, src } => {
                    let mut d = std::mem::take(&mut scratch.f[*dst as usize]);
                    d.clear();
                    d.extend(scratch.i[*src as usize].iter().map(|v| *v as f32));
                    scratch.f[*dst as usize] = d;
                }
                COp::LoadField { dst, field, is_f32 } => {
                    if *is_f32 {
                        let s = &input[*field as usize].f32s()[at..at + n];
                        let mut d = std::mem::take(&mut scratch.f[*dst as usize]);
                        d.clear();
                        d.extend_from_slice(s);
                        scratch.f[*dst as usize] = d;
                    } else {
                        let s = &input[*field as usize].i32s()[at..at + n];
                        let mut d = std::mem::take(&mut scratch.i[*dst as usize]);
                        d.clear();
                        d.extend_from_slice(s);
                        scratch.i[*dst as usize] = d;
                    }
                }
                COp::StoreField { field, src, is_f32 } => match &mut out[*field as usize] {
                    Column::F32(o) => {
                        debug_assert!(*is_f32);
                        o.extend_from_slice(&scratch.f[*src as usize]);
                    }
                    Column::I32(o) => {
                        debug_assert!(!*is_f32);
                        o.extend_from_slice(&scratch.i[*src as usize]);
                    }
                },
                COp::AddF { dst, a, b } => fbin(scratch, *dst, *a, *b, n, |x, y| x + y),
                COp::SubF { dst, a, b } => fbin(scratch, *dst, *a, *b, n, |x, y| x - y),
                COp::MulF { dst, a, b } => fbin(scratch, *dst, *a, *b, n, |x, y| x * y),
                COp::DivF { dst, a, b } => fbin(scratch, *dst, *a, *b, n, |x, y| x / y),
                COp::AddI { dst, a, b } => ibin(scratch, *dst, *a, *b, n, |x, y| {
                    x.wrapping_add(y)
                }),
                COp::SubI { dst, a, b } => ibin(scratch, *dst, *a, *b, n, |x, y| {
                    x.wrapping_sub(y)
                }),
                COp::MulI { dst, a, b } => ibin(scratch, *dst, *a, *b, n, |x, y| {
                    x.wrapping_mul(y)
                }),
                COp::DivI { dst, a, b } => ibin(scratch, *dst, *a, *b, n, wrap_div),
                COp::SqrtF { dst, src } => funop(scratch, *dst, *src, n, f32::sqrt),
                COp::ExpF { dst, src } => funop(scratch, *dst, *src, n, f32::exp),
                COp::LnF { dst, src } => funop(scratch, *dst, *src, n, f32::ln),
                COp::CmpF { dst, op, a, b } => {
                    let mut d = std::mem::take(&mut scratch.i[*dst as usize]);
                    d.clear();
                    d.resize(n, 0);
                    let (x, y) = (&scratch.f[*a as usize], &scratch.f[*b as usize]);
                    for j in 0..n {
                        d[j] = cmp_f(*op, x[j], y[j]) as i32;
                    }
                    scratch.i[*dst as usize] = d;
                }
                COp::CmpI { dst, op, a, b } => {
                    let mut d = std::mem::take(&mut scratch.i[*dst as usize]);
                    d.clear();
                    d.resize(n, 0);
                    let (x, y) = (&scratch.i[*a as usize], &scratch.i[*b as usize]);
                    for j in 0..n {
                        d[j] = cmp_i(*op, x[j], y[j]) as i32;
                    }
                    scratch.i[*dst as usize] = d;
                }
                COp::CtxLoad { dst, key, base, terms, len } => {
                    let k = &c.snap[*key as usize];
                    if k.is_f32 {
                        let mut d = std::mem::take(&mut scratch.f[*dst as usize]);
                        d.clear();
                        d.reserve(n);
                        for j in 0..n {
                            let flat = resolve_cols(*base, terms, &scratch.i, j, *len, &k.name);
                            d.push(f32::from_bits(k.data[flat]));
                        }
                        scratch.f[*dst as usize] = d;
                    } else {
                        let mut d = std::mem::take(&mut scratch.i[*dst as usize]);
                        d.clear();
                        d.reserve(n);
                        for j in 0..n {
                            let flat = resolve_cols(*base, terms, &scratch.i, j, *len, &k.name);
                            d.push(k.data[flat] as i32);
                        }
                        scratch.i[*dst as usize] = d;
                    }
                }
                COp::MinSel { dst, srcs } => {
                    let mut d = std::mem::take(&mut scratch.i[*dst as usize]);
                    d.clear();
                    d.resize(n, 0);
                    for j in 0..n {
                        let at = |(r, f): (Reg, bool)| {
                            if f {
                                scratch.f[r as usize][j]
                            } else {
                                scratch.i[r as usize][j] as f32
                            }
                        };
                        let mut best = 0usize;
                        let mut best_v = at(srcs[0]);
                        for (i, s) in srcs.iter().enumerate().skip(1) {
                            let v = at(*s);
                            if v < best_v {
                                best = i;
                                best_v = v;
                            }
                        }
                        d[j] = best as i32;
                    }
                    scratch.i[*dst as usize] = d;
                }
                COp::Select { dst, cond, t, f, is_f32 } => {
                    if *is_f32 {
                        let mut d = std::mem::take(&mut scratch.f[*dst as usize]);
                        d.clear();
                        d.reserve(n);
                        let c = &scratch.i[*cond as usize];
                        let (tv, fv) = (&scratch.f[*t as usize], &scratch.f[*f as usize]);
                        for j in 0..n {
                            d.push(if c[j] != 0 { tv[j] } else { fv[j] });
                        }
                        scratch.f[*dst as usize] = d;
                    } else {
                        let mut d = std::mem::take(&mut scratch.i[*dst as usize]);
                        d.clear();
                        d.reserve(n);
                        let c = &scratch.i[*cond as usize];
                        let (tv, fv) = (&scratch.i[*t as usize], &scratch.i[*f as usize]);
                        for j in 0..n {
                            d.push(if c[j] != 0 { tv[j] } else { fv[j] });
                        }
                        scratch.i[*dst as usize] = d;
                    }
                }
                COp::AccAddF { slot, src } => {
                    let s = sink.as_deref_mut().expect("columnar reduce sink");
                    let col = &scratch.f[*src as usize];
                    if let Some(cells) = s.acc_cells() {
                        // reduction-variable shape: a vector of striped
                        // lane partials folded at chunk end, so the hot
                        // loop carries no serial add dependency
                        let mut stripes = [0.0f32; 8];
                        let mut it = col.chunks_exact(8);
                        for ch in &mut it {
                            for (k, v) in ch.iter().enumerate() {
                                stripes[k] += *v;
                            }
                        }
                        for (k, v) in it.remainder().iter().enumerate() {
                            stripes[k] += *v;
                        }
                        let sum = stripes.iter().fold(0.0f32, |a, b| a + b);
                        let cell = &mut cells[*slot as usize];
                        *cell = (f32::from_bits(*cell) + sum).to_bits();
                    } else {
                        // forced hash table: one probe per tuple
                        for v in col {
                            s.acc_add_f32(*slot as usize, *v);
                        }
                    }
                }
                COp::AccAddI { slot, src } => {
                    let s = sink.as_deref_mut().expect("columnar reduce sink");
                    let col = &scratch.i[*src as usize];
                    if let Some(cells) = s.acc_cells() {
                        // wrapping addition is associative: plain chunk sum
                        let mut sum = 0i32;
                        for v in col {
                            sum = sum.wrapping_add(*v);
                        }
                        let cell = &mut cells[*slot as usize];
                        *cell = (*cell as i32).wrapping_add(sum) as u32;
                    } else {
                        for v in col {
                            s.acc_add_i32(*slot as usize, *v);
                        }
                    }
                }
                COp::AccInc { slot } => {
                    let s = sink.as_deref_mut().expect("columnar reduce sink");
                    match s.acc_cells() {
                        Some(cells) => {
                            let cell = &mut cells[*slot as usize];
                            if c.acc_is_f32[*slot as usize] {
                                *cell = (f32::from_bits(*cell) + n as f32).to_bits();
                            } else {
                                *cell = (*cell as i32).wrapping_add(n as i32) as u32;
                            }
                        }
                        None => {
                            for _ in 0..n {
                                s.acc_inc(*slot as usize);
                            }
                        }
                    }
                }
                COp::CtxAdd { wkey, base, terms, len, src, is_f32 } => {
                    let s = sink.as_deref_mut().expect("columnar reduce sink");
                    let name = &c.writes[*wkey as usize].0;
                    if let Some(cells) = s.dense_cells(*wkey as usize) {
                        // direct-index shape: tight scatter-add loop; the
                        // one-term unit-stride form (vector indexed by a
                        // tuple value) gets a branch-light specialization
                        let simple = simple_index(*base, terms, *len);
                        if *is_f32 {
                            let col = &scratch.f[*src as usize];
                            if let Some((idx, len)) = simple {
                                let idxs = &scratch.i[idx][..n];
                                for (j, v) in col[..n].iter().enumerate() {
                                    let flat = check_index(idxs[j], len, name);
                                    let cell = &mut cells[flat];
                                    *cell = (f32::from_bits(*cell) + v).to_bits();
                                }
                            } else {
                                for j in 0..n {
                                    let flat =
                                        resolve_cols(*base, terms, &scratch.i, j, *len, name);
                                    let cell = &mut cells[flat];
                                    *cell = (f32::from_bits(*cell) + col[j]).to_bits();
                                }
                            }
                        } else {
                            let col = &scratch.i[*src as usize];
                            if let Some((idx, len)) = simple {
                                let idxs = &scratch.i[idx][..n];
                                for (j, v) in col[..n].iter().enumerate() {
                                    let flat = check_index(idxs[j], len, name);
                                    let cell = &mut cells[flat];
                                    *cell = (*cell as i32).wrapping_add(*v) as u32;
                                }
                            } else {
                                for j in 0..n {
                                    let flat =
                                        resolve_cols(*base, terms, &scratch.i, j, *len, name);
                                    let cell = &mut cells[flat];
                                    *cell = (*cell as i32).wrapping_add(col[j]) as u32;
                                }
                            }
                        }
                    } else if *is_f32 {
                        let col = &scratch.f[*src as usize];
                        for j in 0..n {
                            let flat = resolve_cols(*base, terms, &scratch.i, j, *len, name);
                            s.ctx_add(*wkey as usize, flat, col[j].to_bits(), true);
                        }
                    } else {
                        let col = &scratch.i[*src as usize];
                        for j in 0..n {
                            let flat = resolve_cols(*base, terms, &scratch.i, j, *len, name);
                            s.ctx_add(*wkey as usize, flat, col[j] as u32, false);
                        }
                    }
                }
                COp::CtxInc { wkey, base, terms, len, is_f32 } => {
                    let s = sink.as_deref_mut().expect("columnar reduce sink");
                    let name = &c.writes[*wkey as usize].0;
                    if let Some(cells) = s.dense_cells(*wkey as usize) {
                        if let (Some((idx, len)), false) = (simple_index(*base, terms, *len), *is_f32)
                        {
                            let idxs = &scratch.i[idx][..n];
                            for raw in idxs {
                                let flat = check_index(*raw, len, name);
                                let cell = &mut cells[flat];
                                *cell = (*cell as i32).wrapping_add(1) as u32;
                            }
                        } else {
                            for j in 0..n {
                                let flat =
                                    resolve_cols(*base, terms, &scratch.i, j, *len, name);
                                let cell = &mut cells[flat];
                                if *is_f32 {
                                    *cell = (f32::from_bits(*cell) + 1.0).to_bits();
                                } else {
                                    *cell = (*cell as i32).wrapping_add(1) as u32;
                                }
                            }
                        }
                    } else {
                        for j in 0..n {
                            let flat = resolve_cols(*base, terms, &scratch.i, j, *len, name);
                            s.ctx_inc(*wkey as usize, flat, *is_f32);
                        }
                    }
                }
                other @ (COp::Emit { .. } | COp::ReturnBool { .. }) => {
                    unreachable!("per-tuple-only opcode in columnar kernel: {other:?}")
                }
            }
        }
        done += n;
    }
}

/// `Some((index_register, len))` when the address is exactly one
/// unit-stride term with no constant offset.
#[inline]
fn simple_index(base: u32, terms: &[CtxTerm], len: u32) -> Option<(usize, u32)> {
    match terms {
        [t] if base == 0 && t.stride == 1 => Some((t.reg as usize, len)),
        _ => None,
    }
}

#[inline]
fn check_index(raw: i32, len: u32, name: &str) -> usize {
    if raw < 0 || raw as u32 >= len {
        panic!("runtime context index {raw} out of range for `{name}` (len {len})");
    }
    raw as usize
}

/// Row-wise Context address resolution against columnar index registers.
#[inline]
fn resolve_cols(
    base: u32,
    terms: &[CtxTerm],
    iregs: &[Vec<i32>],
    j: usize,
    len: u32,
    name: &str,
) -> usize {
    let mut flat = base as i64;
    for t in terms {
        flat += iregs[t.reg as usize][j] as i64 * t.stride as i64;
    }
    if flat < 0 || flat >= len as i64 {
        panic!("runtime context index {flat} out of range for `{name}` (len {len})");
    }
    flat as usize
}

#[inline]
fn fbin(s: &mut ColScratch, dst: Reg, a: Reg, b: Reg, n: usize, f: impl Fn(f32, f32) -> f32) {
    let mut d = std::mem::take(&mut s.f[dst as usize]);
    d.clear();
    d.resize(n, 0.0);
    let (x, y) = (&s.f[a as usize], &s.f[b as usize]);
    for j in 0..n {
        d[j] = f(x[j], y[j]);
    }
    s.f[dst as usize] = d;
}

#[inline]
fn ibin(s: &mut ColScratch, dst: Reg, a: Reg, b: Reg, n: usize, f: impl Fn(i32, i32) -> i32) {
    let mut d = std::mem::take(&mut s.i[dst as usize]);
    d.clear();
    d.resize(n, 0);
    let (x, y) = (&s.i[a as usize], &s.i[b as usize]);
    for j in 0..n {
        d[j] = f(x[j], y[j]);
    }
    s.i[dst as usize] = d;
}

#[inline]
fn funop(s: &mut ColScratch, dst: Reg, src: Reg, n: usize, f: impl Fn(f32) -> f32) {
    let mut d = std::mem::take(&mut s.f[dst as usize]);
    d.clear();
    d.resize(n, 0.0);
    let x = &s.f[src as usize];
    for j in 0..n {
        d[j] = f(x[j]);
    }
    s.f[dst as usize] = d;
}

/// Read one row of columns into a raw register row.
#[inline]
pub fn read_row(cols: &[Column], i: usize, buf: &mut Vec<u32>) {
    buf.clear();
    for c in cols {
        buf.push(match c {
            Column::F32(v) => v[i].to_bits(),
            Column::I32(v) => v[i] as u32,
        });
    }
}
