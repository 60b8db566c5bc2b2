//! A closed, typed expression IR for λ-functions.
//!
//! Programs are flat static-single-assignment instruction lists: each
//! value-producing instruction defines the value whose id equals its position
//! in the body. Bounded loops are unrolled when a program is built, so every
//! validated body is straight-line. This keeps interpretation, cycle
//! prediction, and vectorizability analysis total and trivially deterministic.
//!
//! The IR is deliberately small: no calls, no recursion, no unbounded
//! control flow. A UDF that cannot be expressed here cannot be analyzed, and
//! the engine refuses it up front rather than guessing.

pub mod interp;
pub mod text;

pub use interp::{interpret, InterpError, UdfEval};
pub use text::{parse_program, print_program, ParseError};

use crate::context::Shape;
use crate::scalar::{Scalar, ScalarType};
use std::fmt;
use thiserror::Error;

/// Operator-contract class of a UDF.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Kind {
    /// `t -> b`; selection predicates may not read the Context, filter
    /// predicates may (the algebra layer enforces the difference).
    Predicate,
    /// `(t, C) -> t'`: exactly one output tuple, all fields stored.
    Map,
    /// `(t, C) -> {t'}`: zero or more emitted tuples.
    FlatMap,
    /// `(t, C) -> (deltas, acc)`: commutative Context/accumulator writes only.
    ReduceBody,
    /// `C -> C'`: direct Context mutation, no tuple access.
    Update,
    /// `C -> b`: loop invariant, read-only.
    Invariant,
    /// `t -> i32`: group-by key extraction.
    Key,
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Kind::Predicate => "predicate",
            Kind::Map => "map",
            Kind::FlatMap => "flatmap",
            Kind::ReduceBody => "reduce",
            Kind::Update => "update",
            Kind::Invariant => "invariant",
            Kind::Key => "key",
        };
        write!(f, "{s}")
    }
}

/// Index of a value-producing instruction in the body.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ValueId(pub u32);

impl ValueId {
    pub fn idx(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for ValueId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "%{}", self.0)
    }
}

/// One operand of a Context element access.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IndexExpr {
    Const(usize),
    /// Data-dependent index; permitted only in reduce and update bodies.
    Value(ValueId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CmpOp {
    Lt,
    Le,
    Eq,
    Ne,
    Ge,
    Gt,
}

impl fmt::Display for CmpOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            CmpOp::Lt => "lt",
            CmpOp::Le => "le",
            CmpOp::Eq => "eq",
            CmpOp::Ne => "ne",
            CmpOp::Ge => "ge",
            CmpOp::Gt => "gt",
        };
        write!(f, "{s}")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Instr {
    Const(Scalar),
    Cast(ScalarType, ValueId),
    LoadField(usize),
    StoreField(usize, ValueId),
    LoadContext {
        key: String,
        index: Vec<IndexExpr>,
    },
    ContextStore {
        key: String,
        index: Vec<IndexExpr>,
        value: ValueId,
    },
    ContextAdd {
        key: String,
        index: Vec<IndexExpr>,
        value: ValueId,
    },
    ContextIncrement {
        key: String,
        index: Vec<IndexExpr>,
    },
    AccAdd {
        slot: usize,
        value: ValueId,
    },
    AccIncrement {
        slot: usize,
    },
    Add(ValueId, ValueId),
    Sub(ValueId, ValueId),
    Mul(ValueId, ValueId),
    Div(ValueId, ValueId),
    Sqrt(ValueId),
    Exp(ValueId),
    Ln(ValueId),
    /// Argmin with index tracking over f32 operands; ties break to the
    /// lowest index. Produces an i32.
    MinSelect(Vec<ValueId>),
    /// Produces i32 0/1.
    Cmp(CmpOp, ValueId, ValueId),
    Select {
        cond: ValueId,
        on_true: ValueId,
        on_false: ValueId,
    },
    EmitTuple(Vec<ValueId>),
    ReturnBool(ValueId),
}

impl Instr {
    /// Whether this instruction defines a value.
    pub fn produces_value(&self) -> bool {
        !matches!(
            self,
            Instr::StoreField(..)
                | Instr::ContextStore { .. }
                | Instr::ContextAdd { .. }
                | Instr::ContextIncrement { .. }
                | Instr::AccAdd { .. }
                | Instr::AccIncrement { .. }
                | Instr::EmitTuple(..)
                | Instr::ReturnBool(..)
        )
    }

    pub fn opcode(&self) -> Opcode {
        match self {
            Instr::Const(_) => Opcode::Const,
            Instr::Cast(..) => Opcode::Cast,
            Instr::LoadField(_) => Opcode::LoadField,
            Instr::StoreField(..) => Opcode::StoreField,
            Instr::LoadContext { .. } => Opcode::LoadContext,
            Instr::ContextStore { .. } => Opcode::ContextStore,
            Instr::ContextAdd { .. } => Opcode::ContextAdd,
            Instr::ContextIncrement { .. } => Opcode::ContextIncrement,
            Instr::AccAdd { .. } => Opcode::AccAdd,
            Instr::AccIncrement { .. } => Opcode::AccIncrement,
            Instr::Add(..) => Opcode::Add,
            Instr::Sub(..) => Opcode::Sub,
            Instr::Mul(..) => Opcode::Mul,
            Instr::Div(..) => Opcode::Div,
            Instr::Sqrt(_) => Opcode::Sqrt,
            Instr::Exp(_) => Opcode::Exp,
            Instr::Ln(_) => Opcode::Ln,
            Instr::MinSelect(_) => Opcode::MinSelect,
            Instr::Cmp(..) => Opcode::Cmp,
            Instr::Select { .. } => Opcode::Select,
            Instr::EmitTuple(_) => Opcode::EmitTuple,
            Instr::ReturnBool(_) => Opcode::ReturnBool,
        }
    }

    pub fn operands(&self) -> Vec<ValueId> {
        let mut out = Vec::new();
        let push_index = |out: &mut Vec<ValueId>, index: &[IndexExpr]| {
            for e in index {
                if let IndexExpr::Value(v) = e {
                    out.push(*v);
                }
            }
        };
        match self {
            Instr::Const(_) | Instr::LoadField(_) | Instr::AccIncrement { .. } => {}
            Instr::Cast(_, v) | Instr::Sqrt(v) | Instr::Exp(v) | Instr::Ln(v) => out.push(*v),
            Instr::StoreField(_, v) | Instr::AccAdd { value: v, .. } | Instr::ReturnBool(v) => {
                out.push(*v)
            }
            Instr::LoadContext { index, .. } | Instr::ContextIncrement { index, .. } => {
                push_index(&mut out, index)
            }
            Instr::ContextStore { index, value, .. } | Instr::ContextAdd { index, value, .. } => {
                push_index(&mut out, index);
                out.push(*value);
            }
            Instr::Add(a, b) | Instr::Sub(a, b) | Instr::Mul(a, b) | Instr::Div(a, b) => {
                out.push(*a);
                out.push(*b);
            }
            Instr::Cmp(_, a, b) => {
                out.push(*a);
                out.push(*b);
            }
            Instr::MinSelect(vs) | Instr::EmitTuple(vs) => out.extend(vs.iter().copied()),
            Instr::Select {
                cond,
                on_true,
                on_false,
            } => {
                out.push(*cond);
                out.push(*on_true);
                out.push(*on_false);
            }
        }
        out
    }
}

/// Opcode tag, used by the analyzer's cycles-per-instruction table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Opcode {
    Const,
    Cast,
    LoadField,
    StoreField,
    LoadContext,
    ContextStore,
    ContextAdd,
    ContextIncrement,
    AccAdd,
    AccIncrement,
    Add,
    Sub,
    Mul,
    Div,
    Sqrt,
    Exp,
    Ln,
    MinSelect,
    Cmp,
    Select,
    EmitTuple,
    ReturnBool,
}

impl Opcode {
    pub const ALL: [Opcode; 22] = [
        Opcode::Const,
        Opcode::Cast,
        Opcode::LoadField,
        Opcode::StoreField,
        Opcode::LoadContext,
        Opcode::ContextStore,
        Opcode::ContextAdd,
        Opcode::ContextIncrement,
        Opcode::AccAdd,
        Opcode::AccIncrement,
        Opcode::Add,
        Opcode::Sub,
        Opcode::Mul,
        Opcode::Div,
        Opcode::Sqrt,
        Opcode::Exp,
        Opcode::Ln,
        Opcode::MinSelect,
        Opcode::Cmp,
        Opcode::Select,
        Opcode::EmitTuple,
        Opcode::ReturnBool,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Opcode::Const => "const",
            Opcode::Cast => "cast",
            Opcode::LoadField => "load-field",
            Opcode::StoreField => "store-field",
            Opcode::LoadContext => "load-context",
            Opcode::ContextStore => "context-store",
            Opcode::ContextAdd => "context-add",
            Opcode::ContextIncrement => "context-increment",
            Opcode::AccAdd => "acc-add",
            Opcode::AccIncrement => "acc-increment",
            Opcode::Add => "add",
            Opcode::Sub => "sub",
            Opcode::Mul => "mul",
            Opcode::Div => "div",
            Opcode::Sqrt => "sqrt",
            Opcode::Exp => "exp",
            Opcode::Ln => "ln",
            Opcode::MinSelect => "min-select",
            Opcode::Cmp => "cmp",
            Opcode::Select => "select",
            Opcode::EmitTuple => "emit-tuple",
            Opcode::ReturnBool => "return-bool",
        }
    }
}

impl fmt::Display for Opcode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.name())
    }
}

/// A declared Context access.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextAccess {
    pub key: String,
    pub ty: ScalarType,
    pub shape: Shape,
}

/// A validated-or-not λ-function program: the unit of introspection.
#[derive(Debug, Clone, PartialEq)]
pub struct UdfProgram {
    pub name: String,
    pub kind: Kind,
    /// Input tuple column types. Empty for update/invariant kinds.
    pub input: Vec<ScalarType>,
    /// Output tuple column types (map/flatmap/key only).
    pub output: Vec<ScalarType>,
    /// Accumulator slot types (reduce bodies producing an aggregated
    /// relation; empty for Context-only reduces).
    pub acc: Vec<ScalarType>,
    pub ctx_reads: Vec<ContextAccess>,
    pub ctx_writes: Vec<ContextAccess>,
    pub body: Vec<Instr>,
}

#[derive(Debug, Error, PartialEq)]
pub enum ContractViolation {
    #[error("{udf}: instruction {at} ({op}) not allowed in {kind} UDF")]
    OpcodeNotAllowed {
        udf: String,
        at: usize,
        op: Opcode,
        kind: Kind,
    },
    #[error("{udf}: instruction {at} uses undefined value {value}")]
    UndefinedValue {
        udf: String,
        at: usize,
        value: ValueId,
    },
    #[error("{udf}: instruction {at} type error: {msg}")]
    TypeError { udf: String, at: usize, msg: String },
    #[error("{udf}: instruction {at} field index {field} out of range (arity {arity})")]
    FieldOutOfRange {
        udf: String,
        at: usize,
        field: usize,
        arity: usize,
    },
    #[error("{udf}: instruction {at} accesses undeclared context key `{key}`")]
    UndeclaredContextAccess { udf: String, at: usize, key: String },
    #[error("{udf}: declared context {rw} of `{key}` never used in body")]
    UnusedContextDeclaration { udf: String, key: String, rw: &'static str },
    #[error("{udf}: instruction {at} uses a data-dependent context index in a {kind} UDF")]
    DataDependentIndex { udf: String, at: usize, kind: Kind },
    #[error("{udf}: instruction {at} indexes `{key}` ({shape}) with {rank} operands")]
    IndexRankMismatch {
        udf: String,
        at: usize,
        key: String,
        shape: Shape,
        rank: usize,
    },
    #[error("{udf}: constant index {index:?} out of range for `{key}` of shape {shape}")]
    ConstIndexOutOfRange {
        udf: String,
        key: String,
        index: Vec<usize>,
        shape: Shape,
    },
    #[error("{udf}: output field {field} stored {count} times (must be exactly once)")]
    OutputFieldStoreCount { udf: String, field: usize, count: usize },
    #[error("{udf}: accumulator slot {slot} out of range ({len} declared)")]
    AccSlotOutOfRange { udf: String, slot: usize, len: usize },
    #[error("{udf}: {kind} UDF must end with exactly one return-bool")]
    MissingReturn { udf: String, kind: Kind },
    #[error("{udf}: key UDF must emit exactly one single-column i32 tuple")]
    BadKeyShape { udf: String },
}

impl UdfProgram {
    /// Infer the type of every value slot; `None` for non-value instructions.
    /// Assumes the body passed validation (or is being validated).
    pub fn value_types(&self) -> Result<Vec<Option<ScalarType>>, ContractViolation> {
        let mut types: Vec<Option<ScalarType>> = Vec::with_capacity(self.body.len());
        let udf = self.name.clone();
        for (at, ins) in self.body.iter().enumerate() {
            // Operand definedness first.
            for v in ins.operands() {
                if v.idx() >= at || types.get(v.idx()).map(|t| t.is_none()).unwrap_or(true) {
                    return Err(ContractViolation::UndefinedValue {
                        udf,
                        at,
                        value: v,
                    });
                }
            }
            let t = |v: ValueId| types[v.idx()].unwrap();
            let err = |msg: String| ContractViolation::TypeError {
                udf: self.name.clone(),
                at,
                msg,
            };
            let ty = match ins {
                Instr::Const(s) => Some(s.ty()),
                Instr::Cast(to, _) => Some(*to),
                Instr::LoadField(i) => Some(
                    *self
                        .input
                        .get(*i)
                        .ok_or_else(|| ContractViolation::FieldOutOfRange {
                            udf: self.name.clone(),
                            at,
                            field: *i,
                            arity: self.input.len(),
                        })?,
                ),
                Instr::LoadContext { key, .. } => {
                    let acc = self
                        .ctx_reads
                        .iter()
                        .find(|a| &a.key == key)
                        .ok_or_else(|| ContractViolation::UndeclaredContextAccess {
                            udf: self.name.clone(),
                            at,
                            key: key.clone(),
                        })?;
                    Some(acc.ty)
                }
                Instr::Add(a, b) | Instr::Sub(a, b) | Instr::Mul(a, b) | Instr::Div(a, b) => {
                    if t(*a) != t(*b) {
                        return Err(err(format!("operand types differ: {} vs {}", t(*a), t(*b))));
                    }
                    Some(t(*a))
                }
                Instr::Sqrt(v) | Instr::Exp(v) | Instr::Ln(v) => {
                    if t(*v) != ScalarType::F32 {
                        return Err(err("unary math requires f32".into()));
                    }
                    Some(ScalarType::F32)
                }
                Instr::MinSelect(vs) => {
                    if vs.is_empty() {
                        return Err(err("min-select needs at least one operand".into()));
                    }
                    if vs.iter().any(|v| t(*v) != ScalarType::F32) {
                        return Err(err("min-select operands must be f32".into()));
                    }
                    Some(ScalarType::I32)
                }
                Instr::Cmp(_, a, b) => {
                    if t(*a) != t(*b) {
                        return Err(err(format!("cmp types differ: {} vs {}", t(*a), t(*b))));
                    }
                    Some(ScalarType::I32)
                }
                Instr::Select {
                    cond,
                    on_true,
                    on_false,
                } => {
                    if t(*cond) != ScalarType::I32 {
                        return Err(err("select condition must be i32".into()));
                    }
                    if t(*on_true) != t(*on_false) {
                        return Err(err("select arms must have the same type".into()));
                    }
                    Some(t(*on_true))
                }
                _ => None,
            };
            types.push(ty);
        }
        Ok(types)
    }

    /// Check the body against the operator-contract class and typing rules.
    pub fn validate(&self) -> Result<(), ContractViolation> {
        let kind = self.kind;
        let udf = || self.name.clone();
        let types = self.value_types()?;

        let allowed = |op: Opcode| -> bool {
            use Opcode::*;
            let common = matches!(
                op,
                Const | Cast | Add | Sub | Mul | Div | Sqrt | Exp | Ln | MinSelect | Cmp | Select
                    | LoadContext
            );
            if common {
                return true;
            }
            match kind {
                Kind::Predicate => matches!(op, LoadField | ReturnBool),
                Kind::Map => matches!(op, LoadField | StoreField),
                Kind::FlatMap | Kind::Key => matches!(op, LoadField | EmitTuple),
                Kind::ReduceBody => matches!(
                    op,
                    LoadField | ContextAdd | ContextIncrement | AccAdd | AccIncrement
                ),
                Kind::Update => matches!(op, ContextStore | ContextAdd | ContextIncrement),
                Kind::Invariant => matches!(op, ReturnBool),
            }
        };

        let mut store_counts = vec![0usize; self.output.len()];
        let mut return_count = 0usize;
        let mut emit_count = 0usize;
        let mut reads_used: Vec<&str> = Vec::new();
        let mut writes_used: Vec<&str> = Vec::new();

        for (at, ins) in self.body.iter().enumerate() {
            let op = ins.opcode();
            if !allowed(op) {
                return Err(ContractViolation::OpcodeNotAllowed {
                    udf: udf(),
                    at,
                    op,
                    kind,
                });
            }
            // Context access checks.
            let check_access = |at: usize,
                                key: &str,
                                index: &[IndexExpr],
                                decls: &[ContextAccess],
                                writing: bool|
             -> Result<&'static str, ContractViolation> {
                let acc = decls.iter().find(|a| a.key == key).ok_or_else(|| {
                    ContractViolation::UndeclaredContextAccess {
                        udf: self.name.clone(),
                        at,
                        key: key.to_string(),
                    }
                })?;
                if index.len() != acc.shape.rank() {
                    return Err(ContractViolation::IndexRankMismatch {
                        udf: self.name.clone(),
                        at,
                        key: key.to_string(),
                        shape: acc.shape,
                        rank: index.len(),
                    });
                }
                let data_dep = index.iter().any(|e| matches!(e, IndexExpr::Value(_)));
                if data_dep && !matches!(kind, Kind::ReduceBody | Kind::Update) {
                    return Err(ContractViolation::DataDependentIndex {
                        udf: self.name.clone(),
                        at,
                        kind,
                    });
                }
                if !data_dep {
                    let idx: Vec<usize> = index
                        .iter()
                        .map(|e| match e {
                            IndexExpr::Const(i) => *i,
                            IndexExpr::Value(_) => unreachable!(),
                        })
                        .collect();
                    if acc.shape.flat_index(&idx).is_none() {
                        return Err(ContractViolation::ConstIndexOutOfRange {
                            udf: self.name.clone(),
                            key: key.to_string(),
                            index: idx,
                            shape: acc.shape,
                        });
                    }
                }
                // Index operand types must be i32.
                for e in index {
                    if let IndexExpr::Value(v) = e {
                        if types[v.idx()] != Some(ScalarType::I32) {
                            return Err(ContractViolation::TypeError {
                                udf: self.name.clone(),
                                at,
                                msg: "context index operands must be i32".into(),
                            });
                        }
                    }
                }
                let _ = writing;
                Ok("")
            };

            match ins {
                Instr::LoadContext { key, index } => {
                    check_access(at, key, index, &self.ctx_reads, false)?;
                    reads_used.push(key);
                }
                Instr::ContextStore { key, index, value }
                | Instr::ContextAdd { key, index, value } => {
                    check_access(at, key, index, &self.ctx_writes, true)?;
                    let decl = self.ctx_writes.iter().find(|a| &a.key == key).unwrap();
                    if types[value.idx()] != Some(decl.ty) {
                        return Err(ContractViolation::TypeError {
                            udf: udf(),
                            at,
                            msg: format!("write value type does not match `{key}` ({})", decl.ty),
                        });
                    }
                    writes_used.push(key);
                }
                Instr::ContextIncrement { key, index } => {
                    check_access(at, key, index, &self.ctx_writes, true)?;
                    let decl = self.ctx_writes.iter().find(|a| &a.key == key).unwrap();
                    if decl.ty != ScalarType::I32 {
                        return Err(ContractViolation::TypeError {
                            udf: udf(),
                            at,
                            msg: format!("context-increment target `{key}` must be i32"),
                        });
                    }
                    writes_used.push(key);
                }
                Instr::StoreField(i, v) => {
                    if *i >= self.output.len() {
                        return Err(ContractViolation::FieldOutOfRange {
                            udf: udf(),
                            at,
                            field: *i,
                            arity: self.output.len(),
                        });
                    }
                    if types[v.idx()] != Some(self.output[*i]) {
                        return Err(ContractViolation::TypeError {
                            udf: udf(),
                            at,
                            msg: format!("stored value type does not match output field {i}"),
                        });
                    }
                    store_counts[*i] += 1;
                }
                Instr::EmitTuple(vs) => {
                    if vs.len() != self.output.len() {
                        return Err(ContractViolation::TypeError {
                            udf: udf(),
                            at,
                            msg: format!(
                                "emit-tuple arity {} does not match output arity {}",
                                vs.len(),
                                self.output.len()
                            ),
                        });
                    }
                    for (c, v) in vs.iter().enumerate() {
                        if types[v.idx()] != Some(self.output[c]) {
                            return Err(ContractViolation::TypeError {
                                udf: udf(),
                                at,
                                msg: format!("emitted value {c} type mismatch"),
                            });
                        }
                    }
                    emit_count += 1;
                }
                Instr::AccAdd { slot, value } => {
                    if *slot >= self.acc.len() {
                        return Err(ContractViolation::AccSlotOutOfRange {
                            udf: udf(),
                            slot: *slot,
                            len: self.acc.len(),
                        });
                    }
                    if types[value.idx()] != Some(self.acc[*slot]) {
                        return Err(ContractViolation::TypeError {
                            udf: udf(),
                            at,
                            msg: format!("acc-add value type does not match slot {slot}"),
                        });
                    }
                }
                Instr::AccIncrement { slot } => {
                    if *slot >= self.acc.len() {
                        return Err(ContractViolation::AccSlotOutOfRange {
                            udf: udf(),
                            slot: *slot,
                            len: self.acc.len(),
                        });
                    }
                    if self.acc[*slot] != ScalarType::I32 {
                        return Err(ContractViolation::TypeError {
                            udf: udf(),
                            at,
                            msg: format!("acc-increment slot {slot} must be i32"),
                        });
                    }
                }
                Instr::ReturnBool(v) => {
                    if types[v.idx()] != Some(ScalarType::I32) {
                        return Err(ContractViolation::TypeError {
                            udf: udf(),
                            at,
                            msg: "return-bool operand must be i32".into(),
                        });
                    }
                    return_count += 1;
                }
                _ => {}
            }
        }

        match kind {
            Kind::Map => {
                for (field, count) in store_counts.iter().enumerate() {
                    if *count != 1 {
                        return Err(ContractViolation::OutputFieldStoreCount {
                            udf: udf(),
                            field,
                            count: *count,
                        });
                    }
                }
            }
            Kind::Predicate | Kind::Invariant => {
                let last_is_return = matches!(self.body.last(), Some(Instr::ReturnBool(_)));
                if return_count != 1 || !last_is_return {
                    return Err(ContractViolation::MissingReturn { udf: udf(), kind });
                }
            }
            Kind::Key => {
                if emit_count != 1
                    || self.output.len() != 1
                    || self.output[0] != ScalarType::I32
                {
                    return Err(ContractViolation::BadKeyShape { udf: udf() });
                }
            }
            _ => {}
        }

        // Declared accesses must exactly cover the accesses in the body.
        for decl in &self.ctx_reads {
            if !reads_used.iter().any(|k| *k == decl.key) {
                return Err(ContractViolation::UnusedContextDeclaration {
                    udf: udf(),
                    key: decl.key.clone(),
                    rw: "read",
                });
            }
        }
        for decl in &self.ctx_writes {
            if !writes_used.iter().any(|k| *k == decl.key) {
                return Err(ContractViolation::UnusedContextDeclaration {
                    udf: udf(),
                    key: decl.key.clone(),
                    rw: "write",
                });
            }
        }
        Ok(())
    }

    /// Distinct tuple fields whose loaded value feeds computation (anything
    /// other than a plain pass-through store). These are the operand bytes
    /// the analyzer charges against memory bandwidth.
    pub fn computed_read_fields(&self) -> Vec<usize> {
        let mut computed = vec![false; self.input.len()];
        // Values defined by load-field.
        let mut loads: Vec<Option<usize>> = Vec::with_capacity(self.body.len());
        for ins in &self.body {
            loads.push(match ins {
                Instr::LoadField(i) => Some(*i),
                _ => None,
            });
        }
        for ins in &self.body {
            let feeds_compute = !matches!(ins, Instr::StoreField(..) | Instr::EmitTuple(..));
            for v in ins.operands() {
                if let Some(field) = loads[v.idx()] {
                    if feeds_compute {
                        computed[field] = true;
                    }
                }
            }
        }
        (0..self.input.len()).filter(|i| computed[*i]).collect()
    }

    /// Output fields that are plain copies of input fields (map kind only):
    /// returns `out_field -> in_field` for every pass-through store.
    pub fn passthrough_fields(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for ins in &self.body {
            if let Instr::StoreField(field, v) = ins {
                if let Some(Instr::LoadField(src)) = self.body.get(v.idx()) {
                    out.push((*field, *src));
                }
            }
        }
        out
    }

    /// Zero-initialized accumulator slots for one reduce group.
    pub fn acc_init(&self) -> Vec<Scalar> {
        self.acc
            .iter()
            .map(|ty| match ty {
                ScalarType::F32 => Scalar::F32(0.0),
                ScalarType::I32 => Scalar::I32(0),
            })
            .collect()
    }

    pub fn reads_context(&self) -> bool {
        !self.ctx_reads.is_empty()
    }

    pub fn writes_context(&self) -> bool {
        !self.ctx_writes.is_empty()
    }
}

/// Convenience constructor for straight-line programs. Bounded loops are
/// written as ordinary host-language loops over builder calls, which unrolls
/// them at construction time.
pub struct UdfBuilder {
    program: UdfProgram,
}

impl UdfBuilder {
    pub fn new(name: &str, kind: Kind) -> Self {
        UdfBuilder {
            program: UdfProgram {
                name: name.to_string(),
                kind,
                input: Vec::new(),
                output: Vec::new(),
                acc: Vec::new(),
                ctx_reads: Vec::new(),
                ctx_writes: Vec::new(),
                body: Vec::new(),
            },
        }
    }

    pub fn input(mut self, types: &[ScalarType]) -> Self {
        self.program.input = types.to_vec();
        self
    }

    pub fn output(mut self, types: &[ScalarType]) -> Self {
        self.program.output = types.to_vec();
        self
    }

    pub fn acc_slots(mut self, types: &[ScalarType]) -> Self {
        self.program.acc = types.to_vec();
        self
    }

    pub fn ctx_read(mut self, key: &str, ty: ScalarType, shape: Shape) -> Self {
        self.program.ctx_reads.push(ContextAccess {
            key: key.to_string(),
            ty,
            shape,
        });
        self
    }

    pub fn ctx_write(mut self, key: &str, ty: ScalarType, shape: Shape) -> Self {
        self.program.ctx_writes.push(ContextAccess {
            key: key.to_string(),
            ty,
            shape,
        });
        self
    }

    fn push(&mut self, ins: Instr) -> ValueId {
        let id = ValueId(self.program.body.len() as u32);
        self.program.body.push(ins);
        id
    }

    pub fn const_f32(&mut self, v: f32) -> ValueId {
        self.push(Instr::Const(Scalar::F32(v)))
    }

    pub fn const_i32(&mut self, v: i32) -> ValueId {
        self.push(Instr::Const(Scalar::I32(v)))
    }

    pub fn cast(&mut self, to: ScalarType, v: ValueId) -> ValueId {
        self.push(Instr::Cast(to, v))
    }

    pub fn load_field(&mut self, i: usize) -> ValueId {
        self.push(Instr::LoadField(i))
    }

    pub fn store_field(&mut self, i: usize, v: ValueId) {
        self.push(Instr::StoreField(i, v));
    }

    pub fn load_ctx(&mut self, key: &str, index: &[IndexExpr]) -> ValueId {
        self.push(Instr::LoadContext {
            key: key.to_string(),
            index: index.to_vec(),
        })
    }

    pub fn ctx_store(&mut self, key: &str, index: &[IndexExpr], value: ValueId) {
        self.push(Instr::ContextStore {
            key: key.to_string(),
            index: index.to_vec(),
            value,
        });
    }

    pub fn ctx_add(&mut self, key: &str, index: &[IndexExpr], value: ValueId) {
        self.push(Instr::ContextAdd {
            key: key.to_string(),
            index: index.to_vec(),
            value,
        });
    }

    pub fn ctx_increment(&mut self, key: &str, index: &[IndexExpr]) {
        self.push(Instr::ContextIncrement {
            key: key.to_string(),
            index: index.to_vec(),
        });
    }

    pub fn acc_add(&mut self, slot: usize, value: ValueId) {
        self.push(Instr::AccAdd { slot, value });
    }

    pub fn acc_increment(&mut self, slot: usize) {
        self.push(Instr::AccIncrement { slot });
    }

    pub fn add(&mut self, a: ValueId, b: ValueId) -> ValueId {
        self.push(Instr::Add(a, b))
    }

    pub fn sub(&mut self, a: ValueId, b: ValueId) -> ValueId {
        self.push(Instr::Sub(a, b))
    }

    pub fn mul(&mut self, a: ValueId, b: ValueId) -> ValueId {
        self.push(Instr::Mul(a, b))
    }

    pub fn div(&mut self, a: ValueId, b: ValueId) -> ValueId {
        self.push(Instr::Div(a, b))
    }

    pub fn sqrt(&mut self, v: ValueId) -> ValueId {
        self.push(Instr::Sqrt(v))
    }

    pub fn exp(&mut self, v: ValueId) -> ValueId {
        self.push(Instr::Exp(v))
    }

    pub fn ln(&mut self, v: ValueId) -> ValueId {
        self.push(Instr::Ln(v))
    }

    pub fn min_select(&mut self, vs: &[ValueId]) -> ValueId {
        self.push(Instr::MinSelect(vs.to_vec()))
    }

    pub fn cmp(&mut self, op: CmpOp, a: ValueId, b: ValueId) -> ValueId {
        self.push(Instr::Cmp(op, a, b))
    }

    pub fn select(&mut self, cond: ValueId, on_true: ValueId, on_false: ValueId) -> ValueId {
        self.push(Instr::Select {
            cond,
            on_true,
            on_false,
        })
    }

    pub fn emit(&mut self, vs: &[ValueId]) {
        self.push(Instr::EmitTuple(vs.to_vec()));
    }

    pub fn return_bool(&mut self, v: ValueId) {
        self.push(Instr::ReturnBool(v));
    }

    /// Validate and hand out the finished program.
    pub fn build(self) -> Result<UdfProgram, ContractViolation> {
        self.program.validate()?;
        Ok(self.program)
    }
}
