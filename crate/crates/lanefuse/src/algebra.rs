//! TupleSets and the logical operator algebra.
//!
//! A workflow is a DAG of operator nodes built fluently from sources. Nothing
//! executes at build time: `Engine::evaluate` runs analysis, planning,
//! synthesis, and the parallel runtime over the finished workflow.
//!
//! Contract checks happen eagerly as nodes are added, so an invalid workflow
//! never reaches the planner: selections cannot read the Context, maps cannot
//! write it, reduce bodies may only issue commutative writes, and so on.

use crate::context::{Context, Shape};
use crate::ir::{ContractViolation, Kind, UdfProgram};
use crate::relation::{Relation, RelationError, Schema};
use crate::scalar::ScalarType;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, OnceLock};
use thiserror::Error;

/// A materialized pairing of a relation and its Context: the result of
/// evaluating a workflow, immutable and safely shareable across threads.
#[derive(Debug, Clone)]
pub struct TupleSet {
    pub relation: Arc<Relation>,
    pub context: Context,
}

impl TupleSet {
    pub fn new(relation: Relation, context: Context) -> Self {
        TupleSet {
            relation: Arc::new(relation),
            context,
        }
    }

    /// Write the relation as CSV, in the same format `load` reads.
    pub fn save(&self, path: &Path) -> Result<(), RelationError> {
        self.relation.save_csv(path)
    }
}

#[derive(Debug)]
enum SourceData {
    Csv { path: PathBuf, schema: Schema },
    Materialized(Arc<Relation>),
}

/// A workflow input. CSV sources are read lazily, exactly once, and the
/// parsed relation is cached for reuse across evaluations.
#[derive(Debug)]
pub struct Source {
    data: SourceData,
    cache: OnceLock<Arc<Relation>>,
    loads: AtomicUsize,
}

impl Source {
    pub fn schema(&self) -> &Schema {
        match &self.data {
            SourceData::Csv { schema, .. } => schema,
            SourceData::Materialized(r) => &r.schema,
        }
    }

    /// Times the backing file has actually been read.
    pub fn load_count(&self) -> usize {
        self.loads.load(Ordering::Relaxed)
    }

    pub fn materialize(&self) -> Result<Arc<Relation>, RelationError> {
        match &self.data {
            SourceData::Materialized(r) => Ok(Arc::clone(r)),
            SourceData::Csv { path, schema } => {
                if let Some(r) = self.cache.get() {
                    return Ok(Arc::clone(r));
                }
                let rel = Arc::new(Relation::load_csv(path, schema.clone())?);
                self.loads.fetch_add(1, Ordering::Relaxed);
                let _ = self.cache.set(Arc::clone(&rel));
                Ok(Arc::clone(self.cache.get().unwrap()))
            }
        }
    }

    /// Estimated cardinality for planning; reads the file if needed.
    pub fn estimated_rows(&self) -> usize {
        self.materialize().map(|r| r.cardinality()).unwrap_or(0)
    }
}

/// Logical operator kinds, one per Table-style algebra row.
#[derive(Debug, Clone)]
pub enum Operator {
    Source {
        source: Arc<Source>,
        context: Context,
    },
    Selection(Arc<UdfProgram>),
    Projection(Arc<UdfProgram>),
    Rename(Arc<UdfProgram>),
    Cartesian,
    ThetaJoin(Arc<UdfProgram>),
    Union,
    Difference,
    Map(Arc<UdfProgram>),
    FlatMap(Arc<UdfProgram>),
    Filter(Arc<UdfProgram>),
    Reduce {
        udf: Arc<UdfProgram>,
        key: Option<Arc<UdfProgram>>,
    },
    Update(Arc<UdfProgram>),
    Loop(Arc<UdfProgram>),
}

impl Operator {
    pub fn name(&self) -> &'static str {
        match self {
            Operator::Source { .. } => "source",
            Operator::Selection(_) => "selection",
            Operator::Projection(_) => "projection",
            Operator::Rename(_) => "rename",
            Operator::Cartesian => "cartesian",
            Operator::ThetaJoin(_) => "theta-join",
            Operator::Union => "union",
            Operator::Difference => "difference",
            Operator::Map(_) => "map",
            Operator::FlatMap(_) => "flatmap",
            Operator::Filter(_) => "filter",
            Operator::Reduce { .. } => "reduce",
            Operator::Update(_) => "update",
            Operator::Loop(_) => "loop",
        }
    }

    pub fn udf(&self) -> Option<&Arc<UdfProgram>> {
        match self {
            Operator::Selection(u)
            | Operator::Projection(u)
            | Operator::Rename(u)
            | Operator::ThetaJoin(u)
            | Operator::Map(u)
            | Operator::FlatMap(u)
            | Operator::Filter(u)
            | Operator::Reduce { udf: u, .. }
            | Operator::Update(u)
            | Operator::Loop(u) => Some(u),
            _ => None,
        }
    }

    /// Pipeline breakers force materialization of intermediate results.
    pub fn is_breaker(&self) -> bool {
        matches!(
            self,
            Operator::Reduce { .. } | Operator::Update(_) | Operator::Loop(_)
        )
    }
}

#[derive(Debug, Clone)]
pub struct OperatorNode {
    pub op: Operator,
    pub inputs: Vec<usize>,
    /// Output schema of this node.
    pub schema: Schema,
}

type CtxDecl = BTreeMap<String, (ScalarType, Shape)>;

#[derive(Debug, Error)]
pub enum WorkflowError {
    #[error("{op} expects a {expected} UDF, got a {found} UDF `{udf}`")]
    WrongUdfKind {
        op: &'static str,
        expected: &'static str,
        found: String,
        udf: String,
    },
    #[error("selection predicate `{0}` reads the Context; relational operators cannot touch Context variables")]
    SelectionReadsContext(String),
    #[error("{op} UDF `{udf}` must not access the Context")]
    ContextAccessForbidden { op: &'static str, udf: String },
    #[error("UDF `{udf}` input arity {udf_arity} does not match upstream schema arity {schema_arity}")]
    InputArityMismatch {
        udf: String,
        udf_arity: usize,
        schema_arity: usize,
    },
    #[error("UDF `{udf}` input types do not match upstream schema {schema}")]
    InputTypeMismatch { udf: String, schema: String },
    #[error("declared output arity {declared} does not match UDF `{udf}` output arity {actual}")]
    OutputArityMismatch {
        udf: String,
        declared: usize,
        actual: usize,
    },
    #[error("{op} requires identical schemas, got {left} vs {right}")]
    SchemaMismatch {
        op: &'static str,
        left: String,
        right: String,
    },
    #[error("UDF `{udf}` accesses context key `{key}` which is not declared in the workflow context")]
    UnknownContextKey { udf: String, key: String },
    #[error("UDF `{udf}` declares context key `{key}` as {declared} but the workflow holds {actual}")]
    ContextShapeMismatch {
        udf: String,
        key: String,
        declared: String,
        actual: String,
    },
    #[error("nested loops are not supported; the workflow already contains a loop")]
    NestedLoop,
    #[error("rename requires a pass-through UDF; `{udf}` computes new values")]
    RenameComputes { udf: String },
    #[error("rename expects {arity} new names, got {given}")]
    RenameArity { arity: usize, given: usize },
    #[error(transparent)]
    Contract(#[from] ContractViolation),
    #[error(transparent)]
    Relation(#[from] RelationError),
}

/// A logical workflow: a DAG of operator nodes plus the head node the next
/// operator will attach to. Construction is single-owner and not thread-safe;
/// evaluation never mutates the workflow.
#[derive(Debug, Clone)]
pub struct Workflow {
    pub nodes: Vec<OperatorNode>,
    pub head: usize,
    /// Declared context keys visible at the head (merged across sources).
    ctx_decl: CtxDecl,
    has_loop: bool,
}

impl Workflow {
    /// Start a workflow from a CSV file. The file is not read until the
    /// workflow is evaluated, and at most once per source.
    pub fn load(path: impl Into<PathBuf>, schema: Schema, context: Context) -> Self {
        let source = Arc::new(Source {
            data: SourceData::Csv {
                path: path.into(),
                schema: schema.clone(),
            },
            cache: OnceLock::new(),
            loads: AtomicUsize::new(0),
        });
        Workflow::from_source(source, schema, context)
    }

    /// Start a workflow from an in-memory TupleSet (e.g. a previous
    /// `evaluate` result, reused across computations).
    pub fn from_tupleset(ts: &TupleSet) -> Self {
        let schema = ts.relation.schema.clone();
        let source = Arc::new(Source {
            data: SourceData::Materialized(Arc::clone(&ts.relation)),
            cache: OnceLock::new(),
            loads: AtomicUsize::new(0),
        });
        Workflow::from_source(source, schema, ts.context.clone())
    }

    pub fn from_relation(relation: Relation, context: Context) -> Self {
        Workflow::from_tupleset(&TupleSet::new(relation, context))
    }

    fn from_source(source: Arc<Source>, schema: Schema, context: Context) -> Self {
        let ctx_decl = context
            .iter()
            .map(|(k, v)| (k.to_string(), (v.ty(), v.shape)))
            .collect();
        Workflow {
            nodes: vec![OperatorNode {
                op: Operator::Source { source, context },
                inputs: vec![],
                schema,
            }],
            head: 0,
            ctx_decl,
            has_loop: false,
        }
    }

    pub fn head_schema(&self) -> &Schema {
        &self.nodes[self.head].schema
    }

    pub fn sources(&self) -> Vec<Arc<Source>> {
        self.nodes
            .iter()
            .filter_map(|n| match &n.op {
                Operator::Source { source, .. } => Some(Arc::clone(source)),
                _ => None,
            })
            .collect()
    }

    pub fn has_loop(&self) -> bool {
        self.has_loop
    }

    /// The initial Context: source contexts merged along every binary node.
    pub fn initial_context(&self) -> Context {
        fn rec(w: &Workflow, node: usize) -> Context {
            let n = &w.nodes[node];
            match &n.op {
                Operator::Source { context, .. } => context.clone(),
                _ => {
                    if n.inputs.len() == 2 {
                        Context::merge(&rec(w, n.inputs[0]), &rec(w, n.inputs[1]))
                    } else {
                        rec(w, n.inputs[0])
                    }
                }
            }
        }
        rec(self, self.head)
    }

    fn check_kind(
        udf: &UdfProgram,
        expected: Kind,
        op: &'static str,
        label: &'static str,
    ) -> Result<(), WorkflowError> {
        if udf.kind != expected {
            return Err(WorkflowError::WrongUdfKind {
                op,
                expected: label,
                found: udf.kind.to_string(),
                udf: udf.name.clone(),
            });
        }
        Ok(())
    }

    fn check_input(&self, udf: &UdfProgram) -> Result<(), WorkflowError> {
        let schema = self.head_schema();
        if udf.input.len() != schema.arity() {
            return Err(WorkflowError::InputArityMismatch {
                udf: udf.name.clone(),
                udf_arity: udf.input.len(),
                schema_arity: schema.arity(),
            });
        }
        if udf.input != schema.types() {
            return Err(WorkflowError::InputTypeMismatch {
                udf: udf.name.clone(),
                schema: schema.to_string(),
            });
        }
        Ok(())
    }

    fn check_ctx_accesses(&self, udf: &UdfProgram) -> Result<(), WorkflowError> {
        for acc in udf.ctx_reads.iter().chain(udf.ctx_writes.iter()) {
            match self.ctx_decl.get(&acc.key) {
                None => {
                    return Err(WorkflowError::UnknownContextKey {
                        udf: udf.name.clone(),
                        key: acc.key.clone(),
                    })
                }
                Some((ty, shape)) if *ty != acc.ty || *shape != acc.shape => {
                    return Err(WorkflowError::ContextShapeMismatch {
                        udf: udf.name.clone(),
                        key: acc.key.clone(),
                        declared: format!("{} {}", acc.ty, acc.shape),
                        actual: format!("{} {}", ty, shape),
                    });
                }
                _ => {}
            }
        }
        Ok(())
    }

    fn push(mut self, op: Operator, schema: Schema) -> Self {
        let head = self.head;
        self.nodes.push(OperatorNode {
            op,
            inputs: vec![head],
            schema,
        });
        self.head = self.nodes.len() - 1;
        self
    }

    fn merge_binary(mut self, other: Workflow, op: Operator, schema: Schema) -> Self {
        let offset = self.nodes.len();
        let left_head = self.head;
        for mut n in other.nodes {
            for i in &mut n.inputs {
                *i += offset;
            }
            self.nodes.push(n);
        }
        let right_head = other.head + offset;
        // Merge declared context keys the same way the values merge.
        let mut merged: CtxDecl = BTreeMap::new();
        for (k, v) in &self.ctx_decl {
            if other.ctx_decl.contains_key(k) {
                merged.insert(format!("{k}.left"), *v);
            } else {
                merged.insert(k.clone(), *v);
            }
        }
        for (k, v) in &other.ctx_decl {
            if self.ctx_decl.contains_key(k) {
                merged.insert(format!("{k}.right"), *v);
            } else {
                merged.insert(k.clone(), *v);
            }
        }
        self.ctx_decl = merged;
        self.has_loop |= other.has_loop;
        self.nodes.push(OperatorNode {
            op,
            inputs: vec![left_head, right_head],
            schema,
        });
        self.head = self.nodes.len() - 1;
        self
    }

    /// Relational selection. The predicate may only read tuple fields.
    pub fn selection(self, pred: Arc<UdfProgram>) -> Result<Self, WorkflowError> {
        pred.validate()?;
        Self::check_kind(&pred, Kind::Predicate, "selection", "predicate")?;
        if pred.reads_context() {
            return Err(WorkflowError::SelectionReadsContext(pred.name.clone()));
        }
        self.check_input(&pred)?;
        let schema = self.head_schema().clone();
        Ok(self.push(Operator::Selection(pred), schema))
    }

    /// Relational projection: tuple-to-tuple, no Context access.
    pub fn projection(self, udf: Arc<UdfProgram>) -> Result<Self, WorkflowError> {
        udf.validate()?;
        Self::check_kind(&udf, Kind::Map, "projection", "map")?;
        if udf.reads_context() || udf.writes_context() {
            return Err(WorkflowError::ContextAccessForbidden {
                op: "projection",
                udf: udf.name.clone(),
            });
        }
        self.check_input(&udf)?;
        let schema = Schema {
            fields: udf
                .output
                .iter()
                .enumerate()
                .map(|(i, ty)| crate::relation::Field {
                    name: format!("c{i}"),
                    ty: *ty,
                })
                .collect(),
        };
        Ok(self.push(Operator::Projection(udf), schema))
    }

    /// Rename: new schema names, optionally reordering columns through a
    /// pass-through UDF. Values are never computed.
    pub fn rename(self, udf: Arc<UdfProgram>, names: &[&str]) -> Result<Self, WorkflowError> {
        udf.validate()?;
        Self::check_kind(&udf, Kind::Map, "rename", "map")?;
        if udf.reads_context() || udf.writes_context() {
            return Err(WorkflowError::ContextAccessForbidden {
                op: "rename",
                udf: udf.name.clone(),
            });
        }
        self.check_input(&udf)?;
        if udf.passthrough_fields().len() != udf.output.len() {
            return Err(WorkflowError::RenameComputes {
                udf: udf.name.clone(),
            });
        }
        if names.len() != udf.output.len() {
            return Err(WorkflowError::RenameArity {
                arity: udf.output.len(),
                given: names.len(),
            });
        }
        let schema = Schema {
            fields: udf
                .output
                .iter()
                .zip(names)
                .map(|(ty, name)| crate::relation::Field {
                    name: name.to_string(),
                    ty: *ty,
                })
                .collect(),
        };
        Ok(self.push(Operator::Rename(udf), schema))
    }

    /// Pure rename without reordering.
    pub fn rename_fields(self, names: &[&str]) -> Result<Self, WorkflowError> {
        let schema = self.head_schema().clone();
        let udf = identity_udf(&schema.types());
        self.rename(Arc::new(udf), names)
    }

    pub fn cartesian(self, other: Workflow) -> Result<Self, WorkflowError> {
        if other.has_loop || self.has_loop {
            // A loop body must be a chain above a single source lineage;
            // joining looped workflows is rejected with the nested-loop rule.
            return Err(WorkflowError::NestedLoop);
        }
        let schema = Schema::concat(self.head_schema(), other.head_schema());
        Ok(self.merge_binary(other, Operator::Cartesian, schema))
    }

    /// θ-join: predicate over the concatenated tuple, no Context access.
    pub fn theta_join(self, other: Workflow, theta: Arc<UdfProgram>) -> Result<Self, WorkflowError> {
        theta.validate()?;
        Self::check_kind(&theta, Kind::Predicate, "theta-join", "predicate")?;
        if theta.reads_context() {
            return Err(WorkflowError::SelectionReadsContext(theta.name.clone()));
        }
        if self.has_loop || other.has_loop {
            return Err(WorkflowError::NestedLoop);
        }
        let schema = Schema::concat(self.head_schema(), other.head_schema());
        if theta.input != schema.types() {
            return Err(WorkflowError::InputTypeMismatch {
                udf: theta.name.clone(),
                schema: schema.to_string(),
            });
        }
        Ok(self.merge_binary(other, Operator::ThetaJoin(theta), schema))
    }

    pub fn union(self, other: Workflow) -> Result<Self, WorkflowError> {
        if self.head_schema().types() != other.head_schema().types() {
            return Err(WorkflowError::SchemaMismatch {
                op: "union",
                left: self.head_schema().to_string(),
                right: other.head_schema().to_string(),
            });
        }
        if self.has_loop || other.has_loop {
            return Err(WorkflowError::NestedLoop);
        }
        let schema = self.head_schema().clone();
        Ok(self.merge_binary(other, Operator::Union, schema))
    }

    pub fn difference(self, other: Workflow) -> Result<Self, WorkflowError> {
        if self.head_schema().types() != other.head_schema().types() {
            return Err(WorkflowError::SchemaMismatch {
                op: "difference",
                left: self.head_schema().to_string(),
                right: other.head_schema().to_string(),
            });
        }
        if self.has_loop || other.has_loop {
            return Err(WorkflowError::NestedLoop);
        }
        let schema = self.head_schema().clone();
        Ok(self.merge_binary(other, Operator::Difference, schema))
    }

    /// Apply a 1-to-1 map. The Context is read-only here.
    pub fn map(self, udf: Arc<UdfProgram>) -> Result<Self, WorkflowError> {
        udf.validate()?;
        Self::check_kind(&udf, Kind::Map, "map", "map")?;
        self.check_input(&udf)?;
        self.check_ctx_accesses(&udf)?;
        let schema = Schema {
            fields: udf
                .output
                .iter()
                .enumerate()
                .map(|(i, ty)| crate::relation::Field {
                    name: format!("c{i}"),
                    ty: *ty,
                })
                .collect(),
        };
        Ok(self.push(Operator::Map(udf), schema))
    }

    /// Apply a 1-to-N flatmap.
    pub fn flatmap(self, udf: Arc<UdfProgram>) -> Result<Self, WorkflowError> {
        udf.validate()?;
        Self::check_kind(&udf, Kind::FlatMap, "flatmap", "flatmap")?;
        self.check_input(&udf)?;
        self.check_ctx_accesses(&udf)?;
        let schema = Schema {
            fields: udf
                .output
                .iter()
                .enumerate()
                .map(|(i, ty)| crate::relation::Field {
                    name: format!("c{i}"),
                    ty: *ty,
                })
                .collect(),
        };
        Ok(self.push(Operator::FlatMap(udf), schema))
    }

    /// Apply a 1-to-(0:1) filter. Unlike selection, the predicate may read
    /// the Context.
    pub fn filter(self, udf: Arc<UdfProgram>) -> Result<Self, WorkflowError> {
        udf.validate()?;
        Self::check_kind(&udf, Kind::Predicate, "filter", "predicate")?;
        self.check_input(&udf)?;
        self.check_ctx_accesses(&udf)?;
        let schema = self.head_schema().clone();
        Ok(self.push(Operator::Filter(udf), schema))
    }

    /// Aggregate with a commutative/associative reduce body, optionally
    /// grouped by a key function. Context writes are staged in update sets.
    pub fn reduce(
        self,
        udf: Arc<UdfProgram>,
        key: Option<Arc<UdfProgram>>,
    ) -> Result<Self, WorkflowError> {
        udf.validate()?;
        Self::check_kind(&udf, Kind::ReduceBody, "reduce", "reduce")?;
        self.check_input(&udf)?;
        self.check_ctx_accesses(&udf)?;
        if let Some(k) = &key {
            k.validate()?;
            Self::check_kind(k, Kind::Key, "reduce key", "key")?;
            self.check_input(k)?;
        }
        let mut fields = Vec::new();
        if key.is_some() {
            fields.push(crate::relation::Field {
                name: "key".to_string(),
                ty: ScalarType::I32,
            });
        }
        for (i, ty) in udf.acc.iter().enumerate() {
            fields.push(crate::relation::Field {
                name: format!("agg{i}"),
                ty: *ty,
            });
        }
        Ok(self.push(Operator::Reduce { udf, key }, Schema { fields }))
    }

    /// Directly transform the Context; executes logically in a single thread.
    pub fn update(self, udf: Arc<UdfProgram>) -> Result<Self, WorkflowError> {
        udf.validate()?;
        Self::check_kind(&udf, Kind::Update, "update", "update")?;
        self.check_ctx_accesses(&udf)?;
        let schema = self.head_schema().clone();
        Ok(self.push(Operator::Update(udf), schema))
    }

    /// Tail-recursive re-execution of everything upstream while the invariant
    /// holds. The body runs once before the invariant is first checked; the
    /// Context persists across iterations while the relation is re-derived
    /// from the sources each time.
    pub fn loop_while(self, inv: Arc<UdfProgram>) -> Result<Self, WorkflowError> {
        inv.validate()?;
        Self::check_kind(&inv, Kind::Invariant, "loop", "invariant")?;
        self.check_ctx_accesses(&inv)?;
        if self.has_loop {
            return Err(WorkflowError::NestedLoop);
        }
        let schema = self.head_schema().clone();
        let mut w = self.push(Operator::Loop(inv), schema);
        w.has_loop = true;
        Ok(w)
    }
}

/// Pass-through map over the given column types.
pub fn identity_udf(types: &[ScalarType]) -> UdfProgram {
    let mut b = crate::ir::UdfBuilder::new("identity", Kind::Map)
        .input(types)
        .output(types);
    for (i, _) in types.iter().enumerate() {
        let v = b.load_field(i);
        b.store_field(i, v);
    }
    b.build().expect("identity map always validates")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::context::ContextValue;
    use crate::ir::UdfBuilder;
    use crate::scalar::Scalar;

    fn const_true() -> Arc<UdfProgram> {
        let mut b = UdfBuilder::new("always", Kind::Predicate).input(&[ScalarType::F32]);
        let one = b.const_i32(1);
        b.return_bool(one);
        Arc::new(b.build().unwrap())
    }

    fn one_col_source() -> Workflow {
        let rel = Relation::from_rows(
            Schema::f32_cols(1),
            &[vec![Scalar::F32(1.0)], vec![Scalar::F32(2.0)]],
        );
        Workflow::from_relation(rel, Context::new())
    }

    #[test]
    fn selection_rejects_context_reading_predicate() {
        let mut b = UdfBuilder::new("peek", Kind::Predicate)
            .input(&[ScalarType::F32])
            .ctx_read("t", ScalarType::F32, Shape::Scalar);
        let t = b.load_ctx("t", &[]);
        let x = b.load_field(0);
        let c = b.cmp(crate::ir::CmpOp::Gt, x, t);
        b.return_bool(c);
        let pred = Arc::new(b.build().unwrap());

        let rel = Relation::from_rows(Schema::f32_cols(1), &[vec![Scalar::F32(1.0)]]);
        let ctx = Context::new().with("t", ContextValue::scalar(Scalar::F32(0.0)));
        let w = Workflow::from_relation(rel, ctx);
        match w.selection(pred) {
            Err(WorkflowError::SelectionReadsContext(_)) => {}
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn filter_may_read_context() {
        let mut b = UdfBuilder::new("peek", Kind::Predicate)
            .input(&[ScalarType::F32])
            .ctx_read("t", ScalarType::F32, Shape::Scalar);
        let t = b.load_ctx("t", &[]);
        let x = b.load_field(0);
        let c = b.cmp(crate::ir::CmpOp::Gt, x, t);
        b.return_bool(c);
        let pred = Arc::new(b.build().unwrap());

        let rel = Relation::from_rows(Schema::f32_cols(1), &[vec![Scalar::F32(1.0)]]);
        let ctx = Context::new().with("t", ContextValue::scalar(Scalar::F32(0.0)));
        Workflow::from_relation(rel, ctx).filter(pred).unwrap();
    }

    #[test]
    fn union_requires_identical_schemas() {
        let a = one_col_source();
        let b = Workflow::from_relation(
            Relation::from_rows(Schema::f32_cols(2), &[]),
            Context::new(),
        );
        assert!(matches!(
            a.union(b),
            Err(WorkflowError::SchemaMismatch { .. })
        ));
    }

    #[test]
    fn nested_loops_rejected() {
        let inv = {
            let mut b = UdfBuilder::new("never", Kind::Invariant);
            let z = b.const_i32(0);
            b.return_bool(z);
            Arc::new(b.build().unwrap())
        };
        let w = one_col_source().loop_while(Arc::clone(&inv)).unwrap();
        assert!(matches!(
            w.loop_while(inv),
            Err(WorkflowError::NestedLoop)
        ));
    }

    #[test]
    fn undeclared_context_key_rejected() {
        let mut b = UdfBuilder::new("bump", Kind::Update).ctx_write(
            "missing",
            ScalarType::I32,
            Shape::Scalar,
        );
        let one = b.const_i32(1);
        b.ctx_add("missing", &[], one);
        let udf = Arc::new(b.build().unwrap());
        assert!(matches!(
            one_col_source().update(udf),
            Err(WorkflowError::UnknownContextKey { .. })
        ));
    }

    #[test]
    fn selection_keeps_schema_and_builds() {
        let w = one_col_source().selection(const_true()).unwrap();
        assert_eq!(w.head_schema().arity(), 1);
        assert_eq!(w.nodes.len(), 2);
    }
}
