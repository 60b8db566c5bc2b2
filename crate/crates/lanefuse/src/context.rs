//! The Context: a dictionary of shared-state values that is logically global
//! across all workers. Shapes are fixed at declaration and never change.
//!
//! Reduce operators never mutate the Context directly; their deltas are staged
//! in [`UpdateSet`]s and applied after the operation completes.

use crate::scalar::{Scalar, ScalarType};
use std::collections::BTreeMap;
use std::fmt;
use thiserror::Error;

/// Declared shape of a Context entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Scalar,
    Vector(usize),
    Matrix(usize, usize),
}

impl Shape {
    pub fn len(&self) -> usize {
        match self {
            Shape::Scalar => 1,
            Shape::Vector(n) => *n,
            Shape::Matrix(r, c) => r * c,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of index operands an access needs (0 for scalars).
    pub fn rank(&self) -> usize {
        match self {
            Shape::Scalar => 0,
            Shape::Vector(_) => 1,
            Shape::Matrix(_, _) => 2,
        }
    }

    /// Flatten a multi-dimensional index, checking bounds.
    pub fn flat_index(&self, index: &[usize]) -> Option<usize> {
        match (self, index) {
            (Shape::Scalar, []) => Some(0),
            (Shape::Vector(n), [i]) if i < n => Some(*i),
            (Shape::Matrix(r, c), [i, j]) if i < r && j < c => Some(i * c + j),
            _ => None,
        }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Shape::Scalar => write!(f, "scalar"),
            Shape::Vector(n) => write!(f, "[{n}]"),
            Shape::Matrix(r, c) => write!(f, "[{r},{c}]"),
        }
    }
}

/// Typed, fixed-shape storage for one Context entry.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextValue {
    pub shape: Shape,
    pub data: ContextData,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ContextData {
    F32(Vec<f32>),
    I32(Vec<i32>),
}

impl ContextValue {
    pub fn zeros(ty: ScalarType, shape: Shape) -> Self {
        let data = match ty {
            ScalarType::F32 => ContextData::F32(vec![0.0; shape.len()]),
            ScalarType::I32 => ContextData::I32(vec![0; shape.len()]),
        };
        ContextValue { shape, data }
    }

    pub fn scalar(v: Scalar) -> Self {
        let data = match v {
            Scalar::F32(x) => ContextData::F32(vec![x]),
            Scalar::I32(x) => ContextData::I32(vec![x]),
        };
        ContextValue {
            shape: Shape::Scalar,
            data,
        }
    }

    pub fn vector_f32(v: Vec<f32>) -> Self {
        ContextValue {
            shape: Shape::Vector(v.len()),
            data: ContextData::F32(v),
        }
    }

    pub fn vector_i32(v: Vec<i32>) -> Self {
        ContextValue {
            shape: Shape::Vector(v.len()),
            data: ContextData::I32(v),
        }
    }

    pub fn matrix_f32(rows: usize, cols: usize, v: Vec<f32>) -> Self {
        assert_eq!(v.len(), rows * cols);
        ContextValue {
            shape: Shape::Matrix(rows, cols),
            data: ContextData::F32(v),
        }
    }

    pub fn matrix_i32(rows: usize, cols: usize, v: Vec<i32>) -> Self {
        assert_eq!(v.len(), rows * cols);
        ContextValue {
            shape: Shape::Matrix(rows, cols),
            data: ContextData::I32(v),
        }
    }

    pub fn ty(&self) -> ScalarType {
        match self.data {
            ContextData::F32(_) => ScalarType::F32,
            ContextData::I32(_) => ScalarType::I32,
        }
    }

    pub fn get_flat(&self, idx: usize) -> Scalar {
        match &self.data {
            ContextData::F32(v) => Scalar::F32(v[idx]),
            ContextData::I32(v) => Scalar::I32(v[idx]),
        }
    }

    pub fn set_flat(&mut self, idx: usize, v: Scalar) {
        match (&mut self.data, v) {
            (ContextData::F32(d), Scalar::F32(x)) => d[idx] = x,
            (ContextData::I32(d), Scalar::I32(x)) => d[idx] = x,
            _ => panic!("context value type mismatch"),
        }
    }

    pub fn add_flat(&mut self, idx: usize, v: Scalar) {
        match (&mut self.data, v) {
            (ContextData::F32(d), Scalar::F32(x)) => d[idx] += x,
            (ContextData::I32(d), Scalar::I32(x)) => d[idx] = d[idx].wrapping_add(x),
            _ => panic!("context value type mismatch"),
        }
    }

    pub fn as_f32_slice(&self) -> Option<&[f32]> {
        match &self.data {
            ContextData::F32(v) => Some(v),
            ContextData::I32(_) => None,
        }
    }

    pub fn as_i32_slice(&self) -> Option<&[i32]> {
        match &self.data {
            ContextData::I32(v) => Some(v),
            ContextData::F32(_) => None,
        }
    }
}

#[derive(Debug, Error)]
pub enum ContextError {
    #[error("duplicate context key `{0}`")]
    DuplicateKey(String),
    #[error("unknown context key `{0}`")]
    UnknownKey(String),
    #[error("index {index:?} out of range for context key `{key}` of shape {shape}")]
    IndexOutOfRange {
        key: String,
        index: Vec<usize>,
        shape: Shape,
    },
}

/// Dictionary of key-value pairs paired with a relation to form a TupleSet.
///
/// Keys are kept in a BTreeMap so iteration and merge order are deterministic.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Context {
    entries: BTreeMap<String, ContextValue>,
}

impl Context {
    pub fn new() -> Self {
        Context::default()
    }

    pub fn declare(&mut self, key: &str, value: ContextValue) -> Result<(), ContextError> {
        if self.entries.contains_key(key) {
            return Err(ContextError::DuplicateKey(key.to_string()));
        }
        self.entries.insert(key.to_string(), value);
        Ok(())
    }

    pub fn with(mut self, key: &str, value: ContextValue) -> Self {
        self.entries.insert(key.to_string(), value);
        self
    }

    pub fn get(&self, key: &str) -> Option<&ContextValue> {
        self.entries.get(key)
    }

    pub fn get_mut(&mut self, key: &str) -> Option<&mut ContextValue> {
        self.entries.get_mut(key)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|k| k.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ContextValue)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Merge for binary operators: conflicting key `k` becomes `k.left` /
    /// `k.right`, everything else is carried over unchanged.
    pub fn merge(left: &Context, right: &Context) -> Context {
        let mut out = Context::new();
        for (k, v) in &left.entries {
            if right.entries.contains_key(k) {
                out.entries.insert(format!("{k}.left"), v.clone());
            } else {
                out.entries.insert(k.clone(), v.clone());
            }
        }
        for (k, v) in &right.entries {
            if left.entries.contains_key(k) {
                out.entries.insert(format!("{k}.right"), v.clone());
            } else {
                out.entries.insert(k.clone(), v.clone());
            }
        }
        out
    }
}

/// One staged, commutative Context mutation.
#[derive(Debug, Clone, PartialEq)]
pub struct Delta {
    pub key: String,
    /// Flattened element offset within the entry.
    pub flat_index: usize,
    pub op: DeltaOp,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DeltaOp {
    Add(Scalar),
    Increment,
}

/// A staged list of commutative deltas produced by one reduce partition.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct UpdateSet {
    pub deltas: Vec<Delta>,
}

impl UpdateSet {
    pub fn new() -> Self {
        UpdateSet::default()
    }

    pub fn push(&mut self, key: &str, flat_index: usize, op: DeltaOp) {
        self.deltas.push(Delta {
            key: key.to_string(),
            flat_index,
            op,
        });
    }

    pub fn is_empty(&self) -> bool {
        self.deltas.is_empty()
    }

    /// Apply every delta in order. Integer deltas commute exactly; float
    /// deltas are reproducible because callers pass sets in a fixed order.
    /// Append all deltas from another update set, preserving order.
    pub fn extend(&mut self, other: UpdateSet) {
        self.deltas.extend(other.deltas);
    }

    pub fn apply(&self, ctx: &mut Context) -> Result<(), ContextError> {
        for d in &self.deltas {
            let entry = ctx
                .get_mut(&d.key)
                .ok_or_else(|| ContextError::UnknownKey(d.key.clone()))?;
            match d.op {
                DeltaOp::Add(v) => entry.add_flat(d.flat_index, v),
                DeltaOp::Increment => entry.add_flat(d.flat_index, Scalar::I32(1)),
            }
        }
        Ok(())
    }
}

/// Apply a sequence of update sets in the given (deterministic) order.
pub fn apply_update_sets(ctx: &mut Context, sets: &[UpdateSet]) -> Result<(), ContextError> {
    for s in sets {
        s.apply(ctx)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn merge_disambiguates_conflicting_keys() {
        let a = Context::new().with("k", ContextValue::scalar(Scalar::I32(1)));
        let b = Context::new().with("k", ContextValue::scalar(Scalar::I32(2)));
        let m = Context::merge(&a, &b);
        assert_eq!(m.get("k.left").unwrap().get_flat(0), Scalar::I32(1));
        assert_eq!(m.get("k.right").unwrap().get_flat(0), Scalar::I32(2));
        assert!(!m.contains("k"));
    }

    #[test]
    fn merge_keeps_distinct_keys() {
        let a = Context::new().with("a", ContextValue::scalar(Scalar::I32(1)));
        let b = Context::new().with("b", ContextValue::scalar(Scalar::I32(2)));
        let m = Context::merge(&a, &b);
        assert!(m.contains("a") && m.contains("b"));
    }

    #[test]
    fn update_sets_commute_for_integers() {
        let base = Context::new().with("k", ContextValue::scalar(Scalar::I32(0)));
        let mut s1 = UpdateSet::new();
        s1.push("k", 0, DeltaOp::Add(Scalar::I32(1)));
        let mut s2 = UpdateSet::new();
        s2.push("k", 0, DeltaOp::Add(Scalar::I32(2)));

        let mut c1 = base.clone();
        apply_update_sets(&mut c1, &[s1.clone(), s2.clone()]).unwrap();
        let mut c2 = base.clone();
        apply_update_sets(&mut c2, &[s2, s1]).unwrap();
        assert_eq!(c1.get("k").unwrap().get_flat(0), Scalar::I32(3));
        assert_eq!(c1, c2);
    }

    #[test]
    fn empty_update_set_list_is_identity() {
        let base = Context::new().with("k", ContextValue::scalar(Scalar::F32(1.5)));
        let mut c = base.clone();
        apply_update_sets(&mut c, &[]).unwrap();
        assert_eq!(c, base);
    }

    #[test]
    fn delta_to_undeclared_key_aborts() {
        let mut c = Context::new();
        let mut s = UpdateSet::new();
        s.push("missing", 0, DeltaOp::Increment);
        assert!(s.apply(&mut c).is_err());
    }

    #[test]
    fn shape_flat_index_bounds() {
        assert_eq!(Shape::Matrix(2, 3).flat_index(&[1, 2]), Some(5));
        assert_eq!(Shape::Matrix(2, 3).flat_index(&[2, 0]), None);
        assert_eq!(Shape::Vector(4).flat_index(&[3]), Some(3));
        assert_eq!(Shape::Scalar.flat_index(&[]), Some(0));
    }
}
