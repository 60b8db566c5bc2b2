//! Scalar values: the engine is fixed-width and two-typed, 32-bit floats for
//! data and 32-bit integers for keys, counts, and categorical columns.

use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScalarType {
    F32,
    I32,
}

impl fmt::Display for ScalarType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScalarType::F32 => write!(f, "f32"),
            ScalarType::I32 => write!(f, "i32"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Scalar {
    F32(f32),
    I32(i32),
}

impl Scalar {
    pub fn ty(&self) -> ScalarType {
        match self {
            Scalar::F32(_) => ScalarType::F32,
            Scalar::I32(_) => ScalarType::I32,
        }
    }

    pub fn as_f32(&self) -> f32 {
        match self {
            Scalar::F32(v) => *v,
            Scalar::I32(v) => *v as f32,
        }
    }

    pub fn as_i32(&self) -> i32 {
        match self {
            Scalar::I32(v) => *v,
            Scalar::F32(v) => *v as i32,
        }
    }

    /// Bit-exact equality, so NaN == NaN and 0.0 != -0.0. Used wherever
    /// determinism is checked or rows are compared as set members.
    pub fn bit_eq(&self, other: &Scalar) -> bool {
        match (self, other) {
            (Scalar::F32(a), Scalar::F32(b)) => a.to_bits() == b.to_bits(),
            (Scalar::I32(a), Scalar::I32(b)) => a == b,
            _ => false,
        }
    }
}

impl fmt::Display for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scalar::F32(v) => write!(f, "{v}"),
            Scalar::I32(v) => write!(f, "{v}"),
        }
    }
}

/// Relative error between two floats, with an absolute floor near zero.
pub fn rel_err(a: f64, b: f64) -> f64 {
    let d = (a - b).abs();
    let m = a.abs().max(b.abs());
    if m < 1e-9 {
        d
    } else {
        d / m
    }
}
