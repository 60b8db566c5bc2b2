//! Fixed-width columnar relations and the CSV interchange format.
//!
//! Storage is one contiguous vector per column; all columns of a relation
//! have identical length. The on-disk format is comma-separated numbers, no
//! header, one tuple per line, `\n` line endings.

use crate::scalar::{Scalar, ScalarType};
use std::fmt;
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Field {
    pub name: String,
    pub ty: ScalarType,
}

/// Ordered list of named, typed columns. Fixed at relation creation.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Schema {
    pub fields: Vec<Field>,
}

impl Schema {
    pub fn new(fields: Vec<(&str, ScalarType)>) -> Self {
        Schema {
            fields: fields
                .into_iter()
                .map(|(name, ty)| Field {
                    name: name.to_string(),
                    ty,
                })
                .collect(),
        }
    }

    /// All-f32 schema with generated column names c0..cN.
    pub fn f32_cols(n: usize) -> Self {
        Schema {
            fields: (0..n)
                .map(|i| Field {
                    name: format!("c{i}"),
                    ty: ScalarType::F32,
                })
                .collect(),
        }
    }

    pub fn arity(&self) -> usize {
        self.fields.len()
    }

    pub fn types(&self) -> Vec<ScalarType> {
        self.fields.iter().map(|f| f.ty).collect()
    }

    pub fn row_bytes(&self) -> usize {
        // Both scalar types are 4 bytes wide.
        self.arity() * 4
    }

    /// Concatenate two schemas (cartesian / theta-join output), qualifying
    /// duplicate names the same way Context merge does.
    pub fn concat(left: &Schema, right: &Schema) -> Schema {
        let mut fields = Vec::with_capacity(left.arity() + right.arity());
        for f in &left.fields {
            let clash = right.fields.iter().any(|g| g.name == f.name);
            fields.push(Field {
                name: if clash {
                    format!("{}.left", f.name)
                } else {
                    f.name.clone()
                },
                ty: f.ty,
            });
        }
        for f in &right.fields {
            let clash = left.fields.iter().any(|g| g.name == f.name);
            fields.push(Field {
                name: if clash {
                    format!("{}.right", f.name)
                } else {
                    f.name.clone()
                },
                ty: f.ty,
            });
        }
        Schema { fields }
    }
}

impl fmt::Display for Schema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, field) in self.fields.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{}: {}", field.name, field.ty)?;
        }
        write!(f, ")")
    }
}

/// One column of 32-bit values.
#[derive(Debug, Clone, PartialEq)]
pub enum Column {
    F32(Vec<f32>),
    I32(Vec<i32>),
}

impl Column {
    pub fn with_capacity(ty: ScalarType, cap: usize) -> Self {
        match ty {
            ScalarType::F32 => Column::F32(Vec::with_capacity(cap)),
            ScalarType::I32 => Column::I32(Vec::with_capacity(cap)),
        }
    }

    pub fn zeros(ty: ScalarType, len: usize) -> Self {
        match ty {
            ScalarType::F32 => Column::F32(vec![0.0; len]),
            ScalarType::I32 => Column::I32(vec![0; len]),
        }
    }

    pub fn ty(&self) -> ScalarType {
        match self {
            Column::F32(_) => ScalarType::F32,
            Column::I32(_) => ScalarType::I32,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Column::F32(v) => v.len(),
            Column::I32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, i: usize) -> Scalar {
        match self {
            Column::F32(v) => Scalar::F32(v[i]),
            Column::I32(v) => Scalar::I32(v[i]),
        }
    }

    pub fn push(&mut self, v: Scalar) {
        match (self, v) {
            (Column::F32(d), Scalar::F32(x)) => d.push(x),
            (Column::I32(d), Scalar::I32(x)) => d.push(x),
            (c, v) => panic!("pushed {:?} into {:?} column", v.ty(), c.ty()),
        }
    }

    pub fn slice(&self, start: usize, end: usize) -> Column {
        match self {
            Column::F32(v) => Column::F32(v[start..end].to_vec()),
            Column::I32(v) => Column::I32(v[start..end].to_vec()),
        }
    }

    /// The raw f32 storage; panics if the column is i32 (kernels resolve
    /// column types at compile time).
    pub fn f32s(&self) -> &[f32] {
        match self {
            Column::F32(v) => v,
            Column::I32(_) => panic!("expected f32 column"),
        }
    }

    pub fn i32s(&self) -> &[i32] {
        match self {
            Column::I32(v) => v,
            Column::F32(_) => panic!("expected i32 column"),
        }
    }

    pub fn extend_from(&mut self, other: &Column) {
        match (self, other) {
            (Column::F32(a), Column::F32(b)) => a.extend_from_slice(b),
            (Column::I32(a), Column::I32(b)) => a.extend_from_slice(b),
            _ => panic!("column type mismatch in extend"),
        }
    }
}

#[derive(Debug, Error)]
pub enum RelationError {
    #[error("row {row}: expected {expected} values, found {found}")]
    BadArity {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("row {row}: cannot parse `{text}` as {ty}")]
    BadNumber {
        row: usize,
        text: String,
        ty: ScalarType,
    },
    #[error("column length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// A fixed-schema columnar relation.
#[derive(Debug, Clone, PartialEq)]
pub struct Relation {
    pub schema: Schema,
    pub columns: Vec<Column>,
    cardinality: usize,
}

impl Relation {
    pub fn empty(schema: Schema) -> Self {
        let columns = schema
            .types()
            .iter()
            .map(|t| Column::with_capacity(*t, 0))
            .collect();
        Relation {
            schema,
            columns,
            cardinality: 0,
        }
    }

    pub fn from_columns(schema: Schema, columns: Vec<Column>) -> Result<Self, RelationError> {
        assert_eq!(schema.arity(), columns.len());
        let n = columns.first().map(Column::len).unwrap_or(0);
        for c in &columns {
            if c.len() != n {
                return Err(RelationError::LengthMismatch(n, c.len()));
            }
        }
        Ok(Relation {
            schema,
            columns,
            cardinality: n,
        })
    }

    /// Build from row-major scalars, mostly for tests and small fixtures.
    pub fn from_rows(schema: Schema, rows: &[Vec<Scalar>]) -> Self {
        let mut columns: Vec<Column> = schema
            .types()
            .iter()
            .map(|t| Column::with_capacity(*t, rows.len()))
            .collect();
        for (r, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), schema.arity(), "row {r} arity mismatch");
            for (c, v) in row.iter().enumerate() {
                columns[c].push(*v);
            }
        }
        let cardinality = rows.len();
        Relation {
            schema,
            columns,
            cardinality,
        }
    }

    pub fn cardinality(&self) -> usize {
        self.cardinality
    }

    pub fn arity(&self) -> usize {
        self.schema.arity()
    }

    pub fn row(&self, i: usize) -> Vec<Scalar> {
        self.columns.iter().map(|c| c.get(i)).collect()
    }

    pub fn rows(&self) -> impl Iterator<Item = Vec<Scalar>> + '_ {
        (0..self.cardinality).map(|i| self.row(i))
    }

    pub fn push_row(&mut self, row: &[Scalar]) {
        assert_eq!(row.len(), self.arity());
        for (c, v) in row.iter().enumerate() {
            self.columns[c].push(*v);
        }
        self.cardinality += 1;
    }

    pub fn slice_rows(&self, start: usize, end: usize) -> Relation {
        Relation {
            schema: self.schema.clone(),
            columns: self.columns.iter().map(|c| c.slice(start, end)).collect(),
            cardinality: end - start,
        }
    }

    pub fn append(&mut self, other: &Relation) {
        assert_eq!(self.schema.types(), other.schema.types());
        for (a, b) in self.columns.iter_mut().zip(&other.columns) {
            a.extend_from(b);
        }
        self.cardinality += other.cardinality;
    }

    pub fn size_bytes(&self) -> usize {
        self.cardinality * self.schema.row_bytes()
    }

    /// Bit-exact row equality against another relation (same order).
    pub fn bit_eq(&self, other: &Relation) -> bool {
        if self.cardinality != other.cardinality || self.arity() != other.arity() {
            return false;
        }
        self.columns.iter().zip(&other.columns).all(|(a, b)| match (a, b) {
            (Column::F32(x), Column::F32(y)) => {
                x.iter().zip(y).all(|(p, q)| p.to_bits() == q.to_bits())
            }
            (Column::I32(x), Column::I32(y)) => x == y,
            _ => false,
        })
    }

    /// Read a relation from CSV. A malformed row (wrong arity or an
    /// unparsable number) aborts with its 1-based row number.
    pub fn load_csv(path: &Path, schema: Schema) -> Result<Self, RelationError> {
        let file = std::fs::File::open(path)?;
        let reader = std::io::BufReader::new(file);
        let types = schema.types();
        let mut columns: Vec<Column> = types.iter().map(|t| Column::with_capacity(*t, 1024)).collect();
        let mut n = 0usize;
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let row = lineno + 1;
            let mut count = 0usize;
            for (c, tok) in line.split(',').enumerate() {
                count += 1;
                if c >= types.len() {
                    continue;
                }
                let tok = tok.trim();
                match types[c] {
                    ScalarType::F32 => {
                        let v: f32 = tok.parse().map_err(|_| RelationError::BadNumber {
                            row,
                            text: tok.to_string(),
                            ty: ScalarType::F32,
                        })?;
                        columns[c].push(Scalar::F32(v));
                    }
                    ScalarType::I32 => {
                        let v: i32 = tok.parse().map_err(|_| RelationError::BadNumber {
                            row,
                            text: tok.to_string(),
                            ty: ScalarType::I32,
                        })?;
                        columns[c].push(Scalar::I32(v));
                    }
                }
            }
            if count != types.len() {
                return Err(RelationError::BadArity {
                    row,
                    expected: types.len(),
                    found: count,
                });
            }
            n += 1;
        }
        Ok(Relation {
            schema,
            columns,
            cardinality: n,
        })
    }

    /// Write the relation in the same format `load_csv` reads.
    pub fn save_csv(&self, path: &Path) -> Result<(), RelationError> {
        let file = std::fs::File::create(path)?;
        let mut w = BufWriter::new(file);
        let mut line = String::new();
        for i in 0..self.cardinality {
            line.clear();
            for (c, col) in self.columns.iter().enumerate() {
                if c > 0 {
                    line.push(',');
                }
                match col {
                    Column::F32(v) => line.push_str(&format!("{}", v[i])),
                    Column::I32(v) => line.push_str(&format!("{}", v[i])),
                }
            }
            line.push('\n');
            w.write_all(line.as_bytes())?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_col() -> Relation {
        Relation::from_rows(
            Schema::f32_cols(2),
            &[
                vec![Scalar::F32(1.0), Scalar::F32(2.0)],
                vec![Scalar::F32(3.0), Scalar::F32(4.0)],
            ],
        )
    }

    #[test]
    fn csv_round_trip() {
        let dir = std::env::temp_dir();
        let path = dir.join("lanefuse_relation_roundtrip.csv");
        let r = two_col();
        r.save_csv(&path).unwrap();
        let back = Relation::load_csv(&path, Schema::f32_cols(2)).unwrap();
        assert!(r.bit_eq(&back));
        // Canonical numeric text survives a second round trip byte for byte.
        let text = std::fs::read(&path).unwrap();
        back.save_csv(&path).unwrap();
        assert_eq!(text, std::fs::read(&path).unwrap());
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn csv_bad_arity_reports_row() {
        let dir = std::env::temp_dir();
        let path = dir.join("lanefuse_relation_bad_arity.csv");
        std::fs::write(&path, "1,2\n3\n").unwrap();
        let err = Relation::load_csv(&path, Schema::f32_cols(2)).unwrap_err();
        match err {
            RelationError::BadArity { row, .. } => assert_eq!(row, 2),
            other => panic!("unexpected: {other}"),
        }
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn csv_bad_number_reports_row() {
        let dir = std::env::temp_dir();
        let path = dir.join("lanefuse_relation_bad_number.csv");
        std::fs::write(&path, "1,2\n3,zebra\n").unwrap();
        let err = Relation::load_csv(&path, Schema::f32_cols(2)).unwrap_err();
        match err {
            RelationError::BadNumber { row, text, .. } => {
                assert_eq!(row, 2);
                assert_eq!(text, "zebra");
            }
            other => panic!("unexpected: {other}"),
        }
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn schema_concat_qualifies_clashes() {
        let a = Schema::new(vec![("x", ScalarType::F32), ("y", ScalarType::F32)]);
        let b = Schema::new(vec![("x", ScalarType::F32), ("z", ScalarType::F32)]);
        let c = Schema::concat(&a, &b);
        let names: Vec<_> = c.fields.iter().map(|f| f.name.as_str()).collect();
        assert_eq!(names, vec!["x.left", "y", "x.right", "z"]);
    }
}
