//! Textual form of the UDF IR, one instruction per line:
//!
//! ```text
//! udf distance map in(f32,f32) out(f32,f32,f32,f32,f32)
//! ctx-read k f32 [3,2]
//! %0 = load-field 0
//! %1 = load-context k [0,1]
//! %2 = sub %1 %0
//! store-field 2 %2
//! ```
//!
//! Value names are arbitrary identifiers after `%`; the parser renumbers
//! them positionally. `#` starts a comment. Used for test fixtures and the
//! `analyze` command.

use super::{CmpOp, ContextAccess, IndexExpr, Instr, Kind, UdfProgram, ValueId};
use crate::context::Shape;
use crate::scalar::{Scalar, ScalarType};
use std::collections::HashMap;
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ParseError {
    #[error("line {0}: expected `udf NAME KIND ...` header")]
    MissingHeader(usize),
    #[error("line {line}: unknown {what} `{text}`")]
    Unknown {
        line: usize,
        what: &'static str,
        text: String,
    },
    #[error("line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("line {line}: value `%{name}` used before definition")]
    UndefinedName { line: usize, name: String },
}

fn parse_kind(s: &str, line: usize) -> Result<Kind, ParseError> {
    Ok(match s {
        "predicate" => Kind::Predicate,
        "map" => Kind::Map,
        "flatmap" => Kind::FlatMap,
        "reduce" => Kind::ReduceBody,
        "update" => Kind::Update,
        "invariant" => Kind::Invariant,
        "key" => Kind::Key,
        _ => {
            return Err(ParseError::Unknown {
                line,
                what: "udf kind",
                text: s.to_string(),
            })
        }
    })
}

fn parse_ty(s: &str, line: usize) -> Result<ScalarType, ParseError> {
    match s {
        "f32" => Ok(ScalarType::F32),
        "i32" => Ok(ScalarType::I32),
        _ => Err(ParseError::Unknown {
            line,
            what: "type",
            text: s.to_string(),
        }),
    }
}

fn parse_type_list(s: &str, line: usize) -> Result<Vec<ScalarType>, ParseError> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',').map(|t| parse_ty(t.trim(), line)).collect()
}

fn parse_shape(s: &str, line: usize) -> Result<Shape, ParseError> {
    if s == "scalar" {
        return Ok(Shape::Scalar);
    }
    let inner = s
        .strip_prefix('[')
        .and_then(|s| s.strip_suffix(']'))
        .ok_or_else(|| ParseError::Malformed {
            line,
            msg: format!("bad shape `{s}` (expected scalar, [n], or [r,c])"),
        })?;
    let dims: Result<Vec<usize>, _> = inner.split(',').map(|d| d.trim().parse()).collect();
    match dims {
        Ok(d) if d.len() == 1 => Ok(Shape::Vector(d[0])),
        Ok(d) if d.len() == 2 => Ok(Shape::Matrix(d[0], d[1])),
        _ => Err(ParseError::Malformed {
            line,
            msg: format!("bad shape `{s}`"),
        }),
    }
}

struct LineParser<'a> {
    names: &'a HashMap<String, ValueId>,
    line: usize,
}

impl<'a> LineParser<'a> {
    fn value(&self, tok: &str) -> Result<ValueId, ParseError> {
        let name = tok.strip_prefix('%').ok_or_else(|| ParseError::Malformed {
            line: self.line,
            msg: format!("expected a %value, found `{tok}`"),
        })?;
        self.names
            .get(name)
            .copied()
            .ok_or_else(|| ParseError::UndefinedName {
                line: self.line,
                name: name.to_string(),
            })
    }

    fn usize(&self, tok: &str) -> Result<usize, ParseError> {
        tok.parse().map_err(|_| ParseError::Malformed {
            line: self.line,
            msg: format!("expected an index, found `{tok}`"),
        })
    }

    /// `[a,b]` where each element is an integer literal or a %value.
    fn index(&self, tok: &str) -> Result<Vec<IndexExpr>, ParseError> {
        if tok == "[]" {
            return Ok(Vec::new());
        }
        let inner = tok
            .strip_prefix('[')
            .and_then(|s| s.strip_suffix(']'))
            .ok_or_else(|| ParseError::Malformed {
                line: self.line,
                msg: format!("expected an index list, found `{tok}`"),
            })?;
        inner
            .split(',')
            .map(|e| {
                let e = e.trim();
                if e.starts_with('%') {
                    Ok(IndexExpr::Value(self.value(e)?))
                } else {
                    Ok(IndexExpr::Const(self.usize(e)?))
                }
            })
            .collect()
    }
}

/// Parse one program from its textual form.
pub fn parse_program(text: &str) -> Result<UdfProgram, ParseError> {
    let mut program: Option<UdfProgram> = None;
    let mut names: HashMap<String, ValueId> = HashMap::new();

    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let toks: Vec<&str> = content.split_whitespace().collect();

        if program.is_none() {
            if toks[0] != "udf" || toks.len() < 3 {
                return Err(ParseError::MissingHeader(line));
            }
            let mut p = UdfProgram {
                name: toks[1].to_string(),
                kind: parse_kind(toks[2], line)?,
                input: Vec::new(),
                output: Vec::new(),
                acc: Vec::new(),
                ctx_reads: Vec::new(),
                ctx_writes: Vec::new(),
                body: Vec::new(),
            };
            for tok in &toks[3..] {
                let (tag, rest) = tok.split_once('(').ok_or_else(|| ParseError::Malformed {
                    line,
                    msg: format!("bad header clause `{tok}`"),
                })?;
                let inner = rest.strip_suffix(')').ok_or_else(|| ParseError::Malformed {
                    line,
                    msg: format!("unterminated clause `{tok}`"),
                })?;
                let tys = parse_type_list(inner, line)?;
                match tag {
                    "in" => p.input = tys,
                    "out" => p.output = tys,
                    "acc" => p.acc = tys,
                    _ => {
                        return Err(ParseError::Unknown {
                            line,
                            what: "header clause",
                            text: tag.to_string(),
                        })
                    }
                }
            }
            program = Some(p);
            continue;
        }
        let p = program.as_mut().unwrap();

        if toks[0] == "ctx-read" || toks[0] == "ctx-write" {
            if toks.len() != 4 {
                return Err(ParseError::Malformed {
                    line,
                    msg: "expected `ctx-read KEY TYPE SHAPE`".into(),
                });
            }
            let access = ContextAccess {
                key: toks[1].to_string(),
                ty: parse_ty(toks[2], line)?,
                shape: parse_shape(toks[3], line)?,
            };
            if toks[0] == "ctx-read" {
                p.ctx_reads.push(access);
            } else {
                p.ctx_writes.push(access);
            }
            continue;
        }

        // Instruction line, with or without a result binding.
        let (bind, rest): (Option<&str>, &[&str]) = if toks.len() >= 3 && toks[1] == "=" {
            (Some(toks[0]), &toks[2..])
        } else {
            (None, &toks[..])
        };
        let lp = LineParser {
            names: &names,
            line,
        };
        let op = rest[0];
        let args = &rest[1..];
        let need = |n: usize| -> Result<(), ParseError> {
            if args.len() != n {
                Err(ParseError::Malformed {
                    line,
                    msg: format!("`{op}` expects {n} operand(s), found {}", args.len()),
                })
            } else {
                Ok(())
            }
        };

        let ins = match op {
            "const" => {
                need(2)?;
                let ty = parse_ty(args[0], line)?;
                let s = match ty {
                    ScalarType::F32 => Scalar::F32(args[1].parse().map_err(|_| {
                        ParseError::Malformed {
                            line,
                            msg: format!("bad f32 literal `{}`", args[1]),
                        }
                    })?),
                    ScalarType::I32 => Scalar::I32(args[1].parse().map_err(|_| {
                        ParseError::Malformed {
                            line,
                            msg: format!("bad i32 literal `{}`", args[1]),
                        }
                    })?),
                };
                Instr::Const(s)
            }
            "cast" => {
                need(2)?;
                Instr::Cast(parse_ty(args[0], line)?, lp.value(args[1])?)
            }
            "load-field" => {
                need(1)?;
                Instr::LoadField(lp.usize(args[0])?)
            }
            "store-field" => {
                need(2)?;
                Instr::StoreField(lp.usize(args[0])?, lp.value(args[1])?)
            }
            "load-context" => {
                need(2)?;
                Instr::LoadContext {
                    key: args[0].to_string(),
                    index: lp.index(args[1])?,
                }
            }
            "context-store" => {
                need(3)?;
                Instr::ContextStore {
                    key: args[0].to_string(),
                    index: lp.index(args[1])?,
                    value: lp.value(args[2])?,
                }
            }
            "context-add" => {
                need(3)?;
                Instr::ContextAdd {
                    key: args[0].to_string(),
                    index: lp.index(args[1])?,
                    value: lp.value(args[2])?,
                }
            }
            "context-increment" => {
                need(2)?;
                Instr::ContextIncrement {
                    key: args[0].to_string(),
                    index: lp.index(args[1])?,
                }
            }
            "acc-add" => {
                need(2)?;
                Instr::AccAdd {
                    slot: lp.usize(args[0])?,
                    value: lp.value(args[1])?,
                }
            }
            "acc-increment" => {
                need(1)?;
                Instr::AccIncrement {
                    slot: lp.usize(args[0])?,
                }
            }
            "add" | "sub" | "mul" | "div" => {
                need(2)?;
                let a = lp.value(args[0])?;
                let b = lp.value(args[1])?;
                match op {
                    "add" => Instr::Add(a, b),
                    "sub" => Instr::Sub(a, b),
                    "mul" => Instr::Mul(a, b),
                    _ => Instr::Div(a, b),
                }
            }
            "sqrt" => {
                need(1)?;
                Instr::Sqrt(lp.value(args[0])?)
            }
            "exp" => {
                need(1)?;
                Instr::Exp(lp.value(args[0])?)
            }
            "ln" => {
                need(1)?;
                Instr::Ln(lp.value(args[0])?)
            }
            "min-select" => {
                let vs: Result<Vec<_>, _> = args.iter().map(|a| lp.value(a)).collect();
                Instr::MinSelect(vs?)
            }
            "cmp" => {
                need(3)?;
                let c = match args[0] {
                    "lt" => CmpOp::Lt,
                    "le" => CmpOp::Le,
                    "eq" => CmpOp::Eq,
                    "ne" => CmpOp::Ne,
                    "ge" => CmpOp::Ge,
                    "gt" => CmpOp::Gt,
                    other => {
                        return Err(ParseError::Unknown {
                            line,
                            what: "comparison",
                            text: other.to_string(),
                        })
                    }
                };
                Instr::Cmp(c, lp.value(args[1])?, lp.value(args[2])?)
            }
            "select" => {
                need(3)?;
                Instr::Select {
                    cond: lp.value(args[0])?,
                    on_true: lp.value(args[1])?,
                    on_false: lp.value(args[2])?,
                }
            }
            "emit-tuple" => {
                let vs: Result<Vec<_>, _> = args.iter().map(|a| lp.value(a)).collect();
                Instr::EmitTuple(vs?)
            }
            "return-bool" => {
                need(1)?;
                Instr::ReturnBool(lp.value(args[0])?)
            }
            other => {
                return Err(ParseError::Unknown {
                    line,
                    what: "opcode",
                    text: other.to_string(),
                })
            }
        };

        let id = ValueId(p.body.len() as u32);
        if let Some(bind) = bind {
            let name = bind.strip_prefix('%').ok_or_else(|| ParseError::Malformed {
                line,
                msg: format!("result binding must be a %name, found `{bind}`"),
            })?;
            if !ins.produces_value() {
                return Err(ParseError::Malformed {
                    line,
                    msg: format!("`{op}` does not produce a value"),
                });
            }
            names.insert(name.to_string(), id);
        }
        p.body.push(ins);
    }

    program.ok_or(ParseError::MissingHeader(0))
}

fn fmt_types(tys: &[ScalarType]) -> String {
    tys.iter()
        .map(|t| t.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn fmt_index(index: &[IndexExpr]) -> String {
    let inner = index
        .iter()
        .map(|e| match e {
            IndexExpr::Const(i) => i.to_string(),
            IndexExpr::Value(v) => v.to_string(),
        })
        .collect::<Vec<_>>()
        .join(",");
    format!("[{inner}]")
}

/// Print a program in the form `parse_program` reads back.
pub fn print_program(p: &UdfProgram) -> String {
    let mut s = String::new();
    write!(s, "udf {} {}", p.name, p.kind).unwrap();
    if !p.input.is_empty() {
        write!(s, " in({})", fmt_types(&p.input)).unwrap();
    }
    if !p.output.is_empty() {
        write!(s, " out({})", fmt_types(&p.output)).unwrap();
    }
    if !p.acc.is_empty() {
        write!(s, " acc({})", fmt_types(&p.acc)).unwrap();
    }
    s.push('\n');
    for a in &p.ctx_reads {
        writeln!(s, "ctx-read {} {} {}", a.key, a.ty, a.shape).unwrap();
    }
    for a in &p.ctx_writes {
        writeln!(s, "ctx-write {} {} {}", a.key, a.ty, a.shape).unwrap();
    }
    for (at, ins) in p.body.iter().enumerate() {
        if ins.produces_value() {
            write!(s, "%{at} = ").unwrap();
        }
        let op = ins.opcode().name();
        match ins {
            Instr::Const(Scalar::F32(v)) => writeln!(s, "{op} f32 {v}"),
            Instr::Const(Scalar::I32(v)) => writeln!(s, "{op} i32 {v}"),
            Instr::Cast(ty, v) => writeln!(s, "{op} {ty} {v}"),
            Instr::LoadField(i) => writeln!(s, "{op} {i}"),
            Instr::StoreField(i, v) => writeln!(s, "{op} {i} {v}"),
            Instr::LoadContext { key, index } => writeln!(s, "{op} {key} {}", fmt_index(index)),
            Instr::ContextStore { key, index, value } => {
                writeln!(s, "{op} {key} {} {value}", fmt_index(index))
            }
            Instr::ContextAdd { key, index, value } => {
                writeln!(s, "{op} {key} {} {value}", fmt_index(index))
            }
            Instr::ContextIncrement { key, index } => {
                writeln!(s, "{op} {key} {}", fmt_index(index))
            }
            Instr::AccAdd { slot, value } => writeln!(s, "{op} {slot} {value}"),
            Instr::AccIncrement { slot } => writeln!(s, "{op} {slot}"),
            Instr::Add(a, b) | Instr::Sub(a, b) | Instr::Mul(a, b) | Instr::Div(a, b) => {
                writeln!(s, "{op} {a} {b}")
            }
            Instr::Sqrt(v) | Instr::Exp(v) | Instr::Ln(v) => writeln!(s, "{op} {v}"),
            Instr::MinSelect(vs) => {
                let list = vs.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ");
                writeln!(s, "{op} {list}")
            }
            Instr::Cmp(c, a, b) => writeln!(s, "{op} {c} {a} {b}"),
            Instr::Select {
                cond,
                on_true,
                on_false,
            } => writeln!(s, "{op} {cond} {on_true} {on_false}"),
            Instr::EmitTuple(vs) => {
                let list = vs.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ");
                writeln!(s, "{op} {list}")
            }
            Instr::ReturnBool(v) => writeln!(s, "{op} {v}"),
        }
        .unwrap();
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    const PRED: &str = "\
udf positive predicate in(f32)
%x = load-field 0
%z = const f32 0
%c = cmp gt %x %z
return-bool %c
";

    #[test]
    fn parse_simple_predicate() {
        let p = parse_program(PRED).unwrap();
        assert_eq!(p.kind, Kind::Predicate);
        assert_eq!(p.body.len(), 4);
        p.validate().unwrap();
    }

    #[test]
    fn print_parse_round_trip() {
        let p = parse_program(PRED).unwrap();
        let printed = print_program(&p);
        let back = parse_program(&printed).unwrap();
        assert_eq!(p.body, back.body);
        assert_eq!(p.kind, back.kind);
    }

    #[test]
    fn parse_reduce_with_indices() {
        let text = "\
udf reassign reduce in(f32,f32,i32)
ctx-write sum f32 [3,2]
ctx-write ct i32 [3]
%a = load-field 2
%x0 = load-field 0
context-add sum [%a,0] %x0
%x1 = load-field 1
context-add sum [%a,1] %x1
context-increment ct [%a]
";
        let p = parse_program(text).unwrap();
        p.validate().unwrap();
        assert_eq!(p.ctx_writes.len(), 2);
        let printed = print_program(&p);
        let back = parse_program(&printed).unwrap();
        assert_eq!(p.body, back.body);
    }

    #[test]
    fn use_before_def_is_rejected() {
        let text = "udf bad map in(f32) out(f32)\nstore-field 0 %nope\n";
        match parse_program(text) {
            Err(ParseError::UndefinedName { name, .. }) => assert_eq!(name, "nope"),
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let text = "\n# leading comment\nudf id map in(f32) out(f32)\n\n%x = load-field 0 # trailing\nstore-field 0 %x\n";
        let p = parse_program(text).unwrap();
        p.validate().unwrap();
    }
}
