//! Static UDF analysis: vectorizability, predicted compute cycles per tuple,
//! and predicted memory-load cycles per tuple.
//!
//! Load cycles follow the bandwidth model
//!
//! ```text
//! load_cycles = clock_hz × operand_bytes / bandwidth_per_core
//! ```
//!
//! where `operand_bytes` counts the distinct tuple fields that feed actual
//! computation (fields that are only copied through do not stress the ALU
//! path and are excluded). Compute cycles are the sum of per-opcode CPI
//! estimates over the straight-line body; `min-select` is charged per
//! comparison, i.e. `cpi × (operands − 1)`.

use crate::ir::{Instr, Kind, Opcode, UdfProgram};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AnalyzerError {
    #[error("opcode `{0}` is missing from the CPI table")]
    MissingCpi(&'static str),
    #[error("invalid hardware profile: {0}")]
    InvalidProfile(String),
    #[error("failed to read profile: {0}")]
    Io(#[from] std::io::Error),
    #[error("failed to parse profile: {0}")]
    Toml(#[from] toml::de::Error),
}

/// Machine parameters the cost model and strategy decisions depend on.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HardwareProfile {
    /// Core clock speed in cycles per second.
    pub clock_hz: f64,
    /// Sustainable memory bandwidth per core, bytes per second.
    pub bandwidth_per_core_bytes_per_s: f64,
    /// SIMD register width in bits (multiple of 32).
    pub lane_width_bits: u32,
    /// Cache-resident block size used by tiled materialization, in bytes.
    pub cache_block_bytes: usize,
    /// Worker threads available to the runtime.
    pub worker_threads: usize,
    /// Cycles-per-instruction estimates keyed by opcode name.
    pub cpi_table: BTreeMap<String, f64>,
}

impl Default for HardwareProfile {
    fn default() -> Self {
        HardwareProfile {
            clock_hz: 2.8e9,
            bandwidth_per_core_bytes_per_s: 5.97e9,
            lane_width_bits: 256,
            cache_block_bytes: 256 * 1024,
            worker_threads: std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1),
            cpi_table: default_cpi_table(),
        }
    }
}

/// Default CPI estimates, calibrated so representative clustering UDFs land
/// close to measured per-tuple cycle counts on a 2.8 GHz core.
pub fn default_cpi_table() -> BTreeMap<String, f64> {
    [
        ("const", 0.5),
        ("cast", 0.5),
        ("load-field", 0.5),
        ("store-field", 0.5),
        ("load-context", 0.5),
        ("context-store", 0.5),
        ("context-add", 4.5),
        ("context-increment", 4.5),
        ("acc-add", 1.0),
        ("acc-increment", 1.0),
        ("add", 1.0),
        ("sub", 1.0),
        ("mul", 1.0),
        ("div", 2.5),
        ("sqrt", 4.0),
        ("exp", 12.0),
        ("ln", 12.0),
        ("min-select", 6.0),
        ("cmp", 1.0),
        ("select", 1.0),
        ("emit-tuple", 0.5),
        ("return-bool", 0.5),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

impl HardwareProfile {
    pub fn validate(&self) -> Result<(), AnalyzerError> {
        if self.clock_hz <= 0.0
            || self.bandwidth_per_core_bytes_per_s <= 0.0
            || self.lane_width_bits == 0
            || self.cache_block_bytes == 0
            || self.worker_threads == 0
        {
            return Err(AnalyzerError::InvalidProfile(
                "all profile values must be strictly positive".into(),
            ));
        }
        if self.lane_width_bits % 32 != 0 {
            return Err(AnalyzerError::InvalidProfile(format!(
                "lane_width_bits {} is not a multiple of 32",
                self.lane_width_bits
            )));
        }
        Ok(())
    }

    /// 32-bit lanes per SIMD register.
    pub fn lanes(&self) -> usize {
        (self.lane_width_bits / 32) as usize
    }

    /// Load a profile from a TOML file: the five scalar fields at top level
    /// plus an optional `[cpi]` table of opcode-name → cycles overrides.
    pub fn from_toml_file(path: &Path) -> Result<Self, AnalyzerError> {
        #[derive(Deserialize)]
        struct Raw {
            clock_hz: Option<f64>,
            bandwidth_per_core_bytes_per_s: Option<f64>,
            lane_width_bits: Option<u32>,
            cache_block_bytes: Option<usize>,
            worker_threads: Option<usize>,
            #[serde(default)]
            cpi: BTreeMap<String, f64>,
        }
        let raw: Raw = toml::from_str(&std::fs::read_to_string(path)?)?;
        let mut hw = HardwareProfile::default();
        if let Some(v) = raw.clock_hz {
            hw.clock_hz = v;
        }
        if let Some(v) = raw.bandwidth_per_core_bytes_per_s {
            hw.bandwidth_per_core_bytes_per_s = v;
        }
        if let Some(v) = raw.lane_width_bits {
            hw.lane_width_bits = v;
        }
        if let Some(v) = raw.cache_block_bytes {
            hw.cache_block_bytes = v;
        }
        if let Some(v) = raw.worker_threads {
            hw.worker_threads = v;
        }
        for (k, v) in raw.cpi {
            hw.cpi_table.insert(k, v);
        }
        hw.validate()?;
        Ok(hw)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Boundedness {
    ComputeBound,
    MemoryBound,
}

/// Per-UDF statistics driving strategy selection.
#[derive(Debug, Clone, Serialize)]
pub struct FunctionStats {
    pub name: String,
    pub vectorizable: bool,
    /// Predicted ALU cycles per tuple.
    pub predicted_compute_cycles: f64,
    /// Predicted memory-load cycles per tuple (bandwidth model).
    pub load_cycles: f64,
    /// Bytes of distinct computed-over tuple fields per invocation.
    pub operand_bytes: usize,
    pub boundedness: Boundedness,
}

/// A UDF is vectorizable when every tuple can be processed in a SIMD lane
/// independently: straight-line arithmetic over tuple fields and
/// constant-indexed Context reads. Selections on data, argmin scans,
/// Context writes, and data-dependent indexing all force scalar execution.
pub fn analyze_vectorizability(p: &UdfProgram) -> bool {
    if p.kind == Kind::Update || !p.ctx_writes.is_empty() {
        return false;
    }
    p.body.iter().all(|ins| match ins {
        Instr::Const { .. }
        | Instr::Cast { .. }
        | Instr::LoadField { .. }
        | Instr::StoreField { .. }
        | Instr::Add(..)
        | Instr::Sub(..)
        | Instr::Mul(..)
        | Instr::Div(..)
        | Instr::Sqrt(..)
        | Instr::Exp(..)
        | Instr::Ln(..)
        | Instr::Cmp(..)
        | Instr::ReturnBool(..)
        | Instr::EmitTuple(..) => true,
        Instr::LoadContext { index, .. } => index
            .iter()
            .all(|ix| matches!(ix, crate::ir::IndexExpr::Const(_))),
        Instr::MinSelect(..) | Instr::Select { .. } => false,
        Instr::ContextStore { .. }
        | Instr::ContextAdd { .. }
        | Instr::ContextIncrement { .. }
        | Instr::AccAdd { .. }
        | Instr::AccIncrement { .. } => false,
    })
}

/// Sum CPI estimates over the body. `min-select` over n operands is charged
/// for its n−1 comparisons.
pub fn predict_compute_cycles(p: &UdfProgram, hw: &HardwareProfile) -> Result<f64, AnalyzerError> {
    let mut total = 0.0;
    for ins in &p.body {
        let op = ins.opcode();
        let cpi = *hw
            .cpi_table
            .get(op.name())
            .ok_or(AnalyzerError::MissingCpi(op.name()))?;
        total += match ins {
            Instr::MinSelect(vs) => cpi * (vs.len().saturating_sub(1)) as f64,
            _ => cpi,
        };
    }
    Ok(total)
}

/// Bandwidth model: cycles spent waiting on memory to deliver the operands
/// of one invocation.
pub fn compute_load_cycles(operand_bytes: usize, hw: &HardwareProfile) -> f64 {
    hw.clock_hz * operand_bytes as f64 / hw.bandwidth_per_core_bytes_per_s
}

/// Compute-bound iff predicted compute strictly exceeds the load estimate;
/// ties are treated as memory-bound (the conservative choice — keeps map
/// pipelines fused rather than splitting on a wash).
pub fn classify_boundedness(compute_cycles: f64, load_cycles: f64) -> Boundedness {
    if compute_cycles > load_cycles {
        Boundedness::ComputeBound
    } else {
        Boundedness::MemoryBound
    }
}

/// Run the full analysis for one UDF.
pub fn analyze(p: &UdfProgram, hw: &HardwareProfile) -> Result<FunctionStats, AnalyzerError> {
    let operand_bytes = p.computed_read_fields().len() * 4;
    let compute = predict_compute_cycles(p, hw)?;
    let load = compute_load_cycles(operand_bytes, hw);
    Ok(FunctionStats {
        name: p.name.clone(),
        vectorizable: analyze_vectorizability(p),
        predicted_compute_cycles: compute,
        load_cycles: load,
        operand_bytes,
        boundedness: classify_boundedness(compute, load),
    })
}

/// Render stats as an aligned text table, one row per UDF.
pub fn render_report(stats: &[FunctionStats]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<16} {:>12} {:>16} {:>12} {:>14} {:>14}\n",
        "function", "vectorizable", "compute cycles", "load cycles", "operand bytes", "boundedness"
    ));
    for s in stats {
        out.push_str(&format!(
            "{:<16} {:>12} {:>16.2} {:>12.2} {:>14} {:>14}\n",
            s.name,
            if s.vectorizable { "yes" } else { "no" },
            s.predicted_compute_cycles,
            s.load_cycles,
            s.operand_bytes,
            match s.boundedness {
                Boundedness::ComputeBound => "compute-bound",
                Boundedness::MemoryBound => "memory-bound",
            }
        ));
    }
    out
}

/// Every opcode the IR can emit has a default CPI entry; checked in tests so
/// new opcodes cannot silently break `predict_compute_cycles`.
pub fn cpi_table_is_total(table: &BTreeMap<String, f64>) -> bool {
    Opcode::ALL.iter().all(|op| table.contains_key(op.name()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::UdfBuilder;
    use crate::scalar::ScalarType;

    #[test]
    fn default_cpi_covers_every_opcode() {
        assert!(cpi_table_is_total(&default_cpi_table()));
    }

    #[test]
    fn load_cycles_worked_example() {
        let hw = HardwareProfile::default();
        // 2 × 4-byte fields at 2.8 GHz over 5.97 GB/s per core
        let cycles = compute_load_cycles(8, &hw);
        assert!((cycles - 3.75).abs() < 0.01, "got {cycles}");
        assert_eq!(compute_load_cycles(0, &hw), 0.0);
        let c12 = compute_load_cycles(12, &hw);
        assert!((c12 - 5.63).abs() < 0.01, "got {c12}");
    }

    #[test]
    fn load_cycles_scaling_algebra() {
        let hw = HardwareProfile::default();
        let base = compute_load_cycles(8, &hw);
        assert!((compute_load_cycles(16, &hw) - 2.0 * base).abs() < 1e-9);
        let mut double_bw = hw.clone();
        double_bw.bandwidth_per_core_bytes_per_s *= 2.0;
        assert!((compute_load_cycles(8, &double_bw) - base / 2.0).abs() < 1e-9);
    }

    #[test]
    fn empty_body_costs_zero() {
        let mut b = UdfBuilder::new("noop", Kind::Predicate).input(&[ScalarType::F32]);
        let one = b.const_i32(1);
        b.return_bool(one);
        let p = b.build().unwrap();
        // only const + return-bool remain; strip them for the empty case
        let mut empty = p.clone();
        empty.body.clear();
        assert_eq!(
            predict_compute_cycles(&empty, &HardwareProfile::default()).unwrap(),
            0.0
        );
    }

    #[test]
    fn three_adds_with_unit_cpi() {
        let mut b = UdfBuilder::new("adds", Kind::Map)
            .input(&[ScalarType::F32])
            .output(&[ScalarType::F32]);
        let x = b.load_field(0);
        let a = b.add(x, x);
        let c = b.add(a, x);
        let d = b.add(c, a);
        b.store_field(0, d);
        let p = b.build().unwrap();
        let mut hw = HardwareProfile::default();
        for v in hw.cpi_table.values_mut() {
            *v = 0.0;
        }
        hw.cpi_table.insert("add".into(), 1.0);
        assert_eq!(predict_compute_cycles(&p, &hw).unwrap(), 3.0);
    }

    #[test]
    fn constant_map_is_vectorizable() {
        let mut b = UdfBuilder::new("konst", Kind::Map)
            .input(&[ScalarType::F32])
            .output(&[ScalarType::F32]);
        let c = b.const_f32(7.0);
        b.store_field(0, c);
        assert!(analyze_vectorizability(&b.build().unwrap()));
    }

    #[test]
    fn tie_is_memory_bound() {
        assert_eq!(classify_boundedness(3.75, 3.75), Boundedness::MemoryBound);
        assert_eq!(classify_boundedness(29.0, 3.75), Boundedness::ComputeBound);
        assert_eq!(classify_boundedness(2.0, 3.75), Boundedness::MemoryBound);
    }

    #[test]
    fn missing_cpi_entry_is_named() {
        let mut b = UdfBuilder::new("s", Kind::Map)
            .input(&[ScalarType::F32])
            .output(&[ScalarType::F32]);
        let x = b.load_field(0);
        let r = b.sqrt(x);
        b.store_field(0, r);
        let p = b.build().unwrap();
        let mut hw = HardwareProfile::default();
        hw.cpi_table.remove("sqrt");
        match predict_compute_cycles(&p, &hw) {
            Err(AnalyzerError::MissingCpi("sqrt")) => {}
            other => panic!("unexpected: {other:?}"),
        }
    }
}
