//! Measurement and comparison helpers shared by the CLI, the examples and
//! the acceptance tests: tolerant result comparison, content checksums,
//! warmup + median-of-N timing, and serializable run reports.

use crate::algebra::{TupleSet, Workflow};
use crate::context::Context;
use crate::engine::{Engine, EngineError};
use crate::relation::Relation;
use crate::scalar::Scalar;
use crate::synthesizer::{stage_summaries, StageSummary, Strategy};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::time::Instant;

/// Default tolerance for float comparisons between runs.
pub const FLOAT_TOL: f64 = 1e-5;

// ---- tolerant equality ------------------------------------------------

/// Scalar equality: integers exact, floats within a relative tolerance
/// (with an absolute floor near zero); NaN equals NaN, infinities by sign.
pub fn scalar_close(a: Scalar, b: Scalar, tol: f64) -> bool {
    match (a, b) {
        (Scalar::I32(x), Scalar::I32(y)) => x == y,
        (Scalar::F32(x), Scalar::F32(y)) => float_close(x as f64, y as f64, tol),
        _ => false,
    }
}

pub fn float_close(x: f64, y: f64, tol: f64) -> bool {
    if x.is_nan() && y.is_nan() {
        return true;
    }
    if x.is_infinite() || y.is_infinite() {
        return x == y;
    }
    let diff = (x - y).abs();
    diff <= tol || diff <= tol * x.abs().max(y.abs())
}

/// Positional row-by-row comparison with per-scalar tolerance.
pub fn relation_close(a: &Relation, b: &Relation, tol: f64) -> Result<(), String> {
    if a.schema.types() != b.schema.types() {
        return Err(format!("schema mismatch: {} vs {}", a.schema, b.schema));
    }
    if a.cardinality() != b.cardinality() {
        return Err(format!(
            "cardinality mismatch: {} vs {}",
            a.cardinality(),
            b.cardinality()
        ));
    }
    for r in 0..a.cardinality() {
        let (ra, rb) = (a.row(r), b.row(r));
        for (c, (x, y)) in ra.iter().zip(&rb).enumerate() {
            if !scalar_close(*x, *y, tol) {
                return Err(format!("row {r} col {c}: {x:?} vs {y:?}"));
            }
        }
    }
    Ok(())
}

pub fn context_close(a: &Context, b: &Context, tol: f64) -> Result<(), String> {
    let ka: Vec<&str> = a.keys().collect();
    let kb: Vec<&str> = b.keys().collect();
    if ka != kb {
        return Err(format!("context keys differ: {ka:?} vs {kb:?}"));
    }
    for (key, va) in a.iter() {
        let vb = b.get(key).unwrap();
        match (va.as_i32_slice(), vb.as_i32_slice()) {
            (Some(x), Some(y)) => {
                if x != y {
                    return Err(format!("context `{key}` differs: {x:?} vs {y:?}"));
                }
                continue;
            }
            (None, None) => {}
            _ => return Err(format!("context `{key}` type differs")),
        }
        let (x, y) = (va.as_f32_slice().unwrap(), vb.as_f32_slice().unwrap());
        if x.len() != y.len() {
            return Err(format!("context `{key}` length differs"));
        }
        for (i, (p, q)) in x.iter().zip(y).enumerate() {
            if !float_close(*p as f64, *q as f64, tol) {
                return Err(format!("context `{key}`[{i}]: {p} vs {q}"));
            }
        }
    }
    Ok(())
}

pub fn tupleset_close(a: &TupleSet, b: &TupleSet, tol: f64) -> Result<(), String> {
    relation_close(&a.relation, &b.relation, tol)?;
    context_close(&a.context, &b.context, tol)
}

// ---- checksums --------------------------------------------------------

fn fnv1a(hash: &mut u64, bytes: &[u8]) {
    for b in bytes {
        *hash ^= *b as u64;
        *hash = hash.wrapping_mul(0x100_0000_01b3);
    }
}

/// FNV-1a over the raw column bits, column-major. Bit-exact content hash.
pub fn relation_checksum(r: &Relation) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    fnv1a(&mut h, &(r.cardinality() as u64).to_le_bytes());
    for col in &r.columns {
        match col {
            crate::relation::Column::F32(v) => {
                for x in v {
                    fnv1a(&mut h, &x.to_bits().to_le_bytes());
                }
            }
            crate::relation::Column::I32(v) => {
                for x in v {
                    fnv1a(&mut h, &x.to_le_bytes());
                }
            }
        }
    }
    h
}

pub fn context_checksum(ctx: &Context) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for (key, val) in ctx.iter() {
        fnv1a(&mut h, key.as_bytes());
        if let Some(v) = val.as_i32_slice() {
            for x in v {
                fnv1a(&mut h, &x.to_le_bytes());
            }
        } else if let Some(v) = val.as_f32_slice() {
            for x in v {
                fnv1a(&mut h, &x.to_bits().to_le_bytes());
            }
        }
    }
    h
}

#[derive(Debug, Clone, Serialize)]
pub struct Checksums {
    pub rows: usize,
    pub relation: String,
    pub context: String,
}

pub fn checksums(ts: &TupleSet) -> Checksums {
    Checksums {
        rows: ts.relation.cardinality(),
        relation: format!("{:016x}", relation_checksum(&ts.relation)),
        context: format!("{:016x}", context_checksum(&ts.context)),
    }
}

// ---- timing -----------------------------------------------------------

/// One warmup run, then `reps` timed runs; returns the last result and
/// the median wall time in milliseconds.
pub fn time_median<T>(reps: usize, mut f: impl FnMut() -> T) -> (T, f64) {
    let reps = reps.max(1);
    let mut result = f(); // warmup
    let mut times = Vec::with_capacity(reps);
    for _ in 0..reps {
        let t0 = Instant::now();
        result = f();
        times.push(t0.elapsed().as_secs_f64() * 1e3);
    }
    times.sort_by(|a, b| a.total_cmp(b));
    (result, times[times.len() / 2])
}

pub const DEFAULT_REPS: usize = 5;

// ---- run reports ------------------------------------------------------

#[derive(Debug, Serialize)]
pub struct RunReport {
    pub workload: String,
    pub strategy: String,
    pub workers: usize,
    pub wall_ms: f64,
    pub stages: Vec<StageSummary>,
    pub checksums: Checksums,
}

/// Synthesize, time (warmup + median of `reps`), and report one
/// workload/strategy combination.
pub fn run_report(
    engine: &Engine,
    workload: &str,
    w: &Workflow,
    strategy: Strategy,
    reps: usize,
) -> Result<(TupleSet, RunReport), EngineError> {
    let plan = engine.prepare(w, strategy)?;
    let stages = stage_summaries(&plan);
    let (result, wall_ms) = time_median(reps, || engine.execute(&plan));
    let (ts, _stats) = result?;
    let report = RunReport {
        workload: workload.to_string(),
        strategy: strategy.name().to_string(),
        workers: engine.topo.executors(),
        wall_ms,
        stages,
        checksums: checksums(&ts),
    };
    Ok((ts, report))
}

/// Run a workload under several strategies, verify the results agree
/// (before any timing is trusted), then report each.
pub fn bench_strategies(
    engine: &Engine,
    workload: &str,
    w: &Workflow,
    strategies: &[Strategy],
    reps: usize,
) -> Result<Vec<RunReport>, String> {
    let mut reports = Vec::new();
    let mut baseline: Option<(String, TupleSet)> = None;
    for &s in strategies {
        let (ts, report) = run_report(engine, workload, w, s, reps)
            .map_err(|e| format!("{}: {e}", s.name()))?;
        match &baseline {
            None => baseline = Some((s.name().to_string(), ts)),
            Some((base_name, base)) => {
                tupleset_close(base, &ts, FLOAT_TOL)
                    .map_err(|e| format!("{} disagrees with {base_name}: {e}", s.name()))?;
            }
        }
        reports.push(report);
    }
    Ok(reports)
}

// ---- reduce-lowering benchmarks ---------------------------------------

/// Unkeyed running-sum reduce over `cols` f32 columns: lowers to
/// reduction variables naturally.
pub fn sum_reduce_workflow(rows: usize, seed: u64) -> Workflow {
    use crate::ir::{Kind, UdfBuilder};
    let cols = 4usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data: Vec<Vec<f32>> = vec![Vec::with_capacity(rows); cols];
    for _ in 0..rows {
        for c in data.iter_mut() {
            c.push(rng.gen_range(-64i32..=64) as f32 / 8.0);
        }
    }
    let rel = Relation::from_columns(
        crate::relation::Schema::f32_cols(cols),
        data.into_iter().map(crate::relation::Column::F32).collect(),
    )
    .expect("columns match schema");
    let mut b = UdfBuilder::new("column-sums", Kind::ReduceBody)
        .input(&vec![crate::scalar::ScalarType::F32; cols])
        .acc_slots(&vec![crate::scalar::ScalarType::F32; cols]);
    for i in 0..cols {
        let v = b.load_field(i);
        b.acc_add(i, v);
    }
    let udf = b.build().expect("sum reduce is valid");
    Workflow::from_relation(rel, Context::new())
        .reduce(std::sync::Arc::new(udf), None)
        .expect("sum reduce typechecks")
}

/// Group totals over a small fixed key domain, accumulated through
/// data-dependent Context indexing: lowers to direct indexing naturally.
pub fn grouped_reduce_workflow(rows: usize, keys: usize, seed: u64) -> Workflow {
    use crate::context::{ContextValue, Shape};
    use crate::ir::{IndexExpr, Kind, UdfBuilder};
    use crate::scalar::ScalarType;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ks = Vec::with_capacity(rows);
    let mut vs = Vec::with_capacity(rows);
    for _ in 0..rows {
        ks.push(rng.gen_range(0..keys as i32));
        vs.push(rng.gen_range(-64i32..=64) as f32 / 8.0);
    }
    let rel = Relation::from_columns(
        crate::relation::Schema::new(vec![("group", ScalarType::I32), ("v", ScalarType::F32)]),
        vec![crate::relation::Column::I32(ks), crate::relation::Column::F32(vs)],
    )
    .expect("columns match schema");
    let mut b = UdfBuilder::new("group-totals", Kind::ReduceBody)
        .input(&[ScalarType::I32, ScalarType::F32])
        .ctx_write("totals", ScalarType::F32, Shape::Vector(keys))
        .ctx_write("counts", ScalarType::I32, Shape::Vector(keys));
    let g = b.load_field(0);
    let v = b.load_field(1);
    b.ctx_add("totals", &[IndexExpr::Value(g)], v);
    b.ctx_increment("counts", &[IndexExpr::Value(g)]);
    let udf = b.build().expect("grouped reduce is valid");
    let ctx = Context::new()
        .with("totals", ContextValue::zeros(ScalarType::F32, Shape::Vector(keys)))
        .with("counts", ContextValue::zeros(ScalarType::I32, Shape::Vector(keys)));
    Workflow::from_relation(rel, ctx)
        .reduce(std::sync::Arc::new(udf), None)
        .expect("grouped reduce typechecks")
}

#[derive(Debug, Serialize)]
pub struct ReduceBenchReport {
    pub name: String,
    pub rows: usize,
    pub natural_lowering: String,
    pub natural_ms: f64,
    pub hash_ms: f64,
    pub speedup: f64,
}

/// Time a reduce workflow under its natural lowering vs a forced hash
/// table, after verifying both produce the same result.
pub fn bench_reduce_lowering(
    engine: &Engine,
    name: &str,
    w: &Workflow,
    reps: usize,
) -> Result<ReduceBenchReport, String> {
    use crate::synthesizer::SynthesisOptions;
    let natural = engine.clone().with_synthesis(SynthesisOptions::default());
    let hashed = engine.clone().with_synthesis(SynthesisOptions {
        force_hash_reduce: true,
    });
    let plan_n = natural
        .prepare(w, Strategy::Adaptive)
        .map_err(|e| format!("{name}: {e}"))?;
    let plan_h = hashed
        .prepare(w, Strategy::Adaptive)
        .map_err(|e| format!("{name}: {e}"))?;
    let lowering = stage_summaries(&plan_n)
        .iter()
        .map(|s| format!("{:?}", s.reduce_lowering))
        .find(|l| l != "None")
        .unwrap_or_else(|| "None".to_string());

    let (ts_n, _) = natural.execute(&plan_n).map_err(|e| format!("{name}: {e}"))?;
    let (ts_h, _) = hashed.execute(&plan_h).map_err(|e| format!("{name}: {e}"))?;
    tupleset_close(&ts_n, &ts_h, FLOAT_TOL)
        .map_err(|e| format!("{name}: lowerings disagree: {e}"))?;

    let (r, natural_ms) = time_median(reps, || natural.execute(&plan_n));
    r.map_err(|e| format!("{name}: {e}"))?;
    let (r, hash_ms) = time_median(reps, || hashed.execute(&plan_h));
    r.map_err(|e| format!("{name}: {e}"))?;
    let rows = w.sources().iter().map(|s| s.estimated_rows()).sum();
    Ok(ReduceBenchReport {
        name: name.to_string(),
        rows,
        natural_lowering: lowering,
        natural_ms,
        hash_ms,
        speedup: hash_ms / natural_ms,
    })
}

// ---- weak scaling -----------------------------------------------------

#[derive(Debug, Serialize)]
pub struct ScalePoint {
    pub workers: usize,
    pub rows: usize,
    pub wall_ms: f64,
    /// Wall time relative to the single-worker baseline.
    pub ratio: f64,
}

/// Weak scaling: hold rows-per-worker fixed, grow the worker count, and
/// report wall time relative to one worker. Ideal scaling keeps the
/// ratio at 1.0; values track real parallel speedup only when the host
/// has at least as many cores as workers.
pub fn weak_scaling(
    build: impl Fn(usize) -> Workflow,
    workers: &[usize],
    rows_per_worker: usize,
    strategy: Strategy,
    reps: usize,
) -> Result<Vec<ScalePoint>, String> {
    let mut out = Vec::new();
    let mut base = None;
    for &n in workers {
        let rows = rows_per_worker * n;
        let w = build(rows);
        let engine = Engine::new().with_executors(n);
        let plan = engine
            .prepare(&w, strategy)
            .map_err(|e| format!("{n} workers: {e}"))?;
        let (r, wall_ms) = time_median(reps, || engine.execute(&plan));
        r.map_err(|e| format!("{n} workers: {e}"))?;
        let base_ms = *base.get_or_insert(wall_ms);
        out.push(ScalePoint {
            workers: n,
            rows,
            wall_ms,
            ratio: wall_ms / base_ms,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workloads::{self, WorkloadKind};

    #[test]
    fn checksum_is_content_sensitive() {
        let a = workloads::generate(WorkloadKind::KMeans, 50, 1);
        let b = workloads::generate(WorkloadKind::KMeans, 50, 1);
        let c = workloads::generate(WorkloadKind::KMeans, 50, 2);
        assert_eq!(relation_checksum(&a), relation_checksum(&b));
        assert_ne!(relation_checksum(&a), relation_checksum(&c));
    }

    #[test]
    fn float_close_handles_non_finite() {
        assert!(float_close(f64::NAN, f64::NAN, 1e-5));
        assert!(float_close(f64::INFINITY, f64::INFINITY, 1e-5));
        assert!(!float_close(f64::INFINITY, f64::NEG_INFINITY, 1e-5));
        assert!(float_close(1.0, 1.0 + 1e-7, 1e-5));
        assert!(!float_close(1.0, 1.1, 1e-5));
    }

    #[test]
    fn median_timing_runs_warmup_plus_reps() {
        let mut calls = 0;
        let (_, ms) = time_median(5, || calls += 1);
        assert_eq!(calls, 6);
        assert!(ms >= 0.0);
    }

    #[test]
    fn bench_strategies_agree_on_small_workload() {
        let engine = Engine::new().with_executors(2);
        let w = workloads::build(WorkloadKind::Linear, 300, 3, 7);
        let reports = bench_strategies(
            &engine,
            "linear",
            &w,
            &crate::synthesizer::Strategy::ALL,
            1,
        )
        .unwrap();
        assert_eq!(reports.len(), 4);
        // identical checksums across strategies on this workload: the
        // runtime is deterministic for a fixed block size
        assert!(reports.iter().all(|r| r.checksums.rows == reports[0].checksums.rows));
    }
}
