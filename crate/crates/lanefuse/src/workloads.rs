//! Benchmark workloads: four classic ML training loops expressed in the
//! operator algebra with IR UDFs, plus seed-deterministic data generators.
//!
//! These drive the differential test corpus and the performance
//! benchmarks. Each submodule exposes the individual UDF builders (so the
//! analyzer can be pointed at them directly), a `workflow` constructor
//! wiring them into a runnable workflow with generated data, and a
//! `generate` function producing the dataset alone.

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

/// Loop invariant `iter < limit` over an i32 Context counter.
fn iteration_invariant(key: &str, limit: i32) -> UdfProgram {
    let mut b = UdfBuilder::new("while-iterating", Kind::Invariant).ctx_read(
        key,
        I32,
        Shape::Scalar,
    );
    let i = b.load_ctx(key, &[]);
    let lim = b.const_i32(limit);
    let c = b.cmp(CmpOp::Lt, i, lim);
    b.return_bool(c);
    b.build().expect("invariant is well-formed by construction")
}

/// Lloyd-style clustering: per-tuple distances to every centroid, nearest
/// assignment, per-cluster coordinate sums in the Context, and a centroid
/// refresh between iterations.
pub mod kmeans {
    use super::*;

    #[derive(Debug, Clone, Copy)]
    pub struct Params {
        pub rows: usize,
        pub attr: usize,
        pub cent: usize,
        pub iters: usize,
    }

    impl Default for Params {
        fn default() -> Self {
            Params {
                rows: 10_000,
                attr: 2,
                cent: 3,
                iters: 20,
            }
        }
    }

    /// Map `(x…) -> (x…, d0…d_{cent-1})`: Euclidean distance to every
    /// centroid. Straight-line arithmetic over constant-indexed centroid
    /// reads — the showcase vectorizable UDF.
    pub fn distance_udf(attr: usize, cent: usize) -> UdfProgram {
        let mut out_types = vec![F32; attr + cent];
        out_types.truncate(attr + cent);
        let mut b = UdfBuilder::new("distance", Kind::Map)
            .input(&vec![F32; attr])
            .output(&out_types)
            .ctx_read("k", F32, Shape::Matrix(cent, attr));
        let xs: Vec<ValueId> = (0..attr).map(|i| b.load_field(i)).collect();
        for (i, x) in xs.iter().enumerate() {
            b.store_field(i, *x);
        }
        for j in 0..cent {
            let mut acc: Option<ValueId> = None;
            for (i, x) in xs.iter().enumerate() {
                let kji = b.load_ctx("k", &[IndexExpr::Const(j), IndexExpr::Const(i)]);
                let d = b.sub(*x, kji);
                let sq = b.mul(d, d);
                acc = Some(match acc {
                    None => sq,
                    Some(a) => b.add(a, sq),
                });
            }
            let dist = b.sqrt(acc.expect("attr >= 1"));
            b.store_field(attr + j, dist);
        }
        b.build().expect("distance UDF is well-formed")
    }

    /// Map `(x…, d…) -> (x…, cluster)`: index of the nearest centroid.
    /// The argmin makes it non-vectorizable.
    pub fn minimum_udf(attr: usize, cent: usize) -> UdfProgram {
        let mut out_types = vec![F32; attr];
        out_types.push(I32);
        let mut b = UdfBuilder::new("minimum", Kind::Map)
            .input(&vec![F32; attr + cent])
            .output(&out_types);
        let xs: Vec<ValueId> = (0..attr).map(|i| b.load_field(i)).collect();
        let ds: Vec<ValueId> = (0..cent).map(|j| b.load_field(attr + j)).collect();
        for (i, x) in xs.iter().enumerate() {
            b.store_field(i, *x);
        }
        let nearest = b.min_select(&ds);
        b.store_field(attr, nearest);
        b.build().expect("minimum UDF is well-formed")
    }

    /// Reduce body accumulating per-cluster coordinate sums and counts
    /// through data-dependent Context indexing.
    pub fn reassign_udf(attr: usize, cent: usize) -> UdfProgram {
        let mut in_types = vec![F32; attr];
        in_types.push(I32);
        let mut b = UdfBuilder::new("reassign", Kind::ReduceBody)
            .input(&in_types)
            .ctx_write("sum", F32, Shape::Matrix(cent, attr))
            .ctx_write("ct", I32, Shape::Vector(cent));
        let xs: Vec<ValueId> = (0..attr).map(|i| b.load_field(i)).collect();
        let cluster = b.load_field(attr);
        for (i, x) in xs.iter().enumerate() {
            b.ctx_add("sum", &[IndexExpr::Value(cluster), IndexExpr::Const(i)], *x);
        }
        b.ctx_increment("ct", &[IndexExpr::Value(cluster)]);
        b.build().expect("reassign UDF is well-formed")
    }

    /// The centroid refresh alone: `k[j][i] = sum[j][i] / ct[j]`. This is
    /// the variant whose per-tuple cost the analyzer is calibrated
    /// against; the full workload uses [`recompute_udf`], which also
    /// clears the accumulators and advances the iteration counter.
    pub fn recompute_core_udf(attr: usize, cent: usize) -> UdfProgram {
        let mut b = recompute_builder(attr, cent, false);
        emit_refresh(&mut b, attr, cent);
        b.build().expect("recompute core UDF is well-formed")
    }

    /// Full between-iteration update: refresh centroids, zero the sums and
    /// counts, bump the iteration counter.
    pub fn recompute_udf(attr: usize, cent: usize) -> UdfProgram {
        let mut b = recompute_builder(attr, cent, true);
        emit_refresh(&mut b, attr, cent);
        let zf = b.const_f32(0.0);
        let zi = b.const_i32(0);
        for j in 0..cent {
            for i in 0..attr {
                b.ctx_store("sum", &[IndexExpr::Const(j), IndexExpr::Const(i)], zf);
            }
            b.ctx_store("ct", &[IndexExpr::Const(j)], zi);
        }
        b.ctx_increment("iter", &[]);
        b.build().expect("recompute UDF is well-formed")
    }

    fn recompute_builder(attr: usize, cent: usize, full: bool) -> UdfBuilder {
        let mut b = UdfBuilder::new("recompute", Kind::Update)
            .ctx_read("sum", F32, Shape::Matrix(cent, attr))
            .ctx_read("ct", I32, Shape::Vector(cent))
            .ctx_write("k", F32, Shape::Matrix(cent, attr));
        if full {
            b = b
                .ctx_write("sum", F32, Shape::Matrix(cent, attr))
                .ctx_write("ct", I32, Shape::Vector(cent))
                .ctx_write("iter", I32, Shape::Scalar);
        }
        b
    }

    fn emit_refresh(b: &mut UdfBuilder, attr: usize, cent: usize) {
        for j in 0..cent {
            let c = b.load_ctx("ct", &[IndexExpr::Const(j)]);
            let cf = b.cast(F32, c);
            for i in 0..attr {
                let s = b.load_ctx("sum", &[IndexExpr::Const(j), IndexExpr::Const(i)]);
                let q = b.div(s, cf);
                b.ctx_store("k", &[IndexExpr::Const(j), IndexExpr::Const(i)], q);
            }
        }
    }

    /// Cluster centers used by the generator: widely separated so that the
    /// seeded initialization recovers them reliably.
    pub fn center(cluster: usize, coord: usize) -> f32 {
        (cluster as f32) * 10.0 + coord as f32
    }

    /// Seed-deterministic dataset: `rows` points, round-robin across
    /// `cent` well-separated clusters with ±0.5 uniform noise.
    pub fn generate(p: &Params, seed: u64) -> Relation {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let schema = Schema::f32_cols(p.attr);
        let mut rows = Vec::with_capacity(p.rows);
        for r in 0..p.rows {
            let c = r % p.cent;
            let row: Vec<Scalar> = (0..p.attr)
                .map(|i| Scalar::F32(center(c, i) + rng.gen_range(-0.5..0.5)))
                .collect();
            rows.push(row);
        }
        Relation::from_rows(schema, &rows)
    }

    /// Initial centroids: the first `cent` generated points (distinct by
    /// construction, fixed by the seed).
    pub fn initial_centroids(data: &Relation, attr: usize, cent: usize) -> Vec<f32> {
        assert!(data.cardinality() >= cent, "need at least `cent` rows");
        let mut flat = Vec::with_capacity(cent * attr);
        for j in 0..cent {
            for v in data.row(j) {
                flat.push(v.as_f32());
            }
        }
        debug_assert_eq!(flat.len(), cent * attr);
        flat
    }

    pub fn workflow_over(data: Relation, p: &Params) -> Workflow {
        let init = initial_centroids(&data, p.attr, p.cent);
        let ctx = Context::new()
            .with("k", ContextValue::matrix_f32(p.cent, p.attr, init))
            .with(
                "sum",
                ContextValue::zeros(F32, Shape::Matrix(p.cent, p.attr)),
            )
            .with("ct", ContextValue::zeros(I32, Shape::Vector(p.cent)))
            .with("iter", ContextValue::scalar(Scalar::I32(0)));
        Workflow::from_relation(data, ctx)
            .map(Arc::new(distance_udf(p.attr, p.cent)))
            .expect("distance typechecks")
            .map(Arc::new(minimum_udf(p.attr, p.cent)))
            .expect("minimum typechecks")
            .reduce(Arc::new(reassign_udf(p.attr, p.cent)), None)
            .expect("reassign typechecks")
            .update(Arc::new(recompute_udf(p.attr, p.cent)))
            .expect("recompute typechecks")
            .loop_while(Arc::new(iteration_invariant("iter", p.iters as i32)))
            .expect("loop over breaker chain")
    }

    pub fn workflow(p: &Params, seed: u64) -> Workflow {
        workflow_over(generate(p, seed), p)
    }
}

/// Gradient-descent regressions. Both share the same skeleton — a reduce
/// accumulating the loss gradient into the Context and an update applying
/// `w ← w − step·g` — and differ only in the residual computation.
pub mod regression {
    use super::*;

    #[derive(Debug, Clone, Copy)]
    pub struct Params {
        pub rows: usize,
        pub features: usize,
        pub iters: usize,
        /// Step size applied to the *mean* gradient (the builder folds the
        /// 1/rows normalization into the update constant).
        pub step: f32,
    }

    impl Default for Params {
        fn default() -> Self {
            Params {
                rows: 10_000,
                features: 4,
                iters: 20,
                step: 1.5,
            }
        }
    }

    #[derive(Debug, Clone, Copy, PartialEq, Eq)]
    pub enum Loss {
        /// Squared error: residual `w·x − y`.
        Squared,
        /// Logistic loss: residual `σ(w·x) − y`.
        Logistic,
    }

    /// Reduce body accumulating the gradient of the chosen loss into the
    /// Context vector `g`.
    pub fn gradient_udf(features: usize, loss: Loss) -> UdfProgram {
        let name = match loss {
            Loss::Squared => "squared-gradient",
            Loss::Logistic => "logistic-gradient",
        };
        let mut b = UdfBuilder::new(name, Kind::ReduceBody)
            .input(&vec![F32; features + 1])
            .ctx_read("w", F32, Shape::Vector(features))
            .ctx_write("g", F32, Shape::Vector(features));
        let xs: Vec<ValueId> = (0..features).map(|i| b.load_field(i)).collect();
        let y = b.load_field(features);
        let mut z: Option<ValueId> = None;
        for (i, x) in xs.iter().enumerate() {
            let wi = b.load_ctx("w", &[IndexExpr::Const(i)]);
            let t = b.mul(wi, *x);
            z = Some(match z {
                None => t,
                Some(a) => b.add(a, t),
            });
        }
        let z = z.expect("features >= 1");
        let pred = match loss {
            Loss::Squared => z,
            Loss::Logistic => {
                let zero = b.const_f32(0.0);
                let one = b.const_f32(1.0);
                let nz = b.sub(zero, z);
                let e = b.exp(nz);
                let denom = b.add(one, e);
                b.div(one, denom)
            }
        };
        let resid = b.sub(pred, y);
        for (i, x) in xs.iter().enumerate() {
            let gi = b.mul(resid, *x);
            b.ctx_add("g", &[IndexExpr::Const(i)], gi);
        }
        b.build().expect("gradient UDF is well-formed")
    }

    /// Update applying `w ← w − rate·g`, zeroing `g`, advancing the
    /// iteration counter. `rate` should already include any 1/n scaling.
    pub fn apply_udf(features: usize, rate: f32) -> UdfProgram {
        let mut b = UdfBuilder::new("apply-gradient", Kind::Update)
            .ctx_read("w", F32, Shape::Vector(features))
            .ctx_read("g", F32, Shape::Vector(features))
            .ctx_write("w", F32, Shape::Vector(features))
            .ctx_write("g", F32, Shape::Vector(features))
            .ctx_write("iter", I32, Shape::Scalar);
        let rate = b.const_f32(rate);
        let zero = b.const_f32(0.0);
        for i in 0..features {
            let wi = b.load_ctx("w", &[IndexExpr::Const(i)]);
            let gi = b.load_ctx("g", &[IndexExpr::Const(i)]);
            let d = b.mul(rate, gi);
            let nw = b.sub(wi, d);
            b.ctx_store("w", &[IndexExpr::Const(i)], nw);
            b.ctx_store("g", &[IndexExpr::Const(i)], zero);
        }
        b.ctx_increment("iter", &[]);
        b.build().expect("apply UDF is well-formed")
    }

    /// Linear data `y = true_w · x` (exact), features uniform in [-1, 1].
    pub fn generate_linear(p: &Params, seed: u64) -> (Relation, Vec<f32>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let true_w: Vec<f32> = (0..p.features).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let schema = Schema::f32_cols(p.features + 1);
        let mut rows = Vec::with_capacity(p.rows);
        for _ in 0..p.rows {
            let x: Vec<f32> = (0..p.features).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let y: f32 = x.iter().zip(&true_w).map(|(a, b)| a * b).sum();
            let mut row: Vec<Scalar> = x.into_iter().map(Scalar::F32).collect();
            row.push(Scalar::F32(y));
            rows.push(row);
        }
        (Relation::from_rows(schema, &rows), true_w)
    }

    /// Linearly separable labels `y = [true_w · x > 0]` with a margin:
    /// points too close to the separating plane are resampled.
    pub fn generate_logistic(p: &Params, seed: u64) -> (Relation, Vec<f32>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let true_w: Vec<f32> = (0..p.features).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let schema = Schema::f32_cols(p.features + 1);
        let mut rows = Vec::with_capacity(p.rows);
        while rows.len() < p.rows {
            let x: Vec<f32> = (0..p.features).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let z: f32 = x.iter().zip(&true_w).map(|(a, b)| a * b).sum();
            if z.abs() < 0.1 {
                continue;
            }
            let mut row: Vec<Scalar> = x.into_iter().map(Scalar::F32).collect();
            row.push(Scalar::F32(if z > 0.0 { 1.0 } else { 0.0 }));
            rows.push(row);
        }
        (Relation::from_rows(schema, &rows), true_w)
    }

    pub fn workflow_over(data: Relation, p: &Params, loss: Loss) -> Workflow {
        let rate = p.step / p.rows as f32;
        let ctx = Context::new()
            .with("w", ContextValue::zeros(F32, Shape::Vector(p.features)))
            .with("g", ContextValue::zeros(F32, Shape::Vector(p.features)))
            .with("iter", ContextValue::scalar(Scalar::I32(0)));
        Workflow::from_relation(data, ctx)
            .reduce(Arc::new(gradient_udf(p.features, loss)), None)
            .expect("gradient typechecks")
            .update(Arc::new(apply_udf(p.features, rate)))
            .expect("apply typechecks")
            .loop_while(Arc::new(iteration_invariant("iter", p.iters as i32)))
            .expect("loop over breaker chain")
    }

    pub fn workflow(p: &Params, loss: Loss, seed: u64) -> Workflow {
        let (data, _) = match loss {
            Loss::Squared => generate_linear(p, seed),
            Loss::Logistic => generate_logistic(p, seed),
        };
        workflow_over(data, p, loss)
    }
}

/// Categorical naive Bayes training: one non-iterative counting reduce
/// into statically shaped Context matrices, then a normalization update
/// producing Laplace-smoothed log-probabilities.
pub mod bayes {
    use super::*;

    #[derive(Debug, Clone, Copy)]
    pub struct Params {
        pub rows: usize,
        pub features: usize,
        pub bins: usize,
        pub labels: usize,
    }

    impl Default for Params {
        fn default() -> Self {
            Params {
                rows: 10_000,
                features: 8,
                bins: 4,
                labels: 4,
            }
        }
    }

    /// Reduce body counting `(label)` and `(feature, bin, label)`
    /// occurrences. `feature_counts` flattens (feature, bin) into its row
    /// index: row = feature · bins + bin.
    pub fn count_udf(p: &Params) -> UdfProgram {
        let mut b = UdfBuilder::new("class-counts", Kind::ReduceBody)
            .input(&vec![I32; p.features + 1])
            .ctx_write("class_counts", I32, Shape::Vector(p.labels))
            .ctx_write(
                "feature_counts",
                I32,
                Shape::Matrix(p.features * p.bins, p.labels),
            );
        let y = b.load_field(p.features);
        b.ctx_increment("class_counts", &[IndexExpr::Value(y)]);
        for i in 0..p.features {
            let bin = b.load_field(i);
            let base = b.const_i32((i * p.bins) as i32);
            let row = b.add(base, bin);
            b.ctx_increment(
                "feature_counts",
                &[IndexExpr::Value(row), IndexExpr::Value(y)],
            );
        }
        b.build().expect("count UDF is well-formed")
    }

    /// Update turning raw counts into Laplace-smoothed log-probabilities:
    /// `log_prior[y] = ln((cc[y]+1) / (total+labels))` and
    /// `log_lik[r][y] = ln((fc[r][y]+1) / (cc[y]+bins))`.
    pub fn normalize_udf(p: &Params) -> UdfProgram {
        let nrows = p.features * p.bins;
        let mut b = UdfBuilder::new("normalize-counts", Kind::Update)
            .ctx_read("class_counts", I32, Shape::Vector(p.labels))
            .ctx_read("feature_counts", I32, Shape::Matrix(nrows, p.labels))
            .ctx_write("log_prior", F32, Shape::Vector(p.labels))
            .ctx_write("log_lik", F32, Shape::Matrix(nrows, p.labels));
        let one = b.const_f32(1.0);
        let ccs: Vec<ValueId> = (0..p.labels)
            .map(|y| {
                let c = b.load_ctx("class_counts", &[IndexExpr::Const(y)]);
                b.cast(F32, c)
            })
            .collect();
        let mut total = ccs[0];
        for cc in &ccs[1..] {
            total = b.add(total, *cc);
        }
        let labels_f = b.const_f32(p.labels as f32);
        let bins_f = b.const_f32(p.bins as f32);
        let denom_prior = b.add(total, labels_f);
        for (y, cc) in ccs.iter().enumerate() {
            let num = b.add(*cc, one);
            let frac = b.div(num, denom_prior);
            let lp = b.ln(frac);
            b.ctx_store("log_prior", &[IndexExpr::Const(y)], lp);
            let denom_lik = b.add(*cc, bins_f);
            for r in 0..nrows {
                let fc = b.load_ctx(
                    "feature_counts",
                    &[IndexExpr::Const(r), IndexExpr::Const(y)],
                );
                let fcf = b.cast(F32, fc);
                let num = b.add(fcf, one);
                let frac = b.div(num, denom_lik);
                let ll = b.ln(frac);
                b.ctx_store("log_lik", &[IndexExpr::Const(r), IndexExpr::Const(y)], ll);
            }
        }
        b.build().expect("normalize UDF is well-formed")
    }

    /// Pre-binned categorical rows: label-correlated bins so the learned
    /// tables are non-trivial, deterministic per seed.
    pub fn generate(p: &Params, seed: u64) -> Relation {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let schema = Schema::new(
            (0..=p.features)
                .map(|i| {
                    if i == p.features {
                        ("label".to_string(), I32)
                    } else {
                        (format!("x{i}"), I32)
                    }
                })
                .collect::<Vec<_>>()
                .iter()
                .map(|(n, t)| (n.as_str(), *t))
                .collect(),
        );
        let mut rows = Vec::with_capacity(p.rows);
        for _ in 0..p.rows {
            let y = rng.gen_range(0..p.labels as i32);
            let mut row: Vec<Scalar> = (0..p.features)
                .map(|i| {
                    let biased = (y as usize + i) % p.bins;
                    let bin = if rng.gen_bool(0.6) {
                        biased
                    } else {
                        rng.gen_range(0..p.bins)
                    };
                    Scalar::I32(bin as i32)
                })
                .collect();
            row.push(Scalar::I32(y));
            rows.push(row);
        }
        Relation::from_rows(schema, &rows)
    }

    pub fn workflow_over(data: Relation, p: &Params) -> Workflow {
        let nrows = p.features * p.bins;
        let ctx = Context::new()
            .with(
                "class_counts",
                ContextValue::zeros(I32, Shape::Vector(p.labels)),
            )
            .with(
                "feature_counts",
                ContextValue::zeros(I32, Shape::Matrix(nrows, p.labels)),
            )
            .with("log_prior", ContextValue::zeros(F32, Shape::Vector(p.labels)))
            .with(
                "log_lik",
                ContextValue::zeros(F32, Shape::Matrix(nrows, p.labels)),
            );
        Workflow::from_relation(data, ctx)
            .reduce(Arc::new(count_udf(p)), None)
            .expect("count typechecks")
            .update(Arc::new(normalize_udf(p)))
            .expect("normalize typechecks")
    }

    pub fn workflow(p: &Params, seed: u64) -> Workflow {
        workflow_over(generate(p, seed), p)
    }
}

/// Named workload selection for the CLI and harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WorkloadKind {
    KMeans,
    Logistic,
    Linear,
    Bayes,
}

impl WorkloadKind {
    pub const ALL: [WorkloadKind; 4] = [
        WorkloadKind::KMeans,
        WorkloadKind::Logistic,
        WorkloadKind::Linear,
        WorkloadKind::Bayes,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            WorkloadKind::KMeans => "kmeans",
            WorkloadKind::Logistic => "logistic",
            WorkloadKind::Linear => "linear",
            WorkloadKind::Bayes => "bayes",
        }
    }
}

impl std::str::FromStr for WorkloadKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "kmeans" => Ok(WorkloadKind::KMeans),
            "logistic" => Ok(WorkloadKind::Logistic),
            "linear" => Ok(WorkloadKind::Linear),
            "bayes" | "naive-bayes" => Ok(WorkloadKind::Bayes),
            other => Err(format!(
                "unknown workload `{other}` (expected kmeans|logistic|linear|bayes)"
            )),
        }
    }
}

/// Build a workload at a row-count scale (other parameters default).
pub fn build(kind: WorkloadKind, rows: usize, iters: usize, seed: u64) -> Workflow {
    match kind {
        WorkloadKind::KMeans => kmeans::workflow(
            &kmeans::Params {
                rows,
                iters,
                ..kmeans::Params::default()
            },
            seed,
        ),
        WorkloadKind::Logistic => regression::workflow(
            &regression::Params {
                rows,
                iters,
                ..regression::Params::default()
            },
            regression::Loss::Logistic,
            seed,
        ),
        WorkloadKind::Linear => regression::workflow(
            &regression::Params {
                rows,
                iters,
                ..regression::Params::default()
            },
            regression::Loss::Squared,
            seed,
        ),
        WorkloadKind::Bayes => bayes::workflow(
            &bayes::Params {
                rows,
                ..bayes::Params::default()
            },
            seed,
        ),
    }
}

/// Generate only the dataset for a workload (the `gen` CLI subcommand).
pub fn generate(kind: WorkloadKind, rows: usize, seed: u64) -> Relation {
    match kind {
        WorkloadKind::KMeans => kmeans::generate(
            &kmeans::Params {
                rows,
                ..kmeans::Params::default()
            },
            seed,
        ),
        WorkloadKind::Logistic => {
            regression::generate_logistic(
                &regression::Params {
                    rows,
                    ..regression::Params::default()
                },
                seed,
            )
            .0
        }
        WorkloadKind::Linear => {
            regression::generate_linear(
                &regression::Params {
                    rows,
                    ..regression::Params::default()
                },
                seed,
            )
            .0
        }
        WorkloadKind::Bayes => bayes::generate(
            &bayes::Params {
                rows,
                ..bayes::Params::default()
            },
            seed,
        ),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reference::evaluate;

    #[test]
    fn generators_are_seed_deterministic() {
        for kind in WorkloadKind::ALL {
            let a = generate(kind, 200, 7);
            let b = generate(kind, 200, 7);
            assert!(a.bit_eq(&b), "{} generator not deterministic", kind.name());
            let c = generate(kind, 200, 8);
            assert!(!a.bit_eq(&c), "{} generator ignores seed", kind.name());
        }
    }

    /// Independent scalar clustering implementation (plain loops over
    /// f32s) used as the oracle for the workflow version.
    fn scalar_kmeans(data: &Relation, p: &kmeans::Params) -> Vec<f32> {
        let attr = p.attr;
        let mut k = kmeans::initial_centroids(data, attr, p.cent);
        let rows: Vec<Vec<f32>> = (0..data.cardinality())
            .map(|r| data.row(r).iter().map(|s| s.as_f32()).collect())
            .collect();
        for _ in 0..p.iters {
            let mut sum = vec![0.0f32; p.cent * attr];
            let mut ct = vec![0i32; p.cent];
            for x in &rows {
                let mut best = 0usize;
                let mut best_d = f32::INFINITY;
                for j in 0..p.cent {
                    let d: f32 = (0..attr)
                        .map(|i| (x[i] - k[j * attr + i]).powi(2))
                        .sum::<f32>()
                        .sqrt();
                    if d < best_d {
                        best_d = d;
                        best = j;
                    }
                }
                for i in 0..attr {
                    sum[best * attr + i] += x[i];
                }
                ct[best] += 1;
            }
            for j in 0..p.cent {
                for i in 0..attr {
                    k[j * attr + i] = sum[j * attr + i] / ct[j] as f32;
                }
            }
        }
        k
    }

    #[test]
    fn kmeans_recovers_oracle_centroids() {
        let p = kmeans::Params {
            rows: 600,
            iters: 10,
            ..kmeans::Params::default()
        };
        let data = kmeans::generate(&p, 42);
        let oracle = scalar_kmeans(&data, &p);
        let ts = evaluate(&kmeans::workflow_over(data, &p)).unwrap();
        let k = ts.context.get("k").unwrap().as_f32_slice().unwrap();
        for (a, b) in k.iter().zip(&oracle) {
            assert!(
                crate::scalar::rel_err(*a as f64, *b as f64) < 1e-3,
                "centroid mismatch: {a} vs {b}"
            );
        }
    }

    #[test]
    fn single_cluster_centroid_is_dataset_mean() {
        let p = kmeans::Params {
            rows: 100,
            cent: 1,
            iters: 1,
            ..kmeans::Params::default()
        };
        let data = kmeans::generate(&p, 3);
        let mut mean = vec![0.0f32; p.attr];
        for r in 0..data.cardinality() {
            for (i, v) in data.row(r).iter().enumerate() {
                mean[i] += v.as_f32();
            }
        }
        for m in &mut mean {
            *m /= p.rows as f32;
        }
        let ts = evaluate(&kmeans::workflow_over(data, &p)).unwrap();
        let k = ts.context.get("k").unwrap().as_f32_slice().unwrap();
        for (a, b) in k.iter().zip(&mean) {
            assert!(
                crate::scalar::rel_err(*a as f64, *b as f64) < 1e-4,
                "{a} vs {b}"
            );
        }
    }

    #[test]
    fn linear_regression_finds_exact_weights() {
        let p = regression::Params {
            rows: 2_000,
            features: 2,
            iters: 40,
            step: 1.5,
        };
        let (data, true_w) = regression::generate_linear(&p, 11);
        let ts = evaluate(&regression::workflow_over(
            data,
            &p,
            regression::Loss::Squared,
        ))
        .unwrap();
        let w = ts.context.get("w").unwrap().as_f32_slice().unwrap();
        for (a, b) in w.iter().zip(&true_w) {
            assert!((a - b).abs() < 1e-3, "weight {a} vs true {b}");
        }
    }

    #[test]
    fn zero_step_leaves_weights_unchanged() {
        let p = regression::Params {
            rows: 200,
            features: 2,
            iters: 3,
            step: 0.0,
        };
        let (data, _) = regression::generate_linear(&p, 5);
        let ts = evaluate(&regression::workflow_over(
            data,
            &p,
            regression::Loss::Squared,
        ))
        .unwrap();
        let w = ts.context.get("w").unwrap().as_f32_slice().unwrap();
        assert!(w.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn logistic_regression_separates_training_data() {
        let p = regression::Params {
            rows: 1_000,
            features: 2,
            iters: 20,
            step: 5.0,
        };
        let (data, _) = regression::generate_logistic(&p, 13);
        let ts = evaluate(&regression::workflow_over(
            data.clone(),
            &p,
            regression::Loss::Logistic,
        ))
        .unwrap();
        let w = ts.context.get("w").unwrap().as_f32_slice().unwrap();
        let mut correct = 0usize;
        for r in 0..data.cardinality() {
            let row = data.row(r);
            let z: f32 = (0..p.features).map(|i| row[i].as_f32() * w[i]).sum();
            let pred = if z > 0.0 { 1.0 } else { 0.0 };
            if pred == row[p.features].as_f32() {
                correct += 1;
            }
        }
        let acc = correct as f32 / p.rows as f32;
        assert!(acc >= 0.99, "training accuracy {acc}");
    }

    #[test]
    fn logistic_gradient_matches_finite_differences() {
        // gradient of the summed logistic loss at w, via the reduce, vs
        // central finite differences of the loss itself
        let p = regression::Params {
            rows: 50,
            features: 2,
            iters: 1,
            step: 0.0,
        };
        let (data, _) = regression::generate_logistic(&p, 21);
        let w0 = [0.3f32, -0.7];

        let loss = |w: &[f32]| -> f64 {
            let mut total = 0.0f64;
            for r in 0..data.cardinality() {
                let row = data.row(r);
                let z: f64 = (0..p.features)
                    .map(|i| row[i].as_f32() as f64 * w[i] as f64)
                    .sum();
                let y = row[p.features].as_f32() as f64;
                let pz = 1.0 / (1.0 + (-z).exp());
                total -= y * pz.ln() + (1.0 - y) * (1.0 - pz).ln();
            }
            total
        };

        // run just the gradient reduce once at w0
        let ctx = Context::new()
            .with("w", ContextValue::vector_f32(w0.to_vec()))
            .with("g", ContextValue::zeros(F32, Shape::Vector(p.features)))
            .with("iter", ContextValue::scalar(Scalar::I32(0)));
        let w = Workflow::from_relation(data.clone(), ctx)
            .reduce(
                Arc::new(regression::gradient_udf(p.features, regression::Loss::Logistic)),
                None,
            )
            .unwrap();
        let ts = evaluate(&w).unwrap();
        let g = ts.context.get("g").unwrap().as_f32_slice().unwrap();

        let h = 1e-3f32;
        for i in 0..p.features {
            let mut wp = w0;
            wp[i] += h;
            let mut wm = w0;
            wm[i] -= h;
            let fd = (loss(&wp) - loss(&wm)) / (2.0 * h as f64);
            let rel = ((g[i] as f64 - fd) / fd.abs().max(1e-9)).abs();
            assert!(rel < 1e-2, "gradient[{i}] = {} vs fd {fd}", g[i]);
        }
    }

    #[test]
    fn bayes_counts_match_hand_enumeration() {
        // 2 labels, 1 binary feature, 6 hand-written rows
        let p = bayes::Params {
            rows: 6,
            features: 1,
            bins: 2,
            labels: 2,
        };
        let schema = Schema::new(vec![("x0", I32), ("label", I32)]);
        let rows = [
            [0, 0],
            [0, 0],
            [1, 0],
            [1, 1],
            [1, 1],
            [0, 1],
        ];
        let rel = Relation::from_rows(
            schema,
            &rows
                .iter()
                .map(|r| r.iter().map(|v| Scalar::I32(*v)).collect())
                .collect::<Vec<_>>(),
        );
        let ts = evaluate(&bayes::workflow_over(rel, &p)).unwrap();
        let cc = ts.context.get("class_counts").unwrap().as_i32_slice().unwrap();
        assert_eq!(cc, [3, 3]);
        // feature_counts rows: (f0,bin0), (f0,bin1); cols: label 0, 1
        let fc = ts
            .context
            .get("feature_counts")
            .unwrap()
            .as_i32_slice()
            .unwrap();
        assert_eq!(fc, [2, 1, 1, 2]);
    }

    #[test]
    fn bayes_counts_match_sequential_oracle() {
        let p = bayes::Params {
            rows: 500,
            ..bayes::Params::default()
        };
        let data = bayes::generate(&p, 17);
        let mut cc = vec![0i32; p.labels];
        let mut fc = vec![0i32; p.features * p.bins * p.labels];
        for r in 0..data.cardinality() {
            let row = data.row(r);
            let y = row[p.features].as_i32() as usize;
            cc[y] += 1;
            for i in 0..p.features {
                let bin = row[i].as_i32() as usize;
                fc[(i * p.bins + bin) * p.labels + y] += 1;
            }
        }
        let ts = evaluate(&bayes::workflow_over(data, &p)).unwrap();
        assert_eq!(
            ts.context.get("class_counts").unwrap().as_i32_slice().unwrap(),
            cc
        );
        assert_eq!(
            ts.context
                .get("feature_counts")
                .unwrap()
                .as_i32_slice()
                .unwrap(),
            fc
        );
    }
}
