//! Load balancing under skew. Executors pull fixed-size blocks from a
//! shared queue, so a slow executor simply claims fewer blocks instead of
//! stalling the job. This example injects an artificial 4x slowdown into
//! one of four executors and compares wall time and per-executor block
//! counts against the uniform run.
//!
//! ```sh
//! cargo run --release --example straggler_balancing
//! ```

use lanefuse::harness::time_median;
use lanefuse::workloads::{self, WorkloadKind};
use lanefuse::{Engine, Strategy};
use std::time::Duration;

fn main() {
    let workflow = workloads::build(WorkloadKind::KMeans, 200_000, 3, 42);

    let uniform = Engine::new().with_executors(4);
    let plan = uniform.prepare(&workflow, Strategy::Adaptive).expect("plan");

    let mut skewed = uniform.clone();
    // Executor 0 sleeps this long per block it processes; with perfectly
    // static partitioning the whole job would take ~4x as long.
    skewed.exec_opts.per_executor_delay = vec![
        Duration::from_micros(300),
        Duration::ZERO,
        Duration::ZERO,
        Duration::ZERO,
    ];

    let (r, base_ms) = time_median(3, || uniform.execute(&plan));
    r.expect("uniform run");
    let (r, skew_ms) = time_median(3, || skewed.execute(&plan));
    let (_, stats) = r.expect("skewed run");

    println!("uniform: {base_ms:.2}ms   one-slow-of-four: {skew_ms:.2}ms   ratio {:.2}x", skew_ms / base_ms);
    println!("blocks per executor in the skewed run (executor 0 is the straggler):");
    for e in &stats.executors {
        println!("  node {} exec {}: {} blocks", e.node, e.executor, e.blocks);
    }
}
