//! Weak scaling: fix the rows per worker, grow the worker count, and
//! watch the wall-time ratio. On a machine with enough cores the ratio
//! stays near 1.0; on fewer cores the extra workers just time-slice.
//!
//! ```sh
//! cargo run --release --example weak_scaling
//! ```

use lanefuse::harness::weak_scaling;
use lanefuse::workloads::{self, WorkloadKind};
use lanefuse::Strategy;

fn main() {
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    let points = weak_scaling(
        |rows| workloads::build(WorkloadKind::KMeans, rows, 3, 42),
        &[1, 2, 4],
        50_000,
        Strategy::Adaptive,
        3,
    )
    .expect("scaling run");

    println!("workers     rows   wall ms   ratio vs 1 worker");
    for p in &points {
        let note = if p.workers > cores { "  (oversubscribed)" } else { "" };
        println!(
            "{:>7} {:>8} {:>9.2}   {:.2}{note}",
            p.workers, p.rows, p.wall_ms, p.ratio
        );
    }
    if cores < 4 {
        println!("\nnote: this host has {cores} core(s); ratios above its core count measure scheduling overhead, not parallel speedup");
    }
}
