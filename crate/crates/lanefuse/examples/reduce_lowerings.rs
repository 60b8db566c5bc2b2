//! Aggregation lowering comparison. The synthesizer picks the cheapest
//! shape a reduce admits:
//!
//! - unkeyed accumulators become reduction variables (a small vector of
//!   partial aggregates folded per block)
//! - Context writes indexed by a bounded tuple value become dense
//!   direct-index arrays
//! - everything else (and both of the above when forced, as here) goes
//!   through an open-addressing hash table
//!
//! This example runs each natural lowering against its forced-hash twin,
//! verifies they produce identical results, then prints the speedup.
//!
//! ```sh
//! cargo run --release --example reduce_lowerings
//! ```

use lanefuse::harness::{
    bench_reduce_lowering, grouped_reduce_workflow, sum_reduce_workflow,
};
use lanefuse::Engine;

fn main() {
    let engine = Engine::new().with_executors(1);

    let sum = sum_reduce_workflow(4_000_000, 7);
    let grouped = grouped_reduce_workflow(2_000_000, 10, 7);

    for (name, w) in [("running-sum", &sum), ("grouped-by-key", &grouped)] {
        let r = bench_reduce_lowering(&engine, name, w, 3).expect("lowerings agree");
        println!(
            "{:<14} {}={:.2}ms  hash={:.2}ms  speedup={:.2}x",
            r.name, r.natural_lowering, r.natural_ms, r.hash_ms, r.speedup
        );
    }
}
