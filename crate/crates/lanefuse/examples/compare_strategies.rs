//! Run one workload under every synthesis strategy, check the results
//! agree bit-for-bit (ints) / within float tolerance, and compare wall
//! times. The adaptive strategy should track the best fixed choice.
//!
//! ```sh
//! cargo run --release --example compare_strategies
//! ```

use lanefuse::harness::bench_strategies;
use lanefuse::workloads::{self, WorkloadKind};
use lanefuse::{Engine, Strategy};

fn main() {
    let workflow = workloads::build(WorkloadKind::KMeans, 100_000, 5, 42);
    let engine = Engine::new().with_executors(4);

    let reports = bench_strategies(&engine, "kmeans", &workflow, &Strategy::ALL, 3)
        .expect("all strategies agree");

    println!("{:<22} {:>9}  checksum", "strategy", "wall ms");
    for r in &reports {
        println!(
            "{:<22} {:>9.2}  {}/{}",
            r.strategy, r.wall_ms, r.checksums.relation, r.checksums.context
        );
    }

    let best = reports
        .iter()
        .map(|r| r.wall_ms)
        .fold(f64::INFINITY, f64::min);
    let adaptive = reports
        .iter()
        .find(|r| r.strategy == Strategy::Adaptive.name())
        .expect("adaptive report");
    println!(
        "\nadaptive is {:.2}x the best fixed strategy",
        adaptive.wall_ms / best
    );
}
