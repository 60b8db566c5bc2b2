//! End-to-end k-means: generate clustered points, train for 20 iterations
//! on the parallel runtime, and print the recovered centroids.
//!
//! ```sh
//! cargo run --release --example kmeans_end_to_end
//! ```

use lanefuse::workloads::kmeans;
use lanefuse::{Engine, Strategy};

fn main() {
    let params = kmeans::Params {
        rows: 50_000,
        attr: 2,
        cent: 3,
        iters: 20,
    };
    let workflow = kmeans::workflow(&params, 42);

    let engine = Engine::new().with_executors(4);
    let (result, stats) = engine
        .run(&workflow, Strategy::Adaptive)
        .expect("k-means workflow runs");

    println!(
        "trained on {} points, {} loop iterations, {} blocks scheduled",
        params.rows, stats.loop_iterations, stats.blocks_total
    );

    // The trained centroids live in the Context under "k", one row per
    // cluster. The generator plants clusters at (j*10, j*10 + 1) with
    // +-0.5 uniform noise, so the recovered centers should sit within a
    // few hundredths of those anchors.
    let k = result.context.get("k").expect("centroid matrix");
    let cells = k.as_f32_slice().expect("centroids are f32");
    for j in 0..params.cent {
        let row = &cells[j * params.attr..(j + 1) * params.attr];
        let planted: Vec<f32> = (0..params.attr)
            .map(|i| kmeans::center(j, i))
            .collect();
        println!("cluster {j}: found {row:?}  (planted {planted:?})");
    }
}
