//! Differential testing: run randomly generated workflows through both
//! the slow reference interpreter and the parallel runtime and compare.
//! The acceptance suite does this over 100 seeds; here we run a handful
//! and print what each workflow looked like.
//!
//! ```sh
//! cargo run --example differential_corpus
//! ```

use lanefuse::harness::{tupleset_close, FLOAT_TOL};
use lanefuse::{corpus, reference, Engine, Strategy};

fn main() {
    let engine = Engine::new().with_executors(2);

    for (name, workflow) in corpus::suite(8, 2024) {
        let expected = reference::evaluate(&workflow).expect("reference evaluates");
        let (actual, _) = engine
            .run(&workflow, Strategy::Adaptive)
            .expect("runtime evaluates");

        tupleset_close(&expected, &actual, FLOAT_TOL)
            .unwrap_or_else(|e| panic!("{name}: runtime disagrees with reference: {e}"));

        let ops: Vec<&str> = workflow.nodes.iter().map(|n| n.op.name()).collect();
        println!(
            "{name}: {} -> {} rows, ops [{}]  ok",
            workflow.sources()[0].estimated_rows(),
            actual.relation.cardinality(),
            ops.join(", ")
        );
    }
}
