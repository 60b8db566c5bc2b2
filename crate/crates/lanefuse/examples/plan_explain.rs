//! Inspect what the planner and synthesizer do with a workflow without
//! running it: the abstract plan (operator DAG, breaker boundaries, cost
//! annotations) and the synthesized execution plan for each strategy.
//!
//! ```sh
//! cargo run --example plan_explain
//! ```

use lanefuse::analyzer::HardwareProfile;
use lanefuse::workloads::{self, WorkloadKind};
use lanefuse::{planner, synthesizer, Engine, Strategy};

fn main() {
    let workflow = workloads::build(WorkloadKind::KMeans, 10_000, 5, 42);
    let hw = HardwareProfile::default();

    let abstract_plan = planner::plan(&workflow, &hw).expect("plannable");
    println!("{}", planner::explain(&abstract_plan));

    let engine = Engine::new();
    for s in Strategy::ALL {
        let plan = engine.prepare(&workflow, s).expect("synthesizable");
        println!("=== {} ===", s.name());
        println!("{}", synthesizer::explain(&plan));
    }
}
