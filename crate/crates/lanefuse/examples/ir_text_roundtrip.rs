//! The textual IR form: parse a UDF from text, validate and analyze it,
//! then print it back out. Handy for fixtures and for feeding the
//! `analyze` CLI command arbitrary kernels.
//!
//! ```sh
//! cargo run --example ir_text_roundtrip
//! ```

use lanefuse::analyzer::{self, HardwareProfile};
use lanefuse::ir::text::{parse_program, print_program};

const SOFTPLUS: &str = "\
# map (x) -> (x, ln(1 + e^x))
udf softplus map in(f32) out(f32,f32)
%x = load-field 0
store-field 0 %x
%e = exp %x
%one = const f32 1
%s = add %one %e
%y = ln %s
store-field 1 %y
";

fn main() {
    let program = parse_program(SOFTPLUS).expect("well-formed IR text");
    program.validate().expect("passes validation");

    let hw = HardwareProfile::default();
    let stats = analyzer::analyze(&program, &hw).expect("analyzable");
    println!(
        "{}: {:.2} predicted compute cycles/tuple, vectorizable: {}",
        stats.name, stats.predicted_compute_cycles, stats.vectorizable
    );

    // Round trip: printed form parses back to the same program.
    let printed = print_program(&program);
    let reparsed = parse_program(&printed).expect("printed form parses");
    assert_eq!(print_program(&reparsed), printed);
    println!("\n{printed}");
}
