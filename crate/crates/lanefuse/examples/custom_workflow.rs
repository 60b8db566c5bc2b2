//! Building a workflow from scratch: hand-written UDFs over a hand-built
//! relation, chained through filter, map, and a keyed reduce.
//!
//! The pipeline takes raw sensor readings `(station, celsius)`, drops
//! sentinel values, converts to Fahrenheit, and aggregates per-station
//! sums and counts.
//!
//! ```sh
//! cargo run --example custom_workflow
//! ```

use lanefuse::algebra::Workflow;
use lanefuse::ir::{CmpOp, Kind, UdfBuilder};
use lanefuse::{Context, Engine, Relation, Scalar, Schema, ScalarType, Strategy};
use std::sync::Arc;

const F32: ScalarType = ScalarType::F32;
const I32: ScalarType = ScalarType::I32;

fn main() {
    let schema = Schema::new(vec![("station", I32), ("celsius", F32)]);
    let readings = Relation::from_rows(
        schema,
        &[
            vec![Scalar::I32(0), Scalar::F32(21.5)],
            vec![Scalar::I32(1), Scalar::F32(-3.0)],
            vec![Scalar::I32(0), Scalar::F32(22.1)],
            vec![Scalar::I32(2), Scalar::F32(-999.0)], // sensor fault marker
            vec![Scalar::I32(1), Scalar::F32(-2.4)],
            vec![Scalar::I32(2), Scalar::F32(35.0)],
        ],
    );

    // predicate: celsius > -100 (drop the -999 fault marker)
    let valid = {
        let mut b = UdfBuilder::new("valid", Kind::Predicate).input(&[I32, F32]);
        let c = b.load_field(1);
        let floor = b.const_f32(-100.0);
        let ok = b.cmp(CmpOp::Gt, c, floor);
        b.return_bool(ok);
        b.build().unwrap()
    };

    // map: (station, celsius) -> (station, fahrenheit)
    let to_fahrenheit = {
        let mut b = UdfBuilder::new("to-fahrenheit", Kind::Map)
            .input(&[I32, F32])
            .output(&[I32, F32]);
        let s = b.load_field(0);
        let c = b.load_field(1);
        let scale = b.const_f32(9.0 / 5.0);
        let off = b.const_f32(32.0);
        let scaled = b.mul(c, scale);
        let f = b.add(scaled, off);
        b.store_field(0, s);
        b.store_field(1, f);
        b.build().unwrap()
    };

    // keyed reduce: per-station sum and count in accumulator slots
    let totals = {
        let mut b = UdfBuilder::new("totals", Kind::ReduceBody)
            .input(&[I32, F32])
            .acc_slots(&[F32, I32]);
        let f = b.load_field(1);
        b.acc_add(0, f);
        b.acc_increment(1);
        b.build().unwrap()
    };
    let by_station = {
        let mut b = UdfBuilder::new("by-station", Kind::Key)
            .input(&[I32, F32])
            .output(&[I32]);
        let s = b.load_field(0);
        b.emit(&[s]);
        b.build().unwrap()
    };

    let workflow = Workflow::from_relation(readings, Context::new())
        .filter(Arc::new(valid))
        .unwrap()
        .map(Arc::new(to_fahrenheit))
        .unwrap()
        .reduce(Arc::new(totals), Some(Arc::new(by_station)))
        .unwrap();

    let engine = Engine::new().with_executors(2);
    let (result, _) = engine.run(&workflow, Strategy::Adaptive).unwrap();

    // Keyed reduces emit one row per group: (key, acc slots...), sorted
    // by key regardless of worker count.
    println!("station  mean °F  samples");
    for i in 0..result.relation.cardinality() {
        let row = result.relation.row(i);
        let (Scalar::I32(station), Scalar::F32(sum), Scalar::I32(n)) = (row[0], row[1], row[2])
        else {
            unreachable!("reduce output shape is (i32, f32, i32)");
        };
        println!("{station:>7}  {:>7.2}  {n:>7}", sum / n as f32);
    }
}
