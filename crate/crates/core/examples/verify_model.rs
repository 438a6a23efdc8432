//! Run the optimality checks on a fresh or saved model.
//!
//! cargo run --example verify_model -- [MODEL.json]

use otest::harness::{verify_suite, VerifyOptions};
use otest::hypothesis::HypothesisModel;
use otest::io::load_model;
use otest::optimizer::{optimize, OptimizerConfig};

fn main() -> otest::Result<()> {
    let model = match std::env::args().nth(1) {
        Some(path) => load_model(path)?,
        None => optimize(&HypothesisModel::heavy_element(80), 40.0, 0.9, &OptimizerConfig::default())?,
    };
    let report = verify_suite(&model, &VerifyOptions::default())?;
    for c in &report.checks {
        println!(
            "{:<28} {:>14.3e}  (limit {:.0e})  {}",
            c.name,
            c.value,
            c.limit,
            if c.passed { "ok" } else { "FAIL" }
        );
    }
    println!("overall: {}", if report.passed { "passed" } else { "FAILED" });
    Ok(())
}
