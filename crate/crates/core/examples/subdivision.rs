//! Splitting every element into s equal pieces and drawing s times as many
//! samples multiplies the optimal exponent by s.

use otest::hypothesis::HypothesisModel;
use otest::optimizer::{optimize, OptimizerConfig};

fn main() -> otest::Result<()> {
    let cfg = OptimizerConfig::default();
    let p = HypothesisModel::uniform(10);
    let base = optimize(&p, 10.0, 0.9, &cfg)?;
    println!("s = 1: delta = {:.12}", base.delta_log);
    for s in [2usize, 5, 10] {
        let m = optimize(&p.subdivide(s), 10.0 * s as f64, 0.9, &cfg)?;
        let rel = (m.delta_log - s as f64 * base.delta_log) / (s as f64 * base.delta_log);
        println!("s = {s}: delta = {:.12}  delta/s = {:.12}  relative gap {rel:.1e}", m.delta_log, m.delta_log / s as f64);
    }
    Ok(())
}
