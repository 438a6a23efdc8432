//! Solve for the optimal tester of a hypothesis and save it.
//!
//! cargo run --example optimize_tester -- [HYPOTHESIS] [K] [EPS] [OUT]
//! HYPOTHESIS is a JSON file or `uniform:N` / `heavy:N` (default `uniform:10`).

use otest::io::{load_hypothesis, save_model};
use otest::optimizer::{optimize, OptimizerConfig};

fn main() -> otest::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let spec = args.first().map_or("uniform:10", String::as_str);
    let hypothesis = load_hypothesis(spec)?;
    let k: f64 = args.get(1).map_or(Ok(hypothesis.n() as f64), |s| s.parse()).expect("K");
    let eps: f64 = args.get(2).map_or(Ok(0.9), |s| s.parse()).expect("EPS");

    let start = std::time::Instant::now();
    let model = optimize(&hypothesis, k, eps, &OptimizerConfig::default())?;
    println!("{spec}: n = {}, k = {k}, eps = {eps} ({:.2?})", hypothesis.n(), start.elapsed());
    println!("  delta_log = {:.10}   error bound e^delta = {:.6}", model.delta_log, model.delta_log.exp());
    println!("  alpha = {:.8}  u = {:.8}  shift = {:.8}", model.alpha, model.u, model.shift);
    for c in &model.classes {
        println!(
            "  class y = {:.6} x{:<3}  q = {:.6}  x1 = {:.6}  x2 = {:.6}  gamma = {:.6}",
            c.y, c.count, c.q, c.x1, c.x2, c.gamma
        );
    }
    if model.starts_disagree {
        println!("  note: multistart runs disagreed before the final polish");
    }
    if let Some(out) = args.get(3) {
        save_model(out, &model)?;
        println!("saved {out}");
    }
    Ok(())
}
