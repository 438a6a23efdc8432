//! Monte-Carlo error rates of the optimal tester against its own hard alternative.
//!
//! cargo run --example simulate_errors -- [TRIALS]

use otest::adversary::{hard_q_rounded, AdversaryModel};
use otest::harness::{estimate_errors, SampleMode};
use otest::hypothesis::HypothesisModel;
use otest::optimizer::{optimize, OptimizerConfig};
use otest::testers::build_optimal_tester;

fn main() -> otest::Result<()> {
    let trials: usize = std::env::args().nth(1).map_or(100_000, |s| s.parse().expect("TRIALS"));
    let p = HypothesisModel::uniform(10);
    let model = optimize(&p, 10.0, 0.9, &OptimizerConfig::default())?;
    let tester = build_optimal_tester(&model);
    let hard = hard_q_rounded(&AdversaryModel::with_default_window(&model));
    println!("hard alternative at distance {:.6}, mass {:.6}", hard.distance, hard.mass);

    for mode in [SampleMode::Poisson, SampleMode::Fixed] {
        let est = estimate_errors(&tester, &p, &hard.alternative, trials, 7, mode)?;
        println!(
            "{mode:?}: type I = {:.4} ± {:.4}, type II = {:.4} ± {:.4}   (bound {:.4})",
            est.type1,
            est.ci1,
            est.type2,
            est.ci2,
            model.delta_log.exp()
        );
    }
    Ok(())
}
