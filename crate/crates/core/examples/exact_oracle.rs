//! Exact error probabilities: Poissonized brackets, fixed-k enumeration and the NP floor.

use otest::adversary::AdversaryModel;
use otest::hypothesis::{AlternativeModel, HypothesisModel};
use otest::optimizer::{optimize, OptimizerConfig};
use otest::oracle::{
    exact_fixed_k_error, exact_poissonized_error_auto, np_exact_error_tiny, poisson_rates, Side,
    DEFAULT_SLACK_BUDGET,
};
use otest::testers::build_optimal_tester;

fn main() -> otest::Result<()> {
    for n in [4usize, 8] {
        let p = HypothesisModel::uniform(n);
        let k = n as f64;
        let model = optimize(&p, k, 0.9, &OptimizerConfig::default())?;
        let tester = build_optimal_tester(&model);

        let t1 = exact_poissonized_error_auto(&tester, &poisson_rates(&p, k), DEFAULT_SLACK_BUDGET)?;
        let fixed = exact_fixed_k_error(&tester, &AlternativeModel::from_hypothesis(&p), n as u64, Side::Type1)?;
        let np = np_exact_error_tiny(&model, &AdversaryModel::with_default_window(&model), n as u64)?;

        println!("uniform n = k = {n}, eps = 0.9, bound e^delta = {:.5}", model.delta_log.exp());
        println!("  Poissonized type I in [{:.6}, {:.6}]", t1.lower, t1.upper);
        println!("  fixed-k type I        {fixed:.6}");
        println!(
            "  vs conditioned mixture: tester type I {:.6}, type II {:.6}; NP floor {:.6} ({} realizations)",
            np.tester_type1, np.tester_type2, np.floor, np.realizations
        );
    }
    Ok(())
}
