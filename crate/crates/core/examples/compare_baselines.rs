//! Optimal tester against calibrated classic testers on the heavy-element hypothesis.
//!
//! Every tester faces the same three alternatives: the optimizer's hard Q and
//! the heavy element gaining or losing eps/2 of mass. Baselines get the single
//! threshold that is best against all three.

use otest::adversary::{hard_q_rounded, AdversaryModel};
use otest::harness::{estimate_errors_at, SampleMode};
use otest::hypothesis::{AlternativeModel, HypothesisModel};
use otest::optimizer::{optimize, OptimizerConfig};
use otest::testers::{alternative_seed, baseline, build_optimal_tester, calibrate_threshold_multi, Baseline};

fn main() -> otest::Result<()> {
    let trials = 20_000;
    let (k, eps) = (40.0, 0.9);
    let p = HypothesisModel::heavy_element(80);
    let model = optimize(&p, k, eps, &OptimizerConfig::default())?;
    let alts = vec![
        hard_q_rounded(&AdversaryModel::with_default_window(&model)).alternative,
        AlternativeModel::mass_shift(&p, 0, eps / 2.0)?,
        AlternativeModel::mass_shift(&p, 0, -eps / 2.0)?,
    ];

    let mut testers = vec![build_optimal_tester(&model)];
    for b in Baseline::ALL {
        testers.push(calibrate_threshold_multi(&baseline(b, &p, k), &p, k, &alts, trials, 11, SampleMode::Poisson)?.0);
    }
    println!("{:<12} {:>8} {:>8}", "tester", "type I", "type II");
    for t in &testers {
        let mut type1 = 0.0;
        let mut type2: f64 = 0.0;
        for (i, alt) in alts.iter().enumerate() {
            let est = estimate_errors_at(t, &p, alt, k, trials, alternative_seed(5, i), SampleMode::Poisson)?;
            type1 = est.type1;
            type2 = type2.max(est.type2);
        }
        println!("{:<12} {:>8.4} {:>8.4}", t.name, type1, type2);
    }
    Ok(())
}
