//! The adversary behind the lower bound: tilted coins, conditional draws and the certificate.

use otest::adversary::{certificate_check, hard_q_rounded, sample_conditional, AdversaryModel};
use otest::hypothesis::HypothesisModel;
use otest::optimizer::{optimize, OptimizerConfig};

fn main() -> otest::Result<()> {
    let model = optimize(&HypothesisModel::heavy_element(80), 40.0, 0.9, &OptimizerConfig::default())?;
    let adv = AdversaryModel::with_default_window(&model);
    println!("tilted expected distance {:.12} (eps = {})", adv.tilted_distance(), adv.eps);
    println!(
        "coin expected distance   {:.6} ± {:.6}",
        adv.expected_coin_distance(),
        adv.coin_distance_variance().sqrt()
    );

    let hard = hard_q_rounded(&adv);
    println!("rounded hard Q: x1-counts {:?}, distance {:.6}, mass {:.6}", hard.n1, hard.distance, hard.mass);

    for seed in 0..3 {
        let r = sample_conditional(&adv, seed, 1_000_000)?;
        println!("conditional draw {seed}: distance {:.6}", r.distance);
    }

    let cert = certificate_check(&adv, &model, 1e-6)?;
    println!(
        "certificate {:.12} vs delta {:.12} (diff {:.1e}), s-derivative {:.1e}",
        cert.certificate, cert.delta_log, cert.difference, cert.s_derivative
    );
    println!("window factor e^(alpha (eps' - eps)) = {:.6}", cert.window_log_factor.exp());
    Ok(())
}
