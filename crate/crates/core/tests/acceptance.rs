//! Acceptance suite. Prints one PASS/FAIL line per criterion and fails if any did.

use std::time::Instant;

use otest::adversary::{certificate_check, hard_q_rounded, AdversaryModel};
use otest::harness::{
    estimate_errors_at, run_sweep, sample_statistics, verify_suite, write_csv, ExperimentConfig, ResultRow,
    SampleMode, VerifyOptions,
};
use otest::hypothesis::{AlternativeModel, HypothesisModel};
use otest::io::load_hypothesis;
use otest::optimizer::{optimize, OptimalTesterModel, OptimizerConfig};
use otest::oracle::{
    exact_fixed_k_error, exact_poissonized_error_auto, np_exact_error_tiny, poisson_rates, Side,
    DEFAULT_SLACK_BUDGET,
};
use otest::testers::{baseline, build_optimal_tester, calibrate_threshold, Baseline, SemilinearTester};

const EPS: f64 = 0.9;

fn data(name: &str) -> String {
    format!("{}/data/{name}", env!("CARGO_MANIFEST_DIR"))
}

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn solve(p: &HypothesisModel, k: f64) -> OptimalTesterModel {
    optimize(p, k, EPS, &OptimizerConfig::default()).expect("optimize")
}

fn criterion_instances() -> Vec<(String, HypothesisModel, f64)> {
    let mut out = Vec::new();
    // the heavy instance is named by its 80 light elements
    for (file, n) in [("uniform10.json", 10.0), ("uniform50.json", 50.0), ("heavy80.json", 80.0)] {
        let p = load_hypothesis(&data(file)).unwrap();
        for k in [n, n / 2.0] {
            out.push((file.to_string(), p.clone(), k));
        }
    }
    out
}

fn stationarity() -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;
    for (name, p, k) in criterion_instances() {
        let start = Instant::now();
        let m = solve(&p, k);
        let rep = verify_suite(
            &m,
            &VerifyOptions {
                scaling_factor: None,
                ..VerifyOptions::default()
            },
        )
        .unwrap();
        let secs = start.elapsed().as_secs_f64();
        let failed: Vec<_> = rep.failed().map(|c| c.name.clone()).collect();
        ok &= rep.passed && secs < 30.0;
        notes.push(format!("{name} k={k}: {:.1}s{}", secs, if failed.is_empty() { String::new() } else { format!(" failed {failed:?}") }));
    }
    outcome(ok, notes.join("; "))
}

fn subdivision() -> Outcome {
    let start = Instant::now();
    let p = HypothesisModel::uniform(10);
    let base = solve(&p, 10.0);
    let mut worst: f64 = 0.0;
    for s in [2usize, 5, 10] {
        let m = solve(&p.subdivide(s), 10.0 * s as f64);
        let target = s as f64 * base.delta_log;
        worst = worst.max(((m.delta_log - target) / target).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(worst < 1e-6 && secs < 120.0, format!("max relative gap {worst:.2e}, {secs:.1}s"))
}

fn certificate() -> Outcome {
    let mut worst_diff: f64 = 0.0;
    let mut worst_ds: f64 = 0.0;
    for (_, p, k) in criterion_instances() {
        let m = solve(&p, k);
        let rep = certificate_check(&AdversaryModel::with_default_window(&m), &m, 1e-6).unwrap();
        worst_diff = worst_diff.max(rep.difference.abs());
        worst_ds = worst_ds.max(rep.s_derivative.abs());
    }
    outcome(
        worst_diff < 1e-6 && worst_ds < 1e-6,
        format!("max |certificate - delta| {worst_diff:.2e}, max |d/ds| {worst_ds:.2e}"),
    )
}

fn chernoff_dominance() -> Outcome {
    let p = HypothesisModel::uniform(10);
    let m = solve(&p, 10.0);
    let bound = m.delta_log.exp();
    let tester = build_optimal_tester(&m);
    let exact = exact_poissonized_error_auto(&tester, &poisson_rates(&p, 10.0), DEFAULT_SLACK_BUDGET).unwrap();
    let hq = hard_q_rounded(&AdversaryModel::with_default_window(&m));
    let est = estimate_errors_at(&tester, &p, &hq.alternative, 10.0, 100_000, 41, SampleMode::Poisson).unwrap();
    let ok = exact.upper <= bound && est.type1 <= bound + 3.0 * est.ci1 && est.type2 <= bound + 3.0 * est.ci2;
    outcome(
        ok,
        format!(
            "e^delta {bound:.4}; exact type I <= {:.4}; MC type I {:.4} +- {:.4}, type II {:.4} +- {:.4}",
            exact.upper, est.type1, est.ci1, est.type2, est.ci2
        ),
    )
}

fn sweep(json: serde_json::Value) -> Vec<ResultRow> {
    let cfg: ExperimentConfig = serde_json::from_value(json).unwrap();
    let rows = run_sweep(&cfg, Some(std::path::Path::new(&data("")))).unwrap();
    for r in &rows {
        assert!(r.error.is_empty(), "{}: {}", r.tester, r.error);
    }
    rows
}

fn row<'a>(rows: &'a [ResultRow], tester: &str) -> &'a ResultRow {
    rows.iter().find(|r| r.tester == tester).unwrap()
}

fn heavy_separation() -> Outcome {
    let start = Instant::now();
    let rows = sweep(serde_json::json!({
        "hypotheses": ["heavy80.json"],
        "k": [40],
        "eps": [EPS],
        "testers": ["optimal", "chisq"],
        "trials": 100_000,
        "seed": 2024,
        "mass_shifts": [
            {"class": 0, "delta_over_eps": 0.5},
            {"class": 0, "delta_over_eps": -0.5}
        ]
    }));
    let secs = start.elapsed().as_secs_f64();
    let (opt, chi) = (row(&rows, "optimal"), row(&rows, "chisq"));
    outcome(
        opt.max_err < 0.10 && chi.max_err > 0.35 && secs < 300.0,
        format!("optimal {:.4}, chisq {:.4}, {secs:.1}s", opt.max_err, chi.max_err),
    )
}

fn uniform_ordering() -> Outcome {
    let rows = sweep(serde_json::json!({
        "hypotheses": ["uniform50.json"],
        "k": [50],
        "eps": [EPS],
        "testers": ["optimal", "chisq", "tv", "collisions", "singletons"],
        "trials": 100_000,
        "seed": 2024
    }));
    let opt = row(&rows, "optimal").max_err;
    let mut ok = true;
    let mut notes = vec![format!("optimal {opt:.4}")];
    for b in Baseline::ALL {
        let e = row(&rows, b.name()).max_err;
        ok &= opt <= e + 0.02;
        notes.push(format!("{} {e:.4}", b.name()));
    }
    outcome(ok, notes.join(", "))
}

fn within(exact: f64, mc: f64, trials: usize) -> bool {
    let sigma = (exact * (1.0 - exact) / trials as f64).sqrt();
    (mc - exact).abs() <= 4.0 * sigma + 1e-12
}

fn rate(stats: &[f64], tester: &SemilinearTester, reject: bool) -> f64 {
    stats.iter().filter(|&&s| tester.rejects(s) == reject).count() as f64 / stats.len() as f64
}

fn oracle_agreement() -> Outcome {
    const TRIALS: usize = 1_000_000;
    let mut ok = true;
    let mut notes = Vec::new();
    for n in [3usize, 6] {
        let p = HypothesisModel::uniform(n);
        let k = n as f64;
        let m = solve(&p, k);
        let q = hard_q_rounded(&AdversaryModel::with_default_window(&m)).alternative;
        let mut testers = vec![("optimal".to_string(), build_optimal_tester(&m))];
        for b in Baseline::ALL {
            let (t, _) = calibrate_threshold(&baseline(b, &p, k), &p, k, &q, 10_000, 5, SampleMode::Poisson).unwrap();
            testers.push((b.name().to_string(), t));
        }
        let null = AlternativeModel::from_hypothesis(&p);
        let mut bad = Vec::new();
        for (name, t) in &testers {
            for (side, source, side_id) in [(Side::Type1, &null, 0u64), (Side::Type2, &q, 1)] {
                let reject = side == Side::Type1;
                let fixed = exact_fixed_k_error(t, source, n as u64, side).unwrap();
                let mc = rate(&sample_statistics(t, source, k, TRIALS, 77, side_id, SampleMode::Fixed), t, reject);
                if !within(fixed, mc, TRIALS) {
                    bad.push(format!("{name} fixed {side:?}: exact {fixed:.5} mc {mc:.5}"));
                }
                let raw = exact_poissonized_error_auto(t, &poisson_rates(source, k), DEFAULT_SLACK_BUDGET).unwrap();
                let bracket = if reject { raw } else { raw.complement() };
                let mc = rate(&sample_statistics(t, source, k, TRIALS, 78, side_id, SampleMode::Poisson), t, reject);
                let sigma = (bracket.midpoint() * (1.0 - bracket.midpoint()) / TRIALS as f64).sqrt();
                if !(bracket.lower - 4.0 * sigma - 1e-12 <= mc && mc <= bracket.upper + 4.0 * sigma + 1e-12) {
                    bad.push(format!(
                        "{name} poisson {side:?}: [{:.5}, {:.5}] mc {mc:.5}",
                        bracket.lower, bracket.upper
                    ));
                }
            }
        }
        ok &= bad.is_empty();
        notes.push(if bad.is_empty() { format!("n={n}: 20 comparisons agree") } else { format!("n={n}: {bad:?}") });
    }
    outcome(ok, notes.join("; "))
}

fn sandwich() -> Outcome {
    let mut ok = true;
    let mut notes = Vec::new();
    for n in [4usize, 8] {
        let p = HypothesisModel::uniform(n);
        let m = solve(&p, n as f64);
        let adv = AdversaryModel::with_default_window(&m);
        let np = np_exact_error_tiny(&m, &adv, n as u64).unwrap();
        let weak = m.delta_log.exp() * (m.alpha * (adv.eps_hi - adv.eps)).exp() * 1e-2;
        ok &= np.floor <= np.tester_max_err() && np.floor >= weak;
        notes.push(format!(
            "n={n}: {weak:.4} <= floor {:.4} <= tester {:.4}",
            np.floor,
            np.tester_max_err()
        ));
    }
    outcome(ok, notes.join("; "))
}

fn determinism() -> Outcome {
    let csv_for = |workers: usize| {
        let rows = sweep(serde_json::json!({
            "hypotheses": ["heavy:8", "heavy:12"],
            "k": [6, 12],
            "eps": [EPS],
            "testers": ["optimal", "chisq", "tv", "collisions", "singletons"],
            "trials": 2000,
            "seed": 99,
            "adversary": {"conditional": 2},
            "mass_shifts": [{"class": 0, "delta_over_eps": 0.5}],
            "workers": workers
        }));
        let mut buf = Vec::new();
        write_csv(&rows, &mut buf).unwrap();
        buf
    };
    let reference = csv_for(1);
    let same = [csv_for(1), csv_for(4), csv_for(4)].iter().all(|c| *c == reference);
    outcome(same, format!("{} bytes, workers 1 and 4, three repeats", reference.len()))
}

#[test]
fn acceptance() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("stationarity certificates", stationarity),
        ("subdivision scaling", subdivision),
        ("lower-bound certificate", certificate),
        ("Chernoff dominance", chernoff_dominance),
        ("heavy-element separation", heavy_separation),
        ("uniform ordering", uniform_ordering),
        ("oracle agreement", oracle_agreement),
        ("tiny-instance sandwich", sandwich),
        ("determinism", determinism),
    ];
    let mut failed = Vec::new();
    for (i, (name, run)) in criteria.iter().enumerate() {
        let o = run();
        println!("{} criterion {} ({name}): {}", if o.passed { "PASS" } else { "FAIL" }, i + 1, o.detail);
        if !o.passed {
            failed.push(i + 1);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
