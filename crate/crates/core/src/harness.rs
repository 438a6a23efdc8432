//! Monte-Carlo error estimation, parameter sweeps and the verification suite.
//!
//! Every trial draws from its own ChaCha stream keyed by `(seed, side, trial)`, so
//! results do not depend on how trials are spread over worker threads.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adversary::{
    certificate_check, hard_q_rounded, sample_conditional, AdversaryModel, CertificateReport,
    DEFAULT_EPS_HI_RATIO,
};
use crate::error::{Error, Result};
use crate::hypothesis::{
    l1_distance, AlternativeModel, ElementSource, FixedKSampler, HypothesisModel, PoissonSampler,
};
use crate::io::{load_alternative, load_hypothesis};
use crate::optimizer::{optimize, stationarity_report, OptimalTesterModel, OptimizerConfig, StationarityReport};
use crate::testers::{
    alternative_seed, baseline, build_optimal_tester, calibrate_threshold_multi, Baseline, SemilinearTester,
};

/// Poissonized (`Poi(k)` draws) or fixed-`k` sampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleMode {
    #[default]
    Poisson,
    Fixed,
}

impl FromStr for SampleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "poisson" => Ok(SampleMode::Poisson),
            "fixed" => Ok(SampleMode::Fixed),
            other => Err(Error::Config(format!("unknown sampling mode `{other}`"))),
        }
    }
}

/// Stream for one trial on one side (0 = hypothesis, 1 = alternative).
pub fn trial_rng(seed: u64, side: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial.wrapping_mul(4).wrapping_add(side));
    rng
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for sweep row `row` derived from the base seed.
pub fn row_seed(seed: u64, row: u64) -> u64 {
    splitmix64(seed ^ splitmix64(row))
}

/// Tester statistics on `trials` independent samples from `source`.
pub fn sample_statistics<S: ElementSource + Sync>(
    tester: &SemilinearTester,
    source: &S,
    k: f64,
    trials: usize,
    seed: u64,
    side: u64,
    mode: SampleMode,
) -> Vec<f64> {
    match mode {
        SampleMode::Poisson => {
            let sampler = PoissonSampler::new(source, k);
            (0..trials)
                .into_par_iter()
                .map(|t| {
                    let mut rng = trial_rng(seed, side, t as u64);
                    tester.statistic_unchecked(&sampler.sample(&mut rng))
                })
                .collect()
        }
        SampleMode::Fixed => {
            let sampler = FixedKSampler::new(source, k.round() as u64);
            (0..trials)
                .into_par_iter()
                .map(|t| {
                    let mut rng = trial_rng(seed, side, t as u64);
                    tester.statistic_unchecked(&sampler.sample(&mut rng))
                })
                .collect()
        }
    }
}

/// 95% Wilson score interval for `successes` out of `trials`.
pub fn wilson_interval(successes: usize, trials: usize) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let z = 1.959_963_984_540_054;
    let n = trials as f64;
    let p = successes as f64 / n;
    let denom = 1.0 + z * z / n;
    let center = (p + z * z / (2.0 * n)) / denom;
    let half = z / denom * (p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt();
    ((center - half).max(0.0), (center + half).min(1.0))
}

pub fn wilson_halfwidth(successes: usize, trials: usize) -> f64 {
    let (lo, hi) = wilson_interval(successes, trials);
    0.5 * (hi - lo)
}

/// Type-I and type-II rates with their Wilson half-widths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorEstimate {
    pub type1: f64,
    pub type2: f64,
    pub ci1: f64,
    pub ci2: f64,
    pub trials: usize,
}

impl ErrorEstimate {
    pub fn max_err(&self) -> f64 {
        self.type1.max(self.type2)
    }

    /// Half-width on the side that attains the maximum.
    pub fn ci_halfwidth(&self) -> f64 {
        if self.type1 >= self.type2 {
            self.ci1
        } else {
            self.ci2
        }
    }
}

/// Rejection rate on samples of P and acceptance rate on samples of the alternative.
pub fn estimate_errors(
    tester: &SemilinearTester,
    hypothesis: &HypothesisModel,
    alternative: &AlternativeModel,
    trials: usize,
    seed: u64,
    mode: SampleMode,
) -> Result<ErrorEstimate> {
    alternative.check_aligned(hypothesis)?;
    let k = tester_k(tester)?;
    let rejects_null = sample_statistics(tester, hypothesis, k, trials, seed, 0, mode)
        .into_iter()
        .filter(|&s| tester.rejects(s))
        .count();
    let accepts_alt = sample_statistics(tester, alternative, k, trials, seed, 1, mode)
        .into_iter()
        .filter(|&s| !tester.rejects(s))
        .count();
    Ok(estimate_from_counts(rejects_null, accepts_alt, trials))
}

fn estimate_from_counts(type1_count: usize, type2_count: usize, trials: usize) -> ErrorEstimate {
    ErrorEstimate {
        type1: type1_count as f64 / trials as f64,
        type2: type2_count as f64 / trials as f64,
        ci1: wilson_halfwidth(type1_count, trials),
        ci2: wilson_halfwidth(type2_count, trials),
        trials,
    }
}

/// Same as [`estimate_errors`] with an explicit sample budget `k`.
pub fn estimate_errors_at(
    tester: &SemilinearTester,
    hypothesis: &HypothesisModel,
    alternative: &AlternativeModel,
    k: f64,
    trials: usize,
    seed: u64,
    mode: SampleMode,
) -> Result<ErrorEstimate> {
    alternative.check_aligned(hypothesis)?;
    let t1 = sample_statistics(tester, hypothesis, k, trials, seed, 0, mode)
        .into_iter()
        .filter(|&s| tester.rejects(s))
        .count();
    let t2 = sample_statistics(tester, alternative, k, trials, seed, 1, mode)
        .into_iter()
        .filter(|&s| !tester.rejects(s))
        .count();
    Ok(estimate_from_counts(t1, t2, trials))
}

fn tester_k(tester: &SemilinearTester) -> Result<f64> {
    use crate::testers::Extension;
    tester
        .columns
        .first()
        .and_then(|c| match c.extension {
            Extension::Analytic { k, .. } | Extension::Formula { k, .. } => Some(k),
            Extension::Constant(_) => None,
        })
        .ok_or_else(|| Error::Config("tester does not record its sample budget; use estimate_errors_at".into()))
}

/// Where type-II samples come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdversarySource {
    /// The rounded tilted histogram.
    Rounded,
    /// This many conditional draws from the coin process; type II is the worst of them.
    Conditional(usize),
}

/// A sweep over sample budgets, distances and testers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Hypothesis file or built-in spec (`uniform:N`, `heavy:N`); one per entry.
    pub hypotheses: Vec<String>,
    /// Sample budgets. Ignored when `k_per_n` is set.
    #[serde(default)]
    pub k: Vec<f64>,
    /// Sample budgets as multiples of each hypothesis' support size.
    #[serde(default)]
    pub k_per_n: Vec<f64>,
    pub eps: Vec<f64>,
    /// `optimal` and/or baseline names.
    pub testers: Vec<String>,
    pub trials: usize,
    /// Trials used to calibrate baseline thresholds (defaults to `trials`).
    #[serde(default)]
    pub calibration_trials: Option<usize>,
    pub seed: u64,
    #[serde(default)]
    pub mode: SampleMode,
    #[serde(default = "default_adversary")]
    pub adversary: AdversarySource,
    #[serde(default = "default_eps_hi_ratio")]
    pub eps_hi_ratio: f64,
    /// Extra alternatives that move mass onto or off one class (see
    /// [`AlternativeModel::mass_shift`]). Every tester faces all alternatives.
    #[serde(default)]
    pub mass_shifts: Vec<MassShift>,
    /// Extra alternative files; each must align with every listed hypothesis.
    #[serde(default)]
    pub alternative_files: Vec<String>,
    /// Output path; the extension is ignored in favour of `format`.
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub format: OutputFormat,
    /// Worker threads (defaults to all cores); results do not depend on it.
    #[serde(default)]
    pub workers: Option<usize>,
}

/// Shift `delta_over_eps · eps` of mass onto class `class` (negative: off it).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MassShift {
    pub class: usize,
    pub delta_over_eps: f64,
}

fn default_adversary() -> AdversarySource {
    AdversarySource::Rounded
}

fn default_eps_hi_ratio() -> f64 {
    DEFAULT_EPS_HI_RATIO
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

impl FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            other => Err(Error::Config(format!("unknown output format `{other}`"))),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trials < 1000 {
            return Err(Error::Config(format!("trials must be at least 1000, got {}", self.trials)));
        }
        if self.hypotheses.is_empty() {
            return Err(Error::Config("no hypotheses given".into()));
        }
        if self.k.is_empty() && self.k_per_n.is_empty() {
            return Err(Error::Config("give `k` or `k_per_n`".into()));
        }
        if self.k.iter().chain(&self.k_per_n).any(|&k| !(k > 0.0)) {
            return Err(Error::Config("sample budgets must be positive".into()));
        }
        if self.eps.iter().any(|&e| !(e > 0.0)) {
            return Err(Error::Config("eps values must be positive".into()));
        }
        if !(self.eps_hi_ratio > 1.0) {
            return Err(Error::Config("eps_hi_ratio must exceed 1".into()));
        }
        for t in &self.testers {
            if t != "optimal" {
                t.parse::<Baseline>()?;
            }
        }
        Ok(())
    }
}

/// One line of sweep output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub n: usize,
    pub k: f64,
    pub eps: f64,
    pub tester: String,
    pub type1: f64,
    pub type2: f64,
    pub max_err: f64,
    pub ci_halfwidth: f64,
    pub trials: usize,
    pub seed: u64,
    pub adversary_distance: f64,
    /// Chernoff bound `e^Δ` of the optimal tester for this instance.
    pub chernoff_bound: f64,
    /// Empty unless the row failed.
    pub error: String,
}

struct Instance {
    hypothesis: HypothesisModel,
    k: f64,
    eps: f64,
}

fn resolve(spec: &str, base: Option<&Path>) -> String {
    if spec.starts_with("uniform:") || spec.starts_with("heavy:") {
        return spec.to_string();
    }
    match base {
        Some(dir) if Path::new(spec).is_relative() => dir.join(spec).to_string_lossy().into_owned(),
        _ => spec.to_string(),
    }
}

/// Run every `(hypothesis, k, eps, tester)` combination. Failed rows carry their
/// error message and the sweep continues.
pub fn run_sweep(config: &ExperimentConfig, base_dir: Option<&Path>) -> Result<Vec<ResultRow>> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers.unwrap_or(0))
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    pool.install(|| sweep_inner(config, base_dir))
}

fn sweep_inner(config: &ExperimentConfig, base_dir: Option<&Path>) -> Result<Vec<ResultRow>> {
    let mut instances = Vec::new();
    for spec in &config.hypotheses {
        let hypothesis = load_hypothesis(&resolve(spec, base_dir))?;
        let ks: Vec<f64> = if config.k_per_n.is_empty() {
            config.k.clone()
        } else {
            config
                .k_per_n
                .iter()
                .map(|m| m * hypothesis.n() as f64)
                .collect()
        };
        for &k in &ks {
            for &eps in &config.eps {
                instances.push(Instance {
                    hypothesis: hypothesis.clone(),
                    k,
                    eps,
                });
            }
        }
    }
    let mut rows = Vec::new();
    if config.testers.is_empty() {
        return Ok(rows);
    }
    let mut row_index = 0u64;
    for inst in &instances {
        let prepared = prepare_instance(config, inst, base_dir, row_seed(config.seed, u64::MAX - row_index));
        for name in &config.testers {
            let seed = row_seed(config.seed, row_index);
            row_index += 1;
            let mut row = ResultRow {
                n: inst.hypothesis.n(),
                k: inst.k,
                eps: inst.eps,
                tester: name.clone(),
                type1: f64::NAN,
                type2: f64::NAN,
                max_err: f64::NAN,
                ci_halfwidth: f64::NAN,
                trials: config.trials,
                seed,
                adversary_distance: f64::NAN,
                chernoff_bound: f64::NAN,
                error: String::new(),
            };
            match &prepared {
                Err(e) => row.error = e.to_string(),
                Ok(p) => match run_row(config, inst, p, name, seed) {
                    Ok((est, dist)) => {
                        row.type1 = est.type1;
                        row.type2 = est.type2;
                        row.max_err = est.max_err();
                        row.ci_halfwidth = est.ci_halfwidth();
                        row.adversary_distance = dist;
                        row.chernoff_bound = p.model.delta_log.exp();
                    }
                    Err(e) => row.error = e.to_string(),
                },
            }
            rows.push(row);
        }
    }
    Ok(rows)
}

struct Prepared {
    model: OptimalTesterModel,
    alternatives: Vec<(AlternativeModel, f64)>,
}

fn prepare_instance(
    config: &ExperimentConfig,
    inst: &Instance,
    base_dir: Option<&Path>,
    seed: u64,
) -> Result<Prepared> {
    if config.mode == SampleMode::Fixed && inst.k.fract() != 0.0 {
        return Err(Error::Config(format!("fixed-k mode needs an integer k, got {}", inst.k)));
    }
    let model = optimize(&inst.hypothesis, inst.k, inst.eps, &OptimizerConfig::default())?;
    let adv = AdversaryModel::from_model(&model, config.eps_hi_ratio * inst.eps);
    let mut alternatives = match config.adversary {
        AdversarySource::Rounded => {
            let hq = hard_q_rounded(&adv);
            vec![(hq.alternative, hq.distance)]
        }
        AdversarySource::Conditional(count) => (0..count.max(1))
            .map(|i| {
                let r = sample_conditional(&adv, row_seed(seed, i as u64), 1_000_000)?;
                Ok((r.alternative, r.distance))
            })
            .collect::<Result<Vec<_>>>()?,
    };
    for shift in &config.mass_shifts {
        let alt = AlternativeModel::mass_shift(&inst.hypothesis, shift.class, shift.delta_over_eps * inst.eps)?;
        let d = l1_distance(&inst.hypothesis, &alt)?;
        alternatives.push((alt, d));
    }
    for path in &config.alternative_files {
        let alt = load_alternative(resolve(path, base_dir))?;
        let d = l1_distance(&inst.hypothesis, &alt)?;
        alternatives.push((alt, d));
    }
    for (alt, _) in &alternatives {
        l1_distance(&inst.hypothesis, alt)?;
    }
    Ok(Prepared {
        model,
        alternatives,
    })
}

fn run_row(
    config: &ExperimentConfig,
    inst: &Instance,
    prepared: &Prepared,
    name: &str,
    seed: u64,
) -> Result<(ErrorEstimate, f64)> {
    let tester = if name == "optimal" {
        build_optimal_tester(&prepared.model)
    } else {
        let b: Baseline = name.parse()?;
        let raw = baseline(b, &inst.hypothesis, inst.k);
        let alts: Vec<AlternativeModel> = prepared.alternatives.iter().map(|a| a.0.clone()).collect();
        let cal_trials = config.calibration_trials.unwrap_or(config.trials);
        calibrate_threshold_multi(
            &raw,
            &inst.hypothesis,
            inst.k,
            &alts,
            cal_trials,
            splitmix64(seed ^ 0xca11_b4a7),
            config.mode,
        )?
        .0
    };
    let mut worst: Option<(ErrorEstimate, f64)> = None;
    for (i, (alt, dist)) in prepared.alternatives.iter().enumerate() {
        let est = estimate_errors_at(
            &tester,
            &inst.hypothesis,
            alt,
            inst.k,
            config.trials,
            alternative_seed(seed, i),
            config.mode,
        )?;
        if worst.as_ref().is_none_or(|w| est.type2 > w.0.type2) {
            worst = Some((est, *dist));
        }
    }
    Ok(worst.expect("at least one alternative"))
}

/// CSV with one line per row, in the field order of [`ResultRow`].
pub fn write_csv<W: std::io::Write>(rows: &[ResultRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    if rows.is_empty() {
        w.write_record([
            "n",
            "k",
            "eps",
            "tester",
            "type1",
            "type2",
            "max_err",
            "ci_halfwidth",
            "trials",
            "seed",
            "adversary_distance",
            "chernoff_bound",
            "error",
        ])?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_rows(rows: &[ResultRow], path: &Path, format: OutputFormat) -> Result<()> {
    let file = std::fs::File::create(path)?;
    match format {
        OutputFormat::Csv => write_csv(rows, file),
        OutputFormat::Json => {
            serde_json::to_writer_pretty(file, rows)?;
            Ok(())
        }
    }
}

/// Verification options.
#[derive(Debug, Clone, Copy)]
pub struct VerifyOptions {
    pub grid_points: usize,
    pub tol: f64,
    /// Re-optimize the model's hypothesis subdivided this many times and compare exponents.
    pub scaling_factor: Option<usize>,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            grid_points: 2000,
            tol: 1e-6,
            scaling_factor: Some(2),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub limit: f64,
    pub passed: bool,
}

/// Machine-readable result of [`verify_suite`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub passed: bool,
    pub checks: Vec<Check>,
    pub stationarity: StationarityReport,
    pub certificate: Option<CertificateReport>,
}

impl VerifyReport {
    pub fn failed(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

fn below(name: &str, value: f64, limit: f64) -> Check {
    Check {
        name: name.into(),
        value,
        limit,
        passed: value.abs() < limit,
    }
}

/// Run every optimality check on a model. Failures are report content, not errors.
pub fn verify_suite(model: &OptimalTesterModel, opts: &VerifyOptions) -> Result<VerifyReport> {
    let cfg = OptimizerConfig::default();
    let st = stationarity_report(model, &cfg, opts.grid_points)?;
    let mut checks = vec![
        below("alpha_identity", st.alpha_residual, opts.tol),
        below("u_stationarity", st.u_residual, 1e-5),
        below("tangency", st.tangency_max_violation, 1e-8),
        Check {
            name: "kappa_convexity".into(),
            value: st.kappa_min_second_difference,
            limit: -1e-12,
            passed: st.kappa_min_second_difference >= -1e-12,
        },
        below("s_derivative_at_zero", st.s_derivative_at_zero, opts.tol),
    ];
    for (j, r) in st.q_residuals.iter().enumerate() {
        checks.push(below(&format!("q_stationarity[{j}]"), *r, opts.tol));
    }
    checks.push(below(
        "type1_exponent",
        model.type1_exponent(1.0 - model.u) - model.delta_log,
        1e-8,
    ));
    checks.push(below(
        "type2_exponent",
        model.type2_exponent_tilted(-model.u) - model.delta_log,
        1e-8,
    ));
    checks.push(Check {
        name: "delta_negative".into(),
        value: model.delta_log,
        limit: 0.0,
        passed: model.delta_log < 0.0,
    });

    let adv = AdversaryModel::with_default_window(model);
    checks.push(below("tilted_distance", adv.tilted_distance() / model.eps - 1.0, opts.tol));
    let certificate = match certificate_check(&adv, model, opts.tol) {
        Ok(rep) => {
            checks.push(below("certificate", rep.difference, opts.tol));
            checks.push(below("certificate_s_derivative", rep.s_derivative, opts.tol));
            checks.push(Check {
                name: "certificate_u_probe".into(),
                value: rep.u_probe_increase,
                limit: 0.0,
                passed: rep.u_probe_increase >= -opts.tol,
            });
            Some(rep)
        }
        Err(Error::CertificateMismatch { diff, .. }) => {
            checks.push(below("certificate", diff, opts.tol));
            None
        }
        Err(e) => return Err(e),
    };

    if let Some(s) = opts.scaling_factor.filter(|&s| s > 1) {
        let hyp = model.hypothesis()?;
        let sub = optimize(&hyp.subdivide(s), model.k * s as f64, model.eps, &cfg)?;
        let expect = s as f64 * model.delta_log;
        checks.push(below(
            &format!("subdivision_scaling[{s}]"),
            (sub.delta_log - expect) / expect,
            opts.tol,
        ));
    }

    Ok(VerifyReport {
        passed: checks.iter().all(|c| c.passed),
        checks,
        stationarity: st,
        certificate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testers::calibrate_threshold;

    #[test]
    fn wilson_contains_point_estimate() {
        let (lo, hi) = wilson_interval(30, 100);
        assert!(lo < 0.3 && 0.3 < hi);
        let (lo, hi) = wilson_interval(0, 100);
        assert!(lo < 1e-12);
        assert!(hi > 0.0 && hi < 0.05);
        // reference value for 50/100
        let (lo, hi) = wilson_interval(50, 100);
        assert!((lo - 0.403_831).abs() < 1e-5 && (hi - 0.596_169).abs() < 1e-5);
    }

    #[test]
    fn wilson_covers_known_bernoulli() {
        use rand::Rng;
        let p = 0.2;
        let mut covered = 0;
        for run in 0..100u64 {
            let mut rng = trial_rng(99, 0, run);
            let hits = (0..1000).filter(|_| rng.random::<f64>() < p).count();
            let (lo, hi) = wilson_interval(hits, 1000);
            if lo <= p && p <= hi {
                covered += 1;
            }
        }
        assert!(covered >= 90, "{covered}");
    }

    #[test]
    fn trial_streams_differ() {
        use rand::Rng;
        let a: u64 = trial_rng(1, 0, 0).random();
        let b: u64 = trial_rng(1, 1, 0).random();
        let c: u64 = trial_rng(1, 0, 1).random();
        let a2: u64 = trial_rng(1, 0, 0).random();
        assert_eq!(a, a2);
        assert!(a != b && a != c && b != c);
    }

    #[test]
    fn statistics_do_not_depend_on_threads() {
        let p = HypothesisModel::uniform(5);
        let t = baseline(Baseline::Chisq, &p, 5.0);
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| sample_statistics(&t, &p, 5.0, 2000, 7, 0, SampleMode::Poisson));
        let b = four.install(|| sample_statistics(&t, &p, 5.0, 2000, 7, 0, SampleMode::Poisson));
        assert_eq!(a, b);
    }

    #[test]
    fn indistinguishable_alternative_has_large_error() {
        let p = HypothesisModel::uniform(6);
        let alt = AlternativeModel::from_hypothesis(&p);
        let t = baseline(Baseline::Chisq, &p, 6.0);
        let (cal, _) = calibrate_threshold(&t, &p, 6.0, &alt, 4000, 3, SampleMode::Poisson).unwrap();
        let est = estimate_errors(&cal, &p, &alt, 4000, 11, SampleMode::Poisson).unwrap();
        assert!(est.max_err() >= 0.5 - 3.0 * est.ci_halfwidth(), "{est:?}");
    }

    #[test]
    fn estimates_agree_across_trial_counts() {
        let p = HypothesisModel::uniform(4);
        let mut alt = AlternativeModel::from_hypothesis(&p);
        alt.classes[0].probs = vec![0.4, 0.4, 0.1, 0.1];
        let t = baseline(Baseline::Collisions, &p, 4.0).with_threshold(1.5, crate::testers::Direction::Ge);
        let a = estimate_errors(&t, &p, &alt, 1000, 5, SampleMode::Poisson).unwrap();
        let b = estimate_errors(&t, &p, &alt, 100_000, 5, SampleMode::Poisson).unwrap();
        assert!((a.type1 - b.type1).abs() <= a.ci1 + b.ci1);
        assert!((a.type2 - b.type2).abs() <= a.ci2 + b.ci2);
    }

    #[test]
    fn config_validation() {
        let text = r#"{"hypotheses":["uniform:4"],"k":[4],"eps":[0.9],"testers":["optimal","nope"],"trials":1000,"seed":1}"#;
        let cfg: ExperimentConfig = serde_json::from_str(text).unwrap();
        assert!(matches!(cfg.validate(), Err(Error::UnknownBaseline(_))));
        let text = r#"{"hypotheses":["uniform:4"],"k":[4],"eps":[0.9],"testers":[],"trials":10,"seed":1}"#;
        let cfg: ExperimentConfig = serde_json::from_str(text).unwrap();
        assert!(cfg.validate().is_err());
        let text = r#"{"hypotheses":["uniform:4"],"k":[4],"eps":[0.9],"testers":[],"trials":1000,"seed":1,
            "adversary":{"conditional":3}}"#;
        let cfg: ExperimentConfig = serde_json::from_str(text).unwrap();
        assert_eq!(cfg.adversary, AdversarySource::Conditional(3));
        assert!(run_sweep(&cfg, None).unwrap().is_empty());
    }
}
