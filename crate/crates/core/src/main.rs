use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use otest::adversary::{hard_q_rounded, sample_conditional, AdversaryModel};
use otest::harness::{
    estimate_errors_at, run_sweep, verify_suite, write_rows, ErrorEstimate, ExperimentConfig,
    OutputFormat, SampleMode, VerifyOptions,
};
use otest::hypothesis::AlternativeModel;
use otest::io::{load_alternative, load_hypothesis, load_model, read_json, save_model, write_json};
use otest::optimizer::{optimize, OptimizerConfig};
use otest::oracle::{
    exact_fixed_k_error, exact_poissonized_error, exact_poissonized_error_auto, poisson_rates, Side,
    DEFAULT_SLACK_BUDGET,
};
use otest::testers::{baseline, build_optimal_tester, calibrate_threshold, Baseline};
use otest::{Error, Result};

/// Instance-optimal identity tester.
#[derive(Parser)]
#[command(name = "otest", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve for the optimal tester and write the model plus its verification report.
    Optimize {
        /// Hypothesis file, or `uniform:N` / `heavy:N`.
        #[arg(long)]
        hypothesis: String,
        #[arg(long)]
        k: f64,
        #[arg(long)]
        eps: f64,
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
        #[arg(long, default_value = "model.json")]
        out: PathBuf,
    },
    /// Re-run every optimality check on a saved model.
    Verify {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 2000)]
        grid_points: usize,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
    },
    /// Monte-Carlo error rates of the optimal tester.
    Simulate {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        target: Target,
        /// `rounded`, or `conditional N`.
        #[arg(long, num_args = 1..=2, value_names = ["KIND", "N"])]
        adversary: Option<Vec<String>>,
        #[arg(long)]
        trials: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value = "poisson")]
        mode: SampleMode,
        #[arg(long, default_value = "json")]
        format: OutputFormat,
    },
    /// Calibrate a classic tester against an alternative.
    Baseline {
        #[arg(long)]
        name: Baseline,
        #[arg(long)]
        hypothesis: String,
        #[arg(long)]
        k: f64,
        #[arg(long)]
        calibrate_trials: usize,
        #[arg(long)]
        alt: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value = "poisson")]
        mode: SampleMode,
        /// Write the calibrated tester here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Adversary utilities.
    #[command(subcommand)]
    Adversary(AdversaryCommand),
    /// Exact error of the optimal tester.
    Exact {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        target: Target,
        /// Fixed grid width; refined automatically to a 1e-4 bracket when omitted.
        #[arg(long)]
        grid: Option<f64>,
        #[arg(long, default_value = "poisson")]
        mode: SampleMode,
    },
    /// Run a parameter sweep described by a JSON config.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's output path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum AdversaryCommand {
    /// Draw alternatives from the coin process conditioned on the distance window.
    Sample {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        eps_hi: f64,
        #[arg(long)]
        count: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
#[group(multiple = false)]
struct Target {
    /// Evaluate under the hypothesis (type-I error).
    #[arg(long)]
    null: bool,
    /// Evaluate under this alternative (type-II error).
    #[arg(long)]
    alt: Option<PathBuf>,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn verify_path(out: &Path) -> PathBuf {
    out.with_extension("verify.json")
}

#[derive(Serialize)]
struct SimulationRow {
    side: &'static str,
    alternative: String,
    #[serde(flatten)]
    estimate: ErrorEstimate,
    distance: Option<f64>,
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Optimize {
            hypothesis,
            k,
            eps,
            tol,
            out,
        } => {
            let p = load_hypothesis(&hypothesis)?;
            let cfg = OptimizerConfig {
                tol,
                ..OptimizerConfig::default()
            };
            let model = optimize(&p, k, eps, &cfg)?;
            save_model(&out, &model)?;
            let report = verify_suite(
                &model,
                &VerifyOptions {
                    scaling_factor: None,
                    ..VerifyOptions::default()
                },
            )?;
            write_json(verify_path(&out), &report)?;
            println!(
                "delta_log = {:.12}  (error bound {:.6})  alpha = {:.8}  u = {:.8}  verify: {}",
                model.delta_log,
                model.delta_log.exp(),
                model.alpha,
                model.u,
                if report.passed { "passed" } else { "FAILED" }
            );
            Ok(0)
        }
        Command::Verify {
            model,
            grid_points,
            tol,
        } => {
            let model = load_model(&model)?;
            let report = verify_suite(
                &model,
                &VerifyOptions {
                    grid_points,
                    tol,
                    scaling_factor: Some(2),
                },
            )?;
            print_json(&report)?;
            Ok(if report.passed { 0 } else { 3 })
        }
        Command::Simulate {
            model,
            target,
            adversary,
            trials,
            seed,
            mode,
            format,
        } => {
            let model = load_model(&model)?;
            let p = model.hypothesis()?;
            let tester = build_optimal_tester(&model);
            let mut targets: Vec<(&'static str, String, AlternativeModel, Option<f64>)> = Vec::new();
            if target.null {
                targets.push(("type1", "hypothesis".into(), AlternativeModel::from_hypothesis(&p), None));
            } else if let Some(path) = &target.alt {
                targets.push(("type2", path.display().to_string(), load_alternative(path)?, None));
            } else if let Some(spec) = &adversary {
                let adv = AdversaryModel::with_default_window(&model);
                match spec.first().map(String::as_str) {
                    Some("rounded") => {
                        let hq = hard_q_rounded(&adv);
                        targets.push(("type2", "rounded".into(), hq.alternative, Some(hq.distance)));
                    }
                    Some("conditional") => {
                        let count: usize = spec
                            .get(1)
                            .ok_or_else(|| Error::Config("conditional needs a count".into()))?
                            .parse()
                            .map_err(|_| Error::Config("bad conditional count".into()))?;
                        for i in 0..count {
                            let r = sample_conditional(&adv, seed.wrapping_add(i as u64), 1_000_000)?;
                            targets.push(("type2", format!("conditional[{i}]"), r.alternative, Some(r.distance)));
                        }
                    }
                    _ => return Err(Error::Config("adversary must be `rounded` or `conditional N`".into())),
                }
            } else {
                return Err(Error::Config("give --null, --alt FILE or --adversary".into()));
            }
            let mut rows = Vec::new();
            for (side, name, alt, distance) in targets {
                let est = estimate_errors_at(&tester, &p, &alt, model.k, trials, seed, mode)?;
                rows.push(SimulationRow {
                    side,
                    alternative: name,
                    estimate: est,
                    distance,
                });
            }
            match format {
                OutputFormat::Json => print_json(&rows)?,
                OutputFormat::Csv => {
                    println!("side,alternative,rate,ci_halfwidth,trials,distance");
                    for r in &rows {
                        let (rate, ci) = if r.side == "type1" {
                            (r.estimate.type1, r.estimate.ci1)
                        } else {
                            (r.estimate.type2, r.estimate.ci2)
                        };
                        println!(
                            "{},{},{},{},{},{}",
                            r.side,
                            r.alternative,
                            rate,
                            ci,
                            r.estimate.trials,
                            r.distance.map(|d| d.to_string()).unwrap_or_default()
                        );
                    }
                }
            }
            Ok(0)
        }
        Command::Baseline {
            name,
            hypothesis,
            k,
            calibrate_trials,
            alt,
            seed,
            mode,
            out,
        } => {
            let p = load_hypothesis(&hypothesis)?;
            let alt = load_alternative(&alt)?;
            let t = baseline(name, &p, k);
            let (cal_t, cal) = calibrate_threshold(&t, &p, k, &alt, calibrate_trials, seed, mode)?;
            if let Some(path) = out {
                write_json(path, &cal_t.to_file())?;
            }
            print_json(&cal)?;
            Ok(0)
        }
        Command::Adversary(AdversaryCommand::Sample {
            model,
            eps_hi,
            count,
            seed,
            out,
        }) => {
            let model = load_model(&model)?;
            let adv = AdversaryModel::from_model(&model, eps_hi);
            let draws = (0..count)
                .map(|i| sample_conditional(&adv, seed.wrapping_add(i as u64), 1_000_000))
                .collect::<Result<Vec<_>>>()?;
            match out {
                Some(path) => write_json(path, &draws)?,
                None => print_json(&draws)?,
            }
            Ok(0)
        }
        Command::Exact {
            model,
            target,
            grid,
            mode,
        } => {
            let model = load_model(&model)?;
            let p = model.hypothesis()?;
            let tester = build_optimal_tester(&model);
            let (side, source) = if let Some(path) = &target.alt {
                (Side::Type2, load_alternative(path)?)
            } else {
                (Side::Type1, AlternativeModel::from_hypothesis(&p))
            };
            match mode {
                SampleMode::Poisson => {
                    let rates = poisson_rates(&source, model.k);
                    let reject = match grid {
                        Some(w) => exact_poissonized_error(&tester, &rates, w, 1e-14)?,
                        None => exact_poissonized_error_auto(&tester, &rates, DEFAULT_SLACK_BUDGET)?,
                    };
                    let bracket = match side {
                        Side::Type1 => reject,
                        Side::Type2 => reject.complement(),
                    };
                    print_json(&bracket)?;
                }
                SampleMode::Fixed => {
                    if model.k.fract() != 0.0 {
                        return Err(Error::Config("fixed mode needs an integer k".into()));
                    }
                    let e = exact_fixed_k_error(&tester, &source, model.k as u64, side)?;
                    print_json(&serde_json::json!({ "side": side, "probability": e }))?;
                }
            }
            Ok(0)
        }
        Command::Sweep { config, out } => {
            let cfg: ExperimentConfig = read_json(&config)?;
            let rows = run_sweep(&cfg, config.parent())?;
            match out.or(cfg.output.clone()) {
                Some(path) => write_rows(&rows, &path, cfg.format)?,
                None => match cfg.format {
                    OutputFormat::Csv => otest::harness::write_csv(&rows, std::io::stdout())?,
                    OutputFormat::Json => print_json(&rows)?,
                },
            }
            let failed = rows.iter().filter(|r| !r.error.is_empty()).count();
            if failed > 0 {
                eprintln!("{failed} of {} rows failed; see the error column", rows.len());
            }
            Ok(0)
        }
    }
}
