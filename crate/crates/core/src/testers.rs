//! Semilinear testers: a per-class coefficient table summed over elements and
//! compared against a threshold.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::{sample_statistics, SampleMode};
use crate::hypothesis::{AlternativeModel, HypothesisModel, SampleHistogram};
use crate::numerics::default_plan;
use crate::optimizer::{kappa, OptimalTesterModel, TwoPoint};

/// Which side of the threshold rejects the hypothesis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Reject when the statistic is at least the threshold.
    Ge,
    /// Reject when the statistic is at most the threshold.
    Le,
}

impl Direction {
    pub fn flip(self) -> Self {
        match self {
            Direction::Ge => Direction::Le,
            Direction::Le => Direction::Ge,
        }
    }
}

/// Classic statistics used for comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Baseline {
    Chisq,
    Tv,
    Collisions,
    Singletons,
}

impl Baseline {
    pub const ALL: [Baseline; 4] = [
        Baseline::Chisq,
        Baseline::Tv,
        Baseline::Collisions,
        Baseline::Singletons,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Baseline::Chisq => "chisq",
            Baseline::Tv => "tv",
            Baseline::Collisions => "collisions",
            Baseline::Singletons => "singletons",
        }
    }

    /// Coefficient for an element of probability `y` seen `i` times out of `k` expected draws.
    pub fn coefficient(self, i: u64, y: f64, k: f64) -> f64 {
        let i = i as f64;
        match self {
            Baseline::Chisq => (i - k * y).powi(2) / y,
            Baseline::Tv => (i - k * y).abs(),
            Baseline::Collisions => i * (i - 1.0) / 2.0,
            Baseline::Singletons => {
                if i == 1.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn default_direction(self) -> Direction {
        match self {
            Baseline::Singletons => Direction::Le,
            _ => Direction::Ge,
        }
    }
}

impl fmt::Display for Baseline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Baseline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "chisq" => Ok(Baseline::Chisq),
            "tv" => Ok(Baseline::Tv),
            "collisions" => Ok(Baseline::Collisions),
            "singletons" => Ok(Baseline::Singletons),
            other => Err(Error::UnknownBaseline(other.to_string())),
        }
    }
}

/// How coefficients beyond the table are produced. Counts are never clamped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Extension {
    /// `κ(i) + shift` for the stored two-point alternative.
    Analytic {
        point: TwoPoint,
        k: f64,
        shift: f64,
        /// Multiplier applied after evaluation (1 unless the tester was rescaled).
        scale: f64,
    },
    /// Closed-form baseline coefficient, times `scale`.
    Formula { baseline: Baseline, k: f64, scale: f64 },
    /// Every count past the table gets this value.
    Constant(f64),
}

/// One class's coefficient column.
#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub y: f64,
    pub count: usize,
    pub table: Vec<f64>,
    pub extension: Extension,
}

impl Column {
    pub fn coefficient(&self, i: u64) -> f64 {
        if let Some(&c) = self.table.get(i as usize) {
            return c;
        }
        self.extend(i)
    }

    fn extend(&self, i: u64) -> f64 {
        match self.extension {
            Extension::Analytic {
                point,
                k,
                shift,
                scale,
            } => scale * (kappa(self.y, point, k, i) + shift),
            Extension::Formula { baseline, k, scale } => scale * baseline.coefficient(i, self.y, k),
            Extension::Constant(c) => c,
        }
    }
}

/// A semilinear threshold tester bound to a hypothesis' class structure.
#[derive(Debug, Clone, PartialEq)]
pub struct SemilinearTester {
    pub name: String,
    pub columns: Vec<Column>,
    pub threshold: f64,
    pub direction: Direction,
}

/// Statistic and decision for one histogram.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub statistic: f64,
    pub reject: bool,
}

impl SemilinearTester {
    /// Tester with explicit tables; counts past a table take `extension`.
    pub fn tabular(
        name: impl Into<String>,
        hypothesis: &HypothesisModel,
        tables: Vec<Vec<f64>>,
        extension: Extension,
        threshold: f64,
        direction: Direction,
    ) -> Result<Self> {
        if tables.len() != hypothesis.classes().len() {
            return Err(Error::Misaligned(format!(
                "{} coefficient columns for {} classes",
                tables.len(),
                hypothesis.classes().len()
            )));
        }
        let columns = hypothesis
            .classes()
            .iter()
            .zip(tables)
            .map(|(c, table)| Column {
                y: c.y,
                count: c.count,
                table,
                extension,
            })
            .collect();
        Ok(Self {
            name: name.into(),
            columns,
            threshold,
            direction,
        })
    }

    pub fn n(&self) -> usize {
        self.columns.iter().map(|c| c.count).sum()
    }

    pub fn check_aligned(&self, hist: &SampleHistogram) -> Result<()> {
        if hist.counts.len() != self.columns.len() {
            return Err(Error::Misaligned(format!(
                "histogram has {} classes, tester has {}",
                hist.counts.len(),
                self.columns.len()
            )));
        }
        for (j, (col, counts)) in self.columns.iter().zip(&hist.counts).enumerate() {
            if counts.len() != col.count {
                return Err(Error::Misaligned(format!(
                    "class {j}: {} counts for {} elements",
                    counts.len(),
                    col.count
                )));
            }
        }
        Ok(())
    }

    /// `Σ_e c_{count(e), class(e)}`.
    pub fn statistic(&self, hist: &SampleHistogram) -> Result<f64> {
        self.check_aligned(hist)?;
        Ok(self.statistic_unchecked(hist))
    }

    pub(crate) fn statistic_unchecked(&self, hist: &SampleHistogram) -> f64 {
        self.columns
            .iter()
            .zip(&hist.counts)
            .map(|(col, counts)| counts.iter().map(|&i| col.coefficient(i)).sum::<f64>())
            .sum()
    }

    /// `Σ_{i,j} c_{i,j} F_{i,j}` computed from the fingerprint.
    pub fn fingerprint_statistic(&self, hist: &SampleHistogram) -> Result<f64> {
        self.check_aligned(hist)?;
        Ok(hist
            .fingerprint()
            .iter()
            .zip(&self.columns)
            .map(|(fp, col)| {
                fp.iter()
                    .map(|(&i, &f)| f as f64 * col.coefficient(i))
                    .sum::<f64>()
            })
            .sum())
    }

    /// Rejection rule; a statistic equal to the threshold rejects.
    pub fn rejects(&self, statistic: f64) -> bool {
        match self.direction {
            Direction::Ge => statistic >= self.threshold,
            Direction::Le => statistic <= self.threshold,
        }
    }

    pub fn decide(&self, hist: &SampleHistogram) -> Result<Verdict> {
        let statistic = self.statistic(hist)?;
        Ok(Verdict {
            statistic,
            reject: self.rejects(statistic),
        })
    }

    /// Multiply every coefficient and the threshold by `lambda`.
    pub fn scaled(&self, lambda: f64) -> Self {
        let mut t = self.clone();
        for col in t.columns.iter_mut() {
            for c in col.table.iter_mut() {
                *c *= lambda;
            }
            col.extension = match col.extension {
                Extension::Analytic {
                    point,
                    k,
                    shift,
                    scale,
                } => Extension::Analytic {
                    point,
                    k,
                    shift,
                    scale: scale * lambda,
                },
                Extension::Formula { baseline, k, scale } => Extension::Formula {
                    baseline,
                    k,
                    scale: scale * lambda,
                },
                Extension::Constant(c) => Extension::Constant(c * lambda),
            };
        }
        t.threshold *= lambda;
        t
    }

    pub fn with_threshold(mut self, threshold: f64, direction: Direction) -> Self {
        self.threshold = threshold;
        self.direction = direction;
        self
    }
}

/// Optimal tester: `c_{i,j} = κ_{i,j} + s`, threshold 0, reject when the sum is nonnegative.
pub fn build_optimal_tester(model: &OptimalTesterModel) -> SemilinearTester {
    let i_max = model.truncation.i_max as u64;
    let columns = model
        .classes
        .iter()
        .map(|c| {
            let point = c.two_point();
            Column {
                y: c.y,
                count: c.count,
                table: (0..=i_max)
                    .map(|i| kappa(c.y, point, model.k, i) + model.shift)
                    .collect(),
                extension: Extension::Analytic {
                    point,
                    k: model.k,
                    shift: model.shift,
                    scale: 1.0,
                },
            }
        })
        .collect();
    SemilinearTester {
        name: "optimal".into(),
        columns,
        threshold: 0.0,
        direction: Direction::Ge,
    }
}

/// Uncalibrated baseline tester (threshold 0 in its default direction).
pub fn baseline(name: Baseline, hypothesis: &HypothesisModel, k: f64) -> SemilinearTester {
    let max_y = hypothesis.classes().iter().map(|c| c.y).fold(0.0, f64::max);
    let i_max = default_plan(k * max_y).i_max as u64;
    let columns = hypothesis
        .classes()
        .iter()
        .map(|c| Column {
            y: c.y,
            count: c.count,
            table: (0..=i_max).map(|i| name.coefficient(i, c.y, k)).collect(),
            extension: Extension::Formula {
                baseline: name,
                k,
                scale: 1.0,
            },
        })
        .collect();
    SemilinearTester {
        name: name.name().into(),
        columns,
        threshold: 0.0,
        direction: name.default_direction(),
    }
}

/// Empirical errors at the chosen cut.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub threshold: f64,
    pub direction: Direction,
    pub type1: f64,
    pub type2: f64,
}

impl Calibration {
    pub fn max_err(&self) -> f64 {
        self.type1.max(self.type2)
    }
}

/// Empirical error rates of the rule `(threshold, direction)` on sorted statistics.
pub fn empirical_errors(null_sorted: &[f64], alt_sorted: &[f64], threshold: f64, direction: Direction) -> (f64, f64) {
    let n0 = null_sorted.len().max(1) as f64;
    let n1 = alt_sorted.len().max(1) as f64;
    let below = |v: &[f64]| v.partition_point(|&s| s < threshold);
    let at_most = |v: &[f64]| v.partition_point(|&s| s <= threshold);
    match direction {
        Direction::Ge => (
            (null_sorted.len() - below(null_sorted)) as f64 / n0,
            below(alt_sorted) as f64 / n1,
        ),
        Direction::Le => (
            at_most(null_sorted) as f64 / n0,
            (alt_sorted.len() - at_most(alt_sorted)) as f64 / n1,
        ),
    }
}

/// Best cut between sorted observed statistics, in both directions.
///
/// `current` is always a candidate, so the result never does worse than it.
pub fn best_cut(null_stats: &[f64], alt_stats: &[f64], current: (f64, Direction)) -> Calibration {
    best_cut_multi(null_stats, &[alt_stats.to_vec()], current)
}

/// Cut minimizing `max(type I, worst type II over the alternatives)`.
pub fn best_cut_multi(null_stats: &[f64], alt_stats: &[Vec<f64>], current: (f64, Direction)) -> Calibration {
    let mut null_sorted = null_stats.to_vec();
    null_sorted.sort_by(f64::total_cmp);
    let alt_sorted: Vec<Vec<f64>> = alt_stats
        .iter()
        .map(|a| {
            let mut a = a.clone();
            a.sort_by(f64::total_cmp);
            a
        })
        .collect();
    let mut pooled: Vec<f64> = null_sorted.iter().chain(alt_sorted.iter().flatten()).copied().collect();
    pooled.sort_by(f64::total_cmp);
    pooled.dedup();
    let mut candidates = Vec::with_capacity(pooled.len() + 1);
    if let (Some(&lo), Some(&hi)) = (pooled.first(), pooled.last()) {
        candidates.push(lo - 1.0);
        candidates.push(hi + 1.0);
    }
    candidates.extend(pooled.windows(2).map(|w| 0.5 * (w[0] + w[1])));

    let errors = |t: f64, dir: Direction| {
        let mut e1 = 0.0;
        let mut e2: f64 = 0.0;
        for a in &alt_sorted {
            let (x, y) = empirical_errors(&null_sorted, a, t, dir);
            e1 = x;
            e2 = e2.max(y);
        }
        if alt_sorted.is_empty() {
            e1 = empirical_errors(&null_sorted, &[], t, dir).0;
        }
        (e1, e2)
    };
    let (t0, d0) = current;
    let (e1, e2) = errors(t0, d0);
    let mut best = Calibration {
        threshold: t0,
        direction: d0,
        type1: e1,
        type2: e2,
    };
    for dir in [Direction::Ge, Direction::Le] {
        for &t in &candidates {
            let (e1, e2) = errors(t, dir);
            if e1.max(e2) < best.max_err() {
                best = Calibration {
                    threshold: t,
                    direction: dir,
                    type1: e1,
                    type2: e2,
                };
            }
        }
    }
    best
}

/// Choose the threshold and direction minimizing the larger empirical error.
pub fn calibrate_threshold(
    tester: &SemilinearTester,
    hypothesis: &HypothesisModel,
    k: f64,
    alternative: &AlternativeModel,
    trials: usize,
    seed: u64,
    mode: SampleMode,
) -> Result<(SemilinearTester, Calibration)> {
    calibrate_threshold_multi(tester, hypothesis, k, std::slice::from_ref(alternative), trials, seed, mode)
}

/// One threshold for several alternatives at once: minimizes type I against the
/// worst type II over `alternatives`. A tester does not know which alternative
/// it faces, so this is the honest calibration when there are several.
pub fn calibrate_threshold_multi(
    tester: &SemilinearTester,
    hypothesis: &HypothesisModel,
    k: f64,
    alternatives: &[AlternativeModel],
    trials: usize,
    seed: u64,
    mode: SampleMode,
) -> Result<(SemilinearTester, Calibration)> {
    if trials < 1000 {
        return Err(Error::Config(format!(
            "calibration needs at least 1000 trials, got {trials}"
        )));
    }
    if alternatives.is_empty() {
        return Err(Error::Config("calibration needs at least one alternative".into()));
    }
    for alt in alternatives {
        alt.check_aligned(hypothesis)?;
    }
    let null = sample_statistics(tester, hypothesis, k, trials, seed, 0, mode);
    let alts: Vec<Vec<f64>> = alternatives
        .iter()
        .enumerate()
        .map(|(i, alt)| sample_statistics(tester, alt, k, trials, alternative_seed(seed, i), 1, mode))
        .collect();
    let cal = best_cut_multi(&null, &alts, (tester.threshold, tester.direction));
    Ok((tester.clone().with_threshold(cal.threshold, cal.direction), cal))
}

/// Seed for the `i`-th alternative; the first keeps the base seed.
pub fn alternative_seed(seed: u64, i: usize) -> u64 {
    if i == 0 {
        seed
    } else {
        seed.wrapping_add((i as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15))
    }
}

/// JSON export layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TesterFile {
    pub threshold: f64,
    pub direction: Direction,
    pub classes: Vec<TesterColumnFile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TesterColumnFile {
    pub y: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<usize>,
    pub coeffs: Vec<f64>,
    /// `"analytic"`, `"formula:<name>"` or `"constant:<value>"`.
    pub ext: String,
    /// Parameters needed to evaluate an analytic column past its table.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub analytic: Option<AnalyticParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalyticParams {
    pub q: f64,
    pub x1: f64,
    pub x2: f64,
    pub k: f64,
    pub shift: f64,
    #[serde(default = "one")]
    pub scale: f64,
}

fn one() -> f64 {
    1.0
}

impl SemilinearTester {
    pub fn to_file(&self) -> TesterFile {
        TesterFile {
            threshold: self.threshold,
            direction: self.direction,
            classes: self
                .columns
                .iter()
                .map(|col| {
                    let (ext, analytic, k) = match col.extension {
                        Extension::Analytic {
                            point,
                            k,
                            shift,
                            scale,
                        } => (
                            "analytic".to_string(),
                            Some(AnalyticParams {
                                q: point.q,
                                x1: point.x1,
                                x2: point.x2,
                                k,
                                shift,
                                scale,
                            }),
                            None,
                        ),
                        Extension::Formula { baseline, k, .. } => {
                            (format!("formula:{}", baseline.name()), None, Some(k))
                        }
                        Extension::Constant(c) => (format!("constant:{c}"), None, None),
                    };
                    TesterColumnFile {
                        y: col.y,
                        count: Some(col.count),
                        coeffs: col.table.clone(),
                        ext,
                        analytic,
                        k,
                    }
                })
                .collect(),
        }
    }

    /// Rebuild a tester from its export, aligning columns with `hypothesis`.
    pub fn from_file(name: &str, file: &TesterFile, hypothesis: &HypothesisModel) -> Result<Self> {
        if file.classes.len() != hypothesis.classes().len() {
            return Err(Error::Misaligned(format!(
                "tester has {} columns, hypothesis has {} classes",
                file.classes.len(),
                hypothesis.classes().len()
            )));
        }
        let mut columns = Vec::with_capacity(file.classes.len());
        for (col, class) in file.classes.iter().zip(hypothesis.classes()) {
            if (col.y - class.y).abs() > 1e-12 * class.y {
                return Err(Error::Misaligned(format!(
                    "tester column y = {} does not match class y = {}",
                    col.y, class.y
                )));
            }
            let extension = if col.ext == "analytic" {
                let a = col.analytic.ok_or_else(|| {
                    Error::Config("analytic column without analytic parameters".into())
                })?;
                Extension::Analytic {
                    point: TwoPoint {
                        q: a.q,
                        x1: a.x1,
                        x2: a.x2,
                    },
                    k: a.k,
                    shift: a.shift,
                    scale: a.scale,
                }
            } else if let Some(name) = col.ext.strip_prefix("formula:") {
                let baseline: Baseline = name.parse()?;
                let k = col
                    .k
                    .ok_or_else(|| Error::Config("formula column without k".into()))?;
                // recover any rescaling from the first nonzero entry
                let scale = col
                    .coeffs
                    .iter()
                    .enumerate()
                    .find_map(|(i, &c)| {
                        let base = baseline.coefficient(i as u64, col.y, k);
                        (base != 0.0).then(|| c / base)
                    })
                    .unwrap_or(1.0);
                Extension::Formula { baseline, k, scale }
            } else if let Some(v) = col.ext.strip_prefix("constant:") {
                Extension::Constant(
                    v.parse()
                        .map_err(|_| Error::Config(format!("bad constant extension `{v}`")))?,
                )
            } else {
                return Err(Error::Config(format!("unknown extension rule `{}`", col.ext)));
            };
            columns.push(Column {
                y: class.y,
                count: class.count,
                table: col.coeffs.clone(),
                extension,
            });
        }
        Ok(Self {
            name: name.to_string(),
            columns,
            threshold: file.threshold,
            direction: file.direction,
        })
    }
}
