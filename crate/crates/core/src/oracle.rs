//! Exact error probabilities for semilinear testers.
//!
//! Poissonized errors come from a convolution of per-element value
//! distributions on a grid, run once with values rounded down and once rounded
//! up, which brackets the true probability. Fixed-`k` errors come from
//! enumerating every histogram, grouped so that interchangeable elements are
//! visited once.

use serde::{Deserialize, Serialize};

use crate::adversary::AdversaryModel;
use crate::error::{Error, Result};
use crate::hypothesis::ElementSource;
use crate::numerics::{ln_factorial, ln_poi, log_upper_tail, truncation_index, DEFAULT_TAIL_TOL};
use crate::optimizer::OptimalTesterModel;
use crate::testers::{build_optimal_tester, Direction, SemilinearTester};

/// Largest dense support the convolution may allocate.
pub const MAX_SUPPORT: usize = 1 << 24;
/// Enumeration limit for [`exact_fixed_k_error`].
pub const MAX_HISTOGRAMS: f64 = 1e7;
/// Enumeration limit for [`np_exact_error_tiny`].
pub const MAX_NP_HISTOGRAMS: f64 = 1e6;
pub const MAX_NP_ELEMENTS: usize = 12;
/// Slack budget used by [`exact_poissonized_error_auto`] callers by default.
pub const DEFAULT_SLACK_BUDGET: f64 = 1e-4;

/// Guaranteed interval for a probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorBracket {
    pub lower: f64,
    pub upper: f64,
    /// Width caused by rounding coefficients to the grid.
    pub discretization_slack: f64,
    /// Probability mass of counts beyond each element's truncation point.
    pub truncation_slack: f64,
    pub grid_width: f64,
}

impl ErrorBracket {
    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lower + self.upper)
    }

    /// Whether `p` lies within the bracket widened by `margin` on both sides.
    pub fn contains(&self, p: f64, margin: f64) -> bool {
        p >= self.lower - margin && p <= self.upper + margin
    }

    /// Bracket for the complementary event.
    pub fn complement(&self) -> Self {
        Self {
            lower: 1.0 - self.upper,
            upper: 1.0 - self.lower,
            ..*self
        }
    }
}

/// Per-element Poisson rates `k·p` for a source.
pub fn poisson_rates(source: &impl ElementSource, k: f64) -> Vec<Vec<f64>> {
    source
        .element_probabilities()
        .into_iter()
        .map(|class| class.into_iter().map(|p| k * p).collect())
        .collect()
}

#[derive(Clone)]
struct Element {
    /// Signed coefficient and probability for each count up to truncation.
    values: Vec<(f64, f64)>,
    tail: f64,
}

fn poisson_elements(tester: &SemilinearTester, rates: &[Vec<f64>], tail_tol: f64) -> Result<Vec<Element>> {
    if rates.len() != tester.columns.len() {
        return Err(Error::Misaligned(format!(
            "{} rate classes for {} tester columns",
            rates.len(),
            tester.columns.len()
        )));
    }
    let sign = match tester.direction {
        Direction::Ge => 1.0,
        Direction::Le => -1.0,
    };
    let mut out: Vec<Element> = Vec::new();
    for (col, class_rates) in tester.columns.iter().zip(rates) {
        if class_rates.len() != col.count {
            return Err(Error::Misaligned(format!(
                "{} rates for a column of {} elements",
                class_rates.len(),
                col.count
            )));
        }
        let mut cache: Vec<(f64, usize)> = Vec::new();
        for &rate in class_rates {
            if !(rate >= 0.0) || !rate.is_finite() {
                return Err(Error::NegativeRate(rate));
            }
            if let Some(&(_, idx)) = cache.iter().find(|(r, _)| *r == rate) {
                let copy = out[idx].clone();
                out.push(copy);
                continue;
            }
            let plan = truncation_index(rate, tail_tol.ln());
            let values = (0..=plan.i_max as u64)
                .map(|i| (sign * col.coefficient(i), ln_poi(rate, i).exp()))
                .collect();
            let tail = if rate == 0.0 {
                0.0
            } else {
                log_upper_tail(rate, plan.i_max).exp()
            };
            cache.push((rate, out.len()));
            out.push(Element { values, tail });
        }
    }
    Ok(out)
}

fn convolve(dist: &[f64], entries: &[(i64, f64)]) -> (Vec<f64>, i64) {
    let emin = entries.iter().map(|e| e.0).min().unwrap_or(0);
    let emax = entries.iter().map(|e| e.0).max().unwrap_or(0);
    let mut out = vec![0.0; dist.len() + (emax - emin) as usize];
    for (d, &m) in dist.iter().enumerate() {
        if m == 0.0 {
            continue;
        }
        for &(e, p) in entries {
            out[d + (e - emin) as usize] += m * p;
        }
    }
    (out, emin)
}

/// Probability that the grid-rounded statistic reaches `start` (in grid units),
/// and the total mass carried by the truncated distribution.
fn rounded_run(elements: &[Element], w: f64, round: fn(f64) -> f64, start: i64) -> (f64, f64) {
    let mut dist = vec![1.0];
    let mut lo = 0i64;
    let mut scratch: Vec<(i64, f64)> = Vec::new();
    for el in elements {
        scratch.clear();
        scratch.extend(el.values.iter().map(|&(v, p)| (round(v / w) as i64, p)));
        let (next, shift) = convolve(&dist, &scratch);
        dist = next;
        lo += shift;
    }
    let from = (start - lo).max(0) as usize;
    (dist.iter().skip(from).sum(), dist.iter().sum())
}

fn projected_support(elements: &[Element], w: f64) -> Result<usize> {
    let mut total = 1usize;
    for el in elements {
        let (mut a, mut b) = (f64::INFINITY, f64::NEG_INFINITY);
        for &(v, _) in &el.values {
            a = a.min(v);
            b = b.max(v);
        }
        let span = (b / w).ceil() - (a / w).floor();
        if !span.is_finite() || span > MAX_SUPPORT as f64 {
            return Err(Error::InstanceTooLarge {
                count: span,
                limit: MAX_SUPPORT as f64,
            });
        }
        total += span as usize;
        if total > MAX_SUPPORT {
            return Err(Error::InstanceTooLarge {
                count: total as f64,
                limit: MAX_SUPPORT as f64,
            });
        }
    }
    Ok(total)
}

/// Bracket on the probability that `tester` rejects when element counts are
/// independent `Poisson(rate)` draws.
///
/// Values are rounded down and up to multiples of `grid_width`; counts past each
/// element's truncation point (tail mass below `tail_tol`) widen the upper end.
pub fn exact_poissonized_error(
    tester: &SemilinearTester,
    rates: &[Vec<f64>],
    grid_width: f64,
    tail_tol: f64,
) -> Result<ErrorBracket> {
    if !(grid_width > 0.0) || !grid_width.is_finite() {
        return Err(Error::ConstraintViolation(format!(
            "grid width must be positive, got {grid_width}"
        )));
    }
    let elements = poisson_elements(tester, rates, tail_tol)?;
    bracket_for(tester, &elements, grid_width)
}

fn bracket_for(tester: &SemilinearTester, elements: &[Element], w: f64) -> Result<ErrorBracket> {
    projected_support(elements, w)?;
    let threshold = match tester.direction {
        Direction::Ge => tester.threshold,
        Direction::Le => -tester.threshold,
    };
    let start = (threshold / w).ceil();
    if !start.is_finite() || start.abs() > 9.0e15 {
        return Err(Error::ConstraintViolation(format!(
            "threshold {threshold} is out of range for grid width {w}"
        )));
    }
    let start = start as i64;
    let (low, _) = rounded_run(elements, w, f64::floor, start);
    let (high, kept) = rounded_run(elements, w, f64::ceil, start);
    // the missing mass is at least the analytic tail; rounding in the pmf can add a few ulps
    let log_keep: f64 = elements.iter().map(|e| (-e.tail).ln_1p()).sum();
    let truncation_slack = (-log_keep.exp_m1()).max(1.0 - kept);
    let lower = low.clamp(0.0, 1.0);
    let upper = (high + truncation_slack).clamp(lower, 1.0);
    Ok(ErrorBracket {
        lower,
        upper,
        discretization_slack: (high - low).max(0.0),
        truncation_slack,
        grid_width: w,
    })
}

/// [`exact_poissonized_error`] with the grid refined until the bracket is no wider
/// than `budget`.
///
/// Grid widths are powers of two starting near `max|c| / 256`, so coefficients
/// that are dyadic rationals (all integer-valued baselines) become exact.
pub fn exact_poissonized_error_auto(
    tester: &SemilinearTester,
    rates: &[Vec<f64>],
    budget: f64,
) -> Result<ErrorBracket> {
    let elements = poisson_elements(tester, rates, DEFAULT_TAIL_TOL)?;
    let max_abs = elements
        .iter()
        .flat_map(|e| e.values.iter().map(|v| v.0.abs()))
        .fold(0.0, f64::max);
    if !max_abs.is_finite() {
        return Err(Error::ConstraintViolation("non-finite tester coefficient".into()));
    }
    let mut w = if max_abs > 0.0 {
        2f64.powi((max_abs / 256.0).log2().ceil() as i32)
    } else {
        1.0
    };
    let mut best: Option<ErrorBracket> = None;
    loop {
        let b = match bracket_for(tester, &elements, w) {
            Ok(b) => b,
            Err(Error::InstanceTooLarge { .. }) => {
                let width = best.map_or(1.0, |b| b.width());
                return Err(Error::SlackBudgetExceeded { width, budget });
            }
            Err(e) => return Err(e),
        };
        if b.width() <= budget {
            return Ok(b);
        }
        best = Some(b);
        w *= 0.5;
    }
}

/// Which error an exact computation reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    /// Probability of rejecting.
    Type1,
    /// Probability of accepting.
    Type2,
}

/// `ln C(n + k − 1, k)`, the log number of histograms of `k` draws over `n` elements.
pub fn ln_histogram_count(n: usize, k: u64) -> f64 {
    if n == 0 {
        return if k == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    ln_factorial(n as u64 + k - 1) - ln_factorial(k) - ln_factorial(n as u64 - 1)
}

/// Visit one representative per orbit of histograms under permutations inside
/// each group. `visit` gets the flat counts (groups laid out in order, each
/// nonincreasing) and the log of the orbit size.
fn for_each_histogram(groups: &[usize], k: u64, visit: &mut dyn FnMut(&[u64], f64)) {
    let n: usize = groups.iter().sum();
    let mut group_of = Vec::with_capacity(n);
    for (g, &m) in groups.iter().enumerate() {
        group_of.extend(std::iter::repeat_n(g, m));
    }
    let mut counts = vec![0u64; n];
    if n == 0 {
        if k == 0 {
            visit(&counts, 0.0);
        }
        return;
    }
    rec(0, u64::MAX, k, &group_of, &mut counts, groups, visit);

    fn rec(
        idx: usize,
        cap: u64,
        remaining: u64,
        group_of: &[usize],
        counts: &mut [u64],
        groups: &[usize],
        visit: &mut dyn FnMut(&[u64], f64),
    ) {
        let n = counts.len();
        if idx == n {
            if remaining == 0 {
                visit(counts, ln_orbit(counts, groups));
            }
            return;
        }
        let new_group = idx == 0 || group_of[idx] != group_of[idx - 1];
        let cap = if new_group { u64::MAX } else { cap };
        let top = cap.min(remaining);
        if idx == n - 1 {
            if remaining <= top {
                counts[idx] = remaining;
                rec(idx + 1, remaining, 0, group_of, counts, groups, visit);
            }
            return;
        }
        for v in (0..=top).rev() {
            counts[idx] = v;
            rec(idx + 1, v, remaining - v, group_of, counts, groups, visit);
        }
    }
}

fn ln_orbit(counts: &[u64], groups: &[usize]) -> f64 {
    let mut total = 0.0;
    let mut start = 0;
    for &m in groups {
        let slice = &counts[start..start + m];
        total += ln_factorial(m as u64);
        let mut run = 1u64;
        for w in slice.windows(2) {
            if w[0] == w[1] {
                run += 1;
            } else {
                total -= ln_factorial(run);
                run = 1;
            }
        }
        if m > 0 {
            total -= ln_factorial(run);
        }
        start += m;
    }
    total
}

/// `Σ_e c_e ln p_e`, with `0·ln 0 = 0` and `−∞` for a positive count on a zero probability.
fn ln_power_product(counts: &[u64], ln_p: &[f64]) -> f64 {
    let mut s = 0.0;
    for (&c, &lp) in counts.iter().zip(ln_p) {
        if c > 0 {
            s += c as f64 * lp;
        }
    }
    s
}

/// Exact probability that `tester` rejects (type 1) or accepts (type 2) when
/// exactly `k` samples are drawn from `source`. Sources whose mass is not 1 are
/// renormalized.
pub fn exact_fixed_k_error(
    tester: &SemilinearTester,
    source: &impl ElementSource,
    k: u64,
    side: Side,
) -> Result<f64> {
    let probs = source.element_probabilities();
    if probs.len() != tester.columns.len()
        || probs.iter().zip(&tester.columns).any(|(p, c)| p.len() != c.count)
    {
        return Err(Error::Misaligned("source does not match tester columns".into()));
    }
    let n: usize = probs.iter().map(Vec::len).sum();
    let ln_count = ln_histogram_count(n, k);
    if ln_count > MAX_HISTOGRAMS.ln() {
        return Err(Error::InstanceTooLarge {
            count: ln_count.exp(),
            limit: MAX_HISTOGRAMS,
        });
    }
    let mass: f64 = probs.iter().flatten().sum();

    // groups of interchangeable elements: same column, same probability
    let mut groups: Vec<(usize, f64, usize)> = Vec::new();
    for (j, class) in probs.iter().enumerate() {
        for &p in class {
            match groups.iter_mut().find(|g| g.0 == j && g.1 == p) {
                Some(g) => g.2 += 1,
                None => groups.push((j, p, 1)),
            }
        }
    }
    let sizes: Vec<usize> = groups.iter().map(|g| g.2).collect();
    let mut column_of = Vec::with_capacity(n);
    let mut ln_p = Vec::with_capacity(n);
    for &(j, p, m) in &groups {
        for _ in 0..m {
            column_of.push(j);
            ln_p.push((p / mass).ln());
        }
    }
    let ln_kf = ln_factorial(k);
    let mut reject = 0.0;
    let mut total = 0.0;
    for_each_histogram(&sizes, k, &mut |counts, ln_orbit| {
        let ln_prob = ln_kf - counts.iter().map(|&c| ln_factorial(c)).sum::<f64>()
            + ln_power_product(counts, &ln_p)
            + ln_orbit;
        let prob = ln_prob.exp();
        total += prob;
        let stat: f64 = counts
            .iter()
            .zip(&column_of)
            .map(|(&c, &j)| tester.columns[j].coefficient(c))
            .sum();
        if tester.rejects(stat) {
            reject += prob;
        }
    });
    let reject = (reject / total).clamp(0.0, 1.0);
    Ok(match side {
        Side::Type1 => reject,
        Side::Type2 => 1.0 - reject,
    })
}

/// Neyman-Pearson floor against the conditioned coin mixture, together with the
/// optimal tester's exact errors against the same mixture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NpFloor {
    /// Smallest achievable max(type I, type II) over all (randomized) tests.
    pub floor: f64,
    /// Log-likelihood ratio `ln(Q/P)` at which the minimax test randomizes.
    pub llr_threshold: f64,
    pub tester_type1: f64,
    pub tester_type2: f64,
    /// Probability that the coin process lands in the window.
    pub window_probability: f64,
    pub realizations: usize,
    pub histograms: usize,
}

impl NpFloor {
    pub fn tester_max_err(&self) -> f64 {
        self.tester_type1.max(self.tester_type2)
    }
}

/// Exact NP floor for `k` fixed draws: the hypothesis against the mixture of
/// renormalized coin realizations whose distance lies in `[eps, eps_hi]`.
pub fn np_exact_error_tiny(model: &OptimalTesterModel, adv: &AdversaryModel, k: u64) -> Result<NpFloor> {
    let n = adv.n();
    if n > MAX_NP_ELEMENTS {
        return Err(Error::InstanceTooLarge {
            count: n as f64,
            limit: MAX_NP_ELEMENTS as f64,
        });
    }
    let ln_count = ln_histogram_count(n, k);
    if ln_count > MAX_NP_HISTOGRAMS.ln() {
        return Err(Error::InstanceTooLarge {
            count: ln_count.exp(),
            limit: MAX_NP_HISTOGRAMS,
        });
    }
    if model.classes.len() != adv.classes.len()
        || model.classes.iter().zip(&adv.classes).any(|(m, a)| m.count != a.count)
    {
        return Err(Error::Misaligned("adversary does not match model classes".into()));
    }

    let mut flat = Vec::with_capacity(n);
    for c in &adv.classes {
        for _ in 0..c.count {
            flat.push(c);
        }
    }
    let ln_y: Vec<f64> = flat.iter().map(|c| c.y.ln()).collect();

    // admissible realizations: bit e set means element e sits at x1
    let mut mixture: Vec<(f64, Vec<f64>)> = Vec::new();
    let mut window = 0.0;
    for mask in 0u32..(1u32 << n) {
        let mut dist = 0.0;
        let mut weight = 1.0;
        let mut mass = 0.0;
        for (e, c) in flat.iter().enumerate() {
            if mask >> e & 1 == 1 {
                dist += c.y - c.x1;
                weight *= c.q;
                mass += c.x1;
            } else {
                dist += c.x2 - c.y;
                weight *= 1.0 - c.q;
                mass += c.x2;
            }
        }
        if !adv.in_window(dist) || weight == 0.0 {
            continue;
        }
        window += weight;
        let ln_x = flat
            .iter()
            .enumerate()
            .map(|(e, c)| {
                let x = if mask >> e & 1 == 1 { c.x1 } else { c.x2 };
                (x / mass).ln()
            })
            .collect();
        mixture.push((weight, ln_x));
    }
    if mixture.is_empty() {
        return Err(Error::EmptyConditioning {
            eps: adv.eps,
            eps_hi: adv.eps_hi,
        });
    }
    for m in mixture.iter_mut() {
        m.0 /= window;
    }

    let tester = build_optimal_tester(model);
    let column_of: Vec<usize> = adv
        .classes
        .iter()
        .enumerate()
        .flat_map(|(j, c)| std::iter::repeat_n(j, c.count))
        .collect();
    let sizes: Vec<usize> = adv.classes.iter().map(|c| c.count).collect();
    let ln_kf = ln_factorial(k);
    let mut cells: Vec<(f64, f64)> = Vec::new();
    let (mut t1, mut t2) = (0.0, 0.0);
    for_each_histogram(&sizes, k, &mut |counts, ln_orbit| {
        let base = ln_kf - counts.iter().map(|&c| ln_factorial(c)).sum::<f64>() + ln_orbit;
        let p = (base + ln_power_product(counts, &ln_y)).exp();
        let q: f64 = mixture
            .iter()
            .map(|(w, ln_x)| w * (base + ln_power_product(counts, ln_x)).exp())
            .sum();
        let stat: f64 = counts
            .iter()
            .zip(&column_of)
            .map(|(&c, &j)| tester.columns[j].coefficient(c))
            .sum();
        if tester.rejects(stat) {
            t1 += p;
        } else {
            t2 += q;
        }
        cells.push((p, q));
    });

    // reject the most Q-like histograms first; randomize on the cell where the errors cross
    let histograms = cells.len();
    cells.sort_by(|a, b| (b.1 * a.0).total_cmp(&(a.1 * b.0)));
    let (mut type1, mut type2) = (0.0, 1.0);
    let mut floor = 0.5;
    let mut llr_threshold = 0.0;
    for &(p, q) in &cells {
        if type1 + p >= type2 - q {
            let theta = if p + q > 0.0 { (type2 - type1) / (p + q) } else { 0.0 };
            floor = type1 + theta * p;
            llr_threshold = (q / p).ln();
            break;
        }
        type1 += p;
        type2 -= q;
    }
    Ok(NpFloor {
        floor,
        llr_threshold,
        tester_type1: t1,
        tester_type2: t2,
        window_probability: window,
        realizations: mixture.len(),
        histograms,
    })
}
