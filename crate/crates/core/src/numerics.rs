//! Log-space primitives shared by the optimizer, testers and oracles.
//!
//! Every probability in this crate travels as a natural logarithm until it is
//! reported. Poisson weights `poi(λ, i)` underflow long before the sums that use
//! them stop mattering, so the sums are assembled with [`log_sum_exp`].

use std::sync::LazyLock;

use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Default truncation tolerance on discarded Poisson tail mass.
pub const DEFAULT_TAIL_TOL: f64 = 1e-14;

const LN_FACTORIAL_TABLE: usize = 1024;

static LN_FACTORIAL: LazyLock<Vec<f64>> = LazyLock::new(|| {
    let mut table = Vec::with_capacity(LN_FACTORIAL_TABLE);
    table.push(0.0);
    for i in 1..LN_FACTORIAL_TABLE {
        table.push(ln_gamma(i as f64 + 1.0));
    }
    table
});

/// `ln(i!)`, tabulated for small `i` and via log-gamma beyond.
#[inline]
pub fn ln_factorial(i: u64) -> f64 {
    if (i as usize) < LN_FACTORIAL_TABLE {
        LN_FACTORIAL[i as usize]
    } else {
        ln_gamma(i as f64 + 1.0)
    }
}

/// Natural log of the Poisson pmf, `-λ + i ln λ - ln i!`.
///
/// `λ = 0` is a point mass at zero, so `(0, 0)` gives `0` and `(0, i ≥ 1)` gives `-∞`.
pub fn log_poisson_pmf(rate: f64, i: u64) -> Result<f64> {
    if !(rate >= 0.0) {
        return Err(Error::NegativeRate(rate));
    }
    Ok(ln_poi(rate, i))
}

/// Unchecked [`log_poisson_pmf`] for hot loops; `rate` must be nonnegative.
#[inline]
pub(crate) fn ln_poi(rate: f64, i: u64) -> f64 {
    debug_assert!(rate >= 0.0);
    if rate == 0.0 {
        return if i == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    -rate + i as f64 * rate.ln() - ln_factorial(i)
}

/// `ln Σ exp(t)` with max subtraction. Empty input or all `-∞` gives `-∞`.
pub fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let sum: f64 = terms.iter().map(|&t| (t - max).exp()).sum();
    max + sum.ln()
}

/// `ln(e^a + e^b)`.
#[inline]
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if lo == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// `ln(e^a - e^b)` for `a ≥ b`.
#[inline]
pub fn log_sub_exp(a: f64, b: f64) -> f64 {
    if b == f64::NEG_INFINITY {
        return a;
    }
    a + (-(b - a).exp()).ln_1p()
}

/// Log of the Poisson ratio `poi(num, i) / poi(den, i) = e^{den - num} (num/den)^i`.
///
/// `num = 0` collapses to `den` at `i = 0` and `-∞` otherwise.
#[inline]
pub fn log_poi_ratio(rate_num: f64, rate_den: f64, i: u64) -> f64 {
    debug_assert!(rate_den > 0.0);
    if rate_num == 0.0 {
        return if i == 0 { rate_den } else { f64::NEG_INFINITY };
    }
    if i == 0 {
        return rate_den - rate_num;
    }
    (rate_den - rate_num) + i as f64 * (rate_num / rate_den).ln()
}

/// Where to cut an infinite Poisson sum.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TruncationPlan {
    /// Largest index kept (inclusive).
    pub i_max: usize,
    /// `ln Pr[X > i_max]` at the largest rate in play.
    pub tail_log_mass: f64,
}

impl TruncationPlan {
    pub fn len(&self) -> usize {
        self.i_max + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Exact `ln Pr[X > m]` for `X ~ Poisson(rate)`, summed term by term.
pub fn log_upper_tail(rate: f64, m: usize) -> f64 {
    if rate == 0.0 {
        return f64::NEG_INFINITY;
    }
    let mut acc = f64::NEG_INFINITY;
    let mut i = m as u64 + 1;
    loop {
        let t = ln_poi(rate, i);
        acc = log_add_exp(acc, t);
        // terms decay super-geometrically once past the mode
        if (i as f64) > rate && t < acc - 40.0 {
            break;
        }
        i += 1;
    }
    acc
}

/// Smallest `i_max` whose discarded upper tail at `max_rate` has log-mass below `log_tol`.
///
/// A Chernoff bound gives a starting point that is always sufficient; exact tail
/// summation then walks it down to the smallest admissible index.
pub fn truncation_index(max_rate: f64, log_tol: f64) -> TruncationPlan {
    debug_assert!(max_rate >= 0.0 && log_tol < 0.0);
    if max_rate <= 0.0 {
        return TruncationPlan {
            i_max: 0,
            tail_log_mass: f64::NEG_INFINITY,
        };
    }
    let chernoff = |m: usize| {
        let r = (m as f64 + 1.0) / max_rate;
        if r <= 1.0 {
            0.0
        } else {
            -max_rate * (1.0 - r + r * r.ln())
        }
    };
    let mut m = max_rate.ceil() as usize;
    while chernoff(m) >= log_tol {
        m += 1 + m / 64;
    }
    let mut tail = log_upper_tail(max_rate, m);
    while m > 0 {
        let below = log_upper_tail(max_rate, m - 1);
        if below < log_tol {
            m -= 1;
            tail = below;
        } else {
            break;
        }
    }
    TruncationPlan {
        i_max: m,
        tail_log_mass: tail,
    }
}

/// Plan for the default tolerance.
pub fn default_plan(max_rate: f64) -> TruncationPlan {
    truncation_index(max_rate, DEFAULT_TAIL_TOL.ln())
}

/// Logistic function and its inverse, used to keep weights inside `(0, 1)`.
#[inline]
pub fn logistic(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pmf_closed_forms() {
        assert!((log_poisson_pmf(1.0, 0).unwrap() + 1.0).abs() < 1e-15);
        assert_eq!(log_poisson_pmf(0.0, 0).unwrap(), 0.0);
        assert_eq!(log_poisson_pmf(0.0, 3).unwrap(), f64::NEG_INFINITY);
        let v = log_poisson_pmf(2.0, 1).unwrap();
        assert!((v - (-2.0 + 2f64.ln())).abs() < 1e-12);
        assert!((v + 1.306_852_8).abs() < 1e-7);
        assert!(matches!(
            log_poisson_pmf(-1.0, 0),
            Err(Error::NegativeRate(_))
        ));
    }

    #[test]
    fn factorial_beyond_overflow() {
        // 171! overflows f64; its log must not
        let direct: f64 = (1..=200u64).map(|i| (i as f64).ln()).sum();
        assert!((ln_factorial(200) - direct).abs() < 1e-9);
        let direct: f64 = (1..=2000u64).map(|i| (i as f64).ln()).sum();
        assert!((ln_factorial(2000) - direct).abs() / direct < 1e-12);
    }

    #[test]
    fn lse_contract() {
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY; 3]), f64::NEG_INFINITY);
        assert_eq!(log_sum_exp(&[0.7, f64::NEG_INFINITY]), 0.7);
        assert!(log_sum_exp(&[0.5f64.ln(), 0.5f64.ln()]).abs() < 1e-15);
        let big = log_sum_exp(&[1000.0, 1000.0]);
        assert!((big - (1000.0 + 2f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn truncation_examples() {
        let p = truncation_index(0.0, DEFAULT_TAIL_TOL.ln());
        assert_eq!(p.i_max, 0);

        let p = truncation_index(20.0, DEFAULT_TAIL_TOL.ln());
        // oracle: direct summation in linear space from the far end
        let tail: f64 = ((p.i_max + 1)..400)
            .map(|i| ln_poi(20.0, i as u64).exp())
            .sum();
        assert!(tail < 1e-14, "tail {tail}");
        let tail_prev: f64 = (p.i_max..400).map(|i| ln_poi(20.0, i as u64).exp()).sum();
        assert!(tail_prev >= 1e-14, "not minimal");
        let head: f64 = (0..=p.i_max).map(|i| ln_poi(20.0, i as u64).exp()).sum();
        // summing ~60 terms costs a few ulps
        assert!(head >= 1.0 - 1e-13 && head <= 1.0 + 1e-12, "head {head}");
    }

    #[test]
    fn truncation_monotone_in_rate() {
        let mut last = 0;
        for step in 0..200 {
            let rate = step as f64 * 0.37;
            let p = default_plan(rate);
            assert!(p.i_max >= last, "rate {rate}");
            last = p.i_max;
        }
    }

    #[test]
    fn ratio_examples() {
        for i in 0..10 {
            assert_eq!(log_poi_ratio(3.5, 3.5, i), 0.0);
        }
        assert_eq!(log_poi_ratio(0.0, 2.0, 0), 2.0);
        assert_eq!(log_poi_ratio(0.0, 2.0, 1), f64::NEG_INFINITY);
        let direct = ln_poi(3.0, 7) - ln_poi(5.0, 7);
        assert!((log_poi_ratio(3.0, 5.0, 7) - direct).abs() < 1e-12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn ratio_chains(a in 0.0f64..30.0, b in 0.01f64..30.0, c in 0.01f64..30.0, i in 0u64..60) {
                let lhs = log_poi_ratio(a, b, i) + log_poi_ratio(b, c, i);
                let rhs = log_poi_ratio(a, c, i);
                if rhs.is_finite() {
                    prop_assert!((lhs - rhs).abs() < 1e-12 * (1.0 + rhs.abs()));
                } else {
                    prop_assert_eq!(lhs, rhs);
                }
            }

            #[test]
            fn lse_permutation_and_neg_inf(mut v in proptest::collection::vec(-50.0f64..50.0, 1..20), rot in 0usize..20) {
                let base = log_sum_exp(&v);
                let r = rot % v.len();
                v.rotate_left(r);
                prop_assert!((log_sum_exp(&v) - base).abs() < 1e-12);
                v.push(f64::NEG_INFINITY);
                prop_assert!((log_sum_exp(&v) - base).abs() < 1e-12);
            }

            #[test]
            fn truncated_mass_near_one(rate in 0.0f64..120.0) {
                let p = default_plan(rate);
                let head: f64 = (0..=p.i_max).map(|i| ln_poi(rate, i as u64).exp()).sum();
                prop_assert!(head >= 1.0 - 1e-14 - 1e-13 && head <= 1.0 + 1e-12, "head {}", head);
                prop_assert!(p.tail_log_mass < DEFAULT_TAIL_TOL.ln());
            }
        }
    }
}
