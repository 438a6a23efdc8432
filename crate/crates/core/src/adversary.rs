//! The worst-case alternative behind the optimal tester.
//!
//! Each element of class `j` independently flips a coin: with probability `q_j`
//! its probability becomes `x1_j`, otherwise `x2_j`. Conditioning the resulting
//! distribution-over-distributions on the realized ℓ1 distance landing in
//! `[ε, ε′]` gives a prior against which no tester can beat the optimal
//! tester's exponent by more than the Chernoff slack factors.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hypothesis::{AlternativeClass, AlternativeModel, SampleHistogram};
use crate::numerics::{ln_poi, log_add_exp, log_sum_exp, DEFAULT_TAIL_TOL};
use crate::optimizer::{chernoff_cut, kappa, tilted_q, OptimalTesterModel};

/// Default ratio `ε′ / ε`.
pub const DEFAULT_EPS_HI_RATIO: f64 = 1.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdversaryClass {
    pub y: f64,
    pub count: usize,
    pub q: f64,
    pub q_tilde: f64,
    pub x1: f64,
    pub x2: f64,
}

impl AdversaryClass {
    fn gaps(&self) -> (f64, f64) {
        (self.y - self.x1, self.x2 - self.y)
    }
}

/// Two-point coin model with its conditioning window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdversaryModel {
    pub eps: f64,
    pub eps_hi: f64,
    pub classes: Vec<AdversaryClass>,
}

impl AdversaryModel {
    pub fn from_model(model: &OptimalTesterModel, eps_hi: f64) -> Self {
        let classes = model
            .classes
            .iter()
            .map(|c| AdversaryClass {
                y: c.y,
                count: c.count,
                q: c.q,
                q_tilde: tilted_q(c.y, c.two_point(), model.alpha),
                x1: c.x1,
                x2: c.x2,
            })
            .collect();
        Self {
            eps: model.eps,
            eps_hi,
            classes,
        }
    }

    pub fn with_default_window(model: &OptimalTesterModel) -> Self {
        Self::from_model(model, DEFAULT_EPS_HI_RATIO * model.eps)
    }

    pub fn n(&self) -> usize {
        self.classes.iter().map(|c| c.count).sum()
    }

    /// Whether a realized distance lies in `[eps, eps_hi]`, up to rounding in the sum.
    pub fn in_window(&self, distance: f64) -> bool {
        let slack = 1e-12 * self.eps_hi.max(1.0);
        distance >= self.eps - slack && distance <= self.eps_hi + slack
    }

    /// `Σ_j h_j [q̃_j (y−x1) + (1−q̃_j)(x2−y)]`, equal to ε at an optimum.
    pub fn tilted_distance(&self) -> f64 {
        self.classes
            .iter()
            .map(|c| {
                let (g1, g2) = c.gaps();
                c.count as f64 * (c.q_tilde * g1 + (1.0 - c.q_tilde) * g2)
            })
            .sum()
    }

    /// Mean realized distance under the untilted coins.
    pub fn expected_coin_distance(&self) -> f64 {
        self.classes
            .iter()
            .map(|c| {
                let (g1, g2) = c.gaps();
                c.count as f64 * (c.q * g1 + (1.0 - c.q) * g2)
            })
            .sum()
    }

    /// Variance of the realized distance under the untilted coins.
    pub fn coin_distance_variance(&self) -> f64 {
        self.classes
            .iter()
            .map(|c| {
                let (g1, g2) = c.gaps();
                c.count as f64 * c.q * (1.0 - c.q) * (g1 - g2).powi(2)
            })
            .sum()
    }

    /// Alternative with `n1_j` elements of class `j` at `x1` and the rest at `x2`.
    pub fn realize_counts(&self, n1: &[usize]) -> AlternativeModel {
        AlternativeModel {
            classes: self
                .classes
                .iter()
                .zip(n1)
                .map(|(c, &m)| AlternativeClass {
                    y: c.y,
                    probs: (0..c.count).map(|e| if e < m { c.x1 } else { c.x2 }).collect(),
                })
                .collect(),
        }
    }

    /// Realized distance for per-class counts of elements at `x1`.
    pub fn distance_of_counts(&self, n1: &[usize]) -> f64 {
        self.classes
            .iter()
            .zip(n1)
            .map(|(c, &m)| {
                let (g1, g2) = c.gaps();
                m as f64 * g1 + (c.count - m) as f64 * g2
            })
            .sum()
    }
}

/// One draw from the coin process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoinRealization {
    /// Per class, per element: 1 for `x1`, 2 for `x2`.
    pub choices: Vec<Vec<u8>>,
    pub alternative: AlternativeModel,
    pub distance: f64,
}

fn draw_coins<R: Rng + ?Sized>(adv: &AdversaryModel, rng: &mut R) -> CoinRealization {
    let mut choices = Vec::with_capacity(adv.classes.len());
    let mut classes = Vec::with_capacity(adv.classes.len());
    let mut distance = 0.0;
    for c in &adv.classes {
        let (g1, g2) = c.gaps();
        let mut ch = Vec::with_capacity(c.count);
        let mut probs = Vec::with_capacity(c.count);
        for _ in 0..c.count {
            if rng.random::<f64>() < c.q {
                ch.push(1);
                probs.push(c.x1);
                distance += g1;
            } else {
                ch.push(2);
                probs.push(c.x2);
                distance += g2;
            }
        }
        choices.push(ch);
        classes.push(AlternativeClass { y: c.y, probs });
    }
    CoinRealization {
        choices,
        alternative: AlternativeModel { classes },
        distance,
    }
}

/// Independent `Bernoulli(q_j)` coin per element.
pub fn sample_coin_distribution(adv: &AdversaryModel, seed: u64) -> CoinRealization {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    draw_coins(adv, &mut rng)
}

/// Rejection-sample a realization whose distance lies in `[eps, eps_hi]`.
pub fn sample_conditional(
    adv: &AdversaryModel,
    seed: u64,
    max_attempts: usize,
) -> Result<CoinRealization> {
    if !(adv.eps_hi > adv.eps) {
        return Err(Error::ConditioningTooRare { attempts: 0 });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..max_attempts {
        let r = draw_coins(adv, &mut rng);
        if adv.in_window(r.distance) {
            return Ok(r);
        }
    }
    Err(Error::ConditioningTooRare {
        attempts: max_attempts,
    })
}

/// The rounded tilted histogram used as a concrete type-II target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardQ {
    pub alternative: AlternativeModel,
    /// Elements placed at `x1`, per class.
    pub n1: Vec<usize>,
    pub distance: f64,
    pub mass: f64,
}

/// Round `h_j q̃_j` to whole elements, then move elements from the nearer support
/// point to the farther one until the distance reaches ε.
pub fn hard_q_rounded(adv: &AdversaryModel) -> HardQ {
    let mut n1: Vec<usize> = adv
        .classes
        .iter()
        .map(|c| ((c.count as f64 * c.q_tilde).round() as usize).min(c.count))
        .collect();
    let mut distance = adv.distance_of_counts(&n1);
    while distance < adv.eps {
        // pick the single move with the largest distance gain
        let mut best: Option<(usize, bool, f64)> = None;
        for (j, c) in adv.classes.iter().enumerate() {
            let (g1, g2) = c.gaps();
            let (gain, possible, to_x2) = if g2 >= g1 {
                (g2 - g1, n1[j] > 0, true)
            } else {
                (g1 - g2, n1[j] < c.count, false)
            };
            if possible && gain > 0.0 && best.is_none_or(|b| gain > b.2) {
                best = Some((j, to_x2, gain));
            }
        }
        let Some((j, to_x2, _)) = best else { break };
        if to_x2 {
            n1[j] -= 1;
        } else {
            n1[j] += 1;
        }
        distance = adv.distance_of_counts(&n1);
    }
    let alternative = adv.realize_counts(&n1);
    let mass = alternative.mass();
    HardQ {
        alternative,
        n1,
        distance,
        mass,
    }
}

/// `Σ_e κ(class(e), count(e))`: the log-likelihood ratio of the coin mixture against P.
pub fn log_likelihood_ratio(model: &OptimalTesterModel, hist: &SampleHistogram) -> Result<f64> {
    if hist.counts.len() != model.classes.len() {
        return Err(Error::Misaligned(format!(
            "histogram has {} classes, model has {}",
            hist.counts.len(),
            model.classes.len()
        )));
    }
    let mut total = 0.0;
    for (j, (c, counts)) in model.classes.iter().zip(&hist.counts).enumerate() {
        if counts.len() != c.count {
            return Err(Error::Misaligned(format!(
                "class {j}: {} counts for {} elements",
                counts.len(),
                c.count
            )));
        }
        for &s in counts {
            total += kappa(c.y, c.two_point(), model.k, s);
        }
    }
    Ok(total)
}

/// `π_{r,j} = Σ_i poi(k y, i)^u (q poi(k x1, i) + (1−q) poi(k x2, i))^{−u} q_r poi(k x_r, i)`
/// with `q_1 = q_j`, `q_2 = 1 − q_j`.
pub fn pi_weights(model: &OptimalTesterModel, j: usize, r: u8) -> f64 {
    let c = &model.classes[j];
    pi_weight_raw(model.k, model.u, c.y, c.q, c.x1, c.x2, r)
}

pub(crate) fn pi_weight_raw(k: f64, u: f64, y: f64, q: f64, x1: f64, x2: f64, r: u8) -> f64 {
    let m = chernoff_cut(k * x2.max(y), DEFAULT_TAIL_TOL.ln() - 10.0);
    let (lq1, lq2) = (q.ln(), (-q).ln_1p());
    let (lqr, xr) = if r == 1 { (lq1, x1) } else { (lq2, x2) };
    let terms: Vec<f64> = (0..=m as u64)
        .map(|i| {
            let lr = lqr + ln_poi(k * xr, i);
            if lr == f64::NEG_INFINITY {
                return f64::NEG_INFINITY;
            }
            let la = log_add_exp(lq1 + ln_poi(k * x1, i), lq2 + ln_poi(k * x2, i));
            u * (ln_poi(k * y, i) - la) + lr
        })
        .collect();
    log_sum_exp(&terms).exp()
}

fn pi_pairs(model: &OptimalTesterModel) -> Vec<(f64, f64)> {
    (0..model.classes.len())
        .map(|j| (pi_weights(model, j, 1), pi_weights(model, j, 2)))
        .collect()
}

/// `−sε + Σ_j h_j log(e^{s(y−x1)} π₁ + e^{s(x2−y)} π₂)`.
pub fn level2_chernoff(adv: &AdversaryModel, model: &OptimalTesterModel, s: f64) -> f64 {
    level2_with(&pi_pairs(model), adv, s)
}

fn level2_with(pis: &[(f64, f64)], adv: &AdversaryModel, s: f64) -> f64 {
    -s * adv.eps
        + adv
            .classes
            .iter()
            .zip(pis)
            .map(|(c, &(p1, p2))| {
                let (g1, g2) = c.gaps();
                c.count as f64 * log_add_exp(s * g1 + p1.ln(), s * g2 + p2.ln())
            })
            .sum::<f64>()
}

/// Analytic derivative of [`level2_chernoff`] at `s = 0`.
pub(crate) fn level2_derivative_at_zero(model: &OptimalTesterModel) -> f64 {
    let pis = pi_pairs(model);
    -model.eps
        + model
            .classes
            .iter()
            .zip(&pis)
            .map(|(c, &(p1, p2))| {
                c.count as f64 * ((c.y - c.x1) * p1 + (c.x2 - c.y) * p2) / (p1 + p2)
            })
            .sum::<f64>()
}

/// Outcome of [`certificate_check`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    /// The lower-bound expression at `s = 0` and the model's `u`.
    pub certificate: f64,
    pub delta_log: f64,
    pub difference: f64,
    /// Central difference in `s` at 0 of the level-two expression (one-sided derivative also reported).
    pub s_derivative: f64,
    /// Central difference in `u` of the lower-bound expression.
    pub u_derivative: f64,
    /// Expression at `u + 0.05` minus the value at `u`.
    pub u_probe_increase: f64,
    /// `α (ε′ − ε)`, the log of the window factor in the matching lower bound.
    pub window_log_factor: f64,
    pub passed: bool,
}

fn lower_expression(adv: &AdversaryModel, model: &OptimalTesterModel, u: f64) -> f64 {
    let alpha = model.alpha;
    adv.eps * alpha * (1.0 - u)
        + adv
            .classes
            .iter()
            .map(|c| {
                let s = pi_weight_raw(model.k, u, c.y, c.q, c.x1, c.x2, 1)
                    + pi_weight_raw(model.k, u, c.y, c.q, c.x1, c.x2, 2);
                let (g1, g2) = c.gaps();
                let log_d = log_add_exp(c.q.ln() + alpha * g1, (-c.q).ln_1p() + alpha * g2);
                c.count as f64 * (s.ln() - (1.0 - u) * log_d)
            })
            .sum::<f64>()
}

/// Check that the computable part of the lower bound equals the upper-bound exponent.
///
/// Evaluates `εα(1−u) + Σ_j h_j [log(π₁+π₂) − (1−u) log D_j]` at the model's `u`
/// (where the `s`-minimization sits at `s = 0`), and confirms the `s`- and
/// `u`-derivatives vanish within `tol`.
pub fn certificate_check(
    adv: &AdversaryModel,
    model: &OptimalTesterModel,
    tol: f64,
) -> Result<CertificateReport> {
    let u = model.u;
    let certificate = lower_expression(adv, model, u);
    let difference = certificate - model.delta_log;
    let pis = pi_pairs(model);
    let h = 1e-5;
    let s_derivative = (level2_with(&pis, adv, h) - level2_with(&pis, adv, -h)) / (2.0 * h);
    let hu = 1e-5 * u.min(1.0 - u);
    let u_derivative =
        (lower_expression(adv, model, u + hu) - lower_expression(adv, model, u - hu)) / (2.0 * hu);
    let probe = if u + 0.05 < 1.0 { u + 0.05 } else { 0.5 * (u + 1.0) };
    let u_probe_increase = lower_expression(adv, model, probe) - certificate;
    let passed = difference.abs() < tol
        && s_derivative.abs() < tol
        && u_derivative.abs() < 10.0 * tol
        && u_probe_increase >= -tol;
    let report = CertificateReport {
        certificate,
        delta_log: model.delta_log,
        difference,
        s_derivative,
        u_derivative,
        u_probe_increase,
        window_log_factor: model.alpha * (adv.eps_hi - adv.eps),
        passed,
    };
    if difference.abs() >= tol {
        return Err(Error::CertificateMismatch {
            certificate,
            delta_log: model.delta_log,
            diff: difference.abs(),
        });
    }
    Ok(report)
}
