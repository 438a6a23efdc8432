//! Computes the optimal semilinear tester for a hypothesis.
//!
//! The best Chernoff bound of any semilinear tester reduces to a nested program:
//! an outer minimization over the distance multiplier `α < 0` and the Chernoff
//! mixing weight `u ∈ (0, 1)`, and for each probability class `y_j` an inner
//! maximization over a two-point alternative `(q_j, x1_j, x2_j)`:
//!
//! ```text
//! G(α, u) = ε α (1-u) + Σ_j h_j · max log [ Σ_i A_ij^{1-u} P_ij^u / D_j^{1-u} ]
//! A_ij = q poi(k x1, i) + (1-q) poi(k x2, i),  P_ij = poi(k y, i),
//! D_j  = q e^{α (y-x1)} + (1-q) e^{α (x2-y)}
//! ```
//!
//! The minimum of `G` is the log error exponent `Δ(P, k, ε)`, and the optimal
//! coefficients are `c_ij = log(A_ij / P_ij) + s` for a global shift `s`.
//!
//! Inner problems are solved by simplex search over `(logit q, -ln(x1/y), ln(x2/y))`
//! with restarts, then polished by Newton steps on the analytic gradient (the
//! `x1 = 0` boundary is handled as an active set). The outer problem uses a
//! grid of starts, simplex descent, and a Newton polish driven by the
//! envelope-theorem gradient of `G`.

use std::cell::RefCell;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hypothesis::HypothesisModel;
use crate::numerics::{
    default_plan, ln_poi, log_add_exp, log_poi_ratio, log_sum_exp, logistic, logit,
    TruncationPlan, DEFAULT_TAIL_TOL,
};
use crate::optim::{nelder_mead, newton_ascent_step, newton_descent_step};

/// Solver tolerances.
#[derive(Debug, Clone, Copy)]
pub struct OptimizerConfig {
    /// Absolute convergence tolerance on objective values.
    pub tol: f64,
    /// Discarded Poisson tail mass per truncated sum.
    pub tail_tol: f64,
    /// Acceptance threshold for stationarity residuals.
    pub stationarity_tol: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            tail_tol: DEFAULT_TAIL_TOL,
            stationarity_tol: 1e-6,
        }
    }
}

/// A two-point alternative for one class: mass `q` at `x1`, `1-q` at `x2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoPoint {
    pub q: f64,
    pub x1: f64,
    pub x2: f64,
}

/// Optimal inner solution for one probability class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassSolution {
    pub y: f64,
    pub count: usize,
    pub q: f64,
    pub x1: f64,
    pub x2: f64,
    /// Dual intercept `γ_j` of the distance constraint.
    pub gamma: f64,
    /// Class contribution `h_j · F_j` to the outer objective.
    pub objective: f64,
}

impl ClassSolution {
    pub fn two_point(&self) -> TwoPoint {
        TwoPoint {
            q: self.q,
            x1: self.x1,
            x2: self.x2,
        }
    }

    /// Coin weight on `x1` after tilting by `e^{α|x-y|}`.
    pub fn tilted_q(&self, alpha: f64) -> f64 {
        tilted_q(self.y, self.two_point(), alpha)
    }
}

pub(crate) fn tilted_q(y: f64, p: TwoPoint, alpha: f64) -> f64 {
    let a = p.q.ln() + alpha * (y - p.x1);
    let b = (-p.q).ln_1p() + alpha * (p.x2 - y);
    (a - log_add_exp(a, b)).exp()
}

/// First-order diagnostics at a solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationarityReport {
    /// `(Σ_j h_j · tilted mean distance − ε) / ε`.
    pub alpha_residual: f64,
    /// Central difference of `G` in `u` (step 1e-5).
    pub u_residual: f64,
    /// Per class: the q-stationarity identity, left minus right side.
    pub q_residuals: Vec<f64>,
    /// Largest excess of `g_j(x) − α|x−y_j|` over `γ_j`, including branch-maximum mismatches.
    pub tangency_max_violation: f64,
    /// Derivative at `s = 0` of the second-level Chernoff expression.
    pub s_derivative_at_zero: f64,
    /// Smallest second difference of `κ_{i,j}` in `i` over the truncation range.
    pub kappa_min_second_difference: f64,
}

impl StationarityReport {
    pub fn is_finite(&self) -> bool {
        self.alpha_residual.is_finite()
            && self.u_residual.is_finite()
            && self.q_residuals.iter().all(|r| r.is_finite())
            && self.tangency_max_violation.is_finite()
            && self.s_derivative_at_zero.is_finite()
            && self.kappa_min_second_difference.is_finite()
    }
}

/// The optimal tester and its certified error exponent.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimalTesterModel {
    pub k: f64,
    pub eps: f64,
    pub alpha: f64,
    pub u: f64,
    pub shift: f64,
    pub delta_log: f64,
    pub classes: Vec<ClassSolution>,
    pub truncation: TruncationPlan,
    /// Whether independent outer starts converged to different values.
    pub starts_disagree: bool,
}

impl OptimalTesterModel {
    pub fn n(&self) -> usize {
        self.classes.iter().map(|c| c.count).sum()
    }

    pub fn hypothesis(&self) -> Result<HypothesisModel> {
        HypothesisModel::from_classes(self.classes.iter().map(|c| (c.y, c.count)))
    }

    /// Check the invariants that every stored model must satisfy.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidModel(m));
        if !(self.k > 0.0) {
            return bad(format!("k must be positive, got {}", self.k));
        }
        if !(self.eps > 0.0) {
            return bad(format!("eps must be positive, got {}", self.eps));
        }
        if !(self.alpha < 0.0) {
            return bad(format!("alpha must be negative, got {}", self.alpha));
        }
        if !(self.u > 0.0 && self.u < 1.0) {
            return bad(format!("u must lie in (0,1), got {}", self.u));
        }
        if !(self.delta_log < 0.0) {
            return bad(format!("delta_log must be negative, got {}", self.delta_log));
        }
        if self.classes.is_empty() {
            return bad("model has no classes".into());
        }
        for (j, c) in self.classes.iter().enumerate() {
            if !(c.q > 0.0 && c.q < 1.0) {
                return bad(format!("class {j}: q = {} outside (0,1)", c.q));
            }
            if !(c.x1 >= 0.0 && c.x1 < c.y && c.y < c.x2) {
                return bad(format!(
                    "class {j}: need 0 <= x1 < y < x2, got x1={}, y={}, x2={}",
                    c.x1, c.y, c.x2
                ));
            }
            if c.count == 0 {
                return bad(format!("class {j}: count must be positive"));
            }
        }
        Ok(())
    }

    /// Unshifted coefficient `κ_{i,j}` for class `j`.
    pub fn kappa(&self, j: usize, i: u64) -> f64 {
        let c = &self.classes[j];
        kappa(c.y, c.two_point(), self.k, i)
    }

    /// Tester coefficient `c_{i,j} = κ_{i,j} + s`.
    pub fn coefficient(&self, j: usize, i: u64) -> f64 {
        self.kappa(j, i) + self.shift
    }

    /// `Σ_j h_j log Σ_i e^{t c_ij} poi(k y_j, i)`: the type-I Chernoff exponent at parameter `t`.
    pub fn type1_exponent(&self, t: f64) -> f64 {
        self.classes
            .iter()
            .enumerate()
            .map(|(j, c)| {
                let m = chernoff_cut(self.k * c.y.max(c.x2), DEFAULT_TAIL_TOL.ln() - 10.0);
                let terms: Vec<f64> = (0..=m as u64)
                    .map(|i| t * self.coefficient(j, i) + ln_poi(self.k * c.y, i))
                    .collect();
                c.count as f64 * log_sum_exp(&terms)
            })
            .sum()
    }

    /// Type-II exponent at Chernoff parameter `t` against the tilted fractional
    /// alternative (`h_j q̃_j` elements at `x1`, the rest at `x2`).
    pub fn type2_exponent_tilted(&self, t: f64) -> f64 {
        self.classes
            .iter()
            .enumerate()
            .map(|(j, c)| {
                let qt = c.tilted_q(self.alpha);
                let side = |x: f64| {
                    let m = chernoff_cut(self.k * x.max(c.y).max(c.x2), DEFAULT_TAIL_TOL.ln() - 10.0);
                    let terms: Vec<f64> = (0..=m as u64)
                        .map(|i| t * self.coefficient(j, i) + ln_poi(self.k * x, i))
                        .collect();
                    log_sum_exp(&terms)
                };
                c.count as f64 * (qt * side(c.x1) + (1.0 - qt) * side(c.x2))
            })
            .sum()
    }
}

/// `κ = log[(q poi(k x1, i) + (1-q) poi(k x2, i)) / poi(k y, i)]`.
pub fn kappa(y: f64, p: TwoPoint, k: f64, i: u64) -> f64 {
    let ky = k * y;
    let a = p.q.ln() + log_poi_ratio(k * p.x1, ky, i);
    let b = (-p.q).ln_1p() + log_poi_ratio(k * p.x2, ky, i);
    log_add_exp(a, b)
}

/// Smallest `m` whose Chernoff tail bound `Pr[X > m]` at `rate` is below `log_tol`.
pub(crate) fn chernoff_cut(rate: f64, log_tol: f64) -> usize {
    if rate <= 0.0 {
        return 0;
    }
    let bound = |m: usize| {
        let r = (m as f64 + 1.0) / rate;
        if r <= 1.0 {
            0.0
        } else {
            -rate * (1.0 - r + r * r.ln())
        }
    };
    let mut m = rate.ceil() as usize;
    while bound(m) >= log_tol {
        m += 1;
    }
    m
}

/// Per-class evaluation of `F = log N − (1−u) log D` and its partial derivatives.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ClassEval {
    pub f: f64,
    /// `∂F/∂(q, x1, x2)`.
    pub grad: [f64; 3],
    pub d_alpha: f64,
    pub d_u: f64,
    pub log_n: f64,
    pub log_d: f64,
    /// Left minus right side of the q-stationarity identity.
    pub q_identity: f64,
}

/// Fixed `(y, k, α, u)` for one inner problem.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ClassProblem {
    pub y: f64,
    pub k: f64,
    pub alpha: f64,
    pub u: f64,
    pub log_tol: f64,
    /// Upper bound on `x2`; far beyond any point with a usable distance budget.
    pub x2_cap: f64,
}

/// Largest gap `x2 − y` explored by the inner solver.
pub(crate) fn x2_gap_cap(eps: f64) -> f64 {
    (2.0 * eps).max(4.0)
}

impl ClassProblem {
    pub fn cut(&self, p: TwoPoint) -> usize {
        chernoff_cut(self.k * p.x2.max(self.y), self.log_tol)
    }

    pub fn eval(&self, p: TwoPoint) -> ClassEval {
        self.eval_to(p, self.cut(p))
    }

    pub fn eval_to(&self, p: TwoPoint, m: usize) -> ClassEval {
        let Self { y, k, alpha, u, .. } = *self;
        let (ky, k1, k2) = (k * y, k * p.x1, k * p.x2);
        let lq = p.q.ln();
        let l1q = (-p.q).ln_1p();
        let mut lp = Vec::with_capacity(m + 1);
        let mut l1 = Vec::with_capacity(m + 1);
        let mut l2 = Vec::with_capacity(m + 1);
        let mut la = Vec::with_capacity(m + 1);
        let mut lw = Vec::with_capacity(m + 1);
        for i in 0..=m as u64 {
            let p_ = ln_poi(ky, i);
            let a = ln_poi(k1, i);
            let b = ln_poi(k2, i);
            let mix = log_add_exp(lq + a, l1q + b);
            lp.push(p_);
            l1.push(a);
            l2.push(b);
            la.push(mix);
            lw.push(if mix == f64::NEG_INFINITY {
                f64::NEG_INFINITY
            } else {
                (1.0 - u) * mix + u * p_
            });
        }
        let log_n = log_sum_exp(&lw);
        let (d1, d2) = (y - p.x1, p.x2 - y);
        let log_d = log_add_exp(lq + alpha * d1, l1q + alpha * d2);
        let f = log_n - (1.0 - u) * log_d;

        let (mut s_q, mut s_x1, mut s_x2, mut s_u) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..=m {
            if lw[i] == f64::NEG_INFINITY {
                continue;
            }
            let w = (lw[i] - log_n).exp();
            let r1 = (l1[i] - la[i]).exp();
            let r2 = (l2[i] - la[i]).exp();
            let (r1m, r2m) = if i == 0 {
                (0.0, 0.0)
            } else {
                ((l1[i - 1] - la[i]).exp(), (l2[i - 1] - la[i]).exp())
            };
            s_q += w * (r1 - r2);
            s_x1 += w * (r1m - r1);
            s_x2 += w * (r2m - r2);
            s_u += w * (lp[i] - la[i]);
        }
        let e1 = (alpha * d1 - log_d).exp();
        let e2 = (alpha * d2 - log_d).exp();
        let q_identity = s_q - (e1 - e2);
        let qt = (lq + alpha * d1 - log_d).exp();
        let grad = [
            (1.0 - u) * q_identity,
            (1.0 - u) * p.q * (k * s_x1 + alpha * e1),
            (1.0 - u) * (1.0 - p.q) * (k * s_x2 - alpha * e2),
        ];
        ClassEval {
            f,
            grad,
            d_alpha: -(1.0 - u) * (qt * d1 + (1.0 - qt) * d2),
            d_u: s_u + log_d,
            log_n,
            log_d,
            q_identity,
        }
    }
}

fn check_outer(alpha: f64, u: f64) -> Result<()> {
    if !(alpha < 0.0) {
        return Err(Error::ConstraintViolation(format!("alpha must be negative, got {alpha}")));
    }
    if !(u > 0.0 && u < 1.0) {
        return Err(Error::ConstraintViolation(format!("u must lie in (0,1), got {u}")));
    }
    Ok(())
}

/// Class term `h · log[ Σ_i A_i^{1-u} P_i^u / D^{1-u} ]` with the `i`-sum cut at `plan.i_max`.
#[allow(clippy::too_many_arguments)]
pub fn class_objective(
    y: f64,
    h: usize,
    q: f64,
    x1: f64,
    x2: f64,
    alpha: f64,
    u: f64,
    k: f64,
    plan: &TruncationPlan,
) -> Result<f64> {
    check_outer(alpha, u)?;
    if !(0.0..=1.0).contains(&q) || !(x1 >= 0.0 && x1 <= y && y <= x2 && x2 > 0.0) {
        return Err(Error::ConstraintViolation(format!(
            "need q in [0,1] and 0 <= x1 <= y <= x2, got q={q}, x1={x1}, y={y}, x2={x2}"
        )));
    }
    let problem = ClassProblem {
        y,
        k,
        alpha,
        u,
        log_tol: DEFAULT_TAIL_TOL.ln(),
        x2_cap: f64::INFINITY,
    };
    Ok(h as f64 * problem.eval_to(TwoPoint { q, x1, x2 }, plan.i_max).f)
}

/// Starting point that makes the objective negative for small `|α|`.
pub fn small_alpha_start(y: f64, alpha: f64, u: f64, k: f64) -> TwoPoint {
    let tau = (-alpha * y * y / (u * k * k)).cbrt();
    TwoPoint {
        q: 0.5,
        x1: (y - tau).max(0.0),
        x2: y + tau,
    }
}

struct InnerOutcome {
    point: TwoPoint,
    eval: ClassEval,
    residual: f64,
}

/// Scaled gradient norm: derivatives with respect to `logit q`, `ln x1`, `ln x2`.
fn scaled_residual(p: TwoPoint, g: &[f64; 3], x1_active: bool) -> f64 {
    let gq = p.q * (1.0 - p.q) * g[0];
    let gx1 = if x1_active { 0.0 } else { p.x1 * g[1] };
    let gx2 = p.x2 * g[2];
    gq.abs().max(gx1.abs()).max(gx2.abs())
}

fn polish_inner(prob: &ClassProblem, start: TwoPoint) -> Option<InnerOutcome> {
    let y = prob.y;
    let mut p = start;
    if p.x1 < 1e-14 * y {
        p.x1 = 0.0;
    }
    let mut e = prob.eval(p);
    if !e.f.is_finite() {
        return None;
    }
    let mut x1_active = false;
    let mut residual = f64::INFINITY;
    for _ in 0..200 {
        x1_active = p.x1 == 0.0 && e.grad[1] <= 0.0;
        residual = scaled_residual(p, &e.grad, x1_active);
        if residual < 1e-13 {
            break;
        }
        let free: Vec<usize> = if x1_active { vec![0, 2] } else { vec![0, 1, 2] };
        let coord = |p: &TwoPoint, d: usize| match d {
            0 => p.q,
            1 => p.x1,
            _ => p.x2,
        };
        let set = |p: &mut TwoPoint, d: usize, v: f64| match d {
            0 => p.q = v,
            1 => p.x1 = v,
            _ => p.x2 = v,
        };
        // finite-difference Hessian of the analytic gradient, restricted to free coordinates
        let mut hess = vec![vec![0.0; free.len()]; free.len()];
        for (a, &da) in free.iter().enumerate() {
            let x = coord(&p, da);
            let (lo_room, hi_room) = match da {
                0 => (p.q, 1.0 - p.q),
                1 => (p.x1, y - p.x1),
                _ => (p.x2 - y, f64::INFINITY),
            };
            let h = 1e-6 * match da {
                0 => p.q.min(1.0 - p.q),
                1 => y,
                _ => p.x2,
            }
            .max(1e-300);
            let h = h.min(0.5 * hi_room);
            let mut plus = p;
            set(&mut plus, da, x + h);
            let gp = prob.eval(plus).grad;
            let (gm, span) = if lo_room > h {
                let mut minus = p;
                set(&mut minus, da, x - h);
                (prob.eval(minus).grad, 2.0 * h)
            } else {
                (e.grad, h)
            };
            for (b, &db) in free.iter().enumerate() {
                hess[b][a] = (gp[db] - gm[db]) / span;
            }
        }
        let g: Vec<f64> = free.iter().map(|&d| e.grad[d]).collect();
        let step = newton_ascent_step(&hess, &g).unwrap_or_else(|| {
            // diagonal-scaled gradient ascent when the Hessian is not negative definite
            free.iter()
                .map(|&d| {
                    let s = match d {
                        0 => p.q * (1.0 - p.q),
                        1 => p.x1.max(1e-3 * y),
                        _ => p.x2,
                    };
                    1e-2 * s * s * e.grad[d]
                })
                .collect()
        });
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let mut cand = p;
            for (a, &d) in free.iter().enumerate() {
                set(&mut cand, d, coord(&p, d) + t * step[a]);
            }
            if cand.x1 < 0.0 {
                cand.x1 = 0.0;
            }
            let feasible =
                cand.q > 0.0 && cand.q < 1.0 && cand.x1 < y && cand.x2 > y && cand.x2 <= prob.x2_cap;
            if feasible {
                let ec = prob.eval(cand);
                let rc = scaled_residual(cand, &ec.grad, cand.x1 == 0.0 && ec.grad[1] <= 0.0);
                let noise = 1e-14 * (1.0 + e.f.abs());
                if ec.f.is_finite() && (ec.f > e.f + noise || (ec.f >= e.f - noise && rc < residual)) {
                    p = cand;
                    e = ec;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    x1_active = x1_active || (p.x1 == 0.0 && e.grad[1] <= 0.0);
    residual = residual.min(scaled_residual(p, &e.grad, x1_active));
    Some(InnerOutcome {
        point: p,
        eval: e,
        residual,
    })
}

fn simplex_inner(prob: &ClassProblem, start: TwoPoint) -> TwoPoint {
    let y = prob.y;
    let to_point = |v: &[f64]| TwoPoint {
        q: logistic(v[0]),
        x1: y * (-v[1]).exp(),
        x2: y * v[2].exp(),
    };
    let x0 = [
        logit(start.q.clamp(1e-9, 1.0 - 1e-9)),
        -(start.x1.max(1e-12 * y) / y).ln(),
        (start.x2 / y).ln(),
    ];
    let r = nelder_mead(
        |v| {
            if v[1] <= 0.0 || v[2] <= 0.0 {
                return f64::INFINITY;
            }
            let p = to_point(v);
            if !(p.q > 0.0 && p.q < 1.0) || p.x2 > prob.x2_cap {
                return f64::INFINITY;
            }
            -prob.eval(p).f
        },
        &x0,
        &[1.0, 0.5 * x0[1].max(0.2), 0.5 * x0[2].max(0.2)],
        1e-11,
        1e-6,
        2000,
    );
    let mut p = to_point(&r.x);
    if r.x[1] > 35.0 {
        p.x1 = 0.0;
    }
    p
}

fn inner_starts(prob: &ClassProblem) -> Vec<TwoPoint> {
    let y = prob.y;
    let mut starts = vec![small_alpha_start(y, prob.alpha, prob.u, prob.k)];
    let last = starts[0];
    if last.x1 <= 0.0 || last.x2 <= y {
        starts.clear();
    }
    for &(q, r1, r2) in &[
        (0.5, 0.5, 1.5),
        (0.5, 1e-3, 2.0),
        (0.3, 0.2, 1.2),
        (0.7, 0.7, 3.0),
        (0.5, 0.9, 1.1),
    ] {
        starts.push(TwoPoint {
            q,
            x1: y * r1,
            x2: y * r2,
        });
    }
    starts
}

fn solve_inner(prob: &ClassProblem, warm: Option<TwoPoint>) -> Result<InnerOutcome> {
    if let Some(w) = warm {
        if let Some(out) = polish_inner(prob, w) {
            if out.residual < 1e-10 {
                return Ok(out);
            }
        }
    }
    let mut best: Option<InnerOutcome> = None;
    let mut starts = inner_starts(prob);
    if let Some(w) = warm {
        starts.insert(0, w);
    }
    for s in starts {
        let p = simplex_inner(prob, s);
        if let Some(out) = polish_inner(prob, p) {
            let better = match &best {
                None => true,
                Some(b) => out.eval.f > b.eval.f + 1e-13 * (1.0 + b.eval.f.abs())
                    || (out.eval.f > b.eval.f - 1e-13 * (1.0 + b.eval.f.abs()) && out.residual < b.residual),
            };
            if better {
                best = Some(out);
            }
        }
    }
    best.ok_or(Error::NoConvergence {
        what: "inner maximization",
        iterations: 0,
    })
}

/// Simplex-only solve used to rank outer grid points.
fn solve_inner_rough(prob: &ClassProblem, warm: Option<TwoPoint>) -> InnerOutcome {
    let starts = match warm {
        Some(w) => vec![w],
        None => inner_starts(prob),
    };
    let mut best: Option<InnerOutcome> = None;
    for s in starts {
        let point = simplex_inner(prob, s);
        let eval = prob.eval(point);
        if best.as_ref().is_none_or(|b| eval.f > b.eval.f) {
            best = Some(InnerOutcome {
                point,
                eval,
                residual: f64::INFINITY,
            });
        }
    }
    best.expect("at least one start")
}

fn solution_from(prob: &ClassProblem, count: usize, out: &InnerOutcome) -> ClassSolution {
    ClassSolution {
        y: prob.y,
        count,
        q: out.point.q,
        x1: out.point.x1,
        x2: out.point.x2,
        gamma: out.eval.log_n - out.eval.log_d,
        objective: count as f64 * out.eval.f,
    }
}

/// Maximize the class term over `(q, x1, x2)` for fixed `(α, u)`.
///
/// The returned point satisfies `0 ≤ x1 < y < x2`, `q ∈ (0,1)`, and its gradient in
/// `(logit q, ln x1, ln x2)` is below `cfg.tol` (the `x1` component is dropped when
/// the optimum sits on `x1 = 0`).
pub fn inner_maximize(
    y: f64,
    h: usize,
    alpha: f64,
    u: f64,
    k: f64,
    cfg: &OptimizerConfig,
) -> Result<ClassSolution> {
    check_outer(alpha, u)?;
    let prob = ClassProblem {
        y,
        k,
        alpha,
        u,
        log_tol: cfg.tail_tol.ln(),
        x2_cap: y + x2_gap_cap(0.0),
    };
    let out = solve_inner(&prob, None)?;
    if out.residual > cfg.tol.max(1e-10) {
        return Err(Error::NoConvergence {
            what: "inner maximization",
            iterations: 200,
        });
    }
    Ok(solution_from(&prob, h, &out))
}

/// `G(α, u) = ε α (1−u) + Σ_j h_j F_j*`, with every inner problem solved from scratch.
pub fn outer_objective(
    alpha: f64,
    u: f64,
    model: &HypothesisModel,
    k: f64,
    eps: f64,
    cfg: &OptimizerConfig,
) -> Result<f64> {
    check_outer(alpha, u)?;
    let outer = Outer::new(model, k, eps, cfg);
    Ok(outer.eval(alpha, u, false)?.value)
}

struct OuterEval {
    value: f64,
    grad: [f64; 2],
    solutions: Vec<ClassSolution>,
}

struct Outer<'a> {
    model: &'a HypothesisModel,
    k: f64,
    eps: f64,
    cfg: OptimizerConfig,
    warm: RefCell<Vec<Option<TwoPoint>>>,
}

impl<'a> Outer<'a> {
    fn new(model: &'a HypothesisModel, k: f64, eps: f64, cfg: &OptimizerConfig) -> Self {
        Self {
            model,
            k,
            eps,
            cfg: *cfg,
            warm: RefCell::new(vec![None; model.classes().len()]),
        }
    }

    fn problem(&self, y: f64, alpha: f64, u: f64) -> ClassProblem {
        ClassProblem {
            y,
            k: self.k,
            alpha,
            u,
            log_tol: self.cfg.tail_tol.ln(),
            x2_cap: y + x2_gap_cap(self.eps),
        }
    }

    fn eval(&self, alpha: f64, u: f64, use_warm: bool) -> Result<OuterEval> {
        self.eval_mode(alpha, u, use_warm, false)
    }

    fn eval_mode(&self, alpha: f64, u: f64, use_warm: bool, rough: bool) -> Result<OuterEval> {
        let mut value = self.eps * alpha * (1.0 - u);
        let mut grad = [self.eps * (1.0 - u), -self.eps * alpha];
        let mut solutions = Vec::with_capacity(self.model.classes().len());
        for (j, c) in self.model.classes().iter().enumerate() {
            let prob = self.problem(c.y, alpha, u);
            let warm = if use_warm { self.warm.borrow()[j] } else { None };
            let out = if rough {
                solve_inner_rough(&prob, warm)
            } else {
                solve_inner(&prob, warm)?
            };
            let h = c.count as f64;
            value += h * out.eval.f;
            grad[0] += h * out.eval.d_alpha;
            grad[1] += h * out.eval.d_u;
            self.warm.borrow_mut()[j] = Some(out.point);
            solutions.push(solution_from(&prob, c.count, &out));
        }
        Ok(OuterEval {
            value,
            grad,
            solutions,
        })
    }

    /// Newton polish on `(α, u)` using envelope gradients.
    fn polish(&self, mut alpha: f64, mut u: f64) -> Result<(f64, f64, OuterEval)> {
        let mut cur = self.eval(alpha, u, true)?;
        for _ in 0..60 {
            let res = (alpha * cur.grad[0]).abs().max(cur.grad[1].abs());
            if res < 1e-12 {
                break;
            }
            let ha = 1e-5 * alpha.abs();
            let hu = 1e-5 * u.min(1.0 - u);
            let ga_p = self.eval(alpha + ha, u, true)?.grad;
            let ga_m = self.eval(alpha - ha, u, true)?.grad;
            let gu_p = self.eval(alpha, u + hu, true)?.grad;
            let gu_m = self.eval(alpha, u - hu, true)?.grad;
            let hess = vec![
                vec![(ga_p[0] - ga_m[0]) / (2.0 * ha), (gu_p[0] - gu_m[0]) / (2.0 * hu)],
                vec![(ga_p[1] - ga_m[1]) / (2.0 * ha), (gu_p[1] - gu_m[1]) / (2.0 * hu)],
            ];
            // restore warm starts at the current point
            let _ = self.eval(alpha, u, true)?;
            let step = newton_descent_step(&hess, &cur.grad).unwrap_or_else(|| {
                let sa = alpha * alpha;
                let su = u * (1.0 - u);
                vec![-1e-2 * sa * cur.grad[0], -1e-2 * su * su * cur.grad[1]]
            });
            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..50 {
                let (na, nu) = (alpha + t * step[0], u + t * step[1]);
                if na < 0.0 && nu > 0.0 && nu < 1.0 {
                    let cand = self.eval(na, nu, true)?;
                    let cres = (na * cand.grad[0]).abs().max(cand.grad[1].abs());
                    let noise = 1e-14 * (1.0 + cur.value.abs());
                    if cand.value < cur.value - noise || (cand.value <= cur.value + noise && cres < res) {
                        alpha = na;
                        u = nu;
                        cur = cand;
                        accepted = true;
                        break;
                    }
                }
                t *= 0.5;
            }
            if !accepted {
                let _ = self.eval(alpha, u, true)?;
                break;
            }
        }
        Ok((alpha, u, cur))
    }
}

/// Solve for the optimal tester of `model` with a `Poi(k)` sample budget and distance `eps`.
pub fn optimize(
    model: &HypothesisModel,
    k: f64,
    eps: f64,
    cfg: &OptimizerConfig,
) -> Result<OptimalTesterModel> {
    if !(eps > 0.0) {
        return Err(Error::EpsOutOfRange(eps));
    }
    if !(k > 0.0) {
        return Err(Error::ConstraintViolation(format!("k must be positive, got {k}")));
    }
    let outer = Outer::new(model, k, eps, cfg);
    // coarse grid of starts: α = -k·10^e, u on a 9-point grid
    let mut grid: Vec<(f64, f64, f64)> = Vec::new();
    for ei in 0..=9 {
        let alpha = -k * 10f64.powf(-4.0 + 0.5 * ei as f64);
        for ui in 1..=9 {
            let u = ui as f64 / 10.0;
            // continuation along each row: only its first point starts cold
            if let Ok(ev) = outer.eval_mode(alpha, u, ui > 1, true) {
                if ev.value.is_finite() {
                    grid.push((ev.value, alpha, u));
                }
            }
        }
    }
    if grid.is_empty() {
        return Err(Error::NoConvergence {
            what: "outer grid",
            iterations: 0,
        });
    }
    grid.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut finals: Vec<(f64, f64, f64)> = Vec::new();
    for &(_, a0, u0) in grid.iter().take(3) {
        outer.warm.borrow_mut().iter_mut().for_each(|w| *w = None);
        let _ = outer.eval(a0, u0, false)?;
        let r = nelder_mead(
            |v| {
                let alpha = -v[0].exp();
                let u = logistic(v[1]);
                if !(u > 0.0 && u < 1.0) {
                    return f64::INFINITY;
                }
                outer.eval(alpha, u, true).map(|e| e.value).unwrap_or(f64::INFINITY)
            },
            &[(-a0).ln(), logit(u0)],
            &[0.3, 0.3],
            1e-14,
            1e-9,
            600,
        );
        let (alpha, u) = (-r.x[0].exp(), logistic(r.x[1]));
        let (alpha, u, ev) = outer.polish(alpha, u)?;
        finals.push((ev.value, alpha, u));
    }
    finals.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (best_value, alpha, u) = finals[0];
    let starts_disagree = finals
        .iter()
        .any(|f| (f.0 - best_value).abs() > 1e-7 * best_value.abs().max(1e-12));

    // final inner solutions from scratch, then re-polish from them
    let fresh = outer.eval(alpha, u, false)?;
    let (alpha, u, ev) = if fresh.value < best_value - 1e-12 * best_value.abs() {
        outer.polish(alpha, u)?
    } else {
        (alpha, u, outer.eval(alpha, u, true)?)
    };
    if !(ev.value < 0.0) {
        return Err(Error::NonNegativeOptimum(ev.value));
    }
    assemble_model(k, eps, alpha, u, ev.value, ev.solutions, cfg, starts_disagree)
}

#[allow(clippy::too_many_arguments)]
fn assemble_model(
    k: f64,
    eps: f64,
    alpha: f64,
    u: f64,
    delta_log: f64,
    mut classes: Vec<ClassSolution>,
    cfg: &OptimizerConfig,
    starts_disagree: bool,
) -> Result<OptimalTesterModel> {
    let n: usize = classes.iter().map(|c| c.count).sum();
    let max_rate = classes
        .iter()
        .map(|c| k * c.x2.max(c.y))
        .fold(0.0, f64::max);
    let truncation = crate::numerics::truncation_index(max_rate, cfg.tail_tol.ln());
    for c in classes.iter_mut() {
        c.gamma = gamma_of_class(c, alpha, u, k, &truncation);
    }
    let shift = compute_shift(k, eps, alpha, u, &classes, &truncation, n);
    Ok(OptimalTesterModel {
        k,
        eps,
        alpha,
        u,
        shift,
        delta_log,
        classes,
        truncation,
        starts_disagree,
    })
}

/// Shift `s = (T1 − T2)/n` equalizing the type-I and type-II Chernoff exponents.
///
/// `T1 = εα + Σ_j h_j γ_j` and `T2 = Σ_j h_j log Σ_i e^{(1−u)κ_ij} poi(k y_j, i)`.
pub fn compute_shift(
    k: f64,
    eps: f64,
    alpha: f64,
    u: f64,
    classes: &[ClassSolution],
    plan: &TruncationPlan,
    n: usize,
) -> f64 {
    let (t1, t2) = shift_terms(k, eps, alpha, u, classes, plan);
    (t1 - t2) / n as f64
}

pub(crate) fn shift_terms(
    k: f64,
    eps: f64,
    alpha: f64,
    u: f64,
    classes: &[ClassSolution],
    plan: &TruncationPlan,
) -> (f64, f64) {
    let t1 = eps * alpha + classes.iter().map(|c| c.count as f64 * c.gamma).sum::<f64>();
    let t2 = classes
        .iter()
        .map(|c| {
            let m = plan.i_max.max(chernoff_cut(k * c.x2.max(c.y), plan.tail_log_mass.min(-32.0)));
            let terms: Vec<f64> = (0..=m as u64)
                .map(|i| (1.0 - u) * kappa(c.y, c.two_point(), k, i) + ln_poi(k * c.y, i))
                .collect();
            c.count as f64 * log_sum_exp(&terms)
        })
        .sum();
    (t1, t2)
}

/// `g_j(x) = log Σ_i e^{−u κ_ij} poi(k x, i)` and its derivative in `x`.
pub fn tangent_curve(c: &ClassSolution, u: f64, k: f64, x: f64) -> (f64, f64) {
    let p = c.two_point();
    let m = chernoff_cut(k * x.max(c.x2).max(c.y), DEFAULT_TAIL_TOL.ln() - 10.0) + 1;
    let w: Vec<f64> = (0..=m as u64).map(|i| -u * kappa(c.y, p, k, i)).collect();
    let base: Vec<f64> = (0..m).map(|i| w[i] + ln_poi(k * x, i as u64)).collect();
    let shifted: Vec<f64> = (0..m).map(|i| w[i + 1] + ln_poi(k * x, i as u64)).collect();
    let g = log_sum_exp(&base);
    let slope = k * ((log_sum_exp(&shifted) - g).exp() - 1.0);
    (g, slope)
}

/// Maxima of `g_j(x) − α|x − y_j|` on the lower and upper branch, as `(x, value)` pairs.
pub fn branch_maxima(c: &ClassSolution, alpha: f64, u: f64, k: f64) -> [(f64, f64); 2] {
    let y = c.y;
    let value = |x: f64| tangent_curve(c, u, k, x).0 - alpha * (x - y).abs();
    let bisect = |mut lo: f64, mut hi: f64, slope: &dyn Fn(f64) -> f64| {
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if slope(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };
    // lower branch: derivative g'(x) + α, concave
    let lower_slope = |x: f64| tangent_curve(c, u, k, x).1 + alpha;
    let x_lo = if lower_slope(0.0) <= 0.0 {
        0.0
    } else if lower_slope(y) >= 0.0 {
        y
    } else {
        bisect(0.0, y, &lower_slope)
    };
    // upper branch: derivative g'(x) − α
    let upper_slope = |x: f64| tangent_curve(c, u, k, x).1 - alpha;
    let x_hi = if upper_slope(y) <= 0.0 {
        y
    } else {
        let mut hi = c.x2.max(2.0 * y);
        while upper_slope(hi) > 0.0 && hi < 1e6 * y {
            hi *= 2.0;
        }
        bisect(y, hi, &upper_slope)
    };
    [(x_lo, value(x_lo)), (x_hi, value(x_hi))]
}

/// `γ_j = max_{x ≥ 0} (g_j(x) − α|x − y_j|)` by concave maximization on each branch.
pub fn gamma_of_class(c: &ClassSolution, alpha: f64, u: f64, k: f64, _plan: &TruncationPlan) -> f64 {
    let [lo, hi] = branch_maxima(c, alpha, u, k);
    lo.1.max(hi.1)
}

/// Recompute the inner solution at `(α, u)` for a stored class, warm-started from it.
pub(crate) fn resolve_class(
    c: &ClassSolution,
    alpha: f64,
    u: f64,
    k: f64,
    eps: f64,
    cfg: &OptimizerConfig,
) -> Result<ClassSolution> {
    let prob = ClassProblem {
        y: c.y,
        k,
        alpha,
        u,
        log_tol: cfg.tail_tol.ln(),
        x2_cap: c.y + x2_gap_cap(eps),
    };
    let out = solve_inner(&prob, Some(c.two_point()))?;
    Ok(solution_from(&prob, c.count, &out))
}

pub(crate) fn class_eval(c: &ClassSolution, alpha: f64, u: f64, k: f64, cfg: &OptimizerConfig) -> ClassEval {
    ClassProblem {
        y: c.y,
        k,
        alpha,
        u,
        log_tol: cfg.tail_tol.ln(),
        x2_cap: f64::INFINITY,
    }
    .eval(c.two_point())
}

/// Outer objective at `(α, u)` with inner problems warm-started from a stored model.
pub(crate) fn outer_value_near(
    model: &OptimalTesterModel,
    alpha: f64,
    u: f64,
    cfg: &OptimizerConfig,
) -> Result<f64> {
    let mut v = model.eps * alpha * (1.0 - u);
    for c in &model.classes {
        v += resolve_class(c, alpha, u, model.k, model.eps, cfg)?.objective;
    }
    Ok(v)
}

/// First-order diagnostics for a model (see [`StationarityReport`]).
pub fn stationarity_report(
    model: &OptimalTesterModel,
    cfg: &OptimizerConfig,
    grid_points: usize,
) -> Result<StationarityReport> {
    let (alpha, u, k) = (model.alpha, model.u, model.k);
    let tilted_total: f64 = model
        .classes
        .iter()
        .map(|c| {
            let qt = c.tilted_q(alpha);
            c.count as f64 * (qt * (c.y - c.x1) + (1.0 - qt) * (c.x2 - c.y))
        })
        .sum();
    let alpha_residual = (tilted_total - model.eps) / model.eps;

    let q_residuals = model
        .classes
        .iter()
        .map(|c| class_eval(c, alpha, u, k, cfg).q_identity)
        .collect();

    let h = 1e-5;
    let u_residual =
        (outer_value_near(model, alpha, u + h, cfg)? - outer_value_near(model, alpha, u - h, cfg)?)
            / (2.0 * h);

    let mut tangency = 0.0f64;
    let mut kappa_min = f64::INFINITY;
    for (j, c) in model.classes.iter().enumerate() {
        let [lo, hi] = branch_maxima(c, alpha, u, k);
        let gamma = c.gamma;
        tangency = tangency.max((lo.1 - gamma).abs()).max((hi.1 - gamma).abs());
        // heights at the two support points
        let at = |x: f64| tangent_curve(c, u, k, x).0 - alpha * (x - c.y).abs();
        tangency = tangency.max((at(c.x1) - gamma).abs()).max((at(c.x2) - gamma).abs());
        let top = 3.0 * c.x2;
        for g in 0..grid_points {
            let x = top * g as f64 / (grid_points.max(2) - 1) as f64;
            tangency = tangency.max(at(x) - gamma);
        }
        for i in 0..model.truncation.i_max.saturating_sub(1) as u64 {
            let d2 = model.kappa(j, i + 2) - 2.0 * model.kappa(j, i + 1) + model.kappa(j, i);
            kappa_min = kappa_min.min(d2);
        }
    }
    if kappa_min == f64::INFINITY {
        kappa_min = 0.0;
    }

    let s_derivative_at_zero = crate::adversary::level2_derivative_at_zero(model);

    Ok(StationarityReport {
        alpha_residual,
        u_residual,
        q_residuals,
        tangency_max_violation: tangency,
        s_derivative_at_zero,
        kappa_min_second_difference: kappa_min,
    })
}

/// Default truncation for an arbitrary class set at sample budget `k`.
pub fn plan_for(classes: &[ClassSolution], k: f64) -> TruncationPlan {
    default_plan(
        classes
            .iter()
            .map(|c| k * c.x2.max(c.y))
            .fold(0.0, f64::max),
    )
}

#[cfg(test)]
mod tests {
    use std::sync::OnceLock;

    use statrs::distribution::{Discrete, Poisson};

    use super::*;

    fn pmf(rate: f64, i: u64) -> f64 {
        if rate == 0.0 {
            return if i == 0 { 1.0 } else { 0.0 };
        }
        Poisson::new(rate).unwrap().pmf(i)
    }

    /// Linear-space class term summed to a fixed, generous cutoff.
    #[allow(clippy::too_many_arguments)]
    fn direct_class(y: f64, h: usize, q: f64, x1: f64, x2: f64, alpha: f64, u: f64, k: f64) -> f64 {
        let top = (k * x2.max(y) * 3.0 + 60.0) as u64;
        let num: f64 = (0..top)
            .map(|i| {
                let a = q * pmf(k * x1, i) + (1.0 - q) * pmf(k * x2, i);
                a.powf(1.0 - u) * pmf(k * y, i).powf(u)
            })
            .sum();
        let den = q * (alpha * (y - x1)).exp() + (1.0 - q) * (alpha * (x2 - y)).exp();
        h as f64 * (num.ln() - (1.0 - u) * den.ln())
    }

    fn uniform10() -> &'static OptimalTesterModel {
        static M: OnceLock<OptimalTesterModel> = OnceLock::new();
        M.get_or_init(|| {
            optimize(&HypothesisModel::uniform(10), 10.0, 0.9, &OptimizerConfig::default()).unwrap()
        })
    }

    fn heavy() -> &'static OptimalTesterModel {
        static M: OnceLock<OptimalTesterModel> = OnceLock::new();
        M.get_or_init(|| {
            optimize(&HypothesisModel::heavy_element(80), 40.0, 0.9, &OptimizerConfig::default())
                .unwrap()
        })
    }

    #[test]
    fn kappa_degenerate_and_linear() {
        let p = TwoPoint { q: 0.3, x1: 0.2, x2: 0.2 };
        for i in 0..20 {
            assert!(kappa(0.2, p, 7.0, i).abs() < 1e-14);
        }
        let (y, x1, k) = (0.2, 0.05, 10.0);
        let p = TwoPoint { q: 1.0, x1, x2: 0.4 };
        for i in 0..30 {
            let expect = k * (y - x1) + i as f64 * (x1 / y).ln();
            assert!((kappa(y, p, k, i) - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn class_objective_identity_and_direct_oracle() {
        let plan = default_plan(10.0 * 0.3);
        let v = class_objective(0.1, 4, 0.5, 0.1, 0.1, -1.0, 0.5, 10.0, &plan).unwrap();
        assert!(v.abs() < 1e-13);

        for &(y, q, x1, x2, alpha, u, k) in &[
            (0.1, 0.4, 0.03, 0.25, -1.5, 0.45, 10.0),
            (0.5, 0.3, 0.0, 0.9, -6.0, 0.2, 40.0),
            (0.00625, 0.55, 0.001, 0.02, -5.0, 0.8, 40.0),
        ] {
            let plan = default_plan(k * x2);
            let got = class_objective(y, 3, q, x1, x2, alpha, u, k, &plan).unwrap();
            let wide = TruncationPlan { i_max: plan.i_max + 50, ..plan };
            let wider = class_objective(y, 3, q, x1, x2, alpha, u, k, &wide).unwrap();
            assert!((got - wider).abs() < 1e-10, "{got} vs {wider}");
            let direct = direct_class(y, 3, q, x1, x2, alpha, u, k);
            assert!((got - direct).abs() < 1e-10, "{got} vs {direct}");
        }
    }

    #[test]
    fn class_objective_rejects_bad_parameters() {
        let plan = default_plan(5.0);
        assert!(matches!(
            class_objective(0.1, 1, 0.5, 0.05, 0.2, 1.0, 0.5, 10.0, &plan),
            Err(Error::ConstraintViolation(_))
        ));
        assert!(class_objective(0.1, 1, 0.5, 0.05, 0.2, -1.0, 1.0, 10.0, &plan).is_err());
        assert!(class_objective(0.1, 1, 0.5, 0.15, 0.2, -1.0, 0.5, 10.0, &plan).is_err());
    }

    #[test]
    fn small_alpha_start_is_negative() {
        // the whole program, ε α (1-u) included, goes negative as α → 0⁻
        for p in [HypothesisModel::uniform(10), HypothesisModel::heavy_element(80)] {
            for &k in &[10.0, 40.0] {
                for &scale in &[1e-2, 1e-3, 1e-4] {
                    let alpha = -k * scale;
                    let mut g = 0.9 * alpha * 0.5;
                    for c in p.classes() {
                        let s = small_alpha_start(c.y, alpha, 0.5, k);
                        g += direct_class(c.y, c.count, s.q, s.x1, s.x2, alpha, 0.5, k);
                    }
                    assert!(g < 0.0, "k={k} alpha={alpha}: {g}");
                }
            }
        }
    }

    #[test]
    fn inner_beats_brute_force_grid() {
        let cfg = OptimizerConfig::default();
        for &(y, alpha, u, k) in &[(0.1, -1.5, 0.46, 10.0), (0.00625, -5.5, 0.45, 40.0)] {
            let sol = inner_maximize(y, 1, alpha, u, k, &cfg).unwrap();
            assert!(sol.x1 >= 0.0 && sol.x1 < y && y < sol.x2);
            assert!(sol.q > 0.0 && sol.q < 1.0);
            let steps = 40;
            let mut best = f64::NEG_INFINITY;
            for a in 0..steps {
                let q = (a as f64 + 0.5) / steps as f64;
                for b in 0..steps {
                    let x1 = y * b as f64 / steps as f64;
                    for c in 1..=steps {
                        let x2 = y * (1.0 + 4.0 * c as f64 / steps as f64);
                        best = best.max(direct_class(y, 1, q, x1, x2, alpha, u, k));
                    }
                }
            }
            assert!(best <= sol.objective + 1e-6, "grid {best} > {}", sol.objective);
            let init = small_alpha_start(y, alpha, u, k);
            if init.x1 > 0.0 {
                assert!(direct_class(y, 1, init.q, init.x1, init.x2, alpha, u, k) <= sol.objective + 1e-12);
            }
            let prob = ClassProblem { y, k, alpha, u, log_tol: cfg.tail_tol.ln(), x2_cap: f64::INFINITY };
            let e = prob.eval(sol.two_point());
            assert!(e.q_identity.abs() < 1e-9);
        }
    }

    #[test]
    fn analytic_gradient_matches_differences() {
        let prob = ClassProblem { y: 0.1, k: 10.0, alpha: -1.3, u: 0.4, log_tol: -60.0, x2_cap: f64::INFINITY };
        let p = TwoPoint { q: 0.37, x1: 0.04, x2: 0.23 };
        let e = prob.eval(p);
        let h = 1e-6;
        let fd = |dp: TwoPoint| prob.eval(dp).f;
        let gq = (fd(TwoPoint { q: p.q + h, ..p }) - fd(TwoPoint { q: p.q - h, ..p })) / (2.0 * h);
        let g1 = (fd(TwoPoint { x1: p.x1 + h, ..p }) - fd(TwoPoint { x1: p.x1 - h, ..p })) / (2.0 * h);
        let g2 = (fd(TwoPoint { x2: p.x2 + h, ..p }) - fd(TwoPoint { x2: p.x2 - h, ..p })) / (2.0 * h);
        assert!((gq - e.grad[0]).abs() < 1e-6);
        assert!((g1 - e.grad[1]).abs() < 1e-6);
        assert!((g2 - e.grad[2]).abs() < 1e-6);
        let pa = ClassProblem { alpha: prob.alpha + h, ..prob }.eval(p).f;
        let ma = ClassProblem { alpha: prob.alpha - h, ..prob }.eval(p).f;
        assert!(((pa - ma) / (2.0 * h) - e.d_alpha).abs() < 1e-6);
        let pu = ClassProblem { u: prob.u + h, ..prob }.eval(p).f;
        let mu = ClassProblem { u: prob.u - h, ..prob }.eval(p).f;
        assert!(((pu - mu) / (2.0 * h) - e.d_u).abs() < 1e-6);
    }

    #[test]
    fn uniform_optimum_is_stationary() {
        let m = uniform10();
        let cfg = OptimizerConfig::default();
        assert!(m.delta_log < 0.0 && m.alpha < 0.0 && m.u > 0.0 && m.u < 1.0);
        m.validate().unwrap();
        let r = stationarity_report(m, &cfg, 2000).unwrap();
        assert!(r.is_finite());
        assert!(r.alpha_residual.abs() < 1e-6, "{r:?}");
        assert!(r.u_residual.abs() < 1e-5, "{r:?}");
        assert!(r.q_residuals.iter().all(|q| q.abs() < 1e-6), "{r:?}");
        assert!(r.tangency_max_violation < 1e-8, "{r:?}");
        assert!(r.s_derivative_at_zero.abs() < 1e-6, "{r:?}");
        assert!(r.kappa_min_second_difference >= -1e-12, "{r:?}");
    }

    #[test]
    fn uniform_optimum_matches_coarse_minimax_grid() {
        // independent saddle search: local (α, u) grid, local (q, x1, x2) grid
        let m = uniform10();
        let c = &m.classes[0];
        let n = 21;
        let mut outer_best = f64::INFINITY;
        for ia in 0..n {
            let alpha = m.alpha * (0.9 + 0.2 * ia as f64 / (n - 1) as f64);
            for iu in 0..n {
                let u = m.u - 0.05 + 0.1 * iu as f64 / (n - 1) as f64;
                let mut inner = f64::NEG_INFINITY;
                let g = 15;
                for a in 0..g {
                    let q = c.q + 0.1 * (a as f64 / (g - 1) as f64 - 0.5);
                    for b in 0..g {
                        let x1 = c.x1 * (0.7 + 0.6 * b as f64 / (g - 1) as f64);
                        for d in 0..g {
                            let x2 = c.x2 * (0.9 + 0.2 * d as f64 / (g - 1) as f64);
                            inner = inner.max(direct_class(c.y, c.count, q, x1, x2, alpha, u, m.k));
                        }
                    }
                }
                outer_best = outer_best.min(m.eps * alpha * (1.0 - u) + inner);
            }
        }
        assert!((outer_best - m.delta_log).abs() < 1e-3, "{outer_best} vs {}", m.delta_log);
    }

    #[test]
    fn outer_objective_behaviour() {
        let m = uniform10();
        let p = HypothesisModel::uniform(10);
        let cfg = OptimizerConfig::default();
        let v = outer_objective(m.alpha, m.u, &p, 10.0, 0.9, &cfg).unwrap();
        assert!((v - m.delta_log).abs() < 1e-9);
        assert!(v <= 0.0);
        let again = outer_objective(m.alpha, m.u, &p, 10.0, 0.9, &cfg).unwrap();
        assert_eq!(v, again);
        let tiny = outer_objective(-1e-3, 0.5, &p, 10.0, 0.9, &cfg).unwrap();
        assert!(tiny < 0.0);
        assert!(outer_objective(0.5, 0.5, &p, 10.0, 0.9, &cfg).is_err());
    }

    #[test]
    fn eps_must_be_positive() {
        let p = HypothesisModel::uniform(4);
        assert!(matches!(
            optimize(&p, 4.0, 0.0, &OptimizerConfig::default()),
            Err(Error::EpsOutOfRange(_))
        ));
    }

    #[test]
    fn shift_equalizes_exponents() {
        for m in [uniform10(), heavy()] {
            let (t1, t2) = shift_terms(m.k, m.eps, m.alpha, m.u, &m.classes, &m.truncation);
            let n = m.n() as f64;
            assert!((m.shift - (t1 - t2) / n).abs() < 1e-15);
            assert!(((1.0 - m.u) * t1 + m.u * t2 - m.delta_log).abs() < 1e-8);
            assert!((m.type1_exponent(1.0 - m.u) - m.delta_log).abs() < 1e-8);
            assert!((m.type2_exponent_tilted(-m.u) - m.delta_log).abs() < 1e-8);
            // direct type-I oracle in linear space
            let direct: f64 = m
                .classes
                .iter()
                .enumerate()
                .map(|(j, c)| {
                    let s: f64 = (0..200u64)
                        .map(|i| ((1.0 - m.u) * m.coefficient(j, i)).exp() * pmf(m.k * c.y, i))
                        .sum();
                    c.count as f64 * s.ln()
                })
                .sum();
            assert!((direct - m.delta_log).abs() < 1e-8, "{direct} vs {}", m.delta_log);
        }
        let classes = uniform10().classes.clone();
        let mut same = classes.clone();
        // T1 = T2 forces a zero shift
        let (t1, t2) = shift_terms(10.0, 0.9, -1.0, 0.5, &classes, &uniform10().truncation);
        same[0].gamma += (t2 - t1) / 10.0;
        let s = compute_shift(10.0, 0.9, -1.0, 0.5, &same, &uniform10().truncation, 10);
        assert!(s.abs() < 1e-12);
    }

    #[test]
    fn gamma_tangency() {
        for m in [uniform10(), heavy()] {
            for c in &m.classes {
                let [lo, hi] = branch_maxima(c, m.alpha, m.u, m.k);
                assert!((lo.1 - hi.1).abs() < 1e-8, "{lo:?} {hi:?}");
                assert!((lo.0 - c.x1).abs() < 1e-5 * c.y + 1e-12);
                assert!((hi.0 - c.x2).abs() < 1e-5 * c.y);
                let at = |x: f64| tangent_curve(c, m.u, m.k, x).0 - m.alpha * (x - c.y).abs();
                assert!(at(c.y) <= c.gamma + 1e-12);
                assert!((at(c.x1) - c.gamma).abs() < 1e-8);
                assert!((at(c.x2) - c.gamma).abs() < 1e-8);
                for g in 0..2000 {
                    let x = 3.0 * c.x2 * g as f64 / 1999.0;
                    assert!(at(x) <= c.gamma + 1e-8, "x={x}");
                }
            }
        }
    }

    #[test]
    fn tangent_curve_slope_matches_difference() {
        let c = &heavy().classes[1];
        for &x in &[0.0, 0.003, 0.0125] {
            let h = 1e-7;
            let lo = if x > h { x - h } else { x };
            let fd = (tangent_curve(c, 0.45, 40.0, x + h).0 - tangent_curve(c, 0.45, 40.0, lo).0) / (x + h - lo);
            let (_, slope) = tangent_curve(c, 0.45, 40.0, x);
            assert!((fd - slope).abs() < 1e-4 * (1.0 + slope.abs()), "{fd} {slope}");
        }
    }

    #[test]
    fn kappa_convex_at_optimum() {
        for m in [uniform10(), heavy()] {
            for j in 0..m.classes.len() {
                for i in 0..m.truncation.i_max as u64 {
                    let d2 = m.kappa(j, i + 2) - 2.0 * m.kappa(j, i + 1) + m.kappa(j, i);
                    assert!(d2 >= -1e-12, "class {j}, i {i}: {d2}");
                }
            }
        }
    }

    #[test]
    fn subdivision_scales_exponent() {
        let base = uniform10();
        let sub = optimize(
            &HypothesisModel::uniform(10).subdivide(3),
            30.0,
            0.9,
            &OptimizerConfig::default(),
        )
        .unwrap();
        let rel = (sub.delta_log - 3.0 * base.delta_log).abs() / (3.0 * base.delta_log).abs();
        assert!(rel < 1e-6, "{rel}");
        assert!((sub.u - base.u).abs() < 1e-6);
        assert!((sub.alpha / 3.0 - base.alpha).abs() < 1e-6 * base.alpha.abs());
        let (a, b) = (&sub.classes[0], &base.classes[0]);
        assert!((a.q - b.q).abs() < 1e-6);
        assert!((a.x1 * 3.0 - b.x1).abs() < 1e-6 * b.y);
        assert!((a.x2 * 3.0 - b.x2).abs() < 1e-6 * b.y);
    }

    #[test]
    fn chernoff_cut_is_sufficient() {
        for &rate in &[0.0, 0.3, 4.0, 37.0] {
            let m = chernoff_cut(rate, -32.0);
            assert!(crate::numerics::log_upper_tail(rate, m) < -32.0);
        }
    }
}
