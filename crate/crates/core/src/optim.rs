//! Small-dimensional local optimization helpers used by the tester optimizer.

use nalgebra::{DMatrix, DVector};

/// Outcome of a simplex run.
#[derive(Debug, Clone)]
pub(crate) struct SimplexResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
    pub converged: bool,
}

/// Nelder-Mead minimization with adaptive coefficients and one restart from the
/// converged vertex. Non-finite objective values are treated as `+∞`, which lets
/// callers encode hard constraints.
pub(crate) fn nelder_mead<F>(
    mut f: F,
    x0: &[f64],
    step: &[f64],
    f_tol: f64,
    x_tol: f64,
    max_evals: usize,
) -> SimplexResult
where
    F: FnMut(&[f64]) -> f64,
{
    let mut eval = |x: &[f64]| {
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let mut evaluations = 0;
    let mut start = x0.to_vec();
    let mut best = SimplexResult {
        x: start.clone(),
        value: f64::INFINITY,
        evaluations: 0,
        converged: false,
    };
    for round in 0..2 {
        let scale = if round == 0 { 1.0 } else { 0.1 };
        let r = simplex_round(&mut eval, &start, step, scale, f_tol, x_tol, max_evals - evaluations.min(max_evals));
        evaluations += r.evaluations;
        let improved = r.value < best.value - f_tol * (1.0 + r.value.abs());
        best = SimplexResult {
            x: r.x,
            value: r.value,
            evaluations,
            converged: r.converged,
        };
        if !improved && round > 0 {
            break;
        }
        start = best.x.clone();
        if evaluations >= max_evals {
            break;
        }
    }
    best
}

fn simplex_round<F>(
    f: &mut F,
    x0: &[f64],
    step: &[f64],
    scale: f64,
    f_tol: f64,
    x_tol: f64,
    max_evals: usize,
) -> SimplexResult
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    let nf = n as f64;
    let (alpha, beta, gamma, delta) = (
        1.0,
        1.0 + 2.0 / nf,
        0.75 - 1.0 / (2.0 * nf),
        1.0 - 1.0 / nf,
    );
    let mut pts: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    pts.push(x0.to_vec());
    for i in 0..n {
        let mut p = x0.to_vec();
        p[i] += step[i] * scale;
        pts.push(p);
    }
    let mut vals: Vec<f64> = pts.iter().map(|p| f(p)).collect();
    let mut evaluations = n + 1;
    let mut converged = false;

    while evaluations < max_evals {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        pts = order.iter().map(|&i| pts[i].clone()).collect();
        vals = order.iter().map(|&i| vals[i]).collect();

        let spread = (vals[n] - vals[0]).abs();
        let size = pts[1..]
            .iter()
            .flat_map(|p| p.iter().zip(&pts[0]).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if vals[0].is_finite() && spread <= f_tol * (1.0 + vals[0].abs()) && size <= x_tol {
            converged = true;
            break;
        }

        let centroid: Vec<f64> = (0..n)
            .map(|d| pts[..n].iter().map(|p| p[d]).sum::<f64>() / nf)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&pts[n])
                .map(|(c, w)| c + t * (c - w))
                .collect()
        };

        let xr = along(alpha);
        let fr = f(&xr);
        evaluations += 1;
        if fr < vals[0] {
            let xe = along(beta);
            let fe = f(&xe);
            evaluations += 1;
            if fe < fr {
                pts[n] = xe;
                vals[n] = fe;
            } else {
                pts[n] = xr;
                vals[n] = fr;
            }
            continue;
        }
        if fr < vals[n - 1] {
            pts[n] = xr;
            vals[n] = fr;
            continue;
        }
        let (xc, fc) = if fr < vals[n] {
            let xc = along(gamma);
            let fc = f(&xc);
            (xc, fc)
        } else {
            let xc = along(-gamma);
            let fc = f(&xc);
            (xc, fc)
        };
        evaluations += 1;
        if fc < vals[n].min(fr) {
            pts[n] = xc;
            vals[n] = fc;
            continue;
        }
        // shrink toward the best vertex
        for i in 1..=n {
            let p: Vec<f64> = pts[i]
                .iter()
                .zip(&pts[0])
                .map(|(a, b)| b + delta * (a - b))
                .collect();
            vals[i] = f(&p);
            pts[i] = p;
        }
        evaluations += n;
    }
    let best = (0..=n)
        .min_by(|&a, &b| vals[a].total_cmp(&vals[b]))
        .unwrap_or(0);
    SimplexResult {
        x: pts[best].clone(),
        value: vals[best],
        evaluations,
        converged,
    }
}

/// Solve `H δ = -g` for a symmetric Hessian of a *maximization* problem.
///
/// Returns `None` when `-H` is not positive definite.
pub(crate) fn newton_ascent_step(hessian: &[Vec<f64>], grad: &[f64]) -> Option<Vec<f64>> {
    let n = grad.len();
    if n == 0 {
        return Some(Vec::new());
    }
    let neg_h = DMatrix::from_fn(n, n, |i, j| -0.5 * (hessian[i][j] + hessian[j][i]));
    let chol = neg_h.cholesky()?;
    let g = DVector::from_column_slice(grad);
    Some(chol.solve(&g).iter().copied().collect())
}

/// Solve `H δ = -g` for a *minimization* problem; `None` unless `H` is positive definite.
pub(crate) fn newton_descent_step(hessian: &[Vec<f64>], grad: &[f64]) -> Option<Vec<f64>> {
    let n = grad.len();
    let h = DMatrix::from_fn(n, n, |i, j| 0.5 * (hessian[i][j] + hessian[j][i]));
    let chol = h.cholesky()?;
    let g = DVector::from_column_slice(grad);
    Some(chol.solve(&g).iter().map(|v| -v).collect())
}
