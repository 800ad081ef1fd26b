use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone)]
pub struct LmOptions {
    pub max_iterations: usize,
    /// Stop when an accepted step lowers the cost by less than this fraction.
    pub f_tol: f64,
    /// Stop when the step is this small relative to the parameter norm.
    pub x_tol: f64,
    /// Relative forward-difference step for the Jacobian.
    pub fd_step: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        LmOptions { max_iterations: 200, f_tol: 1e-14, x_tol: 1e-12, fd_step: 1e-7 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmResult {
    pub x: Vec<f64>,
    /// Half the squared residual norm.
    pub cost: f64,
    pub iterations: usize,
    pub evaluations: usize,
}

fn half_norm2(r: &[f64]) -> f64 {
    0.5 * r.iter().map(|v| v * v).sum::<f64>()
}

/// Levenberg–Marquardt with Marquardt diagonal scaling and a forward-difference
/// Jacobian. `residuals(x, out)` overwrites `out` with the residual vector.
pub fn levenberg_marquardt(mut residuals: impl FnMut(&[f64], &mut Vec<f64>), x0: &[f64], opts: &LmOptions) -> LmResult {
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut r = Vec::new();
    residuals(&x, &mut r);
    let mut evaluations = 1;
    let m = r.len();
    let mut cost = half_norm2(&r);
    let mut damping = 1e-3;
    let mut jac = DMatrix::<f64>::zeros(m, n);
    let mut trial = Vec::new();
    let mut iterations = 0;

    if !cost.is_finite() {
        return LmResult { x, cost, iterations, evaluations };
    }

    'outer: while iterations < opts.max_iterations {
        iterations += 1;
        for j in 0..n {
            let h = opts.fd_step * libm::fabs(x[j]).max(1.0);
            let saved = x[j];
            x[j] = saved + h;
            residuals(&x, &mut trial);
            evaluations += 1;
            x[j] = saved;
            for i in 0..m {
                jac[(i, j)] = (trial[i] - r[i]) / h;
            }
        }
        let jt = jac.transpose();
        let jtj = &jt * &jac;
        let grad = &jt * DVector::from_column_slice(&r);
        loop {
            let mut a = jtj.clone();
            for j in 0..n {
                a[(j, j)] += damping * jtj[(j, j)].max(1e-12);
            }
            let step = match a.clone().cholesky() {
                Some(ch) => ch.solve(&(-&grad)),
                None => match a.lu().solve(&(-&grad)) {
                    Some(s) => s,
                    None => {
                        damping *= 10.0;
                        if damping > 1e16 {
                            break 'outer;
                        }
                        continue;
                    }
                },
            };
            let candidate: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            residuals(&candidate, &mut trial);
            evaluations += 1;
            let new_cost = half_norm2(&trial);
            if new_cost.is_finite() && new_cost < cost {
                let rel_drop = (cost - new_cost) / cost.max(1e-300);
                let xnorm = libm::sqrt(x.iter().map(|v| v * v).sum::<f64>());
                let snorm = step.norm();
                x = candidate;
                core::mem::swap(&mut r, &mut trial);
                cost = new_cost;
                damping = (damping / 3.0).max(1e-15);
                if rel_drop < opts.f_tol || snorm < opts.x_tol * (xnorm + opts.x_tol) || cost == 0.0 {
                    break 'outer;
                }
                break;
            }
            damping *= 4.0;
            if damping > 1e16 {
                break 'outer;
            }
        }
    }
    LmResult { x, cost, iterations, evaluations }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fits_exponential_decay() {
        let ts: Vec<f64> = (0..20).map(|i| i as f64 * 0.25).collect();
        let ys: Vec<f64> = ts.iter().map(|t| 2.5 * libm::exp(-1.3 * t)).collect();
        let res = levenberg_marquardt(
            |p, out| {
                out.clear();
                out.extend(ts.iter().zip(&ys).map(|(t, y)| p[0] * libm::exp(-p[1] * t) - y));
            },
            &[1.0, 0.5],
            &LmOptions::default(),
        );
        assert!((res.x[0] - 2.5).abs() < 1e-6 && (res.x[1] - 1.3).abs() < 1e-6);
        assert!(res.cost < 1e-12);
    }
}
