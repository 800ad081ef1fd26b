use alloc::vec::Vec;

#[derive(Debug, Clone)]
pub struct NelderMeadOptions {
    pub max_evals: usize,
    /// Absolute spread of objective values across the simplex at convergence.
    pub f_tol: f64,
    /// Relative spread of vertices around the best point at convergence.
    pub x_tol: f64,
    /// Fresh-simplex restarts after a converged run, to guard against collapse.
    pub restarts: usize,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        NelderMeadOptions { max_evals: 4000, f_tol: 1e-6, x_tol: 1e-6, restarts: 1 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub evals: usize,
    pub iterations: usize,
    pub converged: bool,
}

/// Derivative-free simplex minimization of `f` from `x0` with per-coordinate
/// initial steps `step`. Non-finite objective values are treated as `+inf`.
pub fn nelder_mead(mut f: impl FnMut(&[f64]) -> f64, x0: &[f64], step: &[f64], opts: &NelderMeadOptions) -> Minimum {
    let mut eval = |x: &[f64]| {
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };
    let mut best = run(&mut eval, x0, step, opts, opts.max_evals);
    let mut restarts = 0;
    while best.converged && restarts < opts.restarts && best.evals < opts.max_evals {
        restarts += 1;
        let small: Vec<f64> =
            step.iter().zip(&best.x).map(|(s, x)| (0.1 * s).max(1e-4 * libm::fabs(*x)).max(1e-10)).collect();
        let again = run(&mut eval, &best.x, &small, opts, opts.max_evals - best.evals);
        let improved = best.f - again.f;
        let evals = best.evals + again.evals;
        let iterations = best.iterations + again.iterations;
        let settled = improved <= opts.f_tol;
        if again.f <= best.f {
            best = again;
        }
        best.evals = evals;
        best.iterations = iterations;
        if settled {
            break;
        }
    }
    best
}

fn run(
    eval: &mut impl FnMut(&[f64]) -> f64,
    x0: &[f64],
    step: &[f64],
    opts: &NelderMeadOptions,
    budget: usize,
) -> Minimum {
    let n = x0.len();
    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(x0.to_vec());
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += if step[i] != 0.0 { step[i] } else { 1e-3 };
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| eval(v)).collect();
    let mut evals = n + 1;
    let mut iterations = 0;
    let mut converged = false;
    let mut order: Vec<usize> = (0..=n).collect();

    while evals < budget {
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        let (ib, iw, isw) = (order[0], order[n], order[n - 1]);
        let spread = values[iw] - values[ib];
        let diameter = simplex
            .iter()
            .flat_map(|v| v.iter().zip(&simplex[ib]).map(|(a, b)| libm::fabs(a - b) / (1.0 + libm::fabs(*b))))
            .fold(0.0, f64::max);
        if spread <= opts.f_tol && diameter <= opts.x_tol {
            converged = true;
            break;
        }
        iterations += 1;

        let mut centroid = alloc::vec![0.0; n];
        for &i in order.iter().take(n) {
            for (c, x) in centroid.iter_mut().zip(&simplex[i]) {
                *c += x / n as f64;
            }
        }
        let along = |t: f64| -> Vec<f64> { centroid.iter().zip(&simplex[iw]).map(|(c, w)| c + t * (c - w)).collect() };
        let reflected = along(1.0);
        let fr = eval(&reflected);
        evals += 1;
        if fr < values[ib] {
            let expanded = along(2.0);
            let fe = eval(&expanded);
            evals += 1;
            if fe < fr {
                simplex[iw] = expanded;
                values[iw] = fe;
            } else {
                simplex[iw] = reflected;
                values[iw] = fr;
            }
            continue;
        }
        if fr < values[isw] {
            simplex[iw] = reflected;
            values[iw] = fr;
            continue;
        }
        let (contracted, fc) = if fr < values[iw] {
            let c = along(0.5);
            let v = eval(&c);
            (c, v)
        } else {
            let c = along(-0.5);
            let v = eval(&c);
            (c, v)
        };
        evals += 1;
        if fc < values[iw].min(fr) {
            simplex[iw] = contracted;
            values[iw] = fc;
            continue;
        }
        // shrink toward the best vertex
        let best = simplex[ib].clone();
        for &i in order.iter().skip(1) {
            for (x, b) in simplex[i].iter_mut().zip(&best) {
                *x = b + 0.5 * (*x - b);
            }
            values[i] = eval(&simplex[i]);
            evals += 1;
        }
    }
    let ib = (0..=n).min_by(|&a, &b| values[a].total_cmp(&values[b])).unwrap();
    Minimum { x: simplex[ib].clone(), f: values[ib], evals, iterations, converged }
}
