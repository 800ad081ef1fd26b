//! Chebyshev series on `[-1, 1]`.

use alloc::vec::Vec;

/// Value of `sum_k c[k] T_k(x)` by the three-term recurrence.
pub fn eval(c: &[f64], x: f64) -> f64 {
    match c.len() {
        0 => 0.0,
        1 => c[0],
        _ => {
            let (mut t_prev, mut t) = (1.0, x);
            let mut sum = c[0] + c[1] * x;
            for &ck in &c[2..] {
                let next = 2.0 * x * t - t_prev;
                sum += ck * next;
                t_prev = t;
                t = next;
            }
            sum
        }
    }
}

/// Value and `x`-derivative of the series. Uses `T_k' = k U_{k-1}`.
pub fn eval_with_derivative(c: &[f64], x: f64) -> (f64, f64) {
    if c.len() < 2 {
        return (c.first().copied().unwrap_or(0.0), 0.0);
    }
    let (mut t_prev, mut t) = (1.0, x);
    let (mut u_prev, mut u) = (1.0, 2.0 * x);
    let mut value = c[0] + c[1] * x;
    let mut deriv = c[1];
    for (k, &ck) in c.iter().enumerate().skip(2) {
        let t_next = 2.0 * x * t - t_prev;
        value += ck * t_next;
        // u currently holds U_{k-1}
        deriv += ck * k as f64 * u;
        t_prev = t;
        t = t_next;
        let u_next = 2.0 * x * u - u_prev;
        u_prev = u;
        u = u_next;
    }
    (value, deriv)
}

/// The `m` Chebyshev-Gauss nodes `cos((2t - 1) pi / 2m)`, `t = 1..=m`, descending.
pub fn gauss_nodes(m: usize) -> Vec<f64> {
    (1..=m).map(|t| libm::cos((2 * t - 1) as f64 * core::f64::consts::PI / (2 * m) as f64)).collect()
}

/// Least-squares coefficients of degree `degree` for samples of `f` at `m > degree`
/// Gauss nodes; discrete orthogonality makes this a direct sum.
pub fn fit(f: impl Fn(f64) -> f64, degree: usize, m: usize) -> Vec<f64> {
    let nodes = gauss_nodes(m);
    let values: Vec<f64> = nodes.iter().map(|&x| f(x)).collect();
    (0..=degree)
        .map(|k| {
            let s: f64 = nodes
                .iter()
                .zip(&values)
                .map(|(&x, &y)| y * libm::cos(k as f64 * libm::acos(x.clamp(-1.0, 1.0))))
                .sum();
            if k == 0 {
                s / m as f64
            } else {
                2.0 * s / m as f64
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn second_polynomial_at_half() {
        assert!((eval(&[0.0, 0.0, 1.0], 0.5) + 0.5).abs() < 1e-15);
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let c = vec![0.3, -1.2, 0.7, 0.05, -0.4, 0.2, 0.11, -0.02];
        for &x in &[-0.9, -0.3, 0.0, 0.42, 0.97] {
            let (v, d) = eval_with_derivative(&c, x);
            assert!((v - eval(&c, x)).abs() < 1e-14);
            let h = 1e-6;
            let fd = (eval(&c, x + h) - eval(&c, x - h)) / (2.0 * h);
            assert!((d - fd).abs() < 1e-7, "{x}: {d} vs {fd}");
        }
    }

    #[test]
    fn fit_reproduces_polynomials() {
        let c = fit(|x| 4.0 * x * x * x - 3.0 * x + 0.5, 5, 12);
        let expected = [0.5, 0.0, 0.0, 1.0, 0.0, 0.0];
        for (a, b) in c.iter().zip(expected) {
            assert!((a - b).abs() < 1e-13);
        }
    }
}
