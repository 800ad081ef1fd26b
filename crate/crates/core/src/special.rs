//! Scalar special functions used across the likelihoods and solvers.

/// Euler–Mascheroni constant, the mean of a standard type-I extreme value draw.
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

const MAX_ITER: usize = 2000;
const EPS: f64 = 1e-16;
const TINY: f64 = 1e-300;

pub fn ln_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

/// Regularized lower incomplete gamma function `P(a, x)`.
pub fn gamma_p(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x == f64::INFINITY {
        return 1.0;
    }
    if x < a + 1.0 {
        gamma_series(a, x)
    } else {
        1.0 - gamma_cont_frac(a, x)
    }
}

/// Regularized upper incomplete gamma function `Q(a, x) = 1 - P(a, x)`.
pub fn gamma_q(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x == f64::INFINITY {
        return 0.0;
    }
    if x < a + 1.0 {
        1.0 - gamma_series(a, x)
    } else {
        gamma_cont_frac(a, x)
    }
}

fn prefactor(a: f64, x: f64) -> f64 {
    libm::exp(-x + a * libm::log(x) - ln_gamma(a))
}

fn gamma_series(a: f64, x: f64) -> f64 {
    let mut ap = a;
    let mut del = 1.0 / a;
    let mut sum = del;
    for _ in 0..MAX_ITER {
        ap += 1.0;
        del *= x / ap;
        sum += del;
        if libm::fabs(del) < libm::fabs(sum) * EPS {
            break;
        }
    }
    sum * prefactor(a, x)
}

// Modified Lentz evaluation of the continued fraction for Q(a, x).
fn gamma_cont_frac(a: f64, x: f64) -> f64 {
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..MAX_ITER {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if libm::fabs(d) < TINY {
            d = TINY;
        }
        c = b + an / c;
        if libm::fabs(c) < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if libm::fabs(del - 1.0) < EPS {
            break;
        }
    }
    prefactor(a, x) * h
}

/// `log(sum(exp(values)))`, stable for large magnitudes. Empty or all `-inf` input gives `-inf`.
pub fn logsumexp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = values.iter().map(|v| libm::exp(v - max)).sum();
    max + libm::log(sum)
}

/// Log of the Poisson probability mass at `k` with mean `rate`.
pub fn poisson_ln_pmf(k: u32, rate: f64) -> f64 {
    if rate == 0.0 {
        return if k == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    let k = k as f64;
    k * libm::log(rate) - rate - ln_gamma(k + 1.0)
}

pub fn poisson_pmf(k: u32, rate: f64) -> f64 {
    libm::exp(poisson_ln_pmf(k, rate))
}

pub fn normal_pdf(x: f64, mean: f64, variance: f64) -> f64 {
    let z = x - mean;
    libm::exp(-0.5 * z * z / variance) / libm::sqrt(2.0 * core::f64::consts::PI * variance)
}

/// Binomial coefficient as a float; exact for the small arguments used here.
pub fn binomial(n: u32, k: u32) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut acc = 1.0;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    libm::round(acc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn incomplete_gamma_matches_closed_forms() {
        // a = 1: exponential cdf.
        for &x in &[0.1, 0.5, 1.0, 2.5, 7.0, 30.0] {
            assert!((gamma_p(1.0, x) - (1.0 - libm::exp(-x))).abs() < 1e-14);
        }
        // a = 2: 1 - e^{-x}(1 + x).
        for &x in &[0.2, 1.0, 3.0, 9.0] {
            let exact = 1.0 - libm::exp(-x) * (1.0 + x);
            assert!((gamma_p(2.0, x) - exact).abs() < 1e-14);
            assert!((gamma_q(2.0, x) - (1.0 - exact)).abs() < 1e-14);
        }
        // a = 1/2: erf(sqrt(x)).
        for &x in &[0.01, 0.3, 2.0, 6.0] {
            assert!((gamma_p(0.5, x) - libm::erf(libm::sqrt(x))).abs() < 1e-13);
        }
    }

    #[test]
    fn logsumexp_handles_extremes() {
        assert_eq!(logsumexp(&[]), f64::NEG_INFINITY);
        assert!((logsumexp(&[1000.0, 1000.0]) - (1000.0 + libm::log(2.0))).abs() < 1e-12);
        assert!((logsumexp(&[f64::NEG_INFINITY, 0.0])).abs() < 1e-15);
    }

    #[test]
    fn poisson_pmf_sums_to_one() {
        let total: f64 = (0..60).map(|k| poisson_pmf(k, 3.7)).sum();
        assert!((total - 1.0).abs() < 1e-13);
        assert_eq!(poisson_pmf(0, 0.0), 1.0);
        assert_eq!(poisson_pmf(2, 0.0), 0.0);
    }

    #[test]
    fn binomial_small_values() {
        assert_eq!(binomial(5, 2), 10.0);
        assert_eq!(binomial(6, 0), 1.0);
        assert_eq!(binomial(3, 4), 0.0);
    }
}
