//! Valuation distributions: gamma and uniform families, with optional truncation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::special::{gamma_p, gamma_q, ln_gamma};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BaseDistribution {
    Uniform {
        lo: f64,
        hi: f64,
    },
    /// Gamma with the given shape and scale (mean = shape * scale).
    Gamma {
        shape: f64,
        scale: f64,
    },
}

impl BaseDistribution {
    pub fn gamma(shape: f64, scale: f64) -> Result<Self> {
        let d = BaseDistribution::Gamma { shape, scale };
        d.validate()?;
        Ok(d)
    }

    pub fn uniform(lo: f64, hi: f64) -> Result<Self> {
        let d = BaseDistribution::Uniform { lo, hi };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            BaseDistribution::Uniform { lo, hi } => {
                if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                    return Err(invalid("uniform bounds must be finite with lo <= hi"));
                }
            }
            BaseDistribution::Gamma { shape, scale } => {
                if !(shape > 0.0 && scale > 0.0 && shape.is_finite() && scale.is_finite()) {
                    return Err(invalid("gamma shape and scale must be positive and finite"));
                }
            }
        }
        Ok(())
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match *self {
            BaseDistribution::Uniform { lo, hi } => {
                if x <= lo {
                    0.0
                } else if x >= hi {
                    1.0
                } else {
                    (x - lo) / (hi - lo)
                }
            }
            BaseDistribution::Gamma { shape, scale } => gamma_p(shape, x / scale),
        }
    }

    /// Survival function `1 - cdf`, accurate in the upper tail.
    pub fn sf(&self, x: f64) -> f64 {
        match *self {
            BaseDistribution::Uniform { .. } => 1.0 - self.cdf(x),
            BaseDistribution::Gamma { shape, scale } => gamma_q(shape, x / scale),
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        match *self {
            BaseDistribution::Uniform { lo, hi } => {
                if x < lo || x > hi || hi == lo {
                    0.0
                } else {
                    1.0 / (hi - lo)
                }
            }
            BaseDistribution::Gamma { shape, scale } => {
                if x < 0.0 {
                    0.0
                } else if x == 0.0 {
                    if shape < 1.0 {
                        f64::INFINITY
                    } else if shape == 1.0 {
                        1.0 / scale
                    } else {
                        0.0
                    }
                } else {
                    let z = x / scale;
                    libm::exp((shape - 1.0) * libm::log(z) - z - ln_gamma(shape)) / scale
                }
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            BaseDistribution::Uniform { lo, hi } => 0.5 * (lo + hi),
            BaseDistribution::Gamma { shape, scale } => shape * scale,
        }
    }

    /// Same family with values multiplied by `factor > 0`.
    pub fn scaled(&self, factor: f64) -> Self {
        match *self {
            BaseDistribution::Uniform { lo, hi } => BaseDistribution::Uniform { lo: lo * factor, hi: hi * factor },
            BaseDistribution::Gamma { shape, scale } => BaseDistribution::Gamma { shape, scale: scale * factor },
        }
    }

    /// Quantile by bracketing and bisection on the cdf.
    pub fn quantile(&self, p: f64) -> f64 {
        match *self {
            BaseDistribution::Uniform { lo, hi } => lo + p.clamp(0.0, 1.0) * (hi - lo),
            BaseDistribution::Gamma { shape, scale } => {
                let mut hi = shape * scale + scale;
                while self.cdf(hi) < p {
                    hi *= 2.0;
                }
                bisect_quantile(|x| self.cdf(x), 0.0, hi, p)
            }
        }
    }

    pub fn sampler(&self) -> Sampler {
        match *self {
            BaseDistribution::Uniform { lo, hi } => Sampler::Uniform { lo, width: hi - lo },
            BaseDistribution::Gamma { shape, scale } => {
                Sampler::Gamma(rand_distr::Gamma::new(shape, scale).expect("validated gamma parameters"))
            }
        }
    }
}

fn bisect_quantile(cdf: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, p: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-14 * hi.max(1e-300) {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Pre-built sampler for a [`BaseDistribution`].
#[derive(Debug, Clone, Copy)]
pub enum Sampler {
    Uniform { lo: f64, width: f64 },
    Gamma(rand_distr::Gamma<f64>),
}

impl Sampler {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Sampler::Uniform { lo, width } => lo + width * rng.random::<f64>(),
            Sampler::Gamma(g) => rand_distr::Distribution::sample(g, rng),
        }
    }
}

/// A base distribution truncated to `[lo, hi]` and renormalized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TruncationRepr", into = "TruncationRepr")]
pub struct ValueDistribution {
    base: BaseDistribution,
    lo: f64,
    hi: f64,
    cdf_lo: f64,
    mass: f64,
}

#[derive(Serialize, Deserialize)]
struct TruncationRepr {
    base: BaseDistribution,
    lo: f64,
    hi: f64,
}

impl TryFrom<TruncationRepr> for ValueDistribution {
    type Error = crate::Error;
    fn try_from(r: TruncationRepr) -> Result<Self> {
        ValueDistribution::truncated(r.base, r.lo, r.hi)
    }
}

impl From<ValueDistribution> for TruncationRepr {
    fn from(v: ValueDistribution) -> Self {
        TruncationRepr { base: v.base, lo: v.lo, hi: v.hi }
    }
}

impl ValueDistribution {
    pub fn truncated(base: BaseDistribution, lo: f64, hi: f64) -> Result<Self> {
        base.validate()?;
        if !(lo < hi) {
            return Err(invalid("truncation requires lo < hi"));
        }
        let cdf_lo = base.cdf(lo);
        let mass = base.cdf(hi) - cdf_lo;
        if !(mass > 0.0) {
            return Err(invalid("truncation interval carries no probability mass"));
        }
        Ok(ValueDistribution { base, lo, hi, cdf_lo, mass })
    }

    /// Uniform on `[lo, hi]` (no truncation needed).
    pub fn uniform(lo: f64, hi: f64) -> Result<Self> {
        Self::truncated(BaseDistribution::uniform(lo, hi)?, lo, hi)
    }

    pub fn base(&self) -> &BaseDistribution {
        &self.base
    }

    pub fn support(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    pub fn cdf(&self, v: f64) -> f64 {
        if v <= self.lo {
            0.0
        } else if v >= self.hi {
            1.0
        } else {
            ((self.base.cdf(v) - self.cdf_lo) / self.mass).clamp(0.0, 1.0)
        }
    }

    pub fn pdf(&self, v: f64) -> f64 {
        if v < self.lo || v > self.hi {
            0.0
        } else {
            self.base.pdf(v) / self.mass
        }
    }

    pub fn quantile(&self, p: f64) -> f64 {
        bisect_quantile(|x| self.cdf(x), self.lo, self.hi, p.clamp(0.0, 1.0))
    }
}
