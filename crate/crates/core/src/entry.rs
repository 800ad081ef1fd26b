//! Entry-rate estimation from the number of active bidders.
//!
//! Type-`m` entrants are Poisson with mean `lambda_m * N_m`; auctions with no
//! entrant are never observed, so each auction's likelihood is conditioned on
//! at least one entry.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::fit::{cluster_bootstrap, multi_start, replicate_seeds, BootstrapSummary, Convergence, FitOptions};
use crate::model::{AuctionFormat, PerType};
use crate::special::poisson_pmf;

/// Log-likelihood contribution used when both entry rates vanish but bidders were observed.
pub const GUARD_LOGLIK: f64 = -1.0e10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryObservation {
    pub auction_id: String,
    pub format: AuctionFormat,
    /// Active bidders.
    pub n: u32,
    /// Potential loggers.
    pub n_logger: u32,
    /// Potential sawmills.
    pub n_sawmill: u32,
}

impl EntryObservation {
    pub fn validate(&self) -> Result<()> {
        if self.n < 1 {
            return Err(Error::Data {
                record: self.auction_id.clone(),
                reason: String::from("auctions without entrants are not observable"),
            });
        }
        Ok(())
    }
}

/// Log-likelihood value plus the number of auctions that hit the zero-rate guard.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntryLoglik {
    pub value: f64,
    pub guarded: usize,
}

fn auction_loglik(n: u32, rate_l: f64, rate_s: f64) -> Option<f64> {
    let observed = -libm::expm1(-(rate_l + rate_s));
    if observed <= 0.0 {
        return None;
    }
    let mut num = 0.0;
    for j in 0..=n {
        num += poisson_pmf(j, rate_l) * poisson_pmf(n - j, rate_s);
    }
    if num <= 0.0 {
        return None;
    }
    Some(libm::log(num) - libm::log(observed))
}

pub fn entry_loglik(obs: &[EntryObservation], lambda_l: f64, lambda_s: f64) -> Result<EntryLoglik> {
    if !(lambda_l >= 0.0 && lambda_s >= 0.0 && lambda_l.is_finite() && lambda_s.is_finite()) {
        return Err(Error::Domain(format!("entry rates must be non-negative, got ({lambda_l}, {lambda_s})")));
    }
    let mut out = EntryLoglik { value: 0.0, guarded: 0 };
    for o in obs {
        o.validate()?;
        match auction_loglik(o.n, lambda_l * o.n_logger as f64, lambda_s * o.n_sawmill as f64) {
            Some(l) => out.value += l,
            None => {
                out.value += GUARD_LOGLIK;
                out.guarded += 1;
            }
        }
    }
    Ok(out)
}

/// Fraction of loggers implied by the entry rates.
pub fn type_share(lambda_l: f64, lambda_s: f64) -> Result<f64> {
    if !(lambda_l >= 0.0 && lambda_s >= 0.0) {
        return Err(Error::Domain(String::from("entry rates must be non-negative")));
    }
    if lambda_l + lambda_s <= 0.0 {
        return Err(Error::UndefinedShare);
    }
    Ok(lambda_l / (lambda_l + lambda_s))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryEstimate {
    pub format: AuctionFormat,
    pub lambda: PerType<f64>,
    pub se: Option<PerType<f64>>,
    pub loglik: f64,
    /// False when no auction of this format has potential bidders of the type;
    /// the rate is then reported at its initial value.
    pub identified: PerType<bool>,
    pub guarded: usize,
    pub observations: usize,
    pub convergence: Convergence,
}

/// Maximum-likelihood entry rates for the auctions of one format.
pub fn fit_entry(
    obs: &[EntryObservation],
    format: AuctionFormat,
    init: PerType<f64>,
    opts: &FitOptions,
) -> Result<EntryEstimate> {
    let subset: Vec<&EntryObservation> = obs.iter().filter(|o| o.format == format).collect();
    if subset.is_empty() {
        return Err(crate::error::invalid(format!("no {} auctions to fit", format.label())));
    }
    for o in &subset {
        o.validate()?;
    }
    if !(init.logger > 0.0 && init.sawmill > 0.0) {
        return Err(crate::error::invalid("initial entry rates must be positive"));
    }
    fit_subset(&subset, format, init, opts)
}

fn fit_subset(
    subset: &[&EntryObservation],
    format: AuctionFormat,
    init: PerType<f64>,
    opts: &FitOptions,
) -> Result<EntryEstimate> {
    let identified = PerType::new(subset.iter().any(|o| o.n_logger > 0), subset.iter().any(|o| o.n_sawmill > 0));
    let owned: Vec<EntryObservation> = subset.iter().map(|&o| o.clone()).collect();
    let free: Vec<bool> = [identified.logger, identified.sawmill].to_vec();
    let base = [init.logger, init.sawmill];
    let unpack = |x: &[f64]| {
        let mut lam = base;
        let mut k = 0;
        for (i, f) in free.iter().enumerate() {
            if *f {
                lam[i] = libm::exp(x[k]);
                k += 1;
            }
        }
        lam
    };
    let x0: Vec<f64> = (0..2).filter(|&i| free[i]).map(|i| libm::log(base[i])).collect();
    let (lam, loglik, convergence) = if x0.is_empty() {
        let l = entry_loglik(&owned, base[0], base[1])?;
        let c = Convergence { converged: true, iterations: 0, evaluations: 1, starts: 0 };
        (base, l.value, c)
    } else {
        let (best, c) = multi_start(
            |x| {
                let lam = unpack(x);
                entry_loglik(&owned, lam[0], lam[1]).map_or(f64::INFINITY, |l| -l.value)
            },
            &x0,
            opts,
        );
        (unpack(&best.x), -best.f, c)
    };
    let guarded = entry_loglik(&owned, lam[0], lam[1])?.guarded;
    Ok(EntryEstimate {
        format,
        lambda: PerType::new(lam[0], lam[1]),
        se: None,
        loglik,
        identified,
        guarded,
        observations: owned.len(),
        convergence,
    })
}

/// Fits every format present in `obs`, oral first.
pub fn fit_entry_by_format(
    obs: &[EntryObservation],
    init: PerType<f64>,
    opts: &FitOptions,
) -> Result<Vec<EntryEstimate>> {
    let mut out = Vec::new();
    for format in [AuctionFormat::Oral, AuctionFormat::Sealed] {
        if obs.iter().any(|o| o.format == format) {
            out.push(fit_entry(obs, format, init, opts)?);
        }
    }
    Ok(out)
}

/// Auction-level bootstrap of a per-format entry fit; se is `[lambda_l, lambda_s]`.
pub fn bootstrap_entry<E: Executor>(
    obs: &[EntryObservation],
    fit: &EntryEstimate,
    reps: usize,
    seed: u64,
    opts: &FitOptions,
    exec: &E,
) -> Result<BootstrapSummary> {
    if reps < 2 {
        return Err(crate::error::invalid("bootstrap needs at least two replicates"));
    }
    let subset: Vec<EntryObservation> = obs.iter().filter(|o| o.format == fit.format).cloned().collect();
    for o in &subset {
        o.validate()?;
    }
    let seeds = replicate_seeds(seed, reps);
    Ok(cluster_bootstrap(
        &subset,
        |o| o.auction_id.as_str(),
        &seeds,
        2,
        exec,
        |picks| {
            let est = fit_subset(picks, fit.format, fit.lambda, opts).ok()?;
            est.convergence.converged.then(|| alloc::vec![est.lambda.logger, est.lambda.sawmill])
        },
    ))
}
