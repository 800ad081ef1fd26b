//! Valuation-distribution estimation from winner identity and transaction price.
//!
//! A type-`m` bidder values a tract at `xi * v0_m` with `xi` gamma distributed
//! (shape `sigma_m`, scale `mu_m`). In an oral auction the winner pays the
//! second-highest value.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::dist::BaseDistribution;
use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::fit::{cluster_bootstrap, multi_start, replicate_seeds, BootstrapSummary, Convergence, FitOptions};
use crate::model::{BidderType, PerType};
use crate::special::binomial;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BidObservation {
    pub auction_id: String,
    /// Active bidders.
    pub n: u32,
    pub winner_type: BidderType,
    /// Transaction price.
    pub tau: f64,
    pub v0_l: f64,
    pub v0_s: f64,
}

impl BidObservation {
    pub fn v0(&self, t: BidderType) -> f64 {
        match t {
            BidderType::Logger => self.v0_l,
            BidderType::Sawmill => self.v0_s,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |reason: &str| Error::Data { record: self.auction_id.clone(), reason: String::from(reason) };
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(err("transaction price must be positive"));
        }
        if !(self.v0_l > 0.0 && self.v0_s > 0.0 && self.v0_l.is_finite() && self.v0_s.is_finite()) {
            return Err(err("continuation values must be positive"));
        }
        if self.n < 1 {
            return Err(err("at least one active bidder is required"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValuationParams {
    pub mu_l: f64,
    pub sigma_l: f64,
    pub mu_s: f64,
    pub sigma_s: f64,
}

impl ValuationParams {
    pub fn new(mu_l: f64, sigma_l: f64, mu_s: f64, sigma_s: f64) -> Result<Self> {
        let p = ValuationParams { mu_l, sigma_l, mu_s, sigma_s };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.as_array().iter().all(|&x| x > 0.0 && x.is_finite()) {
            Ok(())
        } else {
            Err(crate::error::invalid(format!("valuation parameters must be positive: {self:?}")))
        }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.mu_l, self.sigma_l, self.mu_s, self.sigma_s]
    }

    pub fn from_array(x: [f64; 4]) -> Self {
        ValuationParams { mu_l: x[0], sigma_l: x[1], mu_s: x[2], sigma_s: x[3] }
    }

    pub fn mu(&self, t: BidderType) -> f64 {
        match t {
            BidderType::Logger => self.mu_l,
            BidderType::Sawmill => self.mu_s,
        }
    }

    pub fn sigma(&self, t: BidderType) -> f64 {
        match t {
            BidderType::Logger => self.sigma_l,
            BidderType::Sawmill => self.sigma_s,
        }
    }

    /// Distribution of the multiplier `xi`.
    pub fn multiplier(&self, t: BidderType) -> BaseDistribution {
        BaseDistribution::Gamma { shape: self.sigma(t), scale: self.mu(t) }
    }

    /// Distribution of the value itself given continuation value `v0`.
    pub fn value_distribution(&self, t: BidderType, v0: f64) -> BaseDistribution {
        BaseDistribution::Gamma { shape: self.sigma(t), scale: self.mu(t) * v0 }
    }
}

struct Point {
    cdf: PerType<f64>,
    pdf: PerType<f64>,
    sf_winner: f64,
}

fn point(obs: &BidObservation, params: &ValuationParams) -> Point {
    let dl = params.value_distribution(BidderType::Logger, obs.v0_l);
    let ds = params.value_distribution(BidderType::Sawmill, obs.v0_s);
    let sf_winner = match obs.winner_type {
        BidderType::Logger => dl.sf(obs.tau),
        BidderType::Sawmill => ds.sf(obs.tau),
    };
    Point {
        cdf: PerType::new(dl.cdf(obs.tau), ds.cdf(obs.tau)),
        pdf: PerType::new(dl.pdf(obs.tau), ds.pdf(obs.tau)),
        sf_winner,
    }
}

/// Density that the highest of the `n - 1` opponents sits at `tau`, mixing
/// over binomial opponent compositions with logger probability `p_hat`.
fn opponent_max_density(n: u32, p_hat: f64, pt: &Point) -> f64 {
    let (fl, fs) = (pt.cdf.logger, pt.cdf.sawmill);
    let (gl, gs) = (pt.pdf.logger, pt.pdf.sawmill);
    let m = n - 1;
    let mut total = 0.0;
    for k in 0..=m {
        let weight = binomial(m, k) * libm::pow(p_hat, k as f64) * libm::pow(1.0 - p_hat, (m - k) as f64);
        if weight == 0.0 {
            continue;
        }
        let mut inner = 0.0;
        if k > 0 {
            // one of the k loggers is second-highest
            inner += k as f64 * gl * libm::pow(fl, (k - 1) as f64) * libm::pow(fs, (m - k) as f64);
        }
        if m > k {
            inner += (m - k) as f64 * gs * libm::pow(fl, k as f64) * libm::pow(fs, (m - k - 1) as f64);
        }
        total += weight * inner;
    }
    total
}

fn check(obs: &BidObservation, p_hat: f64) -> Result<()> {
    if !(obs.tau > 0.0) {
        return Err(Error::Domain(format!("transaction price must be positive, got {}", obs.tau)));
    }
    if obs.n < 2 {
        return Err(Error::Domain(String::from("a transaction price needs at least two bidders")));
    }
    if !(0.0..=1.0).contains(&p_hat) {
        return Err(Error::Domain(format!("logger share must lie in [0, 1], got {p_hat}")));
    }
    Ok(())
}

/// Density for one designated bidder of the winner's type: the probability
/// that this bidder beats `tau` times the opponent-maximum density at `tau`.
/// With identical types and two bidders this is `(1 - F) f`.
pub fn winner_slot_density(obs: &BidObservation, p_hat: f64, params: &ValuationParams) -> Result<f64> {
    check(obs, p_hat)?;
    let pt = point(obs, params);
    Ok(pt.sf_winner * opponent_max_density(obs.n, p_hat, &pt))
}

/// Joint density of (winner type, transaction price). Summed over winner
/// types and integrated over `tau` it is one.
pub fn transaction_density(obs: &BidObservation, p_hat: f64, params: &ValuationParams) -> Result<f64> {
    let slot = winner_slot_density(obs, p_hat, params)?;
    let type_prob = match obs.winner_type {
        BidderType::Logger => p_hat,
        BidderType::Sawmill => 1.0 - p_hat,
    };
    Ok(obs.n as f64 * type_prob * slot)
}

/// Log-likelihood over auctions with at least two bidders; returns the value
/// and how many auctions were skipped for having a single bidder.
pub fn valuation_loglik(obs: &[BidObservation], p_hat: f64, params: &ValuationParams) -> Result<(f64, usize)> {
    params.validate()?;
    let mut total = 0.0;
    let mut skipped = 0;
    for o in obs {
        o.validate()?;
        if o.n < 2 {
            skipped += 1;
            continue;
        }
        total += libm::log(transaction_density(o, p_hat, params)?);
    }
    Ok((total, skipped))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValuationEstimate {
    pub params: ValuationParams,
    /// Bootstrap standard errors in the order `(mu_l, sigma_l, mu_s, sigma_s)`.
    pub se: Option<[f64; 4]>,
    pub loglik: f64,
    pub used: usize,
    /// Auctions without a second bidder, which carry no price information.
    pub excluded: usize,
    pub convergence: Convergence,
}

/// Maximum-likelihood valuation parameters, searched in log space.
pub fn fit_valuation(
    obs: &[BidObservation],
    p_hat: f64,
    init: &ValuationParams,
    opts: &FitOptions,
) -> Result<ValuationEstimate> {
    init.validate()?;
    if !(0.0..=1.0).contains(&p_hat) {
        return Err(Error::Domain(format!("logger share must lie in [0, 1], got {p_hat}")));
    }
    let mut usable = Vec::with_capacity(obs.len());
    for o in obs {
        o.validate()?;
        if o.n >= 2 {
            usable.push(o);
        }
    }
    if usable.is_empty() {
        return Err(crate::error::invalid("no auction with two or more bidders"));
    }
    let mut est = fit_usable(&usable, p_hat, init, opts);
    est.excluded = obs.len() - usable.len();
    Ok(est)
}

fn fit_usable(usable: &[&BidObservation], p_hat: f64, init: &ValuationParams, opts: &FitOptions) -> ValuationEstimate {
    let objective = |x: &[f64]| {
        let p = ValuationParams::from_array([libm::exp(x[0]), libm::exp(x[1]), libm::exp(x[2]), libm::exp(x[3])]);
        let mut total = 0.0;
        for o in usable {
            let pt = point(o, &p);
            let tp = match o.winner_type {
                BidderType::Logger => p_hat,
                BidderType::Sawmill => 1.0 - p_hat,
            };
            let d = o.n as f64 * tp * pt.sf_winner * opponent_max_density(o.n, p_hat, &pt);
            total += libm::log(d);
        }
        if total.is_finite() {
            -total
        } else {
            f64::INFINITY
        }
    };
    let x0: Vec<f64> = init.as_array().iter().map(|&v| libm::log(v)).collect();
    let (best, convergence) = multi_start(objective, &x0, opts);
    let params = ValuationParams::from_array([
        libm::exp(best.x[0]),
        libm::exp(best.x[1]),
        libm::exp(best.x[2]),
        libm::exp(best.x[3]),
    ]);
    ValuationEstimate { params, se: None, loglik: -best.f, used: usable.len(), excluded: 0, convergence }
}

/// Auction-level bootstrap of a valuation fit.
pub fn bootstrap_valuation<E: Executor>(
    obs: &[BidObservation],
    p_hat: f64,
    fit: &ValuationEstimate,
    reps: usize,
    seed: u64,
    opts: &FitOptions,
    exec: &E,
) -> Result<BootstrapSummary> {
    if reps < 2 {
        return Err(crate::error::invalid("bootstrap needs at least two replicates"));
    }
    let mut usable = Vec::new();
    for o in obs {
        o.validate()?;
        if o.n >= 2 {
            usable.push(o.clone());
        }
    }
    let seeds = replicate_seeds(seed, reps);
    Ok(cluster_bootstrap(
        &usable,
        |o| o.auction_id.as_str(),
        &seeds,
        4,
        exec,
        |picks| {
            let est = fit_usable(picks, p_hat, &fit.params, opts);
            est.convergence.converged.then(|| est.params.as_array().to_vec())
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use alloc::vec;
    use alloc::vec::Vec;
    use rand::Rng;

    fn ob(n: u32, w: BidderType, tau: f64) -> BidObservation {
        BidObservation { auction_id: String::from("x"), n, winner_type: w, tau, v0_l: 1.0, v0_s: 1.0 }
    }

    #[test]
    fn opponent_mixture_matches_closed_form() {
        // The mixture equals d/dtau [p F_l + (1 - p) F_s]^(n - 1).
        let params = ValuationParams::new(1.0, 1.0, 2.0, 3.0).unwrap();
        for n in 2..=7 {
            for &tau in &[0.3, 1.7, 6.0] {
                let o = ob(n, BidderType::Sawmill, tau);
                let pt = point(&o, &params);
                let p = 0.4;
                let mix = p * pt.cdf.logger + (1.0 - p) * pt.cdf.sawmill;
                let dmix = p * pt.pdf.logger + (1.0 - p) * pt.pdf.sawmill;
                let closed = (n - 1) as f64 * libm::pow(mix, (n - 2) as f64) * dmix;
                let got = opponent_max_density(n, p, &pt);
                assert!((got - closed).abs() < 1e-12 * closed.max(1.0), "n={n} tau={tau}");
            }
        }
    }

    #[test]
    fn identical_types_reduce_to_losing_value_density() {
        let params = ValuationParams::new(1.3, 2.0, 1.3, 2.0).unwrap();
        let g = params.multiplier(BidderType::Logger);
        for &tau in &[0.5, 2.0, 4.0] {
            let d = winner_slot_density(&ob(2, BidderType::Logger, tau), 0.3, &params).unwrap();
            assert!((d - g.sf(tau) * g.pdf(tau)).abs() < 1e-14);
        }
    }

    fn integrate(n: u32, p_hat: f64, params: &ValuationParams) -> f64 {
        // Simpson on [0, 80] in the value scale; shapes >= 1 keep the integrand bounded.
        let steps = 40_000;
        let h = 80.0 / steps as f64;
        let mut total = 0.0;
        for w in BidderType::ALL {
            let f = |x: f64| {
                if x <= 0.0 {
                    0.0
                } else {
                    transaction_density(&ob(n, w, x), p_hat, params).unwrap()
                }
            };
            let mut s = f(0.0) + f(80.0);
            for i in 1..steps {
                s += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
            }
            total += s * h / 3.0;
        }
        total
    }

    #[test]
    fn density_integrates_to_one() {
        let params = ValuationParams::new(1.0, 1.5, 2.0, 3.0).unwrap();
        for n in [2, 3] {
            let total = integrate(n, 0.4, &params);
            assert!((total - 1.0).abs() < 1e-4, "n={n}: {total}");
        }
    }

    #[test]
    fn tail_vanishes_and_bad_tau_is_rejected() {
        let params = ValuationParams::new(1.0, 1.0, 2.0, 3.0).unwrap();
        assert!(transaction_density(&ob(3, BidderType::Logger, 500.0), 0.4, &params).unwrap() < 1e-100);
        assert!(matches!(transaction_density(&ob(3, BidderType::Logger, 0.0), 0.4, &params), Err(Error::Domain(_))));
        assert!(transaction_density(&ob(1, BidderType::Logger, 1.0), 0.4, &params).is_err());
    }

    // Simulate two-bidder button auctions with binomial types and compare
    // binned frequencies of (winner type, price) with the integrated density.
    #[test]
    fn simulation_oracle_two_bidders() {
        let params = ValuationParams::new(1.0, 1.5, 2.0, 3.0).unwrap();
        let p_hat = 0.4;
        let draws = 400_000;
        let sl = params.multiplier(BidderType::Logger).sampler();
        let ss = params.multiplier(BidderType::Sawmill).sampler();
        let edges: Vec<f64> = vec![0.0, 0.5, 1.0, 2.0, 3.0, 5.0, 8.0];
        let mut counts = [[0usize; 6]; 2];
        let mut rng = stream(2024, 0);
        for _ in 0..draws {
            let mut bids = [(0.0, BidderType::Logger); 2];
            for b in bids.iter_mut() {
                let t = if rng.random::<f64>() < p_hat { BidderType::Logger } else { BidderType::Sawmill };
                let v = match t {
                    BidderType::Logger => sl.sample(&mut rng),
                    BidderType::Sawmill => ss.sample(&mut rng),
                };
                *b = (v, t);
            }
            let (win, lose) = if bids[0].0 > bids[1].0 { (bids[0], bids[1]) } else { (bids[1], bids[0]) };
            if let Some(k) = edges.windows(2).position(|e| lose.0 >= e[0] && lose.0 < e[1]) {
                counts[win.1.index()][k] += 1;
            }
        }
        for w in BidderType::ALL {
            for k in 0..6 {
                let (a, b) = (edges[k], edges[k + 1]);
                let m = 2000;
                let h = (b - a) / m as f64;
                let prob: f64 = (0..m)
                    .map(|i| {
                        let x = a + (i as f64 + 0.5) * h;
                        transaction_density(&ob(2, w, x), p_hat, &params).unwrap() * h
                    })
                    .sum();
                let freq = counts[w.index()][k] as f64 / draws as f64;
                let se = libm::sqrt(prob * (1.0 - prob) / draws as f64);
                assert!((freq - prob).abs() < 3.0 * se + 1e-6, "{w:?} bin {k}: {freq} vs {prob}");
            }
        }
    }

    #[test]
    fn single_bidder_auctions_are_excluded() {
        let params = ValuationParams::new(1.0, 1.0, 2.0, 3.0).unwrap();
        let data = vec![ob(1, BidderType::Logger, 1.0), ob(3, BidderType::Sawmill, 2.0)];
        let (_, skipped) = valuation_loglik(&data, 0.4, &params).unwrap();
        assert_eq!(skipped, 1);
    }

    fn simulate(params: &ValuationParams, p_hat: f64, n_auctions: usize, v0: f64, seed: u64) -> Vec<BidObservation> {
        let mut rng = stream(seed, 0);
        (0..n_auctions)
            .map(|k| {
                let n = 2 + (k % 4) as u32;
                let mut vals: Vec<(f64, BidderType)> = (0..n)
                    .map(|_| {
                        let t = if rng.random::<f64>() < p_hat { BidderType::Logger } else { BidderType::Sawmill };
                        (params.value_distribution(t, v0).sampler().sample(&mut rng), t)
                    })
                    .collect();
                vals.sort_by(|a, b| b.0.total_cmp(&a.0));
                BidObservation {
                    auction_id: format!("k{k}"),
                    n,
                    winner_type: vals[0].1,
                    tau: vals[1].0,
                    v0_l: v0,
                    v0_s: v0,
                }
            })
            .collect()
    }

    #[test]
    fn fit_is_scale_equivariant() {
        let truth = ValuationParams::new(1.0, 1.0, 2.0, 3.0).unwrap();
        let opts = FitOptions { starts: 2, ..Default::default() };
        let a = simulate(&truth, 0.4, 300, 1.0, 8);
        let b: Vec<BidObservation> =
            a.iter().map(|o| BidObservation { tau: o.tau * 7.0, v0_l: 7.0, v0_s: 7.0, ..o.clone() }).collect();
        let fa = fit_valuation(&a, 0.4, &truth, &opts).unwrap();
        let fb = fit_valuation(&b, 0.4, &truth, &opts).unwrap();
        for (x, y) in fa.params.as_array().iter().zip(fb.params.as_array()) {
            assert!((x - y).abs() < 1e-3 * x.max(1.0), "{fa:?} {fb:?}");
        }
    }

    #[test]
    fn symmetric_types_give_similar_scales() {
        let truth = ValuationParams::new(1.5, 2.0, 1.5, 2.0).unwrap();
        let data = simulate(&truth, 0.5, 600, 1.0, 11);
        let est = fit_valuation(&data, 0.5, &truth, &FitOptions { starts: 2, ..Default::default() }).unwrap();
        let mean_l = est.params.mu_l * est.params.sigma_l;
        let mean_s = est.params.mu_s * est.params.sigma_s;
        assert!((mean_l - mean_s).abs() < 0.25 * (mean_l + mean_s), "{est:?}");
    }
}
