//! Monte Carlo study of the three estimators: simulate auction and harvesting
//! datasets at known parameters, refit, and report bias and RMSE.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::dp::{simulate_paths_from, solve_dp};
use crate::dynamic::{fit_dynamic, CuttingObservation};
use crate::entry::{fit_entry, type_share, EntryObservation};
use crate::error::{invalid, Error, Result};
use crate::exec::Executor;
use crate::fit::FitOptions;
use crate::model::{build_gaussian_transition, AuctionFormat, BidderType, DynamicParams, PerType, PriceProcess};
use crate::rng::{derive_seed, stream};
use crate::valuation::{fit_valuation, BidObservation, ValuationParams};

/// Redraws allowed per auction before giving up on getting an entrant.
pub const MAX_ENTRY_DRAWS: usize = 100_000;

/// Parameter names in report order.
pub const PARAMETERS: [&str; 9] = ["mu_l", "sigma_l", "mu_s", "sigma_s", "lambda_l", "lambda_s", "gamma", "c1", "c2"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McConfig {
    pub reps: usize,
    pub auctions: usize,
    pub agents: usize,
    pub valuation: ValuationParams,
    pub lambda: PerType<f64>,
    pub dynamic: DynamicParams,
    pub grid: Vec<f64>,
    pub variance: f64,
    /// Inclusive range of potential bidders of each type per auction.
    pub potential: (u32, u32),
    /// Contract length shared by all harvesting agents.
    pub periods: u32,
    pub u0: f64,
    pub seed: u64,
    pub fit: FitOptions,
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig {
            reps: 500,
            auctions: 500,
            agents: 1000,
            valuation: ValuationParams { mu_l: 1.0, sigma_l: 1.0, mu_s: 2.0, sigma_s: 3.0 },
            lambda: PerType::new(0.1, 0.15),
            dynamic: DynamicParams { gamma: 1.0, c1: 0.5, c2: 0.05, beta: 0.95 },
            grid: (1..=10).map(f64::from).collect(),
            variance: 1.0,
            potential: (5, 15),
            periods: 8,
            u0: 1.0,
            seed: 0,
            fit: FitOptions { starts: 1, ..FitOptions::default() },
        }
    }
}

impl McConfig {
    pub fn validate(&self) -> Result<()> {
        if self.reps < 1 {
            return Err(invalid("reps must be at least one"));
        }
        if self.auctions < 1 || self.agents < 1 {
            return Err(invalid("need at least one auction and one agent per rep"));
        }
        self.valuation.validate()?;
        self.dynamic.validate()?;
        if !(self.lambda.logger >= 0.0 && self.lambda.sawmill >= 0.0) {
            return Err(invalid("entry rates must be non-negative"));
        }
        if self.potential.0 > self.potential.1 {
            return Err(invalid("potential-bidder range is empty"));
        }
        if self.periods < 1 || !(self.u0 > 0.0) {
            return Err(invalid("harvesting agents need a positive length and tract size"));
        }
        Ok(())
    }

    pub fn prices(&self) -> Result<PriceProcess> {
        build_gaussian_transition(&self.grid, self.variance)
    }

    /// True parameter vector in [`PARAMETERS`] order.
    pub fn truth(&self) -> [f64; 9] {
        let v = self.valuation.as_array();
        let d = self.dynamic.as_array();
        [v[0], v[1], v[2], v[3], self.lambda.logger, self.lambda.sawmill, d[0], d[1], d[2]]
    }

    pub fn rep_seed(&self, rep: usize) -> u64 {
        derive_seed(self.seed, rep as u64)
    }
}

/// Entry records for every auction and price records for those with two or
/// more bidders. Values use `v0 = 1` for both types.
pub fn simulate_auction_dataset(
    config: &McConfig,
    rep_seed: u64,
) -> Result<(Vec<EntryObservation>, Vec<BidObservation>)> {
    config.validate()?;
    let samplers = PerType::new(
        config.valuation.multiplier(BidderType::Logger).sampler(),
        config.valuation.multiplier(BidderType::Sawmill).sampler(),
    );
    let seed = derive_seed(rep_seed, 0);
    let mut entries = Vec::with_capacity(config.auctions);
    let mut bids = Vec::with_capacity(config.auctions);
    for i in 0..config.auctions {
        let mut rng = stream(seed, i as u64);
        let (lo, hi) = config.potential;
        let potential = PerType::new(rng.random_range(lo..=hi), rng.random_range(lo..=hi));
        let rates = PerType::new(
            config.lambda.logger * potential.logger as f64,
            config.lambda.sawmill * potential.sawmill as f64,
        );
        if rates.logger + rates.sawmill <= 0.0 {
            return Err(Error::NoEntrants);
        }
        let mut entrants = None;
        for _ in 0..MAX_ENTRY_DRAWS {
            let n = PerType::new(poisson(&mut rng, rates.logger), poisson(&mut rng, rates.sawmill));
            if n.logger + n.sawmill >= 1 {
                entrants = Some(n);
                break;
            }
        }
        let n = entrants.ok_or(Error::NoEntrants)?;
        let id = format!("a{i:05}");
        entries.push(EntryObservation {
            auction_id: id.clone(),
            format: AuctionFormat::Oral,
            n: n.logger + n.sawmill,
            n_logger: potential.logger,
            n_sawmill: potential.sawmill,
        });
        let mut values: Vec<(f64, BidderType)> = Vec::new();
        for t in BidderType::ALL {
            for _ in 0..n[t] {
                values.push((samplers[t].sample(&mut rng), t));
            }
        }
        if values.len() < 2 {
            continue;
        }
        values.sort_by(|a, b| b.0.total_cmp(&a.0));
        bids.push(BidObservation {
            auction_id: id,
            n: values.len() as u32,
            winner_type: values[0].1,
            tau: values[1].0,
            v0_l: 1.0,
            v0_s: 1.0,
        });
    }
    Ok((entries, bids))
}

fn poisson<R: Rng + ?Sized>(rng: &mut R, rate: f64) -> u32 {
    if rate <= 0.0 {
        return 0;
    }
    let d = Poisson::new(rate).expect("positive finite rate");
    d.sample(rng) as u32
}

/// Harvest spells at the true dynamic parameters. Agent `i` starts at price
/// index `i mod grid size`.
pub fn simulate_cutting_dataset(config: &McConfig, rep_seed: u64) -> Result<Vec<CuttingObservation>> {
    config.validate()?;
    let prices = config.prices()?;
    simulate_cutting_with(config, &prices, rep_seed)
}

fn simulate_cutting_with(config: &McConfig, prices: &PriceProcess, rep_seed: u64) -> Result<Vec<CuttingObservation>> {
    let solution = solve_dp(&config.dynamic, prices, config.periods, config.u0)?;
    let starts: Vec<usize> = (0..config.agents).map(|i| i % prices.len()).collect();
    let paths = simulate_paths_from(&solution, prices, &starts, derive_seed(rep_seed, 1))?;
    Ok(paths
        .iter()
        .enumerate()
        .map(|(i, p)| CuttingObservation::from_path(&format!("g{i:05}"), BidderType::Logger, config.u0, p))
        .collect())
}

/// Estimates from one replication. A block is `None` when its fit failed or
/// did not converge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepEstimate {
    pub rep: usize,
    pub seed: u64,
    pub valuation: Option<[f64; 4]>,
    pub lambda: Option<[f64; 2]>,
    pub dynamic: Option<[f64; 3]>,
    /// Auctions with a single bidder, absent from the price data.
    pub single_bidder: usize,
    pub notes: Vec<String>,
}

impl RepEstimate {
    fn value(&self, k: usize) -> Option<f64> {
        match k {
            0..=3 => self.valuation.map(|v| v[k]),
            4..=5 => self.lambda.map(|v| v[k - 4]),
            _ => self.dynamic.map(|v| v[k - 6]),
        }
    }
}

/// Simulates and refits one replication.
pub fn run_rep(config: &McConfig, prices: &PriceProcess, rep: usize) -> RepEstimate {
    let seed = config.rep_seed(rep);
    let fit = FitOptions { seed: derive_seed(seed, 2), ..config.fit.clone() };
    let mut out =
        RepEstimate { rep, seed, valuation: None, lambda: None, dynamic: None, single_bidder: 0, notes: Vec::new() };
    let mut note = |what: &str, msg: String| out.notes.push(format!("{what}: {msg}"));

    let mut lambda = None;
    let mut valuation = None;
    match simulate_auction_dataset(config, seed) {
        Err(e) => note("auctions", e.to_string()),
        Ok((entries, bids)) => {
            let single = entries.len() - bids.len();
            match fit_entry(&entries, AuctionFormat::Oral, config.lambda, &fit) {
                Ok(e) if e.convergence.converged => lambda = Some([e.lambda.logger, e.lambda.sawmill]),
                Ok(_) => note("entry", "did not converge".into()),
                Err(e) => note("entry", e.to_string()),
            }
            // the logger share comes from the fitted rates, the truth if that fit failed
            let rates = lambda.unwrap_or([config.lambda.logger, config.lambda.sawmill]);
            match type_share(rates[0], rates[1]).and_then(|p| fit_valuation(&bids, p, &config.valuation, &fit)) {
                Ok(v) if v.convergence.converged => valuation = Some(v.params.as_array()),
                Ok(_) => note("valuation", "did not converge".into()),
                Err(e) => note("valuation", e.to_string()),
            }
            out.single_bidder = single;
        }
    }
    let mut dynamic = None;
    match simulate_cutting_with(config, prices, seed)
        .and_then(|data| fit_dynamic(&data, prices, &config.dynamic, config.dynamic.beta, &fit))
    {
        Ok(d) if d.convergence.converged => dynamic = Some(d.params.as_array()),
        Ok(_) => note("dynamic", "did not converge".into()),
        Err(e) => note("dynamic", e.to_string()),
    }
    out.lambda = lambda;
    out.valuation = valuation;
    out.dynamic = dynamic;
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub name: String,
    pub truth: f64,
    pub mean: f64,
    pub bias: f64,
    pub rmse: f64,
    /// Standard error of the bias, zero with fewer than two reps.
    pub bias_se: f64,
    pub used: usize,
    pub excluded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub config: McConfig,
    pub params: Vec<ParamSummary>,
    pub reps: Vec<RepEstimate>,
}

impl McReport {
    pub fn param(&self, name: &str) -> Option<&ParamSummary> {
        self.params.iter().find(|p| p.name == name)
    }
}

/// Summaries of `reps` against `truth`, one per entry of [`PARAMETERS`].
pub fn summarize(reps: &[RepEstimate], truth: &[f64; 9]) -> Vec<ParamSummary> {
    PARAMETERS
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let errors: Vec<f64> = reps.iter().filter_map(|r| r.value(k)).map(|x| x - truth[k]).collect();
            let used = errors.len();
            let (mut bias, mut rmse, mut bias_se) = (f64::NAN, f64::NAN, 0.0);
            if used > 0 {
                let n = used as f64;
                bias = errors.iter().sum::<f64>() / n;
                rmse = libm::sqrt(errors.iter().map(|e| e * e).sum::<f64>() / n);
                if used > 1 {
                    let var = errors.iter().map(|e| (e - bias) * (e - bias)).sum::<f64>() / (n - 1.0);
                    bias_se = libm::sqrt(var / n);
                }
            }
            ParamSummary {
                name: String::from(*name),
                truth: truth[k],
                mean: truth[k] + bias,
                bias,
                rmse,
                bias_se,
                used,
                excluded: reps.len() - used,
            }
        })
        .collect()
}

/// Runs every replication and aggregates bias and RMSE.
pub fn run_mc<E: Executor>(config: &McConfig, exec: &E) -> Result<McReport> {
    config.validate()?;
    let prices = config.prices()?;
    let reps = exec.map_indices(config.reps, |rep| run_rep(config, &prices, rep));
    Ok(McReport { config: config.clone(), params: summarize(&reps, &config.truth()), reps })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::Sequential;
    use alloc::vec;

    fn small() -> McConfig {
        McConfig { reps: 2, auctions: 200, agents: 200, ..McConfig::default() }
    }

    #[test]
    fn datasets_are_deterministic() {
        let c = small();
        assert_eq!(simulate_auction_dataset(&c, 7).unwrap(), simulate_auction_dataset(&c, 7).unwrap());
        assert_ne!(simulate_auction_dataset(&c, 7).unwrap(), simulate_auction_dataset(&c, 8).unwrap());
        assert_eq!(simulate_cutting_dataset(&c, 7).unwrap(), simulate_cutting_dataset(&c, 7).unwrap());
    }

    #[test]
    fn zero_rates_cannot_produce_entrants() {
        let c = McConfig { lambda: PerType::new(0.0, 0.0), ..small() };
        assert_eq!(simulate_auction_dataset(&c, 1).unwrap_err(), Error::NoEntrants);
    }

    #[test]
    fn auction_records_are_consistent() {
        let c = McConfig { auctions: 2000, ..small() };
        let (entries, bids) = simulate_auction_dataset(&c, 3).unwrap();
        assert_eq!(entries.len(), 2000);
        assert!(entries.iter().all(|e| e.n >= 1 && (5..=15).contains(&e.n_logger) && (5..=15).contains(&e.n_sawmill)));
        let multi = entries.iter().filter(|e| e.n >= 2).count();
        assert_eq!(bids.len(), multi);
        assert!(bids.iter().all(|b| b.tau > 0.0 && b.validate().is_ok()));
    }

    #[test]
    fn logger_share_of_entrants_matches_rates() {
        // re-simulate entrant types through the same streams used by the simulator
        let c = McConfig { auctions: 5000, ..small() };
        let seed = derive_seed(11, 0);
        let (mut loggers, mut total, mut expected) = (0.0, 0.0, 0.0);
        let (mut var, mut count) = (0.0, 0.0);
        for i in 0..c.auctions {
            let mut rng = stream(seed, i as u64);
            let nl: u32 = rng.random_range(5..=15);
            let ns: u32 = rng.random_range(5..=15);
            let (rl, rs) = (0.1 * nl as f64, 0.15 * ns as f64);
            loop {
                let a = poisson(&mut rng, rl);
                let b = poisson(&mut rng, rs);
                if a + b >= 1 {
                    let n = (a + b) as f64;
                    let p = rl / (rl + rs);
                    loggers += a as f64;
                    total += n;
                    expected += n * p;
                    var += n * p * (1.0 - p);
                    count += 1.0;
                    break;
                }
            }
        }
        let (entries, _) = simulate_auction_dataset(&c, 11).unwrap();
        let simulated: f64 = entries.iter().map(|e| e.n as f64).sum();
        assert_eq!(simulated, total);
        assert!(count == c.auctions as f64);
        // given the totals, logger counts are binomial with the per-auction share
        assert!((loggers - expected).abs() < 3.0 * libm::sqrt(var));
    }

    #[test]
    fn cutting_agents_cycle_start_prices() {
        let c = small();
        let data = simulate_cutting_dataset(&c, 5).unwrap();
        assert_eq!(data.len(), 200);
        for (i, o) in data.iter().enumerate() {
            assert_eq!(o.choices[0].price_idx, i % 10);
            assert_eq!(o.periods, 8);
            assert!(!o.censored);
        }
    }

    #[test]
    fn single_rep_rmse_is_absolute_bias() {
        let c = McConfig { reps: 1, ..small() };
        let r = run_mc(&c, &Sequential).unwrap();
        for p in &r.params {
            assert_eq!(p.used, 1, "{:?}", r.reps[0].notes);
            assert_eq!(p.rmse, libm::fabs(p.bias));
        }
    }

    #[test]
    fn summaries_skip_failed_blocks() {
        let mk = |v: Option<[f64; 3]>| RepEstimate {
            rep: 0,
            seed: 0,
            valuation: None,
            lambda: Some([0.2, 0.1]),
            dynamic: v,
            single_bidder: 0,
            notes: Vec::new(),
        };
        let reps = vec![mk(Some([2.0, 0.5, 0.05])), mk(None), mk(Some([0.0, 0.5, 0.05]))];
        let s = summarize(&reps, &McConfig::default().truth());
        let gamma = &s[6];
        assert_eq!((gamma.used, gamma.excluded), (2, 1));
        assert_eq!(gamma.bias, 0.0);
        assert_eq!(gamma.rmse, 1.0);
        assert_eq!(s[0].used, 0);
        assert!(s[0].bias.is_nan());
        assert!((s[4].bias - 0.1).abs() < 1e-12 && (s[4].rmse - 0.1).abs() < 1e-12);
    }

    #[test]
    fn report_is_reproducible() {
        let c = small();
        assert_eq!(run_mc(&c, &Sequential).unwrap(), run_mc(&c, &Sequential).unwrap());
    }
}
