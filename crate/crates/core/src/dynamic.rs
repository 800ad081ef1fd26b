//! Nested-fixed-point estimation of the harvesting parameters.
//!
//! The inner loop is [`solve_dp`]; the outer loop is a multi-start simplex
//! search over `(gamma, c1, c2)` with the discount factor held fixed.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::dp::{solve_dp, CuttingPath};
use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::fit::{cluster_bootstrap, multi_start, replicate_seeds, BootstrapSummary, Convergence, FitOptions};
use crate::model::{BidderType, DynamicParams, PriceProcess, Quarters};

const A: usize = Quarters::GRID;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CuttingChoice {
    pub t: u32,
    pub price_idx: usize,
    /// Share still standing at the start of period `t`.
    pub remaining: Quarters,
    pub action: Quarters,
}

/// Observed harvest spell of one auction winner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CuttingObservation {
    pub auction_id: String,
    pub bidder_type: BidderType,
    pub periods: u32,
    pub u0: f64,
    pub choices: Vec<CuttingChoice>,
    /// The spell ends before the tract is fully harvested.
    pub censored: bool,
}

impl CuttingObservation {
    /// Builds a spell from `(t, price_idx, cut fraction)` records.
    ///
    /// Records must cover consecutive periods starting at 1. Cut fractions are
    /// snapped to the quarter grid and the remaining share is accumulated.
    pub fn from_records(
        auction_id: &str,
        bidder_type: BidderType,
        periods: u32,
        u0: f64,
        records: &[(u32, usize, f64)],
    ) -> Result<Self> {
        let data_err = |reason: String| Error::Data { record: String::from(auction_id), reason };
        if records.is_empty() {
            return Err(data_err(String::from("no cutting records")));
        }
        let mut sorted = records.to_vec();
        sorted.sort_by_key(|r| r.0);
        let mut remaining = Quarters::ALL.count();
        let mut choices = Vec::with_capacity(sorted.len());
        for (i, &(t, price_idx, q)) in sorted.iter().enumerate() {
            if t != i as u32 + 1 {
                return Err(data_err(format!("periods must run 1, 2, ... without gaps; found {t}")));
            }
            let action = Quarters::snap(q).map_err(|e| data_err(format!("period {t}: {e}")))?;
            if action.count() > remaining {
                return Err(data_err(format!(
                    "period {t}: cut {} exceeds the remaining share {}",
                    action.fraction(),
                    remaining as f64 * 0.25
                )));
            }
            choices.push(CuttingChoice { t, price_idx, remaining: Quarters::new(remaining)?, action });
            remaining -= action.count();
        }
        let obs = CuttingObservation {
            auction_id: String::from(auction_id),
            bidder_type,
            periods,
            u0,
            choices,
            censored: remaining > 0,
        };
        Ok(obs)
    }

    /// Spell from a simulated path.
    pub fn from_path(auction_id: &str, bidder_type: BidderType, u0: f64, path: &CuttingPath) -> Self {
        let mut remaining = Quarters::ALL;
        let choices = path
            .actions
            .iter()
            .zip(&path.price_path)
            .enumerate()
            .map(|(i, (&action, &price_idx))| {
                let c = CuttingChoice { t: i as u32 + 1, price_idx, remaining, action };
                remaining = Quarters::new(remaining.count() - action.count()).expect("feasible path");
                c
            })
            .collect();
        CuttingObservation {
            auction_id: String::from(auction_id),
            bidder_type,
            periods: path.actions.len() as u32,
            u0,
            choices,
            censored: remaining.count() > 0,
        }
    }

    /// Checks every choice against the state space of a `n_prices` grid.
    pub fn validate(&self, n_prices: usize) -> Result<()> {
        let data_err = |reason: String| Error::Data { record: self.auction_id.clone(), reason };
        if self.periods < 1 {
            return Err(data_err(String::from("contract length must be positive")));
        }
        if !(self.u0 > 0.0 && self.u0.is_finite()) {
            return Err(data_err(String::from("tract size must be positive")));
        }
        let mut total = 0;
        for c in &self.choices {
            if c.t < 1 || c.t > self.periods {
                return Err(data_err(format!("period {} outside 1..={}", c.t, self.periods)));
            }
            if c.price_idx >= n_prices {
                return Err(data_err(format!("price index {} off the {n_prices}-level grid", c.price_idx)));
            }
            if c.action > c.remaining {
                return Err(data_err(format!(
                    "period {}: infeasible cut {} with {} remaining",
                    c.t,
                    c.action.fraction(),
                    c.remaining.fraction()
                )));
            }
            if c.t == self.periods && c.action != c.remaining {
                return Err(data_err(format!(
                    "period {}: the last period must clear the remaining {}",
                    c.t,
                    c.remaining.fraction()
                )));
            }
            total += c.action.count();
        }
        if total > 4 {
            return Err(data_err(String::from("cuts sum to more than the whole tract")));
        }
        if total < 4 && !self.censored {
            return Err(data_err(String::from("spell does not clear the tract and is not flagged censored")));
        }
        Ok(())
    }
}

/// Choice counts by `(T, u0)`; each table is indexed `[t-1][price][remaining][action]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChoiceCounts {
    n_prices: usize,
    tables: BTreeMap<(u32, u64), Vec<f64>>,
}

impl ChoiceCounts {
    pub fn tabulate<'a>(data: impl IntoIterator<Item = &'a CuttingObservation>, n_prices: usize) -> Result<Self> {
        let mut tables: BTreeMap<(u32, u64), Vec<f64>> = BTreeMap::new();
        for obs in data {
            obs.validate(n_prices)?;
            let table = tables
                .entry((obs.periods, obs.u0.to_bits()))
                .or_insert_with(|| vec![0.0; obs.periods as usize * n_prices * A * A]);
            for c in &obs.choices {
                let s = ((c.t as usize - 1) * n_prices + c.price_idx) * A + c.remaining.count() as usize;
                table[s * A + c.action.count() as usize] += 1.0;
            }
        }
        Ok(ChoiceCounts { n_prices, tables })
    }

    pub fn loglik(&self, params: &DynamicParams, prices: &PriceProcess) -> Result<f64> {
        if prices.len() != self.n_prices {
            return Err(crate::error::invalid("price process does not match the tabulated grid"));
        }
        let mut total = 0.0;
        for (&(periods, u0_bits), counts) in &self.tables {
            let sol = solve_dp(params, prices, periods, f64::from_bits(u0_bits))?;
            for (&n, &l) in counts.iter().zip(sol.log_ccp_table()) {
                if n > 0.0 {
                    total += n * l;
                }
            }
        }
        Ok(total)
    }
}

/// Log-likelihood of observed cutting choices under `params`.
pub fn cutting_loglik(data: &[CuttingObservation], params: &DynamicParams, prices: &PriceProcess) -> Result<f64> {
    ChoiceCounts::tabulate(data, prices.len())?.loglik(params, prices)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicEstimate {
    pub params: DynamicParams,
    pub loglik: f64,
    /// Bootstrap standard errors of `(gamma, c1, c2)`, once computed.
    pub se: Option<[f64; 3]>,
    pub convergence: Convergence,
}

/// Maximum-likelihood estimate of `(gamma, c1, c2)` with `beta` held fixed.
pub fn fit_dynamic(
    data: &[CuttingObservation],
    prices: &PriceProcess,
    init: &DynamicParams,
    beta: f64,
    opts: &FitOptions,
) -> Result<DynamicEstimate> {
    let init = DynamicParams { beta, ..*init };
    init.validate()?;
    let counts = ChoiceCounts::tabulate(data, prices.len())?;
    fit_counts(&counts, prices, &init, opts)
}

fn fit_counts(
    counts: &ChoiceCounts,
    prices: &PriceProcess,
    init: &DynamicParams,
    opts: &FitOptions,
) -> Result<DynamicEstimate> {
    let objective = |theta: &[f64]| {
        let p = init.with_array([theta[0], theta[1], theta[2]]);
        match counts.loglik(&p, prices) {
            Ok(l) => -l,
            Err(_) => f64::INFINITY,
        }
    };
    let (best, convergence) = multi_start(objective, &init.as_array(), opts);
    let params = init.with_array([best.x[0], best.x[1], best.x[2]]);
    Ok(DynamicEstimate { params, loglik: -best.f, se: None, convergence })
}

/// Fits each bidder type on its own subsample.
pub fn fit_dynamic_by_type(
    data: &[CuttingObservation],
    prices: &PriceProcess,
    init: &BTreeMap<BidderType, DynamicParams>,
    beta: f64,
    opts: &FitOptions,
) -> Result<BTreeMap<BidderType, DynamicEstimate>> {
    let mut out = BTreeMap::new();
    for t in BidderType::ALL {
        let subset: Vec<CuttingObservation> = data.iter().filter(|o| o.bidder_type == t).cloned().collect();
        if subset.is_empty() {
            continue;
        }
        let start =
            init.get(&t).ok_or_else(|| crate::error::invalid(format!("no initial values for {}", t.label())))?;
        out.insert(t, fit_dynamic(&subset, prices, start, beta, opts)?);
    }
    Ok(out)
}

/// Cluster bootstrap over auctions: resample spells by auction id, refit, and
/// report the dispersion of the refits.
pub fn bootstrap_dynamic<E: Executor>(
    data: &[CuttingObservation],
    prices: &PriceProcess,
    fit: &DynamicEstimate,
    reps: usize,
    seed: u64,
    opts: &FitOptions,
    exec: &E,
) -> Result<BootstrapSummary> {
    if reps < 2 {
        return Err(crate::error::invalid("bootstrap needs at least two replicates"));
    }
    bootstrap_dynamic_with_seeds(data, prices, fit, &replicate_seeds(seed, reps), opts, exec)
}

/// As [`bootstrap_dynamic`], with one explicit resampling seed per replicate.
pub fn bootstrap_dynamic_with_seeds<E: Executor>(
    data: &[CuttingObservation],
    prices: &PriceProcess,
    fit: &DynamicEstimate,
    seeds: &[u64],
    opts: &FitOptions,
    exec: &E,
) -> Result<BootstrapSummary> {
    for obs in data {
        obs.validate(prices.len())?;
    }
    let summary = cluster_bootstrap(
        data,
        |o| o.auction_id.as_str(),
        seeds,
        3,
        exec,
        |picks| {
            let counts = ChoiceCounts::tabulate(picks.iter().copied(), prices.len()).ok()?;
            let est = fit_counts(&counts, prices, &fit.params, opts).ok()?;
            est.convergence.converged.then(|| est.params.as_array().to_vec())
        },
    );
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dp::simulate_paths_from;
    use crate::exec::Sequential;
    use crate::model::build_gaussian_transition;

    fn prices() -> PriceProcess {
        let grid: Vec<f64> = (1..=10).map(|x| x as f64).collect();
        build_gaussian_transition(&grid, 1.0).unwrap()
    }

    fn truth() -> DynamicParams {
        DynamicParams::new(1.0, 0.5, 0.05, 0.95).unwrap()
    }

    fn simulate(params: &DynamicParams, n: usize, seed: u64) -> Vec<CuttingObservation> {
        let prices = prices();
        let sol = solve_dp(params, &prices, 8, 1.0).unwrap();
        let starts: Vec<usize> = (0..n).map(|i| i % 10).collect();
        simulate_paths_from(&sol, &prices, &starts, seed)
            .unwrap()
            .iter()
            .enumerate()
            .map(|(i, p)| CuttingObservation::from_path(&format!("a{i}"), BidderType::Logger, 1.0, p))
            .collect()
    }

    #[test]
    fn forced_single_period_has_zero_loglik() {
        let obs = CuttingObservation::from_records("k1", BidderType::Logger, 1, 1.0, &[(1, 3, 1.0)]).unwrap();
        let l = cutting_loglik(&[obs], &truth(), &prices()).unwrap();
        assert_eq!(l, 0.0);
    }

    #[test]
    fn uniform_ccps_give_counting_loglik() {
        // Zero payoff over two periods: the second period is forced, so every
        // first-period action has the same continuation.
        let prices = prices();
        let flat = DynamicParams::new(0.0, 0.0, 0.0, 1.0).unwrap();
        let obs =
            CuttingObservation::from_records("k1", BidderType::Sawmill, 2, 1.0, &[(1, 0, 0.25), (2, 5, 0.75)]).unwrap();
        let l = cutting_loglik(&[obs], &flat, &prices).unwrap();
        assert!((l - libm::log(1.0 / 5.0)).abs() < 1e-12);
    }

    #[test]
    fn infeasible_record_is_named() {
        let err = CuttingObservation::from_records("tract-9", BidderType::Logger, 3, 1.0, &[(1, 0, 0.75), (2, 0, 0.5)])
            .unwrap_err();
        match err {
            Error::Data { record, .. } => assert_eq!(record, "tract-9"),
            other => panic!("unexpected {other:?}"),
        }
        let obs =
            CuttingObservation::from_records("t2", BidderType::Logger, 2, 1.0, &[(1, 0, 0.25), (2, 0, 0.5)]).unwrap();
        assert!(obs.censored);
        // Last period must clear the tract.
        assert!(matches!(cutting_loglik(&[obs], &truth(), &prices()), Err(Error::Data { .. })));
    }

    #[test]
    fn censored_spells_contribute_observed_periods() {
        let obs =
            CuttingObservation::from_records("c", BidderType::Logger, 4, 1.0, &[(1, 2, 0.0), (2, 3, 0.25)]).unwrap();
        assert!(obs.censored);
        let prices = prices();
        let sol = solve_dp(&truth(), &prices, 4, 1.0).unwrap();
        let expected = sol
            .log_ccp(&crate::model::CuttingState { t: 1, price_idx: 2, remaining: Quarters::ALL }, Quarters::ZERO)
            .unwrap()
            + sol
                .log_ccp(
                    &crate::model::CuttingState { t: 2, price_idx: 3, remaining: Quarters::ALL },
                    Quarters::new(1).unwrap(),
                )
                .unwrap();
        let l = cutting_loglik(&[obs], &truth(), &prices).unwrap();
        assert!((l - expected).abs() < 1e-12);
    }

    #[test]
    fn loglik_ignores_observation_order() {
        let mut data = simulate(&truth(), 60, 3);
        let a = cutting_loglik(&data, &truth(), &prices()).unwrap();
        data.reverse();
        let b = cutting_loglik(&data, &truth(), &prices()).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn fit_recovers_simulated_parameters() {
        let data = simulate(&truth(), 1000, 17);
        let est = fit_dynamic(&data, &prices(), &truth(), 0.95, &FitOptions::default()).unwrap();
        assert!(est.convergence.converged);
        assert!(est.loglik <= 0.0);
        assert!((est.params.gamma - 1.0).abs() < 0.2, "{:?}", est.params);
        assert!((est.params.c1 - 0.5).abs() < 0.5, "{:?}", est.params);
        assert!(est.loglik >= cutting_loglik(&data, &truth(), &prices()).unwrap());
    }

    #[test]
    fn tiny_data_smoke() {
        let data = simulate(&truth(), 3, 1);
        let est = fit_dynamic(&data, &prices(), &truth(), 0.95, &FitOptions::default()).unwrap();
        assert!(est.loglik.is_finite());
    }

    #[test]
    fn bootstrap_with_identical_resamples_has_zero_se() {
        let data = simulate(&truth(), 40, 5);
        let opts = FitOptions { starts: 1, ..Default::default() };
        let est = fit_dynamic(&data, &prices(), &truth(), 0.95, &opts).unwrap();
        let s = bootstrap_dynamic_with_seeds(&data, &prices(), &est, &[9, 9], &opts, &Sequential).unwrap();
        assert_eq!(s.used, 2);
        assert_eq!(s.se, vec![0.0; 3]);
    }
}
