//! Finite-horizon harvesting problem solved by backward induction.
//!
//! State is `(t, price index, remaining share)`, with the remaining share on
//! the quarter grid. Action-specific shocks are type-I extreme value with unit
//! scale, so integrated values are log-sum-exps and choice probabilities are
//! logits.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::RangeInclusive;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{CuttingState, DynamicParams, PriceProcess, Quarters};
use crate::rng::stream;
use crate::special::{logsumexp, EULER_GAMMA};

const A: usize = Quarters::GRID;

/// Deterministic per-period payoff of cutting share `q` of a tract of size `u0`.
pub fn flow_payoff(q: Quarters, remaining: Quarters, u0: f64, price: f64, params: &DynamicParams) -> Result<f64> {
    if q > remaining {
        return Err(Error::InfeasibleAction { action: q.fraction(), remaining: remaining.fraction() });
    }
    Ok(cut_payoff(q, u0, price, params))
}

fn cut_payoff(q: Quarters, u0: f64, price: f64, params: &DynamicParams) -> f64 {
    let volume = q.fraction() * u0;
    volume * (params.gamma * price - params.c1 - params.c2 * volume)
}

/// Feasible actions at period `t` of `periods` with `remaining` standing.
pub fn feasible_actions(t: u32, periods: u32, remaining: Quarters) -> RangeInclusive<u8> {
    if t == periods {
        remaining.count()..=remaining.count()
    } else {
        0..=remaining.count()
    }
}

/// Backward-induction output for one `(params, prices, T, u0)` configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpSolution {
    periods: u32,
    n_prices: usize,
    // flow payoff by [price][action]
    flow: Vec<f64>,
    // by [t-1][price][remaining][action]; -inf where infeasible
    choice_values: Vec<f64>,
    log_ccps: Vec<f64>,
    // by [t-1][price][remaining]
    values: Vec<f64>,
}

impl DpSolution {
    pub fn periods(&self) -> u32 {
        self.periods
    }

    pub fn n_prices(&self) -> usize {
        self.n_prices
    }

    fn state_index(&self, t: u32, p: usize, r: Quarters) -> usize {
        ((t as usize - 1) * self.n_prices + p) * A + r.count() as usize
    }

    fn check(&self, state: &CuttingState) -> Result<usize> {
        if state.t < 1 || state.t > self.periods {
            return Err(Error::Domain(format!("period {} outside 1..={}", state.t, self.periods)));
        }
        if state.price_idx >= self.n_prices {
            return Err(Error::Domain(format!(
                "price index {} outside the {}-level grid",
                state.price_idx, self.n_prices
            )));
        }
        Ok(self.state_index(state.t, state.price_idx, state.remaining))
    }

    /// Integrated value `V_t` at the state.
    pub fn value(&self, state: &CuttingState) -> Result<f64> {
        Ok(self.values[self.check(state)?])
    }

    /// Value at contract start with the whole tract standing, for each price level.
    pub fn v0(&self) -> Vec<f64> {
        (0..self.n_prices).map(|p| self.values[self.state_index(1, p, Quarters::ALL)]).collect()
    }

    pub fn v0_at(&self, price_idx: usize) -> Result<f64> {
        self.value(&CuttingState { t: 1, price_idx, remaining: Quarters::ALL })
    }

    /// Choice-specific values over the action grid (`-inf` off the feasible set).
    pub fn choice_values(&self, state: &CuttingState) -> Result<[f64; A]> {
        let s = self.check(state)?;
        let mut out = [0.0; A];
        out.copy_from_slice(&self.choice_values[s * A..(s + 1) * A]);
        Ok(out)
    }

    /// Conditional choice probabilities over the action grid.
    pub fn ccp(&self, state: &CuttingState) -> Result<[f64; A]> {
        let s = self.check(state)?;
        let mut out = [0.0; A];
        for (o, &l) in out.iter_mut().zip(&self.log_ccps[s * A..(s + 1) * A]) {
            *o = libm::exp(l);
        }
        Ok(out)
    }

    /// Log choice probability of `action` at the state.
    pub fn log_ccp(&self, state: &CuttingState, action: Quarters) -> Result<f64> {
        let s = self.check(state)?;
        Ok(self.log_ccps[s * A + action.count() as usize])
    }

    pub(crate) fn log_ccp_table(&self) -> &[f64] {
        &self.log_ccps
    }

    pub fn flow_payoff_at(&self, price_idx: usize, action: Quarters) -> f64 {
        self.flow[price_idx * A + action.count() as usize]
    }
}

/// Conditional choice probabilities at `state`; see [`DpSolution::ccp`].
pub fn ccp(solution: &DpSolution, state: &CuttingState) -> Result<[f64; A]> {
    solution.ccp(state)
}

/// Solves the harvesting problem for one bidder type.
pub fn solve_dp(params: &DynamicParams, prices: &PriceProcess, periods: u32, u0: f64) -> Result<DpSolution> {
    params.validate()?;
    if !(u0 > 0.0 && u0.is_finite()) {
        return Err(invalid("tract size must be positive"));
    }
    solve_dp_with_payoff(prices, periods, params.beta, |q, p| cut_payoff(q, u0, prices.price(p), params))
}

/// Backward induction with an arbitrary deterministic flow payoff `payoff(action, price_idx)`.
pub fn solve_dp_with_payoff(
    prices: &PriceProcess,
    periods: u32,
    beta: f64,
    payoff: impl Fn(Quarters, usize) -> f64,
) -> Result<DpSolution> {
    if periods < 1 {
        return Err(invalid("contract length must be at least one period"));
    }
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(invalid("discount factor outside (0, 1]"));
    }
    let np = prices.len();
    let horizon = periods as usize;
    let mut flow = vec![0.0; np * A];
    for p in 0..np {
        for a in 0..A {
            flow[p * A + a] = payoff(Quarters::new(a as u8)?, p);
        }
    }
    let mut choice_values = vec![f64::NEG_INFINITY; horizon * np * A * A];
    let mut log_ccps = vec![f64::NEG_INFINITY; horizon * np * A * A];
    let mut values = vec![0.0; horizon * np * A];
    // expected next-period value by [price][remaining]
    let mut expected_next = vec![0.0; np * A];

    for t in (1..=periods).rev() {
        let ti = t as usize - 1;
        if t < periods {
            let next = &values[(ti + 1) * np * A..(ti + 2) * np * A];
            for p in 0..np {
                let row = prices.row(p);
                for r in 0..A {
                    expected_next[p * A + r] = row.iter().enumerate().map(|(q, &w)| w * next[q * A + r]).sum();
                }
            }
        }
        for p in 0..np {
            for r in 0..A {
                let remaining = Quarters::new(r as u8)?;
                let s = (ti * np + p) * A + r;
                let cv = &mut choice_values[s * A..(s + 1) * A];
                for a in feasible_actions(t, periods, remaining) {
                    let a = a as usize;
                    let continuation = if t < periods { beta * expected_next[p * A + (r - a)] } else { 0.0 };
                    cv[a] = flow[p * A + a] + continuation;
                }
                let lse = logsumexp(cv);
                values[s] = lse + EULER_GAMMA;
                for a in 0..A {
                    log_ccps[s * A + a] = cv[a] - lse;
                }
            }
        }
    }
    Ok(DpSolution { periods, n_prices: np, flow, choice_values, log_ccps, values })
}

/// One simulated harvest spell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CuttingPath {
    pub actions: Vec<Quarters>,
    /// Price index at the start of each period.
    pub price_path: Vec<usize>,
    /// Deterministic flow payoff realized each period.
    pub payoffs: Vec<f64>,
}

impl CuttingPath {
    pub fn total_cut(&self) -> Quarters {
        Quarters::new(self.actions.iter().map(|a| a.count()).sum()).expect("spell cuts at most the tract")
    }
}

fn draw_index<R: Rng + ?Sized>(rng: &mut R, probs: impl Iterator<Item = f64> + Clone) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, p) in probs.enumerate() {
        if p > 0.0 {
            last_positive = i;
        }
        acc += p;
        if u < acc {
            return i;
        }
    }
    last_positive
}

/// Simulates `n` spells starting at `p0_idx`. Path `i` uses stream `i` of `seed`.
pub fn simulate_paths(
    solution: &DpSolution,
    prices: &PriceProcess,
    n: usize,
    seed: u64,
    p0_idx: usize,
) -> Result<Vec<CuttingPath>> {
    if n < 1 {
        return Err(invalid("need at least one path"));
    }
    simulate_paths_from(solution, prices, &vec![p0_idx; n], seed)
}

/// Simulates one spell per entry of `starts`, each from its own initial price index.
pub fn simulate_paths_from(
    solution: &DpSolution,
    prices: &PriceProcess,
    starts: &[usize],
    seed: u64,
) -> Result<Vec<CuttingPath>> {
    if prices.len() != solution.n_prices {
        return Err(invalid("price process does not match the solved grid"));
    }
    if let Some(&bad) = starts.iter().find(|&&p| p >= prices.len()) {
        return Err(Error::Domain(format!("initial price index {bad} off the grid")));
    }
    let horizon = solution.periods as usize;
    Ok(starts
        .iter()
        .enumerate()
        .map(|(i, &p0)| {
            let mut rng = stream(seed, i as u64);
            let mut path = CuttingPath {
                actions: Vec::with_capacity(horizon),
                price_path: Vec::with_capacity(horizon),
                payoffs: Vec::with_capacity(horizon),
            };
            let mut p = p0;
            let mut remaining = Quarters::ALL;
            for t in 1..=solution.periods {
                let s = solution.state_index(t, p, remaining);
                let logs = &solution.log_ccps[s * A..(s + 1) * A];
                let a = draw_index(&mut rng, logs.iter().map(|&l| libm::exp(l)));
                let action = Quarters::new(a as u8).expect("grid index");
                path.actions.push(action);
                path.price_path.push(p);
                path.payoffs.push(solution.flow_payoff_at(p, action));
                remaining = Quarters::new(remaining.count() - action.count()).expect("feasible");
                if t < solution.periods {
                    p = draw_index(&mut rng, prices.row(p).iter().copied());
                }
            }
            path
        })
        .collect())
}

/// One row of the continuation-value table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContinuationRow {
    pub contract_length: u32,
    pub tract_size: f64,
    pub price_idx: usize,
    pub v0: f64,
}

/// `V_0` over a grid of contract lengths, tract sizes and initial price levels.
pub fn continuation_value_curve(
    params: &DynamicParams,
    prices: &PriceProcess,
    lengths: &[u32],
    sizes: &[f64],
    price_indices: &[usize],
) -> Result<Vec<ContinuationRow>> {
    if lengths.is_empty() || sizes.is_empty() || price_indices.is_empty() {
        return Err(invalid("contract lengths, tract sizes and price levels must be nonempty"));
    }
    if let Some(&bad) = price_indices.iter().find(|&&p| p >= prices.len()) {
        return Err(Error::Domain(format!("price index {bad} off the grid")));
    }
    let mut rows = Vec::with_capacity(lengths.len() * sizes.len() * price_indices.len());
    for &u0 in sizes {
        for &periods in lengths {
            let v0 = solve_dp(params, prices, periods, u0)?.v0();
            for &p in price_indices {
                rows.push(ContinuationRow { contract_length: periods, tract_size: u0, price_idx: p, v0: v0[p] });
            }
        }
    }
    Ok(rows)
}
