//! Expected seller revenue by auction format, contract length, tract size and
//! participant composition.
//!
//! A bidder's value is `xi * v0(type)`, where `v0` is the winner's continuation
//! value from the harvesting problem and `xi` is the type's multiplier. Oral
//! auctions pay the second-highest value; sealed auctions pay the highest
//! equilibrium bid. Both are Monte Carlo means over the same draws.
//!
//! Draws use common random numbers: the k-th bidder of a type in a cell reads
//! the same stream whatever the format or the other participants, so format
//! and composition contrasts are free of independent sampling noise.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bids::{solve_from_bases, BidSolverOptions, BidSystem};
use crate::dist::BaseDistribution;
use crate::dp::solve_dp;
use crate::error::{invalid, Error, Result};
use crate::exec::Executor;
use crate::model::{AuctionConfig, AuctionFormat, BidderType, DynamicParams, PerType, PriceProcess, TypeSpec};
use crate::rng::{derive_seed, key_hash, stream};

/// Share of clamped sealed-bid values above which a cell is flagged.
pub const CLAMP_WARNING_SHARE: f64 = 0.01;

/// One counterfactual auction environment. `config.periods` is replaced by
/// each swept length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub tract_size: String,
    pub config: AuctionConfig,
    pub types: PerType<TypeSpec>,
    pub dynamics: PerType<DynamicParams>,
    pub prices: PriceProcess,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        if self.config.p0_idx >= self.prices.len() {
            return Err(invalid(format!(
                "initial price index {} outside the {}-level grid",
                self.config.p0_idx,
                self.prices.len()
            )));
        }
        for t in BidderType::ALL {
            let spec = &self.types[t];
            if spec.bidder_type != t {
                return Err(invalid(format!(
                    "type spec in the {} slot is for {}",
                    t.label(),
                    spec.bidder_type.label()
                )));
            }
            spec.validate()?;
            self.dynamics[t].validate()?;
        }
        Ok(())
    }

    /// Participants written as `(S, L)`.
    pub fn participants_label(&self) -> String {
        participants_label(&self.config.participants)
    }

    /// Solves the harvesting problem of each present type and builds the market.
    pub fn market(&self) -> Result<Market> {
        self.validate()?;
        let mut v0 = PerType::new(0.0, 0.0);
        for t in BidderType::ALL {
            if self.config.count(t) > 0 {
                let dp = solve_dp(&self.dynamics[t], &self.prices, self.config.periods, self.config.u0)?;
                v0[t] = dp.v0_at(self.config.p0_idx)?;
            }
        }
        let multipliers = self.types.map(|_, s| BaseDistribution::Gamma { shape: s.sigma, scale: s.mu });
        Market::new(self.config.participants.clone(), v0, multipliers)
    }

    fn with_length(&self, periods: u32) -> Scenario {
        let mut s = self.clone();
        s.config.periods = periods;
        s
    }
}

pub fn participants_label(participants: &[BidderType]) -> String {
    let letters: Vec<String> = participants.iter().map(|t| t.letter().to_string()).collect();
    format!("({})", letters.join(", "))
}

/// Participants with their value distributions: value = multiplier draw times `v0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Market {
    pub participants: Vec<BidderType>,
    pub v0: PerType<f64>,
    pub multipliers: PerType<BaseDistribution>,
}

impl Market {
    pub fn new(
        participants: Vec<BidderType>,
        v0: PerType<f64>,
        multipliers: PerType<BaseDistribution>,
    ) -> Result<Self> {
        if participants.is_empty() {
            return Err(invalid("a market needs at least one participant"));
        }
        for t in BidderType::ALL {
            multipliers[t].validate()?;
            if participants.contains(&t) && !(v0[t] >= 0.0 && v0[t].is_finite()) {
                return Err(Error::Domain(format!(
                    "{} continuation value {} is negative or not finite",
                    t.label(),
                    v0[t]
                )));
            }
        }
        Ok(Market { participants, v0, multipliers })
    }

    pub fn counts(&self) -> PerType<u32> {
        let n = |t| self.participants.iter().filter(|&&p| p == t).count() as u32;
        PerType::new(n(BidderType::Logger), n(BidderType::Sawmill))
    }

    /// Value distribution of type `t`; `None` when its `v0` is zero.
    pub fn value_distribution(&self, t: BidderType) -> Option<BaseDistribution> {
        (self.v0[t] > 0.0).then(|| self.multipliers[t].scaled(self.v0[t]))
    }

    /// Type-`t` values for slot streams; the k-th bidder of a type uses stream `2k + type`.
    fn slot_values(&self, seed: u64, draws: usize) -> Vec<Vec<f64>> {
        let mut rank = PerType::new(0u64, 0u64);
        self.participants
            .iter()
            .map(|&t| {
                let k = rank[t];
                rank[t] += 1;
                let mut rng = stream(seed, 2 * k + t.index() as u64);
                let sampler = self.multipliers[t].sampler();
                (0..draws).map(|_| sampler.sample(&mut rng) * self.v0[t]).collect()
            })
            .collect()
    }
}

/// One independent draw of every participant's value.
pub fn draw_valuations<R: Rng + ?Sized>(market: &Market, rng: &mut R) -> Vec<f64> {
    market.participants.iter().map(|&t| market.multipliers[t].sampler().sample(rng) * market.v0[t]).collect()
}

/// Monte Carlo revenue estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RevenueEstimate {
    pub revenue: f64,
    pub se: f64,
    pub draws: usize,
    /// Values moved into the bid solver's support.
    pub clamped: u64,
}

impl RevenueEstimate {
    fn from_payments(payments: &[f64], clamped: u64) -> Self {
        let n = payments.len() as f64;
        let mean = payments.iter().sum::<f64>() / n;
        let se = if payments.len() > 1 {
            let ss: f64 = payments.iter().map(|p| (p - mean) * (p - mean)).sum();
            libm::sqrt(ss / (n - 1.0) / n)
        } else {
            0.0
        };
        RevenueEstimate { revenue: mean, se, draws: payments.len(), clamped }
    }

    /// Clamped share of all drawn values.
    pub fn clamped_share(&self, participants: usize) -> f64 {
        self.clamped as f64 / (self.draws * participants).max(1) as f64
    }
}

fn check_draws(draws: usize) -> Result<()> {
    if draws == 0 {
        return Err(invalid("draws must be at least one"));
    }
    Ok(())
}

/// Expected oral-auction revenue: the mean second-highest value.
pub fn revenue_oral(market: &Market, draws: usize, seed: u64) -> Result<RevenueEstimate> {
    check_draws(draws)?;
    if market.participants.len() < 2 {
        return Err(invalid("oral revenue needs at least two participants"));
    }
    let values = market.slot_values(seed, draws);
    let payments: Vec<f64> = (0..draws)
        .map(|i| {
            let (mut first, mut second) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
            for slot in &values {
                let v = slot[i];
                if v > first {
                    second = first;
                    first = v;
                } else if v > second {
                    second = v;
                }
            }
            second
        })
        .collect();
    Ok(RevenueEstimate::from_payments(&payments, 0))
}

/// Equilibrium bid functions for the market's composition.
pub fn solve_market_bids(market: &Market, opts: &BidSolverOptions) -> Result<BidSystem> {
    let counts = market.counts();
    let present = |t: BidderType| counts[t] > 0;
    let own = |t: BidderType| {
        market.value_distribution(t).ok_or_else(|| Error::Domain(format!("{} values are identically zero", t.label())))
    };
    let bases = match (present(BidderType::Logger), present(BidderType::Sawmill)) {
        (true, true) => PerType::new(own(BidderType::Logger)?, own(BidderType::Sawmill)?),
        (true, false) => {
            let b = own(BidderType::Logger)?;
            PerType::new(b, b)
        }
        (false, true) => {
            let b = own(BidderType::Sawmill)?;
            PerType::new(b, b)
        }
        (false, false) => return Err(invalid("a market needs at least one participant")),
    };
    solve_from_bases(bases, counts, opts)
}

/// Expected sealed-bid revenue: the mean highest equilibrium bid. Values
/// outside the solver's support are clamped into it and counted.
pub fn revenue_sealed(market: &Market, system: &BidSystem, draws: usize, seed: u64) -> Result<RevenueEstimate> {
    check_draws(draws)?;
    if system.counts != market.counts() {
        return Err(invalid(format!(
            "bid system solved for {} loggers and {} sawmills, market has {} and {}",
            system.counts.logger,
            system.counts.sawmill,
            market.counts().logger,
            market.counts().sawmill
        )));
    }
    let (lo, hi) = system.support();
    let values = market.slot_values(seed, draws);
    let mut clamped = 0u64;
    let mut payments = Vec::with_capacity(draws);
    for i in 0..draws {
        let mut top = f64::NEG_INFINITY;
        for (slot, &t) in values.iter().zip(&market.participants) {
            let v = slot[i];
            let inside = v.clamp(lo, hi);
            if inside != v {
                clamped += 1;
            }
            top = top.max(system.bid(t, inside)?);
        }
        payments.push(top);
    }
    Ok(RevenueEstimate::from_payments(&payments, clamped))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepOptions {
    pub draws: usize,
    pub seed: u64,
    pub bid_solver: BidSolverOptions,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions { draws: 100_000, seed: 0, bid_solver: BidSolverOptions::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellStatus {
    Ok,
    /// A revenue was computed but deserves a look; see the detail.
    Warning,
    /// No revenue; see the detail.
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RevenueRow {
    pub tract_size: String,
    pub format: AuctionFormat,
    pub participants: String,
    pub length: u32,
    /// Absent when the cell failed.
    pub revenue: Option<f64>,
    pub se: Option<f64>,
    /// Continuation values of the types present.
    pub v0_logger: Option<f64>,
    pub v0_sawmill: Option<f64>,
    pub clamped: u64,
    pub status: CellStatus,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RevenueTable {
    pub seed: u64,
    pub draws: usize,
    pub lengths: Vec<u32>,
    pub rows: Vec<RevenueRow>,
}

impl RevenueTable {
    pub fn get(&self, tract_size: &str, format: AuctionFormat, participants: &str, length: u32) -> Option<&RevenueRow> {
        self.rows.iter().find(|r| {
            r.tract_size == tract_size && r.format == format && r.participants == participants && r.length == length
        })
    }
}

/// Seed shared by every cell with this tract size and length.
pub fn cell_seed(master: u64, tract_size: &str, length: u32) -> u64 {
    let mut key = Vec::from(tract_size.as_bytes());
    key.push(0);
    key.extend_from_slice(&length.to_le_bytes());
    derive_seed(master, key_hash(&key))
}

struct Unit {
    market: Result<Market>,
    system: Option<Result<BidSystem>>,
}

/// Revenue for every scenario at every length, in scenario-major order.
///
/// Scenarios that differ only in format share one market and one bid system
/// per length. Failures are recorded on the affected rows.
pub fn sweep<E: Executor>(scenarios: &[Scenario], lengths: &[u32], opts: &SweepOptions, exec: &E) -> RevenueTable {
    // group scenarios that differ only in format
    let mut group_of = Vec::with_capacity(scenarios.len());
    let mut reps: Vec<usize> = Vec::new();
    for (i, s) in scenarios.iter().enumerate() {
        let same = |j: &usize| {
            let r = &scenarios[*j];
            let mut a = r.clone();
            a.config.format = s.config.format;
            a == *s
        };
        match reps.iter().position(same) {
            Some(g) => group_of.push(g),
            None => {
                group_of.push(reps.len());
                reps.push(i);
            }
        }
    }
    let needs_bids: Vec<bool> = (0..reps.len())
        .map(|g| scenarios.iter().zip(&group_of).any(|(s, &h)| h == g && s.config.format == AuctionFormat::Sealed))
        .collect();

    let nl = lengths.len();
    let units = exec.map_indices(reps.len() * nl, |k| {
        let (g, l) = (k / nl, k % nl);
        let market = scenarios[reps[g]].with_length(lengths[l]).market();
        let system = match (&market, needs_bids[g]) {
            (Ok(m), true) => Some(solve_market_bids(m, &opts.bid_solver)),
            _ => None,
        };
        Unit { market, system }
    });

    let cells: Vec<(usize, usize)> = (0..scenarios.len()).flat_map(|i| (0..nl).map(move |l| (i, l))).collect();
    let rows = exec.map_indices(cells.len(), |c| {
        let (i, l) = cells[c];
        let s = &scenarios[i];
        let unit = &units[group_of[i] * nl + l];
        revenue_cell(s, lengths[l], unit, opts)
    });
    RevenueTable { seed: opts.seed, draws: opts.draws, lengths: lengths.to_vec(), rows }
}

fn revenue_cell(s: &Scenario, length: u32, unit: &Unit, opts: &SweepOptions) -> RevenueRow {
    let mut row = RevenueRow {
        tract_size: s.tract_size.clone(),
        format: s.config.format,
        participants: s.participants_label(),
        length,
        revenue: None,
        se: None,
        v0_logger: None,
        v0_sawmill: None,
        clamped: 0,
        status: CellStatus::Failed,
        detail: String::new(),
    };
    let market = match &unit.market {
        Ok(m) => m,
        Err(e) => {
            row.detail = e.to_string();
            return row;
        }
    };
    let counts = market.counts();
    row.v0_logger = (counts.logger > 0).then_some(market.v0.logger);
    row.v0_sawmill = (counts.sawmill > 0).then_some(market.v0.sawmill);
    let seed = cell_seed(opts.seed, &s.tract_size, length);
    let mut notes: Vec<String> = Vec::new();
    let estimate = match s.config.format {
        AuctionFormat::Oral => revenue_oral(market, opts.draws, seed),
        AuctionFormat::Sealed => match &unit.system {
            Some(Ok(system)) => {
                let d = &system.diagnostics;
                if !d.converged {
                    notes.push(format!(
                        "bid solver tolerances not met (method {:?}, max residual {:.3e}, boundary error {:.3e})",
                        d.method, d.max_residual, d.boundary_error
                    ));
                }
                revenue_sealed(market, system, opts.draws, seed)
            }
            Some(Err(e)) => Err(e.clone()),
            None => Err(invalid("no bid system was solved for this cell")),
        },
    };
    match estimate {
        Ok(est) => {
            row.revenue = Some(est.revenue);
            row.se = Some(est.se);
            row.clamped = est.clamped;
            let share = est.clamped_share(market.participants.len());
            if share > CLAMP_WARNING_SHARE {
                notes.push(format!("{:.2}% of values clamped into the bid support", 100.0 * share));
            }
            row.status = if notes.is_empty() { CellStatus::Ok } else { CellStatus::Warning };
        }
        Err(e) => notes.push(e.to_string()),
    }
    row.detail = notes.join("; ");
    row
}
