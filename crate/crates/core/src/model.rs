//! Shared domain types and the discretized lumber-price process.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::special::normal_pdf;

/// Tolerance on transition row sums.
pub const ROW_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BidderType {
    Logger,
    Sawmill,
}

impl BidderType {
    pub const ALL: [BidderType; 2] = [BidderType::Logger, BidderType::Sawmill];

    pub fn index(self) -> usize {
        match self {
            BidderType::Logger => 0,
            BidderType::Sawmill => 1,
        }
    }

    pub fn other(self) -> BidderType {
        match self {
            BidderType::Logger => BidderType::Sawmill,
            BidderType::Sawmill => BidderType::Logger,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            BidderType::Logger => "logger",
            BidderType::Sawmill => "sawmill",
        }
    }

    /// One-letter code used in participant lists, e.g. `(S, L)`.
    pub fn letter(self) -> char {
        match self {
            BidderType::Logger => 'L',
            BidderType::Sawmill => 'S',
        }
    }

    pub fn parse(s: &str) -> Option<BidderType> {
        match s.trim() {
            "logger" | "Logger" | "L" | "l" => Some(BidderType::Logger),
            "sawmill" | "Sawmill" | "S" | "s" => Some(BidderType::Sawmill),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AuctionFormat {
    Oral,
    Sealed,
}

impl AuctionFormat {
    pub fn label(self) -> &'static str {
        match self {
            AuctionFormat::Oral => "oral",
            AuctionFormat::Sealed => "sealed",
        }
    }

    pub fn parse(s: &str) -> Option<AuctionFormat> {
        match s.trim() {
            "oral" | "Oral" => Some(AuctionFormat::Oral),
            "sealed" | "Sealed" => Some(AuctionFormat::Sealed),
            _ => None,
        }
    }
}

/// One value per bidder type.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PerType<T> {
    pub logger: T,
    pub sawmill: T,
}

impl<T> PerType<T> {
    pub fn new(logger: T, sawmill: T) -> Self {
        PerType { logger, sawmill }
    }

    pub fn map<U>(&self, mut f: impl FnMut(BidderType, &T) -> U) -> PerType<U> {
        PerType { logger: f(BidderType::Logger, &self.logger), sawmill: f(BidderType::Sawmill, &self.sawmill) }
    }
}

impl<T> Index<BidderType> for PerType<T> {
    type Output = T;
    fn index(&self, t: BidderType) -> &T {
        match t {
            BidderType::Logger => &self.logger,
            BidderType::Sawmill => &self.sawmill,
        }
    }
}

impl<T> IndexMut<BidderType> for PerType<T> {
    fn index_mut(&mut self, t: BidderType) -> &mut T {
        match t {
            BidderType::Logger => &mut self.logger,
            BidderType::Sawmill => &mut self.sawmill,
        }
    }
}

/// Share of the initial tract in units of one quarter: the action grid
/// `{0, 0.25, 0.5, 0.75, 1}` is `Quarters(0..=4)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Quarters(u8);

impl Quarters {
    pub const ZERO: Quarters = Quarters(0);
    pub const ALL: Quarters = Quarters(4);
    /// Number of points on the action grid.
    pub const GRID: usize = 5;

    pub fn new(k: u8) -> Result<Self> {
        if k > 4 {
            return Err(invalid(format!("{k} quarters exceeds the whole tract")));
        }
        Ok(Quarters(k))
    }

    /// Exact conversion; the fraction must already lie on the grid.
    pub fn from_fraction(x: f64) -> Result<Self> {
        let k = x * 4.0;
        if !(0.0..=4.0).contains(&k) || libm::floor(k) != k {
            return Err(invalid(format!("{x} is not on the action grid")));
        }
        Ok(Quarters(k as u8))
    }

    /// Nearest grid value; exact midpoints round down.
    pub fn snap(x: f64) -> Result<Self> {
        if !x.is_finite() || !(-0.125..=1.125).contains(&x) {
            return Err(invalid(format!("cut fraction {x} is outside [0, 1]")));
        }
        let k = (x * 4.0).clamp(0.0, 4.0);
        let lower = libm::floor(k);
        let snapped = if k - lower > 0.5 { lower + 1.0 } else { lower };
        Ok(Quarters(snapped as u8))
    }

    pub fn count(self) -> u8 {
        self.0
    }

    pub fn fraction(self) -> f64 {
        self.0 as f64 * 0.25
    }
}

impl TryFrom<f64> for Quarters {
    type Error = Error;
    fn try_from(x: f64) -> Result<Self> {
        Quarters::from_fraction(x)
    }
}

impl From<Quarters> for f64 {
    fn from(q: Quarters) -> f64 {
        q.fraction()
    }
}

/// State of the harvesting problem at the start of period `t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CuttingState {
    pub t: u32,
    pub price_idx: usize,
    pub remaining: Quarters,
}

/// Flow-payoff and discounting parameters of one bidder type.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DynamicParams {
    /// Payoff per price unit per volume unit.
    pub gamma: f64,
    /// Linear cutting cost per volume unit.
    pub c1: f64,
    /// Quadratic cutting cost per squared volume unit.
    pub c2: f64,
    /// Per-period discount factor in (0, 1].
    pub beta: f64,
}

impl DynamicParams {
    pub fn new(gamma: f64, c1: f64, c2: f64, beta: f64) -> Result<Self> {
        let p = DynamicParams { gamma, c1, c2, beta };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(invalid(format!("discount factor {} outside (0, 1]", self.beta)));
        }
        if !(self.gamma.is_finite() && self.c1.is_finite() && self.c2.is_finite()) {
            return Err(invalid("payoff parameters must be finite"));
        }
        Ok(())
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.gamma, self.c1, self.c2]
    }

    pub fn with_array(&self, theta: [f64; 3]) -> Self {
        DynamicParams { gamma: theta[0], c1: theta[1], c2: theta[2], beta: self.beta }
    }
}

/// Valuation and entry primitives of one bidder type.
///
/// The idiosyncratic factor follows a gamma distribution with shape `sigma`
/// and scale `mu`, so a bidder's value is gamma with scale `mu * v0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TypeSpec {
    pub bidder_type: BidderType,
    pub mu: f64,
    pub sigma: f64,
    pub lambda: f64,
}

impl TypeSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0 && self.sigma > 0.0 && self.lambda >= 0.0) {
            return Err(invalid(format!("{} spec needs mu > 0, sigma > 0, lambda >= 0", self.bidder_type.label())));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuctionConfig {
    /// Contract length in quarters.
    pub periods: u32,
    /// Initial tract size in volume units.
    pub u0: f64,
    pub p0_idx: usize,
    pub format: AuctionFormat,
    pub participants: Vec<BidderType>,
}

impl AuctionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.periods < 1 {
            return Err(invalid("contract length must be at least one period"));
        }
        if !(self.u0 > 0.0) {
            return Err(invalid("tract size must be positive"));
        }
        if self.participants.is_empty() {
            return Err(invalid("an auction needs at least one participant"));
        }
        Ok(())
    }

    pub fn count(&self, t: BidderType) -> u32 {
        self.participants.iter().filter(|&&p| p == t).count() as u32
    }
}

/// Discrete price grid with a row-stochastic transition matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PriceProcessRepr", into = "PriceProcessRepr")]
pub struct PriceProcess {
    grid: Vec<f64>,
    // row-major, grid.len() x grid.len()
    transition: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct PriceProcessRepr {
    grid: Vec<f64>,
    transition: Vec<Vec<f64>>,
}

impl TryFrom<PriceProcessRepr> for PriceProcess {
    type Error = Error;
    fn try_from(r: PriceProcessRepr) -> Result<Self> {
        let n = r.grid.len();
        if r.transition.len() != n || r.transition.iter().any(|row| row.len() != n) {
            return Err(invalid("transition matrix must be square and match the grid"));
        }
        PriceProcess::new(r.grid, r.transition.into_iter().flatten().collect())
    }
}

impl From<PriceProcess> for PriceProcessRepr {
    fn from(p: PriceProcess) -> Self {
        let transition = (0..p.len()).map(|r| p.row(r).to_vec()).collect();
        PriceProcessRepr { grid: p.grid, transition }
    }
}

impl PriceProcess {
    /// Validates and wraps a grid and a row-major transition matrix.
    pub fn new(grid: Vec<f64>, transition: Vec<f64>) -> Result<Self> {
        check_grid(&grid)?;
        let n = grid.len();
        if transition.len() != n * n {
            return Err(invalid("transition matrix must be square and match the grid"));
        }
        for r in 0..n {
            let row = &transition[r * n..(r + 1) * n];
            if row.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
                return Err(invalid(format!("transition row {r} has a negative or non-finite entry")));
            }
            let sum: f64 = row.iter().sum();
            if libm::fabs(sum - 1.0) > ROW_SUM_TOL {
                return Err(invalid(format!("transition row {r} sums to {sum}")));
            }
        }
        Ok(PriceProcess { grid, transition })
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn price(&self, idx: usize) -> f64 {
        self.grid[idx]
    }

    /// Distribution of next-period price given current index `r`.
    pub fn row(&self, r: usize) -> &[f64] {
        let n = self.grid.len();
        &self.transition[r * n..(r + 1) * n]
    }

    pub fn prob(&self, from: usize, to: usize) -> f64 {
        self.transition[from * self.grid.len() + to]
    }

    /// Index of the grid point nearest to `price`; ties go to the lower point.
    pub fn nearest(&self, price: f64) -> usize {
        nearest_index(&self.grid, price)
    }
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.len() < 2 {
        return Err(invalid("price grid needs at least two levels"));
    }
    if grid.iter().any(|p| !p.is_finite()) {
        return Err(invalid("price grid must be finite"));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("price grid must be strictly increasing"));
    }
    Ok(())
}

fn nearest_index(grid: &[f64], x: f64) -> usize {
    let mut best = 0;
    let mut best_dist = f64::INFINITY;
    for (i, &g) in grid.iter().enumerate() {
        let d = libm::fabs(x - g);
        if d < best_dist {
            best = i;
            best_dist = d;
        }
    }
    best
}

/// Transition with entry `(r, c)` proportional to a normal density with mean
/// `grid[r]` and the given variance evaluated at `grid[c]`; rows renormalized.
pub fn build_gaussian_transition(grid: &[f64], variance: f64) -> Result<PriceProcess> {
    if !(variance > 0.0 && variance.is_finite()) {
        return Err(invalid("variance must be positive"));
    }
    check_grid(grid)?;
    let n = grid.len();
    let mut transition = vec![0.0; n * n];
    for r in 0..n {
        let row = &mut transition[r * n..(r + 1) * n];
        for (c, cell) in row.iter_mut().enumerate() {
            *cell = normal_pdf(grid[c], grid[r], variance);
        }
        let sum: f64 = row.iter().sum();
        if !(sum > 0.0) {
            return Err(invalid(format!("row {r} underflows; variance {variance} is too small for the grid spacing")));
        }
        row.iter_mut().for_each(|p| *p /= sum);
    }
    PriceProcess::new(grid.to_vec(), transition)
}

/// Frequency estimate of the transition matrix from an observed series.
///
/// Observations snap to the nearest grid point; each `(from, to)` count gets
/// `smoothing` added before rows are normalized.
pub fn estimate_transition(series: &[f64], grid: &[f64], smoothing: f64) -> Result<PriceProcess> {
    if series.len() < 2 {
        return Err(invalid("need at least two price observations"));
    }
    if !(smoothing >= 0.0 && smoothing.is_finite()) {
        return Err(invalid("smoothing must be non-negative"));
    }
    check_grid(grid)?;
    let n = grid.len();
    let states: Vec<usize> = series.iter().map(|&p| nearest_index(grid, p)).collect();
    let mut counts = vec![smoothing; n * n];
    for w in states.windows(2) {
        counts[w[0] * n + w[1]] += 1.0;
    }
    for r in 0..n {
        let row = &mut counts[r * n..(r + 1) * n];
        let sum: f64 = row.iter().sum();
        if sum == 0.0 {
            return Err(Error::DegenerateRow { row: r });
        }
        row.iter_mut().for_each(|p| *p /= sum);
    }
    PriceProcess::new(grid.to_vec(), counts)
}

/// Result of [`discretize_prices`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Discretization {
    pub grid: Vec<f64>,
    /// Set when fewer levels than requested could be formed.
    pub reduced: bool,
}

/// Quantile binning of a raw price series; each level is its bin's median.
pub fn discretize_prices(series: &[f64], bins: usize) -> Result<Discretization> {
    if bins < 2 {
        return Err(invalid("need at least two bins"));
    }
    if series.is_empty() {
        return Err(invalid("empty price series"));
    }
    if series.iter().any(|p| !p.is_finite()) {
        return Err(invalid("price series must be finite"));
    }
    let mut sorted = series.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let mut distinct = 1;
    for w in sorted.windows(2) {
        if w[1] != w[0] {
            distinct += 1;
        }
    }
    let k = bins.min(distinct);
    let mut reduced = k < bins;
    let n = sorted.len();
    let mut grid: Vec<f64> = Vec::with_capacity(k);
    for b in 0..k {
        let chunk = &sorted[b * n / k..(b + 1) * n / k];
        let m = chunk.len();
        let median = if m % 2 == 1 { chunk[m / 2] } else { 0.5 * (chunk[m / 2 - 1] + chunk[m / 2]) };
        match grid.last() {
            Some(&last) if median <= last => reduced = true,
            _ => grid.push(median),
        }
    }
    Ok(Discretization { grid, reduced })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_to_ten() -> Vec<f64> {
        (1..=10).map(|x| x as f64).collect()
    }

    #[test]
    fn gaussian_rows_are_distributions() {
        let p = build_gaussian_transition(&one_to_ten(), 1.0).unwrap();
        for r in 0..10 {
            let sum: f64 = p.row(r).iter().sum();
            assert!((sum - 1.0).abs() < ROW_SUM_TOL);
        }
        // Row for price level 5 peaks at level 5 and is symmetric around it.
        let row = p.row(4);
        let argmax = (0..10).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
        assert_eq!(argmax, 4);
        assert!((row[3] - row[5]).abs() < 1e-12);
        // From the lowest level the mass only decreases.
        assert!(p.row(0).windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn gaussian_rejects_bad_grids() {
        assert!(build_gaussian_transition(&[1.0, 1.0, 2.0], 1.0).is_err());
        assert!(build_gaussian_transition(&[3.0, 2.0], 1.0).is_err());
        assert!(build_gaussian_transition(&[1.0, 2.0], 0.0).is_err());
    }

    #[test]
    fn counting_estimator_recovers_frequencies() {
        let p = estimate_transition(&[1.0, 2.0, 1.0, 2.0], &[1.0, 2.0], 0.0).unwrap();
        assert_eq!(p.row(0), &[0.0, 1.0]);
        assert_eq!(p.row(1), &[1.0, 0.0]);
    }

    #[test]
    fn smoothing_fills_unvisited_rows() {
        let p = estimate_transition(&[1.0, 3.0], &[1.0, 2.0, 3.0], 1.0).unwrap();
        for &x in p.row(1) {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
        assert_eq!(p.row(0), &[0.25, 0.25, 0.5]);
    }

    #[test]
    fn constant_series_with_smoothing() {
        // Level 2 observed five times: four self-transitions plus one pseudo-count each.
        let p = estimate_transition(&[2.0; 5], &[1.0, 2.0, 3.0], 1.0).unwrap();
        assert_eq!(p.row(1), &[1.0 / 7.0, 5.0 / 7.0, 1.0 / 7.0]);
        assert_eq!(p.row(0), &[1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]);
    }

    #[test]
    fn constant_series_without_smoothing_is_degenerate() {
        let err = estimate_transition(&[2.0; 5], &[1.0, 2.0], 0.0).unwrap_err();
        assert_eq!(err, Error::DegenerateRow { row: 0 });
    }

    #[test]
    fn discretize_examples() {
        let series: Vec<f64> = (1..=100).map(|x| x as f64).collect();
        let d = discretize_prices(&series, 2).unwrap();
        assert_eq!(d.grid, vec![25.5, 75.5]);
        assert!(!d.reduced);

        let d = discretize_prices(&[1.0, 2.0, 3.0, 4.0], 4).unwrap();
        assert_eq!(d.grid, vec![1.0, 2.0, 3.0, 4.0]);

        let d = discretize_prices(&[7.0; 9], 3).unwrap();
        assert_eq!(d.grid, vec![7.0]);
        assert!(d.reduced);

        assert!(discretize_prices(&[1.0, 2.0], 1).is_err());
    }

    #[test]
    fn quarters_snap_rounds_ties_down() {
        assert_eq!(Quarters::snap(0.125).unwrap().count(), 0);
        assert_eq!(Quarters::snap(0.13).unwrap().count(), 1);
        assert_eq!(Quarters::snap(0.375).unwrap().count(), 1);
        assert_eq!(Quarters::snap(0.99).unwrap().count(), 4);
        assert!(Quarters::snap(1.5).is_err());
        assert!(Quarters::from_fraction(0.3).is_err());
        assert_eq!(Quarters::from_fraction(0.75).unwrap().count(), 3);
    }

    #[test]
    fn price_process_serde_shape_validates() {
        let bad = PriceProcessRepr {
            grid: alloc::vec![1.0, 2.0],
            transition: alloc::vec![alloc::vec![0.5, 0.6], alloc::vec![0.5, 0.5]],
        };
        assert!(PriceProcess::try_from(bad).is_err());
    }
}
