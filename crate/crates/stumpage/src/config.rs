//! Run configuration: one JSON document with a block per command.
//!
//! Unknown keys are rejected everywhere. Relative paths are resolved against
//! the directory holding the configuration file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use stumpage_core::bids::BidSolverOptions;
use stumpage_core::dist::BaseDistribution;
use stumpage_core::model::{build_gaussian_transition, discretize_prices, estimate_transition};
use stumpage_core::montecarlo::McConfig;
use stumpage_core::valuation::ValuationParams;
use stumpage_core::{AuctionFormat, DynamicParams, FitOptions, PerType, PriceProcess};

use crate::error::{CliError, Result};
use crate::io;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; every random stream of a run derives from it.
    #[serde(default)]
    pub seed: u64,
    /// Worker threads. Outputs do not depend on it.
    #[serde(default = "one")]
    pub threads: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solve_dp: Option<SolveDpConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimate: Option<EstimateConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solve_bids: Option<SolveBidsConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counterfactual: Option<CounterfactualConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub montecarlo: Option<MonteCarloConfig>,
}

fn one() -> usize {
    1
}

fn one_f64() -> f64 {
    1.0
}

fn default_beta() -> f64 {
    0.95
}

/// How the price process is obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PriceSpec {
    /// Gaussian kernel over the grid, renormalized per row.
    Gaussian { grid: Vec<f64>, variance: f64 },
    /// Explicit grid and row-stochastic matrix.
    Matrix { grid: Vec<f64>, transition: Vec<Vec<f64>> },
    /// A price-index series CSV `(period, price_index)`, binned into `bins`
    /// levels with a Laplace-smoothed transition count.
    Series {
        path: PathBuf,
        bins: usize,
        #[serde(default = "one_f64")]
        smoothing: f64,
    },
}

impl PriceSpec {
    pub fn build(&self) -> Result<PriceProcess> {
        match self {
            PriceSpec::Gaussian { grid, variance } => {
                build_gaussian_transition(grid, *variance).map_err(CliError::compute("price process"))
            }
            PriceSpec::Matrix { grid, transition } => {
                if transition.len() != grid.len() || transition.iter().any(|r| r.len() != grid.len()) {
                    return Err(CliError::Usage(format!("transition must be {0} x {0} to match the grid", grid.len())));
                }
                PriceProcess::new(grid.clone(), transition.concat()).map_err(CliError::compute("price process"))
            }
            PriceSpec::Series { path, bins, smoothing } => {
                let series = io::read_price_series(path)?;
                let d = discretize_prices(&series, *bins).map_err(CliError::compute("price discretization"))?;
                estimate_transition(&series, &d.grid, *smoothing).map_err(CliError::compute("price transition"))
            }
        }
    }

    fn inputs(&self) -> Vec<&Path> {
        match self {
            PriceSpec::Series { path, .. } => vec![path.as_path()],
            _ => Vec::new(),
        }
    }

    fn resolve(&mut self, base: &Path) {
        if let PriceSpec::Series { path, .. } = self {
            *path = base.join(&*path);
        }
    }
}

/// Payoff parameters without the discount factor, which is set once per block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Payoff {
    pub gamma: f64,
    pub c1: f64,
    pub c2: f64,
}

impl Payoff {
    pub fn with_beta(self, beta: f64) -> DynamicParams {
        DynamicParams { gamma: self.gamma, c1: self.c1, c2: self.c2, beta }
    }
}

impl Default for Payoff {
    fn default() -> Self {
        Payoff { gamma: 1.0, c1: 0.5, c2: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveDpConfig {
    pub prices: PriceSpec,
    pub params: Payoff,
    #[serde(default = "default_beta")]
    pub beta: f64,
    pub lengths: Vec<u32>,
    pub tract_sizes: Vec<f64>,
    /// Initial price levels to report; all when absent.
    #[serde(default)]
    pub price_indices: Option<Vec<usize>>,
    pub output: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimateInit {
    pub dynamic: PerType<Payoff>,
    pub lambda: PerType<f64>,
    pub valuation: ValuationParams,
}

impl Default for EstimateInit {
    fn default() -> Self {
        EstimateInit {
            dynamic: PerType::new(Payoff::default(), Payoff::default()),
            lambda: PerType::new(0.1, 0.15),
            valuation: ValuationParams { mu_l: 1.0, sigma_l: 1.0, mu_s: 2.0, sigma_s: 3.0 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateConfig {
    /// Needed only with cutting data.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prices: Option<PriceSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cutting: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entry: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bids: Option<PathBuf>,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default)]
    pub init: EstimateInit,
    /// Simplex options. The jitter seed is the master seed, so `fit.seed`
    /// must be left unset.
    #[serde(default)]
    pub fit: FitOptions,
    /// Logger share used by the valuation fit. Defaults to the share implied
    /// by the oral entry rates (the first fitted format without oral data).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_hat: Option<f64>,
    /// Bootstrap replicates per estimator; zero skips the bootstrap.
    #[serde(default)]
    pub bootstrap: usize,
    pub output: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveBidsConfig {
    /// Untruncated value distributions; both are cut to a common support.
    pub bases: PerType<BaseDistribution>,
    pub counts: PerType<u32>,
    #[serde(default)]
    pub options: BidSolverOptions,
    pub output: PathBuf,
}

/// Valuation and entry primitives of one type.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TypeParams {
    pub mu: f64,
    pub sigma: f64,
    #[serde(default)]
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tract {
    pub label: String,
    pub u0: f64,
}

fn default_formats() -> Vec<AuctionFormat> {
    vec![AuctionFormat::Oral, AuctionFormat::Sealed]
}

fn default_lengths() -> Vec<u32> {
    vec![4, 8, 12, 16]
}

fn default_draws() -> usize {
    100_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CounterfactualConfig {
    pub prices: PriceSpec,
    pub p0_idx: usize,
    #[serde(default = "default_beta")]
    pub beta: f64,
    pub types: PerType<TypeParams>,
    pub dynamics: PerType<Payoff>,
    pub tracts: Vec<Tract>,
    /// Bidder lists such as `"S,L"` or `"L,L,L"`.
    pub compositions: Vec<String>,
    #[serde(default = "default_formats")]
    pub formats: Vec<AuctionFormat>,
    #[serde(default = "default_lengths")]
    pub lengths: Vec<u32>,
    #[serde(default = "default_draws")]
    pub draws: usize,
    #[serde(default)]
    pub bid_solver: BidSolverOptions,
    /// Wide table, one column per contract length.
    pub output: PathBuf,
    /// Long table with standard errors and diagnostics.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_long: Option<PathBuf>,
}

/// Writes the simulated datasets of one replication plus a ready-to-run
/// estimate configuration that reproduces that replication's fits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DumpConfig {
    #[serde(default)]
    pub rep: usize,
    pub dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonteCarloConfig {
    /// Study design. Its seed comes from the master seed, so `study.seed`
    /// must be left unset.
    #[serde(default)]
    pub study: McConfig,
    pub output_csv: PathBuf,
    pub output_json: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dump: Option<DumpConfig>,
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    /// `(dotted.key, value)` pairs; the value is JSON, or a bare string.
    pub set: Vec<(String, String)>,
}

impl RunConfig {
    /// Reads a configuration file and applies `overrides`.
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut doc: Value = serde_json::from_str(&text).map_err(|e| json_error(path, e))?;
        apply_overrides(&mut doc, overrides).map_err(|m| CliError::config(path, m))?;
        let mut config: RunConfig = serde_json::from_value(doc).map_err(|e| json_error(path, e))?;
        let base = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        config.resolve(base);
        Ok(config)
    }

    /// Makes every relative path absolute with respect to `base`.
    pub fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| *p = base.join(&*p);
        if let Some(c) = &mut self.solve_dp {
            c.prices.resolve(base);
            fix(&mut c.output);
        }
        if let Some(c) = &mut self.estimate {
            if let Some(p) = &mut c.prices {
                p.resolve(base);
            }
            for p in [&mut c.cutting, &mut c.entry, &mut c.bids].into_iter().flatten() {
                fix(p);
            }
            fix(&mut c.output);
        }
        if let Some(c) = &mut self.solve_bids {
            fix(&mut c.output);
        }
        if let Some(c) = &mut self.counterfactual {
            c.prices.resolve(base);
            fix(&mut c.output);
            if let Some(p) = &mut c.output_long {
                fix(p);
            }
        }
        if let Some(c) = &mut self.montecarlo {
            fix(&mut c.output_csv);
            fix(&mut c.output_json);
            if let Some(d) = &mut c.dump {
                fix(&mut d.dir);
            }
        }
    }
}

fn json_error(path: &Path, e: serde_json::Error) -> CliError {
    let line = (e.line() > 0).then_some(e.line() as u64);
    CliError::Config { path: path.to_path_buf(), line, message: e.to_string() }
}

fn apply_overrides(doc: &mut Value, o: &Overrides) -> std::result::Result<(), String> {
    let mut set = o.set.clone();
    if let Some(seed) = o.seed {
        set.push(("seed".into(), seed.to_string()));
    }
    if let Some(threads) = o.threads {
        set.push(("threads".into(), threads.to_string()));
    }
    for (key, raw) in &set {
        let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.clone()));
        set_path(doc, key, value)?;
    }
    Ok(())
}

/// Sets `doc[a][b][c] = value` for `key = "a.b.c"`, creating objects on the way.
pub fn set_path(doc: &mut Value, key: &str, value: Value) -> std::result::Result<(), String> {
    let mut node = doc;
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(format!("malformed override key `{key}`"));
    }
    for (i, part) in parts.iter().enumerate() {
        if node.is_null() {
            *node = Value::Object(Default::default());
        }
        let obj = node
            .as_object_mut()
            .ok_or_else(|| format!("override `{key}`: `{}` is not an object", parts[..i].join(".")))?;
        if i + 1 == parts.len() {
            obj.insert((*part).into(), value);
            return Ok(());
        }
        node = obj.entry(*part).or_insert(Value::Null);
    }
    unreachable!("key has at least one part")
}

/// Input files a block reads.
pub fn inputs_of_estimate(c: &EstimateConfig) -> Vec<&Path> {
    let mut v: Vec<&Path> = c.prices.iter().flat_map(|p| p.inputs()).collect();
    v.extend([&c.cutting, &c.entry, &c.bids].into_iter().flatten().map(PathBuf::as_path));
    v
}

pub fn inputs_of_prices(p: &PriceSpec) -> Vec<&Path> {
    p.inputs()
}
