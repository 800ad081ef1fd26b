//! The five pipeline commands. Each writes its artifacts only after its paths
//! check out; the in-memory halves are public for testing.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use stumpage_core::bids::{solve_from_bases, BidSystem};
use stumpage_core::counterfactual::{sweep, RevenueTable, Scenario, SweepOptions};
use stumpage_core::dp::{continuation_value_curve, ContinuationRow};
use stumpage_core::dynamic::{bootstrap_dynamic, fit_dynamic_by_type, DynamicEstimate};
use stumpage_core::entry::{bootstrap_entry, fit_entry_by_format, type_share, EntryEstimate};
use stumpage_core::montecarlo::{run_mc, simulate_auction_dataset, simulate_cutting_dataset, McReport};
use stumpage_core::rng::derive_seed;
use stumpage_core::valuation::{bootstrap_valuation, fit_valuation, ValuationEstimate};
use stumpage_core::{
    AuctionConfig, AuctionFormat, BidderType, BootstrapSummary, Executor, FitOptions, PerType, TypeSpec,
};

use crate::config::{
    inputs_of_estimate, inputs_of_prices, CounterfactualConfig, EstimateConfig, EstimateInit, MonteCarloConfig, Payoff,
    PriceSpec, RunConfig, SolveBidsConfig, SolveDpConfig,
};
use crate::error::{CliError, Result};
use crate::io;

/// Files a command wrote, in write order.
pub type Artifacts = Vec<PathBuf>;

/// Checks inputs are readable files and prepares output directories.
fn prepare(inputs: &[&Path], outputs: &[&Path]) -> Result<()> {
    for p in inputs {
        let meta = std::fs::metadata(p).map_err(|e| CliError::io(p, e))?;
        if !meta.is_file() {
            return Err(CliError::io(p, std::io::Error::other("not a regular file")));
        }
    }
    for p in outputs {
        if p.is_dir() {
            return Err(CliError::io(p, std::io::Error::other("output path is a directory")));
        }
        if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        }
    }
    Ok(())
}

fn block<'a, T>(block: &'a Option<T>, name: &str) -> Result<&'a T> {
    block.as_ref().ok_or_else(|| CliError::Usage(format!("the configuration has no `{name}` block")))
}

#[derive(Debug, Serialize)]
struct ContinuationCsvRow {
    contract_length: u32,
    tract_size: f64,
    price_idx: usize,
    v0: f64,
    seed: u64,
}

pub fn solve_dp(c: &SolveDpConfig) -> Result<Vec<ContinuationRow>> {
    let prices = c.prices.build()?;
    let params = c.params.with_beta(c.beta);
    let indices: Vec<usize> = c.price_indices.clone().unwrap_or_else(|| (0..prices.len()).collect());
    continuation_value_curve(&params, &prices, &c.lengths, &c.tract_sizes, &indices)
        .map_err(CliError::compute("continuation values"))
}

/// Continuation values over lengths, tract sizes and initial prices.
pub fn cmd_solve_dp(config: &RunConfig) -> Result<Artifacts> {
    let c = block(&config.solve_dp, "solve_dp")?;
    prepare(&inputs_of_prices(&c.prices), &[&c.output])?;
    let rows: Vec<ContinuationCsvRow> = solve_dp(c)?
        .into_iter()
        .map(|r| ContinuationCsvRow {
            contract_length: r.contract_length,
            tract_size: r.tract_size,
            price_idx: r.price_idx,
            v0: r.v0,
            seed: config.seed,
        })
        .collect();
    io::write_rows(&c.output, &rows)?;
    Ok(vec![c.output.clone()])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateBootstrap {
    pub dynamic: BTreeMap<BidderType, BootstrapSummary>,
    pub entry: BTreeMap<AuctionFormat, BootstrapSummary>,
    pub valuation: Option<BootstrapSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateReport {
    pub seed: u64,
    pub dynamic: BTreeMap<BidderType, DynamicEstimate>,
    pub entry: Vec<EntryEstimate>,
    /// Logger share fed to the valuation fit.
    pub p_hat: Option<f64>,
    pub valuation: Option<ValuationEstimate>,
    pub bootstrap: Option<EstimateBootstrap>,
}

/// Harvesting, entry and valuation fits, in that order.
pub fn estimate<E: Executor>(c: &EstimateConfig, seed: u64, exec: &E) -> Result<EstimateReport> {
    if c.fit.seed != 0 {
        return Err(CliError::Usage("estimate.fit.seed is taken from the master seed; leave it unset".into()));
    }
    let fit = FitOptions { seed, ..c.fit.clone() };
    let boot = c.bootstrap > 0;
    let mut bootstrap = EstimateBootstrap { dynamic: BTreeMap::new(), entry: BTreeMap::new(), valuation: None };

    let mut dynamic = BTreeMap::new();
    if let Some(path) = &c.cutting {
        let prices =
            c.prices.as_ref().ok_or_else(|| CliError::Usage("cutting data needs estimate.prices".into()))?.build()?;
        let data = io::read_cutting(path)?;
        let init: BTreeMap<BidderType, _> =
            BidderType::ALL.iter().map(|&t| (t, c.init.dynamic[t].with_beta(c.beta))).collect();
        dynamic = fit_dynamic_by_type(&data, &prices, &init, c.beta, &fit).map_err(CliError::compute("dynamic fit"))?;
        if boot {
            for (t, est) in dynamic.iter_mut() {
                let subset: Vec<_> = data.iter().filter(|o| o.bidder_type == *t).cloned().collect();
                let s = bootstrap_dynamic(
                    &subset,
                    &prices,
                    est,
                    c.bootstrap,
                    derive_seed(seed, 1 + t.index() as u64),
                    &fit,
                    exec,
                )
                .map_err(CliError::compute("dynamic bootstrap"))?;
                est.se = Some([s.se[0], s.se[1], s.se[2]]);
                bootstrap.dynamic.insert(*t, s);
            }
        }
    }

    let mut entry = Vec::new();
    if let Some(path) = &c.entry {
        let obs = io::read_entry(path)?;
        entry = fit_entry_by_format(&obs, c.init.lambda, &fit).map_err(CliError::compute("entry fit"))?;
        if boot {
            for est in entry.iter_mut() {
                let k = match est.format {
                    AuctionFormat::Oral => 3,
                    AuctionFormat::Sealed => 4,
                };
                let s = bootstrap_entry(&obs, est, c.bootstrap, derive_seed(seed, k), &fit, exec)
                    .map_err(CliError::compute("entry bootstrap"))?;
                est.se = Some(PerType::new(s.se[0], s.se[1]));
                bootstrap.entry.insert(est.format, s);
            }
        }
    }

    let mut p_hat = c.p_hat;
    let mut valuation = None;
    if let Some(path) = &c.bids {
        let obs = io::read_bids(path)?;
        if p_hat.is_none() {
            let source = entry
                .iter()
                .find(|e| e.format == AuctionFormat::Oral)
                .or(entry.first())
                .ok_or_else(|| CliError::Usage("the valuation fit needs entry data or estimate.p_hat".into()))?;
            p_hat = Some(
                type_share(source.lambda.logger, source.lambda.sawmill).map_err(CliError::compute("logger share"))?,
            );
        }
        let p = p_hat.expect("set above");
        let mut est = fit_valuation(&obs, p, &c.init.valuation, &fit).map_err(CliError::compute("valuation fit"))?;
        if boot {
            let s = bootstrap_valuation(&obs, p, &est, c.bootstrap, derive_seed(seed, 5), &fit, exec)
                .map_err(CliError::compute("valuation bootstrap"))?;
            est.se = Some([s.se[0], s.se[1], s.se[2], s.se[3]]);
            bootstrap.valuation = Some(s);
        }
        valuation = Some(est);
    }

    Ok(EstimateReport { seed, dynamic, entry, p_hat, valuation, bootstrap: boot.then_some(bootstrap) })
}

pub fn cmd_estimate<E: Executor>(config: &RunConfig, exec: &E) -> Result<Artifacts> {
    let c = block(&config.estimate, "estimate")?;
    if c.cutting.is_none() && c.entry.is_none() && c.bids.is_none() {
        return Err(CliError::Usage("estimate needs at least one of cutting, entry, bids".into()));
    }
    prepare(&inputs_of_estimate(c), &[&c.output])?;
    let report = estimate(c, config.seed, exec)?;
    io::write_json(&c.output, &report)?;
    Ok(vec![c.output.clone()])
}

#[derive(Debug, Serialize)]
struct BidReport<'a> {
    seed: u64,
    system: &'a BidSystem,
}

pub fn solve_bids(c: &SolveBidsConfig) -> Result<BidSystem> {
    solve_from_bases(c.bases, c.counts, &c.options).map_err(CliError::compute("bid solver"))
}

pub fn cmd_solve_bids(config: &RunConfig) -> Result<Artifacts> {
    let c = block(&config.solve_bids, "solve_bids")?;
    prepare(&[], &[&c.output])?;
    let system = solve_bids(c)?;
    io::write_json(&c.output, &BidReport { seed: config.seed, system: &system })?;
    Ok(vec![c.output.clone()])
}

fn parse_composition(s: &str) -> Result<Vec<BidderType>> {
    let out: Option<Vec<BidderType>> =
        s.trim_matches(|c| c == '(' || c == ')').split(',').map(BidderType::parse).collect();
    match out {
        Some(v) if !v.is_empty() => Ok(v),
        _ => Err(CliError::Usage(format!("cannot read composition `{s}`; write e.g. \"S,L\""))),
    }
}

/// Expands tracts x compositions x formats into scenarios, in that nesting order.
pub fn scenarios(c: &CounterfactualConfig) -> Result<Vec<Scenario>> {
    let prices = c.prices.build()?;
    let types = PerType::new(
        TypeSpec {
            bidder_type: BidderType::Logger,
            mu: c.types.logger.mu,
            sigma: c.types.logger.sigma,
            lambda: c.types.logger.lambda,
        },
        TypeSpec {
            bidder_type: BidderType::Sawmill,
            mu: c.types.sawmill.mu,
            sigma: c.types.sawmill.sigma,
            lambda: c.types.sawmill.lambda,
        },
    );
    let dynamics = c.dynamics.map(|_, p: &Payoff| p.with_beta(c.beta));
    let first_length = *c.lengths.first().ok_or_else(|| CliError::Usage("counterfactual.lengths is empty".into()))?;
    let mut out = Vec::new();
    for tract in &c.tracts {
        for comp in &c.compositions {
            let participants = parse_composition(comp)?;
            for &format in &c.formats {
                let s = Scenario {
                    tract_size: tract.label.clone(),
                    config: AuctionConfig {
                        periods: first_length,
                        u0: tract.u0,
                        p0_idx: c.p0_idx,
                        format,
                        participants: participants.clone(),
                    },
                    types,
                    dynamics,
                    prices: prices.clone(),
                };
                s.validate().map_err(CliError::compute("scenario"))?;
                out.push(s);
            }
        }
    }
    Ok(out)
}

pub fn counterfactual<E: Executor>(c: &CounterfactualConfig, seed: u64, exec: &E) -> Result<RevenueTable> {
    let scenarios = scenarios(c)?;
    let opts = SweepOptions { draws: c.draws, seed, bid_solver: c.bid_solver.clone() };
    Ok(sweep(&scenarios, &c.lengths, &opts, exec))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One row per (tract, format, participants) and one revenue column per length.
pub fn wide_table(table: &RevenueTable) -> (Vec<String>, Vec<Vec<String>>) {
    let mut header: Vec<String> = ["tract_size", "format", "participants"].map(String::from).to_vec();
    header.extend(table.lengths.iter().map(|l| format!("q{l}")));
    header.push("seed".into());
    let mut rows: Vec<Vec<String>> = Vec::new();
    let mut keys: Vec<(String, AuctionFormat, String)> = Vec::new();
    for r in &table.rows {
        let key = (r.tract_size.clone(), r.format, r.participants.clone());
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    for (tract, format, participants) in keys {
        let mut row = vec![tract.clone(), format.label().to_string(), participants.clone()];
        for &l in &table.lengths {
            row.push(table.get(&tract, format, &participants, l).map(|r| opt(r.revenue)).unwrap_or_default());
        }
        row.push(table.seed.to_string());
        rows.push(row);
    }
    (header, rows)
}

pub fn long_table(table: &RevenueTable) -> (Vec<String>, Vec<Vec<String>>) {
    let header = [
        "tract_size",
        "format",
        "participants",
        "length",
        "revenue",
        "se",
        "v0_logger",
        "v0_sawmill",
        "clamped",
        "status",
        "detail",
        "draws",
        "seed",
    ]
    .map(String::from)
    .to_vec();
    let rows = table
        .rows
        .iter()
        .map(|r| {
            let status =
                serde_json::to_value(r.status).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
            vec![
                r.tract_size.clone(),
                r.format.label().to_string(),
                r.participants.clone(),
                r.length.to_string(),
                opt(r.revenue),
                opt(r.se),
                opt(r.v0_logger),
                opt(r.v0_sawmill),
                r.clamped.to_string(),
                status,
                r.detail.clone(),
                table.draws.to_string(),
                table.seed.to_string(),
            ]
        })
        .collect();
    (header, rows)
}

pub fn cmd_counterfactual<E: Executor>(config: &RunConfig, exec: &E) -> Result<Artifacts> {
    let c = block(&config.counterfactual, "counterfactual")?;
    let mut outputs = vec![c.output.as_path()];
    outputs.extend(c.output_long.as_deref());
    prepare(&inputs_of_prices(&c.prices), &outputs)?;
    let table = counterfactual(c, config.seed, exec)?;
    let (h, rows) = wide_table(&table);
    io::write_table(&c.output, &h, &rows)?;
    if let Some(p) = &c.output_long {
        let (h, rows) = long_table(&table);
        io::write_table(p, &h, &rows)?;
    }
    Ok(outputs.into_iter().map(Path::to_path_buf).collect())
}

pub fn montecarlo<E: Executor>(c: &MonteCarloConfig, seed: u64, exec: &E) -> Result<McReport> {
    if c.study.seed != 0 {
        return Err(CliError::Usage("montecarlo.study.seed is taken from the master seed; leave it unset".into()));
    }
    let study = stumpage_core::montecarlo::McConfig { seed, ..c.study.clone() };
    run_mc(&study, exec).map_err(CliError::compute("monte carlo"))
}

#[derive(Debug, Serialize)]
struct McCsvRow<'a> {
    parameter: &'a str,
    truth: f64,
    mean: f64,
    bias: f64,
    rmse: f64,
    bias_se: f64,
    used: usize,
    excluded: usize,
    seed: u64,
}

#[derive(Debug, Serialize)]
struct McArchive<'a> {
    seed: u64,
    report: &'a McReport,
}

/// Writes the datasets of replication `rep` and an estimate configuration
/// whose fits equal that replication's in-process fits.
pub fn dump_rep(study: &stumpage_core::montecarlo::McConfig, rep: usize, dir: &Path) -> Result<Artifacts> {
    let rep_seed = study.rep_seed(rep);
    let (entries, bids) = simulate_auction_dataset(study, rep_seed).map_err(CliError::compute("auction simulation"))?;
    let cutting = simulate_cutting_dataset(study, rep_seed).map_err(CliError::compute("cutting simulation"))?;
    let files = [dir.join("entry.csv"), dir.join("bids.csv"), dir.join("cutting.csv"), dir.join("estimate.json")];
    io::write_entry(&files[0], &entries)?;
    io::write_bids(&files[1], &bids)?;
    io::write_cutting(&files[2], &cutting)?;
    let truth = Payoff { gamma: study.dynamic.gamma, c1: study.dynamic.c1, c2: study.dynamic.c2 };
    let config = RunConfig {
        seed: derive_seed(rep_seed, 2),
        threads: 1,
        solve_dp: None,
        estimate: Some(EstimateConfig {
            prices: Some(PriceSpec::Gaussian { grid: study.grid.clone(), variance: study.variance }),
            cutting: Some("cutting.csv".into()),
            entry: Some("entry.csv".into()),
            bids: Some("bids.csv".into()),
            beta: study.dynamic.beta,
            init: EstimateInit {
                dynamic: PerType::new(truth, truth),
                lambda: study.lambda,
                valuation: study.valuation,
            },
            fit: FitOptions { seed: 0, ..study.fit.clone() },
            p_hat: None,
            bootstrap: 0,
            output: "estimate_out.json".into(),
        }),
        solve_bids: None,
        counterfactual: None,
        montecarlo: None,
    };
    io::write_json(&files[3], &config)?;
    Ok(files.to_vec())
}

pub fn cmd_montecarlo<E: Executor>(config: &RunConfig, exec: &E) -> Result<Artifacts> {
    let c = block(&config.montecarlo, "montecarlo")?;
    let mut outputs = vec![c.output_csv.as_path(), c.output_json.as_path()];
    let dump_probe = c.dump.as_ref().map(|d| d.dir.join("entry.csv"));
    outputs.extend(dump_probe.as_deref());
    prepare(&[], &outputs)?;
    if let Some(d) = &c.dump {
        if d.rep >= c.study.reps {
            return Err(CliError::Usage(format!("dump.rep {} is not below reps {}", d.rep, c.study.reps)));
        }
    }
    let report = montecarlo(c, config.seed, exec)?;
    let rows: Vec<McCsvRow> = report
        .params
        .iter()
        .map(|p| McCsvRow {
            parameter: &p.name,
            truth: p.truth,
            mean: p.mean,
            bias: p.bias,
            rmse: p.rmse,
            bias_se: p.bias_se,
            used: p.used,
            excluded: p.excluded,
            seed: config.seed,
        })
        .collect();
    io::write_rows(&c.output_csv, &rows)?;
    io::write_json(&c.output_json, &McArchive { seed: config.seed, report: &report })?;
    let mut written = vec![c.output_csv.clone(), c.output_json.clone()];
    if let Some(d) = &c.dump {
        written.extend(dump_rep(&report.config, d.rep, &d.dir)?);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compositions_parse_both_spellings() {
        assert_eq!(parse_composition("S,L").unwrap(), vec![BidderType::Sawmill, BidderType::Logger]);
        assert_eq!(parse_composition("(S, S, S)").unwrap().len(), 3);
        assert_eq!(parse_composition("sawmill").unwrap(), vec![BidderType::Sawmill]);
        assert!(parse_composition("S,X").is_err());
        assert!(parse_composition("").is_err());
    }

    #[test]
    fn prepare_rejects_missing_inputs_and_creates_output_dirs() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("nope.csv");
        assert!(prepare(&[&missing], &[]).is_err());
        let out = dir.path().join("a/b/out.csv");
        prepare(&[], &[&out]).unwrap();
        assert!(dir.path().join("a/b").is_dir());
        assert!(prepare(&[], &[dir.path()]).is_err());
    }
}
