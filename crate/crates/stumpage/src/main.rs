use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use stumpage::{run, CliError, Command, Overrides, RunConfig};

/// Structural timber-auction toolkit covering the harvesting problem through
/// to revenue counterfactuals.
#[derive(Parser)]
#[command(name = "stumpage", version)]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Continuation values of the harvesting problem as CSV.
    SolveDp(Common),
    /// Fit the harvesting, entry and valuation models; writes JSON.
    Estimate(Common),
    /// Equilibrium bid functions of a sealed-bid auction; writes JSON.
    SolveBids(Common),
    /// Revenue tables across formats, compositions and contract lengths.
    Counterfactual(Common),
    /// Simulate-and-refit study of the estimators.
    Montecarlo(Common),
}

#[derive(Args)]
struct Common {
    /// JSON configuration file.
    #[arg(short, long)]
    config: PathBuf,
    /// Master seed, overriding `seed` in the file.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads, overriding `threads` in the file.
    #[arg(long)]
    threads: Option<usize>,
    /// Override any key, e.g. `--set montecarlo.study.reps=2`. Values are JSON
    /// or bare strings.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

fn fail(e: &CliError, code: u8) -> ExitCode {
    eprintln!("{}", e.to_json());
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail(&CliError::Usage(e.kind().to_string() + ": " + e.to_string().trim()), 2),
    };
    let (command, common) = match cli.command {
        Sub::SolveDp(c) => (Command::SolveDp, c),
        Sub::Estimate(c) => (Command::Estimate, c),
        Sub::SolveBids(c) => (Command::SolveBids, c),
        Sub::Counterfactual(c) => (Command::Counterfactual, c),
        Sub::Montecarlo(c) => (Command::Montecarlo, c),
    };
    let mut set = Vec::new();
    for kv in &common.set {
        match kv.split_once('=') {
            Some((k, v)) => set.push((k.to_string(), v.to_string())),
            None => return fail(&CliError::Usage(format!("--set expects KEY=VALUE, got `{kv}`")), 2),
        }
    }
    let overrides = Overrides { seed: common.seed, threads: common.threads, set };
    let config = match RunConfig::load(&common.config, &overrides) {
        Ok(c) => c,
        Err(e) => return fail(&e, 2),
    };
    let start = Instant::now();
    match run(command, &config) {
        Ok(files) => {
            let outputs: Vec<String> = files.iter().map(|p| p.display().to_string()).collect();
            let summary = serde_json::json!({
                "command": command.name(),
                "seed": config.seed,
                "threads": config.threads,
                "outputs": outputs,
            });
            println!("{summary}");
            eprintln!("{} finished in {:.2} s", command.name(), start.elapsed().as_secs_f64());
            ExitCode::SUCCESS
        }
        Err(e) => fail(&e, 1),
    }
}
