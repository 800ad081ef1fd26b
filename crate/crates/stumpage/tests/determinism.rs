//! Same seed, same bytes, whatever the thread count.

use std::path::Path;

use stumpage::{run, Command, Overrides, RunConfig};

const CONFIG: &str = r#"{
  "seed": 99,
  "solve_dp": {
    "prices": {"kind": "gaussian", "grid": [1, 2, 3, 4], "variance": 1},
    "params": {"gamma": 1, "c1": 0.5, "c2": 0.05},
    "lengths": [2, 4], "tract_sizes": [1], "output": "v.csv"
  },
  "solve_bids": {
    "bases": {"logger": {"kind": "uniform", "lo": 0, "hi": 1}, "sawmill": {"kind": "uniform", "lo": 0, "hi": 2}},
    "counts": {"logger": 1, "sawmill": 1}, "output": "b.json"
  },
  "counterfactual": {
    "prices": {"kind": "gaussian", "grid": [150, 210, 270, 330, 390], "variance": 900},
    "p0_idx": 1,
    "types": {"logger": {"mu": 0.821, "sigma": 0.811}, "sawmill": {"mu": 1.562, "sigma": 3.649}},
    "dynamics": {"logger": {"gamma": 0.138, "c1": 25.06, "c2": 0.005}, "sawmill": {"gamma": 0.065, "c1": 11.908, "c2": 0.013}},
    "tracts": [{"label": "Small", "u0": 10}],
    "compositions": ["S,S", "S,L"],
    "lengths": [4, 8],
    "draws": 3000,
    "output": "r.csv", "output_long": "rl.csv"
  },
  "montecarlo": {
    "study": {"reps": 4, "auctions": 150, "agents": 150},
    "output_csv": "mc.csv", "output_json": "mc.json",
    "dump": {"rep": 1, "dir": "dump"}
  },
  "estimate": {
    "prices": {"kind": "gaussian", "grid": [1, 2, 3, 4, 5, 6, 7, 8, 9, 10], "variance": 1},
    "cutting": "dump/cutting.csv", "entry": "dump/entry.csv", "bids": "dump/bids.csv",
    "fit": {"starts": 2},
    "bootstrap": 3,
    "output": "est.json"
  }
}"#;

const OUTPUTS: [&str; 12] = [
    "v.csv",
    "b.json",
    "r.csv",
    "rl.csv",
    "mc.csv",
    "mc.json",
    "dump/entry.csv",
    "dump/bids.csv",
    "dump/cutting.csv",
    "dump/estimate.json",
    "est.json",
    "dump/estimate_out.json",
];

fn run_all(dir: &Path, threads: usize) {
    std::fs::write(dir.join("run.json"), CONFIG).unwrap();
    let o = Overrides { threads: Some(threads), ..Overrides::default() };
    let config = RunConfig::load(&dir.join("run.json"), &o).unwrap();
    for c in [Command::SolveDp, Command::SolveBids, Command::Counterfactual, Command::Montecarlo, Command::Estimate] {
        run(c, &config).unwrap();
    }
    let dumped = RunConfig::load(&dir.join("dump/estimate.json"), &o).unwrap();
    run(Command::Estimate, &dumped).unwrap();
}

#[test]
fn outputs_are_identical_across_runs_and_thread_counts() {
    let dirs: Vec<tempfile::TempDir> = (0..3).map(|_| tempfile::tempdir().unwrap()).collect();
    for (d, threads) in dirs.iter().zip([1, 1, 4]) {
        run_all(d.path(), threads);
    }
    for name in OUTPUTS {
        let bytes: Vec<Vec<u8>> = dirs.iter().map(|d| std::fs::read(d.path().join(name)).unwrap()).collect();
        assert!(!bytes[0].is_empty(), "{name} is empty");
        assert_eq!(bytes[0], bytes[1], "{name} differs between runs");
        assert_eq!(bytes[0], bytes[2], "{name} differs between thread counts");
    }
}
