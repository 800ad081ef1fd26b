//! Plumbing shared by the maximum-likelihood estimators: multi-start simplex
//! search, convergence metadata and cluster bootstrap.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::optim::{nelder_mead, Minimum, NelderMeadOptions};
use crate::rng::stream;

/// Options for a multi-start likelihood maximization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitOptions {
    /// Number of simplex starts; the first is the initial point itself.
    pub starts: usize,
    /// Relative jitter of the extra starts around the initial point.
    pub jitter: f64,
    /// Absolute tolerance on the log-likelihood.
    pub tolerance: f64,
    /// Evaluation budget per start.
    pub max_evals: usize,
    /// Seed of the jitter draws.
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { starts: 5, jitter: 0.5, tolerance: 1e-6, max_evals: 4000, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Convergence {
    pub converged: bool,
    pub iterations: usize,
    pub evaluations: usize,
    pub starts: usize,
}

/// Minimizes `objective` from `init` and jittered copies of it; keeps the best run.
pub(crate) fn multi_start(
    mut objective: impl FnMut(&[f64]) -> f64,
    init: &[f64],
    opts: &FitOptions,
) -> (Minimum, Convergence) {
    let nm = NelderMeadOptions { max_evals: opts.max_evals, f_tol: opts.tolerance, x_tol: 1e-6, restarts: 1 };
    let starts = opts.starts.max(1);
    let mut best: Option<Minimum> = None;
    let mut iterations = 0;
    let mut evaluations = 0;
    for k in 0..starts {
        let x0: Vec<f64> = if k == 0 {
            init.to_vec()
        } else {
            let mut rng = stream(opts.seed, k as u64);
            init.iter()
                .map(|&x| {
                    let u: f64 = rng.random::<f64>() * 2.0 - 1.0;
                    if libm::fabs(x) > 1e-8 {
                        x * (1.0 + opts.jitter * u)
                    } else {
                        x + 0.5 * opts.jitter * u
                    }
                })
                .collect()
        };
        let step: Vec<f64> =
            x0.iter().map(|&x| if libm::fabs(x) > 1e-8 { 0.1 * libm::fabs(x) } else { 0.01 }).collect();
        let run = nelder_mead(&mut objective, &x0, &step, &nm);
        iterations += run.iterations;
        evaluations += run.evals;
        let better = match &best {
            None => true,
            Some(b) => run.f < b.f,
        };
        if better {
            best = Some(run);
        }
    }
    let best = best.expect("at least one start");
    let convergence = Convergence { converged: best.converged && best.f.is_finite(), iterations, evaluations, starts };
    (best, convergence)
}

/// Groups record indices into clusters by key; clusters are ordered by key.
pub(crate) fn clusters<'a>(keys: impl Iterator<Item = &'a str>) -> Vec<Vec<usize>> {
    let mut map: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, k) in keys.enumerate() {
        map.entry(String::from(k)).or_default().push(i);
    }
    map.into_values().collect()
}

/// Record indices of one cluster-bootstrap resample.
pub(crate) fn resample_clusters(clusters: &[Vec<usize>], seed: u64) -> Vec<usize> {
    let mut rng = stream(seed, 0);
    let mut out = Vec::new();
    for _ in 0..clusters.len() {
        let c = rng.random_range(0..clusters.len());
        out.extend_from_slice(&clusters[c]);
    }
    out
}

/// Outcome of a bootstrap over replicate refits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSummary {
    /// Standard deviation of the replicate estimates, per parameter.
    pub se: Vec<f64>,
    pub used: usize,
    /// Replicates dropped because the refit did not converge.
    pub excluded: usize,
    /// More than a fifth of the replicates were excluded, or fewer than two remain.
    pub warning: bool,
}

impl BootstrapSummary {
    pub(crate) fn from_replicates(estimates: &[Option<Vec<f64>>], dim: usize) -> Self {
        let kept: Vec<&Vec<f64>> = estimates.iter().flatten().collect();
        let used = kept.len();
        let excluded = estimates.len() - used;
        let se = (0..dim)
            .map(|j| {
                if used < 2 {
                    return 0.0;
                }
                let mean = kept.iter().map(|e| e[j]).sum::<f64>() / used as f64;
                let ss: f64 = kept.iter().map(|e| (e[j] - mean) * (e[j] - mean)).sum();
                libm::sqrt(ss / (used - 1) as f64)
            })
            .collect();
        BootstrapSummary { se, used, excluded, warning: used < 2 || excluded * 5 > estimates.len() }
    }
}

/// Resamples `items` by cluster key once per seed and summarizes the refits.
/// A refit returning `None` counts as a non-converged replicate.
pub(crate) fn cluster_bootstrap<T: Sync, E: crate::exec::Executor>(
    items: &[T],
    key: impl Fn(&T) -> &str,
    seeds: &[u64],
    dim: usize,
    exec: &E,
    refit: impl Fn(&[&T]) -> Option<Vec<f64>> + Sync + Send,
) -> BootstrapSummary {
    let groups = clusters(items.iter().map(key));
    let replicates = exec.map_indices(seeds.len(), |i| {
        let picks: Vec<&T> = resample_clusters(&groups, seeds[i]).into_iter().map(|j| &items[j]).collect();
        refit(&picks)
    });
    BootstrapSummary::from_replicates(&replicates, dim)
}

/// Seeds for `reps` bootstrap replicates under `seed`.
pub fn replicate_seeds(seed: u64, reps: usize) -> Vec<u64> {
    (0..reps as u64).map(|i| crate::rng::derive_seed(seed, i)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn clusters_are_order_invariant() {
        let a = clusters(["b", "a", "b"].into_iter());
        assert_eq!(a, vec![vec![1], vec![0, 2]]);
    }

    #[test]
    fn bootstrap_summary_counts_exclusions() {
        let reps = vec![Some(vec![1.0]), None, Some(vec![3.0]), Some(vec![2.0]), Some(vec![2.0])];
        let s = BootstrapSummary::from_replicates(&reps, 1);
        assert_eq!((s.used, s.excluded, s.warning), (4, 1, false));
        assert!((s.se[0] - libm::sqrt(2.0 / 3.0)).abs() < 1e-15);
        let bad = vec![Some(vec![1.0]), None, None];
        assert!(BootstrapSummary::from_replicates(&bad, 1).warning);
    }

    #[test]
    fn multi_start_finds_quadratic_minimum() {
        let (m, c) = multi_start(
            |x| (x[0] - 3.0) * (x[0] - 3.0) + (x[1] + 1.0) * (x[1] + 1.0),
            &[1.0, 1.0],
            &FitOptions::default(),
        );
        assert!(c.converged);
        assert!((m.x[0] - 3.0).abs() < 1e-2 && (m.x[1] + 1.0).abs() < 1e-2);
    }
}
