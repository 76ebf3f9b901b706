//! Error-versus-sample-size study for least-squares policy evaluation.

use cmdp_lab_core::design::Design;
use cmdp_lab_core::oracle::{exact_policy_value, Signal};
use cmdp_lab_core::sampling::data_collection;
use cmdp_lab_core::solver::ls_pe;
use cmdp_lab_core::{LinearCmdp, StochasticPolicy};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::collect::pool;
use crate::error::LabResult;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub batch_size: usize,
    /// `N = T * M` samples per coreset pair.
    pub samples_per_pair: usize,
    pub mean_abs_error: f64,
    pub std_error: f64,
    pub replicates: usize,
}

/// Seed of replicate `r`, one ChaCha stream per replicate.
pub fn replicate_seed(seed: u64, r: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(r as u64 + 1);
    rng.next_u64()
}

/// Random interior policy, rows drawn uniformly on the simplex.
pub fn random_policy(seed: u64, num_states: usize, num_actions: usize) -> StochasticPolicy {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probs = Vec::with_capacity(num_states * num_actions);
    for _ in 0..num_states {
        let raw: Vec<f64> = (0..num_actions).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
        let total: f64 = raw.iter().sum();
        probs.extend(raw.iter().map(|x| x / total));
    }
    StochasticPolicy { num_states, num_actions, probs }
}

/// `|ls_pe - V^pi(rho)|` averaged over replicates for every batch size.
/// Replicates fan out over `threads` workers; results do not depend on it.
#[allow(clippy::too_many_arguments)]
pub fn scaling_experiment(
    cmdp: &LinearCmdp,
    design: &Design,
    policy: &StochasticPolicy,
    num_iters: usize,
    batch_sizes: &[usize],
    replicates: usize,
    seed: u64,
    threads: usize,
) -> LabResult<Vec<ScalingRow>> {
    let m = &cmdp.model;
    let exact = exact_policy_value(m, policy, Signal::Reward)?.at_initial;
    let jobs: Vec<(usize, usize)> = batch_sizes.iter().flat_map(|&mb| (0..replicates).map(move |r| (mb, r))).collect();
    let errors: Vec<f64> = pool(threads)?.install(|| {
        jobs.par_iter()
            .map(|&(mb, r)| {
                let buffer = data_collection(cmdp, &design.coreset, num_iters, mb, replicate_seed(seed, r))?;
                let run = ls_pe(
                    num_iters,
                    mb,
                    &m.reward,
                    &buffer,
                    policy,
                    design,
                    &cmdp.features,
                    m.discount,
                    &m.initial_dist,
                    false,
                )?;
                Ok((run.value - exact).abs())
            })
            .collect::<cmdp_lab_core::Result<Vec<f64>>>()
    })?;
    Ok(batch_sizes
        .iter()
        .zip(errors.chunks(replicates.max(1)))
        .map(|(&mb, errs)| {
            let n = errs.len() as f64;
            let mean = errs.iter().sum::<f64>() / n;
            let var =
                if errs.len() > 1 { errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
            ScalingRow {
                batch_size: mb,
                samples_per_pair: num_iters * mb,
                mean_abs_error: mean,
                std_error: (var / n).sqrt(),
                replicates: errs.len(),
            }
        })
        .collect())
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_power_law() {
        let xs = [1.0, 2.0, 4.0, 8.0];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powf(-0.5)).collect();
        assert!((loglog_slope(&xs, &ys) + 0.5).abs() < 1e-12);
    }

    #[test]
    fn replicate_seeds_differ() {
        let s: Vec<u64> = (0..50).map(|r| replicate_seed(9, r)).collect();
        let mut sorted = s.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), s.len());
        assert_eq!(s[3], replicate_seed(9, 3));
    }

    #[test]
    fn random_policy_rows_are_distributions() {
        let p = random_policy(4, 5, 3);
        assert!(StochasticPolicy::new(5, 3, p.probs.clone()).is_ok());
    }
}
