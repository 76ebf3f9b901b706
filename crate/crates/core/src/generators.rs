//! Seeded random instances: Dirichlet tabular CMDPs and anchor-mixture
//! linear CMDPs with simplex features.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::math;
use crate::model::{describe, FeatureMap, LinearCmdp, TabularCmdp};
use crate::oracle;

/// Value-iteration tolerance used when placing the threshold.
pub const THRESHOLD_TOL: f64 = 1e-12;

/// Dirichlet(1, ..., 1) by normalized exponentials.
fn dirichlet<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| -math::ln(1.0 - rng.gen::<f64>())).collect();
    let total: f64 = raw.iter().sum();
    if !(total > 0.0) {
        let mut out = vec![0.0; n];
        out[0] = 1.0;
        return out;
    }
    raw.iter().map(|x| x / total).collect()
}

fn check_sizes(num_states: usize, num_actions: usize, discount: f64, slater_min: f64) -> Result<()> {
    if num_states == 0 || num_actions == 0 {
        return Err(Error::Generation("S and A must be at least 1".into()));
    }
    if !(0.0..1.0).contains(&discount) {
        return Err(Error::Generation("discount must lie in [0, 1)".into()));
    }
    if !(slater_min >= 0.0 && slater_min.is_finite()) {
        return Err(Error::Generation("slater_min must be nonnegative".into()));
    }
    Ok(())
}

/// `b = max_pi V_c(rho) - slater_min * H`, so that `zeta = slater_min * H`.
fn place_threshold(model: &mut TabularCmdp, slater_min: f64) -> Result<()> {
    let opt = oracle::exact_mdp_optimum(model, &model.constraint_reward, THRESHOLD_TOL)?;
    let best = math::dot(&model.initial_dist, &opt.values);
    let b = best - slater_min * model.horizon();
    if b < 0.0 {
        return Err(Error::Generation(format!(
            "slater_min = {slater_min} needs a margin {} but max V_c(rho) is only {best}",
            slater_min * model.horizon()
        )));
    }
    model.threshold = b;
    Ok(())
}

fn finish(model: TabularCmdp) -> Result<TabularCmdp> {
    let violations = model.validate();
    if !violations.is_empty() {
        return Err(Error::Generation(format!("generated model is invalid:\n{}", describe(&violations))));
    }
    Ok(model)
}

pub fn random_tabular_cmdp(
    seed: u64,
    num_states: usize,
    num_actions: usize,
    discount: f64,
    slater_min: f64,
) -> Result<TabularCmdp> {
    check_sizes(num_states, num_actions, discount, slater_min)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pairs = num_states * num_actions;
    let mut transition = Vec::with_capacity(pairs * num_states);
    for _ in 0..pairs {
        transition.extend(dirichlet(&mut rng, num_states));
    }
    let reward = (0..pairs).map(|_| rng.gen::<f64>()).collect();
    let constraint_reward = (0..pairs).map(|_| rng.gen::<f64>()).collect();
    let mut model = TabularCmdp {
        num_states,
        num_actions,
        transition,
        reward,
        constraint_reward,
        threshold: 0.0,
        initial_dist: vec![1.0 / num_states as f64; num_states],
        discount,
    };
    place_threshold(&mut model, slater_min)?;
    finish(model)
}

pub fn anchor_linear_cmdp(
    seed: u64,
    num_states: usize,
    num_actions: usize,
    dim: usize,
    discount: f64,
    slater_min: f64,
) -> Result<LinearCmdp> {
    check_sizes(num_states, num_actions, discount, slater_min)?;
    let pairs = num_states * num_actions;
    if dim == 0 || dim > pairs {
        return Err(Error::Generation(format!("d = {dim} must lie in [1, S*A = {pairs}]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let anchors: Vec<Vec<f64>> = (0..dim).map(|_| dirichlet(&mut rng, num_states)).collect();
    let mut phi = vec![0.0; pairs * dim];
    for k in 0..pairs {
        let row = &mut phi[k * dim..(k + 1) * dim];
        if k < dim {
            row[k] = 1.0;
        } else {
            row.copy_from_slice(&dirichlet(&mut rng, dim));
        }
    }
    let psi_r: Vec<f64> = (0..dim).map(|_| rng.gen::<f64>()).collect();
    let psi_c: Vec<f64> = (0..dim).map(|_| rng.gen::<f64>()).collect();
    let features = FeatureMap::new(dim, num_states, num_actions, phi)?;
    if features.rank() != dim {
        return Err(Error::Generation("feature rank fell below d after corner injection".into()));
    }
    let mut transition = vec![0.0; pairs * num_states];
    for k in 0..pairs {
        let row = features.row(k);
        for next in 0..num_states {
            transition[k * num_states + next] = (0..dim).map(|j| row[j] * anchors[j][next]).sum();
        }
    }
    let clamp = |v: Vec<f64>| v.into_iter().map(|x| x.clamp(0.0, 1.0)).collect::<Vec<f64>>();
    let mut model = TabularCmdp {
        num_states,
        num_actions,
        transition,
        reward: clamp(features.predict(&psi_r)),
        constraint_reward: clamp(features.predict(&psi_c)),
        threshold: 0.0,
        initial_dist: vec![1.0 / num_states as f64; num_states],
        discount,
    };
    place_threshold(&mut model, slater_min)?;
    let model = finish(model)?;
    let linear = LinearCmdp { model, features, psi_r, psi_c, anchors };
    let violations = linear.validate();
    if !violations.is_empty() {
        return Err(Error::Generation(format!("generated linear model is invalid:\n{}", describe(&violations))));
    }
    Ok(linear)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_size() {
        let m = random_tabular_cmdp(4, 1, 1, 0.9, 0.1).unwrap();
        let h = 1.0 / (1.0 - 0.9);
        assert!((m.threshold - (h * m.constraint_reward[0] - 0.1 * h)).abs() < 1e-9);
    }

    #[test]
    fn unreachable_margin_is_an_error() {
        assert!(matches!(random_tabular_cmdp(0, 3, 2, 0.5, 5.0), Err(Error::Generation(_))));
    }

    #[test]
    fn same_seed_same_instance() {
        assert_eq!(random_tabular_cmdp(8, 4, 2, 0.9, 0.1).unwrap(), random_tabular_cmdp(8, 4, 2, 0.9, 0.1).unwrap());
        assert_ne!(random_tabular_cmdp(8, 4, 2, 0.9, 0.1).unwrap(), random_tabular_cmdp(9, 4, 2, 0.9, 0.1).unwrap());
    }

    #[test]
    fn tabular_audit() {
        for seed in 0..50 {
            let m = random_tabular_cmdp(seed, 10, 3, 0.9, 0.1).unwrap();
            assert!(m.validate().is_empty());
            let z = oracle::slater_constant(&m, 1e-10).unwrap();
            assert!(z.value >= 0.1 * m.horizon() - 1e-6, "seed {seed}: {}", z.value);
        }
    }

    #[test]
    fn one_hot_dimension_is_tabular() {
        let l = anchor_linear_cmdp(1, 3, 2, 6, 0.8, 0.05).unwrap();
        assert_eq!(l.features, FeatureMap::one_hot(3, 2));
        for k in 0..6 {
            assert_eq!(&l.model.transition[k * 3..k * 3 + 3], l.anchors[k].as_slice());
        }
    }

    #[test]
    fn rank_one_collapse() {
        let l = anchor_linear_cmdp(2, 4, 3, 1, 0.8, 0.05).unwrap();
        let first = l.model.row(0, 0).to_vec();
        for s in 0..4 {
            for a in 0..3 {
                assert_eq!(l.model.row(s, a), first.as_slice());
            }
        }
    }

    #[test]
    fn linear_audit() {
        for seed in 0..20 {
            let l = anchor_linear_cmdp(seed, 8, 3, 4, 0.9, 0.1).unwrap();
            let res = l.residuals().unwrap();
            assert!(res.reward <= 1e-10 && res.constraint <= 1e-10 && res.transition <= 1e-10);
            assert_eq!(l.features.rank(), 4);
            assert!(l.validate().is_empty());
        }
    }

    #[test]
    fn bad_dimension() {
        assert!(anchor_linear_cmdp(0, 2, 2, 5, 0.5, 0.0).is_err());
        assert!(anchor_linear_cmdp(0, 2, 2, 0, 0.5, 0.0).is_err());
    }
}
