//! Least-squares MDVI and least-squares policy evaluation on a coreset.

use alloc::vec;
use alloc::vec::Vec;

use super::{
    buffer_required, check_reward, check_schedule, regression_targets, row_max, Expectation, IterationDiagnostics,
    MdpSolver, MdviRun, PeRun, PolicyEvaluator,
};
use crate::design::{wls_solve, Design};
use crate::error::{Error, Result};
use crate::math;
use crate::model::{FeatureMap, GreedyLinear, Policy, StochasticPolicy};
use crate::sampling::Buffer;

fn check_linear(buffer: &Buffer, design: &Design, features: &FeatureMap) -> Result<()> {
    if buffer.pair_indices != design.pair_indices {
        return Err(Error::Input("buffer coreset differs from the design coreset".into()));
    }
    if features.dim != design.dim
        || features.num_states != buffer.num_states
        || features.num_actions != buffer.num_actions
    {
        return Err(Error::Input("feature map shape differs from the design or buffer".into()));
    }
    Ok(())
}

fn diagnostics(t: usize, theta: &[f64], design: &Design, features: &FeatureMap, z: &[f64]) -> IterationDiagnostics {
    let residual = design
        .pair_indices
        .iter()
        .zip(z)
        .map(|(&k, &target)| (math::dot(features.row(k), theta) - target).abs())
        .fold(0.0, f64::max);
    IterationDiagnostics {
        t,
        theta_norm: math::norm2(theta),
        prediction_sup: math::norm_inf(&features.predict(theta)),
        max_residual: residual,
    }
}

/// LS-MDVI. `u` is the box reward on every pair; only coreset entries
/// enter the regression. Returns the policy greedy on `<phi, sum theta>`.
#[allow(clippy::too_many_arguments)]
pub fn ls_mdvi(
    num_iters: usize,
    batch_size: usize,
    u: &[f64],
    buffer: &Buffer,
    design: &Design,
    features: &FeatureMap,
    discount: f64,
    record: bool,
) -> Result<MdviRun> {
    check_linear(buffer, design, features)?;
    check_schedule(buffer, num_iters, batch_size)?;
    check_reward(u, features.num_pairs())?;
    let (ns, na) = (features.num_states, features.num_actions);
    let pairs = &design.pair_indices;
    let mut z = vec![0.0; pairs.len()];
    let mut theta_sum = vec![0.0; features.dim];
    let mut v_hat = vec![0.0; ns];
    let mut prev_max = vec![0.0; ns];
    let mut new_max = vec![0.0; ns];
    let mut q_tilde = vec![0.0; features.num_pairs()];
    let mut run = MdviRun {
        policy: Policy::Mixture(Vec::new()),
        actions: Vec::new(),
        q_tilde: Vec::new(),
        targets: Vec::new(),
        thetas: Vec::new(),
        values: Vec::new(),
        diagnostics: Vec::with_capacity(num_iters),
    };
    for t in 0..num_iters {
        regression_targets(Expectation::Sampled(buffer), pairs, t, u, discount, &v_hat, &mut z)?;
        let theta = wls_solve(design, &z)?;
        for (acc, x) in theta_sum.iter_mut().zip(&theta) {
            *acc += x;
        }
        q_tilde = features.predict(&theta_sum);
        row_max(&q_tilde, na, &mut new_max);
        for s in 0..ns {
            v_hat[s] = new_max[s] - prev_max[s];
        }
        core::mem::swap(&mut prev_max, &mut new_max);
        run.diagnostics.push(diagnostics(t + 1, &theta, design, features, &z));
        if record {
            run.targets.push(z.clone());
            run.thetas.push(theta);
            run.values.push(v_hat.clone());
        }
    }
    let greedy = GreedyLinear { theta: theta_sum };
    run.actions = q_tilde.chunks(na).map(math::argmax).collect();
    run.policy = Policy::GreedyLinear(greedy);
    run.q_tilde = q_tilde;
    Ok(run)
}

/// LS-PE; returns the average of `V^1(rho) .. V^T(rho)`.
#[allow(clippy::too_many_arguments)]
pub fn ls_pe(
    num_iters: usize,
    batch_size: usize,
    u: &[f64],
    buffer: &Buffer,
    policy: &StochasticPolicy,
    design: &Design,
    features: &FeatureMap,
    discount: f64,
    initial_dist: &[f64],
    record: bool,
) -> Result<PeRun> {
    check_linear(buffer, design, features)?;
    check_schedule(buffer, num_iters, batch_size)?;
    check_reward(u, features.num_pairs())?;
    if policy.num_states != features.num_states || policy.num_actions != features.num_actions {
        return Err(Error::Input("policy shape differs from the feature map".into()));
    }
    let pairs = &design.pair_indices;
    let mut z = vec![0.0; pairs.len()];
    let mut v = vec![0.0; features.num_states];
    let mut run = PeRun {
        value: 0.0,
        values_at_initial: Vec::with_capacity(num_iters),
        targets: Vec::new(),
        values: Vec::new(),
        diagnostics: Vec::with_capacity(num_iters),
    };
    let mut total = 0.0;
    for t in 0..num_iters {
        regression_targets(Expectation::Sampled(buffer), pairs, t, u, discount, &v, &mut z)?;
        let omega = wls_solve(design, &z)?;
        v = policy.apply(&features.predict(&omega));
        let at = math::dot(initial_dist, &v);
        total += at;
        run.values_at_initial.push(at);
        run.diagnostics.push(diagnostics(t + 1, &omega, design, features, &z));
        if record {
            run.targets.push(z.clone());
            run.values.push(v.clone());
        }
    }
    run.value = total / num_iters as f64;
    Ok(run)
}

#[derive(Debug, Clone)]
pub struct LsMdvi<'a> {
    pub num_iters: usize,
    pub batch_size: usize,
    pub discount: f64,
    pub design: &'a Design,
    pub features: &'a FeatureMap,
}

impl MdpSolver for LsMdvi<'_> {
    fn solve(&self, u: &[f64], buffer: Option<&Buffer>) -> Result<Policy> {
        let buffer = buffer_required(buffer)?;
        let run =
            ls_mdvi(self.num_iters, self.batch_size, u, buffer, self.design, self.features, self.discount, false)?;
        Ok(run.policy)
    }

    fn name(&self) -> &'static str {
        "ls-mdvi"
    }
}

#[derive(Debug, Clone)]
pub struct LsPe<'a> {
    pub num_iters: usize,
    pub batch_size: usize,
    pub discount: f64,
    pub initial_dist: Vec<f64>,
    pub design: &'a Design,
    pub features: &'a FeatureMap,
}

impl PolicyEvaluator for LsPe<'_> {
    fn evaluate(&self, policy: &Policy, u: &[f64], buffer: Option<&Buffer>) -> Result<f64> {
        let buffer = buffer_required(buffer)?;
        let table = policy.table(Some(self.features))?;
        let run = ls_pe(
            self.num_iters,
            self.batch_size,
            u,
            buffer,
            &table,
            self.design,
            self.features,
            self.discount,
            &self.initial_dist,
            false,
        )?;
        Ok(run.value)
    }

    fn name(&self) -> &'static str {
        "ls-pe"
    }
}
