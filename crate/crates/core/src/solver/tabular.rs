//! Tabular MDVI and tabular policy evaluation over all of `S x A`.

use alloc::vec;
use alloc::vec::Vec;

use super::{
    buffer_required, check_reward, check_schedule, regression_targets, row_argmax, row_max, Expectation,
    IterationDiagnostics, MdpSolver, MdviRun, PeRun, PolicyEvaluator,
};
use crate::error::{Error, Result};
use crate::math;
use crate::model::{Policy, StochasticPolicy, TabularCmdp};
use crate::sampling::Buffer;

fn check_full(buffer: &Buffer) -> Result<()> {
    if !buffer.covers_all_pairs() {
        return Err(Error::Input("tabular oracles need a buffer over all of S x A in pair order".into()));
    }
    Ok(())
}

fn mdvi(
    source: Expectation<'_>,
    num_states: usize,
    num_actions: usize,
    num_iters: usize,
    u: &[f64],
    discount: f64,
    record: bool,
) -> Result<MdviRun> {
    let pairs: Vec<usize> = (0..num_states * num_actions).collect();
    let mut v_hat = vec![0.0; num_states];
    let mut q_hat = vec![0.0; pairs.len()];
    let mut q_tilde = vec![0.0; pairs.len()];
    let mut prev_max = vec![0.0; num_states];
    let mut new_max = vec![0.0; num_states];
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
        regression_targets(source, &pairs, t, u, discount, &v_hat, &mut q_hat)?;
        for (acc, q) in q_tilde.iter_mut().zip(&q_hat) {
            *acc += q;
        }
        row_max(&q_tilde, num_actions, &mut new_max);
        for s in 0..num_states {
            v_hat[s] = new_max[s] - prev_max[s];
        }
        core::mem::swap(&mut prev_max, &mut new_max);
        run.diagnostics.push(IterationDiagnostics {
            t: t + 1,
            theta_norm: math::norm2(&q_hat),
            prediction_sup: math::norm_inf(&q_hat),
            max_residual: 0.0,
        });
        if record {
            run.targets.push(q_hat.clone());
            run.thetas.push(q_hat.clone());
            run.values.push(v_hat.clone());
        }
    }
    run.actions = row_argmax(&q_tilde, num_actions);
    run.policy = Policy::Stochastic(StochasticPolicy::deterministic(num_states, num_actions, &run.actions));
    run.q_tilde = q_tilde;
    Ok(run)
}

/// Tabular MDVI on `T` batches of `M` samples. The output is greedy with
/// respect to the sum of all `T` estimated tables.
pub fn tabular_mdvi(
    num_iters: usize,
    batch_size: usize,
    u: &[f64],
    buffer: &Buffer,
    discount: f64,
    record: bool,
) -> Result<MdviRun> {
    check_full(buffer)?;
    check_schedule(buffer, num_iters, batch_size)?;
    check_reward(u, buffer.num_states * buffer.num_actions)?;
    mdvi(Expectation::Sampled(buffer), buffer.num_states, buffer.num_actions, num_iters, u, discount, record)
}

/// The same recursion with sample means replaced by true expectations.
pub fn tabular_mdvi_exact(cmdp: &TabularCmdp, num_iters: usize, u: &[f64], record: bool) -> Result<MdviRun> {
    if num_iters == 0 {
        return Err(Error::Input("T must be at least 1".into()));
    }
    check_reward(u, cmdp.num_pairs())?;
    mdvi(Expectation::Exact(cmdp), cmdp.num_states, cmdp.num_actions, num_iters, u, cmdp.discount, record)
}

/// Tabular policy evaluation; returns the average of `V^1(rho) .. V^T(rho)`.
#[allow(clippy::too_many_arguments)]
pub fn tabular_pe(
    num_iters: usize,
    batch_size: usize,
    u: &[f64],
    buffer: &Buffer,
    policy: &StochasticPolicy,
    discount: f64,
    initial_dist: &[f64],
    record: bool,
) -> Result<PeRun> {
    check_full(buffer)?;
    check_schedule(buffer, num_iters, batch_size)?;
    check_reward(u, buffer.num_states * buffer.num_actions)?;
    if policy.num_states != buffer.num_states || policy.num_actions != buffer.num_actions {
        return Err(Error::Input("policy shape differs from the buffer".into()));
    }
    let pairs = &buffer.pair_indices;
    let mut v = vec![0.0; buffer.num_states];
    let mut q = vec![0.0; pairs.len()];
    let mut run = PeRun {
        value: 0.0,
        values_at_initial: Vec::with_capacity(num_iters),
        targets: Vec::new(),
        values: Vec::new(),
        diagnostics: Vec::with_capacity(num_iters),
    };
    let mut total = 0.0;
    for t in 0..num_iters {
        regression_targets(Expectation::Sampled(buffer), pairs, t, u, discount, &v, &mut q)?;
        v = policy.apply(&q);
        let at = math::dot(initial_dist, &v);
        total += at;
        run.values_at_initial.push(at);
        run.diagnostics.push(IterationDiagnostics {
            t: t + 1,
            theta_norm: math::norm2(&q),
            prediction_sup: math::norm_inf(&q),
            max_residual: 0.0,
        });
        if record {
            run.targets.push(q.clone());
            run.values.push(v.clone());
        }
    }
    run.value = total / num_iters as f64;
    Ok(run)
}

#[derive(Debug, Clone)]
pub struct TabularMdvi {
    pub num_iters: usize,
    pub batch_size: usize,
    pub discount: f64,
}

impl MdpSolver for TabularMdvi {
    fn solve(&self, u: &[f64], buffer: Option<&Buffer>) -> Result<Policy> {
        let buffer = buffer_required(buffer)?;
        Ok(tabular_mdvi(self.num_iters, self.batch_size, u, buffer, self.discount, false)?.policy)
    }

    fn name(&self) -> &'static str {
        "tabular-mdvi"
    }
}

#[derive(Debug, Clone)]
pub struct TabularPe {
    pub num_iters: usize,
    pub batch_size: usize,
    pub discount: f64,
    pub initial_dist: Vec<f64>,
}

impl PolicyEvaluator for TabularPe {
    fn evaluate(&self, policy: &Policy, u: &[f64], buffer: Option<&Buffer>) -> Result<f64> {
        let buffer = buffer_required(buffer)?;
        let table = policy.table(None)?;
        let run =
            tabular_pe(self.num_iters, self.batch_size, u, buffer, &table, self.discount, &self.initial_dist, false)?;
        Ok(run.value)
    }

    fn name(&self) -> &'static str {
        "tabular-pe"
    }
}
