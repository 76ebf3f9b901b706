//! MDP-solver and policy-evaluation oracles.
//!
//! Every oracle sees randomness only through a [`Buffer`]; the exact
//! adapters ignore it.

pub mod exact;
pub mod linear;
pub mod tabular;

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::model::{Policy, TabularCmdp};
use crate::sampling::Buffer;

pub use exact::{ExactEvaluator, ExactSolver};
pub use linear::{ls_mdvi, ls_pe, LsMdvi, LsPe};
pub use tabular::{tabular_mdvi, tabular_mdvi_exact, tabular_pe, TabularMdvi, TabularPe};

/// Returns a policy that is near-optimal for the per-pair reward `u`.
pub trait MdpSolver {
    fn solve(&self, u: &[f64], buffer: Option<&Buffer>) -> Result<Policy>;
    fn name(&self) -> &'static str;
}

/// Returns an estimate of `V^pi_u(rho)`.
pub trait PolicyEvaluator {
    fn evaluate(&self, policy: &Policy, u: &[f64], buffer: Option<&Buffer>) -> Result<f64>;
    fn name(&self) -> &'static str;
}

/// One row of the per-iteration diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationDiagnostics {
    pub t: usize,
    /// `||theta^t||_2`.
    pub theta_norm: f64,
    /// `||<phi, theta^t>||_inf`.
    pub prediction_sup: f64,
    /// Largest `|<phi, theta^t> - target|` on the coreset.
    pub max_residual: f64,
}

/// Output of an MDVI run. Histories are filled only when requested.
#[derive(Debug, Clone, PartialEq)]
pub struct MdviRun {
    pub policy: Policy,
    /// Greedy action per state.
    pub actions: Vec<usize>,
    /// Final cumulative `Q~` on every pair.
    pub q_tilde: Vec<f64>,
    /// Regression targets on the coreset, one vector per iteration.
    pub targets: Vec<Vec<f64>>,
    /// Per-iteration parameters (equal to the targets in tabular mode).
    pub thetas: Vec<Vec<f64>>,
    /// `V^1 .. V^T` on every state.
    pub values: Vec<Vec<f64>>,
    pub diagnostics: Vec<IterationDiagnostics>,
}

/// Output of a policy-evaluation run.
#[derive(Debug, Clone, PartialEq)]
pub struct PeRun {
    /// `(1/T) sum_{i=1}^T V^i(rho)`.
    pub value: f64,
    /// `V^i(rho)` for `i = 1..T`.
    pub values_at_initial: Vec<f64>,
    pub targets: Vec<Vec<f64>>,
    pub values: Vec<Vec<f64>>,
    pub diagnostics: Vec<IterationDiagnostics>,
}

/// Where the expectation `E[V(s')]` in a regression target comes from.
#[derive(Debug, Clone, Copy)]
pub enum Expectation<'a> {
    Sampled(&'a Buffer),
    /// True transition rows; test scaffolding for the noiseless limit.
    Exact(&'a TabularCmdp),
}

/// `u(s,a) + gamma E[V(s')]` for each coreset position at batch `t`.
pub(crate) fn regression_targets(
    source: Expectation<'_>,
    pairs: &[usize],
    t: usize,
    u: &[f64],
    discount: f64,
    v: &[f64],
    out: &mut [f64],
) -> Result<()> {
    for (c, &k) in pairs.iter().enumerate() {
        let mean = match source {
            Expectation::Sampled(buffer) => buffer.sample_mean(t, c, v),
            Expectation::Exact(cmdp) => math::dot(cmdp.row(k / cmdp.num_actions, k % cmdp.num_actions), v),
        };
        let z = u[k] + discount * mean;
        if !z.is_finite() {
            return Err(Error::Numerical {
                context: format!("regression target at iteration {t}, pair {k}"),
                residual: z,
            });
        }
        out[c] = z;
    }
    Ok(())
}

pub(crate) fn check_reward(u: &[f64], num_pairs: usize) -> Result<()> {
    if u.len() != num_pairs {
        return Err(Error::Input(format!("reward has length {}, expected {num_pairs}", u.len())));
    }
    if u.iter().any(|x| !x.is_finite()) {
        return Err(Error::Input("reward has non-finite entries".into()));
    }
    Ok(())
}

pub(crate) fn check_schedule(buffer: &Buffer, num_iters: usize, batch_size: usize) -> Result<()> {
    if num_iters == 0 {
        return Err(Error::Input("T must be at least 1".into()));
    }
    if buffer.batch_size != batch_size {
        return Err(Error::Input(format!(
            "buffer batches hold {} samples, the schedule asks for M = {batch_size}",
            buffer.batch_size
        )));
    }
    if buffer.num_batches < num_iters {
        return Err(Error::Input(format!(
            "buffer has {} batches, the schedule needs T = {num_iters}",
            buffer.num_batches
        )));
    }
    Ok(())
}

pub(crate) fn buffer_required(buffer: Option<&Buffer>) -> Result<&Buffer> {
    buffer.ok_or_else(|| Error::Input("this oracle needs a sample buffer".into()))
}

/// Row-wise maxima of a per-pair table.
pub(crate) fn row_max(q: &[f64], num_actions: usize, out: &mut [f64]) {
    for (s, slot) in out.iter_mut().enumerate() {
        *slot = math::max_of(&q[s * num_actions..(s + 1) * num_actions]);
    }
}

pub(crate) fn row_argmax(q: &[f64], num_actions: usize) -> Vec<usize> {
    q.chunks(num_actions).map(math::argmax).collect()
}
