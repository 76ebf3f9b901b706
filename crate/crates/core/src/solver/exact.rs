//! Exact oracles behind the solver contracts, for isolating the dual
//! mechanism from sampling error.

use crate::error::Result;
use crate::model::{FeatureMap, Policy, StochasticPolicy, TabularCmdp};
use crate::oracle::{self, Signal};
use crate::sampling::Buffer;

use super::{MdpSolver, PolicyEvaluator};

/// Value iteration to `tol` on the true model; ignores the buffer.
#[derive(Debug, Clone)]
pub struct ExactSolver<'a> {
    pub cmdp: &'a TabularCmdp,
    pub tol: f64,
}

impl MdpSolver for ExactSolver<'_> {
    fn solve(&self, u: &[f64], _buffer: Option<&Buffer>) -> Result<Policy> {
        let opt = oracle::exact_mdp_optimum(self.cmdp, u, self.tol)?;
        Ok(Policy::Stochastic(StochasticPolicy::deterministic(
            self.cmdp.num_states,
            self.cmdp.num_actions,
            &opt.actions,
        )))
    }

    fn name(&self) -> &'static str {
        "exact-vi"
    }
}

/// Dense linear solve on the true model; ignores the buffer.
#[derive(Debug, Clone)]
pub struct ExactEvaluator<'a> {
    pub cmdp: &'a TabularCmdp,
    pub features: Option<&'a FeatureMap>,
}

impl PolicyEvaluator for ExactEvaluator<'_> {
    fn evaluate(&self, policy: &Policy, u: &[f64], _buffer: Option<&Buffer>) -> Result<f64> {
        oracle::policy_value(self.cmdp, policy, self.features, Signal::Custom(u))
    }

    fn name(&self) -> &'static str {
        "exact-evaluation"
    }
}
