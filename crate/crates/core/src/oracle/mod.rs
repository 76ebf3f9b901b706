//! Exact ground truth on a known [`TabularCmdp`]: policy values by dense
//! linear solve, the unconstrained optimum by value iteration, the Slater
//! constant, and the constrained optimum by an occupancy-measure LP.

pub mod lp;

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::model::{FeatureMap, Policy, StochasticPolicy, TabularCmdp};

/// Residual tolerance of the policy-evaluation solve, relative to `1 + ||V||`.
pub const EVAL_RESIDUAL_TOL: f64 = 1e-9;
/// Flow-conservation tolerance of an occupancy solution.
pub const FLOW_TOL: f64 = 1e-8;
const VI_MAX_ITERS: usize = 10_000_000;

/// Which per-pair reward a value refers to.
#[derive(Debug, Clone, Copy)]
pub enum Signal<'a> {
    Reward,
    Constraint,
    Custom(&'a [f64]),
}

impl<'a> Signal<'a> {
    pub fn values(self, cmdp: &'a TabularCmdp) -> Result<&'a [f64]> {
        match self {
            Signal::Reward => Ok(&cmdp.reward),
            Signal::Constraint => Ok(&cmdp.constraint_reward),
            Signal::Custom(u) => {
                if u.len() != cmdp.num_pairs() {
                    return Err(Error::Input(alloc::format!(
                        "reward vector has length {}, expected {}",
                        u.len(),
                        cmdp.num_pairs()
                    )));
                }
                if u.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Input("reward vector has non-finite entries".into()));
                }
                Ok(u)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyValue {
    pub values: Vec<f64>,
    /// `V(rho)`.
    pub at_initial: f64,
}

/// Solves `(I - gamma P_pi) V = u_pi`.
pub fn exact_policy_value(cmdp: &TabularCmdp, policy: &StochasticPolicy, which: Signal<'_>) -> Result<PolicyValue> {
    let u = which.values(cmdp)?;
    if policy.num_states != cmdp.num_states || policy.num_actions != cmdp.num_actions {
        return Err(Error::Input("policy shape differs from the model".into()));
    }
    let n = cmdp.num_states;
    let (kernel, reward) = cmdp.induced(policy, u);
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            a[i * n + j] = -cmdp.discount * kernel[i * n + j];
        }
        a[i * n + i] += 1.0;
    }
    let values = math::solve_dense(n, &a, &reward, EVAL_RESIDUAL_TOL, "policy evaluation")?;
    let at_initial = math::dot(&cmdp.initial_dist, &values);
    Ok(PolicyValue { values, at_initial })
}

/// Value of any non-mixture policy, materializing greedy-linear ones first.
pub fn policy_value(
    cmdp: &TabularCmdp,
    policy: &Policy,
    features: Option<&FeatureMap>,
    which: Signal<'_>,
) -> Result<f64> {
    match policy {
        Policy::Mixture(components) => mixture_value(cmdp, components, features, which),
        other => Ok(exact_policy_value(cmdp, &other.table(features)?, which)?.at_initial),
    }
}

/// `(1/K) sum_k V^{pi_k}(rho)`.
pub fn mixture_value(
    cmdp: &TabularCmdp,
    components: &[Policy],
    features: Option<&FeatureMap>,
    which: Signal<'_>,
) -> Result<f64> {
    if components.is_empty() {
        return Err(Error::Input("mixture has no components".into()));
    }
    let mut total = 0.0;
    for p in components {
        total += policy_value(cmdp, p, features, which)?;
    }
    Ok(total / components.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MdpOptimum {
    pub values: Vec<f64>,
    pub q: Vec<f64>,
    /// Greedy action per state, lowest index on ties.
    pub actions: Vec<usize>,
    pub iterations: usize,
}

impl MdpOptimum {
    pub fn policy(&self, num_actions: usize) -> StochasticPolicy {
        StochasticPolicy::deterministic(self.actions.len(), num_actions, &self.actions)
    }
}

fn bellman_q(cmdp: &TabularCmdp, u: &[f64], v: &[f64], q: &mut [f64]) {
    for s in 0..cmdp.num_states {
        for a in 0..cmdp.num_actions {
            let k = cmdp.pair_index(s, a);
            q[k] = u[k] + cmdp.discount * math::dot(cmdp.row(s, a), v);
        }
    }
}

/// Value iteration until `||V_{t+1} - V_t|| <= tol (1-gamma) / (2 gamma)`,
/// which puts the returned values within `tol` of `V*`.
pub fn exact_mdp_optimum(cmdp: &TabularCmdp, u: &[f64], tol: f64) -> Result<MdpOptimum> {
    let u = Signal::Custom(u).values(cmdp)?;
    if !(tol > 0.0) {
        return Err(Error::Input("tolerance must be positive".into()));
    }
    let (n, na) = (cmdp.num_states, cmdp.num_actions);
    let gamma = cmdp.discount;
    let stop = if gamma > 0.0 { tol * (1.0 - gamma) / (2.0 * gamma) } else { f64::INFINITY };
    let mut v = vec![0.0; n];
    let mut q = vec![0.0; n * na];
    for it in 1..=VI_MAX_ITERS {
        bellman_q(cmdp, u, &v, &mut q);
        let mut change = 0.0f64;
        for s in 0..n {
            let best = math::max_of(&q[s * na..(s + 1) * na]);
            change = change.max((best - v[s]).abs());
            v[s] = best;
        }
        if change <= stop {
            bellman_q(cmdp, u, &v, &mut q);
            let actions = (0..n).map(|s| math::argmax(&q[s * na..(s + 1) * na])).collect();
            return Ok(MdpOptimum { values: v, q, actions, iterations: it });
        }
    }
    Err(Error::Convergence { iterations: VI_MAX_ITERS, delta: f64::NAN })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlaterConstant {
    /// `max_pi V_c^pi(rho) - b`.
    pub value: f64,
    pub max_constraint_value: f64,
    /// `value <= 0`: the instance has no strictly feasible policy.
    pub degenerate: bool,
}

pub fn slater_constant(cmdp: &TabularCmdp, tol: f64) -> Result<SlaterConstant> {
    let opt = exact_mdp_optimum(cmdp, &cmdp.constraint_reward, tol)?;
    let best = math::dot(&cmdp.initial_dist, &opt.values);
    let value = best - cmdp.threshold;
    Ok(SlaterConstant { value, max_constraint_value: best, degenerate: !(value > 0.0) })
}

/// `1 / ((1 - gamma) zeta)`, an upper bound on the optimal multiplier.
pub fn dual_bound(cmdp: &TabularCmdp, zeta: f64) -> Result<f64> {
    if !(zeta > 0.0) {
        return Err(Error::Input("Slater constant must be positive".into()));
    }
    Ok(1.0 / ((1.0 - cmdp.discount) * zeta))
}

#[derive(Debug, Clone, PartialEq)]
pub struct OccupancySolution {
    /// Discounted visitation `mu[s][a]`, summing to `1/(1-gamma)`.
    pub occupancy: Vec<f64>,
    pub value_r: f64,
    pub value_c: f64,
    pub policy: StochasticPolicy,
}

impl OccupancySolution {
    /// Largest per-state flow-conservation error.
    pub fn flow_residual(&self, cmdp: &TabularCmdp) -> f64 {
        let (n, na) = (cmdp.num_states, cmdp.num_actions);
        let mut inflow = cmdp.initial_dist.clone();
        for s in 0..n {
            for a in 0..na {
                let m = self.occupancy[s * na + a];
                for (next, &p) in cmdp.row(s, a).iter().enumerate() {
                    inflow[next] += cmdp.discount * p * m;
                }
            }
        }
        (0..n)
            .map(|s| {
                let out: f64 = self.occupancy[s * na..(s + 1) * na].iter().sum();
                (out - inflow[s]).abs()
            })
            .fold(0.0, f64::max)
    }
}

/// Constrained optimum via `max sum mu r` over occupancy measures with
/// `sum mu c >= b`.
pub fn exact_cmdp_solve(cmdp: &TabularCmdp) -> Result<OccupancySolution> {
    let violations = cmdp.validate();
    if !violations.is_empty() {
        return Err(Error::InvalidModel(violations));
    }
    let (n, na) = (cmdp.num_states, cmdp.num_actions);
    let pairs = n * na;
    let cols = pairs + 1;
    let rows = n + 1;
    let mut a = vec![0.0; rows * cols];
    for s in 0..n {
        for act in 0..na {
            let k = s * na + act;
            a[s * cols + k] += 1.0;
            for (next, &p) in cmdp.row(s, act).iter().enumerate() {
                a[next * cols + k] -= cmdp.discount * p;
            }
            a[n * cols + k] = cmdp.constraint_reward[k];
        }
    }
    a[n * cols + pairs] = -1.0;
    let mut b = cmdp.initial_dist.clone();
    b.push(cmdp.threshold);
    let mut cost = cmdp.reward.clone();
    cost.push(0.0);
    let sol = lp::solve(&lp::LinearProgram { rows, cols, a, b, cost })?;
    let occupancy: Vec<f64> = sol.x[..pairs].to_vec();
    let mut probs = vec![0.0; pairs];
    for s in 0..n {
        let row = &occupancy[s * na..(s + 1) * na];
        let total: f64 = row.iter().sum();
        for act in 0..na {
            probs[s * na + act] = if total > 0.0 { row[act] / total } else { 1.0 / na as f64 };
        }
    }
    let value_r = math::dot(&occupancy, &cmdp.reward);
    let value_c = math::dot(&occupancy, &cmdp.constraint_reward);
    Ok(OccupancySolution {
        occupancy,
        value_r,
        value_c,
        policy: StochasticPolicy { num_states: n, num_actions: na, probs },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_state(r: Vec<f64>, c: Vec<f64>, gamma: f64, b: f64) -> TabularCmdp {
        let na = r.len();
        TabularCmdp::new(1, na, vec![1.0; na], r, c, b, vec![1.0], gamma).unwrap()
    }

    fn two_cycle(gamma: f64) -> TabularCmdp {
        TabularCmdp::new(2, 1, vec![0.0, 1.0, 1.0, 0.0], vec![1.0, 0.0], vec![0.0, 0.0], 0.0, vec![1.0, 0.0], gamma)
            .unwrap()
    }

    #[test]
    fn geometric_series_value() {
        let m = one_state(vec![1.0], vec![1.0], 0.9, 0.0);
        let v = exact_policy_value(&m, &StochasticPolicy::uniform(1, 1), Signal::Reward).unwrap();
        assert!((v.values[0] - 10.0).abs() < 1e-12 && (v.at_initial - 10.0).abs() < 1e-12);
    }

    #[test]
    fn zero_reward_has_zero_value() {
        let m = two_cycle(0.7);
        let zero = vec![0.0; 2];
        let v = exact_policy_value(&m, &StochasticPolicy::uniform(2, 1), Signal::Custom(&zero)).unwrap();
        assert!(v.values.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn deterministic_cycle_matches_truncated_series() {
        // Oracle: sum_{t<60} gamma^t r(s_t) along s0, s1, s0, ...
        let gamma: f64 = 0.5;
        let series: f64 = (0..60).map(|t| if t % 2 == 0 { gamma.powi(t) } else { 0.0 }).sum();
        let m = two_cycle(gamma);
        let v = exact_policy_value(&m, &StochasticPolicy::uniform(2, 1), Signal::Reward).unwrap();
        assert!((v.values[0] - series).abs() < 1e-12);
        assert!((v.values[0] - 4.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn constant_reward_optimum() {
        let m = two_cycle(0.8);
        let ones = vec![1.0; 2];
        let opt = exact_mdp_optimum(&m, &ones, 1e-10).unwrap();
        assert!(opt.values.iter().all(|v| (v - 5.0).abs() < 1e-10));
    }

    #[test]
    fn dominant_action_optimum() {
        let m = one_state(vec![0.0, 1.0], vec![0.0, 0.0], 0.5, 0.0);
        let opt = exact_mdp_optimum(&m, &[0.0, 1.0], 1e-12).unwrap();
        assert!((opt.values[0] - 2.0).abs() < 1e-12);
        assert_eq!(opt.actions, vec![1]);
    }

    #[test]
    fn non_finite_reward_is_rejected() {
        let m = one_state(vec![0.0, 1.0], vec![0.0, 0.0], 0.5, 0.0);
        assert!(matches!(exact_mdp_optimum(&m, &[f64::NAN, 1.0], 1e-6), Err(Error::Input(_))));
    }

    #[test]
    fn slater_examples() {
        let m = one_state(vec![0.0], vec![1.0], 0.5, 0.5);
        assert!((slater_constant(&m, 1e-12).unwrap().value - 1.5).abs() < 1e-10);
        let z = one_state(vec![0.0], vec![0.0], 0.5, 0.0);
        let s = slater_constant(&z, 1e-12).unwrap();
        assert_eq!(s.value, 0.0);
        assert!(s.degenerate);
        let d = one_state(vec![0.0, 0.0], vec![0.0, 1.0], 0.5, 1.0);
        assert!((slater_constant(&d, 1e-12).unwrap().value - 1.0).abs() < 1e-10);
    }

    #[test]
    fn dual_bound_formula() {
        let m = |g| one_state(vec![0.0], vec![0.0], g, 0.0);
        assert!((dual_bound(&m(0.9), 1.0).unwrap() - 10.0).abs() < 1e-12);
        assert!((dual_bound(&m(0.5), 2.0).unwrap() - 1.0).abs() < 1e-12);
        assert!((dual_bound(&m(0.0), 0.5).unwrap() - 2.0).abs() < 1e-12);
        assert!(dual_bound(&m(0.5), 0.0).is_err());
    }

    #[test]
    fn mixture_arithmetic() {
        let m = one_state(vec![0.0, 1.0], vec![0.0, 0.0], 0.5, 0.0);
        let p0 = Policy::Stochastic(StochasticPolicy::deterministic(1, 2, &[0]));
        let p1 = Policy::Stochastic(StochasticPolicy::deterministic(1, 2, &[1]));
        let single = mixture_value(&m, core::slice::from_ref(&p1), None, Signal::Reward).unwrap();
        assert!((single - 2.0).abs() < 1e-12);
        let twice = mixture_value(&m, &[p1.clone(), p1.clone()], None, Signal::Reward).unwrap();
        assert!((twice - 2.0).abs() < 1e-12);
        // Values 0 and 2 average to 1.
        let mix = mixture_value(&m, &[p0, p1], None, Signal::Reward).unwrap();
        assert!((mix - 1.0).abs() < 1e-12);
        assert!(mixture_value(&m, &[], None, Signal::Reward).is_err());
    }

    #[test]
    fn one_state_lp_matches_grid_search() {
        // Oracle: grid over pi(a1) in steps of 1e-3.
        let m = one_state(vec![1.0, 0.0], vec![0.0, 1.0], 0.5, 1.0);
        let mut best = (f64::NEG_INFINITY, 0.0);
        for i in 0..=1000 {
            let p = i as f64 / 1000.0;
            let vr = (1.0 - p) * 2.0;
            let vc = p * 2.0;
            if vc >= 1.0 - 1e-12 && vr > best.0 {
                best = (vr, p);
            }
        }
        assert!((best.0 - 1.0).abs() < 1e-12 && (best.1 - 0.5).abs() < 1e-12);
        let sol = exact_cmdp_solve(&m).unwrap();
        assert!((sol.value_r - 1.0).abs() < 1e-9 && (sol.value_c - 1.0).abs() < 1e-9);
        assert!((sol.policy.prob(0, 1) - 0.5).abs() < 1e-9);
        assert!(sol.flow_residual(&m) < FLOW_TOL);
    }

    #[test]
    fn infeasible_threshold_reports_certificate() {
        let mut m = one_state(vec![1.0, 0.0], vec![0.0, 0.5], 0.5, 0.0);
        m.threshold = 1.5; // max V_c is 1.0
        assert!(matches!(exact_cmdp_solve(&m), Err(Error::Infeasible { .. })));
    }
}
