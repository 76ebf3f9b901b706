//! Domain types: tabular and linear CMDPs, feature maps, policies, and the
//! generative-model contract.
//!
//! States and actions are dense 0-based indices. State-action pairs are
//! flattened as `s * num_actions + a` everywhere.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use nalgebra::DMatrix;
use rand::{Rng, RngCore};

use crate::error::{Error, Result};
use crate::math;

/// Tolerance on row sums of `P` and on the sum of `rho`.
pub const STOCHASTIC_TOL: f64 = 1e-12;
/// Tolerance on the linear reconstruction of `r`, `c`, and `P`.
pub const RECONSTRUCTION_TOL: f64 = 1e-10;
/// Relative singular-value cutoff for feature rank.
pub const RANK_TOL: f64 = 1e-9;
/// Tolerance on row sums of an induced state-to-state kernel.
pub const INDUCED_KERNEL_TOL: f64 = 1e-10;

/// A state-action pair `(state, action)`.
pub type Pair = (usize, usize);

/// One broken invariant, with its location.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Shape { field: &'static str, expected: usize, found: usize },
    RowSum { state: usize, action: usize, sum: f64 },
    NegativeProbability { state: usize, action: usize, next_state: usize, value: f64 },
    InitialSum { sum: f64 },
    NegativeInitial { state: usize, value: f64 },
    RewardRange { field: &'static str, state: usize, action: usize, value: f64 },
    Discount { value: f64 },
    Threshold { value: f64, upper: f64 },
    Reconstruction { field: &'static str, residual: f64 },
    Empty { field: &'static str },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Shape { field, expected, found } => {
                write!(f, "{field} has length {found}, expected {expected}")
            }
            Violation::RowSum { state, action, sum } => {
                write!(f, "row ({state},{action}) sums to {sum}")
            }
            Violation::NegativeProbability { state, action, next_state, value } => {
                write!(f, "P({next_state}|{state},{action}) = {value} is negative")
            }
            Violation::InitialSum { sum } => write!(f, "initial distribution sums to {sum}"),
            Violation::NegativeInitial { state, value } => {
                write!(f, "initial distribution entry {state} = {value} is negative")
            }
            Violation::RewardRange { field, state, action, value } => {
                write!(f, "{field}({state},{action}) = {value} is outside [0, 1]")
            }
            Violation::Discount { .. } => write!(f, "discount must be < 1"),
            Violation::Threshold { value, upper } => {
                write!(f, "threshold {value} is outside [0, {upper})")
            }
            Violation::Reconstruction { field, residual } => {
                write!(f, "{field} reconstruction residual {residual:e} exceeds tolerance")
            }
            Violation::Empty { field } => write!(f, "{field} must be nonempty"),
        }
    }
}

/// The full model `<S, A, P, r, c, b, rho, gamma>`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularCmdp {
    pub num_states: usize,
    pub num_actions: usize,
    /// `P[s][a][s']`, flattened as `(s * A + a) * S + s'`.
    pub transition: Vec<f64>,
    /// `r[s][a]`, flattened as `s * A + a`.
    pub reward: Vec<f64>,
    /// `c[s][a]`, flattened as `s * A + a`.
    pub constraint_reward: Vec<f64>,
    pub threshold: f64,
    pub initial_dist: Vec<f64>,
    pub discount: f64,
}

impl TabularCmdp {
    /// Builds a model and rejects it unless every invariant holds.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        num_states: usize,
        num_actions: usize,
        transition: Vec<f64>,
        reward: Vec<f64>,
        constraint_reward: Vec<f64>,
        threshold: f64,
        initial_dist: Vec<f64>,
        discount: f64,
    ) -> Result<Self> {
        let model = TabularCmdp {
            num_states,
            num_actions,
            transition,
            reward,
            constraint_reward,
            threshold,
            initial_dist,
            discount,
        };
        let violations = model.validate();
        if violations.is_empty() {
            Ok(model)
        } else {
            Err(Error::InvalidModel(violations))
        }
    }

    pub fn num_pairs(&self) -> usize {
        self.num_states * self.num_actions
    }

    /// Effective horizon `1 / (1 - gamma)`.
    pub fn horizon(&self) -> f64 {
        1.0 / (1.0 - self.discount)
    }

    pub fn pair_index(&self, state: usize, action: usize) -> usize {
        state * self.num_actions + action
    }

    /// `P(.|s,a)`.
    pub fn row(&self, state: usize, action: usize) -> &[f64] {
        let start = self.pair_index(state, action) * self.num_states;
        &self.transition[start..start + self.num_states]
    }

    /// What a learner is allowed to know without sampling.
    pub fn shape(&self) -> ProblemShape {
        ProblemShape {
            num_states: self.num_states,
            num_actions: self.num_actions,
            discount: self.discount,
            initial_dist: self.initial_dist.clone(),
        }
    }

    /// Every broken invariant. Never aborts; an empty list means valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let (s_n, a_n) = (self.num_states, self.num_actions);
        if s_n == 0 {
            out.push(Violation::Empty { field: "num_states" });
        }
        if a_n == 0 {
            out.push(Violation::Empty { field: "num_actions" });
        }
        let pairs = s_n * a_n;
        let mut shape_ok = true;
        for (field, expected, found) in [
            ("P", pairs * s_n, self.transition.len()),
            ("r", pairs, self.reward.len()),
            ("c", pairs, self.constraint_reward.len()),
            ("rho", s_n, self.initial_dist.len()),
        ] {
            if expected != found {
                shape_ok = false;
                out.push(Violation::Shape { field, expected, found });
            }
        }
        if shape_ok {
            for s in 0..s_n {
                for a in 0..a_n {
                    let row = self.row(s, a);
                    let mut sum = 0.0;
                    for (next, &p) in row.iter().enumerate() {
                        if !(p >= 0.0) {
                            out.push(Violation::NegativeProbability {
                                state: s,
                                action: a,
                                next_state: next,
                                value: p,
                            });
                        }
                        sum += p;
                    }
                    if !((sum - 1.0).abs() <= STOCHASTIC_TOL) {
                        out.push(Violation::RowSum { state: s, action: a, sum });
                    }
                    let k = self.pair_index(s, a);
                    for (field, value) in [("r", self.reward[k]), ("c", self.constraint_reward[k])] {
                        if !(0.0..=1.0).contains(&value) {
                            out.push(Violation::RewardRange { field, state: s, action: a, value });
                        }
                    }
                }
            }
            let mut sum = 0.0;
            for (s, &p) in self.initial_dist.iter().enumerate() {
                if !(p >= 0.0) {
                    out.push(Violation::NegativeInitial { state: s, value: p });
                }
                sum += p;
            }
            if !((sum - 1.0).abs() <= STOCHASTIC_TOL) {
                out.push(Violation::InitialSum { sum });
            }
        }
        if !(0.0..1.0).contains(&self.discount) {
            out.push(Violation::Discount { value: self.discount });
        }
        let upper = 1.0 / (1.0 - self.discount);
        if !(self.threshold >= 0.0 && (self.threshold < upper || !(upper > 0.0))) {
            out.push(Violation::Threshold { value: self.threshold, upper });
        }
        out
    }

    /// Row-stochastic `P_pi` (S x S, row-major) and `u_pi` for a policy table.
    pub fn induced(&self, policy: &StochasticPolicy, u: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = self.num_states;
        let mut kernel = vec![0.0; n * n];
        let mut reward = vec![0.0; n];
        for s in 0..n {
            for a in 0..self.num_actions {
                let p = policy.prob(s, a);
                if p == 0.0 {
                    continue;
                }
                reward[s] += p * u[self.pair_index(s, a)];
                for (next, &q) in self.row(s, a).iter().enumerate() {
                    kernel[s * n + next] += p * q;
                }
            }
        }
        (kernel, reward)
    }
}

/// The quantities a learner knows without querying the simulator.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemShape {
    pub num_states: usize,
    pub num_actions: usize,
    pub discount: f64,
    pub initial_dist: Vec<f64>,
}

impl ProblemShape {
    pub fn num_pairs(&self) -> usize {
        self.num_states * self.num_actions
    }

    pub fn horizon(&self) -> f64 {
        1.0 / (1.0 - self.discount)
    }

    /// `sum_s rho(s) v(s)`.
    pub fn at_initial(&self, values: &[f64]) -> f64 {
        math::dot(&self.initial_dist, values)
    }
}

/// Feature matrix with one row `phi(s,a)` per pair.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub dim: usize,
    pub num_states: usize,
    pub num_actions: usize,
    /// Row-major, row index `s * A + a`.
    pub phi: Vec<f64>,
}

impl FeatureMap {
    pub fn new(dim: usize, num_states: usize, num_actions: usize, phi: Vec<f64>) -> Result<Self> {
        if dim == 0 || num_states == 0 || num_actions == 0 {
            return Err(Error::Input("feature map dimensions must be positive".into()));
        }
        if phi.len() != dim * num_states * num_actions {
            return Err(Error::Input(alloc::format!(
                "feature matrix has {} entries, expected {}",
                phi.len(),
                dim * num_states * num_actions
            )));
        }
        if phi.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("feature matrix has non-finite entries".into()));
        }
        Ok(FeatureMap { dim, num_states, num_actions, phi })
    }

    /// Identity features, `d = |S||A|`.
    pub fn one_hot(num_states: usize, num_actions: usize) -> Self {
        let n = num_states * num_actions;
        let mut phi = vec![0.0; n * n];
        for k in 0..n {
            phi[k * n + k] = 1.0;
        }
        FeatureMap { dim: n, num_states, num_actions, phi }
    }

    pub fn num_pairs(&self) -> usize {
        self.num_states * self.num_actions
    }

    pub fn row(&self, pair: usize) -> &[f64] {
        &self.phi[pair * self.dim..(pair + 1) * self.dim]
    }

    pub fn at(&self, state: usize, action: usize) -> &[f64] {
        self.row(state * self.num_actions + action)
    }

    /// `<phi(s,a), theta>` for every pair.
    pub fn predict(&self, theta: &[f64]) -> Vec<f64> {
        (0..self.num_pairs()).map(|k| math::dot(self.row(k), theta)).collect()
    }

    /// Numerical rank: singular values above `RANK_TOL` times the largest.
    pub fn rank(&self) -> usize {
        let m = DMatrix::from_row_slice(self.num_pairs(), self.dim, &self.phi);
        let sv = m.svd(false, false).singular_values;
        let top = sv.iter().fold(0.0f64, |a, &b| a.max(b));
        if top == 0.0 {
            return 0;
        }
        sv.iter().filter(|&&v| v / top > RANK_TOL).count()
    }
}

/// A linear CMDP together with the certificate that it is linear:
/// `r = Phi psi_r`, `c = Phi psi_c`, `P(.|s,a) = sum_j phi_j(s,a) mu_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearCmdp {
    pub model: TabularCmdp,
    pub features: FeatureMap,
    pub psi_r: Vec<f64>,
    pub psi_c: Vec<f64>,
    /// `d` measures over S, each of length `num_states`.
    pub anchors: Vec<Vec<f64>>,
}

/// Largest absolute reconstruction error per component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReconstructionResiduals {
    pub reward: f64,
    pub constraint: f64,
    pub transition: f64,
}

impl LinearCmdp {
    pub fn residuals(&self) -> Result<ReconstructionResiduals> {
        let m = &self.model;
        let f = &self.features;
        let d = f.dim;
        if f.num_states != m.num_states || f.num_actions != m.num_actions {
            return Err(Error::Input("features do not match the model shape".into()));
        }
        if self.psi_r.len() != d || self.psi_c.len() != d || self.anchors.len() != d {
            return Err(Error::Input("psi_r, psi_c, anchors must all have length d".into()));
        }
        if self.anchors.iter().any(|mu| mu.len() != m.num_states) {
            return Err(Error::Input("every anchor must have length num_states".into()));
        }
        let mut res = ReconstructionResiduals { reward: 0.0, constraint: 0.0, transition: 0.0 };
        for s in 0..m.num_states {
            for a in 0..m.num_actions {
                let k = m.pair_index(s, a);
                let phi = f.row(k);
                res.reward = res.reward.max((m.reward[k] - math::dot(phi, &self.psi_r)).abs());
                res.constraint = res.constraint.max((m.constraint_reward[k] - math::dot(phi, &self.psi_c)).abs());
                for (next, &p) in m.row(s, a).iter().enumerate() {
                    let mut q = 0.0;
                    for (j, mu) in self.anchors.iter().enumerate() {
                        q += phi[j] * mu[next];
                    }
                    res.transition = res.transition.max((p - q).abs());
                }
            }
        }
        Ok(res)
    }

    /// Model violations plus reconstruction failures.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = self.model.validate();
        match self.residuals() {
            Ok(res) => {
                for (field, residual) in [("r", res.reward), ("c", res.constraint), ("P", res.transition)] {
                    if !(residual <= RECONSTRUCTION_TOL) {
                        out.push(Violation::Reconstruction { field, residual });
                    }
                }
            }
            Err(_) => out.push(Violation::Reconstruction { field: "shape", residual: f64::INFINITY }),
        }
        out
    }
}

/// A stationary stochastic policy table `pi[s][a]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StochasticPolicy {
    pub num_states: usize,
    pub num_actions: usize,
    /// Row-major `pi(a|s)`, index `s * A + a`.
    pub probs: Vec<f64>,
}

impl StochasticPolicy {
    pub fn new(num_states: usize, num_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != num_states * num_actions {
            return Err(Error::Input("policy table has the wrong length".into()));
        }
        for s in 0..num_states {
            let row = &probs[s * num_actions..(s + 1) * num_actions];
            let sum: f64 = row.iter().sum();
            if row.iter().any(|p| !(*p >= 0.0)) || !((sum - 1.0).abs() <= STOCHASTIC_TOL) {
                return Err(Error::Input(alloc::format!("policy row {s} is not on the simplex")));
            }
        }
        Ok(StochasticPolicy { num_states, num_actions, probs })
    }

    pub fn deterministic(num_states: usize, num_actions: usize, actions: &[usize]) -> Self {
        let mut probs = vec![0.0; num_states * num_actions];
        for (s, &a) in actions.iter().enumerate() {
            probs[s * num_actions + a] = 1.0;
        }
        StochasticPolicy { num_states, num_actions, probs }
    }

    pub fn uniform(num_states: usize, num_actions: usize) -> Self {
        let p = 1.0 / num_actions as f64;
        StochasticPolicy { num_states, num_actions, probs: vec![p; num_states * num_actions] }
    }

    pub fn prob(&self, state: usize, action: usize) -> f64 {
        self.probs[state * self.num_actions + action]
    }

    pub fn row(&self, state: usize) -> &[f64] {
        &self.probs[state * self.num_actions..(state + 1) * self.num_actions]
    }

    /// `(pi q)(s) = sum_a pi(a|s) q(s,a)` for every state.
    pub fn apply(&self, q: &[f64]) -> Vec<f64> {
        (0..self.num_states)
            .map(|s| {
                let mut acc = 0.0;
                for a in 0..self.num_actions {
                    acc += self.prob(s, a) * q[s * self.num_actions + a];
                }
                acc
            })
            .collect()
    }
}

/// Greedy policy with respect to `<phi(s,a), theta>`, lowest action on ties.
#[derive(Debug, Clone, PartialEq)]
pub struct GreedyLinear {
    pub theta: Vec<f64>,
}

impl GreedyLinear {
    pub fn action(&self, features: &FeatureMap, state: usize) -> usize {
        let scores: Vec<f64> =
            (0..features.num_actions).map(|a| math::dot(features.at(state, a), &self.theta)).collect();
        math::argmax(&scores)
    }

    pub fn actions(&self, features: &FeatureMap) -> Vec<usize> {
        (0..features.num_states).map(|s| self.action(features, s)).collect()
    }

    pub fn table(&self, features: &FeatureMap) -> StochasticPolicy {
        StochasticPolicy::deterministic(features.num_states, features.num_actions, &self.actions(features))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Policy {
    Stochastic(StochasticPolicy),
    GreedyLinear(GreedyLinear),
    /// Uniform mixture over the components: a component is drawn once, then
    /// followed for the whole trajectory.
    Mixture(Vec<Policy>),
}

impl Policy {
    /// Materializes a stationary policy table. Mixtures are not stationary
    /// policies and are rejected; evaluate them component-wise.
    pub fn table(&self, features: Option<&FeatureMap>) -> Result<StochasticPolicy> {
        match self {
            Policy::Stochastic(t) => Ok(t.clone()),
            Policy::GreedyLinear(g) => match features {
                Some(f) if f.dim == g.theta.len() => Ok(g.table(f)),
                Some(_) => Err(Error::Input("theta length differs from feature dimension".into())),
                None => Err(Error::Input("a greedy linear policy needs its feature map".into())),
            },
            Policy::Mixture(_) => Err(Error::Input("a mixture has no stationary table; use mixture_value".into())),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Policy::Stochastic(_) => "stochastic",
            Policy::GreedyLinear(_) => "greedy_linear",
            Policy::Mixture(_) => "mixture",
        }
    }
}

/// Simulator access: an independent next-state draw for any pair.
pub trait GenerativeModel {
    fn num_states(&self) -> usize;
    fn num_actions(&self) -> usize;
    /// Draws `s' ~ P(.|s,a)` consuming exactly one value from `rng`.
    fn sample<R: RngCore + ?Sized>(&self, state: usize, action: usize, rng: &mut R) -> Result<usize>;
}

impl GenerativeModel for TabularCmdp {
    fn num_states(&self) -> usize {
        self.num_states
    }

    fn num_actions(&self) -> usize {
        self.num_actions
    }

    fn sample<R: RngCore + ?Sized>(&self, state: usize, action: usize, rng: &mut R) -> Result<usize> {
        gen_sample(self, state, action, rng)
    }
}

impl GenerativeModel for LinearCmdp {
    fn num_states(&self) -> usize {
        self.model.num_states
    }

    fn num_actions(&self) -> usize {
        self.model.num_actions
    }

    fn sample<R: RngCore + ?Sized>(&self, state: usize, action: usize, rng: &mut R) -> Result<usize> {
        gen_sample(&self.model, state, action, rng)
    }
}

/// Inverse-CDF draw from `P(.|s,a)` using one uniform from the stream.
pub fn gen_sample<R: RngCore + ?Sized>(cmdp: &TabularCmdp, state: usize, action: usize, rng: &mut R) -> Result<usize> {
    if state >= cmdp.num_states {
        return Err(Error::Index { what: "state", index: state, bound: cmdp.num_states });
    }
    if action >= cmdp.num_actions {
        return Err(Error::Index { what: "action", index: action, bound: cmdp.num_actions });
    }
    let u: f64 = rng.gen();
    let row = cmdp.row(state, action);
    let mut acc = 0.0;
    let mut last_support = 0;
    for (next, &p) in row.iter().enumerate() {
        if p > 0.0 {
            last_support = next;
            acc += p;
            if u < acc {
                return Ok(next);
            }
        }
    }
    // Row sums can fall a few ulps short of 1.
    Ok(last_support)
}

/// Human-readable list of violations, one per line.
pub fn describe(violations: &[Violation]) -> String {
    use core::fmt::Write;
    let mut out = String::new();
    for v in violations {
        let _ = writeln!(out, "{v}");
    }
    out
}
