//! The primal-dual loop: solve the Lagrangian MDP for `r + lambda c`,
//! estimate the constraint value, take a projected dual step, and return
//! the uniform mixture of all primal iterates.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::design::Design;
use crate::error::{Error, Result};
use crate::math;
use crate::model::{FeatureMap, LinearCmdp, Policy, TabularCmdp};
use crate::oracle::{self, Signal};
use crate::sampling::{all_pairs, data_collection, Buffer};
use crate::solver::{LsMdvi, LsPe, MdpSolver, PolicyEvaluator, TabularMdvi, TabularPe};

/// Slack on `V_c >= b` in the strict verdict, absorbing rounding.
pub const STRICT_SLACK: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Relaxed,
    Strict,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Relaxed => "relaxed",
            Mode::Strict => "strict",
        }
    }
}

/// Multipliers on the `M` and `T` schedules.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleConstants {
    pub c_m: f64,
    pub c_t: f64,
}

impl Default for ScheduleConstants {
    fn default() -> Self {
        ScheduleConstants { c_m: 1.0, c_t: 1.0 }
    }
}

/// Everything [`derive_params`] needs.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamRequest {
    pub mode: Mode,
    pub epsilon: f64,
    pub delta: f64,
    pub discount: f64,
    pub zeta: f64,
    pub threshold: f64,
    pub num_states: usize,
    pub num_actions: usize,
    /// Feature dimension for the linear schedule; `None` is tabular.
    pub dim: Option<usize>,
    pub constants: ScheduleConstants,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameworkParams {
    pub mode: Mode,
    pub epsilon: f64,
    pub delta: f64,
    pub discount: f64,
    pub zeta: f64,
    pub threshold: f64,
    pub dim: Option<usize>,
    /// Internal accuracy `f`.
    pub f: f64,
    /// Dual cap `U`.
    pub u_cap: f64,
    pub eta: f64,
    /// Outer iterations actually run.
    pub k: usize,
    /// Outer iterations the schedule asks for (saturating).
    pub k_schedule: u64,
    pub b_prime: f64,
    pub num_iters: usize,
    pub batch_size: usize,
    pub iota: f64,
    pub constants: ScheduleConstants,
}

impl FrameworkParams {
    pub fn horizon(&self) -> f64 {
        1.0 / (1.0 - self.discount)
    }

    /// True when `K` was cut below the schedule.
    pub fn guarantee_void(&self) -> bool {
        (self.k as u64) < self.k_schedule
    }

    /// Replaces `K` and recomputes `eta = U (1 - gamma) / sqrt(K)`.
    pub fn with_k_override(mut self, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Parameter("K must be at least 1".into()));
        }
        self.k = k;
        self.eta = self.u_cap * (1.0 - self.discount) / math::sqrt(k as f64);
        Ok(self)
    }

    /// Replaces the inner schedule.
    pub fn with_schedule(mut self, num_iters: usize, batch_size: usize) -> Result<Self> {
        if num_iters == 0 || batch_size == 0 {
            return Err(Error::Parameter("T and M must be at least 1".into()));
        }
        if self.dim.is_none() {
            check_tabular_horizon(num_iters, self.discount)?;
        }
        self.num_iters = num_iters;
        self.batch_size = batch_size;
        Ok(self)
    }

    /// Replaces `b'` directly, leaving the rest untouched.
    pub fn with_b_prime(mut self, b_prime: f64) -> Self {
        self.b_prime = b_prime;
        self
    }
}

fn to_count(x: f64, what: &str) -> Result<usize> {
    if !(x.is_finite() && x >= 1.0 && x < usize::MAX as f64) {
        return Err(Error::Parameter(format!("{what} = {x} is not a usable iteration count")));
    }
    Ok(x as usize)
}

fn check_tabular_horizon(num_iters: usize, discount: f64) -> Result<()> {
    let t = num_iters as f64;
    if 2.0 * math::ln(t) > discount * t {
        return Err(Error::Parameter(format!("T = {num_iters} violates T >= 2 ln(T) / gamma for gamma = {discount}")));
    }
    Ok(())
}

/// Derives `f, U, eta, K, b', T, M` from the target accuracy.
pub fn derive_params(req: &ParamRequest) -> Result<FrameworkParams> {
    let ParamRequest { mode, epsilon, delta, discount, zeta, threshold, num_states, num_actions, dim, constants } =
        req.clone();
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(Error::Parameter(format!("epsilon = {epsilon} must lie in (0, 1]")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Parameter(format!("delta = {delta} must lie in (0, 1)")));
    }
    if !(0.0..1.0).contains(&discount) {
        return Err(Error::Parameter("discount must lie in [0, 1)".into()));
    }
    if !(zeta > 0.0 && zeta.is_finite()) {
        return Err(Error::Parameter(format!("Slater constant {zeta} must be positive")));
    }
    if num_states == 0 || num_actions == 0 {
        return Err(Error::Parameter("state and action counts must be positive".into()));
    }
    if dim == Some(0) {
        return Err(Error::Parameter("feature dimension must be positive".into()));
    }
    if !(constants.c_m > 0.0 && constants.c_t > 0.0) {
        return Err(Error::Parameter("schedule constants must be positive".into()));
    }
    let gap = 1.0 - discount;
    let h = 1.0 / gap;
    let f = match mode {
        Mode::Relaxed => epsilon / 6.0,
        Mode::Strict => {
            let f = epsilon * zeta * gap / 16.0;
            if f > zeta / 6.0 {
                return Err(Error::Parameter(format!("strict mode needs f <= zeta / 6 = {}, got f = {f}", zeta / 6.0)));
            }
            f
        }
    };
    let b_prime = match mode {
        Mode::Relaxed => threshold - 2.0 * f,
        Mode::Strict => threshold + 4.0 * f,
    };
    let u_cap = 2.0 / (zeta * gap);
    let k_real = math::ceil_tolerant(u_cap * u_cap / (f * f * gap * gap));
    let k_schedule = if k_real >= u64::MAX as f64 { u64::MAX } else { k_real as u64 };
    let k = usize::try_from(k_schedule).unwrap_or(usize::MAX);
    let eta = u_cap * gap / math::sqrt(k_real);
    let iota = math::ln(2.0 * (num_states * num_actions) as f64 / delta);
    let (m_real, t_real) = match dim {
        Some(d) => (constants.c_m * d as f64 * h * h * iota / f, constants.c_t * h * h / f),
        None => (constants.c_m * h * iota * iota / f, constants.c_t * h * h / f),
    };
    let batch_size = to_count(math::ceil_tolerant(m_real).max(1.0), "M")?;
    let num_iters = to_count(math::ceil_tolerant(t_real).max(1.0), "T")?;
    if dim.is_none() {
        check_tabular_horizon(num_iters, discount)?;
    }
    Ok(FrameworkParams {
        mode,
        epsilon,
        delta,
        discount,
        zeta,
        threshold,
        dim,
        f,
        u_cap,
        eta,
        k,
        k_schedule,
        b_prime,
        num_iters,
        batch_size,
        iota,
        constants,
    })
}

/// `lambda_{k+1} = clip_[0,U](lambda_k - eta (v - b'))`.
pub fn dual_step(lambda: f64, eta: f64, vc_hat: f64, b_prime: f64, u_cap: f64) -> f64 {
    (lambda - eta * (vc_hat - b_prime)).clamp(0.0, u_cap)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceEntry {
    pub k: usize,
    /// `lambda_k`, the multiplier used to form the reward at iteration `k`.
    pub lambda: f64,
    pub vc_hat: f64,
    pub elapsed_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub trace: Vec<TraceEntry>,
    pub policies: Vec<Policy>,
    pub final_lambda: f64,
    pub warnings: Vec<String>,
}

impl RunOutcome {
    pub fn mixture(&self) -> Policy {
        Policy::Mixture(self.policies.clone())
    }

    /// `(1/K) sum_k Vc_hat^k`.
    pub fn mean_vc_hat(&self) -> f64 {
        self.trace.iter().map(|e| e.vc_hat).sum::<f64>() / self.trace.len() as f64
    }
}

/// `R(lambda, K) = sum_k (lambda_k - lambda)(Vc_hat^k - b')`.
pub fn dual_regret(trace: &[TraceEntry], b_prime: f64, lambda: f64) -> f64 {
    trace.iter().map(|e| (e.lambda - lambda) * (e.vc_hat - b_prime)).sum()
}

/// `U sqrt(K) / (1 - gamma)`.
pub fn dual_regret_bound(params: &FrameworkParams) -> f64 {
    params.u_cap * math::sqrt(params.k as f64) / (1.0 - params.discount)
}

fn oracle_error(iteration: usize, source: Error) -> Error {
    Error::Oracle { iteration, source: alloc::boxed::Box::new(source) }
}

/// Runs `K` outer iterations on a collected buffer (or none, for exact
/// oracles). `clock` returns milliseconds since an arbitrary origin.
#[allow(clippy::too_many_arguments)]
pub fn run_primal_dual(
    params: &FrameworkParams,
    reward: &[f64],
    constraint: &[f64],
    solver: &dyn MdpSolver,
    evaluator: &dyn PolicyEvaluator,
    buffer: Option<&Buffer>,
    mut clock: Option<&mut dyn FnMut() -> f64>,
) -> Result<RunOutcome> {
    if reward.len() != constraint.len() {
        return Err(Error::Input("reward and constraint lengths differ".into()));
    }
    let start = clock.as_mut().map(|c| c());
    let mut warnings = Vec::new();
    if params.guarantee_void() {
        warnings.push(format!(
            "K = {} is below the schedule K = {}; guarantees are empirical only",
            params.k, params.k_schedule
        ));
    }
    let mut lambda = 0.0;
    let mut u = alloc::vec![0.0; reward.len()];
    let mut trace = Vec::with_capacity(params.k);
    let mut policies = Vec::with_capacity(params.k);
    for k in 0..params.k {
        for ((slot, r), c) in u.iter_mut().zip(reward).zip(constraint) {
            *slot = r + lambda * c;
        }
        let policy = solver.solve(&u, buffer).map_err(|e| oracle_error(k, e))?;
        let vc_hat = evaluator.evaluate(&policy, constraint, buffer).map_err(|e| oracle_error(k, e))?;
        if !vc_hat.is_finite() {
            return Err(oracle_error(
                k,
                Error::Numerical { context: "constraint value estimate".into(), residual: vc_hat },
            ));
        }
        let elapsed_ms = match (clock.as_mut(), start) {
            (Some(c), Some(s)) => Some(c() - s),
            _ => None,
        };
        trace.push(TraceEntry { k, lambda, vc_hat, elapsed_ms });
        policies.push(policy);
        lambda = dual_step(lambda, params.eta, vc_hat, params.b_prime, params.u_cap);
    }
    Ok(RunOutcome { trace, policies, final_lambda: lambda, warnings })
}

/// Exact values of a mixture against the instance, with verdicts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExactAudit {
    pub mode: Mode,
    pub epsilon: f64,
    pub threshold: f64,
    pub value_r: f64,
    pub value_c: f64,
    /// `V_r` of the constrained optimum.
    pub optimum_r: f64,
    pub reward_ok: bool,
    pub constraint_ok: bool,
}

impl ExactAudit {
    pub fn passed(&self) -> bool {
        self.reward_ok && self.constraint_ok
    }
}

/// Judges already-computed values.
pub fn verdict(mode: Mode, epsilon: f64, threshold: f64, value_r: f64, value_c: f64, optimum_r: f64) -> ExactAudit {
    let constraint_ok = match mode {
        Mode::Relaxed => value_c >= threshold - epsilon,
        Mode::Strict => value_c >= threshold - STRICT_SLACK,
    };
    ExactAudit {
        mode,
        epsilon,
        threshold,
        value_r,
        value_c,
        optimum_r,
        reward_ok: value_r >= optimum_r - epsilon,
        constraint_ok,
    }
}

pub fn audit(
    cmdp: &TabularCmdp,
    policies: &[Policy],
    features: Option<&FeatureMap>,
    mode: Mode,
    epsilon: f64,
) -> Result<ExactAudit> {
    let value_r = oracle::mixture_value(cmdp, policies, features, Signal::Reward)?;
    let value_c = oracle::mixture_value(cmdp, policies, features, Signal::Constraint)?;
    let optimum_r = oracle::exact_cmdp_solve(cmdp)?.value_r;
    Ok(verdict(mode, epsilon, cmdp.threshold, value_r, value_c, optimum_r))
}

/// Tabular pipeline end to end: one buffer over `S x A`, tabular MDVI and
/// tabular PE sharing it across all outer iterations.
pub fn cmdp_solve_tabular(cmdp: &TabularCmdp, params: &FrameworkParams, seed: u64) -> Result<(Buffer, RunOutcome)> {
    let coreset = all_pairs(cmdp.num_states, cmdp.num_actions);
    let buffer = data_collection(cmdp, &coreset, params.num_iters, params.batch_size, seed)?;
    let outcome = run_tabular_on(cmdp, params, &buffer, None)?;
    Ok((buffer, outcome))
}

pub fn run_tabular_on(
    cmdp: &TabularCmdp,
    params: &FrameworkParams,
    buffer: &Buffer,
    clock: Option<&mut dyn FnMut() -> f64>,
) -> Result<RunOutcome> {
    let solver = TabularMdvi { num_iters: params.num_iters, batch_size: params.batch_size, discount: cmdp.discount };
    let evaluator = TabularPe {
        num_iters: params.num_iters,
        batch_size: params.batch_size,
        discount: cmdp.discount,
        initial_dist: cmdp.initial_dist.clone(),
    };
    run_primal_dual(params, &cmdp.reward, &cmdp.constraint_reward, &solver, &evaluator, Some(buffer), clock)
}

/// Linear pipeline end to end on a design's coreset.
pub fn cmdp_solve_linear(
    cmdp: &LinearCmdp,
    design: &Design,
    params: &FrameworkParams,
    seed: u64,
) -> Result<(Buffer, RunOutcome)> {
    let buffer = data_collection(cmdp, &design.coreset, params.num_iters, params.batch_size, seed)?;
    let outcome = run_linear_on(cmdp, design, params, &buffer, None)?;
    Ok((buffer, outcome))
}

pub fn run_linear_on(
    cmdp: &LinearCmdp,
    design: &Design,
    params: &FrameworkParams,
    buffer: &Buffer,
    clock: Option<&mut dyn FnMut() -> f64>,
) -> Result<RunOutcome> {
    let m = &cmdp.model;
    let solver = LsMdvi {
        num_iters: params.num_iters,
        batch_size: params.batch_size,
        discount: m.discount,
        design,
        features: &cmdp.features,
    };
    let evaluator = LsPe {
        num_iters: params.num_iters,
        batch_size: params.batch_size,
        discount: m.discount,
        initial_dist: m.initial_dist.clone(),
        design,
        features: &cmdp.features,
    };
    run_primal_dual(params, &m.reward, &m.constraint_reward, &solver, &evaluator, Some(buffer), clock)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::StochasticPolicy;
    use crate::solver::{ExactEvaluator, ExactSolver};
    use alloc::vec;

    fn request(mode: Mode, epsilon: f64, zeta: f64, threshold: f64) -> ParamRequest {
        ParamRequest {
            mode,
            epsilon,
            delta: 0.1,
            discount: 0.9,
            zeta,
            threshold,
            num_states: 10,
            num_actions: 3,
            dim: None,
            constants: ScheduleConstants::default(),
        }
    }

    #[test]
    fn schedule_arithmetic() {
        // f = 0.6 / 6 = 0.1.
        let p = derive_params(&request(Mode::Relaxed, 0.6, 1.0, 0.5)).unwrap();
        assert!((p.f - 0.1).abs() < 1e-15);
        assert!((p.u_cap - 20.0).abs() < 1e-12);
        assert_eq!(p.k, 4_000_000);
        assert!((p.eta - 20.0 * 0.1 / 2000.0).abs() < 1e-12);
        assert!(!p.guarantee_void());
    }

    #[test]
    fn relaxed_and_strict_shifts() {
        let p = derive_params(&request(Mode::Relaxed, 0.3, 1.0, 0.5)).unwrap();
        assert!((p.f - 0.05).abs() < 1e-15);
        assert!((p.b_prime - 0.4).abs() < 1e-12);
        // Strict: f = eps zeta (1-gamma) / 16 = 0.05 with eps = 1, zeta = 8.
        let mut req = request(Mode::Strict, 1.0, 8.0, 0.5);
        req.discount = 0.9;
        let p = derive_params(&req).unwrap();
        assert!((p.f - 0.05).abs() < 1e-12);
        assert!((p.b_prime - 0.7).abs() < 1e-12);
        assert!(6.0 * p.f <= 8.0);
    }

    #[test]
    fn tabular_and_linear_schedules() {
        let p = derive_params(&request(Mode::Relaxed, 0.6, 1.0, 0.5)).unwrap();
        let h = 1.0 / (1.0 - 0.9);
        let iota = libm::log(60.0 / 0.1);
        assert!((p.iota - iota).abs() < 1e-12);
        assert_eq!(p.num_iters, math::ceil_tolerant(h * h / p.f) as usize);
        assert_eq!(p.batch_size, libm::ceil(h * iota * iota / p.f) as usize);
        let mut req = request(Mode::Relaxed, 0.6, 1.0, 0.5);
        req.dim = Some(4);
        let p = derive_params(&req).unwrap();
        assert_eq!(p.batch_size, libm::ceil(4.0 * h * h * iota / p.f) as usize);
    }

    #[test]
    fn rejected_parameters() {
        assert!(derive_params(&request(Mode::Relaxed, 0.0, 1.0, 0.5)).is_err());
        assert!(derive_params(&request(Mode::Relaxed, 1.5, 1.0, 0.5)).is_err());
        assert!(derive_params(&request(Mode::Relaxed, 0.5, 0.0, 0.5)).is_err());
        let mut req = request(Mode::Relaxed, 0.5, 1.0, 0.5);
        req.discount = 0.01;
        assert!(matches!(derive_params(&req), Err(Error::Parameter(_))));
    }

    #[test]
    fn override_recomputes_eta_and_flags() {
        let p = derive_params(&request(Mode::Relaxed, 0.6, 1.0, 0.5)).unwrap().with_k_override(100).unwrap();
        assert_eq!(p.k, 100);
        assert!((p.eta - 20.0 * 0.1 / 10.0).abs() < 1e-12);
        assert!(p.guarantee_void());
    }

    #[test]
    fn dual_step_arithmetic() {
        assert!((dual_step(0.0, 0.5, 0.3, 0.5, 10.0) - 0.1).abs() < 1e-15);
        assert_eq!(dual_step(0.0, 0.5, 0.9, 0.5, 10.0), 0.0);
        assert_eq!(dual_step(9.9, 1.0, -5.0, 0.5, 10.0), 10.0);
    }

    fn lp_example() -> TabularCmdp {
        TabularCmdp::new(1, 2, vec![1.0, 1.0], vec![1.0, 0.0], vec![0.0, 1.0], 1.0, vec![1.0], 0.5).unwrap()
    }

    fn exact_params(k: usize) -> FrameworkParams {
        let req = ParamRequest {
            mode: Mode::Relaxed,
            epsilon: 0.5,
            delta: 0.1,
            discount: 0.5,
            zeta: 1.0,
            threshold: 1.0,
            num_states: 1,
            num_actions: 2,
            dim: None,
            constants: ScheduleConstants::default(),
        };
        // zeta = 1 gives U = 4; b' = b isolates the dual mechanism.
        derive_params(&req).unwrap().with_k_override(k).unwrap().with_b_prime(1.0)
    }

    #[test]
    fn single_iteration_is_unconstrained_optimum() {
        let m = lp_example();
        let p = exact_params(1);
        let solver = ExactSolver { cmdp: &m, tol: 1e-10 };
        let eval = ExactEvaluator { cmdp: &m, features: None };
        let out = run_primal_dual(&p, &m.reward, &m.constraint_reward, &solver, &eval, None, None).unwrap();
        assert_eq!(out.policies, vec![Policy::Stochastic(StochasticPolicy::deterministic(1, 2, &[0]))]);
        assert_eq!(out.trace[0].lambda, 0.0);
    }

    #[test]
    fn exact_oracles_reach_lp_optimum() {
        let m = lp_example();
        let p = exact_params(10_000);
        assert!((p.u_cap - 4.0).abs() < 1e-12);
        let solver = ExactSolver { cmdp: &m, tol: 1e-10 };
        let eval = ExactEvaluator { cmdp: &m, features: None };
        let out = run_primal_dual(&p, &m.reward, &m.constraint_reward, &solver, &eval, None, None).unwrap();
        let lp = oracle::exact_cmdp_solve(&m).unwrap();
        let vr = oracle::mixture_value(&m, &out.policies, None, Signal::Reward).unwrap();
        let vc = oracle::mixture_value(&m, &out.policies, None, Signal::Constraint).unwrap();
        assert!((vr - lp.value_r).abs() <= 0.05 && (vc - lp.value_c).abs() <= 0.05, "{vr} {vc}");
        assert!(out.trace.iter().all(|e| (0.0..=p.u_cap).contains(&e.lambda)));
        let bound = dual_regret_bound(&p);
        for lam in [0.0, p.u_cap] {
            assert!(dual_regret(&out.trace, p.b_prime, lam) <= bound + 1e-6);
        }
        // Exact evaluation: the trace mean equals the mixture value.
        assert!((out.mean_vc_hat() - vc).abs() < 1e-9);
    }

    #[test]
    fn oracle_failures_carry_the_iteration() {
        struct Failing;
        impl MdpSolver for Failing {
            fn solve(&self, _: &[f64], _: Option<&Buffer>) -> Result<Policy> {
                Err(Error::Input("boom".into()))
            }
            fn name(&self) -> &'static str {
                "failing"
            }
        }
        let m = lp_example();
        let eval = ExactEvaluator { cmdp: &m, features: None };
        let err = run_primal_dual(&exact_params(3), &m.reward, &m.constraint_reward, &Failing, &eval, None, None)
            .unwrap_err();
        assert!(matches!(err, Error::Oracle { iteration: 0, .. }));
    }
}
