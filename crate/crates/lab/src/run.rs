//! The `solve` pipeline: instance, parameters, buffer, outer loop, exact
//! audit, report.

use std::path::Path;
use std::time::Instant;

use cmdp_lab_core::design::{default_max_iters, frank_wolfe, Design, DEFAULT_EPS_FW};
use cmdp_lab_core::oracle::{self, Signal};
use cmdp_lab_core::primal_dual::{
    derive_params, dual_regret, dual_regret_bound, run_primal_dual, verdict, ExactAudit, FrameworkParams, ParamRequest,
    RunOutcome,
};
use cmdp_lab_core::sampling::{all_pairs, Buffer};
use cmdp_lab_core::solver::{
    ls_mdvi, tabular_mdvi, ExactEvaluator, LsMdvi, LsPe, MdpSolver, PolicyEvaluator, TabularMdvi, TabularPe,
};
use cmdp_lab_core::{FeatureMap, Policy, TabularCmdp};
use serde::{Deserialize, Serialize};

use crate::collect::collect_parallel;
use crate::config::{Config, EvaluatorKind, ModeName, Pipeline};
use crate::error::{LabError, LabResult};
use crate::formats::{self, BufferFile, DesignFile, DiagnosticsRow, Instance, PolicyFile, TraceRow};

pub const INSTANCE_FILE: &str = "instance.json";
pub const DESIGN_FILE: &str = "design.json";
pub const REPORT_FILE: &str = "report.json";
pub const TRACE_FILE: &str = "trace.csv";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.csv";

/// Tolerance of the Slater-constant value iteration.
pub const ZETA_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsRecord {
    pub epsilon: f64,
    pub delta: f64,
    pub gamma: f64,
    pub zeta: f64,
    /// `exact` when computed from the instance, `supplied` from the config.
    pub zeta_source: String,
    pub threshold: f64,
    pub dim: Option<usize>,
    pub f: f64,
    pub u_cap: f64,
    pub eta: f64,
    pub k: usize,
    pub k_schedule: u64,
    pub b_prime: f64,
    pub num_iters: usize,
    pub batch_size: usize,
    pub iota: f64,
    pub c_m: f64,
    pub c_t: f64,
}

impl ParamsRecord {
    fn new(p: &FrameworkParams, zeta_source: &str) -> Self {
        ParamsRecord {
            epsilon: p.epsilon,
            delta: p.delta,
            gamma: p.discount,
            zeta: p.zeta,
            zeta_source: zeta_source.into(),
            threshold: p.threshold,
            dim: p.dim,
            f: p.f,
            u_cap: p.u_cap,
            eta: p.eta,
            k: p.k,
            k_schedule: p.k_schedule,
            b_prime: p.b_prime,
            num_iters: p.num_iters,
            batch_size: p.batch_size,
            iota: p.iota,
            c_m: p.constants.c_m,
            c_t: p.constants.c_t,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretRecord {
    pub at_zero: f64,
    pub at_cap: f64,
    pub bound: f64,
}

/// Exact values of the output mixture and the mode's verdicts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactRecord {
    pub value_r: f64,
    pub value_c: f64,
    pub optimum_r: f64,
    pub threshold: f64,
    pub epsilon: f64,
    pub reward_ok: bool,
    pub constraint_ok: bool,
    pub passed: bool,
    /// `max_k |Vc_hat^k - Vc^{pi_k}(rho)|`, the realized evaluator error.
    pub max_evaluator_error: f64,
}

impl ExactRecord {
    pub fn new(a: &ExactAudit, max_evaluator_error: f64) -> Self {
        ExactRecord {
            value_r: a.value_r,
            value_c: a.value_c,
            optimum_r: a.optimum_r,
            threshold: a.threshold,
            epsilon: a.epsilon,
            reward_ok: a.reward_ok,
            constraint_ok: a.constraint_ok,
            passed: a.passed(),
            max_evaluator_error,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub pipeline: Pipeline,
    pub mode: ModeName,
    pub evaluator: EvaluatorKind,
    pub seed: u64,
    /// Instance file next to the report.
    pub instance_file: String,
    pub design_file: Option<String>,
    pub params: ParamsRecord,
    /// `theoretical`, or `empirical only` when `K` was cut below the schedule.
    pub guarantee: String,
    pub warnings: Vec<String>,
    pub coreset_size: usize,
    pub samples: u64,
    pub mean_vc_hat: f64,
    pub final_lambda: f64,
    pub dual_regret: RegretRecord,
    pub exact: ExactRecord,
    pub trace_file: String,
    pub policy: PolicyFile,
}

#[derive(Debug, Clone, Default)]
pub struct SolveOptions {
    pub seed: u64,
    pub k_override: Option<usize>,
    pub wall_clock: bool,
    pub threads: usize,
}

pub struct SolveArtifacts {
    pub report: RunReport,
    pub trace: Vec<TraceRow>,
    pub diagnostics: Vec<DiagnosticsRow>,
    pub instance: Instance,
    pub design: Option<Design>,
    pub buffer: Buffer,
    pub outcome: RunOutcome,
}

pub fn framework_params(
    config: &Config,
    instance: &Instance,
    k_override: Option<usize>,
) -> LabResult<(FrameworkParams, &'static str)> {
    let m = instance.model();
    let (zeta, source) = match config.zeta {
        Some(z) => (z, "supplied"),
        None => (oracle::slater_constant(m, ZETA_TOL)?.value, "exact"),
    };
    let dim = match config.pipeline {
        Pipeline::Tabular => None,
        Pipeline::Linear => Some(
            instance
                .features()
                .ok_or_else(|| LabError::Usage("the linear pipeline needs a linear instance".into()))?
                .dim,
        ),
    };
    let mut params = derive_params(&ParamRequest {
        mode: config.mode.into(),
        epsilon: config.epsilon,
        delta: config.delta,
        discount: m.discount,
        zeta,
        threshold: m.threshold,
        num_states: m.num_states,
        num_actions: m.num_actions,
        dim,
        constants: config.constants.resolve(),
    })?;
    if let Some(k) = k_override.or(config.k_override) {
        params = params.with_k_override(k)?;
    }
    if let Some(s) = config.schedule {
        params = params.with_schedule(s.num_iters, s.batch_size)?;
    }
    Ok((params, source))
}

/// Exact audit plus the largest per-iteration evaluator error.
pub fn exact_record(
    m: &TabularCmdp,
    features: Option<&FeatureMap>,
    outcome: &RunOutcome,
    params: &FrameworkParams,
) -> LabResult<ExactRecord> {
    let value_r = oracle::mixture_value(m, &outcome.policies, features, Signal::Reward)?;
    let value_c = oracle::mixture_value(m, &outcome.policies, features, Signal::Constraint)?;
    let optimum_r = oracle::exact_cmdp_solve(m)?.value_r;
    let mut max_err = 0.0f64;
    for (policy, entry) in outcome.policies.iter().zip(&outcome.trace) {
        let exact = oracle::policy_value(m, policy, features, Signal::Constraint)?;
        max_err = max_err.max((entry.vc_hat - exact).abs());
    }
    let audit = verdict(params.mode, params.epsilon, m.threshold, value_r, value_c, optimum_r);
    Ok(ExactRecord::new(&audit, max_err))
}

pub fn solve(config: &Config, base: &Path, opts: &SolveOptions) -> LabResult<SolveArtifacts> {
    let instance = config.instance(base, opts.seed)?;
    let m = instance.model();
    let (params, zeta_source) = framework_params(config, &instance, opts.k_override)?;
    let threads = opts.threads.max(1);

    let design = match config.pipeline {
        Pipeline::Tabular => None,
        Pipeline::Linear => {
            let features = instance.features().expect("checked by framework_params");
            Some(match &config.design {
                Some(p) => {
                    let path = Config::resolve(base, p);
                    formats::read_json::<DesignFile>(&path)?.to_design(features, &path)?
                }
                None => {
                    frank_wolfe(features, config.eps_fw.unwrap_or(DEFAULT_EPS_FW), default_max_iters(features.dim))?
                }
            })
        }
    };
    let coreset = match &design {
        Some(d) => d.coreset.clone(),
        None => all_pairs(m.num_states, m.num_actions),
    };
    let buffer = collect_parallel(m, &coreset, params.num_iters, params.batch_size, opts.seed, threads)?;

    let start = Instant::now();
    let mut clock = || start.elapsed().as_secs_f64() * 1e3;
    let clock_ref: Option<&mut dyn FnMut() -> f64> = if opts.wall_clock { Some(&mut clock) } else { None };
    let features = instance.features();
    let (t, mb, gamma) = (params.num_iters, params.batch_size, m.discount);
    let outcome = match &design {
        None => {
            let solver = TabularMdvi { num_iters: t, batch_size: mb, discount: gamma };
            let sampled =
                TabularPe { num_iters: t, batch_size: mb, discount: gamma, initial_dist: m.initial_dist.clone() };
            let exact = ExactEvaluator { cmdp: m, features };
            let evaluator: &dyn PolicyEvaluator = match config.evaluator {
                EvaluatorKind::Sampled => &sampled,
                EvaluatorKind::Exact => &exact,
            };
            run(&params, m, &solver, evaluator, &buffer, clock_ref)?
        }
        Some(d) => {
            let f = features.expect("linear pipeline");
            let solver = LsMdvi { num_iters: t, batch_size: mb, discount: gamma, design: d, features: f };
            let sampled = LsPe {
                num_iters: t,
                batch_size: mb,
                discount: gamma,
                initial_dist: m.initial_dist.clone(),
                design: d,
                features: f,
            };
            let exact = ExactEvaluator { cmdp: m, features };
            let evaluator: &dyn PolicyEvaluator = match config.evaluator {
                EvaluatorKind::Sampled => &sampled,
                EvaluatorKind::Exact => &exact,
            };
            run(&params, m, &solver, evaluator, &buffer, clock_ref)?
        }
    };

    // Inner-solver diagnostics for the final outer iteration's reward.
    let last_lambda = outcome.trace.last().map_or(0.0, |e| e.lambda);
    let u: Vec<f64> = m.reward.iter().zip(&m.constraint_reward).map(|(r, c)| r + last_lambda * c).collect();
    let inner = match &design {
        None => tabular_mdvi(t, mb, &u, &buffer, gamma, false)?,
        Some(d) => ls_mdvi(t, mb, &u, &buffer, d, features.expect("linear pipeline"), gamma, false)?,
    };
    let diagnostics = inner.diagnostics.iter().map(DiagnosticsRow::from).collect();

    let exact = exact_record(m, features, &outcome, &params)?;
    let mut warnings = outcome.warnings.clone();
    if let Some(d) = &design {
        warnings.extend(d.warnings.iter().cloned());
    }
    let report = RunReport {
        pipeline: config.pipeline,
        mode: config.mode,
        evaluator: config.evaluator,
        seed: opts.seed,
        instance_file: INSTANCE_FILE.into(),
        design_file: design.as_ref().map(|_| DESIGN_FILE.into()),
        params: ParamsRecord::new(&params, zeta_source),
        guarantee: if params.guarantee_void() { "empirical only" } else { "theoretical" }.into(),
        warnings,
        coreset_size: coreset.len(),
        samples: buffer.total_samples() as u64,
        mean_vc_hat: outcome.mean_vc_hat(),
        final_lambda: outcome.final_lambda,
        dual_regret: RegretRecord {
            at_zero: dual_regret(&outcome.trace, params.b_prime, 0.0),
            at_cap: dual_regret(&outcome.trace, params.b_prime, params.u_cap),
            bound: dual_regret_bound(&params),
        },
        exact,
        trace_file: TRACE_FILE.into(),
        policy: PolicyFile::from_policy(&outcome.mixture()),
    };
    let trace = outcome.trace.iter().map(TraceRow::from).collect();
    Ok(SolveArtifacts { report, trace, diagnostics, instance, design, buffer, outcome })
}

fn run(
    params: &FrameworkParams,
    m: &TabularCmdp,
    solver: &dyn MdpSolver,
    evaluator: &dyn PolicyEvaluator,
    buffer: &Buffer,
    clock: Option<&mut dyn FnMut() -> f64>,
) -> LabResult<RunOutcome> {
    Ok(run_primal_dual(params, &m.reward, &m.constraint_reward, solver, evaluator, Some(buffer), clock)?)
}

/// Writes the instance, design, report, trace and diagnostics into `dir`,
/// and the buffer wherever `dump_buffer` points.
pub fn write_artifacts(dir: &Path, art: &SolveArtifacts, dump_buffer: Option<&Path>) -> LabResult<()> {
    formats::save_instance(&dir.join(INSTANCE_FILE), &art.instance)?;
    if let Some(d) = &art.design {
        formats::write_json_pretty(&dir.join(DESIGN_FILE), &DesignFile::from_design(d))?;
    }
    formats::write_json_pretty(&dir.join(REPORT_FILE), &art.report)?;
    formats::write_csv(&dir.join(TRACE_FILE), &art.trace)?;
    formats::write_csv(&dir.join(DIAGNOSTICS_FILE), &art.diagnostics)?;
    if let Some(path) = dump_buffer {
        formats::write_json(path, &BufferFile::from_buffer(&art.buffer))?;
    }
    Ok(())
}

/// Recomputes the exact values of a report's policy and the mode's
/// verdicts. Never runs a solver.
pub fn verify_report(report: &RunReport, instance: &Instance, report_path: &Path) -> LabResult<ExactAudit> {
    let policy = report.policy.to_policy(report_path)?;
    let components = match policy {
        Policy::Mixture(parts) => parts,
        single => vec![single],
    };
    let m = instance.model();
    let features = instance.features();
    let value_r = oracle::mixture_value(m, &components, features, Signal::Reward)?;
    let value_c = oracle::mixture_value(m, &components, features, Signal::Constraint)?;
    let optimum_r = oracle::exact_cmdp_solve(m)?.value_r;
    Ok(verdict(report.mode.into(), report.params.epsilon, m.threshold, value_r, value_c, optimum_r))
}
