use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use cmdp_lab_core::design::{default_max_iters, frank_wolfe, DEFAULT_EPS_FW};
use cmdp_lab_core::oracle::{self, Signal};
use cmdp_lab_core::Policy;
use serde::{Deserialize, Serialize};

use crate::collect::thread_count;
use crate::config::{Config, GeneratorKind, GeneratorSpec};
use crate::error::{LabError, LabResult};
use crate::experiments::{loglog_slope, random_policy, scaling_experiment};
use crate::formats::{self, DesignFile, Instance, PolicyFile};
use crate::run::{self, RunReport, SolveOptions};

#[derive(Debug, Parser)]
#[command(name = "cmdp-lab", version, about = "Primal-dual solvers for constrained MDPs with a generative model")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a random instance as JSON.
    Generate(GenerateArgs),
    /// Build a G-optimal design for a linear instance.
    Design(DesignArgs),
    /// Run the primal-dual framework from a config file.
    Solve(SolveArgs),
    /// Exact values of a saved policy (or a report's mixture).
    Evaluate(EvaluateArgs),
    /// Recompute a report's verdicts against its instance.
    Verify(VerifyArgs),
    /// Least-squares evaluation error against sample size.
    Scaling(ScalingArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum KindArg {
    Tabular,
    Linear,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, value_enum, default_value = "tabular")]
    pub kind: KindArg,
    #[arg(long, default_value_t = 10)]
    pub states: usize,
    #[arg(long, default_value_t = 3)]
    pub actions: usize,
    /// Feature dimension (linear only).
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long, default_value_t = 0.9)]
    pub gamma: f64,
    #[arg(long, default_value_t = 0.1)]
    pub slater_min: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DesignArgs {
    #[arg(long)]
    pub instance: PathBuf,
    #[arg(long, default_value_t = DEFAULT_EPS_FW)]
    pub eps_fw: f64,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Run this many outer iterations instead of the schedule's.
    #[arg(long)]
    pub k_override: Option<usize>,
    /// Write the collected buffer as JSON.
    #[arg(long)]
    pub dump_buffer: Option<PathBuf>,
    /// Record elapsed milliseconds in the trace (breaks byte-identity).
    #[arg(long)]
    pub wall_clock: bool,
    /// Output directory, overriding the config.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub instance: PathBuf,
    /// Policy JSON, or a run report whose mixture is evaluated.
    #[arg(long)]
    pub policy: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long)]
    pub report: PathBuf,
    /// Defaults to the instance file named in the report.
    #[arg(long)]
    pub instance: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScalingArgs {
    /// Linear instance; generated from `--seed` (S=8, A=3, d=4) when absent.
    #[arg(long)]
    pub instance: Option<PathBuf>,
    /// Fixed policy; a random one derived from `--seed` when absent.
    #[arg(long)]
    pub policy: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    pub num_iters: usize,
    #[arg(long, value_delimiter = ',', default_value = "50,100,200,400,800")]
    pub batch_sizes: Vec<usize>,
    #[arg(long, default_value_t = 20)]
    pub replicates: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses `argv` and runs; returns the process exit code.
pub fn main_with<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(command: Command) -> LabResult<i32> {
    match command {
        Command::Generate(a) => generate(a),
        Command::Design(a) => design(a),
        Command::Solve(a) => solve(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Verify(a) => verify(a),
        Command::Scaling(a) => scaling(a),
    }
}

fn generate(a: GenerateArgs) -> LabResult<i32> {
    let spec = GeneratorSpec {
        kind: match a.kind {
            KindArg::Tabular => GeneratorKind::Tabular,
            KindArg::Linear => GeneratorKind::Linear,
        },
        num_states: a.states,
        num_actions: a.actions,
        dim: a.dim,
        gamma: a.gamma,
        slater_min: a.slater_min,
        seed: Some(a.seed),
    };
    formats::save_instance(&a.out, &spec.generate(a.seed)?)?;
    Ok(0)
}

fn linear_features(instance: &Instance, path: &Path) -> LabResult<cmdp_lab_core::FeatureMap> {
    instance
        .features()
        .cloned()
        .ok_or_else(|| LabError::format(path, "instance has no feature map (fields `d`, `phi`)"))
}

fn design(a: DesignArgs) -> LabResult<i32> {
    let instance = formats::load_instance(&a.instance)?;
    let features = linear_features(&instance, &a.instance)?;
    let max_iters = a.max_iters.unwrap_or_else(|| default_max_iters(features.dim));
    let design = frank_wolfe(&features, a.eps_fw, max_iters)?;
    for w in &design.warnings {
        eprintln!("warning: {w}");
    }
    formats::write_json_pretty(&a.out, &DesignFile::from_design(&design))?;
    Ok(0)
}

fn solve(a: SolveArgs) -> LabResult<i32> {
    let config = Config::load(&a.config)?;
    let base = a.config.parent().map(Path::to_path_buf).unwrap_or_default();
    let out_dir = a.out_dir.clone().unwrap_or_else(|| Config::resolve(&base, &config.output_dir));
    let opts =
        SolveOptions { seed: a.seed, k_override: a.k_override, wall_clock: a.wall_clock, threads: thread_count()? };
    let art = run::solve(&config, &base, &opts)?;
    run::write_artifacts(&out_dir, &art, a.dump_buffer.as_deref())?;
    for w in &art.report.warnings {
        eprintln!("warning: {w}");
    }
    let e = &art.report.exact;
    println!(
        "V_r = {:.6} (optimum {:.6}), V_c = {:.6} (b = {:.6}): {}",
        e.value_r,
        e.optimum_r,
        e.value_c,
        e.threshold,
        if e.passed { "pass" } else { "FAIL" }
    );
    Ok(if e.passed { 0 } else { 2 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub value_r: f64,
    pub value_c: f64,
    pub threshold: f64,
    pub constraint_slack: f64,
    pub components: usize,
}

/// Reads a policy file, or the `policy` field of a run report.
pub fn load_policy(path: &Path) -> LabResult<Policy> {
    let value: serde_json::Value = formats::read_json(path)?;
    let field = if value.get("kind").is_none() { value.get("policy").cloned() } else { Some(value) };
    let field =
        field.ok_or_else(|| LabError::format(path, "neither a policy (field `kind`) nor a report (field `policy`)"))?;
    let file: PolicyFile = serde_json::from_value(field).map_err(|e| LabError::format(path, e.to_string()))?;
    file.to_policy(path)
}

fn evaluate(a: EvaluateArgs) -> LabResult<i32> {
    let instance = formats::load_instance(&a.instance)?;
    let policy = load_policy(&a.policy)?;
    let m = instance.model();
    let features = instance.features();
    let value_r = oracle::policy_value(m, &policy, features, Signal::Reward)?;
    let value_c = oracle::policy_value(m, &policy, features, Signal::Constraint)?;
    let result = Evaluation {
        value_r,
        value_c,
        threshold: m.threshold,
        constraint_slack: value_c - m.threshold,
        components: match &policy {
            Policy::Mixture(p) => p.len(),
            _ => 1,
        },
    };
    match &a.out {
        Some(path) => formats::write_json_pretty(path, &result)?,
        None => println!("{}", serde_json::to_string_pretty(&result).expect("plain struct")),
    }
    Ok(0)
}

fn verify(a: VerifyArgs) -> LabResult<i32> {
    let report: RunReport = formats::read_json(&a.report)?;
    let instance_path = match a.instance {
        Some(p) => p,
        None => a.report.parent().map(Path::to_path_buf).unwrap_or_default().join(&report.instance_file),
    };
    let instance = formats::load_instance(&instance_path)?;
    let audit = run::verify_report(&report, &instance, &a.report)?;
    println!(
        "mode {}, epsilon {}: V_r = {:.6} against optimum {:.6}: {}; V_c = {:.6} against b = {:.6}: {}",
        audit.mode.as_str(),
        audit.epsilon,
        audit.value_r,
        audit.optimum_r,
        if audit.reward_ok { "ok" } else { "FAIL" },
        audit.value_c,
        audit.threshold,
        if audit.constraint_ok { "ok" } else { "FAIL" }
    );
    if audit.passed() {
        Ok(0)
    } else {
        Err(LabError::Verification(format!(
            "report {} does not meet its {} guarantee",
            a.report.display(),
            audit.mode.as_str()
        )))
    }
}

fn scaling(a: ScalingArgs) -> LabResult<i32> {
    if a.batch_sizes.is_empty() || a.replicates == 0 || a.num_iters == 0 {
        return Err(LabError::Usage("batch sizes, replicates and num-iters must be nonempty and positive".into()));
    }
    let instance = match &a.instance {
        Some(p) => formats::load_instance(p)?,
        None => GeneratorSpec {
            kind: GeneratorKind::Linear,
            num_states: 8,
            num_actions: 3,
            dim: Some(4),
            gamma: 0.9,
            slater_min: 0.0,
            seed: Some(a.seed),
        }
        .generate(a.seed)?,
    };
    let linear = match instance {
        Instance::Linear(l) => l,
        Instance::Tabular(_) => {
            return Err(LabError::Usage("scaling needs a linear instance (fields `d`, `phi`)".into()));
        }
    };
    let m = &linear.model;
    let policy = match &a.policy {
        Some(p) => load_policy(p)?.table(Some(&linear.features))?,
        None => random_policy(a.seed, m.num_states, m.num_actions),
    };
    let design = frank_wolfe(&linear.features, DEFAULT_EPS_FW, default_max_iters(linear.features.dim))?;
    let rows = scaling_experiment(
        &linear,
        &design,
        &policy,
        a.num_iters,
        &a.batch_sizes,
        a.replicates,
        a.seed,
        thread_count()?,
    )?;
    formats::write_csv(&a.out, &rows)?;
    if rows.len() >= 2 {
        let xs: Vec<f64> = rows.iter().map(|r| r.samples_per_pair as f64).collect();
        let ys: Vec<f64> = rows.iter().map(|r| r.mean_abs_error).collect();
        println!("log-log slope of mean |error| against N: {:.4}", loglog_slope(&xs, &ys));
    }
    Ok(0)
}
