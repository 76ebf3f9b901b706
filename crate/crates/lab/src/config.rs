use std::path::{Path, PathBuf};

use cmdp_lab_core::generators::{anchor_linear_cmdp, random_tabular_cmdp};
use cmdp_lab_core::primal_dual::{Mode, ScheduleConstants};
use serde::{Deserialize, Serialize};

use crate::error::{LabError, LabResult};
use crate::formats::{self, Instance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeName {
    Relaxed,
    Strict,
}

impl From<ModeName> for Mode {
    fn from(m: ModeName) -> Mode {
        match m {
            ModeName::Relaxed => Mode::Relaxed,
            ModeName::Strict => Mode::Strict,
        }
    }
}

impl From<Mode> for ModeName {
    fn from(m: Mode) -> ModeName {
        match m {
            Mode::Relaxed => ModeName::Relaxed,
            Mode::Strict => ModeName::Strict,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pipeline {
    Tabular,
    Linear,
}

/// `sampled` runs the pipeline's own estimator; `exact` substitutes the
/// true-model evaluation to isolate the dual mechanism.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvaluatorKind {
    #[default]
    Sampled,
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    Tabular,
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    pub kind: GeneratorKind,
    pub num_states: usize,
    pub num_actions: usize,
    #[serde(default)]
    pub dim: Option<usize>,
    pub gamma: f64,
    pub slater_min: f64,
    /// Instance seed; the run's `--seed` when absent.
    #[serde(default)]
    pub seed: Option<u64>,
}

impl GeneratorSpec {
    pub fn generate(&self, fallback_seed: u64) -> LabResult<Instance> {
        let seed = self.seed.unwrap_or(fallback_seed);
        Ok(match self.kind {
            GeneratorKind::Tabular => Instance::Tabular(random_tabular_cmdp(
                seed,
                self.num_states,
                self.num_actions,
                self.gamma,
                self.slater_min,
            )?),
            GeneratorKind::Linear => {
                let dim = self.dim.ok_or_else(|| LabError::Usage("linear generator needs `dim`".into()))?;
                Instance::Linear(anchor_linear_cmdp(
                    seed,
                    self.num_states,
                    self.num_actions,
                    dim,
                    self.gamma,
                    self.slater_min,
                )?)
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstantsOverride {
    #[serde(default)]
    pub c_m: Option<f64>,
    #[serde(default)]
    pub c_t: Option<f64>,
}

impl ConstantsOverride {
    pub fn resolve(&self) -> ScheduleConstants {
        let d = ScheduleConstants::default();
        ScheduleConstants { c_m: self.c_m.unwrap_or(d.c_m), c_t: self.c_t.unwrap_or(d.c_t) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleOverride {
    pub num_iters: usize,
    pub batch_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    /// Instance file, relative to the config file.
    #[serde(default)]
    pub instance: Option<String>,
    #[serde(default)]
    pub generator: Option<GeneratorSpec>,
    pub mode: ModeName,
    pub epsilon: f64,
    pub delta: f64,
    pub pipeline: Pipeline,
    #[serde(default)]
    pub constants: ConstantsOverride,
    #[serde(default)]
    pub k_override: Option<usize>,
    /// Replaces the derived `(T, M)`.
    #[serde(default)]
    pub schedule: Option<ScheduleOverride>,
    /// Slater constant; computed from the instance when absent.
    #[serde(default)]
    pub zeta: Option<f64>,
    #[serde(default)]
    pub evaluator: EvaluatorKind,
    /// Design file for the linear pipeline, relative to the config file.
    #[serde(default)]
    pub design: Option<String>,
    #[serde(default)]
    pub eps_fw: Option<f64>,
    /// Output directory, relative to the config file.
    #[serde(default = "default_output_dir")]
    pub output_dir: String,
}

fn default_output_dir() -> String {
    "out".into()
}

impl Config {
    pub fn load(path: &Path) -> LabResult<Config> {
        let cfg: Config = formats::read_json(path)?;
        match (&cfg.instance, &cfg.generator) {
            (Some(_), Some(_)) => {
                Err(LabError::format(path, "fields `instance` and `generator` are mutually exclusive"))
            }
            (None, None) => Err(LabError::format(path, "one of `instance` or `generator` is required")),
            _ => Ok(cfg),
        }
    }

    pub fn resolve(base: &Path, relative: &str) -> PathBuf {
        let p = Path::new(relative);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.join(p)
        }
    }

    pub fn instance(&self, base: &Path, seed: u64) -> LabResult<Instance> {
        match (&self.instance, &self.generator) {
            (Some(path), _) => formats::load_instance(&Config::resolve(base, path)),
            (None, Some(spec)) => spec.generate(seed),
            (None, None) => Err(LabError::Usage("config names no instance".into())),
        }
    }
}
