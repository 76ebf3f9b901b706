//! JSON and CSV forms of everything the CLI reads or writes.
//!
//! Nested arrays use the natural `[s][a]` and `[s][a][s']` shapes; the
//! feature matrix is one row per pair in `s * A + a` order. Floats are
//! printed shortest-roundtrip and parsed exactly, so load/save is
//! value-identical.

use std::fs;
use std::io::Write;
use std::path::Path;

use cmdp_lab_core::design::Design;
use cmdp_lab_core::primal_dual::TraceEntry;
use cmdp_lab_core::sampling::Buffer;
use cmdp_lab_core::solver::IterationDiagnostics;
use cmdp_lab_core::{FeatureMap, GreedyLinear, LinearCmdp, Pair, Policy, StochasticPolicy, TabularCmdp};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, LabResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CmdpFile {
    pub num_states: usize,
    pub num_actions: usize,
    pub gamma: f64,
    pub b: f64,
    pub rho: Vec<f64>,
    pub r: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
    #[serde(rename = "P")]
    pub p: Vec<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psi_r: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psi_c: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchors: Option<Vec<Vec<f64>>>,
}

/// A loaded instance: linear when the file carries features.
#[derive(Debug, Clone, PartialEq)]
pub enum Instance {
    Tabular(TabularCmdp),
    Linear(LinearCmdp),
}

impl Instance {
    pub fn model(&self) -> &TabularCmdp {
        match self {
            Instance::Tabular(m) => m,
            Instance::Linear(l) => &l.model,
        }
    }

    pub fn features(&self) -> Option<&FeatureMap> {
        match self {
            Instance::Tabular(_) => None,
            Instance::Linear(l) => Some(&l.features),
        }
    }

    pub fn to_file(&self) -> CmdpFile {
        let m = self.model();
        let (ns, na) = (m.num_states, m.num_actions);
        let table = |v: &[f64]| v.chunks(na).map(<[f64]>::to_vec).collect::<Vec<_>>();
        let p = m.transition.chunks(ns * na).map(|state| state.chunks(ns).map(<[f64]>::to_vec).collect()).collect();
        let mut file = CmdpFile {
            num_states: ns,
            num_actions: na,
            gamma: m.discount,
            b: m.threshold,
            rho: m.initial_dist.clone(),
            r: table(&m.reward),
            c: table(&m.constraint_reward),
            p,
            d: None,
            phi: None,
            psi_r: None,
            psi_c: None,
            anchors: None,
        };
        if let Instance::Linear(l) = self {
            let d = l.features.dim;
            file.d = Some(d);
            file.phi = Some(l.features.phi.chunks(d).map(<[f64]>::to_vec).collect());
            file.psi_r = Some(l.psi_r.clone());
            file.psi_c = Some(l.psi_c.clone());
            file.anchors = Some(l.anchors.clone());
        }
        file
    }

    /// Checks every shape, naming the field at fault, then validates.
    pub fn from_file(file: CmdpFile, path: &Path) -> LabResult<Instance> {
        let bad = |msg: String| LabError::format(path, msg);
        let (ns, na) = (file.num_states, file.num_actions);
        if ns == 0 || na == 0 {
            return Err(bad("num_states and num_actions must be positive".into()));
        }
        check_len("rho", file.rho.len(), ns, path)?;
        let flat = |name: &str, rows: &[Vec<f64>]| -> LabResult<Vec<f64>> {
            check_len(name, rows.len(), ns, path)?;
            for (s, row) in rows.iter().enumerate() {
                check_len(&format!("{name}[{s}]"), row.len(), na, path)?;
            }
            Ok(rows.concat())
        };
        let reward = flat("r", &file.r)?;
        let constraint_reward = flat("c", &file.c)?;
        check_len("P", file.p.len(), ns, path)?;
        let mut transition = Vec::with_capacity(ns * na * ns);
        for (s, actions) in file.p.iter().enumerate() {
            check_len(&format!("P[{s}]"), actions.len(), na, path)?;
            for (a, row) in actions.iter().enumerate() {
                check_len(&format!("P[{s}][{a}]"), row.len(), ns, path)?;
                transition.extend_from_slice(row);
            }
        }
        let model = TabularCmdp::new(ns, na, transition, reward, constraint_reward, file.b, file.rho, file.gamma)
            .map_err(|e| bad(e.to_string()))?;
        let linear_fields = [file.d.is_some(), file.phi.is_some(), file.psi_r.is_some(), file.psi_c.is_some()];
        if linear_fields.iter().all(|x| !x) && file.anchors.is_none() {
            return Ok(Instance::Tabular(model));
        }
        let missing = |name: &str| bad(format!("linear instance is missing field `{name}`"));
        let d = file.d.ok_or_else(|| missing("d"))?;
        let phi = file.phi.ok_or_else(|| missing("phi"))?;
        let psi_r = file.psi_r.ok_or_else(|| missing("psi_r"))?;
        let psi_c = file.psi_c.ok_or_else(|| missing("psi_c"))?;
        let anchors = file.anchors.ok_or_else(|| missing("anchors"))?;
        check_len("phi", phi.len(), ns * na, path)?;
        for (k, row) in phi.iter().enumerate() {
            check_len(&format!("phi[{k}]"), row.len(), d, path)?;
        }
        check_len("psi_r", psi_r.len(), d, path)?;
        check_len("psi_c", psi_c.len(), d, path)?;
        check_len("anchors", anchors.len(), d, path)?;
        for (j, row) in anchors.iter().enumerate() {
            check_len(&format!("anchors[{j}]"), row.len(), ns, path)?;
        }
        let features = FeatureMap::new(d, ns, na, phi.concat()).map_err(|e| bad(format!("phi: {e}")))?;
        let linear = LinearCmdp { model, features, psi_r, psi_c, anchors };
        let violations = linear.validate();
        if !violations.is_empty() {
            return Err(bad(cmdp_lab_core::model::describe(&violations)));
        }
        Ok(Instance::Linear(linear))
    }
}

fn check_len(name: &str, got: usize, want: usize, path: &Path) -> LabResult<()> {
    if got != want {
        return Err(LabError::format(path, format!("field `{name}` has length {got}, expected {want}")));
    }
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> LabResult<T> {
    let text = fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| LabError::format(path, e.to_string()))
}

/// Compact JSON for bulk data, followed by a newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> LabResult<()> {
    let mut bytes = serde_json::to_vec(value).map_err(|e| LabError::format(path, e.to_string()))?;
    bytes.push(b'\n');
    write_bytes(path, &bytes)
}

pub fn write_json_pretty<T: Serialize>(path: &Path, value: &T) -> LabResult<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| LabError::format(path, e.to_string()))?;
    bytes.push(b'\n');
    write_bytes(path, &bytes)
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> LabResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| LabError::io(dir, e))?;
    }
    let mut file = fs::File::create(path).map_err(|e| LabError::io(path, e))?;
    file.write_all(bytes).map_err(|e| LabError::io(path, e))
}

pub fn load_instance(path: &Path) -> LabResult<Instance> {
    Instance::from_file(read_json(path)?, path)
}

pub fn save_instance(path: &Path, instance: &Instance) -> LabResult<()> {
    write_json(path, &instance.to_file())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicyFile {
    /// One action per state; used for any 0/1 table.
    Deterministic {
        num_states: usize,
        num_actions: usize,
        actions: Vec<usize>,
    },
    Stochastic {
        num_states: usize,
        num_actions: usize,
        probs: Vec<Vec<f64>>,
    },
    GreedyLinear {
        theta: Vec<f64>,
    },
    Mixture {
        components: Vec<PolicyFile>,
    },
}

impl PolicyFile {
    pub fn from_policy(policy: &Policy) -> PolicyFile {
        match policy {
            Policy::Stochastic(t) => match deterministic_actions(t) {
                Some(actions) => {
                    PolicyFile::Deterministic { num_states: t.num_states, num_actions: t.num_actions, actions }
                }
                None => PolicyFile::Stochastic {
                    num_states: t.num_states,
                    num_actions: t.num_actions,
                    probs: t.probs.chunks(t.num_actions).map(<[f64]>::to_vec).collect(),
                },
            },
            Policy::GreedyLinear(g) => PolicyFile::GreedyLinear { theta: g.theta.clone() },
            Policy::Mixture(parts) => {
                PolicyFile::Mixture { components: parts.iter().map(PolicyFile::from_policy).collect() }
            }
        }
    }

    pub fn to_policy(&self, path: &Path) -> LabResult<Policy> {
        let bad = |msg: String| LabError::format(path, msg);
        Ok(match self {
            PolicyFile::Deterministic { num_states, num_actions, actions } => {
                check_len("actions", actions.len(), *num_states, path)?;
                if let Some(a) = actions.iter().find(|&&a| a >= *num_actions) {
                    return Err(bad(format!("field `actions` holds {a}, beyond num_actions = {num_actions}")));
                }
                Policy::Stochastic(StochasticPolicy::deterministic(*num_states, *num_actions, actions))
            }
            PolicyFile::Stochastic { num_states, num_actions, probs } => {
                check_len("probs", probs.len(), *num_states, path)?;
                for (s, row) in probs.iter().enumerate() {
                    check_len(&format!("probs[{s}]"), row.len(), *num_actions, path)?;
                }
                let table = StochasticPolicy::new(*num_states, *num_actions, probs.concat())
                    .map_err(|e| bad(format!("probs: {e}")))?;
                Policy::Stochastic(table)
            }
            PolicyFile::GreedyLinear { theta } => Policy::GreedyLinear(GreedyLinear { theta: theta.clone() }),
            PolicyFile::Mixture { components } => {
                if components.is_empty() {
                    return Err(bad("field `components` is empty".into()));
                }
                Policy::Mixture(components.iter().map(|c| c.to_policy(path)).collect::<LabResult<_>>()?)
            }
        })
    }
}

fn deterministic_actions(t: &StochasticPolicy) -> Option<Vec<usize>> {
    t.probs
        .chunks(t.num_actions)
        .map(|row| {
            let ones = row.iter().filter(|&&p| p == 1.0).count();
            let zeros = row.iter().filter(|&&p| p == 0.0).count();
            (ones == 1 && zeros + 1 == row.len()).then(|| row.iter().position(|&p| p == 1.0).unwrap())
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignFile {
    pub coreset: Vec<Pair>,
    pub weights: Vec<f64>,
    pub g_value: f64,
    #[serde(default)]
    pub condition_number: Option<f64>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl DesignFile {
    pub fn from_design(design: &Design) -> DesignFile {
        DesignFile {
            coreset: design.coreset.clone(),
            weights: design.weights.clone(),
            g_value: design.g_value,
            condition_number: Some(design.condition_number),
            warnings: design.warnings.clone(),
        }
    }

    /// Rebuilds the design on `features`; the stored `g_value` is only
    /// informational and is recomputed.
    pub fn to_design(&self, features: &FeatureMap, path: &Path) -> LabResult<Design> {
        let mut pairs = Vec::with_capacity(self.coreset.len());
        for &(s, a) in &self.coreset {
            if s >= features.num_states || a >= features.num_actions {
                return Err(LabError::format(path, format!("field `coreset` holds ({s}, {a}) outside the instance")));
            }
            pairs.push(s * features.num_actions + a);
        }
        check_len("weights", self.weights.len(), pairs.len(), path)?;
        let mut design = Design::from_weights(features, &pairs, &self.weights)
            .map_err(|e| LabError::format(path, format!("design: {e}")))?;
        design
            .warnings
            .extend(self.warnings.iter().filter(|w| !design.warnings.contains(w)).cloned().collect::<Vec<_>>());
        Ok(design)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BufferFile {
    pub num_states: usize,
    pub num_actions: usize,
    pub num_batches: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub coreset: Vec<Pair>,
    /// `[batch][coreset position][m]`, flattened.
    pub samples: Vec<u32>,
}

impl BufferFile {
    pub fn from_buffer(buffer: &Buffer) -> BufferFile {
        BufferFile {
            num_states: buffer.num_states,
            num_actions: buffer.num_actions,
            num_batches: buffer.num_batches,
            batch_size: buffer.batch_size,
            seed: buffer.seed,
            coreset: buffer.coreset.clone(),
            samples: buffer.samples.clone(),
        }
    }

    pub fn to_buffer(&self, path: &Path) -> LabResult<Buffer> {
        Buffer::from_samples(
            self.num_states,
            self.num_actions,
            self.coreset.clone(),
            self.num_batches,
            self.batch_size,
            self.seed,
            self.samples.clone(),
        )
        .map_err(|e| LabError::format(path, format!("buffer: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub k: usize,
    pub lambda: f64,
    pub vc_hat_rho: f64,
    pub elapsed_ms: Option<f64>,
}

impl From<&TraceEntry> for TraceRow {
    fn from(e: &TraceEntry) -> Self {
        TraceRow { k: e.k, lambda: e.lambda, vc_hat_rho: e.vc_hat, elapsed_ms: e.elapsed_ms }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRow {
    pub t: usize,
    pub theta_norm: f64,
    pub prediction_sup: f64,
    pub max_residual: f64,
}

impl From<&IterationDiagnostics> for DiagnosticsRow {
    fn from(d: &IterationDiagnostics) -> Self {
        DiagnosticsRow {
            t: d.t,
            theta_norm: d.theta_norm,
            prediction_sup: d.prediction_sup,
            max_residual: d.max_residual,
        }
    }
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> LabResult<()> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for row in rows {
        writer.serialize(row)?;
    }
    let bytes = writer.into_inner().map_err(|e| LabError::format(path, e.to_string()))?;
    write_bytes(path, &bytes)
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> LabResult<Vec<T>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| LabError::format(path, e.to_string()))?;
    reader.deserialize().collect::<Result<Vec<T>, _>>().map_err(|e| LabError::format(path, e.to_string()))
}
