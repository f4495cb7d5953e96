//! Run configuration: a JSON file, then `--override key=value` edits, then
//! the dedicated flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ctrlode::dynamics::BioreactorParams;
use ctrlode::train::{ConstrainedConfig, MultistartConfig, ReferenceProfile};
use ctrlode::IntegratorConfigF64;
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Fit the policy to the reference profile only.
    Precondition,
    /// Multistart preconditioning and unconstrained optimisation.
    Unconstrained,
    /// Barrier rounds from `init_checkpoint` (or a fresh network).
    Constrained,
    /// Unconstrained, then barrier rounds when the problem has constraints.
    #[default]
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    #[default]
    Vdp,
    Bioreactor,
}

/// Catalog problem plus overrides. Missing fields keep the catalog values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ProblemConfig {
    pub name: ProblemKind,
    /// Problem definition file with the same fields; fields given here
    /// take precedence over it.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
    /// Final time; 5 for vdp, 240 for bioreactor.
    pub tf: Option<f64>,
    pub x0: Option<Vec<f64>>,
    pub u_lb: Option<Vec<f64>>,
    pub u_ub: Option<Vec<f64>>,
    /// Drop all state constraints.
    pub unconstrained: bool,
    /// Lower bound on `x1` (vdp only); -0.4.
    pub x1_min: Option<f64>,
    /// Kinetic constants (bioreactor only).
    pub params: Option<BioreactorParams>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntegratorSection {
    pub rtol: f64,
    /// 1e-8 for vdp, 1e-6 for bioreactor when absent.
    pub atol: Option<f64>,
    pub h_init: Option<f64>,
    pub h_max: Option<f64>,
    pub max_steps: usize,
}

impl Default for IntegratorSection {
    fn default() -> Self {
        Self {
            rtol: 1e-6,
            atol: None,
            h_init: None,
            h_max: None,
            max_steps: 100_000,
        }
    }
}

impl IntegratorSection {
    pub fn resolve(&self, kind: ProblemKind) -> Result<IntegratorConfigF64> {
        let atol = self.atol.unwrap_or(match kind {
            ProblemKind::Vdp => 1e-8,
            ProblemKind::Bioreactor => 1e-6,
        });
        let cfg = IntegratorConfigF64 {
            rtol: self.rtol,
            atol,
            h_init: self.h_init,
            h_max: self.h_max,
            max_steps: self.max_steps,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Points of the uniform grid in `trajectory.csv`.
    pub trajectory_points: usize,
    /// Record measured times in `wall_ms`; zeros keep logs reproducible.
    pub wall_clock: bool,
    /// Write a checkpoint after every barrier round.
    pub round_checkpoints: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            trajectory_points: 1001,
            wall_clock: false,
            round_checkpoints: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradcheckConfig {
    pub directions: usize,
    pub fd_step: f64,
    pub rtol: f64,
    pub atol: f64,
    pub tolerance: f64,
    /// Barrier weight and relaxation applied to every constraint, so that
    /// barrier derivatives are checked too.
    pub alpha: f64,
    pub delta: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            directions: 20,
            fd_step: 1e-4,
            rtol: 1e-10,
            atol: 1e-10,
            tolerance: 1e-4,
            alpha: 0.01,
            delta: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub problem: ProblemConfig,
    pub stage: Stage,
    pub seed: u64,
    pub integrator: IntegratorSection,
    /// Starts, architecture, preconditioning and unconstrained optimisers.
    pub multistart: MultistartConfig,
    /// Reference profiles replacing the default pool (start `k` uses entry
    /// `k` modulo the list length).
    pub profiles: Option<Vec<ReferenceProfile<f64>>>,
    /// JSON file holding such a list; ignored when `profiles` is given.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub profile_file: Option<PathBuf>,
    /// Barrier schedule and the optimiser used in each round.
    pub barrier: ConstrainedConfig,
    /// Policy checkpoint to start the constrained stage from.
    pub init_checkpoint: Option<PathBuf>,
    pub gradcheck: GradcheckConfig,
    pub output: OutputConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            problem: ProblemConfig::default(),
            stage: Stage::default(),
            seed: 0,
            integrator: IntegratorSection::default(),
            multistart: MultistartConfig::default(),
            profiles: None,
            profile_file: None,
            barrier: ConstrainedConfig::default(),
            init_checkpoint: None,
            gradcheck: GradcheckConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

/// Sets `path` (dot separated) inside `root`, creating objects on the way.
/// The value is parsed as JSON and taken as a string when that fails.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .with_context(|| format!("override `{assignment}` is not of the form key=value"))?;
    if path.is_empty() || path.split('.').any(str::is_empty) {
        bail!("override `{assignment}` has an empty key");
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let mut keys = path.split('.').peekable();
    while let Some(key) = keys.next() {
        if !node.is_object() {
            if node.is_null() {
                *node = Value::Object(Default::default());
            } else {
                bail!("override `{path}`: `{key}` is below a non-object value");
            }
        }
        let map = node.as_object_mut().expect("object");
        if keys.peek().is_none() {
            map.insert(key.to_string(), value);
            return Ok(());
        }
        node = map.entry(key.to_string()).or_insert(Value::Null);
    }
    unreachable!("path has at least one key")
}

/// Reads `path` (or starts from defaults), applies the overrides and
/// resolves relative file references against the config's directory.
pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
    let text = match path {
        Some(p) => std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?,
        None => "{}".to_string(),
    };
    let name = path.map_or("<defaults>".into(), |p| p.display().to_string());
    let mut cfg: RunConfig = if overrides.is_empty() {
        // Straight from the text so that errors carry line and column.
        serde_json::from_str(&text).with_context(|| format!("invalid config {name}"))?
    } else {
        let mut root: Value = serde_json::from_str(&text).with_context(|| format!("parsing config {name}"))?;
        for o in overrides {
            apply_override(&mut root, o)?;
        }
        serde_json::from_value(root).with_context(|| format!("invalid config {name} after overrides"))?
    };
    let base = path.and_then(Path::parent).unwrap_or(Path::new(""));
    let rebase = |p: &mut Option<PathBuf>| {
        if let Some(f) = p {
            if f.is_relative() {
                *f = base.join(&*f);
            }
        }
    };
    rebase(&mut cfg.problem.file);
    rebase(&mut cfg.profile_file);
    rebase(&mut cfg.init_checkpoint);
    Ok(cfg)
}
