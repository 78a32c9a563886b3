//! Run configuration for `optimize`: systems, starting program, objective,
//! optimizer settings, outputs and the baselines reported after a run.
//!
//! Input paths are resolved against the directory of the config file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use spinforge::objective::{Objective, ObjectiveSpec};
use spinforge::optimize::OptConfig;
use spinforge::prop::PulseProgram;
use spinforge::spinsys::{OperatorExpr, SpinSystem};

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProgramSection {
    /// Pulse program file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    /// Number of trainable segments of a fresh template.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segments: Option<usize>,
    /// Total duration of a fresh template, s.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_s: Option<f64>,
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outputs {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub directory: Option<PathBuf>,
    #[serde(default = "yes")]
    pub snapshots: bool,
    #[serde(default = "yes")]
    pub checkpoint: bool,
}

impl Default for Outputs {
    fn default() -> Self {
        Self { directory: None, snapshots: true, checkpoint: true }
    }
}

/// Reference spectrum for an enhancement factor: a prepared state, an ideal
/// PRESS acquisition, or a plain 90° excitation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Baseline {
    pub label: String,
    pub system: String,
    pub region_ppm: [f64; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub press_te_s: Option<f64>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub plain: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub systems: BTreeMap<String, PathBuf>,
    pub program: ProgramSection,
    /// Path of an objective file, or the objective inline.
    pub objective: toml::Value,
    #[serde(default)]
    pub optimizer: OptConfig,
    #[serde(default)]
    pub outputs: Outputs,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub baselines: Vec<Baseline>,
}

/// A validated run with every input loaded.
#[derive(Clone, Debug)]
pub struct ResolvedRun {
    /// Materialized config: absolute paths, inline objective, all defaults.
    pub config: RunConfig,
    pub systems: BTreeMap<String, SpinSystem>,
    pub template: PulseProgram,
    pub objective: ObjectiveSpec,
    /// Files read, for the manifest digests.
    pub inputs: Vec<PathBuf>,
}

fn absolute(base: &Path, p: &Path) -> PathBuf {
    let joined = if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
    std::fs::canonicalize(&joined).unwrap_or(joined)
}

/// Reads a run config written as TOML, or the `config` entry of a run
/// manifest (JSON).
pub fn read_config(path: &Path) -> CliResult<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::validation(format!("cannot read {}: {e}", path.display())))?;
    if path.extension().is_some_and(|e| e == "json") {
        let v: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
        let cfg = v
            .get("config")
            .ok_or_else(|| CliError::validation(format!("{}: manifest has no `config` entry", path.display())))?;
        return serde_json::from_value(cfg.clone())
            .map_err(|e| CliError::validation(format!("{}: config: {e}", path.display())));
    }
    toml::from_str(&text).map_err(|e| CliError::validation(format!("{}: {}", path.display(), e.message())))
}

/// Loads and checks everything the run needs, collecting every problem
/// found instead of stopping at the first.
pub fn resolve(cfg: &RunConfig, base: &Path) -> CliResult<ResolvedRun> {
    let mut errors = Vec::new();
    let mut inputs = Vec::new();
    let mut out = cfg.clone();

    let mut systems = BTreeMap::new();
    if cfg.systems.is_empty() {
        errors.push("systems: at least one system is required".to_string());
    }
    for (name, p) in &cfg.systems {
        let p = absolute(base, p);
        match SpinSystem::load(&p) {
            Ok(s) => {
                systems.insert(name.clone(), s);
            }
            Err(e) => errors.push(format!("systems.{name} ({}): {e}", p.display())),
        }
        inputs.push(p.clone());
        out.systems.insert(name.clone(), p);
    }

    let template = match (&cfg.program.path, cfg.program.segments, cfg.program.duration_s) {
        (Some(p), None, None) => {
            let p = absolute(base, p);
            inputs.push(p.clone());
            out.program.path = Some(p.clone());
            PulseProgram::load(&p).map_err(|e| format!("program ({}): {e}", p.display()))
        }
        (None, Some(n), Some(d)) => PulseProgram::shaped_template(n, d).map_err(|e| format!("program: {e}")),
        _ => Err("program: give either `path` or both `segments` and `duration_s`".to_string()),
    };
    let template = match template {
        Ok(t) if t.n_trainable() == 0 => {
            errors.push("program: no trainable segments".into());
            None
        }
        Ok(t) => Some(t),
        Err(e) => {
            errors.push(e);
            None
        }
    };

    let objective = match &cfg.objective {
        toml::Value::String(p) => {
            let p = absolute(base, Path::new(p));
            inputs.push(p.clone());
            ObjectiveSpec::load(&p).map_err(|e| format!("objective ({}): {e}", p.display()))
        }
        toml::Value::Table(t) => toml::Value::Table(t.clone())
            .try_into::<ObjectiveSpec>()
            .map_err(|e| format!("objective: {}", e.message()))
            .and_then(|s| s.validate().map(|_| s).map_err(|e| format!("objective: {e}"))),
        _ => Err("objective: expected a file path or a table".to_string()),
    };
    let objective = match objective {
        Ok(o) => {
            match toml::Value::try_from(&o) {
                Ok(v) => out.objective = v,
                Err(e) => errors.push(format!("objective: {e}")),
            }
            Some(o)
        }
        Err(e) => {
            errors.push(e);
            None
        }
    };

    if let Err(e) = cfg.optimizer.validate() {
        errors.push(format!("optimizer: {e}"));
    }
    if let (Some(t), true) = (&template, cfg.optimizer.warm_start) {
        if let Err(e) = t.check_amplitude(cfg.optimizer.amp_max_hz) {
            errors.push(format!("program: {e}"));
        }
    }

    for (k, b) in cfg.baselines.iter().enumerate() {
        let at = format!("baselines[{}] `{}`", k + 1, b.label);
        let sources = b.state.is_some() as usize + b.press_te_s.is_some() as usize + b.plain as usize;
        if sources != 1 {
            errors.push(format!("{at}: give exactly one of `state`, `press_te_s`, `plain`"));
        }
        if let Err(e) = spinforge::detect::SpectralRegion::new(b.region_ppm[0], b.region_ppm[1]) {
            errors.push(format!("{at}: {e}"));
        }
        match systems.get(&b.system) {
            None if !cfg.systems.contains_key(&b.system) => errors.push(format!("{at}: unknown system `{}`", b.system)),
            Some(s) => {
                if let Some(expr) = &b.state {
                    if let Err(e) = OperatorExpr::parse(expr).and_then(|x| x.to_operator(s.n_spins())) {
                        errors.push(format!("{at}: {e}"));
                    }
                }
                if let Some(te) = b.press_te_s {
                    if !(te.is_finite() && te > 0.0) {
                        errors.push(format!("{at}: press_te_s must be > 0"));
                    }
                }
            }
            None => {}
        }
    }

    // Cross-references between tasks and systems.
    if let Some(o) = &objective {
        if systems.len() == cfg.systems.len() {
            if let Err(e) = Objective::new(o.clone(), &systems) {
                errors.push(format!("objective: {e}"));
            }
        }
    }

    if !errors.is_empty() {
        return Err(CliError::many(errors));
    }
    Ok(ResolvedRun {
        config: out,
        systems,
        template: template.expect("checked"),
        objective: objective.expect("checked"),
        inputs,
    })
}

impl RunConfig {
    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).unwrap_or_default()
    }
}
