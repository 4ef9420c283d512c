//! Experiment configuration in TOML.
//!
//! Top-level keys: `mode` (one of `perfect`, `defect`, `thermo-scan`,
//! `jellium`, `validate`) and `output_dir` (default `tfw-output`). Sections:
//!
//! * `[lattice]`: `a`, `n_per_cell`. Required except in `jellium` mode.
//! * `[model]`: `background` and arrays of tables `[[model.periodic]]`,
//!   `[[model.defect]]` with `charge`, `center`, `width`.
//! * `[tfw]`: `c_w` (default 1), `c_tf` (default `(10/3)(3π²)^{2/3}`).
//! * `[solver]`: `max_iters` (5000), `grad_tol` (grid default),
//!   `step_rule` (`{ rule = "backtracking" }` or `{ rule = "fixed", step = … }`),
//!   `precondition` (true), `seed` (0).
//! * `[scan]`: `q_list`, `L_list`. Required in `thermo-scan` mode.
//! * `[defect]`: `L` (1) and optional `q`; without `q` the charge is free.
//! * `[jellium]`: `alpha`, `box` (edge length, default 16 times the widest
//!   defect width), `n` (32), `epsilons` ([]),
//!   `radii` (log-spaced in [0.05, 50]).
//! * `[validate]`: `gradient_states` (10), `convexity_samples` (100000),
//!   `alpha` (1).
//!
//! Unknown keys are rejected.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::functional::TfwParams;
use crate::lattice::Lattice;
use crate::minimize::{SolverConfig, StepRule};
use crate::model::NuclearModel;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid `{key}`: {message}")]
    Invalid { key: String, message: String },
    #[error("cannot read configuration: {0}")]
    Read(String),
}

fn invalid(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.to_string(),
        message: message.into(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Perfect,
    Defect,
    ThermoScan,
    Jellium,
    Validate,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Perfect => "perfect",
            Mode::Defect => "defect",
            Mode::ThermoScan => "thermo-scan",
            Mode::Jellium => "jellium",
            Mode::Validate => "validate",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeConfig {
    pub a: f64,
    pub n_per_cell: usize,
}

impl LatticeConfig {
    pub fn unit_cell(&self) -> Result<Lattice, ConfigError> {
        Lattice::new(self.a, 1, self.n_per_cell).map_err(|e| invalid("lattice", e.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanConfig {
    #[serde(default)]
    pub q_list: Vec<f64>,
    #[serde(rename = "L_list")]
    pub l_list: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DefectConfig {
    #[serde(rename = "L", default = "one")]
    pub l: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<f64>,
}

impl Default for DefectConfig {
    fn default() -> Self {
        Self { l: 1, q: None }
    }
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JelliumConfig {
    pub alpha: f64,
    /// Edge length; defaults to 16 times the widest defect Gaussian.
    #[serde(rename = "box", default, skip_serializing_if = "Option::is_none")]
    pub box_edge: Option<f64>,
    #[serde(default = "default_jellium_n")]
    pub n: usize,
    #[serde(default)]
    pub epsilons: Vec<f64>,
    #[serde(default = "default_radii")]
    pub radii: Vec<f64>,
}

fn default_jellium_n() -> usize {
    32
}

/// 64 log-spaced radii in `[0.05, 50]`.
pub fn default_radii() -> Vec<f64> {
    (0..64).map(|i| 0.05 * 1000f64.powf(i as f64 / 63.0)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidateConfig {
    #[serde(default = "default_gradient_states")]
    pub gradient_states: usize,
    #[serde(default = "default_convexity_samples")]
    pub convexity_samples: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

impl Default for ValidateConfig {
    fn default() -> Self {
        Self {
            gradient_states: default_gradient_states(),
            convexity_samples: default_convexity_samples(),
            alpha: default_alpha(),
        }
    }
}

fn default_gradient_states() -> usize {
    10
}
fn default_convexity_samples() -> usize {
    100_000
}
fn default_alpha() -> f64 {
    1.0
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("tfw-output")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Mode,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lattice: Option<LatticeConfig>,
    #[serde(default)]
    pub model: NuclearModel,
    #[serde(default)]
    pub tfw: TfwParams,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scan: Option<ScanConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub defect: Option<DefectConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jellium: Option<JelliumConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validate: Option<ValidateConfig>,
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

/// Parses, applies defaults and validates.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| {
        let (line, column) = e.span().map_or((0, 0), |s| line_col(text, s.start));
        ConfigError::Parse {
            line,
            column,
            message: e.message().to_string(),
        }
    })?;
    cfg.apply_defaults();
    cfg.validate()?;
    Ok(cfg)
}

/// Canonical TOML: every default spelled out, fixed key order.
pub fn emit_config(cfg: &ExperimentConfig) -> String {
    toml::to_string(cfg).expect("configuration is always representable")
}

impl ExperimentConfig {
    fn apply_defaults(&mut self) {
        match self.mode {
            Mode::Defect => {
                self.defect.get_or_insert_with(DefectConfig::default);
            }
            Mode::Jellium => {
                let widest = self.model.defect.iter().map(|g| g.width).fold(f64::NAN, f64::max);
                if let Some(j) = self.jellium.as_mut() {
                    if j.box_edge.is_none() && widest > 0.0 {
                        j.box_edge = Some(16.0 * widest);
                    }
                }
            }
            Mode::Validate => {
                self.validate.get_or_insert_with(ValidateConfig::default);
                self.lattice.get_or_insert(LatticeConfig { a: 4.0, n_per_cell: 16 });
            }
            _ => {}
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.tfw.validate().map_err(|e| invalid("tfw", e.to_string()))?;
        if self.solver.max_iters == 0 {
            return Err(invalid("solver.max_iters", "must be >= 1"));
        }
        if let Some(t) = self.solver.grad_tol {
            if !(t > 0.0 && t.is_finite()) {
                return Err(invalid("solver.grad_tol", "must be positive"));
            }
        }
        if let StepRule::Fixed { step } = self.solver.step_rule {
            if !(step > 0.0 && step.is_finite()) {
                return Err(invalid("solver.step_rule.step", "must be positive"));
            }
        }
        let need_lattice = !matches!(self.mode, Mode::Jellium);
        if let Some(l) = &self.lattice {
            if !(l.a > 0.0 && l.a.is_finite()) {
                return Err(invalid("lattice.a", "must be positive"));
            }
            if l.n_per_cell < 2 {
                return Err(invalid("lattice.n_per_cell", "must be >= 2"));
            }
        } else if need_lattice {
            return Err(invalid("lattice", format!("required in {} mode", self.mode.name())));
        }
        match self.mode {
            Mode::Perfect | Mode::Defect | Mode::ThermoScan => {
                let a = self.lattice.expect("checked above").a;
                self.model.validate(a).map_err(|e| invalid("model", e.to_string()))?;
            }
            _ => {
                if let Some(g) = self
                    .model
                    .periodic
                    .iter()
                    .chain(&self.model.defect)
                    .find(|g| !(g.width > 0.0))
                {
                    return Err(invalid(
                        "model",
                        format!("Gaussian width must be positive, got {}", g.width),
                    ));
                }
            }
        }
        match self.mode {
            Mode::ThermoScan => {
                let scan = self
                    .scan
                    .as_ref()
                    .ok_or_else(|| invalid("scan", "required in thermo-scan mode"))?;
                if scan.l_list.is_empty() {
                    return Err(invalid("scan.L_list", "must not be empty"));
                }
                if scan.l_list.contains(&0) {
                    return Err(invalid("scan.L_list", "L must be ≥ 1"));
                }
                if scan.l_list.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(invalid("scan.L_list", "must be strictly increasing"));
                }
                if scan.q_list.iter().any(|q| !q.is_finite()) {
                    return Err(invalid("scan.q_list", "must be finite"));
                }
            }
            Mode::Defect => {
                let d = self.defect.expect("defaulted");
                if d.l == 0 {
                    return Err(invalid("defect.L", "L must be ≥ 1"));
                }
                if d.q.is_some_and(|q| !q.is_finite()) {
                    return Err(invalid("defect.q", "must be finite"));
                }
            }
            Mode::Jellium => {
                let j = self
                    .jellium
                    .as_ref()
                    .ok_or_else(|| invalid("jellium", "required in jellium mode"))?;
                if !(j.alpha > 0.0 && j.alpha.is_finite()) {
                    return Err(invalid("jellium.alpha", "must be positive"));
                }
                match j.box_edge {
                    None => return Err(invalid("jellium.box", "required when the model has no defect")),
                    Some(b) if !(b > 0.0 && b.is_finite()) => return Err(invalid("jellium.box", "must be positive")),
                    Some(_) => {}
                }
                if j.n < 2 {
                    return Err(invalid("jellium.n", "must be >= 2"));
                }
                if j.epsilons.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
                    return Err(invalid("jellium.epsilons", "must be positive"));
                }
                if !j.epsilons.is_empty() && j.epsilons.len() < 2 {
                    return Err(invalid("jellium.epsilons", "a slope fit needs at least two values"));
                }
                if j.radii.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
                    return Err(invalid("jellium.radii", "must be positive"));
                }
            }
            Mode::Validate => {
                let v = self.validate.expect("defaulted");
                if v.gradient_states == 0 {
                    return Err(invalid("validate.gradient_states", "must be >= 1"));
                }
                if !(v.alpha > 0.0 && v.alpha.is_finite()) {
                    return Err(invalid("validate.alpha", "must be positive"));
                }
            }
            Mode::Perfect => {}
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const JELLIUM: &str = r#"
mode = "jellium"

[jellium]
alpha = 1.0
box = 16.0

[[model.defect]]
charge = 1.0
center = [0.0, 0.0, 0.0]
width = 1.0
"#;

    #[test]
    fn minimal_jellium_defaults() {
        let cfg = parse_config(JELLIUM).unwrap();
        let j = cfg.jellium.as_ref().unwrap();
        assert_eq!(j.n, 32);
        assert!(j.epsilons.is_empty());
        assert_eq!(j.radii.len(), 64);
        assert_eq!(cfg.tfw, TfwParams::default());
        assert_eq!(cfg.solver, SolverConfig::default());
        assert_eq!(cfg.output_dir, PathBuf::from("tfw-output"));
    }

    #[test]
    fn jellium_box_follows_defect_width() {
        let cfg = parse_config(
            &JELLIUM
                .replace("box = 16.0\n", "")
                .replace("width = 1.0", "width = 0.75"),
        )
        .unwrap();
        assert_eq!(cfg.jellium.unwrap().box_edge, Some(12.0));
        let bare = "mode = \"jellium\"\n[jellium]\nalpha = 1.0\n";
        assert!(matches!(parse_config(bare), Err(ConfigError::Invalid { key, .. }) if key == "jellium.box"));
    }

    #[test]
    fn zero_supercell_rejected() {
        let text = r#"
mode = "thermo-scan"
[lattice]
a = 4.0
n_per_cell = 8
[[model.periodic]]
charge = 1.0
center = [0.0, 0.0, 0.0]
width = 0.6
[scan]
q_list = [0.0]
L_list = [0]
"#;
        let err = parse_config(text).unwrap_err();
        assert_eq!(
            err,
            ConfigError::Invalid {
                key: "scan.L_list".into(),
                message: "L must be ≥ 1".into()
            }
        );
        assert!(err.to_string().contains("L must be ≥ 1"));
    }

    #[test]
    fn parse_errors_carry_lines() {
        let err = parse_config("mode = \"perfect\"\n[lattice]\na = 4.0\nbogus = 3\n").unwrap_err();
        match err {
            ConfigError::Parse { line, .. } => assert_eq!(line, 4),
            other => panic!("{other:?}"),
        }
        let err = parse_config("mode = \"perfect\"\n\n[lattice\n").unwrap_err();
        assert!(matches!(err, ConfigError::Parse { line: 3, .. }), "{err:?}");
        assert!(matches!(
            parse_config("mode = \"sideways\""),
            Err(ConfigError::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn round_trip() {
        let text = r#"
mode = "defect"
output_dir = "out/defect"
[lattice]
a = 4
n_per_cell = 12
[model]
background = 0.25
[[model.periodic]]
charge = 1.0
center = [0.1, 0.0, 0.0]
width = 0.6
[[model.defect]]
charge = 0.1
center = [0.0, 0.0, 0.0]
width = 0.3
[solver]
grad_tol = 1e-10
step_rule = { rule = "fixed", step = 0.01 }
seed = 7
[defect]
L = 2
q = -0.5
"#;
        let cfg = parse_config(text).unwrap();
        let canon = emit_config(&cfg);
        let again = parse_config(&canon).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(canon, emit_config(&again));
        let j = parse_config(JELLIUM).unwrap();
        assert_eq!(parse_config(&emit_config(&j)).unwrap(), j);
    }

    #[test]
    fn mode_requirements() {
        assert!(matches!(
            parse_config("mode = \"perfect\""),
            Err(ConfigError::Invalid { key, .. }) if key == "lattice"
        ));
        let v = parse_config("mode = \"validate\"").unwrap();
        assert_eq!(v.validate.unwrap().convexity_samples, 100_000);
        assert!(matches!(
            parse_config("mode = \"jellium\"\n[jellium]\nalpha = -1.0\nbox = 4.0\n"),
            Err(ConfigError::Invalid { key, .. }) if key == "jellium.alpha"
        ));
    }
}
