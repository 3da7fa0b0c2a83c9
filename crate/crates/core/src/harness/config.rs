//! Experiment configuration, read from TOML or JSON.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrator::SchemeKind;
use crate::model::presets::Preset;
use crate::model::JumpModel;
use crate::steps::StepSequence;

/// `[model]`: a preset call plus keyed overrides such as `dim = 2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub preset: String,
    #[serde(flatten)]
    pub params: BTreeMap<String, f64>,
}

impl ModelSpec {
    pub fn preset(&self) -> Result<Preset> {
        Preset::parse(&self.preset, &self.params)
    }

    pub fn build(&self) -> Result<JumpModel> {
        self.preset()?.build()
    }
}

/// `[reference]`: the constant fine-step run standing in for the invariant law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceConfig {
    /// Defaults to `gamma_{n_max} / 4`.
    #[serde(default)]
    pub step: Option<f64>,
    /// Length of the burn-in run whose terminal states seed the reference.
    #[serde(default = "default_burn_in")]
    pub burn_in: f64,
    /// Defaults to the ensemble size.
    #[serde(default)]
    pub paths: Option<usize>,
}

fn default_burn_in() -> f64 {
    10.0
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        Self {
            step: None,
            burn_in: default_burn_in(),
            paths: None,
        }
    }
}

/// `[distance]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistanceConfig {
    #[serde(default = "yes")]
    pub w1: bool,
    #[serde(default = "yes")]
    pub tv: bool,
    /// Projections for sliced W1 when `d > 1`.
    #[serde(default = "default_directions")]
    pub directions: usize,
    /// Smoothing bandwidth; the Silverman-type default is computed from the
    /// reference sample when absent.
    #[serde(default)]
    pub bandwidth: Option<f64>,
    #[serde(default = "default_resolution")]
    pub resolution: usize,
    #[serde(default = "default_bootstrap")]
    pub bootstrap: usize,
}

fn yes() -> bool {
    true
}
fn default_directions() -> usize {
    256
}
fn default_resolution() -> usize {
    512
}
fn default_bootstrap() -> usize {
    100
}

impl Default for DistanceConfig {
    fn default() -> Self {
        Self {
            w1: true,
            tv: true,
            directions: default_directions(),
            bandwidth: None,
            resolution: default_resolution(),
            bootstrap: default_bootstrap(),
        }
    }
}

/// `[window]`: which rows enter the slope fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowConfig {
    /// Drop rows whose `exp(-theta Gamma_n / 2) * diameter` exceeds this
    /// fraction of the measured distance.
    #[serde(default = "default_exp_fraction")]
    pub exp_fraction: f64,
    /// Drop rows whose bootstrap stderr exceeds this fraction of the value.
    #[serde(default = "default_max_rel_stderr")]
    pub max_rel_stderr: f64,
}

fn default_exp_fraction() -> f64 {
    0.2
}
fn default_max_rel_stderr() -> f64 {
    0.5
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            exp_fraction: default_exp_fraction(),
            max_rel_stderr: default_max_rel_stderr(),
        }
    }
}

/// `[simulate]`, used by the `simulate` subcommand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    #[serde(default = "default_kind")]
    pub scheme: SchemeKind,
    /// Defaults to `Gamma_{n_max}`.
    #[serde(default)]
    pub horizon: Option<f64>,
}

fn default_kind() -> SchemeKind {
    SchemeKind::TruncatedEuler
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            scheme: default_kind(),
            horizon: None,
        }
    }
}

/// `[malliavin]`, used by `malliavin-diag`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MalliavinConfig {
    #[serde(default = "default_t")]
    pub t: f64,
    #[serde(default = "default_diag_paths")]
    pub paths: usize,
}

fn default_t() -> f64 {
    1.0
}
fn default_diag_paths() -> usize {
    1000
}

impl Default for MalliavinConfig {
    fn default() -> Self {
        Self {
            t: default_t(),
            paths: default_diag_paths(),
        }
    }
}

/// `[audit]`, used by `steps-audit`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditConfig {
    #[serde(default = "default_rho")]
    pub rho: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_n_max")]
    pub n_max: usize,
}

fn default_rho() -> f64 {
    1.5
}
fn default_alpha() -> f64 {
    1.0
}
fn default_n_max() -> usize {
    2000
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self {
            rho: default_rho(),
            alpha: default_alpha(),
            n_max: default_n_max(),
        }
    }
}

/// A full experiment. See `docs/config.md` for the file layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    pub steps: StepSequence,
    /// Strictly increasing step indices `n` at which `X_{Gamma_n}` is compared.
    pub checkpoints: Vec<usize>,
    pub paths: usize,
    #[serde(default)]
    pub seed: u64,
    /// Defaults to the origin.
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    #[serde(default)]
    pub reference: ReferenceConfig,
    #[serde(default)]
    pub distance: DistanceConfig,
    #[serde(default)]
    pub window: WindowConfig,
    #[serde(default)]
    pub simulate: SimulateConfig,
    #[serde(default)]
    pub malliavin: MalliavinConfig,
    #[serde(default)]
    pub audit: AuditConfig,
}

impl ExperimentConfig {
    /// TOML unless the text starts with `{`.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?
        } else {
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::ConfigFile {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Self::parse(&text).map_err(|e| Error::ConfigFile {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        let preset = self.model.preset()?;
        if self.checkpoints.is_empty() {
            return Err(Error::Config("checkpoints must be non-empty".into()));
        }
        if self.checkpoints[0] == 0 || self.checkpoints.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config(
                "checkpoints must be positive and strictly increasing".into(),
            ));
        }
        if let Some(len) = self.steps.len() {
            if len < self.n_max() {
                return Err(Error::Config(format!(
                    "step list has {len} entries but the last checkpoint is {}",
                    self.n_max()
                )));
            }
        }
        self.steps.clone().validated().map_err(|e| Error::Config(e.to_string()))?;
        if self.paths == 0 {
            return Err(Error::Config("paths must be at least 1".into()));
        }
        if let Some(x0) = &self.x0 {
            if x0.len() != preset.dim() {
                return Err(Error::Config(format!(
                    "x0 has {} coordinates, model dimension is {}",
                    x0.len(),
                    preset.dim()
                )));
            }
        }
        let r = &self.reference;
        if let Some(h) = r.step {
            if !(h > 0.0 && h.is_finite()) {
                return Err(Error::Config(format!("reference step must be positive, got {h}")));
            }
        }
        if !(r.burn_in > 0.0 && r.burn_in.is_finite()) {
            return Err(Error::Config("reference burn_in must be positive".into()));
        }
        if r.paths == Some(0) {
            return Err(Error::Config("reference paths must be at least 1".into()));
        }
        let d = &self.distance;
        if let Some(h) = d.bandwidth {
            if !(h > 0.0) {
                return Err(Error::Config(format!("bandwidth must be positive, got {h}")));
            }
        }
        if d.directions == 0 || d.resolution < 8 || d.bootstrap < 2 {
            return Err(Error::Config(
                "need directions >= 1, resolution >= 8 and bootstrap >= 2".into(),
            ));
        }
        let w = &self.window;
        if !(w.exp_fraction > 0.0 && w.max_rel_stderr > 0.0) {
            return Err(Error::Config("window fractions must be positive".into()));
        }
        if !(self.malliavin.t > 0.0) || self.malliavin.paths == 0 {
            return Err(Error::Config("malliavin t and paths must be positive".into()));
        }
        Ok(())
    }

    pub fn n_max(&self) -> usize {
        *self.checkpoints.last().expect("validated")
    }

    pub fn dim(&self) -> Result<usize> {
        Ok(self.model.preset()?.dim())
    }

    pub fn x0(&self) -> Result<Vec<f64>> {
        Ok(match &self.x0 {
            Some(x) => x.clone(),
            None => vec![0.0; self.dim()?],
        })
    }

    pub fn reference_paths(&self) -> usize {
        self.reference.paths.unwrap_or(self.paths)
    }
}
