//! Scenario configuration: one JSON document per run.

use std::path::{Path, PathBuf};

use obukhov_core::integrator::{GalerkinMode, IntegratorConfig};
use obukhov_core::ladder::{LadderParams, ValidationMode};
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    Figure2,
    InviscidBlowup,
    ViscousBlowup,
    LemmaVerify,
    Roundtrip,
    GalerkinStudy,
    VariantCompare,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::Figure2 => "figure2",
            Scenario::InviscidBlowup => "inviscid-blowup",
            Scenario::ViscousBlowup => "viscous-blowup",
            Scenario::LemmaVerify => "lemma-verify",
            Scenario::Roundtrip => "roundtrip",
            Scenario::GalerkinStudy => "galerkin-study",
            Scenario::VariantCompare => "variant-compare",
        }
    }

    /// Ladder used when the configuration does not give one.
    pub fn default_ladder(self) -> LadderParams {
        match self {
            Scenario::Figure2 | Scenario::ViscousBlowup => LadderParams::figure2(12),
            Scenario::InviscidBlowup => LadderParams::figure2(12).with_nu(0.0),
            Scenario::LemmaVerify => LadderParams::strict_viscous(6),
            Scenario::Roundtrip => LadderParams::figure2(10),
            Scenario::GalerkinStudy => LadderParams::strict_viscous(12),
            Scenario::VariantCompare => LadderParams::figure2(8).with_nu(0.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

/// Settings for the comparison models in `variant-compare`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VariantSettings {
    /// Ratio of the geometric ladders `lambda^k`.
    pub lambda: f64,
    pub k_max: usize,
    pub t_end: f64,
    /// Amplitude a comparison-model mode must reach to count as arrived.
    pub arrival_level: f64,
    /// Fraction of `A_k` a super-exponential mode must reach to count as arrived.
    pub arrival_fraction: f64,
}

impl Default for VariantSettings {
    fn default() -> Self {
        Self {
            lambda: 2.0,
            k_max: 8,
            t_end: 1.0,
            arrival_level: 1e-4,
            arrival_fraction: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ladder: Option<LadderParams>,
    #[serde(default)]
    pub integrator: IntegratorConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default = "yes")]
    pub plots: bool,
    #[serde(default = "default_sigmas")]
    pub sigmas: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation: Option<ValidationMode>,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<GalerkinMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshot_times: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_list: Option<Vec<usize>>,
    #[serde(default = "default_formats")]
    pub formats: Vec<Format>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_points: Option<usize>,
    /// Run backward masked integrations even when the amplification budget refuses.
    #[serde(default)]
    pub force: bool,
    #[serde(default = "default_conjugacy_k")]
    pub conjugacy_k: usize,
    #[serde(default)]
    pub variant: VariantSettings,
}

fn yes() -> bool {
    true
}

fn default_sigmas() -> Vec<f64> {
    vec![0.2, 2.0]
}

fn default_epsilon() -> f64 {
    0.01
}

fn default_formats() -> Vec<Format> {
    vec![Format::Csv, Format::Json]
}

fn default_conjugacy_k() -> usize {
    8
}

impl ScenarioConfig {
    pub fn new(scenario: Scenario) -> Self {
        Self {
            scenario,
            ladder: None,
            integrator: IntegratorConfig::default(),
            output_dir: None,
            plots: true,
            sigmas: default_sigmas(),
            validation: None,
            epsilon: default_epsilon(),
            mode: None,
            snapshot_times: None,
            k_list: None,
            formats: default_formats(),
            grid_points: None,
            force: false,
            conjugacy_k: default_conjugacy_k(),
            variant: VariantSettings::default(),
        }
    }

    pub fn with_ladder(mut self, ladder: LadderParams) -> Self {
        self.ladder = Some(ladder);
        self
    }

    /// Parses a configuration, reporting the position of the first problem.
    pub fn from_json(text: &str, path: &Path) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| LabError::ConfigParse {
            path: path.to_path_buf(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
        Self::from_json(&text, path)
    }

    pub fn validate(&self) -> Result<()> {
        self.integrator.validate()?;
        if self.sigmas.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(LabError::Config("sigmas must be finite and nonnegative".into()));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(LabError::Config("epsilon must be positive".into()));
        }
        if self.formats.is_empty() {
            return Err(LabError::Config("at least one trajectory format is required".into()));
        }
        if let Some(times) = &self.snapshot_times {
            if times.is_empty() || times.iter().any(|t| !t.is_finite() || *t > 0.0) {
                return Err(LabError::Config(
                    "snapshot times must be a nonempty list of finite times <= 0".into(),
                ));
            }
        }
        if let Some(ks) = &self.k_list {
            if ks.is_empty() {
                return Err(LabError::Config("k_list must not be empty".into()));
            }
        }
        if matches!(self.grid_points, Some(n) if n < 16) {
            return Err(LabError::Config("grid_points must be at least 16".into()));
        }
        let v = &self.variant;
        if !(v.lambda > 1.0 && v.lambda.is_finite()) {
            return Err(LabError::Config("variant.lambda must exceed 1".into()));
        }
        if !(v.t_end > 0.0 && v.t_end.is_finite()) {
            return Err(LabError::Config("variant.t_end must be positive".into()));
        }
        if !(v.arrival_level > 0.0 && v.arrival_fraction > 0.0 && v.arrival_fraction <= 1.0) {
            return Err(LabError::Config(
                "variant arrival level must be positive and the fraction in (0, 1]".into(),
            ));
        }
        if self.conjugacy_k == 0 {
            return Err(LabError::Config("conjugacy_k must be at least 1".into()));
        }
        Ok(())
    }

    pub fn ladder_params(&self) -> LadderParams {
        self.ladder.unwrap_or_else(|| self.scenario.default_ladder())
    }

    /// Explicit mode, else inviscid exactly when the ladder has no viscosity.
    pub fn galerkin_mode(&self, params: &LadderParams) -> GalerkinMode {
        self.mode.unwrap_or(if params.nu == 0.0 {
            GalerkinMode::Inviscid
        } else {
            GalerkinMode::ViscousMasked
        })
    }

    pub fn validation_mode(&self, params: &LadderParams) -> ValidationMode {
        self.validation.unwrap_or(if params.nu == 0.0 {
            ValidationMode::StrictInviscid
        } else {
            ValidationMode::StrictViscous
        })
    }
}
