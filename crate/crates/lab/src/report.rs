//! The report written next to every run's artifacts.

use std::collections::BTreeMap;
use std::path::PathBuf;

use obukhov_core::barriers::{BoundReport, BoundaryChecks, Escape, MembershipLog};
use obukhov_core::diagnostics::{BlowupOutcome, GalerkinReport, RegularityReport};
use obukhov_core::integrator::{GalerkinMode, StepStats};
use obukhov_core::ladder::{ConstraintReport, LadderParams};
use serde::{Deserialize, Serialize};

use crate::config::{Scenario, ScenarioConfig};

/// One pass/fail verdict. Only gated checks decide `--check`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub gated: bool,
    pub detail: String,
}

impl Check {
    pub fn gated(name: &str, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            gated: true,
            detail: detail.into(),
        }
    }

    pub fn info(name: &str, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            gated: false,
            detail: detail.into(),
        }
    }

    pub fn line(&self) -> String {
        let tag = match (self.gated, self.passed) {
            (true, true) => "PASS",
            (true, false) => "FAIL",
            (false, true) => "info ok",
            (false, false) => "info no",
        };
        format!("{tag:<8} {}: {}", self.name, self.detail)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: PathBuf,
    pub kind: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MembershipSummary {
    pub label: String,
    pub escaped: bool,
    pub first_escape: Option<Escape>,
    pub min_relative_margin: f64,
    pub worst_per_mode: Vec<f64>,
    pub boundary: BoundaryChecks,
}

impl MembershipSummary {
    pub fn new(label: impl Into<String>, log: &MembershipLog) -> Self {
        Self {
            label: label.into(),
            escaped: log.escaped(),
            first_escape: log.first_escape,
            min_relative_margin: log.min_relative_margin(),
            worst_per_mode: log.worst.clone(),
            boundary: log.boundary,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    pub t: f64,
    /// `Y_k(t)` for every mode.
    pub y: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Figure2Results {
    pub mode: GalerkinMode,
    pub snapshot_times: Vec<f64>,
    pub default_snapshots: bool,
    pub frequencies: Vec<f64>,
    pub profiles: Vec<Profile>,
    /// `C^s` norm of the terminal profile truncated at `K' = 0..=K`.
    pub terminal_norm_by_truncation: Vec<f64>,
    pub stats: StepStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormSample {
    pub t: f64,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlowupRun {
    pub k_max: usize,
    pub t_end: f64,
    pub reached: f64,
    pub failure: Option<String>,
    pub terminal_norm: f64,
    pub blowup: BlowupOutcome,
    pub norms: Vec<NormSample>,
    pub max_rel_drift: f64,
    pub max_rel_residual: f64,
    pub stats: StepStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForceTable {
    /// `sup_t N_k^2 |f_k|` for every mode.
    pub weighted_sup: Vec<f64>,
    pub regularity: RegularityReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlowupResults {
    pub viscous: bool,
    pub sigmas: Vec<f64>,
    pub runs: Vec<BlowupRun>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub force: Option<ForceTable>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaResults {
    pub top_closed_form_max_rel_error: f64,
    pub barrier_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundtripResults {
    pub mode: GalerkinMode,
    pub terminal_error: Vec<f64>,
    pub max_terminal_error: f64,
    pub backward_stats: StepStats,
    pub forward_stats: StepStats,
    /// Energy drift (inviscid) or balance residual (masked) of the backward run.
    pub backward_energy_defect: f64,
    pub conjugacy_k: usize,
    /// Largest relative difference at `-T` of the energy-form and sup-form runs from the rescaled run.
    pub conjugacy_l2: f64,
    pub conjugacy_linf: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantRun {
    pub name: String,
    pub arrival: Vec<Option<f64>>,
    pub peaks: Vec<f64>,
    pub stats: StepStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantResults {
    pub katz_pavlovic: VariantRun,
    pub geometric_obukhov: VariantRun,
    pub geometric_max_change: f64,
    pub super_exponential: VariantRun,
    /// Modes of the super-exponential run that start below the arrival fraction.
    pub late_modes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ScenarioResults {
    Figure2(Figure2Results),
    Blowup(BlowupResults),
    Lemma(LemmaResults),
    Roundtrip(RoundtripResults),
    Galerkin(GalerkinReport),
    Variants(VariantResults),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: Scenario,
    pub config: ScenarioConfig,
    pub ladder: LadderParams,
    pub ladder_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constraints: Option<ConstraintReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<BoundReport>,
    #[serde(default)]
    pub membership: Vec<MembershipSummary>,
    pub results: ScenarioResults,
    pub checks: Vec<Check>,
    pub files: Vec<FileEntry>,
    /// Seconds per stage.
    pub timings: BTreeMap<String, f64>,
    pub notes: Vec<String>,
}

impl RunReport {
    pub fn gated_failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| c.gated && !c.passed)
    }

    pub fn passed(&self) -> bool {
        self.gated_failures().next().is_none()
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn check_lines_mark_gating() {
        assert!(Check::gated("a", true, "x").line().starts_with("PASS"));
        assert!(Check::gated("a", false, "x").line().starts_with("FAIL"));
        assert!(Check::info("a", false, "x").line().starts_with("info no"));
    }
}
