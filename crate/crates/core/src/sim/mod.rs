//! Simulation of published bivariate meta-analyses and Monte Carlo estimation
//! of rejection rates.
//!
//! Each replicate draws `N = oversample_factor * n` studies from the bivariate
//! random-effects model, applies a publication filter, and keeps a uniform
//! subsample of `n` survivors. Replicate `r` of a cell draws from ChaCha8
//! stream `r` of the cell seed, so results do not depend on scheduling.

mod experiments;
mod generate;
mod run;
mod select;

pub use experiments::{
    ks_chi_squared, power_sweep, replicate_table1, size_adjusted, write_cells_csv, write_power_csv, Budget, KsResult,
    reference_rate, PowerPoint, TABLE1_REFERENCE,
};
pub use generate::{draw_se, generate_study, generate_study_with_se};
pub use run::{run_cell, ReplicateRecord, RunOptions, SimCellResult, VariantSummary};
pub use select::{apply_selection, retention_probability, selection_snd, SndBasis, StudyScore};

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::BrmaParams;

/// Publication filter applied to the simulated pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// Every study is published.
    #[default]
    None,
    /// Whole studies are published or not, based on a study-level SND.
    CompleteMissing,
    /// Each outcome is reported independently; studies reporting nothing are lost.
    PartialMissing,
}

impl Selection {
    pub fn label(self) -> &'static str {
        match self {
            Selection::None => "none",
            Selection::CompleteMissing => "complete",
            Selection::PartialMissing => "partial",
        }
    }
}

impl fmt::Display for Selection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Selection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "none" => Ok(Selection::None),
            "complete" | "complete_missing" => Ok(Selection::CompleteMissing),
            "partial" | "partial_missing" => Ok(Selection::PartialMissing),
            other => Err(Error::InvalidParams(format!(
                "unknown selection mode '{other}' (expected none, complete or partial)"
            ))),
        }
    }
}

/// One simulation cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimScenario {
    /// Published studies per meta-analysis.
    pub n_published: usize,
    /// Common between-study variance of both outcomes.
    pub tau2: f64,
    pub rho_w: f64,
    pub rho_b: f64,
    pub beta: [f64; 2],
    pub selection: Selection,
    pub study_score: StudyScore,
    pub snd_basis: SndBasis,
    pub replicates: usize,
    pub seed: u64,
    pub oversample_factor: usize,
}

impl Default for SimScenario {
    fn default() -> Self {
        Self {
            n_published: 50,
            tau2: 0.5,
            rho_w: 0.0,
            rho_b: 0.0,
            beta: [0.0, 0.0],
            selection: Selection::None,
            study_score: StudyScore::default(),
            snd_basis: SndBasis::default(),
            replicates: 1000,
            seed: 1,
            oversample_factor: 3,
        }
    }
}

/// Standard grid values; settings off this grid are reported as extensions.
pub const TAU2_GRID: [f64; 4] = [0.5, 1.1, 1.5, 1.9];
pub const N_GRID: [usize; 3] = [50, 75, 100];
pub const RHO_GRID: [f64; 3] = [-0.5, 0.0, 0.5];

impl SimScenario {
    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::InvalidParams("replicates must be at least 1".into()));
        }
        if self.n_published < 3 {
            return Err(Error::InvalidParams("n_published must be at least 3".into()));
        }
        if self.oversample_factor == 0 {
            return Err(Error::InvalidParams("oversample_factor must be at least 1".into()));
        }
        if self.selection != Selection::None && self.oversample_factor < 2 {
            return Err(Error::InvalidParams(
                "selection needs an oversampled pool (oversample_factor >= 2)".into(),
            ));
        }
        if !(self.rho_w.abs() < 1.0) {
            return Err(Error::InvalidParams("rho_w must lie in (-1, 1)".into()));
        }
        self.params().map(|_| ())
    }

    pub fn params(&self) -> Result<BrmaParams> {
        BrmaParams::new(self.beta, [self.tau2, self.tau2], self.rho_b)
    }

    /// Settings outside the reference grid, for reporting.
    pub fn extensions(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !TAU2_GRID.contains(&self.tau2) {
            out.push(format!("tau2={}", self.tau2));
        }
        if !N_GRID.contains(&self.n_published) {
            out.push(format!("n={}", self.n_published));
        }
        if !RHO_GRID.contains(&self.rho_w) {
            out.push(format!("rho_w={}", self.rho_w));
        }
        if !RHO_GRID.contains(&self.rho_b) {
            out.push(format!("rho_b={}", self.rho_b));
        }
        if self.oversample_factor != 3 {
            out.push(format!("oversample_factor={}", self.oversample_factor));
        }
        out
    }

    pub fn pool_size(&self) -> usize {
        self.oversample_factor * self.n_published
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenario_validation() {
        assert!(SimScenario::default().validate().is_ok());
        assert!(SimScenario { replicates: 0, ..Default::default() }.validate().is_err());
        assert!(SimScenario { tau2: -1.0, ..Default::default() }.validate().is_err());
        assert!(SimScenario { rho_b: 1.5, ..Default::default() }.validate().is_err());
        let s = SimScenario {
            selection: Selection::CompleteMissing,
            oversample_factor: 1,
            ..Default::default()
        };
        assert!(s.validate().is_err());
    }

    #[test]
    fn extensions_are_flagged() {
        assert!(SimScenario::default().extensions().is_empty());
        let s = SimScenario { n_published: 10, ..Default::default() };
        assert_eq!(s.extensions(), vec!["n=10".to_string()]);
    }

    #[test]
    fn selection_parses() {
        assert_eq!("partial".parse::<Selection>().unwrap(), Selection::PartialMissing);
        assert_eq!("complete_missing".parse::<Selection>().unwrap(), Selection::CompleteMissing);
        assert!("some".parse::<Selection>().is_err());
    }
}
