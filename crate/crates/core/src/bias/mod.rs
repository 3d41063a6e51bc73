//! Univariate funnel-asymmetry tests and the adapters that apply them to
//! bivariate data (combined measure, Bonferroni).

mod begg;
mod combine;
mod egger;
mod trimfill;

pub use begg::begg_test;
pub use combine::{bonferroni_combine, combine_logdor, CombinedSeries};
pub use egger::{egger_test, egger_test_with, EggerOptions, EggerWeighting, Standardization, Tau2Estimator};
pub use trimfill::{trim_fill, trim_fill_with, Estimator, Side, TrimFillDetail, TrimFillOptions};

use serde::{Deserialize, Serialize};
use std::fmt;

use crate::error::{Error, Result};
use crate::model::MetaDataset;

/// Effect sizes and their standard errors for one outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct UniSeries {
    y: Vec<f64>,
    se: Vec<f64>,
}

impl UniSeries {
    pub fn new(y: Vec<f64>, se: Vec<f64>) -> Result<Self> {
        if y.len() != se.len() {
            return Err(Error::InvalidDataset(format!(
                "{} effects but {} standard errors",
                y.len(),
                se.len()
            )));
        }
        if y.len() < 3 {
            return Err(Error::InsufficientData(format!(
                "univariate tests need at least 3 studies, got {}",
                y.len()
            )));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidDataset("non-finite effect size".into()));
        }
        if se.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::InvalidDataset("standard errors must be positive".into()));
        }
        Ok(Self { y, se })
    }

    /// Studies reporting outcome `j`, in dataset order.
    pub fn from_outcome(data: &MetaDataset, j: usize) -> Result<Self> {
        let (y, se) = data
            .studies()
            .iter()
            .filter_map(|s| s.outcome(j).map(|o| (o.y, o.se)))
            .unzip();
        Self::new(y, se)
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn se(&self) -> &[f64] {
        &self.se
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn variances(&self) -> impl Iterator<Item = f64> + '_ {
        self.se.iter().map(|s| s * s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    Egger,
    Begg,
    TrimFill,
    Rst,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::Egger => "Egger",
            Method::Begg => "Begg",
            Method::TrimFill => "TF",
            Method::Rst => "RST",
        }
    }
}

/// What a result was computed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scope {
    /// A single outcome (0-based).
    Outcome(usize),
    /// The combined univariate measure (log DOR).
    Combined,
    /// Bonferroni adjustment over the two per-outcome results.
    Bonferroni,
    /// Joint test over both outcomes.
    Joint,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum NullDistribution {
    StudentT { df: f64 },
    StandardNormal,
    ChiSquared { df: f64 },
    /// Geometric null of the R0 trim-and-fill estimator, `P(R0 >= k) = 2^-(k+1)`.
    RankRunLength,
    /// `min(1, 2 min(p1, p2))`.
    Bonferroni,
}

impl fmt::Display for NullDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NullDistribution::StudentT { df } => write!(f, "t({df})"),
            NullDistribution::StandardNormal => write!(f, "N(0,1)"),
            NullDistribution::ChiSquared { df } => write!(f, "chi2({df})"),
            NullDistribution::RankRunLength => write!(f, "R0-null"),
            NullDistribution::Bonferroni => write!(f, "bonferroni"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Detail {
    Egger {
        intercept: f64,
        slope: f64,
        se_intercept: f64,
        /// Between-study variance added to the within-study variances.
        tau2: f64,
        weighted: bool,
    },
    Begg {
        tau: f64,
        z: f64,
        concordant: usize,
        discordant: usize,
    },
    TrimFill(TrimFillDetail),
    Bonferroni {
        p_values: [f64; 2],
        statistics: [f64; 2],
    },
    Rst {
        score: Vec<f64>,
        b_profiled: Vec<f64>,
    },
}

/// Outcome of a publication-bias test.
#[derive(Debug, Clone, PartialEq)]
pub struct TestResult {
    pub method: Method,
    pub scope: Scope,
    pub statistic: f64,
    pub null_distribution: NullDistribution,
    pub p_value: f64,
    /// Studies entering the computation.
    pub n_studies: usize,
    /// Partially reported studies left out (combined-measure tests).
    pub excluded_partial: usize,
    pub detail: Detail,
}

impl TestResult {
    pub fn with_scope(mut self, scope: Scope) -> Self {
        self.scope = scope;
        self
    }

    pub fn with_excluded(mut self, excluded: usize) -> Self {
        self.excluded_partial = excluded;
        self
    }

    /// Display name such as `Egger1`, `Begg(C)`, `TF(B)` or `RST`.
    pub fn name(&self) -> String {
        variant_name(self.method, self.scope)
    }
}

pub fn variant_name(method: Method, scope: Scope) -> String {
    match scope {
        Scope::Outcome(j) => format!("{}{}", method.label(), j + 1),
        Scope::Combined => format!("{}(C)", method.label()),
        Scope::Bonferroni => format!("{}(B)", method.label()),
        Scope::Joint => method.label().to_string(),
    }
}

/// DerSimonian-Laird random-effects pooling: `(estimate, tau^2)`.
pub(crate) fn dersimonian_laird(y: &[f64], v: &[f64]) -> (f64, f64) {
    let w: Vec<f64> = v.iter().map(|v| 1.0 / v).collect();
    let sw: f64 = w.iter().sum();
    let fixed = y.iter().zip(&w).map(|(y, w)| y * w).sum::<f64>() / sw;
    if y.len() < 2 {
        return (fixed, 0.0);
    }
    let q: f64 = y.iter().zip(&w).map(|(y, w)| w * (y - fixed).powi(2)).sum();
    let sw2: f64 = w.iter().map(|w| w * w).sum();
    let tau2 = ((q - (y.len() as f64 - 1.0)) / (sw - sw2 / sw)).max(0.0);
    let ws: Vec<f64> = v.iter().map(|v| 1.0 / (v + tau2)).collect();
    let est = y.iter().zip(&ws).map(|(y, w)| y * w).sum::<f64>() / ws.iter().sum::<f64>();
    (est, tau2)
}

pub(crate) fn standard_normal_sf(z: f64) -> f64 {
    use statrs::distribution::{ContinuousCDF, Normal};
    Normal::standard().sf(z)
}
