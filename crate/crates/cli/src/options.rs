//! Method-tuning flags shared by the subcommands.

use clap::{Args, ValueEnum};
use mvpb::bias::{EggerOptions, EggerWeighting, Estimator, Side, Standardization, TrimFillOptions};
use mvpb::{Normalization, Objective, RstOptions, SuiteOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TfEstimator {
    L0,
    R0,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TfSide {
    Auto,
    Left,
    Right,
    Larger,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EggerSe {
    /// sqrt(se^2 + tau^2)
    Total,
    /// se only (classical)
    Within,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EggerWeights {
    Unweighted,
    InverseVariance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RstNorm {
    Average,
    Total,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RstObjective {
    Correlated,
    Independent,
}

#[derive(Debug, Clone, Args)]
pub struct MethodArgs {
    /// Trim-and-fill estimator [default: l0 for `test`, r0 for simulations]
    #[arg(long, value_enum)]
    pub tf_estimator: Option<TfEstimator>,
    #[arg(long, value_enum, default_value = "auto")]
    pub tf_side: TfSide,
    /// Scale used to standardize effects in the Egger regression
    #[arg(long, value_enum, default_value = "total")]
    pub egger_se: EggerSe,
    #[arg(long, value_enum, default_value = "unweighted")]
    pub egger_weighting: EggerWeights,
    /// Information scaling of the score statistic
    #[arg(long, value_enum, default_value = "average")]
    pub rst_normalization: RstNorm,
    #[arg(long, value_enum, default_value = "correlated")]
    pub rst_objective: RstObjective,
}

impl Default for MethodArgs {
    fn default() -> Self {
        Self {
            tf_estimator: None,
            tf_side: TfSide::Auto,
            egger_se: EggerSe::Total,
            egger_weighting: EggerWeights::Unweighted,
            rst_normalization: RstNorm::Average,
            rst_objective: RstObjective::Correlated,
        }
    }
}

impl MethodArgs {
    pub fn suite(&self, default_estimator: Estimator) -> SuiteOptions {
        let estimator = match self.tf_estimator {
            Some(TfEstimator::L0) => Estimator::L0,
            Some(TfEstimator::R0) => Estimator::R0,
            None => default_estimator,
        };
        let side = match self.tf_side {
            TfSide::Auto => Side::Auto,
            TfSide::Left => Side::Left,
            TfSide::Right => Side::Right,
            TfSide::Larger => Side::Larger,
        };
        SuiteOptions {
            egger: EggerOptions {
                weighting: match self.egger_weighting {
                    EggerWeights::Unweighted => EggerWeighting::Unweighted,
                    EggerWeights::InverseVariance => EggerWeighting::InverseVariance,
                },
                standardization: match self.egger_se {
                    EggerSe::Total => Standardization::Total,
                    EggerSe::Within => Standardization::Within,
                },
                ..Default::default()
            },
            trimfill: TrimFillOptions {
                estimator,
                side,
                ..Default::default()
            },
            rst: RstOptions {
                objective: match self.rst_objective {
                    RstObjective::Correlated => Objective::Correlated,
                    RstObjective::Independent => Objective::Independent,
                },
                normalization: match self.rst_normalization {
                    RstNorm::Average => Normalization::Average,
                    RstNorm::Total => Normalization::Total,
                },
                ..Default::default()
            },
        }
    }
}
