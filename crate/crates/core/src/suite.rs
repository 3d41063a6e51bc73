//! Named test variants and a runner that evaluates any selection of them on a
//! bivariate dataset.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bias::{
    begg_test, bonferroni_combine, combine_logdor, egger_test_with, trim_fill_with, variant_name, EggerOptions,
    Method, Scope, TestResult, TrimFillOptions, UniSeries,
};
use crate::error::{Error, Result};
use crate::model::{MetaDataset, OUTCOMES};
use crate::rst::{rst_test, RstOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TestVariant {
    pub method: Method,
    pub scope: Scope,
}

impl TestVariant {
    pub const fn new(method: Method, scope: Scope) -> Self {
        Self { method, scope }
    }

    /// The thirteen variants in reporting order: per outcome, combined and
    /// Bonferroni for Egger, Begg and trim-and-fill, then the joint score test.
    pub fn all() -> Vec<TestVariant> {
        let mut v = Vec::with_capacity(13);
        for method in [Method::Egger, Method::Begg, Method::TrimFill] {
            for scope in [Scope::Outcome(0), Scope::Outcome(1), Scope::Combined, Scope::Bonferroni] {
                v.push(TestVariant::new(method, scope));
            }
        }
        v.push(TestVariant::new(Method::Rst, Scope::Joint));
        v
    }

    pub fn name(&self) -> String {
        variant_name(self.method, self.scope)
    }
}

impl fmt::Display for TestVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for TestVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        if t.eq_ignore_ascii_case("rst") {
            return Ok(TestVariant::new(Method::Rst, Scope::Joint));
        }
        let (head, scope) = if let Some(h) = t.strip_suffix("(C)").or_else(|| t.strip_suffix("(c)")) {
            (h, Scope::Combined)
        } else if let Some(h) = t.strip_suffix("(B)").or_else(|| t.strip_suffix("(b)")) {
            (h, Scope::Bonferroni)
        } else if let Some(h) = t.strip_suffix('1') {
            (h, Scope::Outcome(0))
        } else if let Some(h) = t.strip_suffix('2') {
            (h, Scope::Outcome(1))
        } else {
            return Err(Error::InvalidParams(format!("unknown test variant '{s}'")));
        };
        let method = match head.to_ascii_lowercase().as_str() {
            "egger" => Method::Egger,
            "begg" => Method::Begg,
            "tf" | "trimfill" => Method::TrimFill,
            _ => return Err(Error::InvalidParams(format!("unknown test variant '{s}'"))),
        };
        Ok(TestVariant::new(method, scope))
    }
}

#[derive(Debug, Clone, Default)]
pub struct SuiteOptions {
    pub egger: EggerOptions,
    pub trimfill: TrimFillOptions,
    pub rst: RstOptions,
}

fn univariate(method: Method, series: &UniSeries, opts: &SuiteOptions) -> Result<TestResult> {
    match method {
        Method::Egger => egger_test_with(series, &opts.egger),
        Method::Begg => begg_test(series),
        Method::TrimFill => trim_fill_with(series, &opts.trimfill),
        Method::Rst => Err(Error::InvalidParams("the score test is not a univariate method".into())),
    }
}

fn on_outcome(data: &MetaDataset, method: Method, j: usize, opts: &SuiteOptions) -> Result<TestResult> {
    let series = UniSeries::from_outcome(data, j)?;
    Ok(univariate(method, &series, opts)?
        .with_scope(Scope::Outcome(j))
        .with_excluded(data.len() - series.len()))
}

/// Runs one variant.
pub fn run_variant(data: &MetaDataset, variant: TestVariant, opts: &SuiteOptions) -> Result<TestResult> {
    match (variant.method, variant.scope) {
        (Method::Rst, Scope::Joint) => Ok(rst_test(data, &opts.rst)?.to_test_result()),
        (Method::Rst, _) | (_, Scope::Joint) => Err(Error::InvalidParams(format!(
            "variant {} is not available",
            variant.name()
        ))),
        (m, Scope::Outcome(j)) if j < OUTCOMES => on_outcome(data, m, j, opts),
        (_, Scope::Outcome(j)) => Err(Error::InvalidParams(format!("outcome index {j} out of range"))),
        (m, Scope::Combined) => {
            let c = combine_logdor(data)?;
            Ok(univariate(m, &c.series, opts)?
                .with_scope(Scope::Combined)
                .with_excluded(c.dropped_partial))
        }
        (m, Scope::Bonferroni) => bonferroni_combine(&on_outcome(data, m, 0, opts)?, &on_outcome(data, m, 1, opts)?),
    }
}

/// Runs each variant independently; a failure in one does not affect the others.
pub fn run_suite(data: &MetaDataset, variants: &[TestVariant], opts: &SuiteOptions) -> Vec<Result<TestResult>> {
    variants.iter().map(|&v| run_variant(data, v, opts)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Study;

    #[test]
    fn names_round_trip() {
        let all = TestVariant::all();
        assert_eq!(all.len(), 13);
        for v in &all {
            assert_eq!(&v.name().parse::<TestVariant>().unwrap(), v);
        }
        assert_eq!(all[2].name(), "Egger(C)");
        assert_eq!(all[11].name(), "TF(B)");
        assert_eq!(all[12].name(), "RST");
        assert!("Wald".parse::<TestVariant>().is_err());
    }

    #[test]
    fn partial_outcome_two_blocks_combined_but_not_outcome_one() {
        let studies = (0..6)
            .map(|i| Study::partial(format!("s{i}"), 0, 0.1 * i as f64, 0.1 + 0.05 * i as f64).unwrap())
            .collect();
        let data = MetaDataset::from_studies(studies).unwrap();
        let out = run_suite(
            &data,
            &[
                TestVariant::new(Method::Egger, Scope::Outcome(0)),
                TestVariant::new(Method::Egger, Scope::Combined),
                TestVariant::new(Method::Egger, Scope::Outcome(1)),
            ],
            &SuiteOptions::default(),
        );
        assert!(out[0].is_ok());
        assert!(matches!(out[1], Err(Error::InsufficientData(_))));
        assert!(out[2].is_err());
    }
}
