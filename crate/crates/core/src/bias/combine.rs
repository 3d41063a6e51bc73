use super::{Detail, NullDistribution, Scope, TestResult, UniSeries};
use crate::error::{Error, Result};
use crate::model::MetaDataset;

/// Combined univariate series and the number of partial studies left out.
#[derive(Debug, Clone, PartialEq)]
pub struct CombinedSeries {
    pub series: UniSeries,
    pub dropped_partial: usize,
}

/// Log diagnostic odds ratio from logit sensitivity and logit specificity:
/// `y = y1 + y2`, `se = sqrt(s1^2 + s2^2 + 2 s1 s2 rho_w)`.
///
/// Only studies reporting both outcomes contribute.
pub fn combine_logdor(data: &MetaDataset) -> Result<CombinedSeries> {
    let mut y = Vec::new();
    let mut se = Vec::new();
    let mut dropped = 0;
    for s in data.studies() {
        match (s.outcome(0), s.outcome(1)) {
            (Some(a), Some(b)) => {
                let rho = s.rho_w().ok_or_else(|| Error::CovarianceUnavailable {
                    id: s.id().to_string(),
                })?;
                y.push(a.y + b.y);
                se.push((a.se * a.se + b.se * b.se + 2.0 * a.se * b.se * rho).sqrt());
            }
            _ => dropped += 1,
        }
    }
    if y.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "the combined measure needs at least 3 studies reporting both outcomes, found {} ({} partial studies dropped)",
            y.len(),
            dropped
        )));
    }
    Ok(CombinedSeries {
        series: UniSeries::new(y, se)?,
        dropped_partial: dropped,
    })
}

/// Bonferroni adjustment of one method's results on outcome 1 and outcome 2.
pub fn bonferroni_combine(r1: &TestResult, r2: &TestResult) -> Result<TestResult> {
    if r1.method != r2.method {
        return Err(Error::InvalidParams(format!(
            "cannot combine {:?} with {:?}",
            r1.method, r2.method
        )));
    }
    let p = (2.0 * r1.p_value.min(r2.p_value)).min(1.0);
    let statistic = if r2.statistic.abs() > r1.statistic.abs() {
        r2.statistic
    } else {
        r1.statistic
    };
    Ok(TestResult {
        method: r1.method,
        scope: Scope::Bonferroni,
        statistic,
        null_distribution: NullDistribution::Bonferroni,
        p_value: p,
        n_studies: r1.n_studies.max(r2.n_studies),
        excluded_partial: 0,
        detail: Detail::Bonferroni {
            p_values: [r1.p_value, r2.p_value],
            statistics: [r1.statistic, r2.statistic],
        },
    })
}
