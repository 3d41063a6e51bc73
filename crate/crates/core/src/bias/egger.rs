//! Egger's regression test: regress the standardized deviate `y / sd` on the
//! precision `1 / sd` and test the intercept.
//!
//! By default `sd = sqrt(se^2 + tau^2)` is the total standard deviation with
//! `tau^2` estimated by univariate REML, which keeps the residual variance
//! constant across precisions under a random-effects model. `sd = se` gives the
//! classical fixed-effect form.

use statrs::distribution::{ContinuousCDF, StudentsT};

use super::{dersimonian_laird, Detail, Method, NullDistribution, Scope, TestResult, UniSeries};
use crate::error::{Error, Result};
use crate::reml::{reml_tau2, FitOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EggerWeighting {
    /// Ordinary least squares, the classical form.
    #[default]
    Unweighted,
    /// Weighted least squares with weights `1 / sd^2`.
    InverseVariance,
}

/// Scale used to standardize effects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Standardization {
    /// `sqrt(se^2 + tau^2)`, `tau^2` by univariate REML.
    #[default]
    Total,
    /// `se` only.
    Within,
}

/// Estimator of `tau^2` for [`Standardization::Total`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Tau2Estimator {
    #[default]
    Reml,
    DerSimonianLaird,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EggerOptions {
    pub weighting: EggerWeighting,
    pub standardization: Standardization,
    pub tau2_estimator: Tau2Estimator,
}

pub fn egger_test(series: &UniSeries) -> Result<TestResult> {
    egger_test_with(series, &EggerOptions::default())
}

pub fn egger_test_with(series: &UniSeries, opts: &EggerOptions) -> Result<TestResult> {
    let m = series.len();
    let tau2 = match opts.standardization {
        Standardization::Within => 0.0,
        Standardization::Total => {
            let v: Vec<f64> = series.variances().collect();
            match opts.tau2_estimator {
                Tau2Estimator::Reml => reml_tau2(series.y(), &v, &FitOptions::default())?,
                Tau2Estimator::DerSimonianLaird => dersimonian_laird(series.y(), &v).1,
            }
        }
    };
    let rows: Vec<(f64, f64, f64)> = series
        .y()
        .iter()
        .zip(series.se())
        .map(|(&y, &se)| {
            let sd = (se * se + tau2).sqrt();
            let w = match opts.weighting {
                EggerWeighting::Unweighted => 1.0,
                EggerWeighting::InverseVariance => 1.0 / (sd * sd),
            };
            (y / sd, 1.0 / sd, w)
        })
        .collect();

    let (mut sw, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(snd, p, w) in &rows {
        sw += w;
        sx += w * p;
        sy += w * snd;
        sxx += w * p * p;
        sxy += w * p * snd;
    }
    // Centered sum of squares avoids cancellation in sw*sxx - sx^2.
    let pbar = sx / sw;
    let sxx_c: f64 = rows.iter().map(|&(_, p, w)| w * (p - pbar).powi(2)).sum();
    if !(sxx_c > 1e-12 * sxx.max(f64::MIN_POSITIVE)) {
        return Err(Error::DegenerateDesign(
            "all studies have the same precision; the Egger intercept is not identified".into(),
        ));
    }
    let ybar = sy / sw;
    let sxy_c = sxy - sw * pbar * ybar;
    let slope = sxy_c / sxx_c;
    let intercept = ybar - slope * pbar;

    let rss: f64 = rows
        .iter()
        .map(|&(snd, p, w)| w * (snd - intercept - slope * p).powi(2))
        .sum();
    let df = (m - 2) as f64;
    let sigma2 = rss / df;
    let var_intercept = sigma2 * (1.0 / sw + pbar * pbar / sxx_c);
    let se_intercept = var_intercept.sqrt();

    let scale = (rows.iter().map(|&(snd, _, w)| w * snd * snd).sum::<f64>() / sw).sqrt();
    let (t, p_value) = if se_intercept <= 1e-12 * scale.max(f64::MIN_POSITIVE) {
        // Exact fit: the intercept is either zero or infinitely significant.
        if intercept.abs() <= 1e-10 * scale.max(1.0) {
            (0.0, 1.0)
        } else {
            (intercept.signum() * f64::INFINITY, 0.0)
        }
    } else {
        let t = intercept / se_intercept;
        let dist = StudentsT::new(0.0, 1.0, df).expect("df >= 1");
        (t, (2.0 * dist.sf(t.abs())).clamp(0.0, 1.0))
    };

    Ok(TestResult {
        method: Method::Egger,
        scope: Scope::Outcome(0),
        statistic: t,
        null_distribution: NullDistribution::StudentT { df },
        p_value,
        n_studies: m,
        excluded_partial: 0,
        detail: Detail::Egger {
            intercept,
            slope,
            se_intercept,
            tau2,
            weighted: opts.weighting == EggerWeighting::InverseVariance,
        },
    })
}
