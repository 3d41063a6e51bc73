//! Duval and Tweedie's trim-and-fill with the L0 and R0 estimators.
//!
//! Internally the missing studies are always assumed to lie on the left;
//! the right side is handled by negating the effects. Each round pools the
//! studies that survive trimming of the `k0` largest effects
//! (DerSimonian-Laird), ranks the absolute centered effects of all studies
//! and re-estimates `k0`, until `k0` repeats.

use super::{dersimonian_laird, standard_normal_sf, Detail, Method, NullDistribution, Scope, TestResult, UniSeries};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Estimator {
    #[default]
    L0,
    R0,
}

/// Side of the funnel on which studies are presumed missing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Side {
    Left,
    Right,
    /// Side indicated by the sign of the slope in a random-effects regression
    /// of the effects on their standard errors: a nonnegative slope means small
    /// effects are missing among imprecise studies (left).
    #[default]
    Auto,
    /// Run both sides and keep the one with the larger estimated `k0`.
    Larger,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrimFillOptions {
    pub estimator: Estimator,
    pub side: Side,
    pub max_rounds: usize,
}

impl Default for TrimFillOptions {
    fn default() -> Self {
        Self {
            estimator: Estimator::L0,
            side: Side::Auto,
            max_rounds: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrimFillDetail {
    pub k0: usize,
    /// Unrounded estimator value from the final round.
    pub raw_estimate: f64,
    pub estimator: Estimator,
    /// Resolved side (`Left` or `Right`).
    pub side: Side,
    pub rounds: usize,
    pub pooled_before: f64,
    pub pooled_after: f64,
    pub tau2_after: f64,
    /// Imputed mirror studies as `(y, se)`.
    pub filled: Vec<(f64, f64)>,
    /// The estimate exceeded the number of studies and was capped.
    pub capped: bool,
}

pub fn trim_fill(series: &UniSeries, estimator: Estimator, side: Side) -> Result<TestResult> {
    trim_fill_with(
        series,
        &TrimFillOptions {
            estimator,
            side,
            ..TrimFillOptions::default()
        },
    )
}

pub fn trim_fill_with(series: &UniSeries, opts: &TrimFillOptions) -> Result<TestResult> {
    let detail = match opts.side {
        Side::Left | Side::Right => one_side(series, opts.estimator, opts.side, opts.max_rounds)?,
        Side::Auto => one_side(series, opts.estimator, asymmetry_side(series), opts.max_rounds)?,
        Side::Larger => {
            let left = one_side(series, opts.estimator, Side::Left, opts.max_rounds)?;
            let right = one_side(series, opts.estimator, Side::Right, opts.max_rounds)?;
            if right.k0 > left.k0 {
                right
            } else {
                left
            }
        }
    };
    let m = series.len();
    let p_value = k0_p_value(detail.estimator, detail.k0, m);
    Ok(TestResult {
        method: Method::TrimFill,
        scope: Scope::Outcome(0),
        statistic: detail.k0 as f64,
        null_distribution: match detail.estimator {
            Estimator::L0 => NullDistribution::StandardNormal,
            Estimator::R0 => NullDistribution::RankRunLength,
        },
        p_value,
        n_studies: m,
        excluded_partial: 0,
        detail: Detail::TrimFill(detail),
    })
}

/// Direction of funnel asymmetry from the weighted regression `y ~ se` with
/// weights `1 / (se^2 + tau^2)`, `tau^2` by DerSimonian-Laird.
fn asymmetry_side(series: &UniSeries) -> Side {
    let v: Vec<f64> = series.variances().collect();
    let (_, tau2) = dersimonian_laird(series.y(), &v);
    let w: Vec<f64> = v.iter().map(|v| 1.0 / (v + tau2)).collect();
    let sw: f64 = w.iter().sum();
    let xbar = series.se().iter().zip(&w).map(|(x, w)| x * w).sum::<f64>() / sw;
    let ybar = series.y().iter().zip(&w).map(|(y, w)| y * w).sum::<f64>() / sw;
    let sxy: f64 = series
        .se()
        .iter()
        .zip(series.y())
        .zip(&w)
        .map(|((x, y), w)| w * (x - xbar) * (y - ybar))
        .sum();
    if sxy < 0.0 {
        Side::Right
    } else {
        Side::Left
    }
}

/// One-sided p-value of `k0` under the no-missing-studies null.
///
/// L0: `4 S_r` is built from the Wilcoxon signed-rank sum, whose null variance
/// is `m(m+1)(2m+1)/24`. R0: `R0 + 1` is geometric with `P(R0 >= k) = 2^-(k+1)`.
fn k0_p_value(estimator: Estimator, k0: usize, m: usize) -> f64 {
    match estimator {
        Estimator::L0 => {
            let mf = m as f64;
            let sd = 4.0 * (mf * (mf + 1.0) * (2.0 * mf + 1.0) / 24.0).sqrt() / (2.0 * mf - 1.0);
            standard_normal_sf(k0 as f64 / sd)
        }
        Estimator::R0 => 0.5f64.powi(k0 as i32 + 1),
    }
}

/// Ranks of `|c|` with ties (within a relative tolerance) given their average rank.
fn tolerant_abs_ranks(c: &[f64], tol: f64) -> Vec<f64> {
    let mut order: Vec<usize> = (0..c.len()).collect();
    order.sort_by(|&a, &b| c[a].abs().total_cmp(&c[b].abs()));
    let mut ranks = vec![0.0; c.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && c[order[end]].abs() - c[order[start]].abs() <= tol {
            end += 1;
        }
        let avg = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    ranks
}

fn estimate(estimator: Estimator, centered: &[f64], tol: f64) -> f64 {
    let m = centered.len() as f64;
    let ranks = tolerant_abs_ranks(centered, tol);
    match estimator {
        Estimator::L0 => {
            let sr: f64 = centered
                .iter()
                .zip(&ranks)
                .filter(|(c, _)| **c > tol)
                .map(|(_, r)| r)
                .sum();
            (4.0 * sr - m * (m + 1.0)) / (2.0 * m - 1.0)
        }
        Estimator::R0 => {
            // Length of the run of positive effects at the top of the ranking, less one.
            let top_negative = centered
                .iter()
                .zip(&ranks)
                .filter(|(c, _)| **c < -tol)
                .map(|(_, r)| *r)
                .fold(0.0, f64::max);
            m - top_negative - 1.0
        }
    }
}

fn one_side(series: &UniSeries, estimator: Estimator, side: Side, max_rounds: usize) -> Result<TrimFillDetail> {
    let sign = if side == Side::Right { -1.0 } else { 1.0 };
    let mut rows: Vec<(f64, f64)> = series
        .y()
        .iter()
        .zip(series.variances())
        .map(|(y, v)| (sign * y, v))
        .collect();
    rows.sort_by(|a, b| a.0.total_cmp(&b.0));
    let y: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let v: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let m = y.len();
    let spread = y.iter().fold(0.0f64, |acc, x| acc.max(x.abs())).max(1.0);
    let tol = 1e-9 * spread;

    let (pooled_all, _) = dersimonian_laird(&y, &v);
    let mut k0 = 0usize;
    let mut capped = false;
    let mut rounds = 0;
    let (center, raw) = loop {
        rounds += 1;
        if rounds > max_rounds {
            return Err(Error::IterationLimit(max_rounds));
        }
        let keep = m - k0.min(m - 1);
        let center = dersimonian_laird(&y[..keep], &v[..keep]).0;
        let centered: Vec<f64> = y.iter().map(|x| x - center).collect();
        let raw = estimate(estimator, &centered, tol);
        let mut next = raw.round().max(0.0) as usize;
        if next > m {
            next = m;
            capped = true;
        }
        if next == k0 {
            break (center, raw);
        }
        k0 = next;
    };

    let filled: Vec<(f64, f64)> = y[m - k0.min(m)..]
        .iter()
        .zip(&v[m - k0.min(m)..])
        .map(|(yi, vi)| (2.0 * center - yi, *vi))
        .collect();
    let mut all_y = y.clone();
    let mut all_v = v.clone();
    for (fy, fv) in &filled {
        all_y.push(*fy);
        all_v.push(*fv);
    }
    let (pooled_after, tau2_after) = dersimonian_laird(&all_y, &all_v);

    Ok(TrimFillDetail {
        k0,
        raw_estimate: raw,
        estimator,
        side: if sign < 0.0 { Side::Right } else { Side::Left },
        rounds,
        pooled_before: sign * pooled_all,
        pooled_after: sign * pooled_after,
        tau2_after,
        filled: filled.into_iter().map(|(fy, fv)| (sign * fy, fv.sqrt())).collect(),
        capped,
    })
}
