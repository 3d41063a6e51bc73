//! Begg and Mazumdar's rank correlation test.
//!
//! Each effect is standardized against the inverse-variance pooled mean,
//! `v_i = (y_i - ybar) / sqrt(var_i - var(ybar))`, and Kendall's tau between
//! `v` and `var` is referred to its normal approximation.

use super::{standard_normal_sf, Detail, Method, NullDistribution, Scope, TestResult, UniSeries};
use crate::error::{Error, Result};

/// Standardized deviates used by the rank test.
pub(crate) fn standardized_deviates(series: &UniSeries) -> Vec<f64> {
    let var: Vec<f64> = series.variances().collect();
    let sw: f64 = var.iter().map(|v| 1.0 / v).sum();
    let pooled = series.y().iter().zip(&var).map(|(y, v)| y / v).sum::<f64>() / sw;
    let var_pooled = 1.0 / sw;
    series
        .y()
        .iter()
        .zip(&var)
        .map(|(y, v)| (y - pooled) / (v - var_pooled).sqrt())
        .collect()
}

pub fn begg_test(series: &UniSeries) -> Result<TestResult> {
    let m = series.len();
    let var: Vec<f64> = series.variances().collect();
    let dev = standardized_deviates(series);

    let (mut concordant, mut discordant, mut var_ties) = (0usize, 0usize, 0usize);
    for i in 0..m {
        for j in (i + 1)..m {
            let dv = var[i] - var[j];
            if dv == 0.0 {
                var_ties += 1;
                continue;
            }
            let s = (dev[i] - dev[j]) * dv;
            if s > 0.0 {
                concordant += 1;
            } else if s < 0.0 {
                discordant += 1;
            }
        }
    }
    let pairs = m * (m - 1) / 2;
    if var_ties == pairs {
        return Err(Error::DegenerateRanking(
            "all studies share the same variance; no pair can be ranked".into(),
        ));
    }
    let mf = m as f64;
    let tau = (concordant as f64 - discordant as f64) / pairs as f64;
    let z = tau / (2.0 * (2.0 * mf + 5.0) / (9.0 * mf * (mf - 1.0))).sqrt();
    let p_value = (2.0 * standard_normal_sf(z.abs())).clamp(0.0, 1.0);

    Ok(TestResult {
        method: Method::Begg,
        scope: Scope::Outcome(0),
        statistic: z,
        null_distribution: NullDistribution::StandardNormal,
        p_value,
        n_studies: m,
        excluded_partial: 0,
        detail: Detail::Begg {
            tau,
            z,
            concordant,
            discordant,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn tau_of(r: &TestResult) -> f64 {
        match r.detail {
            Detail::Begg { tau, .. } => tau,
            _ => unreachable!(),
        }
    }

    /// Builds a series whose standardized deviates are (approximately) the
    /// supplied ranks: large-variance studies get the requested ordering.
    fn series_with_order(se: &[f64], y: &[f64]) -> UniSeries {
        UniSeries::new(y.to_vec(), se.to_vec()).unwrap()
    }

    #[test]
    fn perfect_concordance() {
        // Effects grow much faster than the standardization can undo.
        let se = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6];
        let y = [-10.0, -5.0, 0.0, 5.0, 10.0, 20.0];
        let s = series_with_order(&se, &y);
        let dev = standardized_deviates(&s);
        assert!(dev.windows(2).all(|w| w[0] < w[1]));
        let r = begg_test(&s).unwrap();
        assert_relative_eq!(tau_of(&r), 1.0);
    }

    #[test]
    fn one_discordant_pair_of_three() {
        let s = series_with_order(&[0.1, 0.2, 0.3], &[-5.0, 5.0, 1.0]);
        let dev = standardized_deviates(&s);
        let var: Vec<f64> = s.variances().collect();
        // Oracle: enumerate the three pairs.
        let mut score = 0i32;
        for (i, j) in [(0, 1), (0, 2), (1, 2)] {
            score += ((dev[i] - dev[j]) * (var[i] - var[j])).signum() as i32;
        }
        assert_eq!(score, 1, "construction should give two concordant, one discordant");
        let r = begg_test(&s).unwrap();
        assert_relative_eq!(tau_of(&r), 1.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn constant_variance_is_degenerate() {
        let s = UniSeries::new(vec![0.0, 1.0, 2.0], vec![0.3; 3]).unwrap();
        assert!(matches!(begg_test(&s), Err(Error::DegenerateRanking(_))));
    }

    #[test]
    fn z_uses_normal_approximation_variance() {
        let s = series_with_order(&[0.1, 0.2, 0.3, 0.4], &[-1.0, 2.0, 0.5, 4.0]);
        let r = begg_test(&s).unwrap();
        let m: f64 = 4.0;
        let expected = tau_of(&r) / (2.0 * (2.0 * m + 5.0) / (9.0 * m * (m - 1.0))).sqrt();
        assert_relative_eq!(r.statistic, expected);
    }

    proptest! {
        #[test]
        fn negation_flips_tau(
            y in prop::collection::vec(-5.0f64..5.0, 3..25),
            se_seed in prop::collection::vec(0.05f64..2.0, 25),
        ) {
            let se = se_seed[..y.len()].to_vec();
            let s = UniSeries::new(y.clone(), se.clone()).unwrap();
            let neg = UniSeries::new(y.iter().map(|v| -v).collect(), se).unwrap();
            if let (Ok(a), Ok(b)) = (begg_test(&s), begg_test(&neg)) {
                prop_assert!((-1.0..=1.0).contains(&tau_of(&a)));
                prop_assert!((tau_of(&a) + tau_of(&b)).abs() < 1e-12);
                prop_assert!((a.p_value - b.p_value).abs() < 1e-12);
            }
        }
    }
}
