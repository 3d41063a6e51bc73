//! Bivariate random-effects data model.
//!
//! A study reports up to two outcomes. Each reported outcome carries an
//! effect estimate `y` and a known within-study standard error `se`; studies
//! reporting both also carry the known within-study correlation `rho_w`.
//! Marginally, the observed outcomes of study `i` are normal with mean
//! `beta` and covariance `V_i = Delta_i + Omega`, restricted to what was
//! reported.

use nalgebra::{DMatrix, Matrix2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of outcomes handled by the model.
pub const OUTCOMES: usize = 2;

/// One reported outcome of a study.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub y: f64,
    pub se: f64,
}

impl Observation {
    pub fn new(y: f64, se: f64) -> Self {
        Self { y, se }
    }

    pub fn variance(&self) -> f64 {
        self.se * self.se
    }
}

/// A single study. Construct through [`Study::new`] so the invariants hold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Study {
    id: String,
    outcomes: [Option<Observation>; OUTCOMES],
    rho_w: Option<f64>,
}

impl Study {
    pub fn new(
        id: impl Into<String>,
        outcomes: [Option<Observation>; OUTCOMES],
        rho_w: Option<f64>,
    ) -> Result<Self> {
        let id = id.into();
        let invalid = |reason: String| Error::InvalidStudy {
            id: id.clone(),
            reason,
        };
        if outcomes.iter().all(Option::is_none) {
            return Err(invalid("no outcome reported".into()));
        }
        for (j, obs) in outcomes.iter().enumerate() {
            if let Some(obs) = obs {
                if !obs.y.is_finite() {
                    return Err(invalid(format!("effect for outcome {} is not finite", j + 1)));
                }
                if !(obs.se.is_finite() && obs.se > 0.0) {
                    return Err(invalid(format!(
                        "standard error for outcome {} must be positive, got {}",
                        j + 1,
                        obs.se
                    )));
                }
            }
        }
        let complete = outcomes.iter().all(Option::is_some);
        match rho_w {
            Some(r) if !(-1.0..=1.0).contains(&r) => {
                return Err(invalid(format!("within-study correlation {r} outside [-1, 1]")));
            }
            None if complete => {
                return Err(Error::CovarianceUnavailable { id });
            }
            _ => {}
        }
        // rho_w carries no information when only one outcome is present.
        let rho_w = if complete { rho_w } else { None };
        Ok(Self { id, outcomes, rho_w })
    }

    /// Study reporting both outcomes.
    pub fn complete(id: impl Into<String>, y: [f64; 2], se: [f64; 2], rho_w: f64) -> Result<Self> {
        Self::new(
            id,
            [
                Some(Observation::new(y[0], se[0])),
                Some(Observation::new(y[1], se[1])),
            ],
            Some(rho_w),
        )
    }

    /// Study reporting only `outcome` (0-based).
    pub fn partial(id: impl Into<String>, outcome: usize, y: f64, se: f64) -> Result<Self> {
        let mut outcomes = [None; OUTCOMES];
        let id = id.into();
        if outcome >= OUTCOMES {
            return Err(Error::InvalidStudy {
                id,
                reason: format!("outcome index {outcome} out of range"),
            });
        }
        outcomes[outcome] = Some(Observation::new(y, se));
        Self::new(id, outcomes, None)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn outcome(&self, j: usize) -> Option<&Observation> {
        self.outcomes.get(j).and_then(Option::as_ref)
    }

    pub fn outcomes(&self) -> &[Option<Observation>; OUTCOMES] {
        &self.outcomes
    }

    pub fn rho_w(&self) -> Option<f64> {
        self.rho_w
    }

    pub fn is_complete(&self) -> bool {
        self.outcomes.iter().all(Option::is_some)
    }

    /// Indices of the reported outcomes, in outcome order.
    pub fn observed(&self) -> impl Iterator<Item = usize> + '_ {
        (0..OUTCOMES).filter(|&j| self.outcomes[j].is_some())
    }

    /// Within-study covariance restricted to the observed outcomes.
    pub fn within_cov(&self) -> DMatrix<f64> {
        let idx: Vec<usize> = self.observed().collect();
        DMatrix::from_fn(idx.len(), idx.len(), |a, b| {
            let (ja, jb) = (idx[a], idx[b]);
            let sa = self.outcomes[ja].unwrap().se;
            let sb = self.outcomes[jb].unwrap().se;
            if ja == jb {
                sa * sa
            } else {
                sa * sb * self.rho_w.unwrap_or(0.0)
            }
        })
    }
}

/// An ordered collection of studies on the same two outcomes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaDataset {
    studies: Vec<Study>,
    outcome_names: [String; OUTCOMES],
}

impl MetaDataset {
    pub fn new(studies: Vec<Study>, outcome_names: [String; OUTCOMES]) -> Result<Self> {
        if studies.is_empty() {
            return Err(Error::InvalidDataset("no studies".into()));
        }
        Ok(Self {
            studies,
            outcome_names,
        })
    }

    /// Dataset with outcome names `outcome1`, `outcome2`.
    pub fn from_studies(studies: Vec<Study>) -> Result<Self> {
        Self::new(studies, ["outcome1".to_string(), "outcome2".to_string()])
    }

    pub fn studies(&self) -> &[Study] {
        &self.studies
    }

    pub fn outcome_names(&self) -> &[String; OUTCOMES] {
        &self.outcome_names
    }

    pub fn len(&self) -> usize {
        self.studies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.studies.is_empty()
    }

    pub fn m_complete(&self) -> usize {
        self.studies.iter().filter(|s| s.is_complete()).count()
    }

    pub fn m_partial(&self) -> usize {
        self.len() - self.m_complete()
    }

    /// Number of studies reporting outcome `j`.
    pub fn count_reporting(&self, j: usize) -> usize {
        self.studies.iter().filter(|s| s.outcome(j).is_some()).count()
    }
}

/// Overall effects, between-study variances and between-study correlation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BrmaParams {
    pub beta: [f64; OUTCOMES],
    pub tau2: [f64; OUTCOMES],
    pub rho_b: f64,
}

impl BrmaParams {
    pub fn new(beta: [f64; 2], tau2: [f64; 2], rho_b: f64) -> Result<Self> {
        let p = Self { beta, tau2, rho_b };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.tau2.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return Err(Error::InvalidParams(format!(
                "between-study variances must be finite and non-negative, got {:?}",
                self.tau2
            )));
        }
        if !(-1.0..=1.0).contains(&self.rho_b) {
            return Err(Error::InvalidParams(format!(
                "between-study correlation {} outside [-1, 1]",
                self.rho_b
            )));
        }
        if self.beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::InvalidParams("overall effects must be finite".into()));
        }
        Ok(())
    }

    /// Between-study covariance matrix `Omega`.
    pub fn omega(&self) -> Matrix2<f64> {
        let c = self.rho_b * (self.tau2[0] * self.tau2[1]).sqrt();
        Matrix2::new(self.tau2[0], c, c, self.tau2[1])
    }
}

/// REML fit of the bivariate model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BrmaFit {
    pub params: BrmaParams,
    pub loglik_restricted: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Standard errors of `beta` from the inverse GLS information at the estimate.
    pub se_beta: [f64; OUTCOMES],
    /// Max-norm of the restricted-likelihood gradient on the optimisation scale.
    pub gradient_norm: f64,
    /// Set when an estimate sits on a boundary (zero variance or clamped correlation).
    pub boundary: bool,
    /// Outcomes that at least one study reports. Unfitted outcomes carry zeros.
    pub fitted: [bool; OUTCOMES],
}

/// Marginal covariance `Delta_i + Omega` restricted to the outcomes `study` reports.
pub fn marginal_cov(study: &Study, params: &BrmaParams) -> Result<DMatrix<f64>> {
    params.validate()?;
    let omega = params.omega();
    let idx: Vec<usize> = study.observed().collect();
    let mut v = study.within_cov();
    for (a, &ja) in idx.iter().enumerate() {
        for (b, &jb) in idx.iter().enumerate() {
            v[(a, b)] += omega[(ja, jb)];
        }
    }
    let pd = match idx.len() {
        1 => v[(0, 0)] > 0.0,
        _ => v[(0, 0)] > 0.0 && v[(0, 0)] * v[(1, 1)] - v[(0, 1)] * v[(1, 0)] > 0.0,
    };
    if !pd {
        return Err(Error::BoundaryDegeneracy {
            id: study.id().to_string(),
        });
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn zero_heterogeneity_unit_se_gives_identity() {
        let s = Study::complete("a", [0.3, -0.2], [1.0, 1.0], 0.0).unwrap();
        let p = BrmaParams::new([0.0, 0.0], [0.0, 0.0], 0.0).unwrap();
        let v = marginal_cov(&s, &p).unwrap();
        assert_eq!(v, DMatrix::identity(2, 2));
    }

    #[test]
    fn off_diagonal_sums_within_and_between_covariance() {
        let (s1, s2, rw) = (0.4, 0.9, -0.3);
        let (t1, t2, rb) = (1.2_f64, 0.7_f64, 0.6);
        let s = Study::complete("a", [0.0, 0.0], [s1, s2], rw).unwrap();
        let p = BrmaParams::new([0.0, 0.0], [t1 * t1, t2 * t2], rb).unwrap();
        let v = marginal_cov(&s, &p).unwrap();
        assert_relative_eq!(v[(0, 1)], s1 * s2 * rw + t1 * t2 * rb, epsilon = 1e-15);
        assert_relative_eq!(v[(1, 0)], v[(0, 1)]);
        assert_relative_eq!(v[(0, 0)], s1 * s1 + t1 * t1, epsilon = 1e-15);
    }

    #[test]
    fn partial_study_is_scalar() {
        let s = Study::partial("a", 0, 0.1, 0.5).unwrap();
        let p = BrmaParams::new([0.0, 0.0], [0.75, 2.0], 0.3).unwrap();
        let v = marginal_cov(&s, &p).unwrap();
        assert_eq!(v.shape(), (1, 1));
        assert_relative_eq!(v[(0, 0)], 1.0);
    }

    #[test]
    fn singular_at_correlation_boundary() {
        let s = Study::complete("edge", [0.0, 0.0], [1.0, 1.0], 1.0).unwrap();
        let p = BrmaParams::new([0.0, 0.0], [1.0, 1.0], 1.0).unwrap();
        assert!(matches!(
            marginal_cov(&s, &p),
            Err(Error::BoundaryDegeneracy { .. })
        ));
    }

    #[test]
    fn study_validation() {
        assert!(Study::complete("a", [0.0, 0.0], [0.0, 1.0], 0.0).is_err());
        assert!(Study::complete("a", [0.0, 0.0], [1.0, 1.0], 1.5).is_err());
        assert!(matches!(
            Study::new(
                "a",
                [Some(Observation::new(0.0, 1.0)), Some(Observation::new(0.0, 1.0))],
                None
            ),
            Err(Error::CovarianceUnavailable { .. })
        ));
        assert!(Study::new("a", [None, None], None).is_err());
        // rho_w is dropped for single-outcome studies
        let s = Study::new("a", [None, Some(Observation::new(0.0, 1.0))], Some(0.2)).unwrap();
        assert_eq!(s.rho_w(), None);
        assert_eq!(s.observed().collect::<Vec<_>>(), vec![1]);
    }

    #[test]
    fn dataset_counts() {
        let d = MetaDataset::from_studies(vec![
            Study::complete("a", [0.0, 0.0], [1.0, 1.0], 0.1).unwrap(),
            Study::partial("b", 1, 0.0, 1.0).unwrap(),
            Study::partial("c", 0, 0.0, 1.0).unwrap(),
        ])
        .unwrap();
        assert_eq!(d.m_complete(), 1);
        assert_eq!(d.m_partial(), 2);
        assert_eq!(d.count_reporting(0), 2);
        assert!(MetaDataset::from_studies(vec![]).is_err());
    }

    proptest::proptest! {
        #[test]
        fn marginal_cov_symmetric_nonnegative_det(
            s1 in 0.01f64..3.0, s2 in 0.01f64..3.0,
            rw in -1.0f64..=1.0, rb in -1.0f64..=1.0,
            t1 in 0.0f64..3.0, t2 in 0.0f64..3.0,
        ) {
            let s = Study::complete("p", [0.0, 0.0], [s1, s2], rw).unwrap();
            let p = BrmaParams::new([0.0, 0.0], [t1, t2], rb).unwrap();
            match marginal_cov(&s, &p) {
                Ok(v) => {
                    proptest::prop_assert_eq!(v[(0, 1)], v[(1, 0)]);
                    proptest::prop_assert!(v.determinant() >= -1e-12);
                    if rw.abs() < 1.0 && rb.abs() < 1.0 && t1 > 0.0 && t2 > 0.0 {
                        proptest::prop_assert!(v.determinant() > 0.0);
                    }
                }
                Err(Error::BoundaryDegeneracy { .. }) => {
                    proptest::prop_assert!(rw.abs() == 1.0 || rb.abs() == 1.0 || rw.abs() > 0.99);
                }
                Err(e) => proptest::prop_assert!(false, "unexpected {e}"),
            }
        }
    }
}
