//! Regression-based score test for publication bias across two outcomes.
//!
//! With the between-study parameters fixed at their REML estimates, each
//! reported outcome is standardized by its total standard deviation:
//!
//! ```text
//! SND_ij = Y_ij / sqrt(s_ij^2 + tau_j^2),   P_ij = 1 / sqrt(s_ij^2 + tau_j^2)
//! SND_i  = a + b * P_i + eps_i,             eps_i ~ N(0, Sigma_i)
//! ```
//!
//! where `Sigma_i` has unit diagonal and off-diagonal
//! `(rho_W s_i1 s_i2 + rho_B tau_1 tau_2) / sqrt(V_i11 V_i22)`. The standardized
//! outcome `j` always uses `tau_j^2`. Absence of small-study asymmetry means
//! `a = 0`; the test statistic is the score statistic for the intercepts
//! evaluated at `(0, b(0))`, where `b(0)` maximizes the likelihood with the
//! intercepts held at zero.
//!
//! The log-likelihood is quadratic in `(a, b)`, so the score and the
//! information `I = sum Z_i' W_i Z_i` are exact. Partially reported studies
//! enter with their single observed component and `Sigma_i = [1]`.

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::bias::{Detail, Method, NullDistribution, Scope, TestResult};
use crate::error::{Error, Result};
use crate::model::{BrmaFit, MetaDataset, OUTCOMES};
use crate::reml::{reml_fit, FitOptions};

/// Likelihood used for the regression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Objective {
    /// Bivariate normal with the plug-in correlation matrices `Sigma_i`.
    #[default]
    Correlated,
    /// Independent sum of squares, ignoring `Sigma_i`.
    Independent,
}

/// Scaling of the information in `RST = (1/m) U' I^aa U`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Normalization {
    /// `I^aa` is the intercept block of the inverse *average* information
    /// (`I / m`), so the statistic is the usual score statistic, chi-square
    /// with `df` = number of intercepts under the null.
    #[default]
    Average,
    /// `I^aa` is taken from the inverse *total* information. The statistic
    /// is then the usual one divided by `m` and is not chi-square calibrated.
    Total,
}

#[derive(Debug, Clone, Default)]
pub struct RstOptions {
    pub objective: Objective,
    pub normalization: Normalization,
    pub fit: FitOptions,
}

/// Regression row for one study (observed components only).
#[derive(Debug, Clone, PartialEq)]
pub struct DesignRow {
    pub outcomes: Vec<usize>,
    pub snd: Vec<f64>,
    pub precision: Vec<f64>,
    pub sigma: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RstDesign {
    rows: Vec<DesignRow>,
    /// Outcomes reported by at least one study, ascending.
    outcomes: Vec<usize>,
}

impl RstDesign {
    pub fn from_rows(rows: Vec<DesignRow>) -> Result<Self> {
        let mut outcomes = Vec::new();
        for r in &rows {
            let k = r.outcomes.len();
            if r.snd.len() != k || r.precision.len() != k || r.sigma.shape() != (k, k) || k == 0 {
                return Err(Error::InvalidDataset("design row dimensions disagree".into()));
            }
            for a in 0..k {
                if (r.sigma[(a, a)] - 1.0).abs() > 1e-12 {
                    return Err(Error::InvalidDataset("Sigma_i must have unit diagonal".into()));
                }
            }
            outcomes.extend(r.outcomes.iter().copied());
        }
        outcomes.sort_unstable();
        outcomes.dedup();
        if rows.is_empty() {
            return Err(Error::InsufficientData("empty design".into()));
        }
        Ok(Self { rows, outcomes })
    }

    pub fn rows(&self) -> &[DesignRow] {
        &self.rows
    }

    pub fn outcomes(&self) -> &[usize] {
        &self.outcomes
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Univariate design for outcome `j`: rows reporting `j`, `Sigma_i = [1]`.
    pub fn restrict_to_outcome(&self, j: usize) -> Result<Self> {
        let rows = self
            .rows
            .iter()
            .filter_map(|r| {
                r.outcomes.iter().position(|&o| o == j).map(|a| DesignRow {
                    outcomes: vec![j],
                    snd: vec![r.snd[a]],
                    precision: vec![r.precision[a]],
                    sigma: DMatrix::identity(1, 1),
                })
            })
            .collect();
        Self::from_rows(rows)
    }

    /// Number of regression parameters: an intercept and a slope per outcome.
    pub fn n_params(&self) -> usize {
        2 * self.outcomes.len()
    }

    fn slot(&self, outcome: usize) -> usize {
        self.outcomes.iter().position(|&o| o == outcome).unwrap()
    }

    /// Row-level design matrix `Z_i` mapping `(a, b)` to the observed SND.
    fn z(&self, row: &DesignRow) -> DMatrix<f64> {
        let k = self.outcomes.len();
        let mut z = DMatrix::zeros(row.outcomes.len(), 2 * k);
        for (a, &j) in row.outcomes.iter().enumerate() {
            let s = self.slot(j);
            z[(a, s)] = 1.0;
            z[(a, k + s)] = row.precision[a];
        }
        z
    }
}

fn weight(row: &DesignRow, objective: Objective) -> Result<DMatrix<f64>> {
    match objective {
        Objective::Independent => Ok(DMatrix::identity(row.outcomes.len(), row.outcomes.len())),
        Objective::Correlated => row.sigma.clone().try_inverse().ok_or(Error::SingularInformation),
    }
}

/// Builds the standardized regression from the data and a REML fit.
pub fn build_design(data: &MetaDataset, fit: &BrmaFit) -> Result<RstDesign> {
    let tau2 = fit.params.tau2;
    let tau = [tau2[0].sqrt(), tau2[1].sqrt()];
    let mut rows = Vec::with_capacity(data.len());
    for s in data.studies() {
        let outcomes: Vec<usize> = s.observed().collect();
        let mut snd = Vec::with_capacity(outcomes.len());
        let mut precision = Vec::with_capacity(outcomes.len());
        let mut total = [0.0; OUTCOMES];
        for &j in &outcomes {
            let o = s.outcome(j).unwrap();
            total[j] = o.se * o.se + tau2[j];
            let sd = total[j].sqrt();
            snd.push(o.y / sd);
            precision.push(1.0 / sd);
        }
        let mut sigma = DMatrix::identity(outcomes.len(), outcomes.len());
        if outcomes.len() == 2 {
            let (s1, s2) = (s.outcome(0).unwrap().se, s.outcome(1).unwrap().se);
            let rho_w = s.rho_w().unwrap_or(0.0);
            let r = (rho_w * s1 * s2 + fit.params.rho_b * tau[0] * tau[1]) / (total[0] * total[1]).sqrt();
            if !(r.abs() < 1.0) {
                return Err(Error::BoundaryDegeneracy {
                    id: s.id().to_string(),
                });
            }
            sigma[(0, 1)] = r;
            sigma[(1, 0)] = r;
        }
        rows.push(DesignRow {
            outcomes,
            snd,
            precision,
            sigma,
        });
    }
    RstDesign::from_rows(rows)
}

/// Log-likelihood of the standardized regression at `(a, b)` (up to a constant).
pub fn log_likelihood(design: &RstDesign, objective: Objective, a: &[f64], b: &[f64]) -> Result<f64> {
    let k = design.outcomes.len();
    let theta = DVector::from_iterator(2 * k, a.iter().chain(b).copied());
    let mut ll = 0.0;
    for row in &design.rows {
        let e = DVector::from_column_slice(&row.snd) - design.z(row) * &theta;
        ll -= 0.5 * (e.transpose() * weight(row, objective)? * &e)[(0, 0)];
    }
    Ok(ll)
}

/// Score vector and information (negative Hessian) at `(a, b)`, ordered as
/// `(a_1..a_k, b_1..b_k)` over [`RstDesign::outcomes`].
pub fn score_and_information(
    design: &RstDesign,
    objective: Objective,
    a: &[f64],
    b: &[f64],
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let q = design.n_params();
    let theta = DVector::from_iterator(q, a.iter().chain(b).copied());
    let mut score = DVector::zeros(q);
    let mut info = DMatrix::zeros(q, q);
    for row in &design.rows {
        let z = design.z(row);
        let w = weight(row, objective)?;
        let e = DVector::from_column_slice(&row.snd) - &z * &theta;
        let zw = z.transpose() * w;
        score += &zw * e;
        info += &zw * z;
    }
    Ok((score, info))
}

fn check_identifiable(design: &RstDesign) -> Result<()> {
    for &j in &design.outcomes {
        let p: Vec<f64> = design
            .rows
            .iter()
            .filter_map(|r| r.outcomes.iter().position(|&o| o == j).map(|a| r.precision[a]))
            .collect();
        if p.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "outcome {} is reported by fewer than 2 studies",
                j + 1
            )));
        }
        let (lo, hi) = p.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
        if hi - lo <= 1e-12 * hi {
            return Err(Error::DegenerateDesign(format!(
                "precision is constant for outcome {}; intercept and slope are confounded",
                j + 1
            )));
        }
    }
    Ok(())
}

/// Slopes maximizing the likelihood with all intercepts fixed at zero
/// (generalized least squares through the origin).
pub fn profile_b(design: &RstDesign, objective: Objective) -> Result<Vec<f64>> {
    check_identifiable(design)?;
    let k = design.outcomes.len();
    let zero = vec![0.0; k];
    let (score, info) = score_and_information(design, objective, &zero, &zero)?;
    let info_bb = info.view((k, k), (k, k)).into_owned();
    let score_b = score.rows(k, k).into_owned();
    let chol = info_bb.cholesky().ok_or(Error::SingularInformation)?;
    Ok(chol.solve(&score_b).iter().copied().collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RstResult {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
    /// Outcomes tested, ascending (0-based).
    pub outcomes: Vec<usize>,
    pub b_profiled: Vec<f64>,
    pub score_at_null: Vec<f64>,
    /// Matrix with `statistic = (1/m) U' info_aa U`.
    pub info_aa: DMatrix<f64>,
    /// Total information at `(0, b(0))`.
    pub information: DMatrix<f64>,
    pub m: usize,
    pub normalization: Normalization,
}

impl RstResult {
    pub fn to_test_result(&self) -> TestResult {
        TestResult {
            method: Method::Rst,
            scope: if self.outcomes.len() == 1 {
                Scope::Outcome(self.outcomes[0])
            } else {
                Scope::Joint
            },
            statistic: self.statistic,
            null_distribution: NullDistribution::ChiSquared { df: self.df as f64 },
            p_value: self.p_value,
            n_studies: self.m,
            excluded_partial: 0,
            detail: Detail::Rst {
                score: self.score_at_null.clone(),
                b_profiled: self.b_profiled.clone(),
            },
        }
    }
}

/// Score statistic for `a = 0` on a prepared design.
pub fn rst_from_design(design: &RstDesign, objective: Objective, normalization: Normalization) -> Result<RstResult> {
    let b = profile_b(design, objective)?;
    let k = design.outcomes.len();
    let zero = vec![0.0; k];
    let (score, info) = score_and_information(design, objective, &zero, &b)?;
    let m = design.len() as f64;
    let inv = info.clone().cholesky().ok_or(Error::SingularInformation)?.inverse();
    let inv_aa = inv.view((0, 0), (k, k)).into_owned();
    let info_aa = match normalization {
        Normalization::Average => inv_aa * m,
        Normalization::Total => inv_aa,
    };
    let u = score.rows(0, k).into_owned();
    let statistic = ((u.transpose() * &info_aa * &u)[(0, 0)] / m).max(0.0);
    let p_value = ChiSquared::new(k as f64)
        .expect("k >= 1")
        .sf(statistic)
        .clamp(0.0, 1.0);
    Ok(RstResult {
        statistic,
        df: k,
        p_value,
        outcomes: design.outcomes.clone(),
        b_profiled: b,
        score_at_null: u.iter().copied().collect(),
        info_aa,
        information: info,
        m: design.len(),
        normalization,
    })
}

/// REML fit, standardized design and score test in one pass.
pub fn rst_test(data: &MetaDataset, opts: &RstOptions) -> Result<RstResult> {
    let fit = reml_fit(data, &opts.fit)?;
    let design = build_design(data, &fit)?;
    rst_from_design(&design, opts.objective, opts.normalization)
}
