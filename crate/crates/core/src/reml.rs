//! Restricted maximum likelihood for the bivariate random-effects model.
//!
//! The between-study covariance is optimised through its Cholesky factor
//! `Omega = L L^T`, `L = [[l11, 0], [l21, l22]]`. This keeps `Omega` positive
//! semidefinite for every `L`, reaches `tau^2 = 0` at `l11 = 0` (or
//! `l21 = l22 = 0`) and `|rho_B| = 1` at `l22 = 0`, and leaves the objective
//! smooth on all of R^3. Optimisation is damped Newton with an analytic
//! gradient and a central-difference Hessian of that gradient.
//!
//! Studies reporting a single outcome contribute the univariate marginal
//! density of that outcome. The fixed effects `beta` are profiled out by GLS
//! and the restricted likelihood carries the usual
//! `-1/2 log |sum X_i' V_i^-1 X_i|` correction.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};

use crate::error::{Error, Result};
use crate::model::{BrmaFit, BrmaParams, MetaDataset, OUTCOMES};

const LN_2PI: f64 = 1.837_877_066_409_345_5;
/// Variance estimates below this are reported as exactly zero.
const TAU2_ZERO: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct FitOptions {
    pub max_iterations: usize,
    /// Convergence requires successive restricted log-likelihoods to differ by less than this.
    pub loglik_tol: f64,
    /// ... and `(tau1^2, tau2^2, rho_B)` to move by less than this (max-norm).
    pub param_tol: f64,
    /// A fit is only reported as converged with a gradient max-norm below this.
    pub gradient_tol: f64,
    /// Extra starting points for the between-study correlation.
    pub rho_starts: Vec<f64>,
    /// Reported `|rho_B|` is clamped to this bound.
    pub rho_bound: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            loglik_tol: 1e-10,
            param_tol: 1e-8,
            gradient_tol: 1e-5,
            rho_starts: vec![0.0, 0.5, -0.5],
            rho_bound: 0.999,
        }
    }
}

/// Which covariance parameters the data identify.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Layout {
    /// Both outcomes, with at least one study reporting both: `(l11, l21, l22)`.
    Joint,
    /// Both outcomes but never jointly reported: `(l1, l2)`, `rho_B` unidentified.
    Separate,
    /// Only one outcome reported anywhere: `(l)`.
    Single(usize),
}

impl Layout {
    fn dim(self) -> usize {
        match self {
            Layout::Joint => 3,
            Layout::Separate => 2,
            Layout::Single(_) => 1,
        }
    }

    fn omega(self, l: &[f64]) -> Matrix2<f64> {
        match self {
            Layout::Joint => {
                let (a, b, c) = (l[0], l[1], l[2]);
                Matrix2::new(a * a, a * b, a * b, b * b + c * c)
            }
            Layout::Separate => Matrix2::new(l[0] * l[0], 0.0, 0.0, l[1] * l[1]),
            Layout::Single(j) => {
                let mut m = Matrix2::zeros();
                m[(j, j)] = l[0] * l[0];
                m
            }
        }
    }

    fn omega_derivatives(self, l: &[f64]) -> Vec<Matrix2<f64>> {
        match self {
            Layout::Joint => {
                let (a, b, c) = (l[0], l[1], l[2]);
                vec![
                    Matrix2::new(2.0 * a, b, b, 0.0),
                    Matrix2::new(0.0, a, a, 2.0 * b),
                    Matrix2::new(0.0, 0.0, 0.0, 2.0 * c),
                ]
            }
            Layout::Separate => vec![
                Matrix2::new(2.0 * l[0], 0.0, 0.0, 0.0),
                Matrix2::new(0.0, 0.0, 0.0, 2.0 * l[1]),
            ],
            Layout::Single(j) => {
                let mut m = Matrix2::zeros();
                m[(j, j)] = 2.0 * l[0];
                vec![m]
            }
        }
    }

    fn start(self, tau2: [f64; 2], rho: f64) -> Vec<f64> {
        match self {
            Layout::Joint => {
                let t2 = tau2[1].sqrt();
                vec![tau2[0].sqrt(), rho * t2, (1.0 - rho * rho).sqrt() * t2]
            }
            Layout::Separate => vec![tau2[0].sqrt(), tau2[1].sqrt()],
            Layout::Single(j) => vec![tau2[j].sqrt()],
        }
    }

    fn params(self, l: &[f64]) -> (f64, f64, f64) {
        let om = self.omega(l);
        let (t1, t2) = (om[(0, 0)], om[(1, 1)]);
        let rho = if t1 > 0.0 && t2 > 0.0 {
            (om[(0, 1)] / (t1 * t2).sqrt()).clamp(-1.0, 1.0)
        } else {
            0.0
        };
        (t1, t2, rho)
    }
}

/// Per-study quantities that do not depend on the between-study parameters.
#[derive(Debug, Clone)]
struct Unit {
    dim: usize,
    idx: [usize; 2],
    y: Vector2<f64>,
    delta: Matrix2<f64>,
}

impl Unit {
    fn cov(&self, omega: &Matrix2<f64>) -> Matrix2<f64> {
        let mut v = self.delta;
        for a in 0..self.dim {
            for b in 0..self.dim {
                v[(a, b)] += omega[(self.idx[a], self.idx[b])];
            }
        }
        v
    }

    fn embed(&self, local: &Matrix2<f64>, into: &mut Matrix2<f64>) {
        for a in 0..self.dim {
            for b in 0..self.dim {
                into[(self.idx[a], self.idx[b])] += local[(a, b)];
            }
        }
    }
}

/// Inverse and log-determinant of a 1x1 or 2x2 symmetric block stored top-left.
fn invert_block(v: &Matrix2<f64>, dim: usize) -> Option<(Matrix2<f64>, f64)> {
    if dim == 1 {
        let x = v[(0, 0)];
        if x <= 0.0 {
            return None;
        }
        let mut inv = Matrix2::zeros();
        inv[(0, 0)] = 1.0 / x;
        Some((inv, x.ln()))
    } else {
        let det = v[(0, 0)] * v[(1, 1)] - v[(0, 1)] * v[(1, 0)];
        if !(det > 0.0 && v[(0, 0)] > 0.0) {
            return None;
        }
        let inv = Matrix2::new(v[(1, 1)], -v[(0, 1)], -v[(1, 0)], v[(0, 0)]) / det;
        Some((inv, det.ln()))
    }
}

struct Evaluation {
    loglik: f64,
    beta: Vector2<f64>,
    beta_cov: Matrix2<f64>,
    /// d loglik / d Omega_ab, doubled: `loglik' = 1/2 tr(S dOmega)`.
    score_omega: Option<Matrix2<f64>>,
}

struct Problem {
    units: Vec<Unit>,
    active: [bool; OUTCOMES],
    n_obs: usize,
    layout: Layout,
}

impl Problem {
    fn new(data: &MetaDataset) -> Result<Self> {
        let mut active = [false; OUTCOMES];
        for (j, slot) in active.iter_mut().enumerate() {
            let k = data.count_reporting(j);
            if k == 1 {
                return Err(Error::InsufficientData(format!(
                    "outcome {} is reported by a single study; at least 2 are required",
                    j + 1
                )));
            }
            *slot = k >= 2;
        }
        if !active.iter().any(|&a| a) {
            return Err(Error::InsufficientData("no outcome has at least 2 studies".into()));
        }
        let units: Vec<Unit> = data
            .studies()
            .iter()
            .map(|s| {
                let obs: Vec<usize> = s.observed().collect();
                let mut idx = [0usize; 2];
                let mut y = Vector2::zeros();
                for (a, &j) in obs.iter().enumerate() {
                    idx[a] = j;
                    y[a] = s.outcome(j).unwrap().y;
                }
                let w = s.within_cov();
                let mut delta = Matrix2::zeros();
                for a in 0..obs.len() {
                    for b in 0..obs.len() {
                        delta[(a, b)] = w[(a, b)];
                    }
                }
                Unit {
                    dim: obs.len(),
                    idx,
                    y,
                    delta,
                }
            })
            .collect();
        let n_obs = units.iter().map(|u| u.dim).sum();
        let layout = match active {
            [true, true] if data.m_complete() > 0 => Layout::Joint,
            [true, true] => Layout::Separate,
            [true, false] => Layout::Single(0),
            _ => Layout::Single(1),
        };
        Ok(Self {
            units,
            active,
            n_obs,
            layout,
        })
    }

    fn n_fixed(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }

    fn evaluate(&self, omega: &Matrix2<f64>, with_score: bool) -> Option<Evaluation> {
        let mut inverses = Vec::with_capacity(self.units.len());
        let mut info = Matrix2::zeros();
        let mut rhs = Vector2::zeros();
        let mut logdet_v = 0.0;
        for u in &self.units {
            let (inv, logdet) = invert_block(&u.cov(omega), u.dim)?;
            logdet_v += logdet;
            u.embed(&inv, &mut info);
            let wy = inv * u.y;
            for a in 0..u.dim {
                rhs[u.idx[a]] += wy[a];
            }
            inverses.push(inv);
        }
        for j in 0..OUTCOMES {
            if !self.active[j] {
                info[(j, j)] = 1.0;
            }
        }
        let beta_cov = info.try_inverse()?;
        let beta = beta_cov * rhs;
        let det_info = info.determinant();
        if !(det_info > 0.0) {
            return None;
        }
        let logdet_info = det_info.ln();

        let mut quad = 0.0;
        let mut score = with_score.then(Matrix2::zeros);
        for (u, inv) in self.units.iter().zip(&inverses) {
            let mut r = Vector2::zeros();
            for a in 0..u.dim {
                r[a] = u.y[a] - beta[u.idx[a]];
            }
            let wr = inv * r;
            quad += r.dot(&wr);
            if let Some(s) = score.as_mut() {
                let mut c_local = Matrix2::zeros();
                for a in 0..u.dim {
                    for b in 0..u.dim {
                        c_local[(a, b)] = beta_cov[(u.idx[a], u.idx[b])];
                    }
                }
                let g = wr * wr.transpose() - inv + inv * c_local * inv;
                u.embed(&g, s);
            }
        }
        let p = self.n_fixed() as f64;
        let loglik = -0.5 * (logdet_v + logdet_info + quad + (self.n_obs as f64 - p) * LN_2PI);
        Some(Evaluation {
            loglik,
            beta,
            beta_cov,
            score_omega: score,
        })
    }

    fn loglik(&self, l: &[f64]) -> Option<f64> {
        self.evaluate(&self.layout.omega(l), false).map(|e| e.loglik)
    }

    fn gradient(&self, l: &[f64]) -> Option<(f64, DVector<f64>)> {
        let e = self.evaluate(&self.layout.omega(l), true)?;
        let s = e.score_omega.unwrap();
        let g = self
            .layout
            .omega_derivatives(l)
            .iter()
            .map(|d| 0.5 * s.component_mul(d).sum())
            .collect::<Vec<_>>();
        Some((e.loglik, DVector::from_vec(g)))
    }

    fn hessian(&self, l: &[f64]) -> Option<DMatrix<f64>> {
        let q = l.len();
        let mut h = DMatrix::zeros(q, q);
        let mut probe = l.to_vec();
        for k in 0..q {
            let step = 1e-5 * l[k].abs().max(0.1);
            probe[k] = l[k] + step;
            let (_, gp) = self.gradient(&probe)?;
            probe[k] = l[k] - step;
            let (_, gm) = self.gradient(&probe)?;
            probe[k] = l[k];
            h.set_column(k, &((gp - gm) / (2.0 * step)));
        }
        Some((&h + h.transpose()) * 0.5)
    }
}

struct Run {
    l: Vec<f64>,
    loglik: f64,
    grad_norm: f64,
    iterations: usize,
    converged: bool,
}

fn newton(problem: &Problem, start: Vec<f64>, opts: &FitOptions) -> Option<Run> {
    let mut l = start;
    let (mut loglik, mut grad) = problem.gradient(&l)?;
    let mut theta = problem.layout.params(&l);
    for iter in 1..=opts.max_iterations {
        let hess = problem.hessian(&l)?;
        let neg = -hess;
        let q = l.len();
        // Levenberg-style damping until the negative Hessian is positive definite.
        let scale = neg.diagonal().amax().max(1e-12);
        let mut lambda = 0.0;
        let dir = loop {
            let m = &neg + DMatrix::identity(q, q) * lambda;
            if let Some(ch) = m.cholesky() {
                break ch.solve(&grad);
            }
            lambda = if lambda == 0.0 { 1e-8 * scale } else { lambda * 10.0 };
            if lambda > 1e8 * scale {
                return None;
            }
        };

        let mut t = 1.0;
        let mut accepted = None;
        while t > 1e-12 {
            let cand: Vec<f64> = l.iter().zip(dir.iter()).map(|(a, d)| a + t * d).collect();
            if let Some(ll) = problem.loglik(&cand) {
                if ll >= loglik - 1e-12 * loglik.abs().max(1.0) {
                    accepted = Some((cand, ll));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((cand, ll)) = accepted else {
            let grad_norm = grad.amax();
            return Some(Run {
                l,
                loglik,
                grad_norm,
                iterations: iter,
                converged: grad_norm < opts.gradient_tol,
            });
        };

        let new_theta = problem.layout.params(&cand);
        let dtheta = (new_theta.0 - theta.0)
            .abs()
            .max((new_theta.1 - theta.1).abs())
            .max((new_theta.2 - theta.2).abs());
        let dll = (ll - loglik).abs();
        let (ll_new, grad_new) = problem.gradient(&cand)?;
        l = cand;
        loglik = ll_new;
        grad = grad_new;
        theta = new_theta;
        let grad_norm = grad.amax();
        if (dll < opts.loglik_tol && dtheta < opts.param_tol) || grad_norm < 1e-10 {
            return Some(Run {
                l,
                loglik,
                grad_norm,
                iterations: iter,
                converged: grad_norm < opts.gradient_tol,
            });
        }
    }
    let grad_norm = grad.amax();
    Some(Run {
        l,
        loglik,
        grad_norm,
        iterations: opts.max_iterations,
        converged: false,
    })
}

/// DerSimonian-Laird moment estimate of tau^2 for the studies reporting outcome `j`.
fn moment_tau2(data: &MetaDataset, j: usize) -> f64 {
    let obs: Vec<(f64, f64)> = data
        .studies()
        .iter()
        .filter_map(|s| s.outcome(j).map(|o| (o.y, o.variance())))
        .collect();
    if obs.len() < 2 {
        return 0.0;
    }
    let sw: f64 = obs.iter().map(|(_, v)| 1.0 / v).sum();
    let sw2: f64 = obs.iter().map(|(_, v)| 1.0 / (v * v)).sum();
    let mean = obs.iter().map(|(y, v)| y / v).sum::<f64>() / sw;
    let q: f64 = obs.iter().map(|(y, v)| (y - mean).powi(2) / v).sum();
    let denom = sw - sw2 / sw;
    ((q - (obs.len() as f64 - 1.0)) / denom).max(0.0)
}

fn mean_within_variance(data: &MetaDataset, j: usize) -> f64 {
    let v: Vec<f64> = data
        .studies()
        .iter()
        .filter_map(|s| s.outcome(j).map(|o| o.variance()))
        .collect();
    if v.is_empty() {
        1.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn all_studies_identical(data: &MetaDataset) -> bool {
    let first = &data.studies()[0];
    data.studies()
        .iter()
        .all(|s| s.outcomes() == first.outcomes() && s.rho_w() == first.rho_w())
}

fn assemble(
    problem: &Problem,
    l: &[f64],
    opts: &FitOptions,
    iterations: usize,
    converged: bool,
    grad_norm: f64,
    force_zero: bool,
) -> Result<BrmaFit> {
    let (mut t1, mut t2, mut rho) = problem.layout.params(l);
    let mut boundary = false;
    if force_zero {
        t1 = 0.0;
        t2 = 0.0;
        rho = 0.0;
        boundary = true;
    }
    if rho.abs() > opts.rho_bound {
        rho = rho.signum() * opts.rho_bound;
        boundary = true;
    }
    let zero_tol = TAU2_ZERO;
    for t in [&mut t1, &mut t2] {
        if *t < zero_tol {
            *t = 0.0;
            boundary = true;
        }
    }
    if t1 == 0.0 || t2 == 0.0 {
        rho = 0.0;
    }
    for j in 0..OUTCOMES {
        if !problem.active[j] {
            if j == 0 {
                t1 = 0.0;
            } else {
                t2 = 0.0;
            }
        }
    }
    if matches!(problem.layout, Layout::Separate | Layout::Single(_)) {
        rho = 0.0;
    }
    let mut params = BrmaParams {
        beta: [0.0; 2],
        tau2: [t1, t2],
        rho_b: rho,
    };
    let eval = problem
        .evaluate(&params.omega(), false)
        .ok_or_else(|| Error::BoundaryDegeneracy {
            id: "<fit>".into(),
        })?;
    let mut se_beta = [0.0; 2];
    for j in 0..OUTCOMES {
        if problem.active[j] {
            params.beta[j] = eval.beta[j];
            se_beta[j] = eval.beta_cov[(j, j)].sqrt();
        }
    }
    Ok(BrmaFit {
        params,
        loglik_restricted: eval.loglik,
        converged,
        iterations,
        se_beta,
        gradient_norm: grad_norm,
        boundary,
        fitted: problem.active,
    })
}

/// REML estimate of `(tau1^2, tau2^2, rho_B)` with GLS `beta`.
pub fn reml_fit(data: &MetaDataset, opts: &FitOptions) -> Result<BrmaFit> {
    let problem = Problem::new(data)?;
    if all_studies_identical(data) {
        let l = vec![0.0; problem.layout.dim()];
        return assemble(&problem, &l, opts, 0, true, 0.0, true);
    }

    let mut tau0 = [0.0; 2];
    for (j, t) in tau0.iter_mut().enumerate() {
        if problem.active[j] {
            *t = moment_tau2(data, j).max(0.1 * mean_within_variance(data, j));
        }
    }
    let rho_starts: &[f64] = match problem.layout {
        Layout::Joint if !opts.rho_starts.is_empty() => &opts.rho_starts,
        _ => &[0.0],
    };

    let mut best: Option<Run> = None;
    for &rho in rho_starts {
        let Some(run) = newton(&problem, problem.layout.start(tau0, rho), opts) else {
            continue;
        };
        let better = match &best {
            None => true,
            Some(b) => (run.converged && !b.converged) || (run.converged == b.converged && run.loglik > b.loglik),
        };
        if better {
            best = Some(run);
        }
    }
    let best = best.ok_or_else(|| Error::InsufficientData("restricted likelihood undefined at every start".into()))?;
    let fit = assemble(
        &problem,
        &best.l,
        opts,
        best.iterations,
        best.converged,
        best.grad_norm,
        false,
    )?;
    if !best.converged {
        return Err(Error::NonConvergence {
            iterations: best.iterations,
            last: Box::new(fit),
        });
    }
    Ok(fit)
}

/// Restricted log-likelihood at `(tau2, rho_b)`; `beta` is profiled and ignored.
pub fn restricted_loglik(data: &MetaDataset, params: &BrmaParams) -> Result<f64> {
    params.validate()?;
    let problem = Problem::new(data)?;
    problem
        .evaluate(&params.omega(), false)
        .map(|e| e.loglik)
        .ok_or_else(|| Error::BoundaryDegeneracy {
            id: "<dataset>".into(),
        })
}

/// Univariate REML estimate of the between-study variance by Fisher scoring
/// from the DerSimonian-Laird start, constrained to `tau^2 >= 0`.
pub fn reml_tau2(y: &[f64], v: &[f64], opts: &FitOptions) -> Result<f64> {
    if y.len() != v.len() || y.len() < 2 {
        return Err(Error::InsufficientData("univariate REML needs at least 2 studies".into()));
    }
    if v.iter().any(|v| !(v.is_finite() && *v > 0.0)) || y.iter().any(|y| !y.is_finite()) {
        return Err(Error::InvalidDataset("variances must be positive and effects finite".into()));
    }
    let stats = |t2: f64| {
        let w: Vec<f64> = v.iter().map(|v| 1.0 / (v + t2)).collect();
        let sw: f64 = w.iter().sum();
        let mu = y.iter().zip(&w).map(|(y, w)| y * w).sum::<f64>() / sw;
        let sw2: f64 = w.iter().map(|w| w * w).sum();
        let sw3: f64 = w.iter().map(|w| w * w * w).sum();
        let q2: f64 = y.iter().zip(&w).map(|(y, w)| w * w * (y - mu).powi(2)).sum();
        let score = 0.5 * (q2 - sw + sw2 / sw);
        let info = 0.5 * (sw2 - 2.0 * sw3 / sw + (sw2 / sw).powi(2));
        (score, info)
    };
    let sw: f64 = v.iter().map(|v| 1.0 / v).sum();
    let sw2: f64 = v.iter().map(|v| 1.0 / (v * v)).sum();
    let fixed = y.iter().zip(v).map(|(y, v)| y / v).sum::<f64>() / sw;
    let q: f64 = y.iter().zip(v).map(|(y, v)| (y - fixed).powi(2) / v).sum();
    let mut t2 = ((q - (y.len() as f64 - 1.0)) / (sw - sw2 / sw)).max(0.0);
    for _ in 0..opts.max_iterations {
        let (score, info) = stats(t2);
        if !(info > 0.0) {
            break;
        }
        let next = (t2 + score / info).max(0.0);
        let step = (next - t2).abs();
        t2 = next;
        if step <= 1e-12 * t2.max(1.0) {
            return Ok(if t2 < TAU2_ZERO { 0.0 } else { t2 });
        }
    }
    let (score, _) = stats(t2);
    if t2 == 0.0 && score <= 0.0 {
        return Ok(0.0);
    }
    Err(Error::InvalidParams("univariate REML did not converge".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Study;
    use approx::assert_relative_eq;

    fn univariate(ys: &[f64], se: f64) -> MetaDataset {
        MetaDataset::from_studies(
            ys.iter()
                .enumerate()
                .map(|(i, &y)| Study::partial(format!("s{i}"), 0, y, se).unwrap())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn univariate_reml_equal_variances_closed_form() {
        // With a common variance s0^2, REML gives tau^2 = max(0, S^2 - s0^2).
        let y = [0.3, -1.1, 2.4, 0.8, 1.6, -0.2];
        let n = y.len() as f64;
        let mean = y.iter().sum::<f64>() / n;
        let s2 = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        for s0sq in [0.1, 0.5, s2 + 0.3] {
            let t2 = reml_tau2(&y, &[s0sq; 6], &FitOptions::default()).unwrap();
            assert_relative_eq!(t2, (s2 - s0sq).max(0.0), epsilon = 1e-9);
        }
    }

    #[test]
    fn univariate_reml_agrees_with_dataset_fit() {
        let y = [0.3, -1.1, 2.4, 0.8, 1.6, -0.2, 0.9];
        let se = [0.2, 0.5, 0.3, 0.8, 0.4, 0.25, 0.6];
        let studies = y
            .iter()
            .zip(&se)
            .enumerate()
            .map(|(i, (&y, &s))| Study::partial(format!("s{i}"), 0, y, s).unwrap())
            .collect();
        let data = MetaDataset::from_studies(studies).unwrap();
        let fit = reml_fit(&data, &FitOptions::default()).unwrap();
        let v: Vec<f64> = se.iter().map(|s| s * s).collect();
        let t2 = reml_tau2(&y, &v, &FitOptions::default()).unwrap();
        assert_relative_eq!(t2, fit.params.tau2[0], epsilon = 1e-7);
    }

    #[test]
    fn equal_variance_closed_form() {
        // REML for y_i ~ N(mu, s0^2 + tau^2) iid: tau^2 = max(0, sample variance - s0^2).
        let ys = [0.3, -1.2, 2.5, 0.8, 1.9, -0.4, 1.1];
        let n = ys.len() as f64;
        let mean = ys.iter().sum::<f64>() / n;
        let var = ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (n - 1.0);
        for s0 in [0.5, 1.0, 1.6] {
            let fit = reml_fit(&univariate(&ys, s0), &FitOptions::default()).unwrap();
            let expected = (var - s0 * s0).max(0.0);
            assert_relative_eq!(fit.params.tau2[0], expected, epsilon = 1e-7);
            assert_relative_eq!(fit.params.beta[0], mean, epsilon = 1e-9);
            assert_eq!(fit.fitted, [true, false]);
        }
    }

    #[test]
    fn constant_effects_hit_zero_boundary() {
        let studies = (0..6)
            .map(|i| Study::complete(format!("s{i}"), [0.7, -0.2], [0.3 + 0.1 * i as f64, 0.5], 0.2).unwrap())
            .collect();
        let fit = reml_fit(&MetaDataset::from_studies(studies).unwrap(), &FitOptions::default()).unwrap();
        assert_eq!(fit.params.tau2, [0.0, 0.0]);
        assert!(fit.boundary);
        assert_relative_eq!(fit.params.beta[0], 0.7, epsilon = 1e-12);
    }

    #[test]
    fn identical_studies_short_circuit() {
        let studies = (0..4)
            .map(|i| Study::complete(format!("s{i}"), [0.7, -0.2], [0.4, 0.5], 0.2).unwrap())
            .collect();
        let fit = reml_fit(&MetaDataset::from_studies(studies).unwrap(), &FitOptions::default()).unwrap();
        assert_eq!(fit.params.tau2, [0.0, 0.0]);
        assert_eq!(fit.params.rho_b, 0.0);
        assert!(fit.boundary && fit.converged);
    }

    #[test]
    fn single_study_on_an_outcome_is_insufficient() {
        let studies = vec![
            Study::complete("a", [0.1, 0.2], [1.0, 1.0], 0.0).unwrap(),
            Study::partial("b", 0, 0.5, 1.0).unwrap(),
            Study::partial("c", 0, -0.5, 1.0).unwrap(),
        ];
        let err = reml_fit(&MetaDataset::from_studies(studies).unwrap(), &FitOptions::default());
        assert!(matches!(err, Err(Error::InsufficientData(_))));
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let studies = vec![
            Study::complete("a", [0.1, 0.9], [0.3, 0.5], 0.4).unwrap(),
            Study::complete("b", [1.3, 0.2], [0.6, 0.2], -0.2).unwrap(),
            Study::complete("c", [-0.8, -1.0], [0.4, 0.7], 0.1).unwrap(),
            Study::partial("d", 1, 2.0, 0.9).unwrap(),
            Study::partial("e", 0, 0.4, 0.25).unwrap(),
            Study::complete("f", [0.6, 1.4], [0.5, 0.5], 0.6).unwrap(),
        ];
        let problem = Problem::new(&MetaDataset::from_studies(studies).unwrap()).unwrap();
        let l = [0.8, 0.3, 0.6];
        let (_, g) = problem.gradient(&l).unwrap();
        for k in 0..3 {
            let h = 1e-6;
            let mut lp = l;
            lp[k] += h;
            let mut lm = l;
            lm[k] -= h;
            let fd = (problem.loglik(&lp).unwrap() - problem.loglik(&lm).unwrap()) / (2.0 * h);
            assert_relative_eq!(g[k], fd, epsilon = 1e-7, max_relative = 1e-6);
        }
    }
}
