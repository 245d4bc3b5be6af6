//! GMM objective, one- and two-step estimation, numerical Jacobian and sandwich covariance.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{structural_report, ConditionReport};
use crate::error::{Error, Result};
use crate::levy_model::{cal_b, cal_c, theta_to_matrices_unchecked, LevySpec, ThetaVector};
use crate::moments::{model_moment_vector, MomentVector};
use crate::optim::{nelder_mead, NelderMeadConfig};
use crate::sample_stats::{empirical_moment_vector, long_run_cov, CovKind};
use crate::simulate::ReturnsSample;
use crate::tensor_ops::{cond2, spectral_abscissa, sym_eigenvalues, symmetrize};

pub const PENALTY_BASE: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightKind {
    Identity,
    Basic,
    Truncated(usize),
    Diag,
}

impl WeightKind {
    pub fn cov_kind(&self) -> Option<CovKind> {
        match *self {
            WeightKind::Identity => None,
            WeightKind::Basic => Some(CovKind::Basic),
            WeightKind::Truncated(m) => Some(CovKind::Truncated(m)),
            WeightKind::Diag => Some(CovKind::Diag),
        }
    }
}

impl fmt::Display for WeightKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WeightKind::Identity => write!(f, "identity"),
            WeightKind::Basic => write!(f, "basic"),
            WeightKind::Truncated(m) => write!(f, "truncated:{m}"),
            WeightKind::Diag => write!(f, "diag"),
        }
    }
}

impl FromStr for WeightKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(WeightKind::Identity),
            "basic" => Ok(WeightKind::Basic),
            "diag" => Ok(WeightKind::Diag),
            _ => s
                .strip_prefix("truncated:")
                .and_then(|m| m.parse().ok())
                .map(WeightKind::Truncated)
                .ok_or_else(|| Error::InvalidConfig(format!("unknown weight '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimationResult {
    pub theta_hat: ThetaVector,
    pub objective: f64,
    pub converged: bool,
    pub reason: String,
    pub weight_kind: WeightKind,
    pub iterations: usize,
    pub evals: usize,
    pub sandwich_cov: Option<DMatrix<f64>>,
    pub condition_report: Option<ConditionReport>,
    /// Repairs applied to the weight matrix and other non-fatal notes.
    pub notes: Vec<String>,
    pub first_step: Option<Box<EstimationResult>>,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

impl EstimationResult {
    pub fn std_errors(&self) -> Option<Vec<f64>> {
        self.sandwich_cov.as_ref().map(|c| c.diagonal().iter().map(|v| v.max(0.0).sqrt()).collect())
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "theta_hat": self.theta_hat.values,
            "bounds": self.theta_hat.bounds,
            "objective": self.objective,
            "converged": self.converged,
            "reason": self.reason,
            "weight_kind": self.weight_kind.to_string(),
            "iterations": self.iterations,
            "evals": self.evals,
            "sandwich_cov": self.sandwich_cov.as_ref().map(rows),
            "std_errors": self.std_errors(),
            "condition_report": self.condition_report,
            "notes": self.notes,
            "first_step": self.first_step.as_ref().map(|r| r.to_json()),
        })
    }
}

/// Zero when theta is admissible, otherwise a positive measure of the violation.
pub fn feasibility_distance(theta: &[f64], bounds: Option<&[(f64, f64)]>, levy: &LevySpec) -> f64 {
    let mut dist = 0.0;
    if let Some(bounds) = bounds {
        for (v, (lo, hi)) in theta.iter().zip(bounds) {
            dist += (lo - v).max(0.0) + (v - hi).max(0.0);
        }
    }
    dist += (1e-12 - theta[1]).max(0.0);
    let Ok(p) = theta_to_matrices_unchecked(theta) else { return f64::INFINITY };
    let c_min = sym_eigenvalues(&p.c)[0];
    dist += (1e-12 - c_min).max(0.0);
    dist += (spectral_abscissa(&cal_b(&p, levy.sigma_l)) + 1e-10).max(0.0);
    dist += (spectral_abscissa(&cal_c(&p, levy.sigma_l, levy.rho_l)) + 1e-10).max(0.0);
    if dist.is_nan() {
        f64::INFINITY
    } else {
        dist
    }
}

fn quad_form(diff: &nalgebra::DVector<f64>, omega: &DMatrix<f64>) -> f64 {
    diff.dot(&(omega * diff))
}

/// (k_hat - k_theta)^T omega (k_hat - k_theta), or PENALTY_BASE + distance outside the admissible set.
pub fn objective(
    theta: &[f64],
    k_hat: &MomentVector,
    omega: &DMatrix<f64>,
    levy: &LevySpec,
    bounds: Option<&[(f64, f64)]>,
) -> Result<f64> {
    let len = k_hat.values.len();
    if omega.nrows() != len || omega.ncols() != len {
        return Err(Error::DimensionMismatch(format!("weight is {}x{}, moments have {len}", omega.nrows(), omega.ncols())));
    }
    let dist = feasibility_distance(theta, bounds, levy);
    if dist > 0.0 {
        return Ok(PENALTY_BASE + dist.min(PENALTY_BASE));
    }
    let p = theta_to_matrices_unchecked(theta)?;
    match model_moment_vector(&p, levy, k_hat.delta, k_hat.r) {
        Ok(k) => {
            let v = quad_form(&(&k_hat.values - k.values), omega);
            Ok(if v.is_finite() { v.max(0.0) } else { PENALTY_BASE })
        }
        Err(_) => Ok(PENALTY_BASE),
    }
}

/// Nelder-Mead minimization of the GMM objective from `init`.
pub fn estimate(
    k_hat: &MomentVector,
    omega: &DMatrix<f64>,
    weight_kind: WeightKind,
    init: &ThetaVector,
    levy: &LevySpec,
    cfg: &NelderMeadConfig,
) -> Result<EstimationResult> {
    if k_hat.r < 2 {
        return Err(Error::InvalidConfig(format!("r must be at least 2, got {}", k_hat.r)));
    }
    let bounds = init.bounds.as_slice();
    if feasibility_distance(&init.values, Some(bounds), levy) > 0.0 {
        return Err(Error::InfeasibleInit);
    }
    objective(&init.values, k_hat, omega, levy, Some(bounds))?;
    let step: Vec<f64> = bounds.iter().map(|(lo, hi)| 0.1 * (hi - lo)).collect();
    let f = |x: &[f64]| objective(x, k_hat, omega, levy, Some(bounds)).unwrap_or(f64::INFINITY);
    let res = nelder_mead(f, &init.values, &step, cfg);
    Ok(EstimationResult {
        theta_hat: ThetaVector { values: res.x, bounds: init.bounds.clone() },
        objective: res.f,
        converged: res.converged,
        reason: res.reason,
        weight_kind,
        iterations: res.iterations,
        evals: res.evals,
        sandwich_cov: None,
        condition_report: None,
        notes: Vec::new(),
        first_step: None,
    })
}

/// Inverse of an estimated long-run covariance, repairing it when it is not positive definite.
pub fn weight_from_cov(sigma: &DMatrix<f64>, kind: CovKind) -> Result<(DMatrix<f64>, Vec<String>)> {
    let n = sigma.nrows();
    if kind == CovKind::Diag {
        let diag = sigma.diagonal();
        if diag.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::WeightNotInvertible);
        }
        return Ok((DMatrix::from_diagonal(&diag.map(|v| 1.0 / v)), Vec::new()));
    }
    let s = symmetrize(sigma);
    if let Some(ch) = s.clone().cholesky() {
        if cond2(&s) < 1e12 {
            return Ok((ch.inverse(), Vec::new()));
        }
    }
    let mut notes = Vec::new();
    let eig = s.clone().symmetric_eigen();
    let lmax = eig.eigenvalues.max();
    if lmax > 0.0 && lmax.is_finite() {
        let floor = 1e-10 * lmax;
        let clipped = eig.eigenvalues.iter().filter(|&&l| l < floor).count();
        let inv = eig.eigenvalues.map(|l| 1.0 / l.max(floor));
        let w = &eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose();
        notes.push(format!("weight: clipped {clipped} of {n} eigenvalues at 1e-10 * lambda_max"));
        return Ok((symmetrize(&w), notes));
    }
    let diag = s.diagonal();
    if diag.iter().all(|&v| v > 0.0) {
        notes.push("weight: covariance unusable, fell back to the diagonal".into());
        return Ok((DMatrix::from_diagonal(&diag.map(|v| 1.0 / v)), notes));
    }
    Err(Error::WeightNotInvertible)
}

/// Step 1 with the identity weight, step 2 with the inverse estimated long-run covariance.
pub fn two_step_estimate(
    sample: &ReturnsSample,
    r: usize,
    weight: WeightKind,
    init: &ThetaVector,
    levy: &LevySpec,
    cfg: &NelderMeadConfig,
) -> Result<EstimationResult> {
    let kind = weight
        .cov_kind()
        .ok_or_else(|| Error::InvalidConfig("the second step needs an estimated covariance weight".into()))?;
    let k_hat = empirical_moment_vector(sample, r)?;
    let len = k_hat.values.len();
    let first = estimate(&k_hat, &DMatrix::identity(len, len), WeightKind::Identity, init, levy, cfg)?;
    let cov = long_run_cov(sample, r, kind)?;
    let (omega, mut notes) = weight_from_cov(&cov.matrix, kind)?;
    if !cov.psd_flag {
        notes.push(format!("long-run covariance ({}) is not positive semidefinite", kind.label()));
    }
    let start = ThetaVector { values: first.theta_hat.values.clone(), bounds: init.bounds.clone() };
    let mut second = estimate(&k_hat, &omega, weight, &start, levy, cfg)?;
    match sandwich_covariance(&second.theta_hat.values, &cov.matrix, &omega, levy, sample.delta, r, sample.n()) {
        Ok(c) => second.sandwich_cov = Some(c),
        Err(e) => notes.push(format!("sandwich covariance unavailable: {e}")),
    }
    if let Ok(p) = theta_to_matrices_unchecked(&second.theta_hat.values) {
        second.condition_report = Some(structural_report(&p, levy, sample.delta));
    }
    second.notes = notes;
    second.first_step = Some(Box::new(first));
    Ok(second)
}

/// Central differences of k_theta with explicit per-coordinate steps.
pub fn central_difference(theta: &[f64], levy: &LevySpec, delta: f64, r: usize, steps: &[f64]) -> Result<DMatrix<f64>> {
    let eval = |t: &[f64]| -> Result<nalgebra::DVector<f64>> {
        Ok(model_moment_vector(&theta_to_matrices_unchecked(t)?, levy, delta, r)?.values)
    };
    let len = MomentVector::len_for(2, r);
    let mut jac = DMatrix::zeros(len, theta.len());
    for (i, &h) in steps.iter().enumerate() {
        let mut up = theta.to_vec();
        let mut down = theta.to_vec();
        up[i] += h;
        down[i] -= h;
        jac.set_column(i, &((eval(&up)? - eval(&down)?) / (2.0 * h)));
    }
    Ok(jac)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Jacobian {
    pub matrix: DMatrix<f64>,
    /// Entries whose value at twice the step differs by more than 1e-4 relative.
    pub flagged: Vec<(usize, usize)>,
}

/// Finite-difference Jacobian of k_theta with step max(h, h |theta_i|) and a Richardson check.
pub fn jacobian_k(theta: &[f64], levy: &LevySpec, delta: f64, r: usize, h: f64) -> Result<Jacobian> {
    let steps: Vec<f64> = theta.iter().map(|t| h.max(h * t.abs())).collect();
    for (i, &s) in steps.iter().enumerate() {
        for sign in [-2.0, 2.0] {
            let mut t = theta.to_vec();
            t[i] += sign * s;
            if feasibility_distance(&t, None, levy) > 0.0 {
                return Err(Error::BoundaryTooClose(i));
            }
        }
    }
    let matrix = central_difference(theta, levy, delta, r, &steps)?;
    let doubled: Vec<f64> = steps.iter().map(|s| 2.0 * s).collect();
    let check = central_difference(theta, levy, delta, r, &doubled)?;
    let floor = 1e-8 * matrix.amax();
    let mut flagged = Vec::new();
    for j in 0..matrix.ncols() {
        for i in 0..matrix.nrows() {
            let (a, b) = (matrix[(i, j)], check[(i, j)]);
            if (a - b).abs() > 1e-4 * a.abs().max(floor) {
                flagged.push((i, j));
            }
        }
    }
    Ok(Jacobian { matrix, flagged })
}

/// J^{-1} I J^{-1} / n with J = G^T W G and I = G^T W S W G.
pub fn sandwich_from_jacobian(g: &DMatrix<f64>, sigma: &DMatrix<f64>, omega: &DMatrix<f64>, n: usize) -> Result<DMatrix<f64>> {
    let gt_w = g.transpose() * omega;
    let j = &gt_w * g;
    let c = cond2(&j);
    if !(c < 1e10) {
        return Err(Error::SingularJ(c));
    }
    let j_inv = j.try_inverse().ok_or(Error::SingularJ(f64::INFINITY))?;
    let info = &gt_w * sigma * gt_w.transpose();
    Ok(symmetrize(&(&j_inv * info * &j_inv / n as f64)))
}

pub fn sandwich_covariance(
    theta_hat: &[f64],
    sigma: &DMatrix<f64>,
    omega: &DMatrix<f64>,
    levy: &LevySpec,
    delta: f64,
    r: usize,
    n: usize,
) -> Result<DMatrix<f64>> {
    let jac = jacobian_k(theta_hat, levy, delta, r, 1e-6)?;
    sandwich_from_jacobian(&jac.matrix, sigma, omega, n)
}
