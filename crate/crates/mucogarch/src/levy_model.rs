//! Model parameters, the driving Levy noise and the drift operators built from them.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor_ops::{big_k_matrix, big_q_matrix, check_symmetric, kron, SquareOperator};

/// Number of free parameters in the d = 2 layout.
pub const THETA_DIM: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct MucogarchParams {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
}

impl MucogarchParams {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>) -> Result<Self> {
        let d = a.nrows();
        for (name, m) in [("A", &a), ("B", &b), ("C", &c)] {
            if m.nrows() != d || m.ncols() != d {
                return Err(Error::ShapeError(format!("{name} must be {d}x{d}")));
            }
        }
        check_symmetric(&c, 1e-10)?;
        if !is_positive_definite(&c) {
            return Err(Error::ConstraintViolation("C is not positive definite".into()));
        }
        Ok(Self { a, b, c })
    }

    pub fn d(&self) -> usize {
        self.a.nrows()
    }
}

pub(crate) fn is_positive_definite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|x| x.is_finite()) && m.clone().cholesky().is_some()
}

/// Brownian part plus isotropic Gaussian compound-Poisson jumps N(0, s I) at rate `cpp_rate`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevySpec {
    pub sigma_w: f64,
    pub cpp_rate: f64,
    pub jump_scale: f64,
    pub sigma_l: f64,
    pub rho_l: f64,
}

impl LevySpec {
    pub fn new(sigma_w: f64, cpp_rate: f64, jump_scale: f64) -> Result<Self> {
        if !(sigma_w >= 0.0 && sigma_w.is_finite()) {
            return Err(Error::InvalidConfig(format!("sigma_W must be >= 0, got {sigma_w}")));
        }
        if !(cpp_rate > 0.0 && cpp_rate.is_finite()) || !(jump_scale > 0.0 && jump_scale.is_finite()) {
            return Err(Error::InvalidConfig("jump rate and jump scale must be positive".into()));
        }
        Ok(Self {
            sigma_w,
            cpp_rate,
            jump_scale,
            sigma_l: cpp_rate * jump_scale,
            rho_l: cpp_rate * jump_scale * jump_scale,
        })
    }

    /// Build from a full jump covariance, which must be a multiple of the identity.
    pub fn from_jump_cov(sigma_w: f64, cpp_rate: f64, jump_cov: &DMatrix<f64>) -> Result<Self> {
        let s = jump_scale_of(jump_cov)?;
        Self::new(sigma_w, cpp_rate, s)
    }
}

fn jump_scale_of(jump_cov: &DMatrix<f64>) -> Result<f64> {
    if !jump_cov.is_square() || jump_cov.nrows() == 0 {
        return Err(Error::NonIsotropicJumps);
    }
    let s = jump_cov[(0, 0)];
    let n = jump_cov.nrows();
    let dev = (jump_cov - DMatrix::<f64>::identity(n, n) * s).amax();
    if dev > 1e-12 || s <= 0.0 {
        return Err(Error::NonIsotropicJumps);
    }
    Ok(s)
}

/// (sigma_L, rho_L) for Gaussian jumps with covariance `jump_cov` arriving at `cpp_rate`.
pub fn levy_constants(cpp_rate: f64, jump_cov: &DMatrix<f64>, sigma_w: f64) -> Result<(f64, f64)> {
    let spec = LevySpec::from_jump_cov(sigma_w, cpp_rate, jump_cov)?;
    Ok((spec.sigma_l, spec.rho_l))
}

/// Row-wise A, then (B11, B12, B22), then (C11, C12, C22).
pub fn theta_to_matrices(theta: &[f64]) -> Result<MucogarchParams> {
    if theta.len() != THETA_DIM {
        return Err(Error::DimensionMismatch(format!("theta has {} entries, expected {THETA_DIM}", theta.len())));
    }
    if theta[1] <= 0.0 {
        return Err(Error::ConstraintViolation(format!("A(1,2) = {} must be positive", theta[1])));
    }
    let t = theta;
    let a = DMatrix::from_row_slice(2, 2, &[t[0], t[1], t[2], t[3]]);
    let b = DMatrix::from_row_slice(2, 2, &[t[4], t[5], t[5], t[6]]);
    let c = DMatrix::from_row_slice(2, 2, &[t[7], t[8], t[8], t[9]]);
    MucogarchParams::new(a, b, c)
}

/// Same layout as [`theta_to_matrices`] without the sign and definiteness checks.
pub fn theta_to_matrices_unchecked(theta: &[f64]) -> Result<MucogarchParams> {
    if theta.len() != THETA_DIM {
        return Err(Error::DimensionMismatch(format!("theta has {} entries, expected {THETA_DIM}", theta.len())));
    }
    let t = theta;
    Ok(MucogarchParams {
        a: DMatrix::from_row_slice(2, 2, &[t[0], t[1], t[2], t[3]]),
        b: DMatrix::from_row_slice(2, 2, &[t[4], t[5], t[5], t[6]]),
        c: DMatrix::from_row_slice(2, 2, &[t[7], t[8], t[8], t[9]]),
    })
}

pub fn matrices_to_theta(p: &MucogarchParams) -> Result<Vec<f64>> {
    if p.d() != 2 {
        return Err(Error::DimensionMismatch("the theta layout is defined for d = 2".into()));
    }
    if (p.b[(0, 1)] - p.b[(1, 0)]).abs() > 1e-12 * p.b.amax().max(1.0) {
        return Err(Error::ConstraintViolation("B must be symmetric in the theta layout".into()));
    }
    let (a, b, c) = (&p.a, &p.b, &p.c);
    Ok(vec![
        a[(0, 0)],
        a[(0, 1)],
        a[(1, 0)],
        a[(1, 1)],
        b[(0, 0)],
        b[(0, 1)],
        b[(1, 1)],
        c[(0, 0)],
        c[(0, 1)],
        c[(1, 1)],
    ])
}

/// Parameter vector together with the compact box it lives in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaVector {
    pub values: Vec<f64>,
    pub bounds: Vec<(f64, f64)>,
}

impl ThetaVector {
    pub fn new(values: Vec<f64>, bounds: Vec<(f64, f64)>) -> Result<Self> {
        if values.len() != bounds.len() {
            return Err(Error::DimensionMismatch("values and bounds differ in length".into()));
        }
        for (i, (v, (lo, hi))) in values.iter().zip(&bounds).enumerate() {
            if !lo.is_finite() || !hi.is_finite() || lo > hi {
                return Err(Error::InvalidConfig(format!("bad bounds for coordinate {i}")));
            }
            if v < lo || v > hi {
                return Err(Error::ConstraintViolation(format!("coordinate {i} = {v} outside [{lo}, {hi}]")));
            }
        }
        Ok(Self { values, bounds })
    }

    /// Box `center_i +- frac * |center_i|` (width `frac` when the center is zero).
    pub fn box_around(center: &[f64], frac: f64) -> Vec<(f64, f64)> {
        center
            .iter()
            .map(|&c| {
                let h = if c == 0.0 { frac } else { frac * c.abs() };
                (c - h, c + h)
            })
            .collect()
    }
}

/// B (x) I + I (x) B + sigma_L A (x) A.
pub fn cal_b(p: &MucogarchParams, sigma_l: f64) -> SquareOperator {
    let d = p.d();
    let id = DMatrix::<f64>::identity(d, d);
    kron(&p.b, &id) + kron(&id, &p.b) + kron(&p.a, &p.a) * sigma_l
}

/// (A (x) A) (x) (A (x) A) times rho_L (Qcal + Kcal Qcal + I).
pub(crate) fn cal_a_r(p: &MucogarchParams, rho_l: f64) -> SquareOperator {
    let d = p.d();
    let n = d * d * d * d;
    let aa = kron(&p.a, &p.a);
    let big_a = kron(&aa, &aa);
    let q = big_q_matrix(d);
    let r = (&q + big_k_matrix(d) * &q + DMatrix::<f64>::identity(n, n)) * rho_l;
    big_a * r
}

/// calB (x) I + I (x) calB + calA calR.
pub fn cal_c(p: &MucogarchParams, sigma_l: f64, rho_l: f64) -> SquareOperator {
    let d2 = p.d() * p.d();
    let id = DMatrix::<f64>::identity(d2, d2);
    let b = cal_b(p, sigma_l);
    kron(&b, &id) + kron(&id, &b) + cal_a_r(p, rho_l)
}
