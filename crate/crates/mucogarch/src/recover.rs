//! Closed-form recovery of (A, B, C) from exact or estimated moments.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::levy_model::{cal_b, is_positive_definite, LevySpec, MucogarchParams};
use crate::moments::MomentVector;
use crate::tensor_ops::{cond2, expm, kron, logm, spectral_abscissa, sym_restrict, symmetrize, SymOperator};

const GAP_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Residuals {
    /// |sym(e^{calB delta}) - recovered exponential|_F
    pub exp_b: f64,
    /// |sym(calB(A, B)) - log generator|_F
    pub cal_b: f64,
    /// |mean_sq(A, B, C) - observed mean|_2
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryResult {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub cal_b: DMatrix<f64>,
    pub residuals: Residuals,
    /// A(1,2) > 0, A(1,2) != A(2,1) and C positive definite.
    pub feasible: bool,
    /// (A row-wise, B11, B12, B22, C11, C12, C22)
    pub theta: Vec<f64>,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

impl RecoveryResult {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "A": rows(&self.a),
            "B": rows(&self.b),
            "C": rows(&self.c),
            "calB": rows(&self.cal_b),
            "residuals": self.residuals,
            "feasible": self.feasible,
            "theta": self.theta,
        })
    }

    pub fn params(&self) -> Result<MucogarchParams> {
        MucogarchParams::new(self.a.clone(), self.b.clone(), self.c.clone())
    }
}

/// e^{calB delta} on the symmetric matrices from acov(2) acov(1)^{-1}.
pub fn recover_exp_b(acov1: &DMatrix<f64>, acov2: &DMatrix<f64>) -> Result<SymOperator> {
    let s1 = sym_restrict(acov1).map_err(|_| Error::NotSymPreserving)?;
    let s2 = sym_restrict(acov2).map_err(|_| Error::NotSymPreserving)?;
    let c = cond2(&s1.matrix);
    if !(c < 1e10) {
        return Err(Error::SingularAcov(c));
    }
    let inv = s1.matrix.clone().try_inverse().ok_or(Error::SingularAcov(f64::INFINITY))?;
    SymOperator::new(s1.d, s2.matrix * inv)
}

/// Principal logarithm divided by delta, in vech coordinates.
pub fn log_sym_generator(exp_b: &SymOperator, delta: f64) -> Result<DMatrix<f64>> {
    let limit = std::f64::consts::PI - 1e-10;
    for z in exp_b.matrix.clone().complex_eigenvalues().iter() {
        if z.norm() == 0.0 {
            return Err(Error::LogmBranchError);
        }
        if z.im != 0.0 && z.arg().abs() >= limit {
            return Err(Error::StripViolation);
        }
    }
    Ok(logm(&exp_b.matrix)? / delta)
}

/// calB in vec coordinates from the recovered exponential, via the block structure.
pub fn log_to_cal_b(exp_b: &SymOperator, delta: f64, sigma_l: f64) -> Result<DMatrix<f64>> {
    let gen = log_sym_generator(exp_b, delta)?;
    let (a, b, _) = recover_ab_from_sym(&SymOperator::new(exp_b.d, gen)?, sigma_l)?;
    Ok(cal_b(&MucogarchParams { a, b, c: DMatrix::identity(exp_b.d, exp_b.d) }, sigma_l))
}

/// (A, B) from calB = B (x) I + I (x) B + sigma_L A (x) A, B symmetric, A(1,2) > 0.
pub fn recover_ab_from_cal_b(cb: &DMatrix<f64>, sigma_l: f64) -> Result<(DMatrix<f64>, DMatrix<f64>, f64)> {
    let d = crate::tensor_ops::int_sqrt(cb.nrows())
        .filter(|&d| d >= 2 && cb.is_square())
        .ok_or_else(|| Error::ShapeError("calB must be d^2 x d^2 with d >= 2".into()))?;
    // entry (p, q) of block (i, j)
    let blk = |i: usize, j: usize, p: usize, q: usize| cb[(i * d + p, j * d + q)];
    let sq = blk(0, 1, 0, 1) / sigma_l;
    if !(sq > 0.0) {
        return Err(Error::NegativeSquare(sq));
    }
    let a12 = sq.sqrt();
    let mut a = DMatrix::zeros(d, d);
    for p in 0..d {
        for q in 0..d {
            if p != q {
                a[(p, q)] = blk(0, 1, p, q) / (sigma_l * a12);
            }
        }
    }
    let gap = a[(0, 1)] - a[(1, 0)];
    if gap.abs() < GAP_TOL {
        return Err(Error::DegenerateAsymmetry(gap.abs()));
    }
    for k in 0..d {
        a[(k, k)] = (blk(k, k, 0, 1) - blk(k, k, 1, 0)) / (sigma_l * gap);
    }
    let mut b = DMatrix::zeros(d, d);
    for p in 0..d {
        for q in 0..d {
            b[(p, q)] = if p == q {
                (blk(p, p, p, p) - sigma_l * a[(p, p)] * a[(p, p)]) / 2.0
            } else {
                blk(0, 0, p, q) - sigma_l * a[(0, 0)] * a[(p, q)]
            };
        }
    }
    let b = symmetrize(&b);
    let rebuilt = cal_b(&MucogarchParams { a: a.clone(), b: b.clone(), c: DMatrix::identity(d, d) }, sigma_l);
    let residual = (rebuilt - cb).norm();
    Ok((a, b, residual))
}

fn sym_image(a11: f64, a12: f64, a21: f64, a22: f64, b: [f64; 3], s: f64) -> DMatrix<f64> {
    let [b11, b12, b22] = b;
    DMatrix::from_row_slice(
        3,
        3,
        &[
            2.0 * b11 + s * a11 * a11,
            2.0 * b12 + 2.0 * s * a11 * a12,
            s * a12 * a12,
            b12 + s * a11 * a21,
            b11 + b22 + s * (a11 * a22 + a12 * a21),
            b12 + s * a12 * a22,
            s * a21 * a21,
            2.0 * b12 + 2.0 * s * a21 * a22,
            2.0 * b22 + s * a22 * a22,
        ],
    )
}

/// (A, B) for d = 2 from the generator X -> BX + XB^T + sigma_L A X A^T on symmetric X.
pub fn recover_ab_from_sym(gen: &SymOperator, sigma_l: f64) -> Result<(DMatrix<f64>, DMatrix<f64>, f64)> {
    if gen.d != 2 {
        return Err(Error::DimensionMismatch("symmetric-subspace recovery is implemented for d = 2".into()));
    }
    let m = &gen.matrix;
    let s = sigma_l;
    let sq = m[(0, 2)] / s;
    if !(sq > 0.0) {
        return Err(Error::NegativeSquare(sq));
    }
    let a12 = sq.sqrt();
    let a21_abs = (m[(2, 0)] / s).max(0.0).sqrt();
    let k1 = (m[(0, 1)] / 2.0 - m[(1, 0)]) / s;
    let k2 = (m[(1, 2)] - m[(2, 1)] / 2.0) / s;
    let mut best: Option<(f64, DMatrix<f64>, DMatrix<f64>)> = None;
    let mut smallest_gap = f64::INFINITY;
    for a21 in [a21_abs, -a21_abs] {
        let gap = a12 - a21;
        smallest_gap = smallest_gap.min(gap.abs());
        if gap.abs() < GAP_TOL {
            continue;
        }
        let a11 = k1 / gap;
        let a22 = k2 / gap;
        let b12 = m[(1, 0)] - s * a11 * a21;
        let b11 = (m[(0, 0)] - s * a11 * a11) / 2.0;
        let b22 = (m[(2, 2)] - s * a22 * a22) / 2.0;
        let res = (sym_image(a11, a12, a21, a22, [b11, b12, b22], s) - m).norm();
        if best.as_ref().is_none_or(|(r, _, _)| res < *r) {
            let a = DMatrix::from_row_slice(2, 2, &[a11, a12, a21, a22]);
            let b = DMatrix::from_row_slice(2, 2, &[b11, b12, b12, b22]);
            best = Some((res, a, b));
        }
    }
    let (res, a, b) = best.ok_or(Error::DegenerateAsymmetry(smallest_gap))?;
    // the only admissible sign branch left does not reproduce the generator
    if smallest_gap < GAP_TOL && res > 1e-6 * m.norm().max(1.0) {
        return Err(Error::DegenerateAsymmetry(smallest_gap));
    }
    Ok((a, b, res))
}

/// vec C = (sigma_L + sigma_W)^{-1} delta^{-1} (B (+) B)^{-1} calB vec E(G G^T).
pub fn recover_c(
    mean_sq: &DVector<f64>,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    sigma_l: f64,
    sigma_w: f64,
    delta: f64,
) -> Result<DMatrix<f64>> {
    let d = a.nrows();
    let sb = spectral_abscissa(b);
    if !(sb < 0.0) {
        return Err(Error::UnstableB(sb));
    }
    let id = DMatrix::<f64>::identity(d, d);
    let bsum = kron(b, &id) + kron(&id, b);
    let cb = &bsum + kron(a, a) * sigma_l;
    let v = bsum.lu().solve(&(cb * mean_sq)).ok_or(Error::UnstableB(sb))? / ((sigma_l + sigma_w) * delta);
    Ok(symmetrize(&DMatrix::from_column_slice(d, d, v.as_slice())))
}

/// Reconstruct A from the images A X A^T of the basis matrices of the symmetric matrices.
pub fn identify_from_axa<F: Fn(&DMatrix<f64>) -> DMatrix<f64>>(action: F, d: usize) -> Result<DMatrix<f64>> {
    let unit = |i: usize, j: usize| {
        let mut e = DMatrix::zeros(d, d);
        e[(i, j)] = 1.0;
        e[(j, i)] = 1.0;
        e
    };
    let diag_images: Vec<DMatrix<f64>> = (0..d).map(|j| action(&unit(j, j))).collect();
    let scale = diag_images.iter().map(|m| m.amax()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let j = (0..d)
        .find(|&j| diag_images[j][(0, 0)] > 1e-12 * scale)
        .ok_or_else(|| Error::HypothesisViolated("first row of A is zero".into()))?;
    let mut a = DMatrix::zeros(d, d);
    let a1j = diag_images[j][(0, 0)].sqrt();
    for i in 0..d {
        // (A E_jj A^T)_{1i} = A_1j A_ij
        a[(i, j)] = diag_images[j][(0, i)] / a1j;
    }
    for k in (0..d).filter(|&k| k != j) {
        let img = action(&unit(j, k));
        // (A (E_jk + E_kj) A^T)_{1i} = A_1j A_ik + A_1k A_ij
        let a1k = img[(0, 0)] / (2.0 * a1j);
        for i in 0..d {
            a[(i, k)] = if i == 0 { a1k } else { (img[(0, i)] - a1k * a[(i, j)]) / a1j };
        }
    }
    Ok(a)
}

/// Data-driven starting point from a moment vector with r >= 2.
pub fn moment_init(k: &MomentVector, levy: &LevySpec) -> Result<RecoveryResult> {
    if k.r < 2 {
        return Err(Error::InsufficientData(format!("moment initialization needs r >= 2, got {}", k.r)));
    }
    if k.d != 2 {
        return Err(Error::DimensionMismatch("moment initialization is implemented for d = 2".into()));
    }
    let delta = k.delta;
    let mean = k.mean_block();
    let exp_b = recover_exp_b(&k.central_lag(1), &k.central_lag(2))?;
    let gen = log_sym_generator(&exp_b, delta)?;
    let (a, b, ab_res) = recover_ab_from_sym(&SymOperator::new(2, gen)?, levy.sigma_l)?;
    let c = recover_c(&mean, &a, &b, levy.sigma_l, levy.sigma_w, delta)?;
    let params = MucogarchParams { a: a.clone(), b: b.clone(), c: c.clone() };
    let cb = cal_b(&params, levy.sigma_l);
    let exp_res = (sym_restrict(&expm(&(&cb * delta)))?.matrix - &exp_b.matrix).norm();
    let mean_fit = crate::moments::mean_sq_return(&params, levy, delta)
        .map(|m| (m - &mean).norm())
        .unwrap_or(f64::NAN);
    let feasible = a[(0, 1)] > 0.0 && (a[(0, 1)] - a[(1, 0)]).abs() > GAP_TOL && is_positive_definite(&c);
    let theta = vec![
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
    ];
    Ok(RecoveryResult {
        a,
        b,
        c,
        cal_b: cb,
        residuals: Residuals { exp_b: exp_res, cal_b: ab_res, mean: mean_fit },
        feasible,
        theta,
    })
}
