//! Vec/vech calculus, Kronecker and permutation operators on d x d matrices.
//!
//! Everything is column-major: `vec` stacks columns, and entry (i, j) of a
//! d x d matrix sits at index `j * d + i`.

mod matfun;

pub use matfun::{expm, logm};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Dense d^2 x d^2 (or d^4 x d^4) operator acting on vec coordinates.
pub type SquareOperator = DMatrix<f64>;

/// Linear map of the symmetric matrices to themselves, written in vech coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct SymOperator {
    pub d: usize,
    pub matrix: DMatrix<f64>,
}

impl SymOperator {
    pub fn new(d: usize, matrix: DMatrix<f64>) -> Result<Self> {
        let m = vech_len(d);
        if matrix.nrows() != m || matrix.ncols() != m {
            return Err(Error::ShapeError(format!(
                "vech operator for d={d} must be {m}x{m}, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        Ok(Self { d, matrix })
    }
}

pub fn vech_len(d: usize) -> usize {
    d * (d + 1) / 2
}

/// Side length `d` with `d * d == n`, if any.
pub fn int_sqrt(n: usize) -> Option<usize> {
    let d = (n as f64).sqrt().round() as usize;
    (d * d == n).then_some(d)
}

pub fn vec(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

pub fn unvec(v: &DVector<f64>, d: usize) -> Result<DMatrix<f64>> {
    if v.len() != d * d {
        return Err(Error::ShapeError(format!(
            "cannot unvec length {} into {d}x{d}",
            v.len()
        )));
    }
    Ok(DMatrix::from_column_slice(d, d, v.as_slice()))
}

/// Largest absolute entry of `m - m^T`, relative to `max(1, max |m_ij|)`.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let scale = m.amax().max(1.0);
    (m - m.transpose()).amax() / scale
}

pub fn check_symmetric(m: &DMatrix<f64>, tol: f64) -> Result<()> {
    if !m.is_square() {
        return Err(Error::ShapeError(format!("{}x{} is not square", m.nrows(), m.ncols())));
    }
    let a = asymmetry(m);
    if a > tol {
        return Err(Error::NonSymmetricInput(a));
    }
    Ok(())
}

pub fn vech(m: &DMatrix<f64>) -> Result<DVector<f64>> {
    check_symmetric(m, 1e-10)?;
    let d = m.nrows();
    let mut out = Vec::with_capacity(vech_len(d));
    for j in 0..d {
        for i in j..d {
            out.push(m[(i, j)]);
        }
    }
    Ok(DVector::from_vec(out))
}

pub fn unvech(v: &DVector<f64>, d: usize) -> Result<DMatrix<f64>> {
    if v.len() != vech_len(d) {
        return Err(Error::ShapeError(format!("vech length {} does not fit d={d}", v.len())));
    }
    let mut m = DMatrix::zeros(d, d);
    let mut k = 0;
    for j in 0..d {
        for i in j..d {
            m[(i, j)] = v[k];
            m[(j, i)] = v[k];
            k += 1;
        }
    }
    Ok(m)
}

/// D_d with D_d vech(X) = vec(X) for symmetric X.
pub fn duplication_matrix(d: usize) -> DMatrix<f64> {
    let mut dm = DMatrix::zeros(d * d, vech_len(d));
    let mut k = 0;
    for j in 0..d {
        for i in j..d {
            dm[(j * d + i, k)] = 1.0;
            dm[(i * d + j, k)] = 1.0;
            k += 1;
        }
    }
    dm
}

/// L_d with L_d vec(X) = vech(X).
pub fn elimination_matrix(d: usize) -> DMatrix<f64> {
    let mut l = DMatrix::zeros(vech_len(d), d * d);
    let mut k = 0;
    for j in 0..d {
        for i in j..d {
            l[(k, j * d + i)] = 1.0;
            k += 1;
        }
    }
    l
}

pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

/// K_d with K_d vec(A) = vec(A^T).
pub fn commutation_matrix(d: usize) -> SquareOperator {
    let mut k = DMatrix::zeros(d * d, d * d);
    for i in 0..d {
        for j in 0..d {
            k[(j * d + i, i * d + j)] = 1.0;
        }
    }
    k
}

/// The index permutation with Q(vec(X) vec(Z)^T) = X (x) Z.
pub fn q_map(x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !x.is_square() {
        return Err(Error::ShapeError(format!("{}x{} is not square", x.nrows(), x.ncols())));
    }
    let d = int_sqrt(x.nrows())
        .ok_or_else(|| Error::ShapeError(format!("side {} is not a perfect square", x.nrows())))?;
    let mut out = DMatrix::zeros(d * d, d * d);
    for k in 0..d {
        for l in 0..d {
            for p in 0..d {
                for q in 0..d {
                    out[(k * d + l, p * d + q)] = x[(k * d + p, l * d + q)];
                }
            }
        }
    }
    Ok(out)
}

/// Matrix of vec o Q o vec^{-1} on d^4 coordinates.
pub fn big_q_matrix(d: usize) -> SquareOperator {
    let n = d * d;
    let mut m = DMatrix::zeros(n * n, n * n);
    for k in 0..d {
        for l in 0..d {
            for p in 0..d {
                for q in 0..d {
                    let row = (p * d + q) * n + k * d + l;
                    let col = (l * d + q) * n + k * d + p;
                    m[(row, col)] = 1.0;
                }
            }
        }
    }
    m
}

/// Matrix of x -> vec(K_d vec^{-1}(x)) on d^4 coordinates.
pub fn big_k_matrix(d: usize) -> SquareOperator {
    let n = d * d;
    let mut m = DMatrix::zeros(n * n, n * n);
    for c in 0..n {
        for i in 0..d {
            for j in 0..d {
                // row j*d+i of K_d X is row i*d+j of X
                m[(c * n + j * d + i, c * n + i * d + j)] = 1.0;
            }
        }
    }
    m
}

/// Restrict an operator on vec coordinates to the symmetric matrices, in vech coordinates.
pub fn sym_restrict(t: &SquareOperator) -> Result<SymOperator> {
    let d = int_sqrt(t.nrows())
        .filter(|_| t.is_square())
        .ok_or_else(|| Error::ShapeError(format!("{}x{} is not a vec operator", t.nrows(), t.ncols())))?;
    let dup = duplication_matrix(d);
    let image = t * &dup;
    let scale = t.amax().max(1.0);
    let mut defect = 0.0f64;
    for c in 0..image.ncols() {
        let x = DMatrix::from_column_slice(d, d, image.column(c).as_slice());
        defect = defect.max((&x - x.transpose()).amax() / scale);
    }
    if defect > 1e-8 {
        return Err(Error::SubspaceNotPreserved(defect));
    }
    SymOperator::new(d, elimination_matrix(d) * image)
}

/// Symmetric part `(m + m^T) / 2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}


/// Largest real part of the spectrum.
pub fn spectral_abscissa(m: &DMatrix<f64>) -> f64 {
    m.clone().complex_eigenvalues().iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max)
}

/// 2-norm condition number; infinite for singular input.
pub fn cond2(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Eigenvalues of a symmetric matrix in ascending order.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = symmetrize(m).symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}
