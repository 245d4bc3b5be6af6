//! Empirical moment vector and long-run covariance estimators.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::moments::MomentVector;
use crate::simulate::{rng_for, ReturnsSample, SeedInfo};
use crate::tensor_ops::symmetrize;

/// Divisor used in the empirical moment average.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Divisor {
    /// 1/n over the n - r available terms.
    #[default]
    N,
    /// 1/(n - r).
    NMinusR,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovKind {
    Basic,
    Truncated(usize),
    Diag,
}

impl CovKind {
    pub fn label(&self) -> String {
        match self {
            CovKind::Basic => "basic".into(),
            CovKind::Truncated(m) => format!("truncated:{m}"),
            CovKind::Diag => "diag".into(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CovEstimate {
    pub kind: CovKind,
    pub matrix: DMatrix<f64>,
    pub psd_flag: bool,
}

fn squares(sample: &ReturnsSample) -> Vec<DVector<f64>> {
    (0..sample.n())
        .map(|i| {
            let g = sample.row(i);
            let gg = &g * g.transpose();
            DVector::from_column_slice(gg.as_slice())
        })
        .collect()
}

/// Fills `out` with D_i = (a_i, vec(a_i a_i^T), ..., vec(a_i a_{i+r}^T)).
fn fill_d(a: &[DVector<f64>], i: usize, r: usize, out: &mut [f64]) {
    let d2 = a[i].len();
    out[..d2].copy_from_slice(a[i].as_slice());
    let mut k = d2;
    for h in 0..=r {
        let y = &a[i + h];
        for q in 0..d2 {
            for p in 0..d2 {
                out[k] = a[i][p] * y[q];
                k += 1;
            }
        }
    }
}

fn check_len(sample: &ReturnsSample, r: usize) -> Result<()> {
    if sample.n() <= r {
        return Err(Error::InsufficientData(format!("n = {} must exceed r = {r}", sample.n())));
    }
    Ok(())
}

pub fn empirical_moment_vector(sample: &ReturnsSample, r: usize) -> Result<MomentVector> {
    empirical_moment_vector_with(sample, r, Divisor::N)
}

pub fn empirical_moment_vector_with(sample: &ReturnsSample, r: usize, divisor: Divisor) -> Result<MomentVector> {
    check_len(sample, r)?;
    let a = squares(sample);
    let len = MomentVector::len_for(sample.d, r);
    let terms = sample.n() - r;
    let mut sum = vec![0.0; len];
    let mut row = vec![0.0; len];
    for i in 0..terms {
        fill_d(&a, i, r, &mut row);
        sum.iter_mut().zip(&row).for_each(|(s, x)| *s += x);
    }
    let div = match divisor {
        Divisor::N => sample.n(),
        Divisor::NMinusR => terms,
    } as f64;
    MomentVector::new(sample.d, r, sample.delta, DVector::from_iterator(len, sum.into_iter().map(|s| s / div)))
}

const CHUNK: usize = 2048;

/// Rows `start..end` of the centered D matrix.
fn centered_rows(a: &[DVector<f64>], r: usize, k_hat: &DVector<f64>, start: usize, end: usize) -> DMatrix<f64> {
    let len = k_hat.len();
    let mut m = DMatrix::zeros(end - start, len);
    let mut row = vec![0.0; len];
    for (j, i) in (start..end).enumerate() {
        fill_d(a, i, r, &mut row);
        for c in 0..len {
            m[(j, c)] = row[c] - k_hat[c];
        }
    }
    m
}

pub fn long_run_cov(sample: &ReturnsSample, r: usize, kind: CovKind) -> Result<CovEstimate> {
    check_len(sample, r)?;
    let n = sample.n();
    let lag = match kind {
        CovKind::Truncated(m) => m,
        _ => 0,
    };
    if n <= r + lag {
        return Err(Error::InsufficientData(format!("n = {n} must exceed r + M = {}", r + lag)));
    }
    let k_hat = empirical_moment_vector(sample, r)?.values;
    let a = squares(sample);
    let terms = n - r;
    let len = k_hat.len();
    let mut s = DMatrix::<f64>::zeros(len, len);
    let mut cross = DMatrix::<f64>::zeros(len, len);
    let mut start = 0;
    while start < terms {
        let end = (start + CHUNK).min(terms);
        let f = centered_rows(&a, r, &k_hat, start, (end + lag).min(terms));
        let own = f.rows(0, end - start);
        s.gemm_tr(1.0, &own, &own, 1.0);
        // pairs (t, t+i) with t <= terms - lag
        let t_end = end.min(terms - lag);
        if t_end > start {
            for i in 1..=lag {
                let left = f.rows(0, t_end - start);
                let right = f.rows(i, t_end - start);
                cross.gemm_tr(1.0, &left, &right, 1.0);
            }
        }
        start = end;
    }
    let mut matrix = (s + &cross + cross.transpose()) / n as f64;
    if kind == CovKind::Diag {
        matrix = DMatrix::from_diagonal(&matrix.diagonal());
    }
    let matrix = symmetrize(&matrix);
    let scale = matrix.amax().max(f64::MIN_POSITIVE);
    let min = matrix.clone().symmetric_eigenvalues().min();
    Ok(CovEstimate { kind, psd_flag: min >= -1e-8 * scale, matrix })
}

/// Standard error of each component of k-hat by a non-overlapping block bootstrap.
pub fn block_bootstrap_se(sample: &ReturnsSample, r: usize, block_len: usize, n_boot: usize, seed: u64) -> Result<DVector<f64>> {
    check_len(sample, r)?;
    let a = squares(sample);
    let terms = sample.n() - r;
    let blocks = terms / block_len.max(1);
    if blocks < 2 || n_boot < 2 {
        return Err(Error::InsufficientData("need at least two blocks and two bootstrap draws".into()));
    }
    let len = MomentVector::len_for(sample.d, r);
    let mut sums = DMatrix::<f64>::zeros(len, blocks);
    let mut row = vec![0.0; len];
    for b in 0..blocks {
        for i in b * block_len..(b + 1) * block_len {
            fill_d(&a, i, r, &mut row);
            let mut col = sums.column_mut(b);
            for c in 0..len {
                col[c] += row[c];
            }
        }
    }
    let mut rng = rng_for(SeedInfo::with(seed, 0, 7));
    let mut mean = DVector::<f64>::zeros(len);
    let mut sq = DVector::<f64>::zeros(len);
    let scale = 1.0 / (blocks * block_len) as f64;
    for _ in 0..n_boot {
        let mut rep = DVector::<f64>::zeros(len);
        for _ in 0..blocks {
            rep += sums.column(rng.random_range(0..blocks));
        }
        rep *= scale;
        mean += &rep;
        sq += rep.component_mul(&rep);
    }
    let nb = n_boot as f64;
    mean /= nb;
    Ok(DVector::from_iterator(
        len,
        (0..len).map(|c| ((sq[c] / nb - mean[c] * mean[c]).max(0.0) * nb / (nb - 1.0)).sqrt()),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn sample(rows: &[f64], d: usize) -> ReturnsSample {
        ReturnsSample::new(0.1, DMatrix::from_row_slice(rows.len() / d, d, rows)).unwrap()
    }

    #[test]
    fn hand_computed_scalar_case() {
        let (a, b) = (1.5, -0.5);
        let k = empirical_moment_vector(&sample(&[a, b], 1), 0).unwrap();
        assert_relative_eq!(k.values[0], (a * a + b * b) / 2.0);
        assert_relative_eq!(k.values[1], (a.powi(4) + b.powi(4)) / 2.0);
    }

    #[test]
    fn zero_returns_give_zero_vector() {
        let k = empirical_moment_vector(&sample(&[0.0; 20], 2), 3).unwrap();
        assert!(k.values.iter().all(|&x| x == 0.0));
        assert!(matches!(empirical_moment_vector(&sample(&[1.0, 2.0], 1), 2), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn equal_returns_give_zero_covariance_with_n_minus_r_divisor_free_lag_zero() {
        let s = sample(&[0.3; 10], 1);
        let c = long_run_cov(&s, 0, CovKind::Basic).unwrap();
        assert!(c.matrix.amax() < 1e-15);
    }

    #[test]
    fn truncated_with_zero_lag_is_basic() {
        let rows: Vec<f64> = (0..200).map(|i| ((i * 37 % 11) as f64 - 5.0) / 7.0).collect();
        let s = sample(&rows, 2);
        let b = long_run_cov(&s, 2, CovKind::Basic).unwrap();
        let t = long_run_cov(&s, 2, CovKind::Truncated(0)).unwrap();
        assert_eq!(b.matrix, t.matrix);
        assert!(b.psd_flag);
        let dg = long_run_cov(&s, 2, CovKind::Diag).unwrap();
        assert_eq!(dg.matrix.diagonal(), b.matrix.diagonal());
    }

    #[test]
    fn truncated_matches_direct_double_sum() {
        let rows: Vec<f64> = (0..60).map(|i| ((i * 13 % 7) as f64 - 3.0) / 5.0 + 0.01 * i as f64).collect();
        let s = sample(&rows, 1);
        let (r, m) = (1, 3);
        let got = long_run_cov(&s, r, CovKind::Truncated(m)).unwrap().matrix;
        let k = empirical_moment_vector(&s, r).unwrap().values;
        let a = squares(&s);
        let len = k.len();
        let terms = s.n() - r;
        let dvec = |i: usize| {
            let mut row = vec![0.0; len];
            fill_d(&a, i, r, &mut row);
            DVector::from_vec(row) - &k
        };
        let mut want = DMatrix::zeros(len, len);
        for t in 0..terms {
            want += dvec(t) * dvec(t).transpose();
        }
        for t in 0..terms - m {
            for i in 1..=m {
                let x = dvec(t) * dvec(t + i).transpose();
                want += &x + x.transpose();
            }
        }
        want /= s.n() as f64;
        assert_relative_eq!(got, want, epsilon = 1e-12);
    }
}
