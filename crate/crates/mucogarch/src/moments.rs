//! Closed-form stationary moments of the volatility and of squared returns.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::levy_model::{cal_a_r, cal_b, cal_c, LevySpec, MucogarchParams};
use crate::tensor_ops::{commutation_matrix, cond2, expm, kron, q_map, spectral_abscissa, symmetrize, unvec, vec};

/// Stacked moment vector: E vec(G G^T), then one d^4 block per lag h = 0..=r.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentVector {
    pub d: usize,
    pub r: usize,
    pub delta: f64,
    pub values: DVector<f64>,
}

#[derive(Debug, Serialize)]
struct LabeledBlock {
    label: String,
    offset: usize,
    len: usize,
    values: Vec<f64>,
}

#[derive(Debug, Serialize)]
struct MomentDoc {
    d: usize,
    r: usize,
    delta: f64,
    values: Vec<f64>,
    blocks: Vec<LabeledBlock>,
}

impl MomentVector {
    pub fn len_for(d: usize, r: usize) -> usize {
        d * d + (r + 1) * d.pow(4)
    }

    pub fn new(d: usize, r: usize, delta: f64, values: DVector<f64>) -> Result<Self> {
        if values.len() != Self::len_for(d, r) {
            return Err(Error::DimensionMismatch(format!(
                "moment vector of length {} does not fit d={d}, r={r}",
                values.len()
            )));
        }
        Ok(Self { d, r, delta, values })
    }

    /// E vec(G_1 G_1^T).
    pub fn mean_block(&self) -> DVector<f64> {
        self.values.rows(0, self.d * self.d).into_owned()
    }

    /// E vec(G_1 G_1^T) vec(G_{1+h} G_{1+h}^T)^T as a d^2 x d^2 matrix.
    pub fn lag_block(&self, h: usize) -> DMatrix<f64> {
        assert!(h <= self.r, "lag {h} beyond r = {}", self.r);
        let d2 = self.d * self.d;
        let n = d2 * d2;
        let start = d2 + h * n;
        DMatrix::from_column_slice(d2, d2, &self.values.as_slice()[start..start + n])
    }

    /// cov(vec(G_{1+h}G_{1+h}^T), vec(G_1 G_1^T)) recovered from the non-central block.
    pub fn central_lag(&self, h: usize) -> DMatrix<f64> {
        let mu = self.mean_block();
        (self.lag_block(h) - &mu * mu.transpose()).transpose()
    }

    pub fn to_json(&self) -> serde_json::Value {
        let d2 = self.d * self.d;
        let n = d2 * d2;
        let v = self.values.as_slice();
        let mut blocks = vec![LabeledBlock {
            label: "E vec(G1 G1^T)".into(),
            offset: 0,
            len: d2,
            values: v[..d2].to_vec(),
        }];
        for h in 0..=self.r {
            let off = d2 + h * n;
            blocks.push(LabeledBlock {
                label: format!("E vec(G1 G1^T) vec(G{} G{}^T)^T", 1 + h, 1 + h),
                offset: off,
                len: n,
                values: v[off..off + n].to_vec(),
            });
        }
        let doc = MomentDoc { d: self.d, r: self.r, delta: self.delta, values: v.to_vec(), blocks };
        serde_json::to_value(doc).expect("moment document serializes")
    }

    pub fn from_json(v: &serde_json::Value) -> Result<Self> {
        let get = |k: &str| v.get(k).ok_or_else(|| Error::InvalidConfig(format!("moment JSON lacks `{k}`")));
        let d = get("d")?.as_u64().ok_or_else(|| Error::InvalidConfig("d".into()))? as usize;
        let r = get("r")?.as_u64().ok_or_else(|| Error::InvalidConfig("r".into()))? as usize;
        let delta = get("delta")?.as_f64().ok_or_else(|| Error::InvalidConfig("delta".into()))?;
        let values: Vec<f64> = serde_json::from_value(get("values")?.clone())?;
        Self::new(d, r, delta, DVector::from_vec(values))
    }
}

/// Stationary mean and covariance of vec(Y_0) with the drift operator.
#[derive(Debug, Clone)]
pub struct SecondOrderY {
    pub mean_vec_y: DVector<f64>,
    pub var_vec_y: DMatrix<f64>,
    pub cal_b: DMatrix<f64>,
}

fn stable(m: &DMatrix<f64>) -> Result<()> {
    let a = spectral_abscissa(m);
    if !(a < 0.0) {
        return Err(Error::UnstableDynamics(a));
    }
    Ok(())
}

pub fn stationary_mean_y(p: &MucogarchParams, levy: &LevySpec) -> Result<DVector<f64>> {
    let b = cal_b(p, levy.sigma_l);
    stable(&b)?;
    let rhs = kron(&p.a, &p.a) * vec(&p.c) * (-levy.sigma_l);
    Ok(b.lu().solve(&rhs).expect("stable operator is invertible"))
}

pub fn stationary_var_y(p: &MucogarchParams, levy: &LevySpec) -> Result<DMatrix<f64>> {
    Ok(second_order_y(p, levy)?.var_vec_y)
}

pub fn second_order_y(p: &MucogarchParams, levy: &LevySpec) -> Result<SecondOrderY> {
    let d2 = p.d() * p.d();
    let calb = cal_b(p, levy.sigma_l);
    stable(&calb)?;
    let calc = cal_c(p, levy.sigma_l, levy.rho_l);
    stable(&calc)?;
    let cc = cond2(&calc);
    if cc > 1e12 {
        return Err(Error::SingularC(cc));
    }
    let aa = kron(&p.a, &p.a);
    let c = vec(&p.c);
    let binv_ac = calb.clone().lu().solve(&(&aa * &c)).expect("stable operator is invertible");
    let m = &binv_ac * (-levy.sigma_l);
    let ar = cal_a_r(p, levy.rho_l);
    let id = DMatrix::<f64>::identity(d2, d2);
    let kv = |x: &DVector<f64>, y: &DVector<f64>| kron(&DMatrix::from_column_slice(x.len(), 1, x.as_slice()), &DMatrix::from_column_slice(y.len(), 1, y.as_slice())).column(0).into_owned();
    let cc_v = kv(&c, &c);
    let cm_v = kv(&c, &m);
    let mc_v = kv(&m, &c);
    // first summand: -C^{-1} sigma^2 C (B^{-1} (x) B^{-1}) calA (c (x) c), with the C factors cancelled
    let first = kv(&binv_ac, &binv_ac) * (levy.sigma_l * levy.sigma_l);
    let rest = &ar * (&cc_v + &cm_v + &mc_v) + (kron(&aa, &id) * &cm_v + kron(&id, &aa) * &mc_v) * levy.sigma_l;
    let solved = calc.lu().solve(&rest).expect("checked nonsingular");
    let v = -(first + solved);
    let var = symmetrize(&unvec(&v, d2)?);
    Ok(SecondOrderY { mean_vec_y: m, var_vec_y: var, cal_b: calb })
}

pub fn acov_y(p: &MucogarchParams, levy: &LevySpec, h: f64) -> Result<DMatrix<f64>> {
    let s = second_order_y(p, levy)?;
    if h == 0.0 {
        return Ok(s.var_vec_y);
    }
    Ok(expm(&(&s.cal_b * h)) * s.var_vec_y)
}

pub fn mean_sq_return(p: &MucogarchParams, levy: &LevySpec, delta: f64) -> Result<DVector<f64>> {
    let m = stationary_mean_y(p, levy)?;
    Ok((vec(&p.c) + m) * ((levy.sigma_l + levy.sigma_w) * delta))
}

/// Shared intermediate quantities of the squared-return moments.
struct Pieces {
    sigma: f64,
    delta: f64,
    rho_l: f64,
    d: usize,
    so: SecondOrderY,
    mu_v: DVector<f64>,
    exp_bd: DMatrix<f64>,
    /// B^{-1}(e^{B delta} - I)
    phi: DMatrix<f64>,
    /// sigma var + rho_L (A (x) A) R(W): time derivative of cov(vec Y_t, vec G_t G_t^T) at t = 0
    cross: DMatrix<f64>,
    w: DMatrix<f64>,
}

impl Pieces {
    fn new(p: &MucogarchParams, levy: &LevySpec, delta: f64) -> Result<Self> {
        if !(delta > 0.0) {
            return Err(Error::InvalidConfig(format!("delta must be positive, got {delta}")));
        }
        let so = second_order_y(p, levy)?;
        let d = p.d();
        let d2 = d * d;
        let sigma = levy.sigma_l + levy.sigma_w;
        let mu_v = vec(&p.c) + &so.mean_vec_y;
        let exp_bd = expm(&(&so.cal_b * delta));
        let id = DMatrix::<f64>::identity(d2, d2);
        let phi = so.cal_b.clone().lu().solve(&(&exp_bd - &id)).expect("stable operator is invertible");
        let w = &so.var_vec_y + &mu_v * mu_v.transpose();
        let qw = q_map(&w)?;
        let rw = (&qw + commutation_matrix(d) * &qw + &w) * levy.rho_l;
        let cross = &so.var_vec_y * sigma + kron(&p.a, &p.a) * rw;
        Ok(Self { sigma, delta, rho_l: levy.rho_l, d, so, mu_v, exp_bd, phi, cross, w })
    }

    fn mean_sq(&self) -> DVector<f64> {
        &self.mu_v * (self.sigma * self.delta)
    }

    fn cov_y_a(&self) -> DMatrix<f64> {
        &self.phi * &self.cross
    }

    /// cov(a_2, a_1) with a_i = vec(G_i G_i^T).
    fn acov1(&self) -> DMatrix<f64> {
        &self.phi * self.cov_y_a() * self.sigma
    }

    fn fourth(&self) -> Result<DMatrix<f64>> {
        let d2 = self.d * self.d;
        let id = DMatrix::<f64>::identity(d2, d2);
        let k = commutation_matrix(self.d);
        let qw = q_map(&self.w)?;
        let term4 = (&qw + &k * &qw + &self.w) * (self.delta * self.rho_l);
        // integral over [0, delta] of cov(vec V_s, a_s)
        let int_cov = self.so.cal_b.clone().lu().solve(&(&self.phi - &id * self.delta)).expect("invertible") * &self.cross;
        let dm = (&self.mu_v * self.mu_v.transpose() * (0.5 * self.sigma * self.delta * self.delta) + int_cov) * self.sigma;
        let ipk = &id + &k;
        let term1 = &ipk * q_map(&dm.transpose())? * &ipk;
        Ok(term4 + term1 + &dm + dm.transpose())
    }
}

/// cov(vec Y_delta, vec(G_1 G_1^T)) for a return over (0, delta].
pub fn cov_y_sq_return(p: &MucogarchParams, levy: &LevySpec, delta: f64) -> Result<DMatrix<f64>> {
    Ok(Pieces::new(p, levy, delta)?.cov_y_a())
}

/// cov(vec(G_{1+h}G_{1+h}^T), vec(G_1 G_1^T)).
pub fn acov_sq_returns(p: &MucogarchParams, levy: &LevySpec, delta: f64, h: usize) -> Result<DMatrix<f64>> {
    if h == 0 {
        return Err(Error::InvalidConfig("lag must be at least 1".into()));
    }
    let pc = Pieces::new(p, levy, delta)?;
    Ok(expm(&(&pc.so.cal_b * (delta * (h - 1) as f64))) * pc.acov1())
}

pub fn fourth_moment_sq_return(p: &MucogarchParams, levy: &LevySpec, delta: f64) -> Result<DMatrix<f64>> {
    Pieces::new(p, levy, delta)?.fourth()
}

/// Model moment vector k for lags 0..=r.
pub fn model_moment_vector(p: &MucogarchParams, levy: &LevySpec, delta: f64, r: usize) -> Result<MomentVector> {
    let pc = Pieces::new(p, levy, delta)?;
    let mean = pc.mean_sq();
    let outer = &mean * mean.transpose();
    let mut values = Vec::with_capacity(MomentVector::len_for(p.d(), r));
    values.extend_from_slice(mean.as_slice());
    values.extend_from_slice(pc.fourth()?.as_slice());
    let mut acov = pc.acov1();
    for h in 1..=r {
        if h > 1 {
            acov = &pc.exp_bd * acov;
        }
        // E[a_1 a_{1+h}^T] is the transpose of cov(a_{1+h}, a_1) plus the mean outer product
        let block = acov.transpose() + &outer;
        values.extend_from_slice(block.as_slice());
    }
    MomentVector::new(p.d(), r, delta, DVector::from_vec(values))
}
