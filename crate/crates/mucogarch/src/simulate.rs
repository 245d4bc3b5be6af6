//! Path simulation: exact compound-Poisson volatility jumps, Euler steps for the Brownian part.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::levy_model::{cal_b, LevySpec, MucogarchParams};
use crate::moments::stationary_mean_y;
use crate::tensor_ops::{expm, spectral_abscissa, symmetrize, unvec};

/// Identifies one independent random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedInfo {
    pub seed: u64,
    pub replicate: u64,
    pub stream: u64,
}

impl SeedInfo {
    pub fn new(seed: u64) -> Self {
        Self { seed, replicate: 0, stream: 0 }
    }

    pub fn with(seed: u64, replicate: u64, stream: u64) -> Self {
        Self { seed, replicate, stream }
    }
}

/// ChaCha keyed by (seed, replicate) on stream `stream`.
pub fn rng_for(info: SeedInfo) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&info.seed.to_le_bytes());
    key[8..16].copy_from_slice(&info.replicate.to_le_bytes());
    key[16..24].copy_from_slice(b"mucogrch");
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(info.stream);
    rng
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReturnsSample {
    pub d: usize,
    pub delta: f64,
    /// n x d, row i is the i-th return.
    pub returns: DMatrix<f64>,
    pub seed_info: Option<SeedInfo>,
}

impl ReturnsSample {
    pub fn new(delta: f64, returns: DMatrix<f64>) -> Result<Self> {
        if returns.nrows() == 0 || returns.ncols() == 0 {
            return Err(Error::InsufficientData("empty return matrix".into()));
        }
        if returns.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidConfig("returns contain non-finite values".into()));
        }
        Ok(Self { d: returns.ncols(), delta, returns, seed_info: None })
    }

    pub fn n(&self) -> usize {
        self.returns.nrows()
    }

    pub fn row(&self, i: usize) -> DVector<f64> {
        self.returns.row(i).transpose()
    }
}

#[derive(Debug, Clone, Default)]
pub struct VolPath {
    pub times: Vec<f64>,
    pub y_values: Vec<DMatrix<f64>>,
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub delta: f64,
    pub n: usize,
    pub euler_substeps: usize,
    /// Burn-in in time units; `None` uses [`stationary_burn_in_default`].
    pub burn_in: Option<f64>,
    pub emit_vol: bool,
}

impl SimConfig {
    pub fn new(delta: f64, n: usize) -> Self {
        Self { delta, n, euler_substeps: 10, burn_in: None, emit_vol: false }
    }
}

#[derive(Debug, Clone)]
pub struct Simulation {
    pub sample: ReturnsSample,
    pub vol: Option<VolPath>,
    pub burn_in: f64,
    /// Jumps inside the recorded window.
    pub jumps: usize,
    /// Smallest eigenvalue of Y seen before any clipping, relative to max(1, |Y|).
    pub min_y_eigenvalue: f64,
}

/// Spectral square root; eigenvalues down to -1e-10 are clipped to zero.
pub fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = symmetrize(m).symmetric_eigen();
    let min = eig.eigenvalues.min();
    if min < -1e-10 {
        return Err(Error::NonPsdInput(min));
    }
    let sq = eig.eigenvalues.map(|x| x.max(0.0).sqrt());
    let v = &eig.eigenvectors;
    Ok(symmetrize(&(v * DMatrix::from_diagonal(&sq) * v.transpose())))
}

/// Twenty mean-reversion time constants of the drift operator.
pub fn stationary_burn_in_default(p: &MucogarchParams, levy: &LevySpec) -> Result<f64> {
    let a = spectral_abscissa(&cal_b(p, levy.sigma_l));
    if !(a < 0.0) {
        return Err(Error::UnstableDynamics(a));
    }
    Ok(20.0 / a.abs())
}

fn project_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = symmetrize(m).symmetric_eigen();
    let clipped = eig.eigenvalues.map(|x| x.max(0.0));
    let v = &eig.eigenvectors;
    symmetrize(&(v * DMatrix::from_diagonal(&clipped) * v.transpose()))
}

struct State<'a> {
    p: &'a MucogarchParams,
    levy: &'a LevySpec,
    y: DMatrix<f64>,
    g: DVector<f64>,
    to_jump: f64,
    jumps: usize,
    min_eig: f64,
    rng: ChaCha8Rng,
    exp: Exp<f64>,
}

impl State<'_> {
    fn normals(&mut self, d: usize) -> DVector<f64> {
        DVector::from_fn(d, |_, _| self.rng.sample(StandardNormal))
    }

    fn check_psd(&mut self) -> Result<()> {
        self.y = symmetrize(&self.y);
        let scale = self.y.amax().max(1.0);
        let min = self.y.symmetric_eigenvalues().min() / scale;
        self.min_eig = self.min_eig.min(min);
        if min < -1e-10 {
            return Err(Error::NonPsdVolatility(min));
        }
        if min < 0.0 {
            self.y = project_psd(&self.y);
        }
        Ok(())
    }

    fn drift(&mut self, tau: f64, full: Option<&DMatrix<f64>>) {
        let e = match full {
            Some(e) => e.clone(),
            None => expm(&(&self.p.b * tau)),
        };
        self.y = symmetrize(&(&e * &self.y * e.transpose()));
    }

    fn brownian(&mut self, tau: f64, record: bool) -> Result<()> {
        if !record || self.levy.sigma_w == 0.0 {
            return Ok(());
        }
        let d = self.y.nrows();
        let z = self.normals(d);
        let sq = psd_sqrt(&(&self.p.c + &self.y))?;
        self.g += sq * z * (self.levy.sigma_w * tau).sqrt();
        Ok(())
    }

    /// Advance by `h`; `e_full` is e^{B h}.
    fn step(&mut self, h: f64, e_full: &DMatrix<f64>, record: bool, t0: f64, vol: Option<&mut VolPath>) -> Result<()> {
        let mut vol = vol;
        let mut remaining = h;
        let mut elapsed = 0.0;
        let mut first = true;
        loop {
            if self.to_jump >= remaining {
                self.brownian(remaining, record)?;
                self.drift(remaining, if first { Some(e_full) } else { None });
                self.to_jump -= remaining;
                return Ok(());
            }
            let tau = self.to_jump;
            self.brownian(tau, record)?;
            self.drift(tau, None);
            first = false;
            elapsed += tau;
            remaining -= tau;
            let d = self.y.nrows();
            let sq = psd_sqrt(&(&self.p.c + &self.y))?;
            let jump = &sq * self.normals(d) * self.levy.jump_scale.sqrt();
            if record {
                self.g += &jump;
                self.jumps += 1;
            }
            let aj = &self.p.a * jump;
            self.y += &aj * aj.transpose();
            self.check_psd()?;
            if let Some(v) = vol.as_deref_mut() {
                push_vol(v, t0 + elapsed, &self.y);
            }
            self.to_jump = self.exp.sample(&mut self.rng);
        }
    }
}

fn push_vol(v: &mut VolPath, t: f64, y: &DMatrix<f64>) {
    if v.times.last().is_none_or(|&last| t > last) {
        v.times.push(t);
        v.y_values.push(y.clone());
    }
}

pub fn simulate(p: &MucogarchParams, levy: &LevySpec, cfg: &SimConfig, seed: SeedInfo) -> Result<Simulation> {
    if !(cfg.delta > 0.0) || cfg.n == 0 || cfg.euler_substeps == 0 {
        return Err(Error::InvalidConfig("need delta > 0, n >= 1 and euler_substeps >= 1".into()));
    }
    let burn_in = match cfg.burn_in {
        Some(b) if b >= 0.0 => b,
        Some(b) => return Err(Error::InvalidConfig(format!("negative burn-in {b}"))),
        None => stationary_burn_in_default(p, levy)?,
    };
    let d = p.d();
    let y0 = match stationary_mean_y(p, levy) {
        Ok(m) => project_psd(&unvec(&m, d)?),
        Err(_) => DMatrix::zeros(d, d),
    };
    let mut rng = rng_for(seed);
    let exp = Exp::new(levy.cpp_rate).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let to_jump = exp.sample(&mut rng);
    let mut st = State {
        p,
        levy,
        y: y0,
        g: DVector::zeros(d),
        to_jump,
        jumps: 0,
        min_eig: 0.0,
        rng,
        exp,
    };
    let h = cfg.delta / cfg.euler_substeps as f64;
    let e_full = expm(&(&p.b * h));
    if burn_in > 0.0 {
        let steps = (burn_in / h).floor() as usize;
        for _ in 0..steps {
            st.step(h, &e_full, false, 0.0, None)?;
        }
        let rest = burn_in - steps as f64 * h;
        if rest > 0.0 {
            let e_rest = expm(&(&p.b * rest));
            st.step(rest, &e_rest, false, 0.0, None)?;
        }
    }
    let mut vol = cfg.emit_vol.then(VolPath::default);
    if let Some(v) = vol.as_mut() {
        push_vol(v, 0.0, &st.y);
    }
    let mut returns = DMatrix::zeros(cfg.n, d);
    for i in 0..cfg.n {
        st.g.fill(0.0);
        for k in 0..cfg.euler_substeps {
            let t0 = i as f64 * cfg.delta + k as f64 * h;
            st.step(h, &e_full, true, t0, vol.as_mut())?;
        }
        st.check_psd()?;
        if let Some(v) = vol.as_mut() {
            push_vol(v, (i + 1) as f64 * cfg.delta, &st.y);
        }
        returns.set_row(i, &st.g.transpose());
    }
    let mut sample = ReturnsSample::new(cfg.delta, returns)?;
    sample.seed_info = Some(seed);
    Ok(Simulation { sample, vol, burn_in, jumps: st.jumps, min_y_eigenvalue: st.min_eig })
}

pub fn simulate_returns(
    p: &MucogarchParams,
    levy: &LevySpec,
    delta: f64,
    n: usize,
    euler_substeps: usize,
    burn_in: Option<f64>,
    seed: SeedInfo,
) -> Result<ReturnsSample> {
    let cfg = SimConfig { delta, n, euler_substeps, burn_in, emit_vol: false };
    Ok(simulate(p, levy, &cfg, seed)?.sample)
}
