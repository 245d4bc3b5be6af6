//! Monte Carlo replication studies and the two-step real-data workflow.

use std::fs;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::diagnostics::{m_integral, pass_if, structural_report, ConditionReport};
use crate::error::{Error, Result};
use crate::gmm::{estimate, two_step_estimate, EstimationResult, WeightKind};
use crate::io::{csv_err, format_float, read_returns_csv};
use crate::levy_model::{theta_to_matrices, LevySpec, ThetaVector, THETA_DIM};
use crate::optim::NelderMeadConfig;
use crate::recover::moment_init;
use crate::sample_stats::empirical_moment_vector;
use crate::simulate::{rng_for, simulate_returns, SeedInfo};

pub const COORD_NAMES: [&str; THETA_DIM] = ["A11", "A12", "A21", "A22", "B11", "B12", "B22", "C11", "C12", "C22"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitPolicy {
    /// theta0 (1 + U(-radius, radius)) per coordinate.
    TruthNeighborhood { radius: f64 },
    /// Closed-form recovery from the sample moments, falling back to the truth neighborhood.
    Moment { fallback_radius: f64 },
}

fn default_substeps() -> usize {
    10
}

fn default_box() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub theta0: Vec<f64>,
    pub sigma_w: f64,
    pub cpp_rate: f64,
    pub jump_scale: f64,
    pub delta: f64,
    pub n_list: Vec<usize>,
    pub r_list: Vec<usize>,
    pub replicates: usize,
    pub seed: u64,
    pub weight: WeightKind,
    pub init_policy: InitPolicy,
    /// Parameter box theta0 +- box_frac |theta0|.
    #[serde(default = "default_box")]
    pub box_frac: f64,
    #[serde(default = "default_substeps")]
    pub euler_substeps: usize,
    #[serde(default)]
    pub optimizer: NelderMeadConfig,
}

impl StudyConfig {
    /// 50 replicates, n in {1000, 10000}, r = 10.
    pub fn desk(theta0: Vec<f64>, sigma_w: f64) -> Self {
        Self {
            theta0,
            sigma_w,
            cpp_rate: 4.0,
            jump_scale: 0.25,
            delta: 0.1,
            n_list: vec![1000, 10_000],
            r_list: vec![10],
            replicates: 50,
            seed: 2024,
            weight: WeightKind::Identity,
            init_policy: InitPolicy::TruthNeighborhood { radius: 0.1 },
            box_frac: default_box(),
            euler_substeps: default_substeps(),
            optimizer: NelderMeadConfig::default(),
        }
    }

    /// 500 replicates, n = 100000, r in {2, 5, 10}.
    pub fn full(theta0: Vec<f64>, sigma_w: f64) -> Self {
        Self { n_list: vec![100_000], r_list: vec![2, 5, 10], replicates: 500, ..Self::desk(theta0, sigma_w) }
    }

    pub fn levy(&self) -> Result<LevySpec> {
        LevySpec::new(self.sigma_w, self.cpp_rate, self.jump_scale)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.replicates == 0 {
            return bad("replicates must be at least 1");
        }
        if self.n_list.is_empty() || self.n_list.contains(&0) || self.r_list.is_empty() || self.r_list.contains(&0) {
            return bad("n and r lists must be non-empty with positive entries");
        }
        if self.r_list.iter().any(|&r| r < 2) {
            return bad("estimation needs r >= 2");
        }
        if !(self.delta > 0.0) || !(self.box_frac > 0.0) {
            return bad("delta and box_frac must be positive");
        }
        theta_to_matrices(&self.theta0)?;
        self.levy()?;
        Ok(())
    }

    fn cells(&self) -> Vec<(usize, usize)> {
        self.n_list.iter().flat_map(|&n| self.r_list.iter().map(move |&r| (n, r))).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub n: usize,
    pub r: usize,
    pub replicate: usize,
    pub init: String,
    pub theta_init: Vec<f64>,
    pub theta_hat: Option<Vec<f64>>,
    pub objective: Option<f64>,
    pub converged: bool,
    pub evals: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordStat {
    pub coord: String,
    pub truth: f64,
    pub bias: f64,
    pub std: f64,
    pub median_abs_bias: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub n: usize,
    pub r: usize,
    pub replicates: usize,
    pub n_converged: usize,
    pub n_excluded: usize,
    pub n_failed: usize,
    pub convergence_rate: f64,
    pub coords: Vec<CoordStat>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySummary {
    pub version: String,
    pub config: StudyConfig,
    pub cells: Vec<CellSummary>,
    pub records: Vec<ReplicateRecord>,
}

impl StudySummary {
    pub fn n_failed(&self) -> usize {
        self.records.iter().filter(|r| r.error.is_some()).count()
    }

    pub fn cell(&self, n: usize, r: usize) -> Option<&CellSummary> {
        self.cells.iter().find(|c| c.n == n && c.r == r)
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

fn neighborhood(theta0: &[f64], radius: f64, rng: &mut impl Rng) -> Vec<f64> {
    theta0.iter().map(|t| t * (1.0 + rng.random_range(-radius..=radius))).collect()
}

fn run_replicate(cfg: &StudyConfig, levy: &LevySpec, cell: usize, n: usize, r: usize, rep: usize) -> ReplicateRecord {
    let stream = (cell * cfg.replicates + rep) as u64;
    let mut record = ReplicateRecord {
        n,
        r,
        replicate: rep,
        init: String::new(),
        theta_init: Vec::new(),
        theta_hat: None,
        objective: None,
        converged: false,
        evals: 0,
        error: None,
    };
    let out = (|| -> Result<EstimationResult> {
        let p0 = theta_to_matrices(&cfg.theta0)?;
        let sample = simulate_returns(&p0, levy, cfg.delta, n, cfg.euler_substeps, None, SeedInfo::with(cfg.seed, stream, 0))?;
        let bounds = ThetaVector::box_around(&cfg.theta0, cfg.box_frac);
        let mut rng = rng_for(SeedInfo::with(cfg.seed, stream, 1));
        let (label, start) = match cfg.init_policy {
            InitPolicy::TruthNeighborhood { radius } => ("truth_neighborhood".to_string(), neighborhood(&cfg.theta0, radius, &mut rng)),
            InitPolicy::Moment { fallback_radius } => {
                let k = empirical_moment_vector(&sample, r)?;
                match moment_init(&k, levy) {
                    Ok(rec) if ThetaVector::new(rec.theta.clone(), bounds.clone()).is_ok() && rec.feasible => {
                        ("moment".to_string(), rec.theta)
                    }
                    Ok(_) => ("moment_outside_box_fallback".to_string(), neighborhood(&cfg.theta0, fallback_radius, &mut rng)),
                    Err(e) => (format!("moment_failed_fallback: {e}"), neighborhood(&cfg.theta0, fallback_radius, &mut rng)),
                }
            }
        };
        record.init = label;
        record.theta_init = start.clone();
        let init = ThetaVector::new(start, bounds)?;
        if cfg.weight == WeightKind::Identity {
            let k = empirical_moment_vector(&sample, r)?;
            let len = k.values.len();
            estimate(&k, &nalgebra::DMatrix::identity(len, len), WeightKind::Identity, &init, levy, &cfg.optimizer)
        } else {
            two_step_estimate(&sample, r, cfg.weight, &init, levy, &cfg.optimizer)
        }
    })();
    match out {
        Ok(res) => {
            record.theta_hat = Some(res.theta_hat.values);
            record.objective = Some(res.objective);
            record.converged = res.converged;
            record.evals = res.evals;
        }
        Err(e) => record.error = Some(e.to_string()),
    }
    record
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let m = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / m;
    let var = if xs.len() > 1 { xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0) } else { 0.0 };
    (mean, var.sqrt())
}

fn median(mut xs: Vec<f64>) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.sort_by(f64::total_cmp);
    let k = xs.len() / 2;
    if xs.len() % 2 == 1 {
        xs[k]
    } else {
        0.5 * (xs[k - 1] + xs[k])
    }
}

fn summarize(cfg: &StudyConfig, n: usize, r: usize, records: &[ReplicateRecord]) -> CellSummary {
    let converged: Vec<&Vec<f64>> = records.iter().filter(|x| x.converged).filter_map(|x| x.theta_hat.as_ref()).collect();
    let n_failed = records.iter().filter(|x| x.error.is_some()).count();
    let coords = (0..THETA_DIM)
        .map(|j| {
            let xs: Vec<f64> = converged.iter().map(|t| t[j]).collect();
            let truth = cfg.theta0[j];
            let (mean, std) = if xs.is_empty() { (f64::NAN, f64::NAN) } else { mean_std(&xs) };
            CoordStat {
                coord: COORD_NAMES[j].to_string(),
                truth,
                bias: mean - truth,
                std,
                median_abs_bias: median(xs.iter().map(|x| (x - truth).abs()).collect()),
            }
        })
        .collect();
    CellSummary {
        n,
        r,
        replicates: records.len(),
        n_converged: converged.len(),
        n_excluded: records.len() - converged.len(),
        n_failed,
        convergence_rate: converged.len() as f64 / records.len() as f64,
        coords,
    }
}

/// Runs every (n, r) cell; `threads` = Some(1) is serial, None uses the global pool.
pub fn run_study(cfg: &StudyConfig, threads: Option<usize>) -> Result<StudySummary> {
    cfg.validate()?;
    let levy = cfg.levy()?;
    let cells = cfg.cells();
    let jobs: Vec<(usize, usize, usize, usize)> = cells
        .iter()
        .enumerate()
        .flat_map(|(c, &(n, r))| (0..cfg.replicates).map(move |rep| (c, n, r, rep)))
        .collect();
    let work = || -> Vec<ReplicateRecord> {
        jobs.par_iter().map(|&(c, n, r, rep)| run_replicate(cfg, &levy, c, n, r, rep)).collect()
    };
    let records = match threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?
            .install(work),
        None => work(),
    };
    let summaries = cells
        .iter()
        .map(|&(n, r)| {
            let rs: Vec<ReplicateRecord> = records.iter().filter(|x| x.n == n && x.r == r).cloned().collect();
            summarize(cfg, n, r, &rs)
        })
        .collect();
    Ok(StudySummary { version: env!("CARGO_PKG_VERSION").to_string(), config: cfg.clone(), cells: summaries, records })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QqPoint {
    pub theoretical: f64,
    pub standardized: f64,
    pub converged: bool,
}

/// Sorted standardized values against normal quantiles (i - 0.5) / m.
pub fn normal_qq(values: &[(f64, bool)]) -> Result<Vec<QqPoint>> {
    if values.len() < 10 {
        return Err(Error::TooFewReplicates(values.len()));
    }
    let xs: Vec<f64> = values.iter().map(|v| v.0).collect();
    let (mean, std) = mean_std(&xs);
    let scale = if std > 0.0 { std } else { 1.0 };
    let mut pts: Vec<(f64, bool)> = values.iter().map(|&(x, c)| ((x - mean) / scale, c)).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let normal = Normal::standard();
    let m = pts.len() as f64;
    Ok(pts
        .into_iter()
        .enumerate()
        .map(|(i, (z, c))| QqPoint { theoretical: normal.inverse_cdf((i as f64 + 0.5) / m), standardized: z, converged: c })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct QqRow {
    pub n: usize,
    pub r: usize,
    pub point: QqPoint,
}

/// QQ data for one coordinate, one block per cell; non-converged estimates are flagged.
pub fn qq_data(study: &StudySummary, coord: usize) -> Result<Vec<QqRow>> {
    if coord >= THETA_DIM {
        return Err(Error::InvalidConfig(format!("coordinate {coord} out of range")));
    }
    let mut out = Vec::new();
    for cell in &study.cells {
        let vals: Vec<(f64, bool)> = study
            .records
            .iter()
            .filter(|x| x.n == cell.n && x.r == cell.r)
            .filter_map(|x| x.theta_hat.as_ref().map(|t| (t[coord], x.converged)))
            .collect();
        out.extend(normal_qq(&vals)?.into_iter().map(|point| QqRow { n: cell.n, r: cell.r, point }));
    }
    Ok(out)
}

pub fn write_qq_csv(path: &Path, rows: &[QqRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["n", "r", "theoretical", "standardized", "converged"]).map_err(csv_err)?;
    for row in rows {
        w.write_record([
            row.n.to_string(),
            row.r.to_string(),
            format_float(row.point.theoretical),
            format_float(row.point.standardized),
            row.point.converged.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_qq_csv(path: &Path) -> Result<Vec<QqRow>> {
    let mut rdr = csv::Reader::from_path(path).map_err(csv_err)?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::Parse { line, msg: e.to_string() })?;
        let field = |k: usize| rec.get(k).ok_or_else(|| Error::Parse { line, msg: format!("missing field {k}") });
        let num = |k: usize| -> Result<f64> { field(k)?.parse().map_err(|e| Error::Parse { line, msg: format!("{e}") }) };
        let int = |k: usize| -> Result<usize> { field(k)?.parse().map_err(|e| Error::Parse { line, msg: format!("{e}") }) };
        let converged = field(4)?.parse().map_err(|e| Error::Parse { line, msg: format!("{e}") })?;
        out.push(QqRow { n: int(0)?, r: int(1)?, point: QqPoint { theoretical: num(2)?, standardized: num(3)?, converged } });
    }
    Ok(out)
}

/// summary.json, bias_std.csv and qq_<coord>.csv for every coordinate with enough replicates.
pub fn write_outputs(study: &StudySummary, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("summary.json"), study.to_json_string()?)?;
    let mut w = csv::Writer::from_path(dir.join("bias_std.csv")).map_err(csv_err)?;
    w.write_record(["n", "r", "coord", "bias", "std", "n_converged"]).map_err(csv_err)?;
    for cell in &study.cells {
        for c in &cell.coords {
            w.write_record([
                cell.n.to_string(),
                cell.r.to_string(),
                c.coord.clone(),
                format_float(c.bias),
                format_float(c.std),
                cell.n_converged.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush()?;
    for (j, name) in COORD_NAMES.iter().enumerate() {
        match qq_data(study, j) {
            Ok(rows) => write_qq_csv(&dir.join(format!("qq_{name}.csv")), &rows)?,
            Err(Error::TooFewReplicates(_)) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkflowConfig {
    pub delta: f64,
    pub r: usize,
    pub weight: WeightKind,
    /// Multiplies every return, e.g. 1000 for daily log returns.
    pub scale: Option<f64>,
    pub box_frac: f64,
    pub optimizer: NelderMeadConfig,
    pub mc_samples: usize,
    pub mc_seed: u64,
    pub moment_power: f64,
}

impl Default for WorkflowConfig {
    fn default() -> Self {
        Self {
            delta: 1.0,
            r: 10,
            weight: WeightKind::Basic,
            scale: None,
            box_frac: 1.0,
            optimizer: NelderMeadConfig::default(),
            mc_samples: 1_000_000,
            mc_seed: 2024,
            moment_power: 4.001,
        }
    }
}

/// Two-step GMM on a returns CSV from a user-supplied start, with diagnostics at the estimate.
pub fn real_data_workflow(
    csv_path: &Path,
    init: &[f64],
    levy: &LevySpec,
    cfg: &WorkflowConfig,
) -> Result<(EstimationResult, ConditionReport)> {
    let mut sample = read_returns_csv(csv_path, cfg.delta)?;
    if let Some(s) = cfg.scale {
        sample.returns *= s;
    }
    let bounds: Vec<(f64, f64)> = init
        .iter()
        .map(|&v| {
            let h = cfg.box_frac * v.abs().max(0.05);
            (v - h, v + h)
        })
        .collect();
    let init = ThetaVector::new(init.to_vec(), bounds)?;
    let res = two_step_estimate(&sample, cfg.r, cfg.weight, &init, levy, &cfg.optimizer)?;
    let mut report = match theta_to_matrices(&res.theta_hat.values) {
        Ok(p) => {
            let mut rep = structural_report(&p, levy, cfg.delta);
            match m_integral(&p, levy, cfg.moment_power, cfg.mc_samples, cfg.mc_seed) {
                Ok(m) => rep.push("g.2", m.status(), Some(m.value), format!("m({}) with stderr {:.4}", cfg.moment_power, m.stderr)),
                Err(e) => rep.push("g.2", crate::diagnostics::Status::Fail, None, e.to_string()),
            }
            rep
        }
        Err(e) => {
            let mut rep = ConditionReport::default();
            rep.push("theta", crate::diagnostics::Status::Fail, None, e.to_string());
            rep
        }
    };
    report.push("converged", pass_if(res.converged), Some(res.objective), res.reason.clone());
    Ok((res, report))
}
