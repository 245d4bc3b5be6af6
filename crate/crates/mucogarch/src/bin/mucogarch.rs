use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;

use mucogarch::diagnostics::{full_report, DiagnosticsConfig};
use mucogarch::gmm::{estimate, two_step_estimate, WeightKind};
use mucogarch::io::{read_returns_csv, write_returns_csv, ParamsFile};
use mucogarch::levy_model::{matrices_to_theta, LevySpec, ThetaVector};
use mucogarch::moments::{model_moment_vector, MomentVector};
use mucogarch::optim::NelderMeadConfig;
use mucogarch::recover::moment_init;
use mucogarch::sample_stats::empirical_moment_vector;
use mucogarch::simulate::{simulate, SeedInfo, SimConfig};
use mucogarch::study::{run_study, write_outputs, InitPolicy, StudyConfig};
use mucogarch::{Error, Result};

#[derive(Parser)]
#[command(name = "mucogarch", version, about = "Multivariate COGARCH(1,1) simulation and GMM estimation")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct LevyArgs {
    /// Brownian variance of the driver
    #[arg(long, default_value_t = 1.0)]
    sigma_w: f64,
    /// Jump intensity of the compound Poisson part
    #[arg(long, default_value_t = 4.0)]
    cpp_rate: f64,
    /// Variance of each jump coordinate
    #[arg(long, default_value_t = 0.25)]
    jump_scale: f64,
}

impl LevyArgs {
    fn spec(&self) -> Result<LevySpec> {
        LevySpec::new(self.sigma_w, self.cpp_rate, self.jump_scale)
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate returns to CSV
    Simulate {
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        substeps: usize,
        /// Burn-in time; defaults to 20 / |spectral abscissa of calB|
        #[arg(long)]
        burn_in: Option<f64>,
        #[arg(long)]
        out: PathBuf,
        /// Also write the volatility path Y as CSV
        #[arg(long)]
        emit_vol: Option<PathBuf>,
    },
    /// Model moment vector from parameters, or the empirical one from returns
    Moments {
        #[arg(long, conflicts_with = "returns")]
        params: Option<PathBuf>,
        #[arg(long)]
        returns: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        r: usize,
        /// Sampling interval of the returns CSV
        #[arg(long, default_value_t = 0.1)]
        delta: f64,
    },
    /// Check stationarity, ergodicity and moment conditions
    Check {
        #[arg(long)]
        params: PathBuf,
        #[arg(long, default_value_t = 10_000_000)]
        mc_samples: usize,
        #[arg(long, default_value_t = 2024)]
        seed: u64,
    },
    /// Closed-form parameter recovery from a moment vector or returns
    Recover {
        #[arg(long, conflicts_with = "returns")]
        moments: Option<PathBuf>,
        #[arg(long)]
        returns: Option<PathBuf>,
        #[arg(long, default_value_t = 2)]
        r: usize,
        #[arg(long, default_value_t = 0.1)]
        delta: f64,
        #[command(flatten)]
        levy: LevyArgs,
    },
    /// GMM estimation on a returns CSV
    Estimate {
        #[arg(long)]
        returns: PathBuf,
        #[arg(long, default_value_t = 10)]
        r: usize,
        #[arg(long, default_value_t = 0.1)]
        delta: f64,
        /// identity, basic, truncated:<M> or diag
        #[arg(long, default_value = "identity")]
        weight: String,
        /// moment or json:<params file>
        #[arg(long, default_value = "moment")]
        init: String,
        #[arg(long)]
        two_step: bool,
        /// Multiply every return by this factor first
        #[arg(long)]
        scale: Option<f64>,
        /// Half-width of the parameter box relative to |init|
        #[arg(long, default_value_t = 1.0)]
        box_frac: f64,
        #[arg(long, default_value_t = 20_000)]
        max_evals: usize,
        #[command(flatten)]
        levy: LevyArgs,
    },
    /// Monte Carlo replication study
    Study {
        /// JSON study configuration; overrides the flags below
        #[arg(long)]
        config: Option<PathBuf>,
        /// Built-in parameter set (1 or 2)
        #[arg(long, default_value_t = 1)]
        example: u8,
        #[arg(long)]
        replicates: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        n: Option<Vec<usize>>,
        #[arg(long, value_delimiter = ',')]
        r: Option<Vec<usize>>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "identity")]
        weight: String,
        /// Start from the closed-form moment recovery instead of the truth neighborhood
        #[arg(long)]
        moment_init: bool,
        /// 500 replicates at n = 100000, r in {2, 5, 10}
        #[arg(long)]
        full: bool,
        #[arg(long, env = "MUCOGARCH_THREADS")]
        threads: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

const EXAMPLE_THETA: [f64; 10] = [0.85, 0.10, -0.10, 0.75, -2.43, 0.05, -2.42, 1.0, 0.5, 1.5];

fn print_json(v: &serde_json::Value) -> Result<()> {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    writeln!(out, "{}", serde_json::to_string_pretty(v)?)?;
    Ok(())
}

fn read_moments(path: &Path) -> Result<MomentVector> {
    MomentVector::from_json(&serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.cmd {
        Cmd::Simulate { params, n, seed, substeps, burn_in, out, emit_vol } => {
            let pf = ParamsFile::read(&params)?;
            let cfg = SimConfig { delta: pf.delta, n, euler_substeps: substeps, burn_in, emit_vol: emit_vol.is_some() };
            let sim = simulate(&pf.params()?, &pf.levy()?, &cfg, SeedInfo::new(seed))?;
            write_returns_csv(&out, &sim.sample)?;
            if let (Some(path), Some(vol)) = (emit_vol, sim.vol) {
                let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io(e.into()))?;
                let d = pf.d;
                let mut header = vec!["t".to_string()];
                header.extend((0..d).flat_map(|j| (0..d).map(move |i| format!("y{}{}", i + 1, j + 1))));
                w.write_record(&header).map_err(|e| Error::Io(e.into()))?;
                for (t, y) in vol.times.iter().zip(&vol.y_values) {
                    let mut rec = vec![format!("{t:?}")];
                    rec.extend(y.iter().map(|x| format!("{x:?}")));
                    w.write_record(&rec).map_err(|e| Error::Io(e.into()))?;
                }
                w.flush()?;
            }
            eprintln!("burn-in {:.3}, {} jumps, min eigenvalue of Y {:.3e}", sim.burn_in, sim.jumps, sim.min_y_eigenvalue);
        }
        Cmd::Moments { params, returns, r, delta } => {
            let k = match (params, returns) {
                (Some(p), _) => {
                    let pf = ParamsFile::read(&p)?;
                    model_moment_vector(&pf.params()?, &pf.levy()?, pf.delta, r)?
                }
                (None, Some(csv)) => empirical_moment_vector(&read_returns_csv(&csv, delta)?, r)?,
                (None, None) => return Err(Error::InvalidConfig("pass --params or --returns".into())),
            };
            print_json(&k.to_json())?;
        }
        Cmd::Check { params, mc_samples, seed } => {
            let pf = ParamsFile::read(&params)?;
            let cfg = DiagnosticsConfig { mc_samples, seed, ..Default::default() };
            let rep = full_report(&pf.params()?, &pf.levy()?, pf.delta, &cfg);
            eprint!("{}", rep.to_table());
            print_json(&serde_json::to_value(&rep)?)?;
            if !rep.all_pass() {
                return Ok(ExitCode::from(2));
            }
        }
        Cmd::Recover { moments, returns, r, delta, levy } => {
            let k = match (moments, returns) {
                (Some(m), _) => read_moments(&m)?,
                (None, Some(csv)) => empirical_moment_vector(&read_returns_csv(&csv, delta)?, r)?,
                (None, None) => return Err(Error::InvalidConfig("pass --moments or --returns".into())),
            };
            print_json(&moment_init(&k, &levy.spec()?)?.to_json())?;
        }
        Cmd::Estimate { returns, r, delta, weight, init, two_step, scale, box_frac, max_evals, levy } => {
            let levy = levy.spec()?;
            let weight: WeightKind = weight.parse()?;
            let mut sample = read_returns_csv(&returns, delta)?;
            if let Some(s) = scale {
                sample.returns *= s;
            }
            let k = empirical_moment_vector(&sample, r)?;
            let start = if init == "moment" {
                moment_init(&k, &levy)?.theta
            } else if let Some(path) = init.strip_prefix("json:") {
                matrices_to_theta(&ParamsFile::read(Path::new(path))?.params()?)?
            } else {
                return Err(Error::InvalidConfig(format!("unknown init '{init}'")));
            };
            let bounds = start
                .iter()
                .map(|&v| {
                    let h = box_frac * v.abs().max(0.05);
                    (v - h, v + h)
                })
                .collect();
            let theta = ThetaVector::new(start, bounds)?;
            let cfg = NelderMeadConfig { max_evals, ..Default::default() };
            let res = if two_step || weight != WeightKind::Identity {
                two_step_estimate(&sample, r, weight, &theta, &levy, &cfg)?
            } else {
                let len = k.values.len();
                estimate(&k, &DMatrix::identity(len, len), weight, &theta, &levy, &cfg)?
            };
            print_json(&res.to_json())?;
        }
        Cmd::Study { config, example, replicates, n, r, seed, weight, moment_init, full, threads, out } => {
            let cfg = match config {
                Some(path) => serde_json::from_str(&std::fs::read_to_string(path)?)?,
                None => {
                    let mut theta = EXAMPLE_THETA.to_vec();
                    let sigma_w = match example {
                        1 => 1.0,
                        2 => {
                            theta[4..7].iter_mut().for_each(|b| *b /= 4.0);
                            0.0
                        }
                        _ => return Err(Error::InvalidConfig(format!("unknown example {example}"))),
                    };
                    let mut cfg = if full { StudyConfig::full(theta, sigma_w) } else { StudyConfig::desk(theta, sigma_w) };
                    if let Some(v) = replicates {
                        cfg.replicates = v;
                    }
                    if let Some(v) = n {
                        cfg.n_list = v;
                    }
                    if let Some(v) = r {
                        cfg.r_list = v;
                    }
                    if let Some(v) = seed {
                        cfg.seed = v;
                    }
                    cfg.weight = weight.parse()?;
                    if moment_init {
                        cfg.init_policy = InitPolicy::Moment { fallback_radius: 0.1 };
                    }
                    cfg
                }
            };
            let summary = run_study(&cfg, threads)?;
            write_outputs(&summary, &out)?;
            for cell in &summary.cells {
                eprintln!(
                    "n = {}, r = {}: {} of {} converged, {} failed",
                    cell.n, cell.r, cell.n_converged, cell.replicates, cell.n_failed
                );
            }
            if summary.n_failed() > 0 {
                return Ok(ExitCode::from(2));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
