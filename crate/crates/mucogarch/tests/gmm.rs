mod common;

use common::*;
use mucogarch::error::Error;
use mucogarch::gmm::*;
use mucogarch::levy_model::{cal_b, theta_to_matrices_unchecked, LevySpec, ThetaVector};
use mucogarch::moments::{model_moment_vector, MomentVector};
use mucogarch::optim::NelderMeadConfig;
use mucogarch::sample_stats::CovKind;
use mucogarch::simulate::{simulate_returns, SeedInfo};
use mucogarch::tensor_ops::{kron, vec};
use nalgebra::DMatrix;
use rand::Rng;

fn exact_k(r: usize) -> (MomentVector, LevySpec) {
    let (p, levy) = example1();
    (model_moment_vector(&p, &levy, DELTA, r).unwrap(), levy)
}

#[test]
fn objective_basics() {
    let (k, levy) = exact_k(3);
    let id = DMatrix::identity(k.values.len(), k.values.len());
    assert_eq!(objective(&THETA_EX1, &k, &id, &levy, None).unwrap(), 0.0);

    let mut th = THETA_EX1;
    th[0] += 0.01;
    let other = model_moment_vector(&theta_to_matrices_unchecked(&th).unwrap(), &levy, DELTA, 3).unwrap();
    let v = objective(&th, &k, &id, &levy, None).unwrap();
    assert!((v - (&k.values - other.values).norm_squared()).abs() < 1e-14);

    let mut bad = THETA_EX1;
    bad[8] = 3.0;
    assert!(objective(&bad, &k, &id, &levy, None).unwrap() >= PENALTY_BASE);
    let small = DMatrix::identity(3, 3);
    assert!(matches!(objective(&THETA_EX1, &k, &small, &levy, None), Err(Error::DimensionMismatch(_))));
}

#[test]
fn penalty_grows_with_distance() {
    let (k, levy) = exact_k(2);
    let id = DMatrix::identity(k.values.len(), k.values.len());
    let bounds = ThetaVector::box_around(&THETA_EX1, 0.5);
    let mut a = THETA_EX1;
    a[0] = bounds[0].1 + 0.1;
    let mut b = a;
    b[0] += 0.1;
    let fa = objective(&a, &k, &id, &levy, Some(&bounds)).unwrap();
    let fb = objective(&b, &k, &id, &levy, Some(&bounds)).unwrap();
    assert!(fa >= PENALTY_BASE && fb > fa);
}

#[test]
fn identifiability_sweep() {
    let (k, levy) = exact_k(2);
    let id = DMatrix::identity(k.values.len(), k.values.len());
    let bounds = ThetaVector::box_around(&THETA_EX1, 0.5);
    let mut g = rng(17);
    let mut feasible = 0;
    for _ in 0..10_000 {
        let th: Vec<f64> = bounds.iter().map(|(lo, hi)| g.random_range(*lo..*hi)).collect();
        let v = objective(&th, &k, &id, &levy, Some(&bounds)).unwrap();
        assert!(v > 0.0);
        feasible += usize::from(v < PENALTY_BASE);
    }
    assert!(feasible > 1000);
}

#[test]
fn noiseless_inversion() {
    let (k, levy) = exact_k(2);
    let len = k.values.len();
    let mut g = rng(2);
    let init: Vec<f64> = THETA_EX1.iter().map(|t| t + if g.random_bool(0.5) { 0.05 } else { -0.05 }).collect();
    let theta = ThetaVector::new(init, ThetaVector::box_around(&THETA_EX1, 1.0)).unwrap();
    let cfg = NelderMeadConfig { restarts: 5, max_evals: 60_000, rel_tol: 1e-14, ..Default::default() };
    let res = estimate(&k, &DMatrix::identity(len, len), WeightKind::Identity, &theta, &levy, &cfg).unwrap();
    let err = max_abs_diff(&res.theta_hat.values, &THETA_EX1);
    assert!(err < 1e-4, "{err} {res:?}");
}

#[test]
fn infeasible_init_rejected() {
    let (k, levy) = exact_k(2);
    let len = k.values.len();
    let mut th = THETA_EX1.to_vec();
    th[8] = 3.0;
    let theta = ThetaVector::new(th, ThetaVector::box_around(&THETA_EX1, 5.0)).unwrap();
    let r = estimate(&k, &DMatrix::identity(len, len), WeightKind::Identity, &theta, &levy, &NelderMeadConfig::default());
    assert!(matches!(r, Err(Error::InfeasibleInit)));
}

#[test]
fn weight_kind_parsing() {
    for s in ["identity", "basic", "diag", "truncated:7"] {
        assert_eq!(s.parse::<WeightKind>().unwrap().to_string(), s);
    }
    assert!("truncated:x".parse::<WeightKind>().is_err());
}

#[test]
fn weight_repairs() {
    let s = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 4.0]);
    let (w, notes) = weight_from_cov(&s, CovKind::Diag).unwrap();
    assert_eq!(w, DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.25]));
    assert!(notes.is_empty());

    let indefinite = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
    let (w, notes) = weight_from_cov(&indefinite, CovKind::Truncated(3)).unwrap();
    assert_eq!(notes.len(), 1);
    assert!(w.symmetric_eigenvalues().min() > 0.0);

    let neg = -DMatrix::<f64>::identity(2, 2);
    assert!(matches!(weight_from_cov(&neg, CovKind::Basic), Err(Error::WeightNotInvertible)));
    assert!(matches!(weight_from_cov(&neg, CovKind::Diag), Err(Error::WeightNotInvertible)));
}

/// d mean / d theta for the A and B coordinates by differentiating the inverse of calB.
fn analytic_mean_jacobian(theta: &[f64], levy: &LevySpec) -> DMatrix<f64> {
    let p = theta_to_matrices_unchecked(theta).unwrap();
    let s = levy.sigma_l;
    let id = DMatrix::<f64>::identity(2, 2);
    let cb_inv = cal_b(&p, s).try_inverse().unwrap();
    let vc = vec(&p.c);
    let aa = kron(&p.a, &p.a);
    let mut out = DMatrix::zeros(4, 7);
    for j in 0..7 {
        let mut dt = vec![0.0; 10];
        dt[j] = 1.0;
        let dp = theta_to_matrices_unchecked(&dt).unwrap();
        let daa = kron(&dp.a, &p.a) + kron(&p.a, &dp.a);
        let dcb = kron(&dp.b, &id) + kron(&id, &dp.b) + &daa * s;
        let d = (&cb_inv * dcb * &cb_inv * &aa * &vc - &cb_inv * daa * &vc) * (s * (s + levy.sigma_w) * DELTA);
        out.set_column(j, &d);
    }
    out
}

#[test]
fn jacobian_mean_block_matches_analytic_derivative() {
    let (_, levy) = example1();
    let jac = jacobian_k(&THETA_EX1, &levy, DELTA, 2, 1e-6).unwrap();
    let analytic = analytic_mean_jacobian(&THETA_EX1, &levy);
    let fd = jac.matrix.view((0, 0), (4, 7));
    let err = (fd - &analytic).amax() / analytic.amax();
    assert!(err < 1e-6, "{err}");
}

#[test]
fn jacobian_affine_in_c() {
    let (p, levy) = example1();
    let jac = jacobian_k(&THETA_EX1, &levy, DELTA, 2, 1e-6).unwrap();
    // mean = sigma delta (I - sigma_L calB^{-1} (A (x) A)) vec C
    let cb_inv = cal_b(&p, levy.sigma_l).try_inverse().unwrap();
    let lin = (DMatrix::identity(4, 4) - cb_inv * kron(&p.a, &p.a) * levy.sigma_l) * ((levy.sigma_l + levy.sigma_w) * DELTA);
    let dc = DMatrix::from_column_slice(4, 3, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
    let err = (jac.matrix.view((0, 7), (4, 3)) - lin * dc).amax();
    assert!(err <= 1e-9, "{err}");
}

#[test]
fn jacobian_second_order() {
    let (_, levy) = example1();
    let j = |h: f64| central_difference(&THETA_EX1, &levy, DELTA, 5, &[h; 10]).unwrap();
    let reference = (j(0.0025) * 4.0 - j(0.005)) / 3.0;
    let ratio = (j(0.02) - &reference).norm() / (j(0.01) - &reference).norm();
    assert!((3.5..=4.5).contains(&ratio), "{ratio}");
}

#[test]
fn jacobian_boundary() {
    let (_, levy) = example1();
    let mut th = THETA_EX1;
    th[1] = 1e-7;
    assert!(matches!(jacobian_k(&th, &levy, DELTA, 2, 1e-6), Err(Error::BoundaryTooClose(1))));
}

fn random_pd(g: &mut rand_chacha::ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let m = DMatrix::from_fn(n, n, |_, _| g.random_range(-1.0..1.0));
    &m * m.transpose() + DMatrix::identity(n, n) * 0.1
}

#[test]
fn sandwich_efficient_case() {
    let mut g = rng(4);
    let jac = DMatrix::from_fn(12, 4, |_, _| g.random_range(-1.0..1.0));
    let sigma = random_pd(&mut g, 12);
    let omega = sigma.clone().try_inverse().unwrap();
    let s = sandwich_from_jacobian(&jac, &sigma, &omega, 50).unwrap();
    let expect = (jac.transpose() * &omega * &jac).try_inverse().unwrap() / 50.0;
    assert!((&s - expect).amax() < 1e-10 * s.amax());

    let other = random_pd(&mut g, 12);
    let s = sandwich_from_jacobian(&jac, &sigma, &other, 50).unwrap();
    assert!(s.symmetric_eigenvalues().min() > 0.0);

    let mut degenerate = jac.clone();
    degenerate.column_mut(2).fill(0.0);
    assert!(matches!(sandwich_from_jacobian(&degenerate, &sigma, &omega, 50), Err(Error::SingularJ(_))));
}

#[test]
fn two_step_runs_and_is_deterministic() {
    let (p, levy) = example1();
    let sample = simulate_returns(&p, &levy, DELTA, 3000, 10, None, SeedInfo::new(5)).unwrap();
    let init = ThetaVector::new(THETA_EX1.to_vec(), ThetaVector::box_around(&THETA_EX1, 0.5)).unwrap();
    let cfg = NelderMeadConfig { max_evals: 3000, ..Default::default() };
    for weight in [WeightKind::Diag, WeightKind::Basic, WeightKind::Truncated(5)] {
        let a = two_step_estimate(&sample, 3, weight, &init, &levy, &cfg).unwrap();
        let first = a.first_step.as_ref().unwrap();
        assert!(a.objective >= 0.0 && first.objective >= 0.0);
        assert!(a.objective < PENALTY_BASE);
        assert!(a.condition_report.is_some());
        if let Some(c) = &a.sandwich_cov {
            assert!((c - c.transpose()).amax() == 0.0);
            assert!(c.symmetric_eigenvalues().min() > -1e-12 * c.amax());
        }
        let b = two_step_estimate(&sample, 3, weight, &init, &levy, &cfg).unwrap();
        assert_eq!(a.theta_hat, b.theta_hat);
        assert_eq!(a.objective, b.objective);
        let json = a.to_json();
        assert_eq!(json["weight_kind"], weight.to_string());
    }
    let id = two_step_estimate(&sample, 3, WeightKind::Identity, &init, &levy, &cfg);
    assert!(matches!(id, Err(Error::InvalidConfig(_))));
}
