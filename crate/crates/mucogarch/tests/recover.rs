mod common;

use common::*;
use mucogarch::error::Error;
use mucogarch::levy_model::{cal_b, LevySpec, MucogarchParams};
use mucogarch::moments::{acov_sq_returns, mean_sq_return, model_moment_vector, MomentVector};
use mucogarch::recover::*;
use mucogarch::tensor_ops::{duplication_matrix, elimination_matrix, expm, spectral_abscissa, sym_restrict, SymOperator};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

#[test]
fn exp_b_from_exact_acov() {
    let (p, levy) = example1();
    let a1 = acov_sq_returns(&p, &levy, DELTA, 1).unwrap();
    let a2 = acov_sq_returns(&p, &levy, DELTA, 2).unwrap();
    let e = recover_exp_b(&a1, &a2).unwrap();
    let truth = sym_restrict(&expm(&(cal_b(&p, levy.sigma_l) * DELTA))).unwrap();
    assert!((e.matrix - truth.matrix).amax() < 1e-10);
}

#[test]
fn equal_acov_gives_identity_then_rejected() {
    let (p, levy) = example1();
    let a1 = acov_sq_returns(&p, &levy, DELTA, 1).unwrap();
    let e = recover_exp_b(&a1, &a1).unwrap();
    assert!((&e.matrix - DMatrix::<f64>::identity(3, 3)).amax() < 1e-10);
    let gen = log_sym_generator(&e, DELTA).unwrap();
    assert!(gen.amax() < 1e-8);
    // B = 0 up to rounding: either the square root fails or B is not stable
    match recover_ab_from_sym(&SymOperator::new(2, gen).unwrap(), 1.0) {
        Err(e) => assert!(matches!(e, Error::NegativeSquare(_) | Error::DegenerateAsymmetry(_)), "{e}"),
        Ok((_, b, _)) => assert!(spectral_abscissa(&b) > -1e-6),
    }
}

#[test]
fn log_of_scaled_identity() {
    let e = SymOperator::new(2, DMatrix::identity(3, 3) * (-2.0 * DELTA).exp()).unwrap();
    let g = log_sym_generator(&e, DELTA).unwrap();
    assert!((g + DMatrix::identity(3, 3) * 2.0).amax() < 1e-12);
}

#[test]
fn strip_boundary_rejected() {
    let t = std::f64::consts::PI - 1e-12;
    let rot = DMatrix::from_row_slice(3, 3, &[t.cos(), -t.sin(), 0.0, t.sin(), t.cos(), 0.0, 0.0, 0.0, 0.5]);
    let e = SymOperator::new(2, rot).unwrap();
    assert!(matches!(log_sym_generator(&e, DELTA), Err(Error::StripViolation)));
}

#[test]
fn cal_b_example1_round_trip() {
    let (p, levy) = example1();
    let cb = cal_b(&p, levy.sigma_l);
    let (a, b, res) = recover_ab_from_cal_b(&cb, levy.sigma_l).unwrap();
    assert!((a - &p.a).amax() < 1e-10);
    assert!((b - &p.b).amax() < 1e-10);
    assert!(res < 1e-10);

    let e = sym_restrict(&expm(&(&cb * DELTA))).unwrap();
    let rec = log_to_cal_b(&e, DELTA, levy.sigma_l).unwrap();
    assert!((rec - cb).norm() < 1e-8);
}

#[test]
fn symmetric_a_is_degenerate() {
    let a = DMatrix::from_row_slice(2, 2, &[0.5, 0.2, 0.2, 0.4]);
    let b = DMatrix::from_row_slice(2, 2, &[-1.0, 0.1, 0.1, -1.2]);
    let p = MucogarchParams { a, b, c: DMatrix::identity(2, 2) };
    let cb = cal_b(&p, 1.0);
    assert!(matches!(recover_ab_from_cal_b(&cb, 1.0), Err(Error::DegenerateAsymmetry(_))));
    let gen = sym_restrict(&cb).unwrap();
    assert!(matches!(recover_ab_from_sym(&gen, 1.0), Err(Error::DegenerateAsymmetry(_))));
}

fn random_ab(rng: &mut rand_chacha::ChaCha8Rng, d: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut a: DMatrix<f64> = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
    a[(0, 1)] = rng.random_range(0.1..1.0);
    while (a[(0, 1)] - a[(1, 0)]).abs() < 0.05 {
        a[(1, 0)] = rng.random_range(-1.0..1.0);
    }
    let m = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
    let b = (&m + m.transpose()) * 0.5 - DMatrix::identity(d, d) * 3.0;
    (a, b)
}

#[test]
fn random_cal_b_round_trip_d2_d3() {
    let mut g = rng(7);
    for d in [2, 3] {
        for _ in 0..100 {
            let (a, b) = random_ab(&mut g, d);
            let sigma = g.random_range(0.5..2.0);
            let p = MucogarchParams { a: a.clone(), b: b.clone(), c: DMatrix::identity(d, d) };
            let (ra, rb, _) = recover_ab_from_cal_b(&cal_b(&p, sigma), sigma).unwrap();
            assert!((ra - a).amax() < 1e-8);
            assert!((rb - b).amax() < 1e-8);
        }
    }
}

#[test]
fn random_sym_round_trip_d2() {
    let mut g = rng(8);
    for _ in 0..100 {
        let (a, b) = random_ab(&mut g, 2);
        let p = MucogarchParams { a: a.clone(), b: b.clone(), c: DMatrix::identity(2, 2) };
        let gen = sym_restrict(&cal_b(&p, 1.3)).unwrap();
        let (ra, rb, res) = recover_ab_from_sym(&gen, 1.3).unwrap();
        assert!((ra - a).amax() < 1e-8, "{res}");
        assert!((rb - b).amax() < 1e-8);
    }
}

#[test]
fn c_from_exact_mean() {
    let (p, levy) = example1();
    let mean = mean_sq_return(&p, &levy, DELTA).unwrap();
    let c = recover_c(&mean, &p.a, &p.b, levy.sigma_l, levy.sigma_w, DELTA).unwrap();
    assert!((c - &p.c).amax() < 1e-10);
}

#[test]
fn c_with_zero_a_collapses() {
    let a = DMatrix::zeros(2, 2);
    let b = DMatrix::from_row_slice(2, 2, &[-1.0, 0.2, 0.2, -2.0]);
    let mean = DVector::from_vec(vec![0.3, 0.1, 0.1, 0.5]);
    let c = recover_c(&mean, &a, &b, 1.0, 0.5, DELTA).unwrap();
    let expect = DMatrix::from_column_slice(2, 2, mean.as_slice()) / (1.5 * DELTA);
    assert!((c - expect).amax() < 1e-12);
}

#[test]
fn c_unstable_b_rejected() {
    let a = DMatrix::zeros(2, 2);
    let b = DMatrix::identity(2, 2);
    let mean = DVector::from_vec(vec![0.3, 0.1, 0.1, 0.5]);
    assert!(matches!(recover_c(&mean, &a, &b, 1.0, 0.0, DELTA), Err(Error::UnstableB(_))));
}

#[test]
fn c_noisy_mean_stays_pd() {
    let (p, levy) = example1();
    let mean = mean_sq_return(&p, &levy, DELTA).unwrap();
    let mut g = rng(3);
    for _ in 0..50 {
        let mut noisy = mean.map(|x| x * (1.0 + g.random_range(-0.01..0.01)));
        noisy[2] = noisy[1];
        let c = recover_c(&noisy, &p.a, &p.b, levy.sigma_l, levy.sigma_w, DELTA).unwrap();
        assert!(c.symmetric_eigenvalues().min() > 0.0);
    }
}

#[test]
fn axa_identification() {
    let id = identify_from_axa(|x| x.clone(), 3).unwrap();
    assert!((id - DMatrix::<f64>::identity(3, 3)).amax() < 1e-14);

    let mut g = rng(11);
    for _ in 0..20 {
        let mut a = DMatrix::from_fn(3, 3, |_, _| g.random_range(-1.0..1.0));
        a[(0, 0)] = g.random_range(0.1..1.0);
        let rec = identify_from_axa(|x| &a * x * a.transpose(), 3).unwrap();
        assert!((rec - &a).amax() < 1e-10);
    }

    let mut a = DMatrix::from_fn(3, 3, |_, _| g.random_range(-1.0..1.0));
    a[(0, 0)] = 0.0;
    a[(0, 1)] = 0.7;
    let rec = identify_from_axa(|x| &a * x * a.transpose(), 3).unwrap();
    assert!((rec - &a).amax() < 1e-10);

    let mut z = DMatrix::from_fn(3, 3, |_, _| g.random_range(-1.0..1.0));
    z.row_mut(0).fill(0.0);
    assert!(matches!(identify_from_axa(|x| &z * x * z.transpose(), 3), Err(Error::HypothesisViolated(_))));
}

fn round_trip(th: &[f64], p: &MucogarchParams, levy: &LevySpec) -> f64 {
    let k = model_moment_vector(p, levy, DELTA, 2).unwrap();
    let rec = moment_init(&k, levy).unwrap();
    assert!(rec.feasible);
    assert!(rec.residuals.exp_b < 1e-6 && rec.residuals.cal_b < 1e-6 && rec.residuals.mean < 1e-6);
    max_abs_diff(&rec.theta, th)
}

#[test]
fn moment_init_examples() {
    let (p, levy) = example1();
    assert!(round_trip(&THETA_EX1, &p, &levy) < 1e-6);
    let (p, levy) = example2();
    assert!(round_trip(&theta_ex2(), &p, &levy) < 1e-6);
}

#[test]
fn moment_init_random_feasible() {
    let levy = LevySpec::new(1.0, 4.0, 0.25).unwrap();
    let mut g = rng(5);
    for _ in 0..40 {
        let (th, p) = random_feasible(&mut g, &levy);
        let err = round_trip(&th, &p, &levy);
        assert!(err < 1e-6, "{th:?}: {err}");
    }
}

#[test]
fn moment_init_needs_two_lags() {
    let (p, levy) = example1();
    let k = model_moment_vector(&p, &levy, DELTA, 1).unwrap();
    assert!(matches!(moment_init(&k, &levy), Err(Error::InsufficientData(_))));
}

/// Multiplicative noise that keeps each block symmetric-subspace preserving, like empirical moments.
fn structured_noise(k: &MomentVector, eps: f64, g: &mut rand_chacha::ChaCha8Rng) -> MomentVector {
    let (dup, elim) = (duplication_matrix(2), elimination_matrix(2));
    let mut v = k.values.clone();
    let mean = &dup * (&elim * k.mean_block()).map(|x| x * (1.0 + eps * g.random_range(-1.0..1.0)));
    v.rows_mut(0, 4).copy_from(&mean);
    for blk in 0..=k.r {
        let m = DMatrix::from_column_slice(4, 4, &k.values.as_slice()[4 + 16 * blk..20 + 16 * blk]);
        let n = (&elim * m * elim.transpose()).map(|x| x * (1.0 + eps * g.random_range(-1.0..1.0)));
        let back = &dup * n * dup.transpose();
        v.rows_mut(4 + 16 * blk, 16).copy_from_slice(back.as_slice());
    }
    MomentVector::new(2, k.r, k.delta, v).unwrap()
}

#[test]
fn noisy_moments_report_residuals() {
    let (p, levy) = example1();
    let k = model_moment_vector(&p, &levy, DELTA, 3).unwrap();
    let mut g = rng(9);
    let (mut ok, mut failed) = (0, 0);
    for _ in 0..20 {
        let kn = structured_noise(&k, 0.01, &mut g);
        let e = recover_exp_b(&kn.central_lag(1), &kn.central_lag(2)).unwrap();
        assert!(e.matrix.iter().all(|x| x.is_finite()));
        match moment_init(&kn, &levy) {
            Ok(r) => {
                ok += 1;
                assert!(r.residuals.exp_b.is_finite() && r.residuals.cal_b.is_finite() && r.residuals.mean.is_finite());
            }
            Err(e) => {
                failed += 1;
                assert!(matches!(e, Error::NegativeSquare(_) | Error::DegenerateAsymmetry(_) | Error::StripViolation), "{e}");
            }
        }
    }
    assert_eq!(ok + failed, 20);
}

#[test]
fn residuals_scale_linearly_with_perturbation() {
    let (p, levy) = example1();
    let k = model_moment_vector(&p, &levy, DELTA, 2).unwrap();
    let other = model_moment_vector(&common::example2().0, &levy, DELTA, 2).unwrap();
    let dir = &other.values - &k.values;
    let err = |eps: f64| {
        let kn = MomentVector::new(2, 2, DELTA, &k.values + &dir * eps).unwrap();
        max_abs_diff(&moment_init(&kn, &levy).unwrap().theta, &THETA_EX1)
    };
    let (e1, e2) = (err(1e-5), err(1e-4));
    assert!(e2 / e1 > 8.0 && e2 / e1 < 12.0, "{e1} {e2}");
}
