mod common;

use common::*;
use mucogarch::diagnostics::*;
use mucogarch::error::Error;
use mucogarch::levy_model::{LevySpec, MucogarchParams};
use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

fn real_s(m: DMatrix<f64>) -> DMatrix<Complex64> {
    m.map(|x| Complex64::new(x, 0.0))
}

fn random_wishart_trace_one(g: &mut impl Rng, d: usize) -> DMatrix<f64> {
    let z = DMatrix::from_fn(d, d + 1, |_, _| g.sample::<f64, _>(StandardNormal));
    let x = &z * z.transpose();
    let t = x.trace();
    x / t
}

fn random_spd(g: &mut impl Rng, d: usize) -> DMatrix<f64> {
    let m = DMatrix::from_fn(d, d, |_, _| g.random_range(-1.0..1.0));
    &m * m.transpose() + DMatrix::identity(d, d) * 0.2
}

#[test]
fn spectra_examples() {
    let (p, levy) = example1();
    let ev = ergodicity_spectrum(&p, &levy, &DMatrix::identity(2, 2));
    assert!((ev[0] + 4.328).abs() < 1e-3 && (ev[1] + 4.067).abs() < 1e-3, "{ev:?}");
    let rep = check_spectra(&p, &levy, DELTA);
    assert!(rep.all_pass());

    let unstable = MucogarchParams { b: DMatrix::identity(2, 2), ..p.clone() };
    assert_eq!(check_spectra(&unstable, &levy, DELTA).get("f.1").unwrap().status, Status::Fail);

    let (p2, _) = example2();
    let mut ev = p2.b.symmetric_eigenvalues().as_slice().to_vec();
    ev.sort_by(f64::total_cmp);
    assert!((ev[0] + 0.619).abs() < 1e-3 && (ev[1] + 0.594).abs() < 1e-3, "{ev:?}");
}

#[test]
fn diagonalization_examples() {
    let (p, _) = example1();
    let dg = check_diagonalizable(&p.b);
    assert!(dg.ok);
    let mut ev: Vec<f64> = dg.eigenvalues.iter().map(|z| z.re).collect();
    ev.sort_by(f64::total_cmp);
    assert!((ev[0] + 2.475).abs() < 1e-3 && (ev[1] + 2.375).abs() < 1e-3);
    let expect = [[-0.671, -0.741], [-0.741, 0.671]];
    for j in 0..2 {
        let c = [dg.s[(0, j)].re, dg.s[(1, j)].re];
        let hit = expect.iter().any(|e| {
            let same = (c[0] - e[0]).abs() < 1e-3 && (c[1] - e[1]).abs() < 1e-3;
            let flipped = (c[0] + e[0]).abs() < 1e-3 && (c[1] + e[1]).abs() < 1e-3;
            same || flipped
        });
        assert!(hit, "{c:?}");
    }

    let id = check_diagonalizable(&DMatrix::identity(2, 2));
    assert!(id.ok);
    assert!((id.s.map(|z| z.re.abs()) - DMatrix::<f64>::identity(2, 2)).amax() < 1e-14);
    assert!(id.eigenvalues.iter().all(|z| (z.re - 1.0).abs() < 1e-14));

    let jordan = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
    assert!(!check_diagonalizable(&jordan).ok);

    let nonsym = DMatrix::from_row_slice(2, 2, &[-1.0, 2.0, 0.0, -3.0]);
    let dg = check_diagonalizable(&nonsym);
    assert!(dg.ok);
    let bc = real_s(nonsym);
    let d = DMatrix::from_diagonal(&dg.eigenvalues);
    assert!((bc * &dg.s - &dg.s * d).norm() < 1e-12);
}

#[test]
fn s_norms() {
    let x = nalgebra::DVector::from_vec(vec![1.0, 0.0, 0.0, 0.0]);
    let s = real_s(DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![2.0, 1.0])));
    assert!((s_norm_vector(&x, &s).unwrap() - 0.25).abs() < 1e-15);

    let mut g = rng(1);
    let id = real_s(DMatrix::identity(2, 2));
    let m = DMatrix::from_fn(4, 4, |_, _| g.random_range(-1.0..1.0));
    assert!((s_norm_operator(&m, &id).unwrap() - m.clone().singular_values().max()).abs() < 1e-12);

    let s = real_s(random_spd(&mut g, 2));
    for _ in 0..50 {
        let a = DMatrix::from_fn(4, 4, |_, _| g.random_range(-1.0..1.0));
        let b = DMatrix::from_fn(4, 4, |_, _| g.random_range(-1.0..1.0));
        let lhs = s_norm_operator(&(&a * &b), &s).unwrap();
        assert!(lhs <= s_norm_operator(&a, &s).unwrap() * s_norm_operator(&b, &s).unwrap() * (1.0 + 1e-12));
    }
    let singular = real_s(DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]));
    assert!(matches!(s_norm_vector(&x, &singular), Err(Error::SingularS)));
}

#[test]
fn bauer_fike_cases() {
    let (p, levy) = example1();
    let m = bauer_fike_condition(&p, &levy).unwrap();
    let expect = -2.0 * p.b.symmetric_eigenvalues().max();
    assert!((m - expect).abs() < 1e-12);

    let mixed = LevySpec::new(0.5, 4.0, 0.25).unwrap();
    let big = MucogarchParams { a: &p.a * 1e6, ..p.clone() };
    assert!(bauer_fike_condition(&big, &mixed).unwrap() < 0.0);
    assert!(bauer_fike_condition(&p, &mixed).unwrap() < m);
}

#[test]
fn k_xi_closed_forms() {
    let b = DMatrix::from_row_slice(2, 2, &[-1.0, 0.3, 0.3, -2.0]);
    let id = DMatrix::identity(2, 2);
    let k = k_xi(&id, &(&b + b.transpose())).unwrap();
    assert!((k - 2.0 * b.symmetric_eigenvalues().max()).abs() < 1e-12);
    assert!((k_xi(&id, &id).unwrap() - 1.0).abs() < 1e-14);
    assert!(matches!(k_xi(&-id.clone(), &id), Err(Error::NonPdXi)));
}

#[test]
fn k_xi_dominates_sampling() {
    let mut g = rng(31);
    for _ in 0..5 {
        let xi = random_spd(&mut g, 2);
        let bm = DMatrix::from_fn(2, 2, |_, _| g.random_range(-2.0..1.0));
        let m = &xi * &bm + bm.transpose() * &xi;
        let (k, x) = k_xi_argmax(&xi, &m).unwrap();
        let ratio = |x: &DMatrix<f64>| (&m * x).trace() / (&xi * x).trace();
        assert!((ratio(&x) - k).abs() <= 1e-6);
        assert!((x.trace() - 1.0).abs() < 1e-12);
        let best = (0..20_000).map(|_| ratio(&random_wishart_trace_one(&mut g, 2))).fold(f64::NEG_INFINITY, f64::max);
        assert!(best <= k + 1e-12);
    }
}

#[test]
fn condition_i_cases() {
    let (p, levy) = example1();
    let id = DMatrix::identity(2, 2);
    assert!((ergodicity_condition_i(&p, &levy, &id).unwrap() - 4.067).abs() < 1e-3);
    let big = MucogarchParams { a: &p.a * 5.0, ..p.clone() };
    assert!(ergodicity_condition_i(&big, &levy, &id).unwrap() < 0.0);
    let simple = MucogarchParams { a: DMatrix::zeros(2, 2), b: -id.clone(), c: id.clone() };
    assert!((ergodicity_condition_i(&simple, &levy, &id).unwrap() - 2.0).abs() < 1e-14);
    let (w, m) = find_xi_witness(&p, &levy).unwrap();
    assert_eq!(w, id);
    assert!(m > 0.0);
}

#[test]
fn conditions_ii_iii_p1_closed_form() {
    let (p, levy) = example1();
    let xi = DMatrix::identity(2, 2);
    let r = ergodicity_conditions_ii_iii(&p, &levy, &xi, 1.0, 400_000, 5).unwrap();
    let kb = k_xi(&xi, &(&p.b + p.b.transpose())).unwrap();
    let ka = k_xi(&xi, &(p.a.transpose() * &p.a)).unwrap();
    let closed = levy.cpp_rate * levy.jump_scale * 2.0 * ka + kb;
    assert!((r.iii.value - closed).abs() < 3.0 * r.iii.stderr, "{:?} {closed}", r.iii);
    // (ii) at p = 1 has the same mean
    assert!((r.ii.value - closed).abs() < 3.0 * r.ii.stderr, "{:?} {closed}", r.ii);

    let quiet = LevySpec::new(1.0, 1e-12, 0.25).unwrap();
    let r = ergodicity_conditions_ii_iii(&p, &quiet, &xi, 2.0, 1000, 5).unwrap();
    assert!((r.iii.value - kb).abs() < 1e-9);
    assert!((r.ii.value - 2.0 * kb).abs() < 1e-9);
}

#[test]
fn k2_cases() {
    let id = real_s(DMatrix::identity(2, 2));
    assert!((k2_constant(&id).unwrap() - 1.0).abs() < 1e-6);
    let scaled = real_s(DMatrix::identity(2, 2) * 3.0);
    assert!((k2_constant(&scaled).unwrap() - 9.0).abs() < 1e-5);
    let (p, _) = example1();
    let s = check_diagonalizable(&p.b).s;
    let a = k2_constant_with(&s, 50, 100_000, 1).unwrap();
    let b = k2_constant_with(&s, 50, 100_000, 2).unwrap();
    assert!((a - b).abs() < 1e-6);
}

#[test]
fn m_integral_deterministic_and_reported() {
    let (p, levy) = example2();
    let a = m_integral(&p, &levy, 4.001, 200_000, 9).unwrap();
    let b = m_integral(&p, &levy, 4.001, 200_000, 9).unwrap();
    assert_eq!(a, b);
    assert!((a.value - 14.22).abs() < 1.0 + 3.0 * a.stderr);
    assert_eq!(a.status(), Status::Fail);
    let inconclusive = McEstimate { value: 0.01, stderr: 0.1 };
    assert_eq!(inconclusive.status(), Status::Inconclusive);
}

#[test]
fn full_report_lists_each_condition_once() {
    let (p, levy) = example1();
    let cfg = DiagnosticsConfig { mc_samples: 50_000, ..Default::default() };
    let rep = full_report(&p, &levy, DELTA, &cfg);
    let mut ids: Vec<&str> = rep.entries.iter().map(|e| e.id.as_str()).collect();
    let n = ids.len();
    ids.sort();
    ids.dedup();
    assert_eq!(ids.len(), n);
    for id in ["b.2.B", "b.2.C", "f.1", "f.2", "f.3", "f.4", "f.5", "f.6", "f.7", "f.8", "g.1", "g.2"] {
        assert!(rep.get(id).is_some(), "{id}");
    }
    for e in &rep.entries {
        assert!(e.value.is_none_or(f64::is_finite) || e.status == Status::Inconclusive);
    }
    assert!(rep.to_table().contains("f.6"));
}
