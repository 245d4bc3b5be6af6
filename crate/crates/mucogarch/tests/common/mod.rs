#![allow(dead_code)]

use mucogarch::diagnostics::structural_report;
use mucogarch::levy_model::{theta_to_matrices, LevySpec, MucogarchParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const DELTA: f64 = 0.1;

pub const THETA_EX1: [f64; 10] = [0.85, 0.10, -0.10, 0.75, -2.43, 0.05, -2.42, 1.0, 0.5, 1.5];

pub fn theta_ex2() -> [f64; 10] {
    let mut t = THETA_EX1;
    for b in &mut t[4..7] {
        *b /= 4.0;
    }
    t
}

pub fn example1() -> (MucogarchParams, LevySpec) {
    (theta_to_matrices(&THETA_EX1).unwrap(), LevySpec::new(1.0, 4.0, 0.25).unwrap())
}

pub fn example2() -> (MucogarchParams, LevySpec) {
    (theta_to_matrices(&theta_ex2()).unwrap(), LevySpec::new(0.0, 4.0, 0.25).unwrap())
}

pub const THETA_REAL: [f64; 10] = [0.442, 0.259, 0.054, 0.194, -0.146, -0.014, -0.080, 0.257, -0.134, 0.070];

pub fn real_data() -> (MucogarchParams, LevySpec) {
    (theta_to_matrices(&THETA_REAL).unwrap(), LevySpec::new(1.0, 4.0, 0.25).unwrap())
}

/// Rejection sampler over d = 2 parameters passing every deterministic condition.
pub fn random_feasible(rng: &mut ChaCha8Rng, levy: &LevySpec) -> (Vec<f64>, MucogarchParams) {
    loop {
        let a12: f64 = rng.random_range(0.05..0.6);
        let a21: f64 = rng.random_range(-0.6..0.6);
        if (a12 - a21).abs() < 0.05 {
            continue;
        }
        let l11: f64 = rng.random_range(0.5..1.5);
        let l21: f64 = rng.random_range(-0.8..0.8);
        let l22: f64 = rng.random_range(0.5..1.5);
        let th = vec![
            rng.random_range(-1.0..1.0),
            a12,
            a21,
            rng.random_range(-1.0..1.0),
            rng.random_range(-3.0..-0.5),
            rng.random_range(-0.3..0.3),
            rng.random_range(-3.0..-0.5),
            l11 * l11,
            l11 * l21,
            l21 * l21 + l22 * l22,
        ];
        let Ok(p) = theta_to_matrices(&th) else { continue };
        if structural_report(&p, levy, DELTA).all_pass() {
            return (th, p);
        }
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
