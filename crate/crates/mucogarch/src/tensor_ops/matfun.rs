use nalgebra::DMatrix;

use crate::error::{Error, Result};

const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

const PADE_LOW: [(usize, f64); 4] = [
    (3, 1.495585217958292e-2),
    (5, 2.539398330063230e-1),
    (7, 9.504178996162932e-1),
    (9, 2.097847961257068e0),
];

const THETA13: f64 = 5.371920351148152;

fn pade_coeffs(m: usize) -> &'static [f64] {
    const P3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
    const P5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
    const P7: [f64; 8] = [17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0];
    const P9: [f64; 10] = [
        17643225600.0,
        8821612800.0,
        2075673600.0,
        302702400.0,
        30270240.0,
        2162160.0,
        110880.0,
        3960.0,
        90.0,
        1.0,
    ];
    match m {
        3 => &P3,
        5 => &P5,
        7 => &P7,
        9 => &P9,
        _ => &PADE13,
    }
}

fn one_norm(m: &DMatrix<f64>) -> f64 {
    m.column_iter().map(|c| c.iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max)
}

fn solve(p: &DMatrix<f64>, q: &DMatrix<f64>) -> DMatrix<f64> {
    q.clone().lu().solve(p).expect("Pade denominator is nonsingular within its range")
}

/// Matrix exponential by scaling and squaring with a diagonal Pade approximant.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    assert!(a.is_square(), "expm needs a square matrix");
    let n = a.nrows();
    let id = DMatrix::<f64>::identity(n, n);
    let norm = one_norm(a);
    if norm == 0.0 {
        return id;
    }
    let a2 = a * a;
    for &(m, theta) in &PADE_LOW {
        if norm <= theta {
            let b = pade_coeffs(m);
            let mut u = &id * b[1];
            let mut v = &id * b[0];
            let mut pow = id.clone();
            for k in 1..=m / 2 {
                pow = &pow * &a2;
                u += &pow * b[2 * k + 1];
                v += &pow * b[2 * k];
            }
            let u = a * u;
            return solve(&(&v + &u), &(&v - &u));
        }
    }
    let s = if norm > THETA13 { (norm / THETA13).log2().ceil() as i32 } else { 0 };
    let a = a / 2f64.powi(s);
    let b = &PADE13;
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let u_inner = &a6 * b[13] + &a4 * b[11] + &a2 * b[9];
    let u = &a * (&a6 * u_inner + &a6 * b[7] + &a4 * b[5] + &a2 * b[3] + &id * b[1]);
    let v_inner = &a6 * b[12] + &a4 * b[10] + &a2 * b[8];
    let v = &a6 * v_inner + &a6 * b[6] + &a4 * b[4] + &a2 * b[2] + &id * b[0];
    let mut r = solve(&(&v + &u), &(&v - &u));
    for _ in 0..s {
        r = &r * &r;
    }
    r
}

// 8-point Gauss-Legendre rule on [-1, 1].
const GL_NODES: [f64; 4] = [0.1834346424956498, 0.5255324099163290, 0.7966664774136267, 0.9602898564975363];
const GL_WEIGHTS: [f64; 4] = [0.3626837833783620, 0.3137066458778873, 0.2223810344533745, 0.1012285362903763];

fn sqrtm_db(x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = x.nrows();
    let mut y = x.clone();
    let mut z = DMatrix::<f64>::identity(n, n);
    for _ in 0..100 {
        let yi = y.clone().try_inverse().ok_or(Error::LogmBranchError)?;
        let zi = z.clone().try_inverse().ok_or(Error::LogmBranchError)?;
        let y_next = (&y + zi) * 0.5;
        let z_next = (&z + yi) * 0.5;
        let change = one_norm(&(&y_next - &y));
        y = y_next;
        z = z_next;
        if change <= 1e-15 * one_norm(&y) {
            return Ok(y);
        }
    }
    Ok(y)
}

/// Principal logarithm. Fails if an eigenvalue lies on (-inf, 0].
pub fn logm(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    assert!(m.is_square(), "logm needs a square matrix");
    let n = m.nrows();
    let scale = m.amax().max(f64::MIN_POSITIVE);
    for lam in m.clone().complex_eigenvalues().iter() {
        let on_axis = lam.re <= 0.0 && lam.im.abs() <= 1e-14 * lam.norm().max(scale);
        if lam.norm() <= 1e-14 * scale || on_axis {
            return Err(Error::LogmBranchError);
        }
    }
    let id = DMatrix::<f64>::identity(n, n);
    let mut x = m.clone();
    let mut s = 0;
    while one_norm(&(&x - &id)) > 0.25 {
        if s >= 64 {
            return Err(Error::LogmBranchError);
        }
        x = sqrtm_db(&x)?;
        s += 1;
    }
    let e = &x - &id;
    let mut acc = DMatrix::zeros(n, n);
    for (node, w) in GL_NODES.iter().zip(GL_WEIGHTS) {
        for t in [0.5 * (1.0 - node), 0.5 * (1.0 + node)] {
            let denom = &id + &e * t;
            let term = denom.lu().solve(&e).ok_or(Error::LogmBranchError)?;
            acc += term * (0.5 * w);
        }
    }
    Ok(acc * 2f64.powi(s))
}
