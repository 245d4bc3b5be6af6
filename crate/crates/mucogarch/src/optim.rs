//! Nelder-Mead simplex minimizer.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NelderMeadConfig {
    pub reflection: f64,
    pub expansion: f64,
    pub contraction: f64,
    pub shrink: f64,
    pub max_evals: usize,
    /// Stop when f_max - f_min <= rel_tol * (|f_min| + rel_tol).
    pub rel_tol: f64,
    /// Fresh simplices started from the best point after convergence.
    pub restarts: usize,
}

impl Default for NelderMeadConfig {
    fn default() -> Self {
        Self {
            reflection: 1.0,
            expansion: 2.0,
            contraction: 0.5,
            shrink: 0.5,
            max_evals: 20_000,
            rel_tol: 1e-10,
            restarts: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NelderMeadResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub evals: usize,
    pub iterations: usize,
    pub converged: bool,
    pub reason: String,
}

struct Counter<'a, F> {
    f: &'a mut F,
    evals: usize,
}

impl<F: FnMut(&[f64]) -> f64> Counter<'_, F> {
    fn call(&mut self, x: &[f64]) -> f64 {
        self.evals += 1;
        let v = (self.f)(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    }
}

fn combine(a: &[f64], b: &[f64], t: f64) -> Vec<f64> {
    // a + t (b - a)
    a.iter().zip(b).map(|(x, y)| x + t * (y - x)).collect()
}

/// Minimize `f` from `x0`; the initial simplex is x0 plus `step[i]` along axis i.
pub fn nelder_mead<F: FnMut(&[f64]) -> f64>(mut f: F, x0: &[f64], step: &[f64], cfg: &NelderMeadConfig) -> NelderMeadResult {
    assert_eq!(x0.len(), step.len(), "step must match the dimension");
    let mut counter = Counter { f: &mut f, evals: 0 };
    let mut best = x0.to_vec();
    let mut result = run(&mut counter, &best, step, cfg, 0);
    for _ in 0..cfg.restarts {
        if counter.evals >= cfg.max_evals || !result.converged {
            break;
        }
        let prev = result.f;
        best.clone_from(&result.x);
        let again = run(&mut counter, &best, step, cfg, result.iterations);
        let improved = again.f < prev - cfg.rel_tol * (prev.abs() + cfg.rel_tol);
        result = again;
        if !improved {
            break;
        }
    }
    result.evals = counter.evals;
    result
}

fn run<F: FnMut(&[f64]) -> f64>(
    counter: &mut Counter<'_, F>,
    x0: &[f64],
    step: &[f64],
    cfg: &NelderMeadConfig,
    iter0: usize,
) -> NelderMeadResult {
    let n = x0.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let f0 = counter.call(x0);
    simplex.push((x0.to_vec(), f0));
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] += step[i];
        let fx = counter.call(&x);
        simplex.push((x, fx));
    }
    let mut iterations = iter0;
    let finish = |simplex: &mut Vec<(Vec<f64>, f64)>, iterations, converged: bool, reason: &str, evals| {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        NelderMeadResult {
            x: simplex[0].0.clone(),
            f: simplex[0].1,
            evals,
            iterations,
            converged,
            reason: reason.to_string(),
        }
    };
    loop {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let f_lo = simplex[0].1;
        let f_hi = simplex[n].1;
        if f_hi.is_finite() && f_hi - f_lo <= cfg.rel_tol * (f_lo.abs() + cfg.rel_tol) {
            return finish(&mut simplex, iterations, true, "simplex objective spread below tolerance", counter.evals);
        }
        let size = (1..=n)
            .flat_map(|j| (0..n).map(move |i| (j, i)))
            .map(|(j, i)| (simplex[j].0[i] - simplex[0].0[i]).abs() / (1.0 + simplex[0].0[i].abs()))
            .fold(0.0, f64::max);
        if size < 1e-15 {
            return finish(&mut simplex, iterations, true, "simplex collapsed", counter.evals);
        }
        if counter.evals >= cfg.max_evals {
            return finish(&mut simplex, iterations, false, "evaluation budget exhausted", counter.evals);
        }
        iterations += 1;
        let mut centroid = vec![0.0; n];
        for (x, _) in &simplex[..n] {
            for i in 0..n {
                centroid[i] += x[i] / n as f64;
            }
        }
        let worst = simplex[n].0.clone();
        let xr = combine(&centroid, &worst, -cfg.reflection);
        let fr = counter.call(&xr);
        if fr < simplex[0].1 {
            let xe = combine(&centroid, &worst, -cfg.reflection * cfg.expansion);
            let fe = counter.call(&xe);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
            continue;
        }
        let (xc, fc) = if fr < simplex[n].1 {
            let xc = combine(&centroid, &xr, cfg.contraction);
            let fc = counter.call(&xc);
            (xc, fc)
        } else {
            let xc = combine(&centroid, &worst, cfg.contraction);
            let fc = counter.call(&xc);
            (xc, fc)
        };
        if fc < fr.min(simplex[n].1) {
            simplex[n] = (xc, fc);
            continue;
        }
        let best = simplex[0].0.clone();
        for j in 1..=n {
            let x = combine(&best, &simplex[j].0, cfg.shrink);
            let fx = counter.call(&x);
            simplex[j] = (x, fx);
        }
    }
}
