//! Box-constrained Nelder–Mead and golden-section line search.

use crate::moments::ParamBounds;

#[derive(Clone, Debug)]
pub struct NmOptions {
    /// Initial simplex edge per coordinate.
    pub initial_step: Vec<f64>,
    /// Stop once every vertex is within this distance of the best one (per coordinate).
    pub xtol: f64,
    /// ... and the objective spread across the simplex is at most this.
    pub ftol: f64,
    pub max_iter: usize,
}

#[derive(Clone, Debug)]
pub struct NmResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

const ALPHA: f64 = 1.0;
const GAMMA: f64 = 2.0;
const RHO: f64 = 0.5;
const SIGMA: f64 = 0.5;

/// Minimises `f` over the box by Nelder–Mead, clamping every trial point into
/// the box. Non-finite values are treated as `+∞`.
pub fn minimize<F>(mut f: F, x0: &[f64], bounds: &ParamBounds, opts: &NmOptions) -> NmResult
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    let mut evals = 0usize;
    let mut eval = |x: &[f64]| {
        evals += 1;
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };

    let mut start = x0.to_vec();
    bounds.clamp(&mut start);
    let mut simplex = vec![start.clone()];
    for i in 0..n {
        let mut v = start.clone();
        let step = opts.initial_step[i];
        v[i] += step;
        if v[i] > bounds.upper[i] {
            v[i] = start[i] - step;
        }
        bounds.clamp(&mut v);
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| eval(v)).collect();

    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iter {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let size = simplex[1..]
            .iter()
            .flat_map(|v| v.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        let spread = values[n] - values[0];
        if size <= opts.xtol && spread <= opts.ftol {
            converged = true;
            break;
        }
        iterations += 1;

        let mut centroid = vec![0.0; n];
        for v in &simplex[..n] {
            for (c, x) in centroid.iter_mut().zip(v) {
                *c += x / n as f64;
            }
        }
        let along = |t: f64| -> Vec<f64> {
            let mut p: Vec<f64> = centroid.iter().zip(&simplex[n]).map(|(c, w)| c + t * (c - w)).collect();
            bounds.clamp(&mut p);
            p
        };

        let xr = along(ALPHA);
        let fr = eval(&xr);
        if fr < values[0] {
            let xe = along(GAMMA);
            let fe = eval(&xe);
            if fe < fr {
                simplex[n] = xe;
                values[n] = fe;
            } else {
                simplex[n] = xr;
                values[n] = fr;
            }
            continue;
        }
        if fr < values[n - 1] {
            simplex[n] = xr;
            values[n] = fr;
            continue;
        }
        let (xc, fc) = if fr < values[n] {
            let xc = along(RHO * ALPHA);
            let fc = eval(&xc);
            (xc, fc)
        } else {
            let xc = along(-RHO);
            let fc = eval(&xc);
            (xc, fc)
        };
        if fc < values[n].min(fr) {
            simplex[n] = xc;
            values[n] = fc;
            continue;
        }
        let best = simplex[0].clone();
        for i in 1..=n {
            let shrunk: Vec<f64> = best.iter().zip(&simplex[i]).map(|(b, x)| b + SIGMA * (x - b)).collect();
            values[i] = eval(&shrunk);
            simplex[i] = shrunk;
        }
    }

    let best = (0..=n).min_by(|&a, &b| values[a].total_cmp(&values[b])).unwrap_or(0);
    NmResult { x: simplex[best].clone(), f: values[best], iterations, evaluations: evals, converged }
}

/// Golden-section search for a minimum of `f` on `[a, b]`.
pub fn golden_section<F>(mut f: F, mut a: f64, mut b: f64, tol: f64) -> (f64, f64)
where
    F: FnMut(f64) -> f64,
{
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    let fx = f(x);
    [(x, fx), (c, fc), (d, fd)].into_iter().min_by(|l, r| l.1.total_cmp(&r.1)).unwrap()
}
