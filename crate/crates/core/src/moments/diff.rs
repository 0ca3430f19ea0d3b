//! Central finite differences of vector-valued functions, including mixed
//! partials built as tensor products of one-dimensional stencils.

use nalgebra::DVector;

use super::ParamBounds;
use crate::{Error, Result};

/// `(offset, weight)` pairs of the second-order accurate central stencil for a
/// derivative of order `k`; the result is divided by `h^k`.
fn stencil(k: usize) -> &'static [(i32, f64)] {
    match k {
        0 => &[(0, 1.0)],
        1 => &[(-1, -0.5), (1, 0.5)],
        2 => &[(-1, 1.0), (0, -2.0), (1, 1.0)],
        3 => &[(-2, -0.5), (-1, 1.0), (1, -1.0), (2, 0.5)],
        4 => &[(-2, 1.0), (-1, -4.0), (0, 6.0), (1, -4.0), (2, 1.0)],
        _ => panic!("derivative order {k} is not supported (max 4 per coordinate)"),
    }
}

fn radius(k: usize) -> f64 {
    if k >= 3 {
        2.0
    } else if k >= 1 {
        1.0
    } else {
        0.0
    }
}

/// Default step for coordinate value `x` and total derivative order `order`:
/// `eps^(1/(order+2)) · max(1, |x|)`.
pub fn default_step(x: f64, order: usize) -> f64 {
    f64::EPSILON.powf(1.0 / (order as f64 + 2.0)) * x.abs().max(1.0)
}

/// Mixed partial derivative with multi-index `orders`, using the default steps.
pub fn partial<F>(f: &F, x: &[f64], orders: &[usize], bounds: Option<&ParamBounds>) -> Result<DVector<f64>>
where
    F: Fn(&[f64]) -> Result<DVector<f64>>,
{
    partial_scaled(f, x, orders, bounds, 1.0)
}

/// As [`partial`] with every step multiplied by `scale`.
pub fn partial_scaled<F>(
    f: &F,
    x: &[f64],
    orders: &[usize],
    bounds: Option<&ParamBounds>,
    scale: f64,
) -> Result<DVector<f64>>
where
    F: Fn(&[f64]) -> Result<DVector<f64>>,
{
    assert_eq!(x.len(), orders.len());
    let total: usize = orders.iter().sum();
    let steps: Vec<f64> = x.iter().map(|&xi| scale * default_step(xi, total)).collect();
    if let Some(b) = bounds {
        for (i, &k) in orders.iter().enumerate() {
            let r = radius(k) * steps[i];
            if x[i] - r < b.lower[i] || x[i] + r > b.upper[i] {
                let mut point = x.to_vec();
                point[i] = if x[i] - r < b.lower[i] { x[i] - r } else { x[i] + r };
                return Err(Error::Domain { point });
            }
        }
    }
    let active: Vec<usize> = (0..x.len()).filter(|&i| orders[i] > 0).collect();
    let stencils: Vec<&[(i32, f64)]> = active.iter().map(|&i| stencil(orders[i])).collect();
    let mut acc: Option<DVector<f64>> = None;
    let mut idx = vec![0usize; active.len()];
    let mut point = x.to_vec();
    loop {
        let mut w = 1.0;
        for (a, &i) in active.iter().enumerate() {
            let (off, wt) = stencils[a][idx[a]];
            point[i] = x[i] + off as f64 * steps[i];
            w *= wt;
        }
        let val = f(&point)? * w;
        acc = Some(match acc {
            Some(s) => s + val,
            None => val,
        });
        // advance the mixed-radix counter
        let mut a = 0;
        loop {
            if a == active.len() {
                let denom: f64 = active.iter().map(|&i| steps[i].powi(orders[i] as i32)).product();
                return Ok(acc.unwrap_or_else(|| DVector::zeros(0)) / denom);
            }
            idx[a] += 1;
            if idx[a] < stencils[a].len() {
                break;
            }
            idx[a] = 0;
            a += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn poly(x: &[f64]) -> Result<DVector<f64>> {
        // f(a, b) = a² b³ + b⁴ − 3ab
        let (a, b) = (x[0], x[1]);
        Ok(DVector::from_vec(vec![a * a * b.powi(3) + b.powi(4) - 3.0 * a * b]))
    }

    #[test]
    fn orders_of_a_polynomial() {
        let x = [0.7, -1.3];
        let (a, b): (f64, f64) = (x[0], x[1]);
        let cases: [(&[usize], f64); 6] = [
            (&[1, 0], 2.0 * a * b.powi(3) - 3.0 * b),
            (&[0, 2], 6.0 * a * a * b + 12.0 * b * b),
            (&[0, 3], 6.0 * a * a + 24.0 * b),
            (&[0, 4], 24.0),
            (&[1, 1], 6.0 * a * b * b - 3.0),
            (&[1, 3], 12.0 * a),
        ];
        for (orders, expected) in cases {
            let d = partial(&poly, &x, orders, None).unwrap()[0];
            assert!((d - expected).abs() < 1e-4 * expected.abs().max(1.0), "{orders:?}: {d} vs {expected}");
        }
    }

    #[test]
    fn stencil_leaving_bounds_is_domain_error() {
        let b = ParamBounds::new(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap();
        assert!(matches!(partial(&poly, &[0.0, 0.9999999], &[0, 4], Some(&b)), Err(Error::Domain { .. })));
        assert!(partial(&poly, &[0.0, 0.5], &[0, 4], Some(&b)).is_ok());
    }
}
