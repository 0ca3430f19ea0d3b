//! Moment models, sample moments and their derivatives.
//!
//! A model supplies the per-observation moment function `g(x, φ)`; the sample
//! moment is its mean over the dataset. Parameters are ordered so that the
//! possibly unidentified-at-first-order direction is the last coordinate.

mod bundle;
mod dataset;
pub mod diff;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::linalg;
use crate::{Error, Result};

pub use bundle::{
    numeric_derivative_bundle, numeric_derivative_bundle_with, AnalyticDerivatives, BundleFile, BundleOptions,
    DerivativeBundle,
};
pub use dataset::Dataset;

/// Compact box `Φ = [lower, upper]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamBounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ParamBounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::Parameter("bounds must be non-empty and of equal length".into()));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l < u) || !l.is_finite() || !u.is_finite()) {
            return Err(Error::Parameter("bounds must be finite with lower < upper".into()));
        }
        Ok(Self { lower, upper })
    }

    /// Box `center ± half_width` in every coordinate.
    pub fn around(center: &[f64], half_width: f64) -> Self {
        Self {
            lower: center.iter().map(|c| c - half_width).collect(),
            upper: center.iter().map(|c| c + half_width).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, phi: &[f64]) -> bool {
        phi.len() == self.dim() && phi.iter().enumerate().all(|(i, &v)| v >= self.lower[i] && v <= self.upper[i])
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| 0.5 * (l + u)).collect()
    }

    pub fn width(&self, i: usize) -> f64 {
        self.upper[i] - self.lower[i]
    }

    pub fn clamp(&self, phi: &mut [f64]) {
        for (i, v) in phi.iter_mut().enumerate() {
            *v = v.clamp(self.lower[i], self.upper[i]);
        }
    }
}

/// A moment condition model `E[g(X, φ₀)] = 0`.
pub trait MomentModel: Send + Sync {
    fn name(&self) -> String;

    /// Parameter dimension `p`.
    fn param_dim(&self) -> usize;

    /// Number of moment conditions `q`.
    fn moment_dim(&self) -> usize;

    /// Width of one observation record.
    fn obs_width(&self) -> usize;

    fn bounds(&self) -> &ParamBounds;

    /// Writes `g(x, φ)` into `out` (length `q`).
    fn evaluate(&self, obs: &[f64], phi: &[f64], out: &mut [f64]);

    /// Writes `∂g/∂φ_p(x, φ)` into `out` if known in closed form.
    fn evaluate_dphi_last(&self, _obs: &[f64], _phi: &[f64], _out: &mut [f64]) -> bool {
        false
    }

    /// Reduces the data to sufficient statistics so `m_T(φ)` costs `O(1)` in `T`.
    fn condense(&self, _data: &Dataset) -> Option<Box<dyn CondensedMoments>> {
        None
    }

    /// Closed-form derivatives of the sample moments at `φ`, where available.
    fn analytic_derivatives(&self, _data: &Dataset, _phi: &[f64]) -> Option<AnalyticDerivatives> {
        None
    }
}

/// Sample moments evaluated from precomputed statistics.
pub trait CondensedMoments: Send + Sync {
    fn moments(&self, phi: &[f64], out: &mut [f64]);
}

fn check_shapes(model: &dyn MomentModel, data: &Dataset, phi: &[f64]) -> Result<()> {
    if data.width() != model.obs_width() {
        return Err(Error::Data(format!(
            "model {} expects records of width {}, dataset has width {}",
            model.name(),
            model.obs_width(),
            data.width()
        )));
    }
    if phi.len() != model.param_dim() {
        return Err(Error::Parameter(format!("expected {} parameters, got {}", model.param_dim(), phi.len())));
    }
    Ok(())
}

/// `m_T(φ) = T⁻¹ Σ g(x_t, φ)`, computed observation by observation.
pub fn sample_moments(model: &dyn MomentModel, data: &Dataset, phi: &[f64]) -> Result<DVector<f64>> {
    check_shapes(model, data, phi)?;
    if !model.bounds().contains(phi) {
        return Err(Error::Domain { point: phi.to_vec() });
    }
    direct_mean(model, data, phi)
}

fn direct_mean(model: &dyn MomentModel, data: &Dataset, phi: &[f64]) -> Result<DVector<f64>> {
    let q = model.moment_dim();
    let mut acc = vec![0.0; q];
    let mut buf = vec![0.0; q];
    for (i, obs) in data.rows().enumerate() {
        model.evaluate(obs, phi, &mut buf);
        if buf.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteMoment { index: i });
        }
        for (a, b) in acc.iter_mut().zip(&buf) {
            *a += b;
        }
    }
    let n = data.len() as f64;
    Ok(DVector::from_iterator(q, acc.into_iter().map(|v| v / n)))
}

/// A model bound to a dataset, using condensed statistics when the model offers them.
pub struct MomentSample<'a> {
    model: &'a dyn MomentModel,
    data: &'a Dataset,
    condensed: Option<Box<dyn CondensedMoments>>,
}

impl<'a> MomentSample<'a> {
    pub fn new(model: &'a dyn MomentModel, data: &'a Dataset) -> Result<Self> {
        check_shapes(model, data, &model.bounds().center())?;
        Ok(Self { model, data, condensed: model.condense(data) })
    }

    pub fn model(&self) -> &'a dyn MomentModel {
        self.model
    }

    pub fn data(&self) -> &'a Dataset {
        self.data
    }

    pub fn p(&self) -> usize {
        self.model.param_dim()
    }

    pub fn q(&self) -> usize {
        self.model.moment_dim()
    }

    /// `m_T(φ)` without the parameter-space check (used by differencing stencils).
    pub fn moments_unchecked(&self, phi: &[f64]) -> Result<DVector<f64>> {
        if let Some(c) = &self.condensed {
            let mut out = DVector::zeros(self.q());
            c.moments(phi, out.as_mut_slice());
            if out.iter().all(|v| v.is_finite()) {
                return Ok(out);
            }
        }
        direct_mean(self.model, self.data, phi)
    }

    pub fn moments(&self, phi: &[f64]) -> Result<DVector<f64>> {
        if !self.model.bounds().contains(phi) {
            return Err(Error::Domain { point: phi.to_vec() });
        }
        self.moments_unchecked(phi)
    }
}

/// Numeric `∂m_T/∂φ′` (q×p), with the analytic Jacobian when the model has one.
pub fn jacobian(model: &dyn MomentModel, data: &Dataset, phi: &[f64]) -> Result<DMatrix<f64>> {
    check_shapes(model, data, phi)?;
    if let Some(j) = model.analytic_derivatives(data, phi).and_then(|a| a.jacobian) {
        return Ok(j);
    }
    let sample = MomentSample::new(model, data)?;
    let f = |x: &[f64]| sample.moments_unchecked(x);
    let p = model.param_dim();
    let mut jac = DMatrix::zeros(model.moment_dim(), p);
    for j in 0..p {
        let mut orders = vec![0; p];
        orders[j] = 1;
        let col = diff::partial(&f, phi, &orders, Some(model.bounds()))?;
        jac.set_column(j, &col);
    }
    Ok(jac)
}

/// Per-observation `∂g/∂φ_p`, analytic when available, central differences otherwise.
fn dphi_last(model: &dyn MomentModel, obs: &[f64], phi: &[f64], out: &mut [f64], scratch: &mut [f64]) {
    if model.evaluate_dphi_last(obs, phi, out) {
        return;
    }
    let p = phi.len();
    let h = f64::EPSILON.cbrt() * phi[p - 1].abs().max(1.0);
    let mut x = phi.to_vec();
    x[p - 1] = phi[p - 1] + h;
    model.evaluate(obs, &x, out);
    x[p - 1] = phi[p - 1] - h;
    model.evaluate(obs, &x, scratch);
    for (o, s) in out.iter_mut().zip(scratch.iter()) {
        *o = (*o - s) / (2.0 * h);
    }
}

/// Sample covariance (divisor `T − 1`) of the stacked per-observation vector
/// `(g(x, φ)′, ∂g/∂φ_p(x, φ)′)′`, a `2q × 2q` matrix.
pub fn score_covariance(model: &dyn MomentModel, data: &Dataset, phi: &[f64]) -> Result<DMatrix<f64>> {
    check_shapes(model, data, phi)?;
    if data.len() < 2 {
        return Err(Error::InsufficientData(format!("score covariance needs T >= 2, got {}", data.len())));
    }
    let q = model.moment_dim();
    let mut stacked = DMatrix::zeros(data.len(), 2 * q);
    let mut g = vec![0.0; q];
    let mut dg = vec![0.0; q];
    let mut scratch = vec![0.0; q];
    for (i, obs) in data.rows().enumerate() {
        model.evaluate(obs, phi, &mut g);
        dphi_last(model, obs, phi, &mut dg, &mut scratch);
        if g.iter().chain(&dg).any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteMoment { index: i });
        }
        for k in 0..q {
            stacked[(i, k)] = g[k];
            stacked[(i, q + k)] = dg[k];
        }
    }
    Ok(linalg::sample_covariance(&stacked))
}
