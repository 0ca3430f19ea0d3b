use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{diff, Dataset, MomentModel, MomentSample};
use crate::linalg;
use crate::{Error, Result};

/// Derivatives of the moments at `φ₀` that enter the limit theory, plus the
/// weight matrix. `φ₁` denotes the first `p − 1` coordinates, `φ_p` the last.
#[derive(Clone, Debug, PartialEq)]
pub struct DerivativeBundle {
    /// `∂m/∂φ₁′`, q×(p−1).
    pub d: DMatrix<f64>,
    /// `∂²m/∂φ_p²`.
    pub g: DVector<f64>,
    /// `∂²m/∂φ₁′∂φ_p`, q×(p−1).
    pub g_1p: DMatrix<f64>,
    /// `∂³m/∂φ_p³`.
    pub l: DVector<f64>,
    /// `∂³m/∂φ₁′∂φ_p²`, q×(p−1).
    pub g_1pp: DMatrix<f64>,
    /// `∂⁴m/∂φ₁′∂φ_p³`; diagnostic only, it does not enter `R2`.
    pub g_1ppp: Option<DMatrix<f64>>,
    /// `∂⁴m/∂φ_p⁴`.
    pub f: DVector<f64>,
    /// `K_k = ∂²m_k/∂φ₁∂φ₁′`, one (p−1)×(p−1) matrix per moment.
    pub k: Vec<DMatrix<f64>>,
    /// Weight matrix (probability limit of `W_T`).
    pub w: DMatrix<f64>,
    /// Conditioning warnings from the differencing.
    pub warnings: Vec<String>,
}

impl DerivativeBundle {
    /// Bundle with every derivative zero, for `q` moments and `p` parameters.
    pub fn zeros(q: usize, p: usize, w: DMatrix<f64>) -> Self {
        let p1 = p - 1;
        Self {
            d: DMatrix::zeros(q, p1),
            g: DVector::zeros(q),
            g_1p: DMatrix::zeros(q, p1),
            l: DVector::zeros(q),
            g_1pp: DMatrix::zeros(q, p1),
            g_1ppp: None,
            f: DVector::zeros(q),
            k: vec![DMatrix::zeros(p1, p1); q],
            w,
            warnings: Vec::new(),
        }
    }

    pub fn q(&self) -> usize {
        self.g.len()
    }

    pub fn p(&self) -> usize {
        self.d.ncols() + 1
    }

    /// Shape checks, symmetry of every `K_k` and positive definiteness of `W`.
    pub fn validate(&self) -> Result<()> {
        let (q, p1) = (self.q(), self.d.ncols());
        let shapes_ok = self.d.nrows() == q
            && self.g_1p.shape() == (q, p1)
            && self.g_1pp.shape() == (q, p1)
            && self.g_1ppp.as_ref().is_none_or(|m| m.shape() == (q, p1))
            && self.l.len() == q
            && self.f.len() == q
            && self.k.len() == q
            && self.k.iter().all(|k| k.shape() == (p1, p1))
            && self.w.shape() == (q, q);
        if !shapes_ok {
            return Err(Error::Parameter("derivative bundle has inconsistent shapes".into()));
        }
        if q < p1 + 1 {
            return Err(Error::Parameter(format!("need q >= p, got q = {q}, p = {}", p1 + 1)));
        }
        for (i, k) in self.k.iter().enumerate() {
            if !linalg::is_symmetric(k, 1e-6) {
                return Err(Error::Parameter(format!("K_{} is not symmetric", i + 1)));
            }
        }
        linalg::check_spd(&self.w, "W", 1e-12)
    }

    /// The same bundle with weight `c·W`.
    pub fn with_weight(&self, w: DMatrix<f64>) -> Self {
        Self { w, ..self.clone() }
    }
}

/// Closed-form derivative entries; any subset may be provided.
#[derive(Clone, Debug, Default)]
pub struct AnalyticDerivatives {
    pub jacobian: Option<DMatrix<f64>>,
    pub d: Option<DMatrix<f64>>,
    pub g: Option<DVector<f64>>,
    pub g_1p: Option<DMatrix<f64>>,
    pub l: Option<DVector<f64>>,
    pub g_1pp: Option<DMatrix<f64>>,
    pub g_1ppp: Option<DMatrix<f64>>,
    pub f: Option<DVector<f64>>,
    pub k: Option<Vec<DMatrix<f64>>>,
}

#[derive(Clone, Debug)]
pub struct BundleOptions {
    /// Also difference `G_1ppp` (not needed by the limit theory).
    pub with_g_1ppp: bool,
    /// Use closed-form entries from the model when present.
    pub use_analytic: bool,
    /// Relative disagreement between steps `h` and `2h` that triggers a warning.
    pub conditioning_tol: f64,
}

impl Default for BundleOptions {
    fn default() -> Self {
        Self { with_g_1ppp: false, use_analytic: true, conditioning_tol: 1e-3 }
    }
}

/// Central-difference estimate of every bundle entry at `φ₀` with the default options.
pub fn numeric_derivative_bundle(
    model: &dyn MomentModel,
    data: &Dataset,
    phi0: &[f64],
    w: &DMatrix<f64>,
) -> Result<DerivativeBundle> {
    numeric_derivative_bundle_with(model, data, phi0, w, &BundleOptions::default())
}

pub fn numeric_derivative_bundle_with(
    model: &dyn MomentModel,
    data: &Dataset,
    phi0: &[f64],
    w: &DMatrix<f64>,
    opts: &BundleOptions,
) -> Result<DerivativeBundle> {
    let (p, q) = (model.param_dim(), model.moment_dim());
    if phi0.len() != p {
        return Err(Error::Parameter(format!("expected {p} parameters, got {}", phi0.len())));
    }
    if w.shape() != (q, q) {
        return Err(Error::Parameter(format!("weight matrix must be {q}x{q}")));
    }
    let sample = MomentSample::new(model, data)?;
    let f = |x: &[f64]| sample.moments_unchecked(x);
    let bounds = model.bounds();
    let last = p - 1;
    let mut warnings = Vec::new();

    let mut deriv = |spec: &[(usize, usize)]| -> Result<DVector<f64>> {
        let mut orders = vec![0; p];
        for &(i, k) in spec {
            orders[i] += k;
        }
        let d1 = diff::partial(&f, phi0, &orders, Some(bounds))?;
        if let Ok(d2) = diff::partial_scaled(&f, phi0, &orders, Some(bounds), 2.0) {
            let gap = (&d1 - &d2).amax();
            if gap > opts.conditioning_tol * d1.amax().max(1.0) {
                warnings.push(format!("derivative {orders:?}: steps h and 2h disagree by {gap:.3e}"));
            }
        }
        Ok(d1)
    };

    let mut b = DerivativeBundle::zeros(q, p, w.clone());
    for j in 0..last {
        b.d.set_column(j, &deriv(&[(j, 1)])?);
        b.g_1p.set_column(j, &deriv(&[(j, 1), (last, 1)])?);
        b.g_1pp.set_column(j, &deriv(&[(j, 1), (last, 2)])?);
    }
    b.g = deriv(&[(last, 2)])?;
    b.l = deriv(&[(last, 3)])?;
    b.f = deriv(&[(last, 4)])?;
    if opts.with_g_1ppp {
        let mut m = DMatrix::zeros(q, last);
        for j in 0..last {
            m.set_column(j, &deriv(&[(j, 1), (last, 3)])?);
        }
        b.g_1ppp = Some(m);
    }
    for i in 0..last {
        for j in 0..=i {
            let col = if i == j { deriv(&[(i, 2)])? } else { deriv(&[(i, 1), (j, 1)])? };
            for (kk, v) in col.iter().enumerate() {
                b.k[kk][(i, j)] = *v;
                b.k[kk][(j, i)] = *v;
            }
        }
    }
    b.warnings = warnings;

    if opts.use_analytic {
        if let Some(a) = model.analytic_derivatives(data, phi0) {
            if let Some(v) = a.d {
                b.d = v;
            }
            if let Some(v) = a.g {
                b.g = v;
            }
            if let Some(v) = a.g_1p {
                b.g_1p = v;
            }
            if let Some(v) = a.l {
                b.l = v;
            }
            if let Some(v) = a.g_1pp {
                b.g_1pp = v;
            }
            if let Some(v) = a.g_1ppp {
                if opts.with_g_1ppp {
                    b.g_1ppp = Some(v);
                }
            }
            if let Some(v) = a.f {
                b.f = v;
            }
            if let Some(v) = a.k {
                b.k = v;
            }
        }
    }
    Ok(b)
}

/// JSON form of a bundle together with the score covariance `v`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleFile {
    pub p: usize,
    pub q: usize,
    pub d: Vec<Vec<f64>>,
    pub g: Vec<f64>,
    pub g_1p: Vec<Vec<f64>>,
    pub l: Vec<f64>,
    pub g_1pp: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g_1ppp: Option<Vec<Vec<f64>>>,
    pub f: Vec<f64>,
    pub k: Vec<Vec<Vec<f64>>>,
    pub w: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v: Option<Vec<Vec<f64>>>,
}

impl BundleFile {
    pub fn from_bundle(b: &DerivativeBundle, v: Option<&DMatrix<f64>>) -> Self {
        Self {
            p: b.p(),
            q: b.q(),
            d: linalg::to_rows(&b.d),
            g: b.g.iter().copied().collect(),
            g_1p: linalg::to_rows(&b.g_1p),
            l: b.l.iter().copied().collect(),
            g_1pp: linalg::to_rows(&b.g_1pp),
            g_1ppp: b.g_1ppp.as_ref().map(linalg::to_rows),
            f: b.f.iter().copied().collect(),
            k: b.k.iter().map(linalg::to_rows).collect(),
            w: linalg::to_rows(&b.w),
            v: v.map(linalg::to_rows),
        }
    }

    /// Rebuilds the bundle (validated) and the optional covariance.
    pub fn into_parts(self) -> Result<(DerivativeBundle, Option<DMatrix<f64>>)> {
        let (p, q) = (self.p, self.q);
        if p == 0 {
            return Err(Error::Parameter("p must be at least 1".into()));
        }
        let mat = |rows: &[Vec<f64>], r: usize, c: usize, name: &str| -> Result<DMatrix<f64>> {
            if rows.len() != r && !(c == 0 && rows.is_empty()) {
                return Err(Error::Parameter(format!("{name} must have {r} rows")));
            }
            if c == 0 {
                return Ok(DMatrix::zeros(r, 0));
            }
            linalg::from_rows(rows, c).map_err(|_| Error::Parameter(format!("{name} must have {c} columns")))
        };
        let vecq = |v: &[f64], name: &str| -> Result<DVector<f64>> {
            if v.len() != q {
                return Err(Error::Parameter(format!("{name} must have length {q}")));
            }
            Ok(DVector::from_column_slice(v))
        };
        if self.k.len() != q {
            return Err(Error::Parameter(format!("k must hold {q} matrices")));
        }
        let bundle = DerivativeBundle {
            d: mat(&self.d, q, p - 1, "d")?,
            g: vecq(&self.g, "g")?,
            g_1p: mat(&self.g_1p, q, p - 1, "g_1p")?,
            l: vecq(&self.l, "l")?,
            g_1pp: mat(&self.g_1pp, q, p - 1, "g_1pp")?,
            g_1ppp: self.g_1ppp.as_ref().map(|m| mat(m, q, p - 1, "g_1ppp")).transpose()?,
            f: vecq(&self.f, "f")?,
            k: self.k.iter().map(|m| mat(m, p - 1, p - 1, "k")).collect::<Result<_>>()?,
            w: mat(&self.w, q, q, "w")?,
            warnings: Vec::new(),
        };
        bundle.validate()?;
        let v = self.v.as_ref().map(|m| mat(m, 2 * q, 2 * q, "v")).transpose()?;
        Ok((bundle, v))
    }
}
