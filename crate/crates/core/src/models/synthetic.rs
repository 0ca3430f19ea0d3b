//! Polynomial moment models with prescribed derivatives at `φ₀`.
//!
//! Each observation is `x = (x₀, x₁) ∈ R^{2q}` drawn from `N(0, Σ)` and
//!
//! ```text
//! g(x, φ) = x₀ + μ(φ − φ₀) + (φ_p − φ₀,p)·x₁
//! μ(δ) = Dδ₁ + ½Gδ_p² + G_1p δ₁δ_p + ⅙Lδ_p³ + ½G_1pp δ₁δ_p² + ⅙G_1ppp δ₁δ_p³
//!        + (1/24)Fδ_p⁴ + ½(δ₁′K_kδ₁)_k
//! ```
//!
//! so the population bundle is exactly the listed coefficients, and the
//! covariance of `(g, ∂g/∂φ_p)` at `φ₀` is `Σ`.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::linalg;
use crate::moments::{AnalyticDerivatives, CondensedMoments, Dataset, DerivativeBundle, MomentModel, ParamBounds};
use crate::{exec, Error, Result};

/// Serializable description of a synthetic model. Omitted derivative entries are zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticModelSpec {
    pub name: String,
    pub p: usize,
    pub q: usize,
    pub phi0: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// `q` rows of `p − 1` entries.
    #[serde(default)]
    pub d: Vec<Vec<f64>>,
    /// First derivative along `φ_p`; must vanish for second-order identification.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dp: Option<Vec<f64>>,
    pub g: Vec<f64>,
    #[serde(default)]
    pub g_1p: Vec<Vec<f64>>,
    #[serde(default)]
    pub l: Vec<f64>,
    #[serde(default)]
    pub g_1pp: Vec<Vec<f64>>,
    #[serde(default)]
    pub g_1ppp: Vec<Vec<f64>>,
    #[serde(default)]
    pub f: Vec<f64>,
    /// `q` symmetric matrices of size `(p − 1)×(p − 1)`.
    #[serde(default)]
    pub k: Vec<Vec<Vec<f64>>>,
    /// Covariance of `(x₀, x₁)`, `2q×2q`.
    pub sigma: Vec<Vec<f64>>,
}

impl SyntheticModelSpec {
    /// `q = p = 1` with `π(φ) = φ² + c₃φ³ + c₄φ⁴`: `G = 2`, `L = 6c₃`, `F = 24c₄`.
    pub fn exact1_with(c3: f64, c4: f64) -> Self {
        Self {
            name: "exact1".into(),
            p: 1,
            q: 1,
            phi0: vec![0.0],
            lower: vec![-0.8],
            upper: vec![0.8],
            d: vec![],
            dp: None,
            g: vec![2.0],
            g_1p: vec![],
            l: vec![6.0 * c3],
            g_1pp: vec![],
            g_1ppp: vec![],
            f: vec![24.0 * c4],
            k: vec![],
            sigma: vec![vec![1.0, 0.5], vec![0.5, 1.0]],
        }
    }

    pub fn exact1() -> Self {
        Self::exact1_with(0.5, -0.5)
    }

    /// `q = p = 2` with every derivative block nonzero.
    pub fn exact2() -> Self {
        Self {
            name: "exact2".into(),
            p: 2,
            q: 2,
            phi0: vec![1.0, 0.5],
            lower: vec![0.0, -0.5],
            upper: vec![2.0, 1.5],
            d: vec![vec![1.0], vec![0.5]],
            dp: None,
            g: vec![0.5, 2.0],
            g_1p: vec![vec![0.3], vec![-0.2]],
            l: vec![0.5, 1.0],
            g_1pp: vec![vec![0.2], vec![0.4]],
            g_1ppp: vec![vec![0.1], vec![-0.1]],
            f: vec![-1.0, -2.0],
            k: vec![vec![vec![0.4]], vec![vec![-0.2]]],
            sigma: vec![
                vec![1.0, 0.3, 0.4, 0.1],
                vec![0.3, 1.0, 0.1, 0.4],
                vec![0.4, 0.1, 1.0, 0.2],
                vec![0.1, 0.4, 0.2, 1.0],
            ],
        }
    }

    /// `q = 3, p = 1` with nonzero `L`; `x₁ = 0.6·x₀ + e` correlates the
    /// derivative noise with the moment noise.
    pub fn over3() -> Self {
        let kappa = 0.6;
        let mut sigma = vec![vec![0.0; 6]; 6];
        for i in 0..3 {
            sigma[i][i] = 1.0;
            sigma[i][i + 3] = kappa;
            sigma[i + 3][i] = kappa;
            sigma[i + 3][i + 3] = kappa * kappa + 0.5;
        }
        Self {
            name: "over3".into(),
            p: 1,
            q: 3,
            phi0: vec![0.0],
            lower: vec![-1.0],
            upper: vec![1.0],
            d: vec![],
            dp: None,
            g: vec![1.0, 0.5, 0.0],
            g_1p: vec![],
            l: vec![0.0, 1.0, 2.0],
            g_1pp: vec![],
            g_1ppp: vec![],
            f: vec![0.0; 3],
            k: vec![],
            sigma,
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "exact1" => Some(Self::exact1()),
            "exact2" => Some(Self::exact2()),
            "over3" => Some(Self::over3()),
            _ => None,
        }
    }
}

#[derive(Clone, Debug)]
struct Coefficients {
    phi0: Vec<f64>,
    d: DMatrix<f64>,
    g: DVector<f64>,
    g_1p: DMatrix<f64>,
    l: DVector<f64>,
    g_1pp: DMatrix<f64>,
    g_1ppp: DMatrix<f64>,
    f: DVector<f64>,
    k: Vec<DMatrix<f64>>,
}

impl Coefficients {
    fn split(&self, phi: &[f64]) -> (DVector<f64>, f64) {
        let p = self.phi0.len();
        let d1 = DVector::from_iterator(p - 1, (0..p - 1).map(|i| phi[i] - self.phi0[i]));
        (d1, phi[p - 1] - self.phi0[p - 1])
    }

    fn mu(&self, phi: &[f64]) -> DVector<f64> {
        let (d1, t) = self.split(phi);
        let (t2, t3) = (t * t, t * t * t);
        let mut m = &self.d * &d1
            + &self.g * (0.5 * t2)
            + &self.g_1p * &d1 * t
            + &self.l * (t3 / 6.0)
            + &self.g_1pp * &d1 * (0.5 * t2)
            + &self.g_1ppp * &d1 * (t3 / 6.0)
            + &self.f * (t2 * t2 / 24.0);
        for (mk, k) in m.iter_mut().zip(&self.k) {
            *mk += 0.5 * d1.dot(&(k * &d1));
        }
        m
    }

    /// Jacobian of `μ`, q×p.
    fn dmu(&self, phi: &[f64]) -> DMatrix<f64> {
        let (d1, t) = self.split(phi);
        let q = self.g.len();
        let p = self.phi0.len();
        let mut jac = DMatrix::zeros(q, p);
        let fast = &self.d + &self.g_1p * t + &self.g_1pp * (0.5 * t * t) + &self.g_1ppp * (t * t * t / 6.0);
        for kk in 0..q {
            let kd = &self.k[kk] * &d1;
            for j in 0..p - 1 {
                jac[(kk, j)] = fast[(kk, j)] + kd[j];
            }
        }
        let slow = &self.g * t
            + &self.g_1p * &d1
            + &self.l * (0.5 * t * t)
            + &self.g_1pp * &d1 * t
            + &self.g_1ppp * &d1 * (0.5 * t * t)
            + &self.f * (t * t * t / 6.0);
        jac.set_column(p - 1, &slow);
        jac
    }
}

/// A synthetic model realising a prescribed derivative bundle.
#[derive(Clone, Debug)]
pub struct SyntheticModel {
    spec: SyntheticModelSpec,
    coef: Coefficients,
    bounds: ParamBounds,
    sigma: DMatrix<f64>,
}

fn matrix(rows: &[Vec<f64>], r: usize, c: usize, name: &str) -> Result<DMatrix<f64>> {
    if rows.is_empty() || c == 0 {
        return Ok(DMatrix::zeros(r, c));
    }
    if rows.len() != r || rows.iter().any(|row| row.len() != c) {
        return Err(Error::Model(format!("{name} must be {r}x{c}")));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

fn vector(v: &[f64], q: usize, name: &str) -> Result<DVector<f64>> {
    if v.is_empty() {
        return Ok(DVector::zeros(q));
    }
    if v.len() != q {
        return Err(Error::Model(format!("{name} must have length {q}")));
    }
    Ok(DVector::from_column_slice(v))
}

/// Validates the spec (shapes, vanishing first derivative along `φ_p`,
/// `rank(D G) = p`, positive-definite `Σ`) and builds the model.
pub fn make_synthetic(spec: &SyntheticModelSpec) -> Result<SyntheticModel> {
    let (p, q) = (spec.p, spec.q);
    if p == 0 || q < p {
        return Err(Error::Model(format!("need 1 <= p <= q, got p = {p}, q = {q}")));
    }
    if spec.phi0.len() != p {
        return Err(Error::Model(format!("phi0 must have length {p}")));
    }
    let bounds = ParamBounds::new(spec.lower.clone(), spec.upper.clone()).map_err(|e| Error::Model(e.to_string()))?;
    if bounds.dim() != p || !bounds.contains(&spec.phi0) {
        return Err(Error::Model("phi0 must lie inside bounds of dimension p".into()));
    }
    if let Some(dp) = &spec.dp {
        if dp.iter().any(|&v| v != 0.0) {
            return Err(Error::Model(
                "assumption (ii) violated: the first derivative along the last parameter must vanish at phi0".into(),
            ));
        }
    }
    let k = if spec.k.is_empty() {
        vec![DMatrix::zeros(p - 1, p - 1); q]
    } else {
        if spec.k.len() != q {
            return Err(Error::Model(format!("k must hold {q} matrices")));
        }
        spec.k.iter().map(|m| matrix(m, p - 1, p - 1, "k")).collect::<Result<Vec<_>>>()?
    };
    if k.iter().any(|m| !linalg::is_symmetric(m, 1e-12)) {
        return Err(Error::Model("every K_k must be symmetric".into()));
    }
    let coef = Coefficients {
        phi0: spec.phi0.clone(),
        d: matrix(&spec.d, q, p - 1, "d")?,
        g: vector(&spec.g, q, "g")?,
        g_1p: matrix(&spec.g_1p, q, p - 1, "g_1p")?,
        l: vector(&spec.l, q, "l")?,
        g_1pp: matrix(&spec.g_1pp, q, p - 1, "g_1pp")?,
        g_1ppp: matrix(&spec.g_1ppp, q, p - 1, "g_1ppp")?,
        f: vector(&spec.f, q, "f")?,
        k,
    };
    let dg = linalg::hcat(&coef.d, &linalg::column(&coef.g));
    if linalg::rank(&dg, 1e-7) < p {
        return Err(Error::Model("assumption (iii) violated: rank(D G) < p".into()));
    }
    let sigma = matrix(&spec.sigma, 2 * q, 2 * q, "sigma")?;
    linalg::check_spd(&sigma, "sigma", 1e-12).map_err(|e| Error::Model(e.to_string()))?;
    Ok(SyntheticModel { spec: spec.clone(), coef, bounds, sigma })
}

struct SyntheticCondensed {
    coef: Coefficients,
    mean_x0: DVector<f64>,
    mean_x1: DVector<f64>,
}

impl CondensedMoments for SyntheticCondensed {
    fn moments(&self, phi: &[f64], out: &mut [f64]) {
        let (_, t) = self.coef.split(phi);
        let m = &self.mean_x0 + self.coef.mu(phi) + &self.mean_x1 * t;
        out.copy_from_slice(m.as_slice());
    }
}

impl SyntheticModel {
    pub fn spec(&self) -> &SyntheticModelSpec {
        &self.spec
    }

    pub fn phi0(&self) -> &[f64] {
        &self.coef.phi0
    }

    /// Population moments `μ(φ − φ₀)`.
    pub fn population_moments(&self, phi: &[f64]) -> DVector<f64> {
        self.coef.mu(phi)
    }

    /// Population Jacobian at `φ`.
    pub fn population_jacobian(&self, phi: &[f64]) -> DMatrix<f64> {
        self.coef.dmu(phi)
    }

    /// Exact derivative bundle at `φ₀`.
    pub fn population_bundle(&self, w: DMatrix<f64>) -> DerivativeBundle {
        let c = &self.coef;
        DerivativeBundle {
            d: c.d.clone(),
            g: c.g.clone(),
            g_1p: c.g_1p.clone(),
            l: c.l.clone(),
            g_1pp: c.g_1pp.clone(),
            g_1ppp: Some(c.g_1ppp.clone()),
            f: c.f.clone(),
            k: c.k.clone(),
            w,
            warnings: Vec::new(),
        }
    }

    /// Covariance of `(g, ∂g/∂φ_p)` at `φ₀`.
    pub fn population_v(&self) -> DMatrix<f64> {
        self.sigma.clone()
    }

    /// `n` i.i.d. observations; unit `i` draws from the stream keyed by `(seed, i)`.
    pub fn simulate(&self, n: usize, seed: u64) -> Result<Dataset> {
        let q = self.spec.q;
        let chol = nalgebra::Cholesky::new(self.sigma.clone())
            .ok_or_else(|| Error::Model("sigma is not positive definite".into()))?
            .l();
        const BLOCK: usize = 1024;
        let blocks = exec::map_indexed(n.div_ceil(BLOCK), |b| {
            let mut rng = exec::substream(seed, &[0x0053_594e, b as u64]);
            let len = BLOCK.min(n - b * BLOCK);
            let mut out = Vec::with_capacity(len * 2 * q);
            for _ in 0..len {
                let xi = DVector::from_fn(2 * q, |_, _| StandardNormal.sample(&mut rng));
                out.extend((&chol * xi).iter());
            }
            out
        });
        let names = (1..=q).map(|i| format!("x0_{i}")).chain((1..=q).map(|i| format!("x1_{i}"))).collect();
        Dataset::new(names, blocks.concat())
    }
}

impl MomentModel for SyntheticModel {
    fn name(&self) -> String {
        self.spec.name.clone()
    }

    fn param_dim(&self) -> usize {
        self.spec.p
    }

    fn moment_dim(&self) -> usize {
        self.spec.q
    }

    fn obs_width(&self) -> usize {
        2 * self.spec.q
    }

    fn bounds(&self) -> &ParamBounds {
        &self.bounds
    }

    fn evaluate(&self, obs: &[f64], phi: &[f64], out: &mut [f64]) {
        let q = self.spec.q;
        let (_, t) = self.coef.split(phi);
        let mu = self.coef.mu(phi);
        for k in 0..q {
            out[k] = obs[k] + mu[k] + t * obs[q + k];
        }
    }

    fn evaluate_dphi_last(&self, obs: &[f64], phi: &[f64], out: &mut [f64]) -> bool {
        let q = self.spec.q;
        let dmu = self.coef.dmu(phi);
        for k in 0..q {
            out[k] = dmu[(k, self.spec.p - 1)] + obs[q + k];
        }
        true
    }

    fn condense(&self, data: &Dataset) -> Option<Box<dyn CondensedMoments>> {
        let q = self.spec.q;
        let n = data.len() as f64;
        let mut mean_x0 = DVector::zeros(q);
        let mut mean_x1 = DVector::zeros(q);
        for row in data.rows() {
            for k in 0..q {
                mean_x0[k] += row[k];
                mean_x1[k] += row[q + k];
            }
        }
        Some(Box::new(SyntheticCondensed { coef: self.coef.clone(), mean_x0: mean_x0 / n, mean_x1: mean_x1 / n }))
    }

    fn analytic_derivatives(&self, data: &Dataset, phi: &[f64]) -> Option<AnalyticDerivatives> {
        let q = self.spec.q;
        let p = self.spec.p;
        let n = data.len() as f64;
        let mut mean_x1 = DVector::zeros(q);
        for row in data.rows() {
            for k in 0..q {
                mean_x1[k] += row[q + k];
            }
        }
        mean_x1 /= n;
        let mut jac = self.coef.dmu(phi);
        let slow = jac.column(p - 1) + &mean_x1;
        jac.set_column(p - 1, &slow);
        let mut out = AnalyticDerivatives { jacobian: Some(jac), ..AnalyticDerivatives::default() };
        if phi == self.coef.phi0.as_slice() {
            let c = &self.coef;
            out.d = Some(c.d.clone());
            out.g = Some(c.g.clone());
            out.g_1p = Some(c.g_1p.clone());
            out.l = Some(c.l.clone());
            out.g_1pp = Some(c.g_1pp.clone());
            out.g_1ppp = Some(c.g_1ppp.clone());
            out.f = Some(c.f.clone());
            out.k = Some(c.k.clone());
        }
        Some(out)
    }
}
