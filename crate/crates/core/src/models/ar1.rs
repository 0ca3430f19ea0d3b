//! Three-period dynamic panel `y_t = ρy_{t−1} + η + ε_t`, `η = (1 − ρ)μ`,
//! with Arellano–Bond and Ahn–Schmidt moment conditions.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::moments::{AnalyticDerivatives, CondensedMoments, Dataset, MomentModel, ParamBounds};
use crate::{exec, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PanelAr1Config {
    pub n: usize,
    pub rho0: f64,
    /// Variances of `ε₁, ε₂, ε₃`.
    pub sigma2: [f64; 3],
    #[serde(default)]
    pub mu_mean: f64,
    #[serde(default = "one")]
    pub mu_var: f64,
    /// Variance of `y₀ − μ`; defaults to `σ₁²`.
    #[serde(default)]
    pub y0_var: Option<f64>,
    /// Uniform instead of Gaussian shocks (same variances).
    #[serde(default)]
    pub uniform_errors: bool,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> f64 {
    1.0
}

impl PanelAr1Config {
    pub fn new(n: usize, rho0: f64, sigma2: [f64; 3], seed: u64) -> Self {
        Self { n, rho0, sigma2, mu_mean: 0.0, mu_var: 1.0, y0_var: None, uniform_errors: false, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::Parameter("panel needs at least 2 units".into()));
        }
        if self.sigma2.iter().any(|&s| !(s > 0.0)) || !(self.mu_var >= 0.0) || self.y0_var.is_some_and(|v| !(v >= 0.0)) {
            return Err(Error::Parameter("variances must be positive".into()));
        }
        if !self.rho0.is_finite() || !self.mu_mean.is_finite() {
            return Err(Error::Parameter("rho0 and mu_mean must be finite".into()));
        }
        Ok(())
    }

    fn y0_noise_var(&self) -> f64 {
        self.y0_var.unwrap_or(self.sigma2[0])
    }
}

/// Simulates `(y₀, y₁, y₂, y₃)` per unit; unit blocks use streams keyed by `(seed, block)`.
pub fn simulate_panel_ar1(cfg: &PanelAr1Config) -> Result<Dataset> {
    cfg.validate()?;
    const BLOCK: usize = 2048;
    let sd: Vec<f64> = cfg.sigma2.iter().map(|s| s.sqrt()).collect();
    let mu_dist = Normal::new(cfg.mu_mean, cfg.mu_var.sqrt()).map_err(|e| Error::Parameter(e.to_string()))?;
    let y0_sd = cfg.y0_noise_var().sqrt();
    let blocks = exec::map_indexed(cfg.n.div_ceil(BLOCK), |b| {
        let mut rng = exec::substream(cfg.seed, &[0x0041_5231, b as u64]);
        let len = BLOCK.min(cfg.n - b * BLOCK);
        let mut out = Vec::with_capacity(4 * len);
        for _ in 0..len {
            let mu: f64 = mu_dist.sample(&mut rng);
            let eta = (1.0 - cfg.rho0) * mu;
            let z: f64 = StandardNormal.sample(&mut rng);
            let mut y = mu + y0_sd * z;
            out.push(y);
            for s in &sd {
                let e = if cfg.uniform_errors {
                    s * 3f64.sqrt() * (2.0 * rng.random::<f64>() - 1.0)
                } else {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    s * z
                };
                y = cfg.rho0 * y + eta + e;
                out.push(y);
            }
        }
        out
    });
    Dataset::new(["y0", "y1", "y2", "y3"].map(String::from).to_vec(), blocks.concat())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ar1Moments {
    /// `E[(y₃ − ρy₂)(Δy₂ − ρΔy₁)] = 0` only.
    AsOnly,
    /// `AB(2,2), AB(2,3), AB(3,3), AS(3)`.
    AbAs,
}

impl Ar1Moments {
    pub fn as_str(self) -> &'static str {
        match self {
            Ar1Moments::AsOnly => "as_only",
            Ar1Moments::AbAs => "ab_as",
        }
    }
}

/// Each moment is `a + bρ + cρ²`; returns the per-unit coefficients.
fn coefficients(kind: Ar1Moments, y: &[f64], out: &mut [[f64; 3]]) {
    let (y0, y1, y2, y3) = (y[0], y[1], y[2], y[3]);
    let (d1, d2, d3) = (y1 - y0, y2 - y1, y3 - y2);
    let as3 = [y3 * d2, -(y3 * d1 + y2 * d2), y2 * d1];
    match kind {
        Ar1Moments::AsOnly => out[0] = as3,
        Ar1Moments::AbAs => {
            out[0] = [y0 * d2, -y0 * d1, 0.0];
            out[1] = [y1 * d3, -y1 * d2, 0.0];
            out[2] = [y0 * d3, -y0 * d2, 0.0];
            out[3] = as3;
        }
    }
}

#[derive(Clone, Debug)]
pub struct Ar1Model {
    kind: Ar1Moments,
    bounds: ParamBounds,
}

impl Ar1Model {
    pub fn new(kind: Ar1Moments) -> Self {
        Self { kind, bounds: ParamBounds::new(vec![-0.5], vec![2.0]).expect("valid default box") }
    }

    pub fn with_bounds(kind: Ar1Moments, bounds: ParamBounds) -> Result<Self> {
        if bounds.dim() != 1 {
            return Err(Error::Parameter("AR(1) bounds must be one-dimensional".into()));
        }
        Ok(Self { kind, bounds })
    }

    pub fn kind(&self) -> Ar1Moments {
        self.kind
    }

    fn q(&self) -> usize {
        match self.kind {
            Ar1Moments::AsOnly => 1,
            Ar1Moments::AbAs => 4,
        }
    }

    fn mean_coefficients(&self, data: &Dataset) -> Vec<[f64; 3]> {
        let q = self.q();
        let mut acc = vec![[0.0; 3]; q];
        let mut buf = vec![[0.0; 3]; q];
        for row in data.rows() {
            coefficients(self.kind, row, &mut buf);
            for (a, b) in acc.iter_mut().zip(&buf) {
                for j in 0..3 {
                    a[j] += b[j];
                }
            }
        }
        let n = data.len() as f64;
        acc.iter().map(|a| a.map(|v| v / n)).collect()
    }
}

struct Ar1Condensed {
    coef: Vec<[f64; 3]>,
}

impl CondensedMoments for Ar1Condensed {
    fn moments(&self, phi: &[f64], out: &mut [f64]) {
        let r = phi[0];
        for (o, c) in out.iter_mut().zip(&self.coef) {
            *o = c[0] + r * (c[1] + r * c[2]);
        }
    }
}

impl MomentModel for Ar1Model {
    fn name(&self) -> String {
        match self.kind {
            Ar1Moments::AsOnly => "ar1_as".into(),
            Ar1Moments::AbAs => "ar1_abas".into(),
        }
    }

    fn param_dim(&self) -> usize {
        1
    }

    fn moment_dim(&self) -> usize {
        self.q()
    }

    fn obs_width(&self) -> usize {
        4
    }

    fn bounds(&self) -> &ParamBounds {
        &self.bounds
    }

    fn evaluate(&self, obs: &[f64], phi: &[f64], out: &mut [f64]) {
        let mut buf = [[0.0; 3]; 4];
        coefficients(self.kind, obs, &mut buf);
        let r = phi[0];
        for (o, c) in out.iter_mut().zip(&buf) {
            *o = c[0] + r * (c[1] + r * c[2]);
        }
    }

    fn evaluate_dphi_last(&self, obs: &[f64], phi: &[f64], out: &mut [f64]) -> bool {
        let mut buf = [[0.0; 3]; 4];
        coefficients(self.kind, obs, &mut buf);
        for (o, c) in out.iter_mut().zip(&buf) {
            *o = c[1] + 2.0 * phi[0] * c[2];
        }
        true
    }

    fn condense(&self, data: &Dataset) -> Option<Box<dyn CondensedMoments>> {
        Some(Box::new(Ar1Condensed { coef: self.mean_coefficients(data) }))
    }

    fn analytic_derivatives(&self, data: &Dataset, phi: &[f64]) -> Option<AnalyticDerivatives> {
        let coef = self.mean_coefficients(data);
        let q = self.q();
        let jac = DMatrix::from_iterator(q, 1, coef.iter().map(|c| c[1] + 2.0 * phi[0] * c[2]));
        Some(AnalyticDerivatives {
            jacobian: Some(jac),
            d: Some(DMatrix::zeros(q, 0)),
            g: Some(DVector::from_iterator(q, coef.iter().map(|c| 2.0 * c[2]))),
            g_1p: Some(DMatrix::zeros(q, 0)),
            l: Some(DVector::zeros(q)),
            g_1pp: Some(DMatrix::zeros(q, 0)),
            g_1ppp: Some(DMatrix::zeros(q, 0)),
            f: Some(DVector::zeros(q)),
            k: Some(vec![DMatrix::zeros(0, 0); q]),
        })
    }
}

/// Population quantities of the Ahn–Schmidt moment at `ρ = ρ₀ = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct UnitRootPopulation {
    /// `dm/dρ = σ₁² − σ₂²`.
    pub dm: f64,
    /// `d²m/dρ² = 2σ₁²`.
    pub g: f64,
    /// Covariance of `(g, ∂g/∂ρ)`.
    pub v: DMatrix<f64>,
}

pub fn unit_root_population(cfg: &PanelAr1Config) -> UnitRootPopulation {
    let [s1, s2, s3] = cfg.sigma2;
    let ey0_sq = cfg.mu_var + cfg.y0_noise_var() + cfg.mu_mean * cfg.mu_mean;
    let var_g = s3 * (s1 + s2);
    let cov = s3 * s1;
    let var_dg = ey0_sq * (s1 + s2) + 2.0 * s1 * s1 + 2.0 * s2 * s2 + s1 * s3;
    UnitRootPopulation { dm: s1 - s2, g: 2.0 * s1, v: DMatrix::from_row_slice(2, 2, &[var_g, cov, cov, var_dg]) }
}
