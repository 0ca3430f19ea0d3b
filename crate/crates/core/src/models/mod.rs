//! Builtin models: the three-period panel AR(1) and synthetic polynomial models.

mod ar1;
mod synthetic;

use nalgebra::DMatrix;

pub use ar1::{simulate_panel_ar1, unit_root_population, Ar1Model, Ar1Moments, PanelAr1Config, UnitRootPopulation};
pub use synthetic::{make_synthetic, SyntheticModel, SyntheticModelSpec};

use crate::moments::{Dataset, DerivativeBundle, MomentModel};
use crate::Result;

/// A model together with a data generator and, where known, its population
/// derivative bundle at the true parameter.
pub trait Simulator: Send + Sync {
    fn model(&self) -> &dyn MomentModel;
    fn phi0(&self) -> Vec<f64>;
    fn simulate(&self, n: usize, seed: u64) -> Result<Dataset>;
    /// Exact `(bundle, v)` at `φ₀`, if available in closed form.
    fn population(&self, w: &DMatrix<f64>) -> Option<(DerivativeBundle, DMatrix<f64>)>;
}

impl Simulator for SyntheticModel {
    fn model(&self) -> &dyn MomentModel {
        self
    }

    fn phi0(&self) -> Vec<f64> {
        SyntheticModel::phi0(self).to_vec()
    }

    fn simulate(&self, n: usize, seed: u64) -> Result<Dataset> {
        SyntheticModel::simulate(self, n, seed)
    }

    fn population(&self, w: &DMatrix<f64>) -> Option<(DerivativeBundle, DMatrix<f64>)> {
        Some((self.population_bundle(w.clone()), self.population_v()))
    }
}

/// AR(1) panel generator paired with a moment set.
#[derive(Clone, Debug)]
pub struct Ar1Simulator {
    pub config: PanelAr1Config,
    pub model: Ar1Model,
}

impl Simulator for Ar1Simulator {
    fn model(&self) -> &dyn MomentModel {
        &self.model
    }

    fn phi0(&self) -> Vec<f64> {
        vec![self.config.rho0]
    }

    fn simulate(&self, n: usize, seed: u64) -> Result<Dataset> {
        simulate_panel_ar1(&PanelAr1Config { n, seed, ..self.config.clone() })
    }

    fn population(&self, w: &DMatrix<f64>) -> Option<(DerivativeBundle, DMatrix<f64>)> {
        let c = &self.config;
        if self.model.kind() != Ar1Moments::AsOnly || c.rho0 != 1.0 || c.sigma2[0] != c.sigma2[1] {
            return None;
        }
        let pop = unit_root_population(c);
        let mut b = DerivativeBundle::zeros(1, 1, w.clone());
        b.g[0] = pop.g;
        Some((b, pop.v))
    }
}
