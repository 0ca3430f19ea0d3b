use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use soid::estimator::{GmmConfig, Tolerances, WeightScheme};
use soid::linalg;
use soid::models::{Ar1Moments, PanelAr1Config, SyntheticModelSpec};
use soid::montecarlo::{CoverageOptions, McPlan, ModelConfig};

use crate::failure::Failure;

/// Everything a run needs. Each subcommand reads its own section; unknown
/// keys anywhere are rejected.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelSection>,
    #[serde(default)]
    pub gmm: GmmSection,
    #[serde(default)]
    pub estimate: EstimateSection,
    #[serde(default)]
    pub limit_sim: LimitSimSection,
    #[serde(default)]
    pub mc: McSection,
    #[serde(default)]
    pub simulate: SimulateSection,
    #[serde(default)]
    pub ar1_demo: Ar1DemoSection,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Synthetic,
    Ar1,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub kind: ModelKind,
    /// `exact1`, `exact2` or `over3` for synthetic models.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    /// Full synthetic specification, used instead of a preset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<SyntheticModelSpec>,
    /// Cubic and quartic coefficients of the `exact1` preset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c3: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c4: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub moments: Option<Ar1Moments>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub panel: Option<PanelSection>,
}

impl ModelSection {
    /// Section for a `--model` name: a synthetic preset or `ar1`.
    pub fn named(name: &str) -> Result<Self, Failure> {
        let base = Self { kind: ModelKind::Synthetic, preset: None, spec: None, c3: None, c4: None, moments: None, panel: None };
        match name {
            "ar1" => Ok(Self { kind: ModelKind::Ar1, ..base }),
            _ if SyntheticModelSpec::preset(name).is_some() => Ok(Self { preset: Some(name.into()), ..base }),
            _ => Err(Failure::config(format!("unknown model {name:?} (expected exact1, exact2, over3 or ar1)"))),
        }
    }

    pub fn resolve(&self) -> Result<ModelConfig, Failure> {
        match self.kind {
            ModelKind::Synthetic => {
                if self.moments.is_some() || self.panel.is_some() {
                    return Err(Failure::config("model.moments and model.panel apply to ar1 only"));
                }
                let spec = match (&self.spec, &self.preset) {
                    (Some(_), Some(_)) => return Err(Failure::config("give either model.preset or model.spec, not both")),
                    (Some(s), None) => s.clone(),
                    (None, Some(name)) => SyntheticModelSpec::preset(name)
                        .ok_or_else(|| Failure::config(format!("unknown preset {name:?}")))?,
                    (None, None) => return Err(Failure::config("synthetic model needs model.preset or model.spec")),
                };
                let spec = match (self.c3, self.c4) {
                    (None, None) => spec,
                    (c3, c4) if spec.name == "exact1" && self.spec.is_none() => {
                        SyntheticModelSpec::exact1_with(c3.unwrap_or(0.5), c4.unwrap_or(-0.5))
                    }
                    _ => return Err(Failure::config("model.c3 and model.c4 apply to the exact1 preset only")),
                };
                Ok(ModelConfig::Synthetic(spec))
            }
            ModelKind::Ar1 => {
                if self.preset.is_some() || self.spec.is_some() || self.c3.is_some() || self.c4.is_some() {
                    return Err(Failure::config("preset, spec, c3 and c4 apply to synthetic models only"));
                }
                let panel = self.panel.clone().unwrap_or_default();
                Ok(ModelConfig::Ar1 { panel: panel.to_config(), moments: self.moments.unwrap_or(Ar1Moments::AsOnly) })
            }
        }
    }
}

/// AR(1) panel parameters; the sample size comes from the subcommand.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PanelSection {
    pub rho0: f64,
    pub sigma2: [f64; 3],
    pub mu_mean: f64,
    pub mu_var: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub y0_var: Option<f64>,
    pub uniform_errors: bool,
}

impl Default for PanelSection {
    fn default() -> Self {
        Self { rho0: 1.0, sigma2: [1.0; 3], mu_mean: 0.0, mu_var: 1.0, y0_var: None, uniform_errors: false }
    }
}

impl PanelSection {
    fn to_config(&self) -> PanelAr1Config {
        PanelAr1Config {
            mu_mean: self.mu_mean,
            mu_var: self.mu_var,
            y0_var: self.y0_var,
            uniform_errors: self.uniform_errors,
            ..PanelAr1Config::new(0, self.rho0, self.sigma2, 0)
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightKind {
    #[default]
    Identity,
    TwoStep,
    Fixed,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GmmSection {
    pub weight: WeightKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weight_matrix: Option<Vec<Vec<f64>>>,
    pub multistart: usize,
    pub step_tol: f64,
    pub objective_tol: f64,
    pub max_iter: usize,
}

impl Default for GmmSection {
    fn default() -> Self {
        let t = Tolerances::default();
        Self {
            weight: WeightKind::Identity,
            weight_matrix: None,
            multistart: 8,
            step_tol: t.step,
            objective_tol: t.objective,
            max_iter: t.max_iter,
        }
    }
}

impl GmmSection {
    pub fn to_config(&self, seed: u64) -> Result<GmmConfig, Failure> {
        let weight_scheme = match (self.weight, &self.weight_matrix) {
            (WeightKind::Fixed, Some(rows)) => {
                let q = rows.len();
                let w: DMatrix<f64> = linalg::from_rows(rows, q).map_err(|e| Failure::config(format!("gmm.weight_matrix: {e}")))?;
                WeightScheme::Fixed(w)
            }
            (WeightKind::Fixed, None) => return Err(Failure::config("gmm.weight = \"fixed\" needs gmm.weight_matrix")),
            (_, Some(_)) => return Err(Failure::config("gmm.weight_matrix requires gmm.weight = \"fixed\"")),
            (WeightKind::Identity, None) => WeightScheme::Identity,
            (WeightKind::TwoStep, None) => WeightScheme::TwoStep,
        };
        Ok(GmmConfig {
            weight_scheme,
            multistart_count: self.multistart,
            tolerances: Tolerances { step: self.step_tol, objective: self.objective_tol, max_iter: self.max_iter },
            seed,
        })
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimateSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    /// Point at which the regime is assessed; defaults to the model's true value.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub assess_at: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LimitSimSection {
    pub draws: usize,
    /// Bundle JSON (with `v`) used instead of the model.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bundle: Option<PathBuf>,
    /// Sample size for the numeric bundle when no closed form exists.
    pub reference_n: usize,
}

impl Default for LimitSimSection {
    fn default() -> Self {
        Self { draws: 100_000, bundle: None, reference_n: 1_000_000 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McSection {
    pub t_grid: Vec<usize>,
    pub replications: usize,
    pub limit_draws: usize,
    pub reference_n: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coverage_alpha: Option<f64>,
    pub coverage_draws: usize,
}

impl Default for McSection {
    fn default() -> Self {
        Self {
            t_grid: vec![500, 2000, 8000, 32000],
            replications: 500,
            limit_draws: 100_000,
            reference_n: 1_000_000,
            coverage_alpha: None,
            coverage_draws: 10_000,
        }
    }
}

impl McSection {
    pub fn to_plan(&self, model: ModelConfig, gmm: GmmConfig, seed: u64) -> McPlan {
        McPlan {
            gmm,
            limit_draws: self.limit_draws,
            reference_n: self.reference_n,
            coverage: self.coverage_alpha.map(|alpha| CoverageOptions { alpha, draws: self.coverage_draws, slow_interval: None }),
            ..McPlan::new(model, self.t_grid.clone(), self.replications, seed)
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateSection {
    pub n: usize,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self { n: 1000 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Ar1DemoSection {
    pub n_grid: Vec<usize>,
    pub replications: usize,
    pub limit_draws: usize,
    pub reference_n: usize,
    pub equal_sigma2: [f64; 3],
    pub unequal_sigma2: [f64; 3],
}

impl Default for Ar1DemoSection {
    fn default() -> Self {
        Self {
            n_grid: vec![2000, 8000, 32000],
            replications: 500,
            limit_draws: 100_000,
            reference_n: 1_000_000,
            equal_sigma2: [1.0; 3],
            unequal_sigma2: [1.0, 2.0, 1.0],
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, Failure> {
        toml::from_str(text).map_err(|e| Failure::config(format!("config: {}", e.message())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output_dir.clone().unwrap_or_else(|| PathBuf::from("soid-out"))
    }

    pub fn model(&self) -> Result<ModelConfig, Failure> {
        self.model.as_ref().ok_or_else(|| Failure::config("no model given (set [model] or --model)"))?.resolve()
    }

    pub fn gmm(&self) -> Result<GmmConfig, Failure> {
        self.gmm.to_config(self.seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_unknown_keys() {
        assert_eq!(RunConfig::parse("sede = 3").unwrap_err().code, 2);
        assert_eq!(RunConfig::parse("[mc]\nreps = 3").unwrap_err().code, 2);
    }

    #[test]
    fn round_trips_through_toml() {
        let text = "seed = 9\n[model]\nkind = \"synthetic\"\npreset = \"exact1\"\nc4 = 0.0\n[mc]\nt_grid = [100, 400]\n";
        let cfg = RunConfig::parse(text).unwrap();
        let again = RunConfig::parse(&cfg.to_toml()).unwrap();
        assert_eq!(cfg.to_toml(), again.to_toml());
        assert_eq!(again.mc.t_grid, vec![100, 400]);
    }

    #[test]
    fn exact1_coefficients_override_preset() {
        let cfg = RunConfig::parse("[model]\nkind = \"synthetic\"\npreset = \"exact1\"\nc3 = 0.0\nc4 = 0.0\n").unwrap();
        match cfg.model().unwrap() {
            ModelConfig::Synthetic(s) => assert!(s.f.iter().all(|&f| f == 0.0) && s.l.iter().all(|&l| l == 0.0)),
            other => panic!("unexpected {other:?}"),
        }
        let bad = RunConfig::parse("[model]\nkind = \"synthetic\"\npreset = \"over3\"\nc3 = 1.0\n").unwrap();
        assert_eq!(bad.model().unwrap_err().code, 2);
    }

    #[test]
    fn fixed_weight_needs_matrix() {
        let cfg = RunConfig::parse("[gmm]\nweight = \"fixed\"\n").unwrap();
        assert!(cfg.gmm().is_err());
        let cfg = RunConfig::parse("[gmm]\nweight = \"fixed\"\nweight_matrix = [[2.0]]\n").unwrap();
        assert!(matches!(cfg.gmm().unwrap().weight_scheme, WeightScheme::Fixed(_)));
    }
}
