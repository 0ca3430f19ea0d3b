//! Replication harness: simulate, estimate and compare with the limit laws
//! over a grid of sample sizes.
//!
//! Replication `(t_index, r)` draws its data and its optimizer starts from
//! substreams keyed by the master seed, so a plan reproduces exactly under
//! any thread count. Aggregation runs on one thread after all replications
//! are collected.

mod stats;

use std::io::Write;

use nalgebra::DMatrix;
use serde::Serialize;

pub use stats::{binomial_se, ks_distance, ks_distance_cdf, median, normal_cdf, rate_regression, RateFit};

use crate::asymptotics::{
    classify_regime, confidence_set_with, projections, simulate_limit, ProjectionSet, Regime, RegimeReport,
    RegimeTolerances, SlowInterval,
};
use crate::estimator::{first_order_variance, two_step_weight, GmmConfig, WeightScheme};
use crate::models::{make_synthetic, Ar1Model, Ar1Moments, Ar1Simulator, PanelAr1Config, Simulator, SyntheticModelSpec};
use crate::moments::{jacobian, numeric_derivative_bundle, score_covariance, DerivativeBundle, MomentSample};
use crate::{exec, linalg, Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

const KEY_DATA: u64 = 1;
const KEY_START: u64 = 2;
const KEY_COVER: u64 = 3;
const KEY_LIMIT: u64 = 4;
const KEY_REFERENCE: u64 = 5;

/// Which data-generating process a plan runs.
#[derive(Clone, Debug)]
pub enum ModelConfig {
    Synthetic(SyntheticModelSpec),
    Ar1 { panel: PanelAr1Config, moments: Ar1Moments },
}

impl ModelConfig {
    pub fn name(&self) -> String {
        match self {
            ModelConfig::Synthetic(s) => format!("synthetic:{}", s.name),
            ModelConfig::Ar1 { moments, .. } => format!("ar1:{}", moments.as_str()),
        }
    }

    pub fn build(&self) -> Result<Box<dyn Simulator>> {
        Ok(match self {
            ModelConfig::Synthetic(spec) => Box::new(make_synthetic(spec)?),
            ModelConfig::Ar1 { panel, moments } => {
                PanelAr1Config { n: panel.n.max(2), ..panel.clone() }.validate()?;
                Box::new(Ar1Simulator { config: panel.clone(), model: Ar1Model::new(*moments) })
            }
        })
    }
}

/// Confidence-set coverage experiment run inside each replication.
#[derive(Clone, Debug)]
pub struct CoverageOptions {
    pub alpha: f64,
    pub draws: usize,
    /// `None` picks the symmetric interval when the sign limit is degenerate.
    pub slow_interval: Option<SlowInterval>,
}

impl Default for CoverageOptions {
    fn default() -> Self {
        Self { alpha: 0.1, draws: 10_000, slow_interval: None }
    }
}

#[derive(Clone, Debug)]
pub struct McPlan {
    pub model: ModelConfig,
    pub t_grid: Vec<usize>,
    pub replications: usize,
    pub gmm: GmmConfig,
    pub limit_draws: usize,
    pub seed: u64,
    pub coverage: Option<CoverageOptions>,
    /// Sample size used to estimate the bundle and `v` when the model has no
    /// closed-form population values.
    pub reference_n: usize,
}

impl McPlan {
    pub fn new(model: ModelConfig, t_grid: Vec<usize>, replications: usize, seed: u64) -> Self {
        Self {
            model,
            t_grid,
            replications,
            gmm: GmmConfig::default(),
            limit_draws: 100_000,
            seed,
            coverage: None,
            reference_n: 1_000_000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_grid.is_empty() {
            return Err(Error::Parameter("T grid is empty".into()));
        }
        if self.t_grid.windows(2).any(|w| w[0] >= w[1]) || self.t_grid[0] < 2 {
            return Err(Error::Parameter("T grid must be strictly increasing and start at 2 or more".into()));
        }
        if self.replications < 100 {
            return Err(Error::Parameter(format!("need at least 100 replications, got {}", self.replications)));
        }
        if self.limit_draws < 1000 {
            return Err(Error::Parameter("limit_draws must be at least 1000".into()));
        }
        if let Some(c) = &self.coverage {
            if !(c.alpha > 0.0 && c.alpha < 1.0) || c.draws < 1000 {
                return Err(Error::Parameter("coverage needs alpha in (0, 1) and at least 1000 draws".into()));
            }
        }
        Ok(())
    }
}

/// One `(T, r)` replication.
#[derive(Clone, Debug, Serialize)]
pub struct McRecord {
    pub t: usize,
    pub t_index: usize,
    pub rep: usize,
    pub phi_hat: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    /// `√T·G′W½M_dW½m_T(φ₀)`; negative on the continuous branch.
    pub z_stat: Option<f64>,
    pub covered_slow: Option<bool>,
    pub covered_all: Option<bool>,
    pub error: Option<String>,
}

impl McRecord {
    pub fn ok(&self) -> bool {
        self.error.is_none()
    }

    /// `(√T·Δφ₁, T^(1/4)·Δφ_p, √T·Δφ_p²)`.
    pub fn scaled_errors(&self, phi0: &[f64]) -> (Vec<f64>, f64, f64) {
        let p = phi0.len();
        let t = self.t as f64;
        let fast = (0..p - 1).map(|i| t.sqrt() * (self.phi_hat[i] - phi0[i])).collect();
        let d = self.phi_hat[p - 1] - phi0[p - 1];
        (fast, t.powf(0.25) * d, t.sqrt() * d * d)
    }

    /// Continuous branch of the slow coordinate, from the sign of `Z_T`.
    pub fn continuous(&self) -> Option<bool> {
        self.z_stat.map(|z| z < 0.0)
    }
}

/// Limit quantities from `simulate_limit` at the reference bundle.
#[derive(Clone, Debug, Serialize)]
pub struct LimitSummary {
    pub draws: usize,
    /// `Pr(V = 0)`.
    pub atom_mass: f64,
    /// `Pr(Δφ_p > 0 | V > 0) = Pr(B = 0 | V > 0)`.
    pub positive_given_continuous: f64,
    pub continuous_draws: usize,
    pub degenerate: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct PerTSummary {
    pub t: usize,
    pub completed: usize,
    pub failed: usize,
    pub median_abs_error: Vec<f64>,
    /// Median `|Δφ_p|` over the continuous branch.
    pub median_abs_error_slow_continuous: Option<f64>,
    /// Share of replications on the `Z_T ≥ 0` branch.
    pub atom_frequency: Option<f64>,
    /// Share with `√T·Δφ_p²` below ten times the optimizer step tolerance.
    pub atom_frequency_threshold: f64,
    pub continuous_count: usize,
    pub positive_given_continuous: Option<f64>,
    /// KS distance between `√T·Δφ_p²` and `V`, both on the continuous branch.
    pub ks_continuous: Option<f64>,
    /// Mean of `T^(1/4)·Δφ_p`, reported descriptively.
    pub mean_scaled_slow: f64,
    pub coverage_slow: Option<f64>,
    pub coverage_all: Option<f64>,
    /// Covariance of `√T(φ̂ − φ₀)`.
    pub scaled_covariance: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SlopeSummary {
    pub coordinate: String,
    pub fit: Option<RateFit>,
    /// Why the fit is missing, when it is.
    pub flag: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct McReport {
    pub schema_version: u32,
    pub seed: u64,
    pub model: String,
    pub phi0: Vec<f64>,
    pub t_grid: Vec<usize>,
    pub replications: usize,
    pub reference_source: String,
    pub regime: RegimeReport,
    pub limit: Option<LimitSummary>,
    /// Sandwich variance from the reference bundle when first-order identified.
    pub first_order_variance: Option<Vec<Vec<f64>>>,
    pub failures: usize,
    pub per_t: Vec<PerTSummary>,
    pub slopes: Vec<SlopeSummary>,
    pub ks_pooled: Option<f64>,
    #[serde(skip)]
    pub records: Vec<McRecord>,
    #[serde(skip)]
    pub limit_continuous_v: Vec<f64>,
}

/// Bundle, score covariance and Jacobian at the true parameter, either in
/// closed form or from one large simulated sample.
#[derive(Clone, Debug)]
pub struct ReferencePoint {
    pub bundle: DerivativeBundle,
    pub v: DMatrix<f64>,
    pub j: DMatrix<f64>,
    /// `"population"` or `"reference_sample"`.
    pub source: &'static str,
    pub n: Option<usize>,
}

impl ReferencePoint {
    /// Regime tolerances; a sampled reference adds an absolute floor of three
    /// standard errors of the Jacobian entries.
    pub fn tolerances(&self) -> RegimeTolerances {
        let mut tols = RegimeTolerances::default();
        if let Some(n) = self.n {
            let q = self.bundle.q();
            let tr = self.v.view((q, q), (q, q)).trace();
            tols.absolute = 3.0 * (tr / n as f64).sqrt();
        }
        tols
    }
}

fn plan_weight(gmm: &GmmConfig, v: &DMatrix<f64>, q: usize) -> Result<DMatrix<f64>> {
    Ok(match &gmm.weight_scheme {
        WeightScheme::Identity => DMatrix::identity(q, q),
        WeightScheme::Fixed(w) => w.clone(),
        WeightScheme::TwoStep => {
            let vm = v.view((0, 0), (q, q)).into_owned();
            linalg::spd_inverse(&vm).ok_or_else(|| Error::Simulation("moment covariance is singular".into()))?
        }
    })
}

/// Reference quantities at `φ₀` under the weighting of `gmm`.
pub fn reference_point(sim: &dyn Simulator, gmm: &GmmConfig, reference_n: usize, seed: u64) -> Result<ReferencePoint> {
    let model = sim.model();
    let q = model.moment_dim();
    let probe = DMatrix::identity(q, q);
    if let Some((b, v)) = sim.population(&probe) {
        let w = plan_weight(gmm, &v, q)?;
        let bundle = b.with_weight(w);
        let j = linalg::hcat(&bundle.d, &DMatrix::zeros(q, 1));
        return Ok(ReferencePoint { bundle, v, j, source: "population", n: None });
    }
    let phi0 = sim.phi0();
    let data = sim.simulate(reference_n, exec::derive_seed(seed, &[KEY_REFERENCE]))?;
    let v = score_covariance(model, &data, &phi0)?;
    let w = match &gmm.weight_scheme {
        WeightScheme::TwoStep => two_step_weight(model, &data, &phi0)?,
        _ => plan_weight(gmm, &v, q)?,
    };
    let bundle = numeric_derivative_bundle(model, &data, &phi0, &w)?;
    let j = jacobian(model, &data, &phi0)?;
    Ok(ReferencePoint { bundle, v, j, source: "reference_sample", n: Some(reference_n) })
}

fn run_one(
    sim: &dyn Simulator,
    plan: &McPlan,
    reference: &ReferencePoint,
    ps: Option<&ProjectionSet>,
    regime: &RegimeReport,
    t_index: usize,
    rep: usize,
) -> McRecord {
    let t = plan.t_grid[t_index];
    let mut rec = McRecord {
        t,
        t_index,
        rep,
        phi_hat: Vec::new(),
        objective: f64::NAN,
        iterations: 0,
        z_stat: None,
        covered_slow: None,
        covered_all: None,
        error: None,
    };
    let keys = [t_index as u64, rep as u64];
    match replicate(sim, plan, reference, ps, regime, t, &keys, &mut rec) {
        Ok(()) => rec,
        Err(e) => {
            rec.error = Some(e.to_string());
            rec
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn replicate(
    sim: &dyn Simulator,
    plan: &McPlan,
    reference: &ReferencePoint,
    ps: Option<&ProjectionSet>,
    regime: &RegimeReport,
    t: usize,
    keys: &[u64; 2],
    rec: &mut McRecord,
) -> Result<()> {
    let model = sim.model();
    let phi0 = sim.phi0();
    let data = sim.simulate(t, exec::derive_seed(plan.seed, &[KEY_DATA, keys[0], keys[1]]))?;
    let sample = MomentSample::new(model, &data)?;
    let gmm = GmmConfig { seed: exec::derive_seed(plan.seed, &[KEY_START, keys[0], keys[1]]), ..plan.gmm.clone() };
    let est = crate::estimator::estimate(model, &data, &gmm)?;
    rec.phi_hat = est.phi_hat.clone();
    rec.objective = est.objective_value;
    rec.iterations = est.iterations;

    if let Some(ps) = ps {
        let m0 = sample.moments(&phi0)?;
        let z = (reference.bundle.g.transpose() * ps.w_md_w() * &m0)[(0, 0)];
        rec.z_stat = Some((t as f64).sqrt() * z);
    }

    if let (Some(cov), true) = (&plan.coverage, regime.regime.is_second_order()) {
        let bundle = numeric_derivative_bundle(model, &data, &phi0, &est.weight)?;
        let v_hat = score_covariance(model, &data, &phi0)?;
        let local = projections(&bundle.d, &bundle.g, &bundle.w)?;
        let seed = exec::derive_seed(plan.seed, &[KEY_COVER, keys[0], keys[1]]);
        let draws = exec::with_threads(Some(1), || simulate_limit(&bundle, &local, &v_hat, regime.regime, cov.draws, seed))?;
        let slow = cov.slow_interval.unwrap_or(if regime.sign_degenerate || draws.degenerate {
            SlowInterval::Symmetric
        } else {
            SlowInterval::EqualTailed
        });
        let cs = confidence_set_with(&draws.draws, &est.phi_hat, t as f64, cov.alpha, slow)?;
        let p = phi0.len();
        let slow_ok = cs.phip.contains(phi0[p - 1]);
        rec.covered_slow = Some(slow_ok);
        rec.covered_all = Some(slow_ok && cs.phi1.iter().zip(&phi0).all(|(iv, &x)| iv.contains(x)));
    }
    Ok(())
}

/// Runs every replication of the plan and summarises the results.
pub fn run_plan(plan: &McPlan) -> Result<McReport> {
    plan.validate()?;
    let sim = plan.model.build()?;
    let model = sim.model();
    plan.gmm.validate(model.moment_dim())?;
    let phi0 = sim.phi0();
    let p = phi0.len();

    let reference = reference_point(sim.as_ref(), &plan.gmm, plan.reference_n, plan.seed)?;
    let regime = classify_regime(&reference.bundle, &reference.j, &reference.tolerances());
    let second = regime.regime.is_second_order();
    let ps = if second { Some(projections(&reference.bundle.d, &reference.bundle.g, &reference.bundle.w)?) } else { None };

    let (limit, limit_v) = match &ps {
        Some(ps) => {
            let seed = exec::derive_seed(plan.seed, &[KEY_LIMIT]);
            let ls = simulate_limit(&reference.bundle, ps, &reference.v, regime.regime, plan.limit_draws, seed)?;
            let cont: Vec<&_> = ls.draws.iter().filter(|d| d.v > 0.0).collect();
            let pos = cont.iter().filter(|d| d.dphip > 0.0).count();
            let summary = LimitSummary {
                draws: ls.draws.len(),
                atom_mass: 1.0 - cont.len() as f64 / ls.draws.len() as f64,
                positive_given_continuous: if cont.is_empty() { f64::NAN } else { pos as f64 / cont.len() as f64 },
                continuous_draws: cont.len(),
                degenerate: ls.degenerate,
            };
            (Some(summary), cont.iter().map(|d| d.v).collect::<Vec<f64>>())
        }
        None => (None, Vec::new()),
    };

    let first_order = if regime.regime == Regime::FirstOrder {
        let q = reference.bundle.q();
        let vm = reference.v.view((0, 0), (q, q)).into_owned();
        first_order_variance(&reference.j, &reference.bundle.w, &vm).ok().map(|v| linalg::to_rows(&v))
    } else {
        None
    };

    let r = plan.replications;
    let total = plan.t_grid.len() * r;
    let records: Vec<McRecord> = exec::map_indexed(total, |k| {
        run_one(sim.as_ref(), plan, &reference, ps.as_ref(), &regime, k / r, k % r)
    });

    let failures = records.iter().filter(|x| !x.ok()).count();
    if failures * 20 > total {
        let first = records.iter().find_map(|x| x.error.clone()).unwrap_or_default();
        return Err(Error::TooManyFailures { failed: failures, total, first });
    }

    let atom_cut = 10.0 * plan.gmm.tolerances.step;
    let per_t: Vec<PerTSummary> = plan
        .t_grid
        .iter()
        .enumerate()
        .map(|(ti, &t)| summarize_t(&records[ti * r..(ti + 1) * r], t, &phi0, &limit_v, atom_cut))
        .collect();

    let mut slopes = Vec::with_capacity(p);
    for i in 0..p - 1 {
        let pts: Vec<(usize, f64)> = per_t.iter().map(|s| (s.t, s.median_abs_error[i])).collect();
        slopes.push(slope(format!("phi1[{i}]"), &pts));
    }
    let slow_pts: Vec<(usize, f64)> = per_t
        .iter()
        .map(|s| (s.t, if second { s.median_abs_error_slow_continuous.unwrap_or(f64::NAN) } else { s.median_abs_error[p - 1] }))
        .collect();
    slopes.push(slope("phip".into(), &slow_pts));

    let ks_pooled = if second && !limit_v.is_empty() {
        let pooled: Vec<f64> = records
            .iter()
            .filter(|x| x.ok() && x.continuous() == Some(true))
            .map(|x| x.scaled_errors(&phi0).2)
            .collect();
        (!pooled.is_empty()).then(|| ks_distance(&pooled, &limit_v))
    } else {
        None
    };

    Ok(McReport {
        schema_version: SCHEMA_VERSION,
        seed: plan.seed,
        model: plan.model.name(),
        phi0,
        t_grid: plan.t_grid.clone(),
        replications: r,
        reference_source: reference.source.into(),
        regime,
        limit,
        first_order_variance: first_order,
        failures,
        per_t,
        slopes,
        ks_pooled,
        records,
        limit_continuous_v: limit_v,
    })
}

fn slope(coordinate: String, pts: &[(usize, f64)]) -> SlopeSummary {
    match rate_regression(pts) {
        Ok(fit) => SlopeSummary { coordinate, fit: Some(fit), flag: None },
        Err(e) => SlopeSummary { coordinate, fit: None, flag: Some(e.to_string()) },
    }
}

fn share(hits: usize, n: usize) -> Option<f64> {
    (n > 0).then(|| hits as f64 / n as f64)
}

fn summarize_t(recs: &[McRecord], t: usize, phi0: &[f64], limit_v: &[f64], atom_cut: f64) -> PerTSummary {
    let p = phi0.len();
    let ok: Vec<&McRecord> = recs.iter().filter(|x| x.ok()).collect();
    let n = ok.len();
    let median_abs_error = (0..p)
        .map(|i| if n == 0 { f64::NAN } else { median(&ok.iter().map(|x| (x.phi_hat[i] - phi0[i]).abs()).collect::<Vec<_>>()) })
        .collect();

    let classified: Vec<&&McRecord> = ok.iter().filter(|x| x.z_stat.is_some()).collect();
    let cont: Vec<&&McRecord> = classified.iter().copied().filter(|x| x.continuous() == Some(true)).collect();
    let slow_dev = |x: &McRecord| x.phi_hat[p - 1] - phi0[p - 1];
    let median_abs_error_slow_continuous =
        (!cont.is_empty()).then(|| median(&cont.iter().map(|x| slow_dev(x).abs()).collect::<Vec<_>>()));
    let positive = cont.iter().filter(|x| slow_dev(x) > 0.0).count();
    let ks_continuous = (!cont.is_empty() && !limit_v.is_empty())
        .then(|| ks_distance(&cont.iter().map(|x| x.scaled_errors(phi0).2).collect::<Vec<_>>(), limit_v));

    let scaled: Vec<(Vec<f64>, f64, f64)> = ok.iter().map(|x| x.scaled_errors(phi0)).collect();
    let below = scaled.iter().filter(|s| s.2 < atom_cut).count();
    let mean_scaled_slow = if n == 0 { f64::NAN } else { scaled.iter().map(|s| s.1).sum::<f64>() / n as f64 };

    let covered: Vec<&&McRecord> = ok.iter().filter(|x| x.covered_slow.is_some()).collect();
    let coverage_slow = share(covered.iter().filter(|x| x.covered_slow == Some(true)).count(), covered.len());
    let coverage_all = share(covered.iter().filter(|x| x.covered_all == Some(true)).count(), covered.len());

    let scaled_covariance = if n >= 2 {
        let st = (t as f64).sqrt();
        let m = DMatrix::from_fn(n, p, |i, j| st * (ok[i].phi_hat[j] - phi0[j]));
        linalg::to_rows(&linalg::sample_covariance(&m))
    } else {
        Vec::new()
    };

    PerTSummary {
        t,
        completed: n,
        failed: recs.len() - n,
        median_abs_error,
        median_abs_error_slow_continuous,
        atom_frequency: share(classified.len() - cont.len(), classified.len()),
        atom_frequency_threshold: share(below, n).unwrap_or(f64::NAN),
        continuous_count: cont.len(),
        positive_given_continuous: share(positive, cont.len()),
        ks_continuous,
        mean_scaled_slow,
        coverage_slow,
        coverage_all,
        scaled_covariance,
    }
}

impl McReport {
    /// Summary JSON (records excluded).
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Per-replication records as CSV, preceded by `#` header lines.
    pub fn write_records_csv<W: Write>(&self, mut out: W, header: &[String]) -> Result<()> {
        writeln!(out, "# schema: mc-records v{SCHEMA_VERSION}")?;
        writeln!(out, "# seed: {}", self.seed)?;
        for line in header {
            writeln!(out, "# {line}")?;
        }
        let p = self.phi0.len();
        let mut wtr = csv::Writer::from_writer(out);
        let mut cols: Vec<String> = vec!["t".into(), "rep".into(), "status".into()];
        cols.extend((0..p).map(|i| format!("phi_hat_{i}")));
        cols.extend((0..p - 1).map(|i| format!("scaled_phi1_{i}")));
        cols.extend(
            ["scaled_phip", "scaled_phip_sq", "z_stat", "objective", "iterations", "covered_slow", "error"]
                .map(String::from),
        );
        wtr.write_record(&cols)?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for rec in &self.records {
            let mut row = vec![rec.t.to_string(), rec.rep.to_string()];
            if rec.ok() {
                let (fast, slow, slow_sq) = rec.scaled_errors(&self.phi0);
                row.push("ok".into());
                row.extend(rec.phi_hat.iter().map(f64::to_string));
                row.extend(fast.iter().map(f64::to_string));
                row.extend([slow.to_string(), slow_sq.to_string()]);
            } else {
                row.push("failed".into());
                row.extend(std::iter::repeat_n(String::new(), 2 * p + 1));
            }
            row.extend([
                opt(rec.z_stat),
                rec.objective.to_string(),
                rec.iterations.to_string(),
                rec.covered_slow.map(|b| b.to_string()).unwrap_or_default(),
                rec.error.clone().unwrap_or_default(),
            ]);
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn slope(&self, coordinate: &str) -> Option<&RateFit> {
        self.slopes.iter().find(|s| s.coordinate == coordinate).and_then(|s| s.fit.as_ref())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_plan(seed: u64) -> McPlan {
        let mut plan = McPlan::new(ModelConfig::Synthetic(SyntheticModelSpec::exact1()), vec![200, 800, 3200], 100, seed);
        plan.limit_draws = 20_000;
        plan.gmm.multistart_count = 4;
        plan
    }

    #[test]
    fn plan_validation() {
        let mut plan = small_plan(1);
        plan.t_grid = vec![200, 200];
        assert!(plan.validate().is_err());
        plan.t_grid = vec![];
        assert!(plan.validate().is_err());
        plan.t_grid = vec![200, 800];
        plan.replications = 99;
        assert!(plan.validate().is_err());
    }

    #[test]
    fn report_shape_and_determinism() {
        let plan = small_plan(7);
        let a = run_plan(&plan).unwrap();
        assert_eq!(a.records.len(), 300);
        assert_eq!(a.regime.regime, Regime::SecondOrderExact);
        for s in &a.per_t {
            if let Some(ks) = s.ks_continuous {
                assert!((0.0..=1.0).contains(&ks));
            }
        }
        let b = exec::with_threads(Some(2), || run_plan(&plan).unwrap());
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        let (mut x, mut y) = (Vec::new(), Vec::new());
        a.write_records_csv(&mut x, &[]).unwrap();
        b.write_records_csv(&mut y, &[]).unwrap();
        assert_eq!(x, y);
        let text = String::from_utf8(x).unwrap();
        assert!(text.starts_with("# schema: mc-records v1\n# seed: 7\n"));
        assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 301);
    }
}
