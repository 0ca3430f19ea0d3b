//! GMM objective, multistart minimisation and the first-order sandwich variance.

mod nelder_mead;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::linalg;
use crate::moments::{Dataset, MomentModel, MomentSample, ParamBounds};
use crate::{exec, Error, Result};

pub use nelder_mead::{golden_section, minimize, NmOptions, NmResult};

#[derive(Clone, Debug, PartialEq)]
pub enum WeightScheme {
    Identity,
    Fixed(DMatrix<f64>),
    /// Identity first, then the inverse sample covariance of `g` at the first-stage estimate.
    TwoStep,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tolerances {
    /// Simplex size at convergence, relative to each coordinate's box width.
    pub step: f64,
    /// Objective spread across the final simplex.
    pub objective: f64,
    pub max_iter: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { step: 1e-10, objective: 1e-18, max_iter: 20_000 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GmmConfig {
    pub weight_scheme: WeightScheme,
    pub multistart_count: usize,
    pub tolerances: Tolerances,
    pub seed: u64,
}

impl Default for GmmConfig {
    fn default() -> Self {
        Self { weight_scheme: WeightScheme::Identity, multistart_count: 8, tolerances: Tolerances::default(), seed: 0 }
    }
}

impl GmmConfig {
    pub fn validate(&self, q: usize) -> Result<()> {
        if self.multistart_count == 0 {
            return Err(Error::Parameter("multistart_count must be at least 1".into()));
        }
        let t = &self.tolerances;
        if !(t.step > 0.0 && t.objective > 0.0 && t.max_iter > 0) {
            return Err(Error::Parameter("optimizer tolerances must be positive".into()));
        }
        if let WeightScheme::Fixed(w) = &self.weight_scheme {
            if w.shape() != (q, q) {
                return Err(Error::Parameter(format!("fixed weight matrix must be {q}x{q}")));
            }
            linalg::check_spd(w, "fixed weight matrix", 1e-14)?;
        }
        Ok(())
    }
}

/// Outcome of one multistart.
#[derive(Clone, Debug)]
pub struct StartDiagnostic {
    pub start: Vec<f64>,
    pub start_objective: f64,
    pub phi: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Clone, Debug)]
pub struct GmmEstimate {
    pub phi_hat: Vec<f64>,
    pub objective_value: f64,
    pub weight: DMatrix<f64>,
    pub iterations: usize,
    pub restarts: usize,
    /// Largest minus smallest final objective over converged starts.
    pub objective_spread: f64,
    pub starts: Vec<StartDiagnostic>,
}

/// `m′ W m`.
pub fn quadratic_form(m: &DVector<f64>, w: &DMatrix<f64>) -> f64 {
    (m.transpose() * w * m)[(0, 0)]
}

/// `Q_T(φ) = m_T(φ)′ W_T m_T(φ)`.
pub fn objective(model: &dyn MomentModel, data: &Dataset, w: &DMatrix<f64>, phi: &[f64]) -> Result<f64> {
    let m = crate::moments::sample_moments(model, data, phi)?;
    if w.shape() != (m.len(), m.len()) {
        return Err(Error::Parameter(format!("weight matrix must be {0}x{0}", m.len())));
    }
    Ok(quadratic_form(&m, w))
}

/// GMM estimate under the configured weighting.
pub fn estimate(model: &dyn MomentModel, data: &Dataset, cfg: &GmmConfig) -> Result<GmmEstimate> {
    let q = model.moment_dim();
    cfg.validate(q)?;
    let sample = MomentSample::new(model, data)?;
    match &cfg.weight_scheme {
        WeightScheme::Identity => estimate_with_weight(&sample, &DMatrix::identity(q, q), cfg),
        WeightScheme::Fixed(w) => estimate_with_weight(&sample, w, cfg),
        WeightScheme::TwoStep => {
            let first = estimate_with_weight(&sample, &DMatrix::identity(q, q), cfg)?;
            let w = two_step_weight(model, data, &first.phi_hat)?;
            let mut second = estimate_with_weight(&sample, &w, cfg)?;
            second.iterations += first.iterations;
            second.restarts += first.restarts;
            Ok(second)
        }
    }
}

/// Inverse sample covariance of `g(x_t, φ)`, ridged by `1e−10·trace/q` when near singular.
pub fn two_step_weight(model: &dyn MomentModel, data: &Dataset, phi: &[f64]) -> Result<DMatrix<f64>> {
    let q = model.moment_dim();
    if data.len() < 2 {
        return Err(Error::InsufficientData("two-step weighting needs T >= 2".into()));
    }
    let mut g = DMatrix::zeros(data.len(), q);
    let mut buf = vec![0.0; q];
    for (i, obs) in data.rows().enumerate() {
        model.evaluate(obs, phi, &mut buf);
        if buf.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteMoment { index: i });
        }
        g.row_mut(i).copy_from_slice(&buf);
    }
    let mut s = linalg::sample_covariance(&g);
    let ev = linalg::sym_eigenvalues(&s);
    let (lo, hi) = (ev[0], ev[q - 1]);
    if lo <= 1e-12 * hi.max(f64::MIN_POSITIVE) {
        let ridge = 1e-10 * s.trace() / q as f64;
        s += DMatrix::identity(q, q) * ridge.max(f64::MIN_POSITIVE);
    }
    linalg::spd_inverse(&s).ok_or_else(|| Error::Estimation("moment covariance is not invertible".into()))
}

fn start_points(bounds: &ParamBounds, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let p = bounds.dim();
    let mut perm_rng = exec::substream(seed, &[0]);
    let perms: Vec<Vec<usize>> = (0..p)
        .map(|_| {
            let mut v: Vec<usize> = (0..count).collect();
            v.shuffle(&mut perm_rng);
            v
        })
        .collect();
    let mut starts: Vec<Vec<f64>> = (0..count)
        .map(|k| {
            let mut rng = exec::substream(seed, &[1, k as u64]);
            (0..p)
                .map(|i| {
                    let u: f64 = rng.random();
                    bounds.lower[i] + bounds.width(i) * (perms[i][k] as f64 + u) / count as f64
                })
                .collect()
        })
        .collect();
    let center = bounds.center();
    for sign in [1.0, -1.0] {
        let mut s = center.clone();
        s[p - 1] += sign * 0.25 * bounds.width(p - 1);
        starts.push(s);
    }
    starts
}

/// Minimises `Q_T` for a fixed weight matrix.
pub fn estimate_with_weight(sample: &MomentSample<'_>, w: &DMatrix<f64>, cfg: &GmmConfig) -> Result<GmmEstimate> {
    let bounds = sample.model().bounds();
    let p = sample.p();
    let q_fn = |x: &[f64]| sample.moments(x).map(|m| quadratic_form(&m, w)).unwrap_or(f64::INFINITY);
    let tol = &cfg.tolerances;
    let min_width = (0..p).map(|i| bounds.width(i)).fold(f64::INFINITY, f64::min);
    let nm_opts = |scale: f64| NmOptions {
        initial_step: (0..p).map(|i| scale * bounds.width(i)).collect(),
        xtol: tol.step * min_width,
        ftol: tol.objective * (w.trace() / w.nrows() as f64),
        max_iter: tol.max_iter,
    };

    let starts = start_points(bounds, cfg.multistart_count, cfg.seed);
    let runs: Vec<StartDiagnostic> = exec::map_indexed(starts.len(), |k| {
        let start = &starts[k];
        let start_objective = q_fn(start);
        let first = minimize(q_fn, start, bounds, &nm_opts(0.1));
        let mut x = first.x.clone();
        let mut f = first.f;
        let last = p - 1;
        let reach = (1e-3 * bounds.width(last)).max(10.0 * tol.step * bounds.width(last));
        let (a, b) = ((x[last] - reach).max(bounds.lower[last]), (x[last] + reach).min(bounds.upper[last]));
        let mut probe = x.clone();
        let (xp, fp) = golden_section(
            |v| {
                probe[last] = v;
                q_fn(&probe)
            },
            a,
            b,
            tol.step * bounds.width(last),
        );
        if fp < f {
            x[last] = xp;
            f = fp;
        }
        let second = minimize(q_fn, &x, bounds, &nm_opts(1e-3));
        if second.f <= f {
            x = second.x;
            f = second.f;
        }
        StartDiagnostic {
            start: start.clone(),
            start_objective,
            phi: x,
            objective: f,
            iterations: first.iterations + second.iterations,
            converged: (first.converged || second.converged) && f.is_finite(),
        }
    });

    let ok: Vec<&StartDiagnostic> = runs.iter().filter(|r| r.converged).collect();
    if ok.is_empty() {
        let detail: Vec<String> = runs
            .iter()
            .map(|r| format!("start {:?}: objective {:e} after {} iterations", r.start, r.objective, r.iterations))
            .collect();
        return Err(Error::Estimation(format!("no start converged; {}", detail.join("; "))));
    }
    let f_min = ok.iter().map(|r| r.objective).fold(f64::INFINITY, f64::min);
    let f_max = ok.iter().map(|r| r.objective).fold(f64::NEG_INFINITY, f64::max);
    let tie = 1e-12 * w.trace() / w.nrows() as f64;
    let center = bounds.center()[p - 1];
    let best = ok
        .iter()
        .filter(|r| r.objective - f_min <= tie)
        .min_by(|a, b| {
            let da = (a.phi[p - 1] - center).abs();
            let db = (b.phi[p - 1] - center).abs();
            da.total_cmp(&db).then(a.objective.total_cmp(&b.objective))
        })
        .expect("at least one converged start");

    Ok(GmmEstimate {
        phi_hat: best.phi.clone(),
        objective_value: best.objective,
        weight: w.clone(),
        iterations: runs.iter().map(|r| r.iterations).sum(),
        restarts: runs.len(),
        objective_spread: f_max - f_min,
        starts: runs,
    })
}

/// Sandwich `(M′WM)⁻¹ M′W V_m W M (M′WM)⁻¹` for a full-rank Jacobian `M`.
pub fn first_order_variance(m: &DMatrix<f64>, w: &DMatrix<f64>, v_m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (q, p) = m.shape();
    if w.shape() != (q, q) || v_m.shape() != (q, q) {
        return Err(Error::Parameter(format!("W and V_m must be {q}x{q}")));
    }
    let r = linalg::rank(m, 1e-7);
    if r < p {
        return Err(Error::RankDeficient { rank: r, p });
    }
    let bread = linalg::spd_inverse(&(m.transpose() * w * m)).ok_or(Error::RankDeficient { rank: r, p })?;
    let meat = m.transpose() * w * v_m * w * m;
    Ok(linalg::symmetrize(&(&bread * meat * &bread)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moments::test_models::FnModel;

    fn scalar_model(c: f64) -> FnModel<impl Fn(&[f64], &[f64], &mut [f64]) + Send + Sync> {
        FnModel {
            p: 1,
            q: 1,
            width: 1,
            bounds: ParamBounds::new(vec![-1.0], vec![1.0]).unwrap(),
            f: move |_: &[f64], phi: &[f64], out: &mut [f64]| out[0] = phi[0] * phi[0] + c,
        }
    }

    fn one_obs() -> Dataset {
        Dataset::from_columns_unnamed(1, vec![0.0, 0.0]).unwrap()
    }

    #[test]
    fn objective_quadratic_forms() {
        let w = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]);
        assert_eq!(quadratic_form(&DVector::from_vec(vec![0.0, 0.0]), &w), 0.0);
        assert_eq!(quadratic_form(&DVector::from_vec(vec![1.0, 1.0]), &DMatrix::identity(2, 2)), 2.0);
        assert_eq!(quadratic_form(&DVector::from_vec(vec![1.0, 2.0]), &w), 6.0);
    }

    #[test]
    fn exact_root_of_quartic_objective() {
        let est = estimate(&scalar_model(-0.04), &one_obs(), &GmmConfig::default()).unwrap();
        assert!((est.phi_hat[0].abs() - 0.2).abs() < 1e-8, "{:?}", est.phi_hat);
        assert!(est.objective_value < 1e-20);
    }

    #[test]
    fn flat_direction_without_root() {
        let est = estimate(&scalar_model(0.01), &one_obs(), &GmmConfig::default()).unwrap();
        assert!(est.phi_hat[0].abs() < 1e-4, "{:?}", est.phi_hat);
        assert!((est.objective_value - 1e-4).abs() < 1e-12);
    }

    #[test]
    fn never_worse_than_any_start() {
        let model = scalar_model(-0.3);
        let est = estimate(&model, &one_obs(), &GmmConfig { multistart_count: 5, ..GmmConfig::default() }).unwrap();
        for s in &est.starts {
            assert!(est.objective_value <= s.start_objective);
        }
    }

    #[test]
    fn weight_scaling_invariance() {
        let model = FnModel {
            p: 2,
            q: 3,
            width: 1,
            bounds: ParamBounds::new(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap(),
            f: |_: &[f64], phi: &[f64], out: &mut [f64]| {
                out[0] = phi[0] - 0.1 + 0.3 * phi[1] * phi[1];
                out[1] = phi[1] * phi[1] - 0.05 + 0.2 * phi[0];
                out[2] = phi[0] * phi[1] + 0.02;
            },
        };
        let w = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.0, 0.3, 1.0, 0.1, 0.0, 0.1, 1.5]);
        let base = GmmConfig { weight_scheme: WeightScheme::Fixed(w.clone()), ..GmmConfig::default() };
        let scaled = GmmConfig { weight_scheme: WeightScheme::Fixed(w * 4.0), ..GmmConfig::default() };
        let a = estimate(&model, &one_obs(), &base).unwrap();
        let b = estimate(&model, &one_obs(), &scaled).unwrap();
        for (x, y) in a.phi_hat.iter().zip(&b.phi_hat) {
            assert!((x - y).abs() < 1e-7, "{:?} vs {:?}", a.phi_hat, b.phi_hat);
        }
        assert!((b.objective_value - 4.0 * a.objective_value).abs() < 1e-9 * b.objective_value.max(1e-12));
    }

    #[test]
    fn two_step_uses_inverse_covariance() {
        let xs = vec![0.3, 1.2, -0.5, 0.8, 2.0, -1.1, 0.4];
        let data = Dataset::from_columns_unnamed(1, xs.clone()).unwrap();
        let model = FnModel {
            p: 1,
            q: 2,
            width: 1,
            bounds: ParamBounds::new(vec![-5.0], vec![5.0]).unwrap(),
            f: |x: &[f64], phi: &[f64], out: &mut [f64]| {
                out[0] = x[0] - phi[0];
                out[1] = 2.0 * (x[0] - phi[0]) + x[0] * x[0] - 1.0;
            },
        };
        let cfg = GmmConfig { weight_scheme: WeightScheme::TwoStep, ..GmmConfig::default() };
        let est = estimate(&model, &data, &cfg).unwrap();
        let first = estimate(&model, &data, &GmmConfig::default()).unwrap();
        let expected = two_step_weight(&model, &data, &first.phi_hat).unwrap();
        assert!(linalg::max_abs(&(&est.weight - expected)) < 1e-6);
    }

    #[test]
    fn two_step_ridge_keeps_weight_definite() {
        let data = Dataset::from_columns_unnamed(1, vec![1.0, 2.0, 3.0]).unwrap();
        let model = FnModel {
            p: 1,
            q: 2,
            width: 1,
            bounds: ParamBounds::new(vec![-5.0], vec![5.0]).unwrap(),
            f: |x: &[f64], phi: &[f64], out: &mut [f64]| {
                out[0] = x[0] - phi[0];
                out[1] = x[0] - phi[0];
            },
        };
        let w = two_step_weight(&model, &data, &[2.0]).unwrap();
        assert!(linalg::check_spd(&w, "w", 0.0).is_ok());
    }

    #[test]
    fn sandwich_examples() {
        let i2 = DMatrix::<f64>::identity(2, 2);
        assert!(linalg::max_abs(&(first_order_variance(&i2, &i2, &i2).unwrap() - &i2)) < 1e-14);

        let m = DMatrix::from_row_slice(3, 2, &[1.0, 0.5, -0.2, 1.0, 0.3, 0.7]);
        let vm = DMatrix::from_row_slice(3, 3, &[2.0, 0.4, 0.1, 0.4, 1.0, 0.2, 0.1, 0.2, 1.5]);
        let w = linalg::spd_inverse(&vm).unwrap();
        let efficient = linalg::spd_inverse(&(m.transpose() * &w * &m)).unwrap();
        assert!(linalg::max_abs(&(first_order_variance(&m, &w, &vm).unwrap() - efficient)) < 1e-12);

        let ones = DMatrix::from_row_slice(2, 1, &[1.0, 1.0]);
        let v = first_order_variance(&ones, &i2, &i2).unwrap();
        assert!((v[(0, 0)] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn rank_deficient_jacobian_is_reported() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let i2 = DMatrix::identity(2, 2);
        assert!(matches!(first_order_variance(&m, &i2, &i2), Err(Error::RankDeficient { rank: 1, p: 2 })));
    }
}
