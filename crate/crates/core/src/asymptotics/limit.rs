use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use super::{nondegeneracy_r2, ProjectionSet, Regime};
use crate::linalg;
use crate::moments::DerivativeBundle;
use crate::{exec, Error, Result};

/// Which projector enters the scalar `G′W½·X·W½Z₀` in the first term of `R1`.
/// Both give the same value because `G′W½P_g = G′W½M_d`; the switch exists so
/// the two printed forms can be compared.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum R1Form {
    #[default]
    Pg,
    Md,
}

/// One realisation of the limit experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct LimitDraw {
    pub z0: Vec<f64>,
    pub z1: Vec<f64>,
    pub z: f64,
    pub v: f64,
    pub r: f64,
    /// `1(R ≥ 0)`.
    pub b: bool,
    pub dphi1: Vec<f64>,
    pub dphip: f64,
}

/// `(Z, V)` with `Z = G′W½M_dW½Z₀` and `V = −2Z·1(Z<0)/σ_G`.
pub fn limit_v(z0: &DVector<f64>, ps: &ProjectionSet, g: &DVector<f64>) -> (f64, f64) {
    let z = (g.transpose() * ps.w_md_w() * z0)[(0, 0)];
    let v = if z < 0.0 { -2.0 * z / ps.sigma_g } else { 0.0 };
    (z, v)
}

pub fn limit_r1(z0: &DVector<f64>, z1: &DVector<f64>, bundle: &DerivativeBundle, ps: &ProjectionSet) -> f64 {
    limit_r1_form(z0, z1, bundle, ps, R1Form::default())
}

/// Sign statistic of the overidentified case.
pub fn limit_r1_form(
    z0: &DVector<f64>,
    z1: &DVector<f64>,
    bundle: &DerivativeBundle,
    ps: &ProjectionSet,
    form: R1Form,
) -> f64 {
    let g = &bundle.g;
    let wz0 = &ps.w_sqrt * z0;
    let wg = &ps.w_sqrt * g;
    let s_pg = wz0.dot(&(&ps.p_g * &wz0));
    let s_x = match form {
        R1Form::Pg => wg.dot(&(&ps.p_g * &wz0)),
        R1Form::Md => wg.dot(&(&ps.m_d * &wz0)),
    };
    let row = g * s_pg - z0 * s_x;
    let tail = &bundle.l / 3.0 + &bundle.g_1p * (&ps.h * g);
    let first = row.dot(&(ps.w_md_w() * tail)) / ps.sigma_g;
    let a = z1 + &bundle.g_1p * (&ps.h * z0);
    let second = wz0.dot(&(&ps.m_dg * (&ps.w_sqrt * a)));
    first + second
}

/// The fifteen terms of the exact-identification sign statistic, in display
/// order, with `v` substituted for the squared slow-direction deviation.
pub fn r2_terms(
    z0: &DVector<f64>,
    z1: &DVector<f64>,
    bundle: &DerivativeBundle,
    ps: &ProjectionSet,
    v: f64,
) -> [f64; 15] {
    let w = &bundle.w;
    let hz0 = &ps.h * z0;
    let hg = &ps.h * &bundle.g;
    let q = bundle.q();
    let lam1 = DVector::from_iterator(q, bundle.k.iter().map(|k| hz0.dot(&(k * &hz0))));
    let lam2 = DVector::from_iterator(q, bundle.k.iter().map(|k| hg.dot(&(k * &hz0))));
    let lam3 = DVector::from_iterator(q, bundle.k.iter().map(|k| 0.25 * hg.dot(&(k * &hg))));
    let a = z1 + &bundle.g_1p * &hz0;
    let gh = &bundle.g_1p * &hg * 0.5;
    let b = &gh + &bundle.l / 6.0;
    let c = &bundle.g_1pp * &hz0;
    let e = &bundle.g_1pp * &hg * 0.5;
    let l = &bundle.l;
    let f = &bundle.f;
    let form = |x: &DVector<f64>, y: &DVector<f64>| x.dot(&(w * y));
    let (s, s2, s3) = (v, v * v, v * v * v);
    [
        0.5 * form(&lam1, &a),
        0.5 * form(&lam1, &b) * s,
        0.5 * form(&lam2, &a) * s,
        0.5 * form(&lam2, &b) * s2,
        0.5 * form(&lam3, &a) * s2,
        0.5 * form(&lam3, &b) * s3,
        0.5 * form(&a, &c) * s,
        0.5 * form(&a, &e) * s2,
        0.5 * form(&gh, &c) * s2,
        0.5 * form(&gh, &e) * s3,
        form(l, &c) * s2 / 12.0,
        form(l, &e) * s3 / 12.0,
        form(&a, f) * s2 / 24.0,
        form(&gh, f) * s3 / 24.0,
        form(l, f) * s3 / 144.0,
    ]
}

/// Sign statistic of the exactly identified case.
pub fn limit_r2(z0: &DVector<f64>, z1: &DVector<f64>, bundle: &DerivativeBundle, ps: &ProjectionSet) -> Result<f64> {
    if bundle.q() != bundle.p() {
        return Err(Error::Regime(format!(
            "R2 applies only to exact identification (q = p), got q = {}, p = {}",
            bundle.q(),
            bundle.p()
        )));
    }
    let (_, v) = limit_v(z0, ps, &bundle.g);
    Ok(r2_terms(z0, z1, bundle, ps, v).iter().sum())
}

/// `H(z₀ + ½G·φ_p²)`: the fast coordinates concentrated out for a given squared slow deviation.
pub fn concentrate_phi1(z0: &DVector<f64>, phip_sq: f64, ps: &ProjectionSet, g: &DVector<f64>) -> DVector<f64> {
    &ps.h * (z0 + g * (0.5 * phip_sq))
}

/// Maps Gaussian `(Z₀, Z₁)` to a full [`LimitDraw`].
pub struct LimitKernel<'a> {
    bundle: &'a DerivativeBundle,
    ps: &'a ProjectionSet,
    exact: bool,
    form: R1Form,
}

impl<'a> LimitKernel<'a> {
    pub fn new(bundle: &'a DerivativeBundle, ps: &'a ProjectionSet, regime: Regime) -> Result<Self> {
        let exact = match regime {
            Regime::SecondOrderExact => true,
            Regime::SecondOrderOveridentified => false,
            other => {
                return Err(Error::Regime(format!("limit law needs a second-order regime, got {}", other.as_str())))
            }
        };
        if exact && bundle.q() != bundle.p() {
            return Err(Error::Regime("exact regime requires q = p".into()));
        }
        Ok(Self { bundle, ps, exact, form: R1Form::default() })
    }

    pub fn with_r1_form(mut self, form: R1Form) -> Self {
        self.form = form;
        self
    }

    pub fn sign_statistic(&self, z0: &DVector<f64>, z1: &DVector<f64>) -> f64 {
        if self.exact {
            let (_, v) = limit_v(z0, self.ps, &self.bundle.g);
            r2_terms(z0, z1, self.bundle, self.ps, v).iter().sum()
        } else {
            limit_r1_form(z0, z1, self.bundle, self.ps, self.form)
        }
    }

    pub fn draw(&self, z0: DVector<f64>, z1: DVector<f64>) -> LimitDraw {
        let (z, v) = limit_v(&z0, self.ps, &self.bundle.g);
        let r = self.sign_statistic(&z0, &z1);
        let b = r >= 0.0;
        let root = v.sqrt();
        let dphip = if b { -root } else { root };
        let dphi1 = concentrate_phi1(&z0, v, self.ps, &self.bundle.g);
        LimitDraw {
            z0: z0.iter().copied().collect(),
            z1: z1.iter().copied().collect(),
            z,
            v,
            r,
            b,
            dphi1: dphi1.iter().copied().collect(),
            dphip,
        }
    }
}

/// Result of a limit-law simulation.
#[derive(Clone, Debug)]
pub struct LimitSimulation {
    pub draws: Vec<LimitDraw>,
    pub regime: Regime,
    /// No sign limit exists (`q = p` with a vanishing nondegeneracy vector).
    pub degenerate: bool,
    pub q: usize,
    pub p: usize,
    pub seed: u64,
}

const BATCH: usize = 4096;

/// Factor `C` with `CC′ = v̂ + ridge·I`, ridge `1e−12·trace/(2q)`.
pub fn covariance_factor(v_hat: &DMatrix<f64>, q: usize) -> Result<DMatrix<f64>> {
    if v_hat.shape() != (2 * q, 2 * q) {
        return Err(Error::Simulation(format!("v̂ must be {0}x{0}", 2 * q)));
    }
    if !linalg::is_symmetric(v_hat, 1e-8) {
        return Err(Error::Simulation("v̂ is not symmetric".into()));
    }
    let ev = linalg::sym_eigenvalues(v_hat);
    let top = ev.last().copied().unwrap_or(0.0);
    if ev[0] < -1e-10 * top.abs().max(f64::MIN_POSITIVE) {
        return Err(Error::Simulation(format!("v̂ is not positive semi-definite (eigenvalue {:e})", ev[0])));
    }
    if linalg::max_abs(&v_hat.view((0, 0), (q, q)).into_owned()) == 0.0 {
        return Err(Error::Simulation("v̂ has a zero moment block; the limit of √T·m_T is degenerate".into()));
    }
    let ridge = 1e-12 * v_hat.trace() / (2 * q) as f64;
    let reg = linalg::symmetrize(v_hat) + DMatrix::identity(2 * q, 2 * q) * ridge;
    Ok(match nalgebra::Cholesky::new(reg.clone()) {
        Some(c) => c.l(),
        None => linalg::sym_sqrt(&reg),
    })
}

/// Draws `n` Gaussian pairs `(Z₀, Z₁) ~ N(0, v̂)` and maps each through `f`.
/// Draw `i` depends only on `(seed, i)`, so the output is schedule independent.
pub fn simulate_gaussian_map<T, F>(v_hat: &DMatrix<f64>, q: usize, n: usize, seed: u64, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(DVector<f64>, DVector<f64>) -> T + Sync + Send,
{
    let chol = covariance_factor(v_hat, q)?;
    let batches = n.div_ceil(BATCH);
    let chunks = exec::map_indexed(batches, |bi| {
        let mut rng = exec::substream(seed, &[0x004c_494d_4954, bi as u64]);
        let len = BATCH.min(n - bi * BATCH);
        let mut out = Vec::with_capacity(len);
        for _ in 0..len {
            let xi = DVector::from_fn(2 * q, |_, _| StandardNormal.sample(&mut rng));
            let z = &chol * xi;
            out.push(f(z.rows(0, q).into_owned(), z.rows(q, q).into_owned()));
        }
        out
    });
    Ok(chunks.into_iter().flatten().collect())
}

/// Simulates the joint limit of the slow and fast coordinates.
pub fn simulate_limit(
    bundle: &DerivativeBundle,
    ps: &ProjectionSet,
    v_hat: &DMatrix<f64>,
    regime: Regime,
    n_draws: usize,
    seed: u64,
) -> Result<LimitSimulation> {
    let kernel = LimitKernel::new(bundle, ps, regime)?;
    let q = bundle.q();
    let degenerate = regime == Regime::SecondOrderExact
        && nondegeneracy_r2(bundle, ps).amax() <= 1e-4 * bundle.g.amax().max(1.0);
    let draws = simulate_gaussian_map(v_hat, q, n_draws, seed, |z0, z1| kernel.draw(z0, z1))?;
    Ok(LimitSimulation { draws, regime, degenerate, q, p: bundle.p(), seed })
}

/// Writes draws as CSV; `header` lines are emitted first as `#` comments.
pub fn write_draws_csv<W: Write>(out: W, sim: &LimitSimulation, header: &[String]) -> Result<()> {
    let mut out = out;
    for line in header {
        writeln!(out, "# {line}")?;
    }
    let mut wtr = csv::Writer::from_writer(out);
    let mut cols = vec!["draw_id".to_string()];
    cols.extend((1..=sim.q).map(|i| format!("Z0_{i}")));
    cols.extend((1..=sim.q).map(|i| format!("Z1_{i}")));
    cols.extend(["Z", "V", "R", "B"].map(String::from));
    cols.extend((1..sim.p).map(|i| format!("dphi1_{i}")));
    cols.push("dphip".into());
    wtr.write_record(&cols)?;
    for (i, d) in sim.draws.iter().enumerate() {
        let mut rec = vec![i.to_string()];
        rec.extend(d.z0.iter().chain(&d.z1).map(|v| format!("{v:?}")));
        rec.extend([d.z, d.v, d.r].map(|v| format!("{v:?}")));
        rec.push(if d.b { "1".into() } else { "0".into() });
        rec.extend(d.dphi1.iter().map(|v| format!("{v:?}")));
        rec.push(format!("{:?}", d.dphip));
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asymptotics::projections;

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    fn scalar(g: f64, l: f64, f: f64) -> (DerivativeBundle, ProjectionSet) {
        let mut b = DerivativeBundle::zeros(1, 1, DMatrix::identity(1, 1));
        b.g[0] = g;
        b.l[0] = l;
        b.f[0] = f;
        let ps = projections(&b.d, &b.g, &b.w).unwrap();
        (b, ps)
    }

    #[test]
    fn v_indicator() {
        let (b, ps) = scalar(1.0, 0.0, 0.0);
        assert_eq!(limit_v(&dv(&[1.0]), &ps, &b.g), (1.0, 0.0));
        let (b, ps) = scalar(2.0, 0.0, 0.0);
        assert!((ps.sigma_g - 4.0).abs() < 1e-14);
        let (z, v) = limit_v(&dv(&[-1.0]), &ps, &b.g);
        assert_eq!(z, -2.0);
        assert!((v - 1.0).abs() < 1e-14);
    }

    #[test]
    fn r1_two_moment_hand_value() {
        let mut b = DerivativeBundle::zeros(2, 1, DMatrix::identity(2, 2));
        b.g = dv(&[1.0, 0.0]);
        let ps = projections(&b.d, &b.g, &b.w).unwrap();
        let r = limit_r1(&dv(&[1.0, 2.0]), &dv(&[3.0, 4.0]), &b, &ps);
        assert!((r - 8.0).abs() < 1e-12);
    }

    #[test]
    fn r1_forms_agree() {
        let mut b = DerivativeBundle::zeros(3, 2, DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.0, 0.3, 1.0, 0.2, 0.0, 0.2, 1.5]));
        b.d = DMatrix::from_column_slice(3, 1, &[1.0, 0.4, -0.3]);
        b.g = dv(&[0.2, 1.0, 0.5]);
        b.l = dv(&[0.7, -0.1, 0.3]);
        b.g_1p = DMatrix::from_column_slice(3, 1, &[0.5, 0.2, -0.4]);
        let ps = projections(&b.d, &b.g, &b.w).unwrap();
        let (z0, z1) = (dv(&[0.3, -1.2, 0.8]), dv(&[1.1, 0.4, -0.6]));
        let a = limit_r1_form(&z0, &z1, &b, &ps, R1Form::Pg);
        let c = limit_r1_form(&z0, &z1, &b, &ps, R1Form::Md);
        assert!((a - c).abs() < 1e-12 * a.abs().max(1.0));
        assert!(a.abs() > 1e-6);
    }

    #[test]
    fn r2_scalar_reduces_to_f_terms() {
        let (b, ps) = scalar(2.0, 0.0, 1.0);
        for z1 in [-3.0, 0.5, 2.0] {
            let r = limit_r2(&dv(&[-1.0]), &dv(&[z1]), &b, &ps).unwrap();
            assert!((r - z1 / 24.0).abs() < 1e-14);
        }
        let r = limit_r2(&dv(&[1.0]), &dv(&[5.0]), &b, &ps).unwrap();
        assert_eq!(r, 0.0);
        let (b0, ps0) = scalar(2.0, 0.0, 0.0);
        assert_eq!(limit_r2(&dv(&[-1.0]), &dv(&[5.0]), &b0, &ps0).unwrap(), 0.0);
    }

    #[test]
    fn r2_rejects_overidentification() {
        let mut b = DerivativeBundle::zeros(2, 1, DMatrix::identity(2, 2));
        b.g = dv(&[1.0, 0.0]);
        let ps = projections(&b.d, &b.g, &b.w).unwrap();
        assert!(matches!(limit_r2(&dv(&[1.0, 0.0]), &dv(&[0.0, 0.0]), &b, &ps), Err(Error::Regime(_))));
    }

    #[test]
    fn v_powers_vanish_at_zero() {
        let mut b = DerivativeBundle::zeros(2, 2, DMatrix::identity(2, 2));
        b.d = DMatrix::from_column_slice(2, 1, &[1.0, 0.5]);
        b.g = dv(&[0.5, 2.0]);
        b.g_1p = DMatrix::from_column_slice(2, 1, &[0.3, -0.2]);
        b.l = dv(&[0.5, 1.0]);
        b.g_1pp = DMatrix::from_column_slice(2, 1, &[0.2, 0.4]);
        b.f = dv(&[-1.0, -2.0]);
        b.k = vec![DMatrix::from_element(1, 1, 0.4), DMatrix::from_element(1, 1, -0.2)];
        let ps = projections(&b.d, &b.g, &b.w).unwrap();
        let t = r2_terms(&dv(&[0.3, -0.7]), &dv(&[1.0, 0.2]), &b, &ps, 0.0);
        assert!(t[0] != 0.0);
        assert!(t[1..].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn concentration_degenerate_cases() {
        let (b, ps) = scalar(2.0, 0.0, 0.0);
        assert_eq!(concentrate_phi1(&dv(&[0.4]), 0.3, &ps, &b.g).len(), 0);
        let mut b = DerivativeBundle::zeros(2, 2, DMatrix::identity(2, 2));
        b.d = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        b.g = dv(&[0.0, 1.0]);
        let ps = projections(&b.d, &b.g, &b.w).unwrap();
        assert_eq!(concentrate_phi1(&dv(&[0.0, 0.0]), 0.0, &ps, &b.g)[0], 0.0);
    }

    #[test]
    fn zero_moment_block_is_rejected() {
        let mut v = DMatrix::zeros(2, 2);
        v[(1, 1)] = 1.0;
        assert!(matches!(covariance_factor(&v, 1), Err(Error::Simulation(_))));
    }

    #[test]
    fn simulation_is_reproducible_and_consistent() {
        let (b, ps) = scalar(2.0, 3.0, -12.0);
        let v = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        let a = simulate_limit(&b, &ps, &v, Regime::SecondOrderExact, 5000, 7).unwrap();
        let c = simulate_limit(&b, &ps, &v, Regime::SecondOrderExact, 5000, 7).unwrap();
        assert_eq!(a.draws, c.draws);
        assert!(!a.degenerate);
        for d in &a.draws {
            assert!(d.v >= 0.0);
            assert_eq!(d.v > 0.0, d.z < 0.0);
            assert!((d.dphip * d.dphip - d.v).abs() < 1e-12);
        }
        let single = crate::exec::with_threads(Some(1), || {
            simulate_limit(&b, &ps, &v, Regime::SecondOrderExact, 5000, 7).unwrap()
        });
        assert_eq!(single.draws, a.draws);
    }

    #[test]
    fn unit_block_gives_zero_z1() {
        let (b, ps) = scalar(2.0, 0.0, 1.0);
        let mut v = DMatrix::zeros(2, 2);
        v[(0, 0)] = 1.0;
        let sim = simulate_limit(&b, &ps, &v, Regime::SecondOrderExact, 2000, 1).unwrap();
        assert!(sim.draws.iter().all(|d| d.z1[0].abs() < 1e-5));
        assert!(sim.draws.iter().all(|d| (d.v - (-2.0 * d.z).max(0.0) / 4.0).abs() < 1e-12));
    }

    #[test]
    fn degenerate_exact_run_is_flagged() {
        let (b, ps) = scalar(2.0, 0.0, 0.0);
        let v = DMatrix::identity(2, 2);
        assert!(simulate_limit(&b, &ps, &v, Regime::SecondOrderExact, 100, 1).unwrap().degenerate);
    }

    #[test]
    fn csv_schema() {
        let mut b = DerivativeBundle::zeros(2, 2, DMatrix::identity(2, 2));
        b.d = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        b.g = dv(&[0.0, 1.0]);
        b.f = dv(&[1.0, 1.0]);
        let ps = projections(&b.d, &b.g, &b.w).unwrap();
        let sim = simulate_limit(&b, &ps, &DMatrix::identity(4, 4), Regime::SecondOrderExact, 3, 2).unwrap();
        let mut buf = Vec::new();
        write_draws_csv(&mut buf, &sim, &["seed 2".into()]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("# seed 2"));
        assert_eq!(lines.next(), Some("draw_id,Z0_1,Z0_2,Z1_1,Z1_2,Z,V,R,B,dphi1_1,dphip"));
        assert_eq!(lines.count(), 3);
    }
}
