use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::ProjectionSet;
use crate::linalg;
use crate::moments::DerivativeBundle;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    FirstOrder,
    SecondOrderOveridentified,
    SecondOrderExact,
    Unclassified,
}

impl Regime {
    pub fn is_second_order(self) -> bool {
        matches!(self, Regime::SecondOrderOveridentified | Regime::SecondOrderExact)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Regime::FirstOrder => "first_order",
            Regime::SecondOrderOveridentified => "second_order_overidentified",
            Regime::SecondOrderExact => "second_order_exact",
            Regime::Unclassified => "unclassified",
        }
    }
}

/// A singular value counts as zero when below `max(relative·σ_max, absolute)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RegimeTolerances {
    pub relative: f64,
    pub absolute: f64,
    /// `‖nondegeneracy‖∞ ≤ degeneracy·max(1, ‖G‖∞)` flags the sign limit as degenerate.
    pub degeneracy: f64,
}

impl Default for RegimeTolerances {
    fn default() -> Self {
        Self { relative: 1e-7, absolute: 0.0, degeneracy: 1e-4 }
    }
}

impl RegimeTolerances {
    fn zero_cut(&self, s_max: f64) -> f64 {
        (self.relative * s_max).max(self.absolute)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RegimeReport {
    pub regime: Regime,
    pub jacobian_singular_values: Vec<f64>,
    pub rank_dg: usize,
    /// `F + 6·G_1pp·HG + 12·λ̃₃`, reported when `q = p`.
    pub nondegeneracy_value: Option<Vec<f64>>,
    /// Set when `q = p` and the nondegeneracy vector vanishes: no sign limit exists.
    pub sign_degenerate: bool,
    #[serde(serialize_with = "serialize_rows")]
    pub reparametrization: DMatrix<f64>,
}

fn serialize_rows<S: serde::Serializer>(m: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_seq(linalg::to_rows(m))
}

/// Orthogonal `A` whose last column spans the (one-dimensional) null space of `J`.
///
/// The null direction `u` is signed so its largest-magnitude entry is positive;
/// the other columns are Gram–Schmidt completions of the unit vectors `e_i`,
/// skipping the index of that largest entry.
pub fn reparametrize_to_canonical(j: &DMatrix<f64>, rank_tol: f64) -> Result<DMatrix<f64>> {
    let p = j.ncols();
    let svd = j.clone().svd(false, true);
    let v_t = svd.v_t.ok_or_else(|| Error::Regime("SVD failed".into()))?;
    let s: Vec<f64> = svd.singular_values.iter().copied().collect();
    let s_max = s.iter().copied().fold(0.0, f64::max);
    // with q < p the missing singular values are structural zeros
    let mut small: Vec<usize> = (0..s.len()).filter(|&i| s[i] <= rank_tol * s_max || s_max == 0.0).collect();
    let missing = p - s.len();
    if small.len() + missing != 1 {
        return Err(Error::Regime(format!(
            "expected exactly one vanishing singular value, found {} (rank deficiency other than one is not supported)",
            small.len() + missing
        )));
    }
    let k = small.pop().ok_or_else(|| Error::Regime("Jacobian has fewer rows than columns".into()))?;
    let mut u: DVector<f64> = v_t.row(k).transpose().into_owned();
    let imax = u.iamax();
    if u[imax] < 0.0 {
        u = -u;
    }
    u /= u.norm();

    let mut basis: Vec<DVector<f64>> = vec![u.clone()];
    let mut cols = Vec::with_capacity(p);
    for i in (0..p).filter(|&i| i != imax) {
        let mut e = DVector::zeros(p);
        e[i] = 1.0;
        for b in &basis {
            let proj = b.dot(&e);
            e -= b * proj;
        }
        e /= e.norm();
        basis.push(e.clone());
        cols.push(e);
    }
    cols.push(u);
    Ok(DMatrix::from_columns(&cols))
}

/// `λ̃₃ = (¼G′H′K_kHG)_k`.
pub fn lambda3(bundle: &DerivativeBundle, ps: &ProjectionSet) -> DVector<f64> {
    let hg = &ps.h * &bundle.g;
    DVector::from_iterator(bundle.q(), bundle.k.iter().map(|k| 0.25 * hg.dot(&(k * &hg))))
}

/// `F + 6·G_1pp·(HG) + 12·λ̃₃`; nonzero is the condition for a proper sign limit when `q = p`.
pub fn nondegeneracy_r2(bundle: &DerivativeBundle, ps: &ProjectionSet) -> DVector<f64> {
    let hg = &ps.h * &bundle.g;
    &bundle.f + (&bundle.g_1pp * hg) * 6.0 + lambda3(bundle, ps) * 12.0
}

/// Classifies the identification regime from the Jacobian `J` at the true or
/// estimated parameter and the bundle in canonical coordinates.
pub fn classify_regime(bundle: &DerivativeBundle, j: &DMatrix<f64>, tols: &RegimeTolerances) -> RegimeReport {
    let (q, p) = (bundle.q(), bundle.p());
    let s = linalg::singular_values(j);
    let s_max = s.first().copied().unwrap_or(0.0);
    let cut = tols.zero_cut(s_max);
    let zeros = s.iter().filter(|&&v| v <= cut).count() + p.saturating_sub(s.len());

    let dg = linalg::hcat(&bundle.d, &linalg::column(&bundle.g));
    let sdg = linalg::singular_values(&dg);
    let dg_cut = tols.zero_cut(sdg.first().copied().unwrap_or(0.0));
    let rank_dg = sdg.iter().filter(|&&v| v > dg_cut).count();

    let reparametrization = if zeros == 1 {
        let rel = if s_max > 0.0 { (cut / s_max).max(tols.relative) } else { 1.0 };
        reparametrize_to_canonical(j, rel * (1.0 + 1e-12)).unwrap_or_else(|_| DMatrix::identity(p, p))
    } else {
        DMatrix::identity(p, p)
    };

    let regime = match zeros {
        0 => Regime::FirstOrder,
        1 if rank_dg == p && q == p => Regime::SecondOrderExact,
        1 if rank_dg == p => Regime::SecondOrderOveridentified,
        _ => Regime::Unclassified,
    };

    let mut nondegeneracy_value = None;
    let mut sign_degenerate = false;
    if q == p {
        if let Ok(ps) = super::projections(&bundle.d, &bundle.g, &bundle.w) {
            let nd = nondegeneracy_r2(bundle, &ps);
            sign_degenerate =
                regime == Regime::SecondOrderExact && nd.amax() <= tols.degeneracy * bundle.g.amax().max(1.0);
            nondegeneracy_value = Some(nd.iter().copied().collect());
        }
    }

    RegimeReport { regime, jacobian_singular_values: s, rank_dg, nondegeneracy_value, sign_degenerate, reparametrization }
}
