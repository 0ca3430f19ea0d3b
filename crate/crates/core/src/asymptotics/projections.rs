use nalgebra::{DMatrix, DVector};

use crate::linalg;
use crate::{Error, Result};

/// Projection geometry of the rank-one-deficient problem.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionSet {
    /// `I − W½D(D′WD)⁻¹D′W½`.
    pub m_d: DMatrix<f64>,
    /// `M_d W½G σ_G⁻¹ G′W½M_d`.
    pub p_g: DMatrix<f64>,
    /// `M_d − P_g`.
    pub m_dg: DMatrix<f64>,
    /// `−(D′WD)⁻¹D′W`, (p−1)×q.
    pub h: DMatrix<f64>,
    /// `G′W½M_dW½G`.
    pub sigma_g: f64,
    pub w_sqrt: DMatrix<f64>,
}

/// Builds the projection set from `D` (q×(p−1)), `G` and the weight matrix.
pub fn projections(d: &DMatrix<f64>, g: &DVector<f64>, w: &DMatrix<f64>) -> Result<ProjectionSet> {
    let q = g.len();
    if d.nrows() != q || w.shape() != (q, q) {
        return Err(Error::Parameter("D, G and W have inconsistent dimensions".into()));
    }
    linalg::check_spd(w, "W", 1e-14)?;
    let w_sqrt = linalg::sym_sqrt(w);
    let dwd_inv = linalg::spd_inverse(&(d.transpose() * w * d))
        .ok_or_else(|| Error::Geometry("D′WD is singular; D lacks full column rank".into()))?;
    let wd = &w_sqrt * d;
    let m_d = linalg::symmetrize(&(DMatrix::identity(q, q) - &wd * &dwd_inv * wd.transpose()));
    let a = &m_d * &w_sqrt * g;
    let sigma_g = (g.transpose() * &w_sqrt * &a)[(0, 0)];
    let scale = (g.transpose() * w * g)[(0, 0)];
    if !(sigma_g > 1e-12 * scale) || sigma_g <= 0.0 {
        return Err(Error::Geometry(format!(
            "σ_G = {sigma_g:e} is not positive; rank(D G) < p so G is not identified off the span of D"
        )));
    }
    let p_g = linalg::symmetrize(&(&a * a.transpose() / sigma_g));
    let m_dg = linalg::symmetrize(&(&m_d - &p_g));
    let h = -(&dwd_inv * d.transpose() * w);
    Ok(ProjectionSet { m_d, p_g, m_dg, h, sigma_g, w_sqrt })
}

impl ProjectionSet {
    pub fn q(&self) -> usize {
        self.m_d.nrows()
    }

    /// `W½M_dW½`, the matrix of the quadratic forms defining `Z` and `R1`.
    pub fn w_md_w(&self) -> DMatrix<f64> {
        &self.w_sqrt * &self.m_d * &self.w_sqrt
    }

    /// Largest violation among the defining identities: idempotence and symmetry
    /// of `M_d`, `P_g`, `M_dg`; `M_dW½D = 0`; `M_dgW½G = 0`; `P_gM_dg = 0`;
    /// `M_d = P_g + M_dg`; and `σ_G` against its definition.
    pub fn invariant_violation(&self, d: &DMatrix<f64>, g: &DVector<f64>) -> f64 {
        let mut worst = 0.0_f64;
        for m in [&self.m_d, &self.p_g, &self.m_dg] {
            worst = worst.max(linalg::max_abs(&(m * m - m)));
            worst = worst.max(linalg::max_abs(&(m - m.transpose())));
        }
        worst = worst.max(linalg::max_abs(&(&self.m_d * &self.w_sqrt * d)));
        worst = worst.max((&self.m_dg * &self.w_sqrt * g).amax());
        worst = worst.max(linalg::max_abs(&(&self.p_g * &self.m_dg)));
        worst = worst.max(linalg::max_abs(&(&self.m_d - &self.p_g - &self.m_dg)));
        let sigma = (g.transpose() * self.w_md_w() * g)[(0, 0)];
        worst.max((sigma - self.sigma_g).abs() / self.sigma_g.max(1.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: &DMatrix<f64>, b: &DMatrix<f64>) -> bool {
        linalg::max_abs(&(a - b)) < 1e-12
    }

    #[test]
    fn orthonormal_columns() {
        let d = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let g = DVector::from_vec(vec![0.0, 1.0]);
        let ps = projections(&d, &g, &DMatrix::identity(2, 2)).unwrap();
        let diag01 = DMatrix::from_diagonal(&DVector::from_vec(vec![0.0, 1.0]));
        assert!(close(&ps.m_d, &diag01));
        assert!(close(&ps.p_g, &diag01));
        assert!(close(&ps.m_dg, &DMatrix::zeros(2, 2)));
        assert!(close(&ps.h, &DMatrix::from_row_slice(1, 2, &[-1.0, 0.0])));
        assert!((ps.sigma_g - 1.0).abs() < 1e-14);
    }

    #[test]
    fn empty_d_gives_identity_m_d() {
        let d = DMatrix::zeros(2, 0);
        let g = DVector::from_vec(vec![1.0, 0.0]);
        let ps = projections(&d, &g, &DMatrix::identity(2, 2)).unwrap();
        assert!(close(&ps.m_d, &DMatrix::identity(2, 2)));
        assert!(close(&ps.p_g, &DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0]))));
        assert!(close(&ps.m_dg, &DMatrix::from_diagonal(&DVector::from_vec(vec![0.0, 1.0]))));
        assert_eq!(ps.h.shape(), (0, 2));
        assert!((ps.sigma_g - 1.0).abs() < 1e-14);
    }

    #[test]
    fn g_in_span_of_d_is_geometry_error() {
        let d = DMatrix::from_column_slice(2, 1, &[1.0, 1.0]);
        let g = DVector::from_vec(vec![2.0, 2.0]);
        assert!(matches!(projections(&d, &g, &DMatrix::identity(2, 2)), Err(Error::Geometry(_))));
    }

    fn instance(q: usize, p: usize) -> impl Strategy<Value = (DMatrix<f64>, DVector<f64>, DMatrix<f64>)> {
        (
            proptest::collection::vec(-2.0..2.0f64, q * (p - 1)),
            proptest::collection::vec(-2.0..2.0f64, q),
            proptest::collection::vec(-1.0..1.0f64, q * q),
        )
            .prop_map(move |(d, g, a)| {
                let d = DMatrix::from_column_slice(q, p - 1, &d);
                let g = DVector::from_vec(g);
                let a = DMatrix::from_column_slice(q, q, &a);
                let w = &a * a.transpose() + DMatrix::identity(q, q) * 0.5;
                (d, g, w)
            })
            .prop_filter("rank(D G) = p", move |(d, g, _)| {
                let dg = linalg::hcat(d, &linalg::column(g));
                let s = linalg::singular_values(&dg);
                s.last().copied().unwrap_or(0.0) > 0.05 * s[0]
            })
    }

    proptest! {
        #[test]
        fn invariants_hold_overidentified((d, g, w) in instance(4, 2)) {
            let ps = projections(&d, &g, &w).unwrap();
            prop_assert!(ps.invariant_violation(&d, &g) < 1e-10);
            prop_assert!(ps.sigma_g > 0.0);
        }

        #[test]
        fn exact_case_has_vanishing_m_dg((d, g, w) in instance(3, 3)) {
            let ps = projections(&d, &g, &w).unwrap();
            prop_assert!(ps.invariant_violation(&d, &g) < 1e-10);
            prop_assert!(linalg::max_abs(&ps.m_dg) < 1e-10);
        }

        #[test]
        fn scaling_w_keeps_projectors((d, g, w) in instance(4, 3), c in 0.1..10.0f64) {
            let a = projections(&d, &g, &w).unwrap();
            let b = projections(&d, &g, &(&w * c)).unwrap();
            prop_assert!(linalg::max_abs(&(&a.m_d - &b.m_d)) < 1e-9);
            prop_assert!(linalg::max_abs(&(&a.h - &b.h)) < 1e-9);
            prop_assert!((b.sigma_g / a.sigma_g - c).abs() < 1e-9 * c);
        }
    }
}
