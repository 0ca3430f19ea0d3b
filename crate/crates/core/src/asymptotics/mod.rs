//! Limit theory under second-order local identification.
//!
//! Parameters are split as `φ = (φ₁, φ_p)` with `∂m/∂φ_p(φ₀) = 0`. The fast
//! block `φ₁` converges at `T^(−1/2)`, the slow coordinate `φ_p` at `T^(−1/4)`.
//! With `(Z₀, Z₁)` the Gaussian limit of `√T(m_T(φ₀), ∂m_T(φ₀)/∂φ_p)`:
//!
//! * `Z = G′W½M_dW½Z₀` and `V = −2Z·1(Z<0)/σ_G` give the limit of `√T(φ̂_p − φ₀,p)²`;
//! * `R1` (overidentified) or `R2` (exactly identified) fixes the sign of the
//!   slow deviation: `T^(1/4)(φ̂_p − φ₀,p) → (−1)^B √V` with `B = 1(R ≥ 0)`;
//! * `√T(φ̂₁ − φ₀,₁) → HZ₀ + HGV/2`.

mod confidence;
mod limit;
mod projections;
mod regime;

pub use confidence::{
    confidence_set, confidence_set_with, quantile_sorted, sorted, ConfidenceSet, Interval, SlowInterval, MIN_DRAWS,
};
pub use limit::{
    concentrate_phi1, covariance_factor, limit_r1, limit_r1_form, limit_r2, limit_v, r2_terms, simulate_gaussian_map,
    simulate_limit, write_draws_csv, LimitDraw, LimitKernel, LimitSimulation, R1Form,
};
pub use projections::{projections, ProjectionSet};
pub use regime::{
    classify_regime, lambda3, nondegeneracy_r2, reparametrize_to_canonical, Regime, RegimeReport, RegimeTolerances,
};
