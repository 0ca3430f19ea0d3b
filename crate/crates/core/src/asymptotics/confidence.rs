use serde::Serialize;

use super::LimitDraw;
use crate::{Error, Result};

pub const MIN_DRAWS: usize = 1000;

/// Empirical quantile of a sorted sample, linear interpolation between order
/// statistics (Hyndman–Fan type 7).
pub fn quantile_sorted(sorted: &[f64], prob: f64) -> f64 {
    assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * prob.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn sorted(values: impl IntoIterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = values.into_iter().collect();
    v.sort_by(|a, b| a.total_cmp(b));
    v
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub fn contains(&self, x: f64) -> bool {
        self.lower <= x && x <= self.upper
    }
}

/// How the slow-coordinate interval is formed from the simulated deviations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SlowInterval {
    /// Equal-tailed quantiles of the signed deviation.
    #[default]
    EqualTailed,
    /// `φ̂_p ± T^(−1/4)·q_{1−α}(|Δ|)`, for runs without a sign limit.
    Symmetric,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConfidenceSet {
    pub phi1: Vec<Interval>,
    pub phip: Interval,
    pub alpha: f64,
    pub slow_interval: SlowInterval,
}

fn equal_tailed(center: f64, scale: f64, devs: Vec<f64>, alpha: f64) -> Interval {
    let s = sorted(devs);
    Interval {
        lower: center - scale * quantile_sorted(&s, 1.0 - alpha / 2.0),
        upper: center - scale * quantile_sorted(&s, alpha / 2.0),
    }
}

pub fn confidence_set(draws: &[LimitDraw], phi_hat: &[f64], t: f64, alpha: f64) -> Result<ConfidenceSet> {
    confidence_set_with(draws, phi_hat, t, alpha, SlowInterval::EqualTailed)
}

/// Per-coordinate intervals: `T^(−1/4)` scaling for `φ_p`, `T^(−1/2)` for `φ₁`.
pub fn confidence_set_with(
    draws: &[LimitDraw],
    phi_hat: &[f64],
    t: f64,
    alpha: f64,
    slow: SlowInterval,
) -> Result<ConfidenceSet> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Parameter(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if draws.len() < MIN_DRAWS {
        return Err(Error::Parameter(format!("need at least {MIN_DRAWS} limit draws, got {}", draws.len())));
    }
    if !(t > 0.0) {
        return Err(Error::Parameter("sample size must be positive".into()));
    }
    let p = phi_hat.len();
    if draws.iter().any(|d| d.dphi1.len() + 1 != p) {
        return Err(Error::Parameter("draw dimensions do not match the estimate".into()));
    }
    let slow_scale = t.powf(-0.25);
    let fast_scale = t.powf(-0.5);
    let phip = match slow {
        SlowInterval::EqualTailed => equal_tailed(phi_hat[p - 1], slow_scale, draws.iter().map(|d| d.dphip).collect(), alpha),
        SlowInterval::Symmetric => {
            let s = sorted(draws.iter().map(|d| d.dphip.abs()));
            let r = slow_scale * quantile_sorted(&s, 1.0 - alpha);
            Interval { lower: phi_hat[p - 1] - r, upper: phi_hat[p - 1] + r }
        }
    };
    let phi1 = (0..p - 1)
        .map(|i| equal_tailed(phi_hat[i], fast_scale, draws.iter().map(|d| d.dphi1[i]).collect(), alpha))
        .collect();
    Ok(ConfidenceSet { phi1, phip, alpha, slow_interval: slow })
}
