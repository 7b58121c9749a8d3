//! Gaussian envelopes and the tail-taming segments that push an envelope's
//! tails above (or below) the reference Gaussian.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::density::{ln_isotropic_envelope, Gaussian};
use crate::divergence::ray_directions;
use crate::error::{Error, Result};
use crate::piecewise::{GaussianPiece, PiecewiseGaussianDensity};
use crate::polyhedron::Polyhedron;
use crate::schedule::{ControlSchedule, ControlSegment};
use crate::target::TargetSpec;

/// Safety factor applied to the strict lower bound on `omega`.
pub const OMEGA_MARGIN: f64 = 1.05;

/// Whether the envelope bounds the solution from below or above.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvelopeMode {
    Lower,
    Upper,
}

/// Orientation of the tail segments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailDirection {
    /// Outward dilation: the envelope ends up above `rho_bullet`.
    DominateTarget,
    /// Inward contraction: the envelope ends up below `rho_bullet`.
    DominatedByTarget,
}

/// Constants of the tail stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailPlan {
    pub sigma_env: f64,
    pub alpha: f64,
    pub omega: f64,
    pub m_bar: f64,
    pub m_bar_bar: f64,
    pub direction: TailDirection,
}

/// Lower mode: `sqrt(min_i min spec(Sigma_i) / 2)`; upper mode:
/// `sqrt(2 max_i max spec(Sigma_i))`.
pub fn envelope_sigma(solution: &PiecewiseGaussianDensity, mode: EnvelopeMode) -> Result<f64> {
    let mut lo = f64::INFINITY;
    let mut hi: f64 = 0.0;
    for cov in solution.covariances()? {
        let eig = cov.symmetric_eigenvalues();
        let (mn, mx) = (eig.min(), eig.max());
        if !(mn > 0.0) || !mx.is_finite() {
            return Err(Error::Spectral { min_eig: mn });
        }
        lo = lo.min(mn);
        hi = hi.max(mx);
    }
    if !lo.is_finite() {
        return Err(Error::Invalid("solution has no pieces".into()));
    }
    Ok(match mode {
        EnvelopeMode::Lower => (0.5 * lo).sqrt(),
        EnvelopeMode::Upper => (2.0 * hi).sqrt(),
    })
}

/// `1.05 (2d/T) ln(sigma_target^2 / sigma_env^2)`, or `1.0` when the
/// logarithm is not positive and any rate works.
pub fn omega_threshold(d: usize, t_stage: f64, sigma_target: f64, sigma_env: f64) -> f64 {
    let l = (sigma_target * sigma_target / (sigma_env * sigma_env)).ln();
    if l > 0.0 {
        OMEGA_MARGIN * 2.0 * d as f64 / t_stage * l
    } else {
        1.0
    }
}

/// The `2d` segments `(±omega e_k, ±e_k, -M_bar)` on `[t0, t1]`, in equal
/// sub-intervals, coordinate by coordinate.
pub fn tail_taming_segments(
    d: usize,
    m_bar: f64,
    omega: f64,
    stage: (f64, f64),
    direction: TailDirection,
) -> Vec<ControlSegment> {
    let dt = (stage.1 - stage.0) / (2 * d) as f64;
    let sign = match direction {
        TailDirection::DominateTarget => 1.0,
        TailDirection::DominatedByTarget => -1.0,
    };
    let mut out = Vec::with_capacity(2 * d);
    for k in 0..d {
        for (j, side) in [(0, 1.0), (1, -1.0)] {
            let mut w = vec![0.0; d];
            let mut a = vec![0.0; d];
            w[k] = sign * side * omega;
            a[k] = side;
            let idx = 2 * k + j;
            let t0 = stage.0 + idx as f64 * dt;
            let t1 = if idx + 1 == 2 * d { stage.1 } else { stage.0 + (idx + 1) as f64 * dt };
            out.push(ControlSegment { t0, t1, w, a, b: -m_bar });
        }
    }
    out
}

/// Tail segments as a stand-alone schedule on `[0, length]`.
pub fn tail_schedule(d: usize, m_bar: f64, omega: f64, length: f64, direction: TailDirection) -> ControlSchedule {
    let segments = tail_taming_segments(d, m_bar, omega, (0.0, length), direction);
    ControlSchedule::new(length, segments).expect("tail segments are contiguous")
}

/// The envelope `alpha exp(-|x|^2 / (2 sigma^2))` as a one-piece density.
pub fn envelope_density(d: usize, alpha: f64, sigma: f64) -> PiecewiseGaussianDensity {
    let base = Gaussian::isotropic(DVector::zeros(d), sigma).expect("sigma is positive");
    let ln_alpha = alpha.ln() + 0.5 * d as f64 * (2.0 * std::f64::consts::PI * sigma * sigma).ln();
    let piece = GaussianPiece {
        ln_alpha,
        a: DMatrix::identity(d, d),
        beta: DVector::zeros(d),
        region: Polyhedron::full(),
        witness: Some(vec![0.0; d]),
    };
    PiecewiseGaussianDensity::from_pieces(base, vec![piece])
}

/// `ln alpha` making the envelope touch `0.9` (lower) or `1/0.9` (upper)
/// times the extreme of `rho / exp(-|x|^2 / 2 sigma^2)` over `points`.
pub fn envelope_ln_alpha(
    ln_rho: impl Fn(&[f64]) -> f64,
    sigma: f64,
    points: &[Vec<f64>],
    mode: EnvelopeMode,
) -> f64 {
    let vals = points.iter().map(|x| ln_rho(x) - ln_isotropic_envelope(x, 1.0, sigma));
    match mode {
        EnvelopeMode::Lower => vals.fold(f64::INFINITY, f64::min) + 0.9f64.ln(),
        EnvelopeMode::Upper => vals.fold(f64::NEG_INFINITY, f64::max) - 0.9f64.ln(),
    }
}

/// Result of [`certify_tail_domination`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailCertificate {
    pub m_bar_bar: f64,
    /// Largest `rho_bullet / rho` (dominate) or `rho / rho_bullet`
    /// (dominated) over the accepted scan; below one on success.
    pub worst_ratio: f64,
}

/// Doubles `M` from `max(plan.m_bar, target.radius)` until, on every tested
/// ray and every sup-norm radius in `[M, 8M]`, the envelope solution and
/// `rho_bullet` are strictly ordered as `plan.direction` requires.
pub fn certify_tail_domination(
    result: &PiecewiseGaussianDensity,
    target: &TargetSpec,
    plan: &TailPlan,
) -> Result<TailCertificate> {
    use crate::density::Density;
    let d = result.dim();
    let rays = ray_directions(d, (1usize << (2 * d).min(20)) * 32);
    let mut m = plan.m_bar.max(target.radius);
    let mut worst_seen = f64::INFINITY;
    for _ in 0..=30 {
        let mut worst = f64::NEG_INFINITY;
        for u in &rays {
            let inf_norm = u.iter().map(|v| v.abs()).fold(0.0, f64::max);
            for k in 0..=48 {
                let s = m * f64::powf(8.0, k as f64 / 48.0);
                let x: Vec<f64> = u.iter().map(|v| v * s / inf_norm).collect();
                let gap = target.ln_reference(&x) - result.ln_density(&x);
                let v = match plan.direction {
                    TailDirection::DominateTarget => gap,
                    TailDirection::DominatedByTarget => -gap,
                };
                worst = worst.max(if v.is_nan() { f64::INFINITY } else { v });
            }
        }
        if worst < 0.0 {
            return Ok(TailCertificate { m_bar_bar: m, worst_ratio: worst.exp() });
        }
        worst_seen = worst;
        m *= 2.0;
    }
    Err(Error::TailCertification { worst_ratio: worst_seen.exp(), radius: m / 2.0 })
}
