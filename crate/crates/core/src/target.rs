//! Target densities with a Gaussian tail hypothesis.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::density::{ln_isotropic_gaussian, Density};
use crate::divergence::ray_directions;
use crate::error::{Error, Result};

/// Which side of the reference Gaussian `rho_bullet = N(0, sigma^2 I)` the
/// target's tail lies on outside the radius `M`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailMode {
    /// `rho_* <= rho_bullet` for `|x| >= M` (needed for forward KL).
    UpperBounded,
    /// `rho_* >= rho_bullet` for `|x| >= M` (needed for reverse KL).
    LowerBounded,
}

/// A target density together with its tail bound `sigma_bullet` and radius `M`.
#[derive(Clone)]
pub struct TargetSpec {
    pub density: Arc<dyn Density>,
    pub sigma_tail: f64,
    pub radius: f64,
    pub mode: TailMode,
}

impl std::fmt::Debug for TargetSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TargetSpec")
            .field("dim", &self.density.dim())
            .field("sigma_tail", &self.sigma_tail)
            .field("radius", &self.radius)
            .field("mode", &self.mode)
            .finish()
    }
}

/// Outcome of scanning the tail hypothesis along rays.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailScan {
    /// Largest `ln rho_* - ln rho_bullet` (upper mode) or its negative
    /// (lower mode) over the scanned points; negative or zero means the
    /// hypothesis held everywhere scanned.
    pub worst_log_excess: f64,
    pub worst_radius: f64,
}

impl TargetSpec {
    pub fn new(density: Arc<dyn Density>, sigma_tail: f64, radius: f64, mode: TailMode) -> Result<Self> {
        if !(sigma_tail > 0.0 && sigma_tail.is_finite()) {
            return Err(Error::Invalid(format!("sigma_tail must be positive, got {sigma_tail}")));
        }
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::Invalid(format!("tail radius must be positive, got {radius}")));
        }
        Ok(Self { density, sigma_tail, radius, mode })
    }

    pub fn dim(&self) -> usize {
        self.density.dim()
    }

    /// `ln rho_bullet(x)` for the normalized `N(0, sigma_bullet^2 I)`.
    pub fn ln_reference(&self, x: &[f64]) -> f64 {
        ln_isotropic_gaussian(x, self.sigma_tail)
    }

    /// Scans radii `M * 2^{k/8}`, `k = 0..=8 * doublings`, along the standard
    /// ray set.
    pub fn scan_tail(&self, doublings: usize) -> TailScan {
        let d = self.dim();
        let mut worst = TailScan { worst_log_excess: f64::NEG_INFINITY, worst_radius: self.radius };
        for u in ray_directions(d, 32 * (1 << (2 * d).min(16))) {
            for k in 0..=8 * doublings {
                let r = self.radius * f64::powf(2.0, k as f64 / 8.0);
                let x: Vec<f64> = u.iter().map(|v| r * v).collect();
                let diff = self.density.ln_density(&x) - self.ln_reference(&x);
                let excess = match self.mode {
                    TailMode::UpperBounded => diff,
                    TailMode::LowerBounded => -diff,
                };
                // both tails underflowing to zero compare as equal
                let excess = if excess.is_nan() { 0.0 } else { excess };
                if excess > worst.worst_log_excess {
                    worst = TailScan { worst_log_excess: excess, worst_radius: r };
                }
            }
        }
        worst
    }

    /// Errors with a tail-certification failure if the hypothesis fails on
    /// the scan.
    pub fn validate_tail(&self) -> Result<()> {
        let scan = self.scan_tail(6);
        if scan.worst_log_excess > 1e-12 {
            return Err(Error::TailCertification {
                worst_ratio: scan.worst_log_excess.exp(),
                radius: scan.worst_radius,
            });
        }
        Ok(())
    }

    /// Smallest `M` on a `2^{1/8}` grid from `start` for which the scan
    /// passes; `None` if none is found below `start * 2^cap`.
    pub fn find_tail_radius(density: Arc<dyn Density>, sigma_tail: f64, mode: TailMode, start: f64, cap: usize) -> Option<f64> {
        (0..=8 * cap)
            .map(|k| start * f64::powf(2.0, k as f64 / 8.0))
            .find(|m| {
                TargetSpec { density: density.clone(), sigma_tail, radius: *m, mode }
                    .scan_tail(6)
                    .worst_log_excess
                    <= 1e-12
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::{Gaussian, GaussianMixture};

    #[test]
    fn narrower_gaussian_is_upper_bounded() {
        let t = TargetSpec::new(Arc::new(Gaussian::univariate(0.0, 1.0).unwrap()), 1.5, 1.0, TailMode::UpperBounded)
            .unwrap();
        // N(0,1) <= N(0,1.5^2) once x^2 (1/2 - 1/4.5) >= ln 1.5, i.e. |x| >= 1.208
        assert!(t.validate_tail().is_err());
        let t = TargetSpec { radius: 1.4, ..t };
        assert!(t.validate_tail().is_ok());
    }

    #[test]
    fn finds_radius_for_bimodal_mixture() {
        let m = GaussianMixture::new(
            vec![0.5, 0.5],
            vec![Gaussian::univariate(-1.0, 0.6).unwrap(), Gaussian::univariate(1.0, 0.6).unwrap()],
        )
        .unwrap();
        let r = TargetSpec::find_tail_radius(Arc::new(m), 1.5, TailMode::UpperBounded, 0.5, 6).unwrap();
        assert!(r > 1.0 && r < 3.0, "{r}");
    }
}
