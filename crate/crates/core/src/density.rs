//! Analytic densities and the [`Density`] trait shared by every estimator.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Axis-aligned box `[lo, hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxDomain {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoxDomain {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Self {
        assert_eq!(lo.len(), hi.len());
        Self { lo, hi }
    }

    /// The cube `[-r, r]^d`.
    pub fn cube(r: f64, d: usize) -> Self {
        Self { lo: vec![-r; d], hi: vec![r; d] }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(l, h)| h - l).product()
    }

    pub fn union(&self, other: &Self) -> Self {
        let lo = self.lo.iter().zip(&other.lo).map(|(a, b)| a.min(*b)).collect();
        let hi = self.hi.iter().zip(&other.hi).map(|(a, b)| a.max(*b)).collect();
        Self { lo, hi }
    }

    /// Box scaled about its center by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let (lo, hi) = self
            .lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| {
                let c = 0.5 * (l + h);
                let r = 0.5 * (h - l) * factor;
                (c - r, c + r)
            })
            .unzip();
        Self { lo, hi }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().zip(self.lo.iter().zip(&self.hi)).all(|(v, (l, h))| *v >= *l && *v <= *h)
    }
}

/// A probability density on `R^d` that can be evaluated pointwise.
pub trait Density: Send + Sync {
    fn dim(&self) -> usize;

    /// Natural log of the density; `-inf` where it vanishes.
    fn ln_density(&self, x: &[f64]) -> f64;

    fn density(&self, x: &[f64]) -> f64 {
        self.ln_density(x).exp()
    }

    /// A box holding all but roughly `tail` of the mass, when one is known.
    fn support_box(&self, tail: f64) -> Option<BoxDomain>;

    /// Points where a 1D density is not smooth; quadrature splits cells there.
    fn breakpoints(&self) -> Vec<f64> {
        Vec::new()
    }
}

impl<D: Density + ?Sized> Density for Arc<D> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn ln_density(&self, x: &[f64]) -> f64 {
        (**self).ln_density(x)
    }
    fn density(&self, x: &[f64]) -> f64 {
        (**self).density(x)
    }
    fn support_box(&self, tail: f64) -> Option<BoxDomain> {
        (**self).support_box(tail)
    }
    fn breakpoints(&self) -> Vec<f64> {
        (**self).breakpoints()
    }
}

impl<D: Density + ?Sized> Density for &D {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn ln_density(&self, x: &[f64]) -> f64 {
        (**self).ln_density(x)
    }
    fn density(&self, x: &[f64]) -> f64 {
        (**self).density(x)
    }
    fn support_box(&self, tail: f64) -> Option<BoxDomain> {
        (**self).support_box(tail)
    }
    fn breakpoints(&self) -> Vec<f64> {
        (**self).breakpoints()
    }
}

/// Standard normal quantile.
pub fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    Normal::standard().cdf(z)
}

/// Multivariate normal `N(mean, cov)`.
#[derive(Debug, Clone)]
pub struct Gaussian {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    chol_l: DMatrix<f64>,
    ln_norm: f64,
}

impl Gaussian {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if cov.nrows() != d || cov.ncols() != d {
            return Err(Error::Dimension { expected: d, got: cov.nrows() });
        }
        if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Invalid("Gaussian parameters must be finite".into()));
        }
        let sym = (&cov + cov.transpose()) * 0.5;
        let chol = sym.clone().cholesky().ok_or_else(|| Error::Spectral {
            min_eig: sym.clone().symmetric_eigenvalues().min(),
        })?;
        let l = chol.l();
        let ln_det_l: f64 = l.diagonal().iter().map(|v| v.ln()).sum();
        Ok(Self { ln_norm: -0.5 * d as f64 * LN_2PI - ln_det_l, mean, cov: sym, chol_l: l })
    }

    pub fn standard(d: usize) -> Self {
        Self::new(DVector::zeros(d), DMatrix::identity(d, d)).expect("identity is SPD")
    }

    pub fn isotropic(mean: DVector<f64>, sigma: f64) -> Result<Self> {
        let d = mean.len();
        Self::new(mean, DMatrix::identity(d, d) * (sigma * sigma))
    }

    pub fn univariate(mean: f64, sd: f64) -> Result<Self> {
        Self::isotropic(DVector::from_element(1, mean), sd)
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// Lower Cholesky factor of the covariance.
    pub fn chol_l(&self) -> &DMatrix<f64> {
        &self.chol_l
    }

    /// `L^{-1}(x - mean)`.
    pub fn whiten(&self, x: &[f64]) -> DVector<f64> {
        let r = DVector::from_column_slice(x) - &self.mean;
        self.chol_l.solve_lower_triangular(&r).expect("Cholesky factor is invertible")
    }

    pub fn ln_normalizer(&self) -> f64 {
        self.ln_norm
    }
}

impl Density for Gaussian {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn ln_density(&self, x: &[f64]) -> f64 {
        let z = self.whiten(x);
        self.ln_norm - 0.5 * z.norm_squared()
    }

    fn support_box(&self, tail: f64) -> Option<BoxDomain> {
        let d = self.dim();
        let z = normal_quantile(1.0 - tail / (2.0 * d as f64)).max(1.0);
        let (lo, hi) = (0..d)
            .map(|i| {
                let s = self.cov[(i, i)].sqrt();
                (self.mean[i] - z * s, self.mean[i] + z * s)
            })
            .unzip();
        Some(BoxDomain { lo, hi })
    }
}

/// Finite mixture of Gaussians.
#[derive(Debug, Clone)]
pub struct GaussianMixture {
    ln_weights: Vec<f64>,
    components: Vec<Gaussian>,
}

impl GaussianMixture {
    pub fn new(weights: Vec<f64>, components: Vec<Gaussian>) -> Result<Self> {
        if weights.is_empty() || weights.len() != components.len() {
            return Err(Error::Invalid("mixture needs one weight per component".into()));
        }
        if weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
            return Err(Error::Invalid("mixture weights must be positive".into()));
        }
        let d = components[0].dim();
        if let Some(c) = components.iter().find(|c| c.dim() != d) {
            return Err(Error::Dimension { expected: d, got: c.dim() });
        }
        let total: f64 = weights.iter().sum();
        let ln_weights = weights.iter().map(|w| (w / total).ln()).collect();
        Ok(Self { ln_weights, components })
    }

    pub fn weights(&self) -> Vec<f64> {
        self.ln_weights.iter().map(|v| v.exp()).collect()
    }

    pub fn components(&self) -> &[Gaussian] {
        &self.components
    }
}

pub(crate) fn log_sum_exp(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

impl Density for GaussianMixture {
    fn dim(&self) -> usize {
        self.components[0].dim()
    }

    fn ln_density(&self, x: &[f64]) -> f64 {
        log_sum_exp(self.ln_weights.iter().zip(&self.components).map(|(w, c)| w + c.ln_density(x)))
    }

    fn support_box(&self, tail: f64) -> Option<BoxDomain> {
        self.components
            .iter()
            .filter_map(|c| c.support_box(tail))
            .reduce(|a, b| a.union(&b))
    }
}

/// Uniform density on a closed box.
#[derive(Debug, Clone)]
pub struct UniformBox {
    domain: BoxDomain,
    ln_value: f64,
}

impl UniformBox {
    pub fn new(domain: BoxDomain) -> Result<Self> {
        if domain.lo.iter().zip(&domain.hi).any(|(l, h)| !(h > l)) {
            return Err(Error::Invalid("uniform box needs lo < hi on every axis".into()));
        }
        let ln_value = -domain.volume().ln();
        Ok(Self { domain, ln_value })
    }

    pub fn interval(lo: f64, hi: f64) -> Result<Self> {
        Self::new(BoxDomain::new(vec![lo], vec![hi]))
    }
}

impl Density for UniformBox {
    fn dim(&self) -> usize {
        self.domain.dim()
    }

    fn ln_density(&self, x: &[f64]) -> f64 {
        if self.domain.contains(x) {
            self.ln_value
        } else {
            f64::NEG_INFINITY
        }
    }

    fn support_box(&self, _tail: f64) -> Option<BoxDomain> {
        Some(self.domain.clone())
    }

    fn breakpoints(&self) -> Vec<f64> {
        if self.dim() == 1 {
            vec![self.domain.lo[0], self.domain.hi[0]]
        } else {
            Vec::new()
        }
    }
}

type LnFn = dyn Fn(&[f64]) -> f64 + Send + Sync;

/// A density given by a closure returning its logarithm.
#[derive(Clone)]
pub struct FnDensity {
    dim: usize,
    ln_fn: Arc<LnFn>,
    support: Option<BoxDomain>,
    breaks: Vec<f64>,
}

impl FnDensity {
    pub fn new(dim: usize, ln_fn: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self { dim, ln_fn: Arc::new(ln_fn), support: None, breaks: Vec::new() }
    }

    pub fn with_support(mut self, support: BoxDomain) -> Self {
        self.support = Some(support);
        self
    }

    pub fn with_breakpoints(mut self, breaks: Vec<f64>) -> Self {
        self.breaks = breaks;
        self
    }
}

impl std::fmt::Debug for FnDensity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FnDensity").field("dim", &self.dim).finish_non_exhaustive()
    }
}

impl Density for FnDensity {
    fn dim(&self) -> usize {
        self.dim
    }
    fn ln_density(&self, x: &[f64]) -> f64 {
        (self.ln_fn)(x)
    }
    fn support_box(&self, _tail: f64) -> Option<BoxDomain> {
        self.support.clone()
    }
    fn breakpoints(&self) -> Vec<f64> {
        self.breaks.clone()
    }
}

/// Isotropic centered Gaussian shape `exp(-|x|^2 / (2 sigma^2))` without its
/// normalizing constant, scaled by `alpha`. Used for tail envelopes.
pub fn ln_isotropic_envelope(x: &[f64], alpha: f64, sigma: f64) -> f64 {
    let r2: f64 = x.iter().map(|v| v * v).sum();
    alpha.ln() - r2 / (2.0 * sigma * sigma)
}

/// Normalized isotropic Gaussian density with standard deviation `sigma`.
pub fn ln_isotropic_gaussian(x: &[f64], sigma: f64) -> f64 {
    let d = x.len() as f64;
    ln_isotropic_envelope(x, 1.0, sigma) - 0.5 * d * (2.0 * PI * sigma * sigma).ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_matches_univariate_formula() {
        let g = Gaussian::univariate(1.0, 2.0).unwrap();
        let x: f64 = 0.3;
        let want = (-(x - 1.0).powi(2) / 8.0).exp() / (2.0 * (2.0 * PI).sqrt());
        assert!((g.density(&[x]) - want).abs() < 1e-15);
    }

    #[test]
    fn correlated_gaussian_matches_explicit_inverse() {
        let cov = DMatrix::from_row_slice(2, 2, &[2.0, 0.6, 0.6, 1.0]);
        let g = Gaussian::new(DVector::from_vec(vec![0.5, -1.0]), cov.clone()).unwrap();
        let x = DVector::from_vec(vec![1.0, 0.2]);
        let r = &x - g.mean();
        let q = (r.transpose() * cov.clone().try_inverse().unwrap() * &r)[0];
        let want = -0.5 * q - LN_2PI - 0.5 * cov.determinant().ln();
        assert!((g.ln_density(x.as_slice()) - want).abs() < 1e-13);
    }

    #[test]
    fn rejects_indefinite_covariance() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(Gaussian::new(DVector::zeros(2), cov), Err(Error::Spectral { .. })));
    }

    #[test]
    fn mixture_is_weighted_sum() {
        let a = Gaussian::univariate(-1.0, 0.5).unwrap();
        let b = Gaussian::univariate(2.0, 1.5).unwrap();
        let m = GaussianMixture::new(vec![1.0, 3.0], vec![a.clone(), b.clone()]).unwrap();
        for x in [-3.0, -1.0, 0.0, 1.7, 5.0] {
            let want = 0.25 * a.density(&[x]) + 0.75 * b.density(&[x]);
            assert!((m.density(&[x]) - want).abs() < 1e-15 * want.max(1.0));
        }
    }

    #[test]
    fn uniform_is_zero_outside() {
        let u = UniformBox::interval(-1.0, 1.0).unwrap();
        assert_eq!(u.density(&[0.2]), 0.5);
        assert_eq!(u.density(&[1.5]), 0.0);
    }

    #[test]
    fn gaussian_box_holds_requested_mass() {
        let g = Gaussian::univariate(0.0, 1.0).unwrap();
        let b = g.support_box(1e-3).unwrap();
        let mass = normal_cdf(b.hi[0]) - normal_cdf(b.lo[0]);
        assert!((mass - (1.0 - 1e-3)).abs() < 1e-12);
    }
}
