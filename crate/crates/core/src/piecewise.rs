//! Densities that are a scaled Gaussian `alpha * rho_B(A x + beta)` on each
//! cell of a polyhedral partition.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::density::{normal_cdf, BoxDomain, Density, Gaussian};
use crate::error::{Error, Result};
use crate::polyhedron::{std_normal_polygon_mass, Interval, Polyhedron};
use crate::quadrature::{monte_carlo, Estimate};

/// `alpha * rho_B(A x + beta)` restricted to `region`.
///
/// The amplitude is stored as `ln_alpha` so long schedules cannot underflow it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPiece {
    pub ln_alpha: f64,
    pub a: DMatrix<f64>,
    pub beta: DVector<f64>,
    pub region: Polyhedron,
    /// A point of `region`, kept so splits only need one emptiness test.
    #[serde(skip)]
    pub witness: Option<Vec<f64>>,
}

impl GaussianPiece {
    pub fn alpha(&self) -> f64 {
        self.ln_alpha.exp()
    }

    /// `A x + beta`.
    pub fn argument(&self, x: &[f64]) -> DVector<f64> {
        &self.a * DVector::from_column_slice(x) + &self.beta
    }

    /// Mean and covariance of the Gaussian this piece is proportional to:
    /// `A^{-1}(m_B - beta)` and `A^{-1} Sigma_B A^{-T}`.
    pub fn moments(&self, base: &Gaussian) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let inv = self
            .a
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Invalid("piece matrix is singular".into()))?;
        let mean = &inv * (base.mean() - &self.beta);
        let cov = &inv * base.cov() * inv.transpose();
        Ok((mean, (&cov + cov.transpose()) * 0.5))
    }

    /// `Sigma_i = A^{-1} Sigma_B A^{-T}`.
    pub fn covariance(&self, base: &Gaussian) -> Result<DMatrix<f64>> {
        Ok(self.moments(base)?.1)
    }
}

/// A density made of [`GaussianPiece`]s whose regions partition `R^d`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PiecewiseGaussianDensity {
    #[serde(with = "base_serde")]
    base: Gaussian,
    pieces: Vec<GaussianPiece>,
    /// 1D only: piece intervals sorted by position.
    #[serde(skip)]
    intervals: Vec<(Interval, usize)>,
}

mod base_serde {
    use super::*;
    use serde::{Deserializer, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Base {
        mean: DVector<f64>,
        cov: DMatrix<f64>,
    }

    pub fn serialize<S: Serializer>(g: &Gaussian, s: S) -> std::result::Result<S::Ok, S::Error> {
        Base { mean: g.mean().clone(), cov: g.cov().clone() }.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Gaussian, D::Error> {
        let b = Base::deserialize(d)?;
        Gaussian::new(b.mean, b.cov).map_err(serde::de::Error::custom)
    }
}

impl PiecewiseGaussianDensity {
    /// The base density as a single piece covering `R^d`.
    pub fn from_base(base: Gaussian) -> Self {
        let d = base.dim();
        let piece = GaussianPiece {
            ln_alpha: 0.0,
            a: DMatrix::identity(d, d),
            beta: DVector::zeros(d),
            region: Polyhedron::full(),
            witness: Some(base.mean().as_slice().to_vec()),
        };
        Self::from_pieces(base, vec![piece])
    }

    pub fn from_pieces(base: Gaussian, mut pieces: Vec<GaussianPiece>) -> Self {
        let mut intervals = Vec::new();
        if base.dim() == 1 {
            intervals = pieces
                .iter()
                .enumerate()
                .filter_map(|(i, p)| p.region.interval_1d().map(|iv| (iv, i)))
                .collect();
            intervals.sort_by(|a, b| a.0.lo.total_cmp(&b.0.lo).then(a.0.hi.total_cmp(&b.0.hi)));
            let order: Vec<usize> = intervals.iter().map(|(_, i)| *i).collect();
            let mut sorted: Vec<GaussianPiece> = Vec::with_capacity(order.len());
            for i in &order {
                sorted.push(pieces[*i].clone());
            }
            pieces = sorted;
            for (k, iv) in intervals.iter_mut().enumerate() {
                iv.1 = k;
            }
        }
        Self { base, pieces, intervals }
    }

    pub fn base(&self) -> &Gaussian {
        &self.base
    }

    pub fn pieces(&self) -> &[GaussianPiece] {
        &self.pieces
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    /// Index of the piece whose region contains `x`.
    pub fn locate(&self, x: &[f64]) -> Option<usize> {
        if self.base.dim() == 1 && !self.intervals.is_empty() {
            let v = x[0];
            let start = self.intervals.partition_point(|(iv, _)| iv.hi < v);
            return self.intervals[start..]
                .iter()
                .take_while(|(iv, _)| iv.lo <= v)
                .map(|(_, i)| *i)
                .find(|i| self.pieces[*i].region.contains(x));
        }
        self.pieces.iter().position(|p| p.region.contains(x))
    }

    /// Number of regions containing each point; a partition gives all ones.
    pub fn containment_counts(&self, points: &[Vec<f64>]) -> Vec<usize> {
        points
            .iter()
            .map(|x| self.pieces.iter().filter(|p| p.region.contains(x)).count())
            .collect()
    }

    /// Covariances `Sigma_i` of every piece.
    pub fn covariances(&self) -> Result<Vec<DMatrix<f64>>> {
        self.pieces.iter().map(|p| p.covariance(&self.base)).collect()
    }

    /// Exact mass in 1D, polygon quadrature in 2D.
    pub fn mass(&self) -> Result<f64> {
        let mut total = 0.0;
        for p in &self.pieces {
            total += self.piece_mass(p)?;
        }
        Ok(total)
    }

    fn piece_mass(&self, p: &GaussianPiece) -> Result<f64> {
        let det = p.a.determinant().abs();
        let (mean, cov) = p.moments(&self.base)?;
        let scale = p.alpha() / det;
        match self.base.dim() {
            1 => {
                let Some(iv) = p.region.interval_1d() else { return Ok(0.0) };
                let s = cov[(0, 0)].sqrt();
                let (zl, zh) = ((iv.lo - mean[0]) / s, (iv.hi - mean[0]) / s);
                // difference of upper tails is accurate on the right side
                let m = if zl > 0.0 {
                    normal_cdf(-zl) - normal_cdf(-zh)
                } else {
                    normal_cdf(zh) - normal_cdf(zl)
                };
                Ok(scale * m)
            }
            2 => {
                let g = Gaussian::new(mean.clone(), cov)?;
                let l = g.chol_l().clone();
                // region in whitened coordinates z, with x = L z + mean
                let white = p.region.substitute(&l, &mean);
                Ok(scale * std_normal_polygon_mass(&white.polygon_2d(40.0)))
            }
            d => Err(Error::UnsupportedDimension { d, reason: "use mass_monte_carlo".into() }),
        }
    }

    /// Monte Carlo mass over a box, for any dimension.
    pub fn mass_monte_carlo(&self, domain: &BoxDomain, samples: usize, seed: u64) -> Estimate {
        monte_carlo(|x| self.density(x), domain, samples, seed)
    }
}

impl Density for PiecewiseGaussianDensity {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn ln_density(&self, x: &[f64]) -> f64 {
        match self.locate(x) {
            Some(i) => {
                let p = &self.pieces[i];
                p.ln_alpha + self.base.ln_density(p.argument(x).as_slice())
            }
            None => f64::NEG_INFINITY,
        }
    }

    fn support_box(&self, tail: f64) -> Option<BoxDomain> {
        let mut out: Option<BoxDomain> = None;
        for p in &self.pieces {
            let (mean, cov) = p.moments(&self.base).ok()?;
            let mut b = Gaussian::new(mean, cov).ok()?.support_box(tail)?;
            if let Some(iv) = (self.dim() == 1).then(|| p.region.interval_1d()).flatten() {
                b.lo[0] = b.lo[0].max(iv.lo);
                b.hi[0] = b.hi[0].min(iv.hi);
                if b.lo[0] > b.hi[0] {
                    continue;
                }
            }
            out = Some(match out {
                Some(o) => o.union(&b),
                None => b,
            });
        }
        out
    }

    fn breakpoints(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self
            .intervals
            .iter()
            .flat_map(|(iv, _)| [iv.lo, iv.hi])
            .filter(|v| v.is_finite())
            .collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polyhedron::HalfSpace;

    #[test]
    fn base_piece_reproduces_base() {
        let g = Gaussian::univariate(0.5, 1.3).unwrap();
        let p = PiecewiseGaussianDensity::from_base(g.clone());
        for x in [-2.0, 0.0, 3.0] {
            assert!((p.ln_density(&[x]) - g.ln_density(&[x])).abs() < 1e-14);
        }
        assert!((p.mass().unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn half_line_pieces_split_mass() {
        let g = Gaussian::standard(1);
        let mk = |h: HalfSpace| GaussianPiece {
            ln_alpha: 0.0,
            a: DMatrix::identity(1, 1),
            beta: DVector::zeros(1),
            region: Polyhedron::full().with(h),
            witness: None,
        };
        let p = PiecewiseGaussianDensity::from_pieces(
            g,
            vec![mk(HalfSpace::active(&[1.0], -1.0)), mk(HalfSpace::inactive(&[1.0], -1.0))],
        );
        assert!((p.mass().unwrap() - 1.0).abs() < 1e-14);
        assert_eq!(p.locate(&[1.0]), Some(0));
        assert_eq!(p.breakpoints(), vec![1.0]);
    }

    #[test]
    fn covariance_of_scaled_piece() {
        let g = Gaussian::standard(2);
        let piece = GaussianPiece {
            ln_alpha: 0.0,
            a: DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 1.0])),
            beta: DVector::zeros(2),
            region: Polyhedron::full(),
            witness: None,
        };
        let c = piece.covariance(&g).unwrap();
        assert!((c[(0, 0)] - 0.25).abs() < 1e-15 && (c[(1, 1)] - 1.0).abs() < 1e-15);
    }
}
