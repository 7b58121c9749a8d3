//! Half-space polyhedra: membership, affine substitution, emptiness and
//! exact 2D clipping.

use minilp::{ComparisonOp, OptimizationDirection, Problem};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// `<normal, x> + offset > 0` when `strict`, else `<normal, x> + offset <= 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HalfSpace {
    pub normal: Vec<f64>,
    pub offset: f64,
    pub strict: bool,
}

impl HalfSpace {
    /// The active side `a.x + b > 0`.
    pub fn active(a: &[f64], b: f64) -> Self {
        Self { normal: a.to_vec(), offset: b, strict: true }
    }

    /// The inactive side `a.x + b <= 0`.
    pub fn inactive(a: &[f64], b: f64) -> Self {
        Self { normal: a.to_vec(), offset: b, strict: false }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.normal.iter().zip(x).map(|(n, x)| n * x).sum::<f64>() + self.offset
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        let v = self.value(x);
        if self.strict {
            v > 0.0
        } else {
            v <= 0.0
        }
    }

    /// Signed slack, positive inside, normalized by the normal's length.
    pub fn margin(&self, x: &[f64]) -> f64 {
        let n = self.norm();
        let v = self.value(x) / if n > 0.0 { n } else { 1.0 };
        if self.strict {
            v
        } else {
            -v
        }
    }

    fn norm(&self) -> f64 {
        self.normal.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// The half-space pulled back through `x = m y + s`.
    pub fn substitute(&self, m: &DMatrix<f64>, s: &DVector<f64>) -> Self {
        let g = DVector::from_column_slice(&self.normal);
        let normal = (m.transpose() * &g).as_slice().to_vec();
        Self { normal, offset: g.dot(s) + self.offset, strict: self.strict }
    }
}

/// Intersection of half-spaces; the empty list is all of `R^d`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Polyhedron {
    pub halfspaces: Vec<HalfSpace>,
}

/// Closed-interval view of a 1D polyhedron, ignoring endpoint strictness.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Polyhedron {
    pub fn full() -> Self {
        Self::default()
    }

    pub fn with(&self, h: HalfSpace) -> Self {
        let mut halfspaces = self.halfspaces.clone();
        halfspaces.push(h);
        Self { halfspaces }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.halfspaces.iter().all(|h| h.contains(x))
    }

    /// Smallest normalized slack over the constraints (`inf` for `R^d`).
    pub fn margin(&self, x: &[f64]) -> f64 {
        self.halfspaces.iter().map(|h| h.margin(x)).fold(f64::INFINITY, f64::min)
    }

    pub fn substitute(&self, m: &DMatrix<f64>, s: &DVector<f64>) -> Self {
        Self { halfspaces: self.halfspaces.iter().map(|h| h.substitute(m, s)).collect() }
    }

    /// Exact 1D emptiness test; `None` when the set is empty.
    pub fn interval_1d(&self) -> Option<Interval> {
        let (mut lo, mut lo_open) = (f64::NEG_INFINITY, true);
        let (mut hi, mut hi_open) = (f64::INFINITY, true);
        for h in &self.halfspaces {
            let (n, c) = (h.normal[0], h.offset);
            if n == 0.0 {
                if !h.contains(&[0.0]) {
                    return None;
                }
                continue;
            }
            let root = -c / n;
            // n x + c > 0 is x > root when n > 0 and x < root when n < 0
            let lower = (n > 0.0) == h.strict;
            let open = h.strict;
            if lower {
                if root > lo || (root == lo && open) {
                    lo = root;
                    lo_open = open;
                }
            } else if root < hi || (root == hi && open) {
                hi = root;
                hi_open = open;
            }
        }
        if lo < hi || (lo == hi && !lo_open && !hi_open) {
            Some(Interval { lo, hi })
        } else {
            None
        }
    }

    /// A point of the polyhedron with the largest normalized slack on its
    /// strict constraints, found by linear programming; `None` if empty.
    pub fn witness(&self, d: usize) -> Option<Vec<f64>> {
        let mut problem = Problem::new(OptimizationDirection::Maximize);
        let vars: Vec<_> = (0..d).map(|_| problem.add_var(0.0, (f64::NEG_INFINITY, f64::INFINITY))).collect();
        let t = problem.add_var(1.0, (f64::NEG_INFINITY, 1.0));
        let mut any_strict = false;
        for h in &self.halfspaces {
            let n = h.norm();
            if n == 0.0 {
                if !h.contains(&vec![0.0; d]) {
                    return None;
                }
                continue;
            }
            let sign = if h.strict { 1.0 } else { -1.0 };
            let mut terms: Vec<_> =
                vars.iter().zip(&h.normal).map(|(v, g)| (*v, sign * g / n)).collect();
            if h.strict {
                any_strict = true;
                terms.push((t, -1.0));
                problem.add_constraint(terms.as_slice(), ComparisonOp::Ge, -sign * h.offset / n);
            } else {
                problem.add_constraint(terms.as_slice(), ComparisonOp::Ge, -sign * h.offset / n - 1e-12);
            }
        }
        let solution = problem.solve().ok()?;
        if any_strict && solution.objective() <= 1e-12 {
            return None;
        }
        Some(vars.iter().map(|v| *solution.var_value(*v)).collect())
    }

    /// The 2D polygon `self ∩ [-bound, bound]^2`, counter-clockwise.
    pub fn polygon_2d(&self, bound: f64) -> Vec<[f64; 2]> {
        let mut poly = vec![[-bound, -bound], [bound, -bound], [bound, bound], [-bound, bound]];
        for h in &self.halfspaces {
            poly = clip(&poly, h);
            if poly.is_empty() {
                break;
            }
        }
        poly
    }
}

/// Sutherland-Hodgman clip keeping the closure of the half-space.
fn clip(poly: &[[f64; 2]], h: &HalfSpace) -> Vec<[f64; 2]> {
    let inside = |p: &[f64; 2]| {
        let v = h.value(p);
        if h.strict {
            v >= 0.0
        } else {
            v <= 0.0
        }
    };
    let mut out = Vec::with_capacity(poly.len() + 1);
    for i in 0..poly.len() {
        let cur = poly[i];
        let prev = poly[(i + poly.len() - 1) % poly.len()];
        let (ci, pi) = (inside(&cur), inside(&prev));
        if ci != pi {
            let (vp, vc) = (h.value(&prev), h.value(&cur));
            let t = vp / (vp - vc);
            out.push([prev[0] + t * (cur[0] - prev[0]), prev[1] + t * (cur[1] - prev[1])]);
        }
        if ci {
            out.push(cur);
        }
    }
    out
}

/// Standard bivariate normal mass of a convex polygon.
pub fn std_normal_polygon_mass(poly: &[[f64; 2]]) -> f64 {
    use crate::density::normal_cdf;
    use crate::quadrature::{gauss_legendre, GL_ORDER};
    if poly.len() < 3 {
        return 0.0;
    }
    let mut xs: Vec<f64> = poly.iter().map(|p| p[0]).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    // vertical extent of the polygon at abscissa x
    let extent = |x: f64| {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for i in 0..poly.len() {
            let (p, q) = (poly[i], poly[(i + 1) % poly.len()]);
            let (x0, x1) = (p[0].min(q[0]), p[0].max(q[0]));
            if x < x0 || x > x1 {
                continue;
            }
            if x1 - x0 < 1e-300 {
                lo = lo.min(p[1].min(q[1]));
                hi = hi.max(p[1].max(q[1]));
            } else {
                let y = p[1] + (q[1] - p[1]) * (x - p[0]) / (q[0] - p[0]);
                lo = lo.min(y);
                hi = hi.max(y);
            }
        }
        (lo, hi)
    };
    let (nodes, weights) = gauss_legendre(GL_ORDER);
    let phi = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let mut total = 0.0;
    for w in xs.windows(2) {
        let pieces = ((w[1] - w[0]) / 0.25).ceil().max(1.0) as usize;
        for k in 0..pieces {
            let a = w[0] + (w[1] - w[0]) * k as f64 / pieces as f64;
            let b = w[0] + (w[1] - w[0]) * (k + 1) as f64 / pieces as f64;
            let (half, mid) = (0.5 * (b - a), 0.5 * (a + b));
            for (n, wt) in nodes.iter().zip(&weights) {
                let x = mid + half * n;
                let (lo, hi) = extent(x);
                if hi > lo {
                    total += wt * half * phi(x) * (normal_cdf(hi) - normal_cdf(lo));
                }
            }
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interval_respects_strictness() {
        let p = Polyhedron::full()
            .with(HalfSpace::active(&[1.0], 0.0))
            .with(HalfSpace::inactive(&[1.0], 0.0));
        assert!(p.interval_1d().is_none());
        let p = Polyhedron::full()
            .with(HalfSpace::inactive(&[1.0], 0.0))
            .with(HalfSpace::inactive(&[-1.0], 0.0));
        assert_eq!(p.interval_1d(), Some(Interval { lo: 0.0, hi: 0.0 }));
        let p = Polyhedron::full()
            .with(HalfSpace::active(&[2.0], -1.0))
            .with(HalfSpace::active(&[-1.0], 3.0));
        assert_eq!(p.interval_1d(), Some(Interval { lo: 0.5, hi: 3.0 }));
    }

    #[test]
    fn lp_witness_detects_empty_wedge() {
        let open = Polyhedron::full()
            .with(HalfSpace::active(&[1.0, 0.0], 0.0))
            .with(HalfSpace::active(&[0.0, 1.0], 0.0));
        let w = open.witness(2).unwrap();
        assert!(open.contains(&w));
        let empty = open.with(HalfSpace::active(&[-1.0, -1.0], 0.0));
        assert!(empty.witness(2).is_none());
    }

    #[test]
    fn substitution_matches_direct_evaluation() {
        let h = HalfSpace::active(&[1.0, -2.0], 0.5);
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 3.0]);
        let s = DVector::from_vec(vec![0.1, -0.4]);
        let hs = h.substitute(&m, &s);
        let y = [0.7, -0.2];
        let x = &m * DVector::from_column_slice(&y) + &s;
        assert!((hs.value(&y) - h.value(x.as_slice())).abs() < 1e-14);
    }

    #[test]
    fn half_plane_mass_is_one_half() {
        let p = Polyhedron::full().with(HalfSpace::active(&[1.0, 1.0], 0.0));
        let m = std_normal_polygon_mass(&p.polygon_2d(12.0));
        assert!((m - 0.5).abs() < 1e-12);
    }

    #[test]
    fn quadrant_mass_matches_product_of_cdfs() {
        let p = Polyhedron::full()
            .with(HalfSpace::inactive(&[1.0, 0.0], -0.3))
            .with(HalfSpace::active(&[0.0, 1.0], 1.1));
        let m = std_normal_polygon_mass(&p.polygon_2d(12.0));
        let want = crate::density::normal_cdf(0.3) * (1.0 - crate::density::normal_cdf(-1.1));
        assert!((m - want).abs() < 1e-12);
    }
}
