//! Cell-centered grid interpolants on `[-R, R]^d`, the switch budget, and the
//! `(R, h)` truncation search.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density::{BoxDomain, Density};
use crate::error::{Error, Result};
use crate::quadrature::{integrate_box, monte_carlo};

/// Refuses to allocate grids larger than this many cells.
pub const MAX_GRID_CELLS: usize = 1 << 26;

/// Piecewise-constant interpolant on `[-R, R]^d`.
///
/// Cells have spacing `h`; when `h` does not divide `2R` the last cell on
/// each axis is clipped at `R`. Values are stored row-major (last axis fastest).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridDensity {
    #[serde(rename = "R")]
    pub r: f64,
    pub h: f64,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// `ceil(2R / h)`, forgiving a few ulps of rounding in the ratio.
pub fn cells_per_axis(r: f64, h: f64) -> u64 {
    let q = 2.0 * r / h;
    let n = q.round();
    if (q - n).abs() <= 1e-9 * n.max(1.0) {
        n.max(1.0) as u64
    } else {
        q.ceil() as u64
    }
}

impl GridDensity {
    pub fn dim(&self) -> usize {
        self.shape.len()
    }

    /// Edges of the cells along one axis.
    pub fn edges(&self) -> Vec<f64> {
        let n = self.shape[0];
        (0..=n).map(|k| (-self.r + k as f64 * self.h).min(self.r)).collect()
    }

    fn axis_index(&self, v: f64) -> Option<usize> {
        if !(v >= -self.r && v <= self.r) {
            return None;
        }
        let k = ((v + self.r) / self.h).floor() as usize;
        Some(k.min(self.shape[0] - 1))
    }

    /// Interpolant value; zero outside the hypercube.
    pub fn value(&self, x: &[f64]) -> f64 {
        let mut flat = 0;
        for v in x {
            match self.axis_index(*v) {
                Some(k) => flat = flat * self.shape[0] + k,
                None => return 0.0,
            }
        }
        self.values[flat]
    }

    pub fn domain(&self) -> BoxDomain {
        BoxDomain::cube(self.r, self.dim())
    }

    /// `int_{[-R,R]^d} |rho^h - rho|`, by quadrature split at cell edges in
    /// d <= 2 and by Monte Carlo above.
    pub fn l1_gap(&self, rho: &dyn Density, seed: u64) -> Result<f64> {
        let f = |x: &[f64]| (self.value(x) - rho.density(x)).abs();
        let dom = self.domain();
        if self.dim() <= 2 {
            let mut edges = self.edges();
            if self.dim() == 1 {
                edges.extend(rho.breakpoints());
            }
            let breaks = vec![edges; self.dim()];
            integrate_box(f, &dom, 1, &breaks)
        } else {
            Ok(monte_carlo(f, &dom, 1 << 18, seed).value)
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

impl Density for GridDensity {
    fn dim(&self) -> usize {
        self.shape.len()
    }
    fn ln_density(&self, x: &[f64]) -> f64 {
        self.value(x).ln()
    }
    fn density(&self, x: &[f64]) -> f64 {
        self.value(x)
    }
    fn support_box(&self, _tail: f64) -> Option<BoxDomain> {
        Some(self.domain())
    }
    fn breakpoints(&self) -> Vec<f64> {
        self.edges()
    }
}

/// Samples `rho` at the centers of the (possibly clipped) cells of the grid
/// with spacing `h` on `[-R, R]^d`.
pub fn build_grid_interpolant(rho: &dyn Density, r: f64, h: f64) -> Result<GridDensity> {
    if !(r > 0.0 && h > 0.0 && h <= 2.0 * r) {
        return Err(Error::Invalid(format!("need R > 0 and 0 < h <= 2R, got R={r}, h={h}")));
    }
    let d = rho.dim();
    let n = cells_per_axis(r, h) as usize;
    let total = (n as u128).pow(d as u32);
    if total > MAX_GRID_CELLS as u128 {
        return Err(Error::Invalid(format!("grid with {n}^{d} cells is too large")));
    }
    let centers: Vec<f64> = (0..n)
        .map(|k| {
            let lo = -r + k as f64 * h;
            let hi = (lo + h).min(r);
            0.5 * (lo + hi)
        })
        .collect();
    let values: Vec<Result<f64>> = (0..total as usize)
        .into_par_iter()
        .map(|flat| {
            let mut x = vec![0.0; d];
            let mut rem = flat;
            for k in (0..d).rev() {
                x[k] = centers[rem % n];
                rem /= n;
            }
            let v = rho.density(&x);
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::Evaluation { point: x, value: v })
            }
        })
        .collect();
    let values = values.into_iter().collect::<Result<Vec<f64>>>()?;
    Ok(GridDensity { r, h, shape: vec![n; d], values })
}

/// `ceil(2R/h)^d (d + 10) + 2d`, the switch count bound for a grid resolution.
pub fn switch_budget(r: f64, h: f64, d: usize) -> Result<usize> {
    if !(r > 0.0 && h > 0.0) || d == 0 {
        return Err(Error::Invalid(format!("need R, h > 0 and d >= 1, got R={r}, h={h}, d={d}")));
    }
    let n = cells_per_axis(r, h);
    let overflow = || Error::BudgetOverflow { cells_per_axis: n, d };
    let cells = u32::try_from(d).ok().and_then(|e| n.checked_pow(e)).ok_or_else(overflow)?;
    let cells = usize::try_from(cells).map_err(|_| overflow())?;
    cells
        .checked_mul(d + 10)
        .and_then(|v| v.checked_add(2 * d))
        .ok_or_else(overflow)
}

/// Caps for [`select_truncation`].
#[derive(Debug, Clone, Copy)]
pub struct TruncationOptions {
    pub max_doublings: usize,
    pub max_halvings: usize,
    /// Stop refining once a grid would exceed this many cells.
    pub max_cells: usize,
    /// Seed for the Monte Carlo checks used when d >= 3.
    pub seed: u64,
}

impl Default for TruncationOptions {
    fn default() -> Self {
        Self { max_doublings: 40, max_halvings: 40, max_cells: 1 << 22, seed: 0 }
    }
}

pub(crate) fn box_mass(rho: &dyn Density, r: f64, seed: u64) -> Result<f64> {
    let d = rho.dim();
    let dom = BoxDomain::cube(r, d);
    if d <= 2 {
        let cells = if d == 1 { 256 } else { 48 };
        let breaks = if d == 1 { vec![rho.breakpoints()] } else { Vec::new() };
        integrate_box(|x| rho.density(x), &dom, cells, &breaks)
    } else {
        Ok(monte_carlo(|x| rho.density(x), &dom, 1 << 18, seed).value)
    }
}

/// Finds `(R, h)` with `int_{[-R,R]^d} rho > 1 - eps` for both densities and
/// interpolation L1 gaps below `eps` for both.
///
/// `R` runs over `1, 2, 4, ...` and `h` over `R, R/2, R/4, ...`.
pub fn select_truncation(
    rho_b: &dyn Density,
    rho_t: &dyn Density,
    eps: f64,
    opts: TruncationOptions,
) -> Result<(f64, f64)> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::Invalid(format!("need 0 < eps < 1, got {eps}")));
    }
    if rho_b.dim() != rho_t.dim() {
        return Err(Error::Dimension { expected: rho_b.dim(), got: rho_t.dim() });
    }
    let d = rho_b.dim();
    let mut r = 1.0;
    let mut found = false;
    for _ in 0..=opts.max_doublings {
        let mb = box_mass(rho_b, r, opts.seed)?;
        let mt = box_mass(rho_t, r, opts.seed)?;
        if mb > 1.0 - eps && mt > 1.0 - eps {
            found = true;
            break;
        }
        r *= 2.0;
    }
    if !found {
        return Err(Error::SearchExhausted { best_r: r / 2.0, best_h: r / 2.0 });
    }
    let mut h = r;
    let mut best_h = h;
    for _ in 0..=opts.max_halvings {
        let n = cells_per_axis(r, h) as f64;
        if n.powi(d as i32) > opts.max_cells as f64 {
            break;
        }
        best_h = h;
        let gb = build_grid_interpolant(rho_b, r, h)?.l1_gap(rho_b, opts.seed)?;
        let gt = build_grid_interpolant(rho_t, r, h)?.l1_gap(rho_t, opts.seed)?;
        if gb < eps && gt < eps {
            return Ok((r, h));
        }
        h *= 0.5;
    }
    Err(Error::SearchExhausted { best_r: r, best_h })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::{FnDensity, Gaussian};

    #[test]
    fn budget_examples() {
        assert_eq!(switch_budget(1.0, 2.0, 1).unwrap(), 13);
        assert_eq!(switch_budget(4.0, 0.5, 2).unwrap(), 3076);
        assert_eq!(switch_budget(4.0, 0.5, 1).unwrap(), 178);
        assert!(matches!(switch_budget(1e6, 1e-6, 8), Err(Error::BudgetOverflow { .. })));
    }

    #[test]
    fn constant_density_two_cells() {
        let c = FnDensity::new(1, |_| 0.3f64.ln());
        let g = build_grid_interpolant(&c, 1.0, 1.0).unwrap();
        assert_eq!(g.shape, vec![2]);
        assert!(g.values.iter().all(|v| (v - 0.3).abs() < 1e-15));
    }

    #[test]
    fn last_cell_is_clipped() {
        let g = build_grid_interpolant(&Gaussian::standard(1), 1.0, 0.75).unwrap();
        assert_eq!(g.shape, vec![3]);
        assert_eq!(*g.edges().last().unwrap(), 1.0);
        // clipped cell [0.5, 1] has center 0.75
        let want = Gaussian::standard(1).density(&[0.75]);
        assert!((g.values[2] - want).abs() < 1e-15);
    }

    #[test]
    fn non_finite_value_reports_point() {
        let bad = FnDensity::new(1, |x| if x[0] > 0.0 { f64::INFINITY } else { 0.0 });
        match build_grid_interpolant(&bad, 1.0, 1.0) {
            Err(Error::Evaluation { point, .. }) => assert_eq!(point, vec![0.5]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn json_layout() {
        let g = build_grid_interpolant(&Gaussian::standard(2), 1.0, 1.0).unwrap();
        let v: serde_json::Value = serde_json::from_str(&g.to_json().unwrap()).unwrap();
        assert_eq!(v["R"], 1.0);
        assert_eq!(v["shape"], serde_json::json!([2, 2]));
        assert_eq!(v["values"].as_array().unwrap().len(), 4);
    }
}
