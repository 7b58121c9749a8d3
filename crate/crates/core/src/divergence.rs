//! Divergence estimators and the Pinsker / reverse-Pinsker certificates.
//!
//! Total variation uses the unnormalized convention `TV = int |p - q|`, which
//! ranges over `[0, 2]` and equals the L1 distance between the densities.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::density::{BoxDomain, Density};
use crate::error::{Error, Result};
use crate::quadrature::{halton_in, integrate_with_error, monte_carlo, Estimate};

/// Default Monte Carlo sample count.
pub const DEFAULT_MC_SAMPLES: usize = 1 << 16;

/// Tail mass left outside the default integration box.
pub const DEFAULT_TAIL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodKind {
    Quadrature,
    MonteCarlo,
}

/// How an integral is computed. Monte Carlo always carries its seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Method {
    /// Composite Gauss-Legendre with `cells` cells per axis (error bar from
    /// doubling them).
    Quadrature { cells: usize },
    MonteCarlo { samples: usize, seed: u64 },
}

impl Default for Method {
    fn default() -> Self {
        Method::Quadrature { cells: 200 }
    }
}

impl Method {
    pub fn kind(&self) -> MethodKind {
        match self {
            Method::Quadrature { .. } => MethodKind::Quadrature,
            Method::MonteCarlo { .. } => MethodKind::MonteCarlo,
        }
    }

    pub fn seed(&self) -> Option<u64> {
        match self {
            Method::MonteCarlo { seed, .. } => Some(*seed),
            Method::Quadrature { .. } => None,
        }
    }
}

/// Estimator settings: method plus an optional explicit integration box.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Estimator {
    pub method: Method,
    pub domain: Option<BoxDomain>,
}

impl Estimator {
    pub fn quadrature(cells: usize) -> Self {
        Self { method: Method::Quadrature { cells }, domain: None }
    }

    pub fn monte_carlo(samples: usize, seed: u64) -> Self {
        Self { method: Method::MonteCarlo { samples, seed }, domain: None }
    }

    pub fn with_domain(mut self, domain: BoxDomain) -> Self {
        self.domain = Some(domain);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DivergenceEstimate {
    pub value: f64,
    pub method: MethodKind,
    pub error_bar: f64,
    pub seed: Option<u64>,
}

/// Union of both densities' high-mass boxes.
pub fn default_domain(p: &dyn Density, q: &dyn Density) -> Result<BoxDomain> {
    match (p.support_box(DEFAULT_TAIL), q.support_box(DEFAULT_TAIL)) {
        (Some(a), Some(b)) => Ok(a.union(&b)),
        (Some(a), None) | (None, Some(a)) => Ok(a),
        (None, None) => Err(Error::Invalid("an integration domain is required".into())),
    }
}

fn check_dims(p: &dyn Density, q: &dyn Density) -> Result<usize> {
    if p.dim() != q.dim() {
        return Err(Error::Dimension { expected: p.dim(), got: q.dim() });
    }
    Ok(p.dim())
}

fn breaks_for(p: &dyn Density, q: &dyn Density) -> Vec<Vec<f64>> {
    if p.dim() == 1 {
        let mut b = p.breakpoints();
        b.extend(q.breakpoints());
        vec![b]
    } else {
        Vec::new()
    }
}

/// Integrates `g(ln p, ln q)` under the estimator's method.
fn integrate_pair<G>(p: &dyn Density, q: &dyn Density, est: &Estimator, domain: &BoxDomain, g: G) -> Result<Estimate>
where
    G: Fn(f64, f64) -> f64 + Sync,
{
    let f = |x: &[f64]| g(p.ln_density(x), q.ln_density(x));
    match est.method {
        Method::Quadrature { cells } => integrate_with_error(f, domain, cells, &breaks_for(p, q)),
        Method::MonteCarlo { samples, seed } => Ok(monte_carlo(f, domain, samples, seed)),
    }
}

fn estimate(e: Estimate, est: &Estimator) -> DivergenceEstimate {
    DivergenceEstimate { value: e.value, method: est.method.kind(), error_bar: e.error, seed: est.method.seed() }
}

/// A point where `p > 0` but `q = 0`, if the scan finds one.
fn continuity_witness(p: &dyn Density, q: &dyn Density, domain: &BoxDomain) -> Option<Vec<f64>> {
    halton_in(domain, 1 << 14)
        .into_iter()
        .find(|x| p.ln_density(x) > f64::NEG_INFINITY && q.ln_density(x) == f64::NEG_INFINITY)
}

/// `D_f(p, q) = int f(p/q) q`.
pub fn f_divergence<F>(f: F, p: &dyn Density, q: &dyn Density, est: &Estimator) -> Result<DivergenceEstimate>
where
    F: Fn(f64) -> f64 + Sync,
{
    check_dims(p, q)?;
    let domain = match &est.domain {
        Some(d) => d.clone(),
        None => default_domain(p, q)?,
    };
    let e = integrate_pair(p, q, est, &domain, |lp, lq| {
        if lq == f64::NEG_INFINITY {
            if lp == f64::NEG_INFINITY {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            lq.exp() * f((lp - lq).exp())
        }
    })?;
    if !e.value.is_finite() {
        let point = continuity_witness(p, q, &domain).unwrap_or_default();
        return Err(Error::AbsoluteContinuity { point });
    }
    Ok(estimate(e, est))
}

/// `KL(p || q) = int p ln(p/q)`.
pub fn kl(p: &dyn Density, q: &dyn Density, est: &Estimator) -> Result<DivergenceEstimate> {
    check_dims(p, q)?;
    let domain = match &est.domain {
        Some(d) => d.clone(),
        None => default_domain(p, q)?,
    };
    let e = integrate_pair(p, q, est, &domain, |lp, lq| {
        if lp == f64::NEG_INFINITY {
            0.0
        } else if lq == f64::NEG_INFINITY {
            f64::INFINITY
        } else {
            lp.exp() * (lp - lq)
        }
    })?;
    if !e.value.is_finite() {
        let point = continuity_witness(p, q, &domain).unwrap_or_default();
        return Err(Error::AbsoluteContinuity { point });
    }
    Ok(estimate(e, est))
}

/// `int |p - q|` (range `[0, 2]`).
pub fn tv(p: &dyn Density, q: &dyn Density, est: &Estimator) -> Result<DivergenceEstimate> {
    check_dims(p, q)?;
    let domain = match &est.domain {
        Some(d) => d.clone(),
        None => default_domain(p, q)?,
    };
    let e = integrate_pair(p, q, est, &domain, |lp, lq| (lp.exp() - lq.exp()).abs())?;
    Ok(estimate(e, est))
}

/// `int (sqrt p - sqrt q)^2`.
pub fn hellinger_sq(p: &dyn Density, q: &dyn Density, est: &Estimator) -> Result<DivergenceEstimate> {
    check_dims(p, q)?;
    let domain = match &est.domain {
        Some(d) => d.clone(),
        None => default_domain(p, q)?,
    };
    let e = integrate_pair(p, q, est, &domain, |lp, lq| {
        let v = (0.5 * lp).exp() - (0.5 * lq).exp();
        v * v
    })?;
    Ok(estimate(e, est))
}

/// `(1/(lambda - 1)) ln int p^lambda q^{1 - lambda}`.
///
/// A value of `+inf` signals a divergent integral: for `lambda > 1` the
/// integral is recomputed on the box doubled about its center, and a relative
/// change above 10% is read as divergence.
pub fn renyi(lambda: f64, p: &dyn Density, q: &dyn Density, est: &Estimator) -> Result<DivergenceEstimate> {
    check_dims(p, q)?;
    if !(lambda > 0.0) || lambda == 1.0 || !lambda.is_finite() {
        return Err(Error::Invalid(format!("Renyi order must be positive and != 1, got {lambda}")));
    }
    let domain = match &est.domain {
        Some(d) => d.clone(),
        None => default_domain(p, q)?,
    };
    let g = |lp: f64, lq: f64| {
        if lp == f64::NEG_INFINITY {
            0.0
        } else if lq == f64::NEG_INFINITY {
            if lambda < 1.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            (lambda * lp + (1.0 - lambda) * lq).exp()
        }
    };
    let e = integrate_pair(p, q, est, &domain, g)?;
    let infinite = DivergenceEstimate {
        value: f64::INFINITY,
        method: est.method.kind(),
        error_bar: f64::INFINITY,
        seed: est.method.seed(),
    };
    if !e.value.is_finite() {
        return Ok(infinite);
    }
    if lambda > 1.0 {
        let wide = integrate_pair(p, q, est, &domain.scaled(2.0), g)?;
        if !wide.value.is_finite() || (wide.value - e.value).abs() > 0.1 * e.value.abs() {
            return Ok(infinite);
        }
    }
    let value = e.value.ln() / (lambda - 1.0);
    let error_bar = e.error / (e.value * (lambda - 1.0).abs());
    Ok(DivergenceEstimate { value, method: est.method.kind(), error_bar, seed: est.method.seed() })
}

/// Largest tested value of `p/q`; `+inf` when the ratio keeps growing along a ray.
///
/// Scans a dense grid of the box and then `2^d * 64` rays from its center,
/// doubling the radius from the box's half-width up to `2^15` times it.
pub fn sup_ratio(p: &dyn Density, q: &dyn Density, domain: Option<&BoxDomain>) -> Result<f64> {
    let d = check_dims(p, q)?;
    let domain = match domain {
        Some(b) => b.clone(),
        None => default_domain(p, q)?,
    };
    let ln_ratio = |x: &[f64]| {
        let (lp, lq) = (p.ln_density(x), q.ln_density(x));
        match (lp == f64::NEG_INFINITY, lq == f64::NEG_INFINITY) {
            (true, _) => f64::NEG_INFINITY,
            (false, true) => f64::INFINITY,
            _ => lp - lq,
        }
    };
    let grid: Vec<Vec<f64>> = match d {
        1 => (0..=4096)
            .map(|i| vec![domain.lo[0] + (domain.hi[0] - domain.lo[0]) * i as f64 / 4096.0])
            .collect(),
        2 => (0..257 * 257)
            .map(|k| {
                let (i, j) = (k / 257, k % 257);
                vec![
                    domain.lo[0] + (domain.hi[0] - domain.lo[0]) * i as f64 / 256.0,
                    domain.lo[1] + (domain.hi[1] - domain.lo[1]) * j as f64 / 256.0,
                ]
            })
            .collect(),
        _ => halton_in(&domain, 1 << 16),
    };
    let mut best = grid.iter().map(|x| ln_ratio(x)).fold(f64::NEG_INFINITY, f64::max);
    if best == f64::INFINITY {
        return Ok(f64::INFINITY);
    }
    let center: Vec<f64> = domain.lo.iter().zip(&domain.hi).map(|(l, h)| 0.5 * (l + h)).collect();
    let unit = domain.lo.iter().zip(&domain.hi).map(|(l, h)| 0.5 * (h - l)).fold(0.0, f64::max);
    for u in ray_directions(d, (1usize << d.min(20)) * 64) {
        let mut prev = f64::NEG_INFINITY;
        let mut rising = 0;
        for k in 0..=15 {
            let r = unit * f64::powi(2.0, k);
            let x: Vec<f64> = center.iter().zip(&u).map(|(c, u)| c + r * u).collect();
            let v = ln_ratio(&x);
            if v == f64::INFINITY {
                return Ok(f64::INFINITY);
            }
            if v.is_finite() {
                best = best.max(v);
            }
            if v > prev + 1e-9 * prev.abs().max(1.0) && v.is_finite() && prev.is_finite() {
                rising += 1;
                if rising >= 3 {
                    return Ok(f64::INFINITY);
                }
            } else {
                rising = 0;
            }
            prev = v;
        }
    }
    Ok(best.exp())
}

/// Deterministic unit directions: coordinate axes, diagonals, then a
/// low-discrepancy fill of the sphere.
pub fn ray_directions(d: usize, count: usize) -> Vec<Vec<f64>> {
    if d == 1 {
        return vec![vec![1.0], vec![-1.0]];
    }
    let mut dirs = Vec::with_capacity(count.max(4 * d));
    for k in 0..d {
        for s in [1.0, -1.0] {
            let mut e = vec![0.0; d];
            e[k] = s;
            dirs.push(e);
        }
    }
    if d <= 12 {
        let norm = (d as f64).sqrt();
        for mask in 0..(1usize << d) {
            dirs.push((0..d).map(|k| if mask >> k & 1 == 1 { -1.0 / norm } else { 1.0 / norm }).collect());
        }
    }
    if d == 2 {
        let n = count.saturating_sub(dirs.len()).max(1);
        for i in 0..n {
            let a = std::f64::consts::TAU * (i as f64 + 0.5) / n as f64;
            dirs.push(vec![a.cos(), a.sin()]);
        }
    } else {
        let cube = BoxDomain::new(vec![1e-9; d], vec![1.0 - 1e-9; d]);
        for u in halton_in(&cube, count.saturating_sub(dirs.len()).max(1)) {
            let z: Vec<f64> = u.iter().map(|v| crate::density::normal_quantile(*v)).collect();
            let n = z.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n > 0.0 {
                dirs.push(z.iter().map(|v| v / n).collect());
            }
        }
    }
    dirs
}

/// `ln S / (1 - 1/S)`, extended by continuity to 1 at `S = 1`.
pub fn reverse_pinsker_factor(s: f64) -> f64 {
    if !(s > 1.0 + 1e-12) {
        return 1.0;
    }
    s * s.ln() / (s - 1.0)
}

/// Outcome of checking both Pinsker-type inequalities on measured values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PinskerCertificate {
    pub kl: DivergenceEstimate,
    pub tv: DivergenceEstimate,
    pub sup_ratio: f64,
    /// `TV <= sqrt(2 KL)`.
    pub pinsker_ok: bool,
    /// `sqrt(2 KL) - TV`.
    pub pinsker_slack: f64,
    /// `KL <= (1/2) ln S/(1 - 1/S) TV`; `None` when `S` is infinite.
    pub reverse_pinsker_ok: Option<bool>,
    pub reverse_bound: Option<f64>,
    pub reverse_slack: Option<f64>,
}

/// Checks the inequalities for `KL(mu2 || mu1)`, `TV(mu2, mu1)` and
/// `S = sup d mu2 / d mu1`, allowing three combined error bars of slack.
pub fn pinsker_certificates(mu2: &dyn Density, mu1: &dyn Density, est: &Estimator) -> Result<PinskerCertificate> {
    let t = tv(mu2, mu1, est)?;
    let s = sup_ratio(mu2, mu1, est.domain.as_ref())?;
    let k = match kl(mu2, mu1, est) {
        Ok(k) => k,
        Err(Error::AbsoluteContinuity { .. }) => DivergenceEstimate {
            value: f64::INFINITY,
            method: est.method.kind(),
            error_bar: 0.0,
            seed: est.method.seed(),
        },
        Err(e) => return Err(e),
    };
    let kl_v = k.value.max(0.0);
    let tol = 3.0 * (k.error_bar + t.error_bar);
    let pinsker_slack = (2.0 * kl_v).sqrt() - t.value;
    // d sqrt(2 KL) = dKL / sqrt(2 KL); bound the propagated bar generously
    let pinsker_tol = 3.0 * t.error_bar + (6.0 * k.error_bar).sqrt();
    let (ok, bound, slack) = if s.is_finite() {
        let bound = 0.5 * reverse_pinsker_factor(s) * t.value;
        (Some(kl_v <= bound + tol), Some(bound), Some(bound - kl_v))
    } else {
        (None, None, None)
    };
    Ok(PinskerCertificate {
        kl: k,
        tv: t,
        sup_ratio: s,
        pinsker_ok: pinsker_slack >= -pinsker_tol,
        pinsker_slack,
        reverse_pinsker_ok: ok,
        reverse_bound: bound,
        reverse_slack: slack,
    })
}

/// One CSV row per estimate: `name,value,error_bar,method,seed`.
pub fn estimates_csv(rows: &[(String, DivergenceEstimate)]) -> String {
    let mut out = String::from("name,value,error_bar,method,seed\n");
    for (name, e) in rows {
        let method = match e.method {
            MethodKind::Quadrature => "quadrature",
            MethodKind::MonteCarlo => "monte_carlo",
        };
        let seed = e.seed.map(|s| s.to_string()).unwrap_or_default();
        let _ = writeln!(out, "{name},{:.12e},{:.6e},{method},{seed}", e.value, e.error_bar);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::{Gaussian, UniformBox};

    fn n(m: f64, s: f64) -> Gaussian {
        Gaussian::univariate(m, s).unwrap()
    }

    #[test]
    fn reverse_factor_is_continuous_at_one() {
        assert_eq!(reverse_pinsker_factor(1.0), 1.0);
        assert!((reverse_pinsker_factor(1.0 + 1e-6) - 1.0).abs() < 1e-6);
        let s: f64 = 4.0;
        assert!((reverse_pinsker_factor(s) - s.ln() / (1.0 - 1.0 / s)).abs() < 1e-15);
    }

    #[test]
    fn disjoint_uniforms_have_tv_two() {
        let a = UniformBox::interval(0.0, 1.0).unwrap();
        let b = UniformBox::interval(2.0, 3.0).unwrap();
        let t = tv(&a, &b, &Estimator::quadrature(50)).unwrap();
        assert!((t.value - 2.0).abs() < 1e-12);
    }

    #[test]
    fn kl_reports_support_violation() {
        let a = n(0.0, 1.0);
        let b = UniformBox::interval(-1.0, 1.0).unwrap();
        let est = Estimator::quadrature(50).with_domain(BoxDomain::cube(3.0, 1));
        match kl(&a, &b, &est) {
            Err(Error::AbsoluteContinuity { point }) => assert!(point[0].abs() > 1.0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn renyi_diverges_for_heavy_numerator() {
        let r = renyi(2.0, &n(0.0, 2.0), &n(0.0, 1.0), &Estimator::quadrature(200)).unwrap();
        assert!(r.value.is_infinite());
    }

    #[test]
    fn sup_ratio_examples() {
        assert!((sup_ratio(&n(0.0, 1.0), &n(0.0, 1.0), None).unwrap() - 1.0).abs() < 1e-12);
        assert!((sup_ratio(&n(0.0, 1.0), &n(0.0, 2.0), None).unwrap() - 2.0).abs() < 1e-9);
        assert!(sup_ratio(&n(0.0, 2.0), &n(0.0, 1.0), None).unwrap().is_infinite());
    }

    #[test]
    fn csv_has_header_and_seed_column() {
        let e = DivergenceEstimate { value: 0.5, method: MethodKind::MonteCarlo, error_bar: 0.01, seed: Some(3) };
        let csv = estimates_csv(&[("kl".into(), e)]);
        assert!(csv.starts_with("name,value,error_bar,method,seed\n"));
        assert!(csv.trim_end().ends_with(",monte_carlo,3"));
    }
}
