//! The superlinear 1D field `v(x) = (|x| log x_+)_+`, whose flow `x^{e^t}`
//! turns stretched-exponential tails `exp(-|x|^p)` into `exp(-|x|^{p e^{-t}})`.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::quadrature::integrate_1d;

/// Number of points in the geometric grid used by the tail checks.
pub const TAIL_GRID_POINTS: usize = 241;
/// Right end of that grid.
pub const TAIL_GRID_MAX: f64 = 1e6;
/// Relative slack allowed between consecutive ratios.
pub const TREND_SLACK: f64 = 1e-3;
/// Ratios inspected at the right end of the grid.
pub const TREND_WINDOW: usize = 10;

/// `exp(-|x|^p) / Z_p` on the real line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StretchedExponential {
    pub p: f64,
    /// `Z_p`, computed by quadrature at construction.
    pub normalization: f64,
}

impl StretchedExponential {
    pub fn new(p: f64) -> Result<Self> {
        if !(p > 0.0 && p.is_finite()) {
            return Err(Error::Invalid(format!("exponent must be positive, got {p}")));
        }
        // x = e^s removes the cusp of x^p at the origin
        let s_max = 80f64.ln() / p;
        let half = integrate_1d(|s| (s - (p * s).exp()).exp(), -60.0, s_max, 1024, &[0.0]);
        Ok(Self { p, normalization: 2.0 * half })
    }

    /// `2 Gamma(1 + 1/p)`.
    pub fn exact_normalization(p: f64) -> f64 {
        2.0 * gamma(1.0 + 1.0 / p)
    }

    pub fn ln_density(&self, x: f64) -> f64 {
        -x.abs().powf(self.p) - self.normalization.ln()
    }

    pub fn density(&self, x: f64) -> f64 {
        self.ln_density(x).exp()
    }
}

/// `v(x) = (|x| log x_+)_+`: `x ln x` for `x > 1`, zero otherwise.
pub fn xlogx_field(x: f64) -> f64 {
    if x > 1.0 {
        x * x.ln()
    } else {
        0.0
    }
}

/// Flow of [`xlogx_field`]: `x^{e^t}` for `x >= 1`, `x` below. Valid for
/// negative `t` as well.
pub fn xlogx_flow(x: f64, t: f64) -> f64 {
    if x >= 1.0 {
        x.powf(t.exp())
    } else {
        x
    }
}

/// `ln rho(t, x)` for the initial density `rho_B`:
/// `ln rho_B(x)` below 1, `-t + ln rho_B(x^{e^{-t}}) + (e^{-t} - 1) ln x`
/// above. The density jumps by `e^{-t}` at `x = 1`.
pub fn xlogx_ln_density(base: &StretchedExponential, t: f64, x: f64) -> f64 {
    if x < 1.0 {
        base.ln_density(x)
    } else {
        let k = (-t).exp();
        -t + base.ln_density(x.powf(k)) + (k - 1.0) * x.ln()
    }
}

pub fn xlogx_density(base: &StretchedExponential, t: f64, x: f64) -> f64 {
    xlogx_ln_density(base, t, x).exp()
}

/// Total mass of `rho(t, .)`: the untouched part on `x < 1` plus a
/// quadrature of the moved part in `s = ln x`.
pub fn xlogx_mass(base: &StretchedExponential, t: f64) -> f64 {
    let left = integrate_1d(|x| base.density(x), -80f64.powf(1.0 / base.p), 1.0, 2048, &[-1.0, 0.0]);
    // x^{p e^{-t}} = 80 at s = ln(80) e^t / p
    let s_max = 80f64.ln() * t.exp() / base.p;
    let right = integrate_1d(|s| (xlogx_ln_density(base, t, s.exp()) + s).exp(), 0.0, s_max, 4096, &[]);
    left + right
}

/// Outcome of a tail comparison on the geometric grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailConversion {
    pub p: f64,
    pub q: f64,
    pub t: f64,
    /// Time beyond which the ratio is bounded.
    pub threshold: f64,
    pub ratio_limit_finite: bool,
    pub x: Vec<f64>,
    pub ln_density: Vec<f64>,
    pub ln_ratio: Vec<f64>,
    /// Increments of `ln ratio` over the last window.
    pub trend: Vec<f64>,
}

impl TailConversion {
    /// `x,rho,ratio` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,rho,ratio\n");
        for i in 0..self.x.len() {
            out.push_str(&format!("{},{},{}\n", self.x[i], self.ln_density[i].exp(), self.ln_ratio[i].exp()));
        }
        out
    }
}

fn geometric_grid() -> Vec<f64> {
    let n = TAIL_GRID_POINTS - 1;
    (0..=n).map(|i| TAIL_GRID_MAX.powf(i as f64 / n as f64)).collect()
}

fn eventually_nonincreasing(ln_ratio: &[f64]) -> (bool, Vec<f64>) {
    let tail = &ln_ratio[ln_ratio.len() - TREND_WINDOW - 1..];
    let trend: Vec<f64> = tail.windows(2).map(|w| w[1] - w[0]).collect();
    let ok = trend.iter().all(|d| *d <= TREND_SLACK.ln_1p());
    (ok, trend)
}

fn conversion(p: f64, q: f64, t: f64, threshold: f64, ln_ratio: impl Fn(f64, f64) -> f64, run: f64) -> Result<TailConversion> {
    let base = StretchedExponential::new(p)?;
    let x = geometric_grid();
    let ln_density: Vec<f64> = x.iter().map(|&x| xlogx_ln_density(&base, run, x)).collect();
    let ln_ratio: Vec<f64> = x.iter().zip(&ln_density).map(|(&x, &l)| ln_ratio(x, l)).collect();
    let (finite, trend) = eventually_nonincreasing(&ln_ratio);
    Ok(TailConversion { p, q, t, threshold, ratio_limit_finite: finite, x, ln_density, ln_ratio, trend })
}

/// Compares `rho(t, .)` started from `rho_{B,p}` with `rho_{B,q}`,
/// `q <= p`, through `rho_{B,q} / rho(t)`, which stays bounded exactly when
/// `t > ln(p/q)` (or `p = q`).
pub fn tail_conversion_check(p: f64, q: f64, t: f64) -> Result<TailConversion> {
    if !(q > 0.0 && q <= p) {
        return Err(Error::Invalid(format!("need 0 < q <= p, got p={p}, q={q}")));
    }
    let target = StretchedExponential::new(q)?;
    conversion(p, q, t, (p / q).ln(), |x, l| target.ln_density(x) - l, t)
}

/// The same comparison with the field reversed: `rho(-t)` from
/// `rho_{B,p}` against `rho_{B,q}`, `q >= p`, through `rho(-t) / rho_{B,q}`,
/// bounded exactly when `t > ln(q/p)`.
pub fn time_reversed_check(p: f64, q: f64, t: f64) -> Result<TailConversion> {
    if !(p > 0.0 && q >= p) {
        return Err(Error::Invalid(format!("need 0 < p <= q, got p={p}, q={q}")));
    }
    let target = StretchedExponential::new(q)?;
    conversion(p, q, t, (q / p).ln(), |x, l| l - target.ln_density(x), -t)
}

/// Least-squares slope of `ln(-ln rho(t, x))` against `ln x` on
/// `[lo, hi]`; tends to the tail exponent `p e^{-t}`.
pub fn tail_exponent_fit(base: &StretchedExponential, t: f64, lo: f64, hi: f64) -> f64 {
    let n = 64;
    let pts: Vec<(f64, f64)> = (0..=n)
        .map(|i| {
            let x = lo * (hi / lo).powf(i as f64 / n as f64);
            (x.ln(), (-xlogx_ln_density(base, t, x)).ln())
        })
        .collect();
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / pts.len() as f64;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / pts.len() as f64;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}
