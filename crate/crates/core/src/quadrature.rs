//! Composite Gauss-Legendre quadrature, seeded Monte Carlo and Halton points.
//!
//! Every parallel reduction collects per-cell partial sums in cell order and
//! adds them sequentially, so results do not depend on the thread count.

use std::sync::OnceLock;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::density::BoxDomain;
use crate::error::{Error, Result};

/// Points per Gauss-Legendre cell.
pub const GL_ORDER: usize = 16;

/// Samples per Monte Carlo chunk; each chunk owns one ChaCha stream.
const MC_CHUNK: usize = 4096;

/// A numerical value with an error bar.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
}

/// Gauss-Legendre nodes and weights of order `n` on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let k = k as f64;
                let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn gl16() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(GL_ORDER))
}

/// Cell boundaries: `cells` equal cells on `[a, b]`, further split at `breaks`.
pub fn cell_edges(a: f64, b: f64, cells: usize, breaks: &[f64]) -> Vec<f64> {
    let cells = cells.max(1);
    let mut edges: Vec<f64> =
        (0..=cells).map(|i| a + (b - a) * i as f64 / cells as f64).collect();
    edges.extend(breaks.iter().copied().filter(|v| *v > a && *v < b));
    edges.sort_by(f64::total_cmp);
    let tol = 1e-13 * (b - a).abs().max(1.0);
    edges.dedup_by(|x, y| (*x - *y).abs() <= tol);
    *edges.last_mut().unwrap() = b;
    edges
}

fn gl_on(f: &impl Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
    let (nodes, weights) = gl16();
    let half = 0.5 * (hi - lo);
    let mid = 0.5 * (hi + lo);
    half * nodes.iter().zip(weights).map(|(n, w)| w * f(mid + half * n)).sum::<f64>()
}

/// Composite Gauss-Legendre integral of `f` over `[a, b]`.
pub fn integrate_1d<F>(f: F, a: f64, b: f64, cells: usize, breaks: &[f64]) -> f64
where
    F: Fn(f64) -> f64 + Sync,
{
    let edges = cell_edges(a, b, cells, breaks);
    let parts: Vec<f64> =
        edges.par_windows(2).map(|w| gl_on(&f, w[0], w[1])).collect();
    parts.iter().sum()
}

/// Tensor-product Gauss-Legendre integral over a 1D or 2D box.
///
/// `breaks[k]` lists extra cell edges along axis `k`.
pub fn integrate_box<F>(f: F, domain: &BoxDomain, cells: usize, breaks: &[Vec<f64>]) -> Result<f64>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let empty = Vec::new();
    let axis_breaks = |k: usize| breaks.get(k).unwrap_or(&empty);
    match domain.dim() {
        1 => Ok(integrate_1d(|x| f(&[x]), domain.lo[0], domain.hi[0], cells, axis_breaks(0))),
        2 => {
            let ex = cell_edges(domain.lo[0], domain.hi[0], cells, axis_breaks(0));
            let ey = cell_edges(domain.lo[1], domain.hi[1], cells, axis_breaks(1));
            let (nodes, weights) = gl16();
            let parts: Vec<f64> = ex
                .par_windows(2)
                .map(|wx| {
                    let hx = 0.5 * (wx[1] - wx[0]);
                    let mx = 0.5 * (wx[1] + wx[0]);
                    let mut acc = 0.0;
                    for (nx, wxw) in nodes.iter().zip(weights) {
                        let x = mx + hx * nx;
                        let inner: f64 = ey
                            .windows(2)
                            .map(|wy| gl_on(&|y| f(&[x, y]), wy[0], wy[1]))
                            .sum();
                        acc += wxw * hx * inner;
                    }
                    acc
                })
                .collect();
            Ok(parts.iter().sum())
        }
        d => Err(Error::UnsupportedDimension {
            d,
            reason: "tensor quadrature is limited to d <= 2; use Monte Carlo".into(),
        }),
    }
}

/// Quadrature at `cells` and `2 * cells`; the error bar is the gap between them.
pub fn integrate_with_error<F>(
    f: F,
    domain: &BoxDomain,
    cells: usize,
    breaks: &[Vec<f64>],
) -> Result<Estimate>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let coarse = integrate_box(&f, domain, cells, breaks)?;
    let fine = integrate_box(&f, domain, 2 * cells, breaks)?;
    let error = (fine - coarse).abs() + 1e-15 * fine.abs();
    Ok(Estimate { value: fine, error })
}

/// Fills `out` with one uniform draw from the box.
pub fn mc_point(rng: &mut ChaCha8Rng, domain: &BoxDomain, out: &mut [f64]) {
    for (k, v) in out.iter_mut().enumerate() {
        let u: f64 = rng.random();
        *v = domain.lo[k] + (domain.hi[k] - domain.lo[k]) * u;
    }
}

fn chunk_rng(seed: u64, chunk: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chunk as u64);
    rng
}

/// Plain Monte Carlo over a box with uniform sampling.
///
/// The error bar is one standard error.
pub fn monte_carlo<F>(f: F, domain: &BoxDomain, samples: usize, seed: u64) -> Estimate
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let samples = samples.max(2);
    let chunks = samples.div_ceil(MC_CHUNK);
    let d = domain.dim();
    let parts: Vec<(f64, f64)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = chunk_rng(seed, c);
            let n = MC_CHUNK.min(samples - c * MC_CHUNK);
            let mut x = vec![0.0; d];
            let (mut s, mut s2) = (0.0, 0.0);
            for _ in 0..n {
                mc_point(&mut rng, domain, &mut x);
                let v = f(&x);
                s += v;
                s2 += v * v;
            }
            (s, s2)
        })
        .collect();
    let (s, s2) = parts.iter().fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    let n = samples as f64;
    let mean = s / n;
    let var = ((s2 / n - mean * mean) * n / (n - 1.0)).max(0.0);
    let vol = domain.volume();
    Estimate { value: vol * mean, error: vol * (var / n).sqrt() }
}

const PRIMES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];

/// Radical inverse of `index` in `base`.
pub fn radical_inverse(mut index: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let (mut f, mut r) = (inv, 0.0);
    while index > 0 {
        r += f * (index % base) as f64;
        index /= base;
        f *= inv;
    }
    r
}

/// First `n` Halton points in `[0,1)^d`, skipping the origin.
pub fn halton(n: usize, d: usize) -> Vec<Vec<f64>> {
    assert!(d <= PRIMES.len(), "Halton sequence supports d <= {}", PRIMES.len());
    (1..=n as u64)
        .map(|i| PRIMES[..d].iter().map(|p| radical_inverse(i, *p)).collect())
        .collect()
}

/// Halton points mapped into a box.
pub fn halton_in(domain: &BoxDomain, n: usize) -> Vec<Vec<f64>> {
    halton(n, domain.dim())
        .into_iter()
        .map(|u| {
            u.iter()
                .enumerate()
                .map(|(k, v)| domain.lo[k] + (domain.hi[k] - domain.lo[k]) * v)
                .collect()
        })
        .collect()
}
