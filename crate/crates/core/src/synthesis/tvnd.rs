//! TV stage for `d >= 2`: a seeded greedy search over short schedules,
//! warm-started by per-axis moment matching. Best effort only; the achieved
//! distance is reported, never assumed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::tv1d::{lift_move, moves_to_schedule, piecewise_linear_moves, Move};
use crate::density::{BoxDomain, Density, Gaussian};
use crate::error::{Error, Result};
use crate::flow::Pushforward;
use crate::quadrature::{integrate_box, monte_carlo};
use crate::schedule::ControlSchedule;
use crate::target::TargetSpec;

#[derive(Debug, Clone, Copy)]
pub struct NdOptions {
    /// Largest number of switches a candidate schedule may use.
    pub budget: usize,
    pub iterations: usize,
    pub seed: u64,
    /// Quadrature cells per axis in 2D.
    pub cells: usize,
    /// Monte Carlo samples for d >= 3.
    pub samples: usize,
}

impl Default for NdOptions {
    fn default() -> Self {
        Self { budget: 64, iterations: 40, seed: 0, cells: 32, samples: 1 << 14 }
    }
}

#[derive(Debug, Clone)]
pub struct TvStageNd {
    pub schedule: ControlSchedule,
    pub tv: f64,
    /// Distance before any control is applied.
    pub baseline_tv: f64,
}

struct Objective<'a> {
    base: &'a Gaussian,
    target: &'a dyn Density,
    domain: BoxDomain,
    length: f64,
    opts: NdOptions,
}

impl Objective<'_> {
    fn integrate(&self, f: impl Fn(&[f64]) -> f64 + Sync) -> Result<f64> {
        if self.domain.dim() == 2 {
            integrate_box(f, &self.domain, self.opts.cells, &[])
        } else {
            Ok(monte_carlo(f, &self.domain, self.opts.samples, self.opts.seed).value)
        }
    }

    fn tv(&self, moves: &[Move]) -> Result<f64> {
        let schedule = moves_to_schedule(moves, self.length)?;
        let p = Pushforward::new(self.base, schedule, self.length);
        self.integrate(|x| (p.density(x) - self.target.density(x)).abs())
    }
}

/// Greedy search for a schedule on `[0, length]` pushing `base` close to the
/// target in L1.
pub fn tv_stage_nd(base: &Gaussian, target: &TargetSpec, eps_tv: f64, length: f64, opts: NdOptions) -> Result<TvStageNd> {
    let d = base.dim();
    if d < 2 {
        return Err(Error::UnsupportedDimension { d, reason: "use the 1D construction".into() });
    }
    if target.dim() != d {
        return Err(Error::Dimension { expected: d, got: target.dim() });
    }
    let base_box = base.support_box(1e-6).expect("Gaussian box");
    let domain = match target.density.support_box(1e-6) {
        Some(b) => b.union(&base_box),
        None => base_box.scaled(2.0),
    };
    let obj = Objective { base, target: target.density.as_ref(), domain, length, opts };

    let baseline = obj.tv(&[])?;
    let mut best: Vec<Move> = Vec::new();
    let mut best_tv = baseline;
    let done = |moves: &[Move], tv: f64| -> Result<TvStageNd> {
        Ok(TvStageNd { schedule: moves_to_schedule(moves, length)?, tv, baseline_tv: baseline })
    };
    if best_tv <= eps_tv {
        return done(&best, best_tv);
    }

    // per-axis affine maps matching the target's marginal means and spreads
    let mut warm = Vec::new();
    for k in 0..d {
        let mean = obj.integrate(|x| x[k] * obj.target.density(x))?;
        let var = obj.integrate(|x| (x[k] - mean).powi(2) * obj.target.density(x))?;
        let (m, s) = (base.mean()[k], base.cov()[(k, k)].sqrt());
        let knots = [m, m + 1.0];
        let values = [mean, mean + var.max(1e-12).sqrt() / s];
        for mv in piecewise_linear_moves(&knots, &values)? {
            warm.push(lift_move(&mv, k, d));
        }
    }
    if warm.len() <= opts.budget + 1 {
        let tv = obj.tv(&warm)?;
        if tv < best_tv {
            best = warm;
            best_tv = tv;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
    let lo = obj.domain.lo.clone();
    let hi = obj.domain.hi.clone();
    for _ in 0..opts.iterations {
        if best_tv <= eps_tv {
            break;
        }
        let mut cand = best.clone();
        let perturb = !cand.is_empty() && (normal() > 0.0 || cand.len() > opts.budget);
        if perturb {
            let i = (normal().abs() * 1e6) as usize % cand.len();
            let m = &mut cand[i];
            for w in m.w.iter_mut() {
                *w += 0.1 * (w.abs() + 0.1) * normal();
            }
            m.b += 0.1 * normal();
        } else {
            let mut a: Vec<f64> = (0..d).map(|_| normal()).collect();
            let n = a.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            a.iter_mut().for_each(|v| *v /= n);
            let p: Vec<f64> = (0..d).map(|k| 0.5 * (lo[k] + hi[k]) + 0.25 * (hi[k] - lo[k]) * normal()).collect();
            let b = -a.iter().zip(&p).map(|(a, p)| a * p).sum::<f64>();
            let w = (0..d).map(|_| 0.3 * normal()).collect();
            cand.push(Move { w, a, b });
        }
        let tv = obj.tv(&cand)?;
        if tv < best_tv {
            best = cand;
            best_tv = tv;
        }
    }
    done(&best, best_tv)
}
