//! Exact flow maps of `x' = w (a.x + b)_+` under piecewise-constant controls
//! and the matching closed-form density pushforwards.
//!
//! On one segment with `c = w.a` and `s = a.x + b`, the active half-space
//! `s > 0` is invariant and `s(t) = s(0) e^{ct}`, so
//! `x(t) = x(0) + w s(0) (e^{ct} - 1)/c` with Jacobian determinant `e^{ct}`.
//! The inactive side does not move. Points on the hyperplane are inactive.

use nalgebra::{DMatrix, DVector};

use crate::density::{BoxDomain, Density};
use crate::error::{Error, Result};
use crate::piecewise::{GaussianPiece, PiecewiseGaussianDensity};
use crate::polyhedron::HalfSpace;
use crate::schedule::{ControlSchedule, ControlSegment};

/// Default limit on the number of pieces a pushforward may create.
pub const DEFAULT_PIECE_CAP: usize = 1 << 20;

/// Image of a point and `log |det| ` of the map's Jacobian there.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowResult {
    pub point: Vec<f64>,
    pub log_jacobian: f64,
}

/// `(e^{ct} - 1)/c`, or `t` when `nilpotent`.
fn phi(c: f64, t: f64, nilpotent: bool) -> f64 {
    if nilpotent {
        t
    } else {
        (c * t).exp_m1() / c
    }
}

fn is_nilpotent(w: &[f64], a: &[f64]) -> bool {
    let c: f64 = w.iter().zip(a).map(|(w, a)| w * a).sum();
    let nw = w.iter().map(|v| v * v).sum::<f64>().sqrt();
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    c.abs() < 1e-12 * nw * na
}

/// `exp(t w a^T) = I + ((e^{t w.a} - 1)/(w.a)) w a^T`, or `I + t w a^T` when
/// `w.a` vanishes.
pub fn rank_one_exponential(w: &[f64], a: &[f64], t: f64) -> DMatrix<f64> {
    let d = w.len();
    let c: f64 = w.iter().zip(a).map(|(w, a)| w * a).sum();
    let f = phi(c, t, is_nilpotent(w, a) || c == 0.0);
    let wv = DVector::from_column_slice(w);
    let av = DVector::from_column_slice(a);
    DMatrix::identity(d, d) + f * wv * av.transpose()
}

/// Effective growth rate of a segment after the nilpotent cut-off.
fn effective_rate(seg: &ControlSegment) -> (f64, bool) {
    let nil = seg.is_nilpotent() || seg.rate() == 0.0;
    (if nil { 0.0 } else { seg.rate() }, nil)
}

/// Flows `x` through one segment for time `dt` (negative runs backwards).
pub fn segment_flow(seg: &ControlSegment, x: &[f64], dt: f64) -> FlowResult {
    let s = seg.activation(x);
    if s <= 0.0 || dt == 0.0 {
        return FlowResult { point: x.to_vec(), log_jacobian: 0.0 };
    }
    let (c, nil) = effective_rate(seg);
    let f = s * phi(c, dt, nil);
    let point = x.iter().zip(&seg.w).map(|(x, w)| x + w * f).collect();
    FlowResult { point, log_jacobian: c * dt }
}

fn active_span(seg: &ControlSegment, t0: f64, t1: f64) -> f64 {
    (seg.t1.min(t1) - seg.t0.max(t0)).max(0.0)
}

/// Flow map from time `t0` to `t1` (`t0 <= t1`).
pub fn flow_interval(schedule: &ControlSchedule, x: &[f64], t0: f64, t1: f64) -> FlowResult {
    let mut out = FlowResult { point: x.to_vec(), log_jacobian: 0.0 };
    for seg in &schedule.segments {
        let dt = active_span(seg, t0, t1);
        if dt > 0.0 {
            let r = segment_flow(seg, &out.point, dt);
            out.point = r.point;
            out.log_jacobian += r.log_jacobian;
        }
    }
    out
}

/// `Phi^t(x0)` and `log |det grad Phi^t(x0)|`.
pub fn flow_forward(schedule: &ControlSchedule, x0: &[f64], t: f64) -> FlowResult {
    flow_interval(schedule, x0, 0.0, t)
}

/// `(Phi^t)^{-1}(y)` and `log |det grad (Phi^t)^{-1}(y)|`.
pub fn flow_inverse(schedule: &ControlSchedule, y: &[f64], t: f64) -> FlowResult {
    let mut out = FlowResult { point: y.to_vec(), log_jacobian: 0.0 };
    for seg in schedule.segments.iter().rev() {
        let dt = active_span(seg, 0.0, t);
        if dt > 0.0 {
            let r = segment_flow(seg, &out.point, -dt);
            out.point = r.point;
            out.log_jacobian += r.log_jacobian;
        }
    }
    out
}

/// `rho(t, x) = rho_0((Phi^t)^{-1} x) |det grad (Phi^t)^{-1}(x)|`.
pub fn ln_density_at(initial: &dyn Density, schedule: &ControlSchedule, t: f64, x: &[f64]) -> f64 {
    let r = flow_inverse(schedule, x, t);
    initial.ln_density(&r.point) + r.log_jacobian
}

/// Density of the solution at time `t`, by inverse flow and change of variables.
pub fn density_at(initial: &dyn Density, schedule: &ControlSchedule, t: f64, x: &[f64]) -> f64 {
    ln_density_at(initial, schedule, t, x).exp()
}

/// Lazily evaluated pushforward `Phi^t_# rho_0` of any density.
#[derive(Clone)]
pub struct Pushforward<D> {
    pub initial: D,
    pub schedule: ControlSchedule,
    pub t: f64,
}

impl<D: Density> Pushforward<D> {
    pub fn new(initial: D, schedule: ControlSchedule, t: f64) -> Self {
        Self { initial, schedule, t }
    }

    pub fn at_horizon(initial: D, schedule: ControlSchedule) -> Self {
        let t = schedule.horizon;
        Self::new(initial, schedule, t)
    }
}

impl<D: Density> Density for Pushforward<D> {
    fn dim(&self) -> usize {
        self.initial.dim()
    }

    fn ln_density(&self, x: &[f64]) -> f64 {
        ln_density_at(&self.initial, &self.schedule, self.t, x)
    }

    /// Image of the initial box's corners and edge samples, padded by 25%.
    fn support_box(&self, tail: f64) -> Option<BoxDomain> {
        let b = self.initial.support_box(tail)?;
        let d = b.dim();
        let steps = if d <= 2 { 16 } else { 2 };
        let mut lo = vec![f64::INFINITY; d];
        let mut hi = vec![f64::NEG_INFINITY; d];
        let total = (steps + 1usize).pow(d as u32);
        for flat in 0..total {
            let mut rem = flat;
            let mut x = vec![0.0; d];
            let mut on_face = false;
            for k in 0..d {
                let i = rem % (steps + 1);
                rem /= steps + 1;
                on_face |= i == 0 || i == steps;
                x[k] = b.lo[k] + (b.hi[k] - b.lo[k]) * i as f64 / steps as f64;
            }
            if !on_face {
                continue;
            }
            let y = flow_forward(&self.schedule, &x, self.t).point;
            for k in 0..d {
                lo[k] = lo[k].min(y[k]);
                hi[k] = hi[k].max(y[k]);
            }
        }
        Some(BoxDomain::new(lo, hi).scaled(1.25))
    }

    fn breakpoints(&self) -> Vec<f64> {
        if self.dim() != 1 {
            return Vec::new();
        }
        let mut pts: Vec<f64> = self
            .initial
            .breakpoints()
            .iter()
            .map(|x| flow_forward(&self.schedule, &[*x], self.t).point[0])
            .collect();
        // a switching point created at time s is carried forward to time t
        for seg in &self.schedule.segments {
            if seg.t0 >= self.t || seg.a[0] == 0.0 {
                continue;
            }
            let root = -seg.b / seg.a[0];
            pts.push(flow_interval(&self.schedule, &[root], seg.t1.min(self.t), self.t).point[0]);
        }
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        pts
    }
}

/// Applies one segment's Lemma-type update to every piece.
fn push_segment(
    pieces: Vec<GaussianPiece>,
    seg: &ControlSegment,
    dt: f64,
    d: usize,
    cap: usize,
) -> Result<Vec<GaussianPiece>> {
    let (c, nil) = effective_rate(seg);
    let f = phi(c, -dt, nil);
    let w = DVector::from_column_slice(&seg.w);
    let a = DVector::from_column_slice(&seg.a);
    let m = DMatrix::identity(d, d) + f * &w * a.transpose();
    let shift = seg.b * f * &w;
    let zero_normal = seg.a.iter().all(|v| *v == 0.0);
    let moving = seg.w.iter().any(|v| *v != 0.0);

    let activate = |p: &GaussianPiece, region| GaussianPiece {
        ln_alpha: p.ln_alpha - c * dt,
        a: &p.a * &m,
        beta: &p.a * &shift + &p.beta,
        region,
        witness: None,
    };

    let mut out = Vec::with_capacity(pieces.len() * 2);
    for p in pieces {
        if !moving || (zero_normal && seg.b <= 0.0) {
            out.push(p);
            continue;
        }
        if zero_normal {
            let mut q = activate(&p, p.region.substitute(&m, &shift));
            q.witness = p.witness.as_ref().map(|x| segment_flow(seg, x, dt).point);
            out.push(q);
            continue;
        }
        let mut inactive = p.clone();
        inactive.region = p.region.with(HalfSpace::inactive(&seg.a, seg.b));
        let mut active = activate(&p, p.region.substitute(&m, &shift).with(HalfSpace::active(&seg.a, seg.b)));

        if d == 1 {
            for mut q in [inactive, active] {
                if let Some(iv) = q.region.interval_1d() {
                    q.witness = Some(vec![interval_point(iv.lo, iv.hi)]);
                    out.push(q);
                }
            }
        } else {
            // the old witness certifies one side; the other needs an LP
            let w_old = p.witness.clone().or_else(|| p.region.witness(d));
            let side_active = w_old.as_ref().map(|x| seg.activation(x) > 0.0);
            match (w_old, side_active) {
                (Some(x), Some(true)) => {
                    let y = segment_flow(seg, &x, dt).point;
                    active.witness = active.region.contains(&y).then_some(y);
                    inactive.witness = inactive.region.witness(d);
                }
                (Some(x), Some(false)) => {
                    inactive.witness = Some(x);
                    active.witness = active.region.witness(d);
                }
                _ => {
                    inactive.witness = inactive.region.witness(d);
                    active.witness = active.region.witness(d);
                }
            }
            if active.witness.is_none() {
                active.witness = active.region.witness(d);
            }
            for q in [inactive, active] {
                if q.witness.is_some() {
                    out.push(q);
                }
            }
        }
        if out.len() > cap {
            return Err(Error::Complexity { count: out.len(), cap });
        }
    }
    Ok(out)
}

fn interval_point(lo: f64, hi: f64) -> f64 {
    match (lo.is_finite(), hi.is_finite()) {
        (true, true) => 0.5 * (lo + hi),
        (true, false) => lo + 1.0,
        (false, true) => hi - 1.0,
        (false, false) => 0.0,
    }
}

/// Closed-form `rho(t, .)` for `t` in `[0, T]` with an explicit piece cap.
pub fn pushforward_until(
    initial: &PiecewiseGaussianDensity,
    schedule: &ControlSchedule,
    t: f64,
    cap: usize,
) -> Result<PiecewiseGaussianDensity> {
    let d = initial.dim();
    if let Some(sd) = schedule.dim() {
        if sd != d {
            return Err(Error::Dimension { expected: d, got: sd });
        }
    }
    let mut pieces = initial.pieces().to_vec();
    for seg in &schedule.segments {
        let dt = active_span(seg, 0.0, t);
        if dt > 0.0 {
            pieces = push_segment(pieces, seg, dt, d, cap)?;
        }
    }
    Ok(PiecewiseGaussianDensity::from_pieces(initial.base().clone(), pieces))
}

/// Closed-form `rho(T, .)` of the continuity equation.
pub fn pushforward_density(
    initial: &PiecewiseGaussianDensity,
    schedule: &ControlSchedule,
) -> Result<PiecewiseGaussianDensity> {
    pushforward_until(initial, schedule, schedule.horizon, DEFAULT_PIECE_CAP)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::Gaussian;
    use crate::schedule::ScheduleBuilder;

    fn one(w: &[f64], a: &[f64], b: f64, t: f64) -> ControlSchedule {
        let mut s = ScheduleBuilder::new();
        s.push(w.to_vec(), a.to_vec(), b, t);
        s.finish().unwrap()
    }

    #[test]
    fn rank_one_examples() {
        let m = rank_one_exponential(&[1.0, 0.0], &[1.0, 0.0], 2f64.ln());
        assert!((m - DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0])).abs().max() < 1e-15);
        let m = rank_one_exponential(&[1.0, 0.0], &[0.0, 1.0], 3.0);
        assert_eq!(m, DMatrix::from_row_slice(2, 2, &[1.0, 3.0, 0.0, 1.0]));
        assert_eq!(rank_one_exponential(&[1.0, 2.0], &[3.0, 4.0], 0.0), DMatrix::identity(2, 2));
    }

    #[test]
    fn relu_half_line_dilation() {
        let s = one(&[1.0], &[1.0], 0.0, 0.7);
        let r = flow_forward(&s, &[2.0], 0.7);
        assert!((r.point[0] - 2.0 * 0.7f64.exp()).abs() < 1e-14);
        assert!((r.log_jacobian - 0.7).abs() < 1e-15);
        assert_eq!(flow_forward(&s, &[-1.0], 0.7).point, vec![-1.0]);
        let back = flow_inverse(&s, &[3.0], 0.7);
        assert!((back.point[0] - 3.0 * (-0.7f64).exp()).abs() < 1e-14);
    }

    #[test]
    fn group_law() {
        let mut b = ScheduleBuilder::new();
        b.push(vec![0.4, -0.3], vec![1.0, 0.5], 0.2, 0.5);
        b.push(vec![-0.2, 0.6], vec![0.3, 1.0], -0.1, 0.5);
        let s = b.finish().unwrap();
        let x = [0.3, 0.9];
        let mid = flow_interval(&s, &x, 0.0, 0.3);
        let end = flow_interval(&s, &mid.point, 0.3, 1.0);
        let full = flow_forward(&s, &x, 1.0);
        assert!((end.point[0] - full.point[0]).abs() < 1e-14);
        assert!((end.log_jacobian + mid.log_jacobian - full.log_jacobian).abs() < 1e-14);
    }

    #[test]
    fn pushforward_of_zero_field_is_identity() {
        let base = PiecewiseGaussianDensity::from_base(Gaussian::standard(2));
        let s = one(&[0.0, 0.0], &[1.0, 0.0], 0.0, 1.0);
        let p = pushforward_density(&base, &s).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p.pieces()[0], base.pieces()[0]);
    }

    #[test]
    fn dual_paths_agree_in_two_dimensions() {
        let mut b = ScheduleBuilder::new();
        b.push(vec![0.8, -0.3], vec![1.0, 0.5], 0.2, 0.4);
        b.push(vec![-0.5, 0.6], vec![0.3, -1.0], 0.1, 0.4);
        b.push(vec![0.2, 0.0], vec![0.0, 1.0], 0.0, 0.4);
        let s = b.finish().unwrap();
        let base = PiecewiseGaussianDensity::from_base(Gaussian::standard(2));
        let p = pushforward_density(&base, &s).unwrap();
        for x in [[0.1, 0.2], [-1.0, 0.7], [2.0, -1.5], [0.0, 0.0]] {
            let a = p.ln_density(&x);
            let b = ln_density_at(&base, &s, s.horizon, &x);
            assert!((a - b).abs() < 1e-10, "{a} vs {b} at {x:?}");
        }
        assert!((p.mass().unwrap() - 1.0).abs() < 1e-9);
    }
}
