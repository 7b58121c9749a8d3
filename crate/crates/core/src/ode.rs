//! Adaptive Dormand-Prince 8(5,3) integration, used as an independent
//! reference for the closed-form maps.

use nalgebra::DVector;
use ode_solvers::dop853::Dop853;
use ode_solvers::{OutputType, System};

use crate::error::{Error, Result};
use crate::schedule::ControlSchedule;

struct FnSystem<F>(F);

impl<F> System<f64, DVector<f64>> for FnSystem<F>
where
    F: Fn(f64, &[f64], &mut [f64]),
{
    fn system(&self, t: f64, y: &DVector<f64>, dy: &mut DVector<f64>) {
        (self.0)(t, y.as_slice(), dy.as_mut_slice());
    }
}

/// Integrates `y' = f(t, y)` from `t0` to `t1` and returns `y(t1)`.
pub fn integrate<F>(f: F, t0: f64, t1: f64, y0: &[f64], rtol: f64, atol: f64) -> Result<Vec<f64>>
where
    F: Fn(f64, &[f64], &mut [f64]),
{
    if t1 == t0 {
        return Ok(y0.to_vec());
    }
    let mut solver = Dop853::from_param(
        FnSystem(f),
        t0,
        t1,
        t1 - t0,
        DVector::from_column_slice(y0),
        rtol,
        atol,
        0.9,
        0.0,
        0.333,
        6.0,
        t1 - t0,
        0.0,
        1_000_000,
        1000,
        OutputType::Sparse,
    );
    solver.integrate().map_err(|e| Error::Integration(e.to_string()))?;
    let y = solver.y_out().last().ok_or_else(|| Error::Integration("no output".into()))?;
    Ok(y.as_slice().to_vec())
}

/// Numerically integrates `x' = w (a.x + b)_+` through the schedule up to
/// time `t`, restarting at every switch.
///
/// The last state entry returned is the accumulated divergence
/// `int div v ds`, i.e. the log-Jacobian of the flow.
pub fn integrate_schedule(schedule: &ControlSchedule, x0: &[f64], t: f64, tol: f64) -> Result<Vec<f64>> {
    let d = x0.len();
    let mut state: Vec<f64> = x0.iter().copied().chain(std::iter::once(0.0)).collect();
    for seg in &schedule.segments {
        let end = seg.t1.min(t);
        if end <= seg.t0 {
            break;
        }
        let rate = seg.rate();
        let field = |_t: f64, y: &[f64], dy: &mut [f64]| {
            let s = seg.activation(&y[..d]);
            let on = s > 0.0;
            for k in 0..d {
                dy[k] = if on { seg.w[k] * s } else { 0.0 };
            }
            dy[d] = if on { rate } else { 0.0 };
        };
        state = integrate(field, seg.t0, end, &state, tol, tol)?;
    }
    Ok(state)
}
