//! Point-cloud control for the model `x' = w sigma(x) + b` with a matrix
//! `w`: exact matching of `n` points with ReLU in `4n + 3` constant pieces,
//! and minimum-norm continuous controls along the straight-line path.

use nalgebra::{DMatrix, DVector};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ode::integrate;

/// Points closer than this (relative to the cloud's scale) are rejected.
pub const DISTINCT_TOL: f64 = 1e-12;
/// Required gap (relative to scale) between coordinates that must be ordered.
pub const ORDER_MARGIN: f64 = 1e-6;
/// Draws allowed in [`pick_separating_vector`].
pub const SEPARATION_DRAWS: usize = 1000;
/// Relative threshold on singular values for the rank test.
pub const RANK_TOL: f64 = 1e-10;

/// Componentwise activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Softplus,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Softplus => {
                if x > 30.0 {
                    x
                } else {
                    x.exp().ln_1p()
                }
            }
        }
    }

    pub fn map(self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(x.len(), x.iter().map(|v| self.apply(*v)))
    }
}

/// One constant piece `(w, b)` of the linear-in-parameter model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSegment {
    pub t_start: f64,
    pub t_end: f64,
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl LinearSegment {
    pub fn duration(&self) -> f64 {
        self.t_end - self.t_start
    }

    pub fn velocity(&self, x: &[f64]) -> DVector<f64> {
        &self.w * Activation::Relu.map(x) + &self.b
    }
}

/// `int_0^tau (x0 + slope s)_+ ds`.
fn positive_part_integral(x0: f64, slope: f64, tau: f64) -> f64 {
    let x1 = x0 + slope * tau;
    match (x0 > 0.0, x1 > 0.0) {
        (true, true) => 0.5 * (x0 + x1) * tau,
        (false, false) => 0.0,
        // the crossing splits the interval; only the positive triangle counts
        (true, false) => 0.5 * x0 * (x0 / -slope),
        (false, true) => 0.5 * x1 * (x1 / slope),
    }
}

/// Solves `x' = a x_+ + k` for time `tau`.
fn relu_affine(x0: f64, a: f64, k: f64, tau: f64) -> f64 {
    let (mut x, mut left) = (x0, tau);
    for _ in 0..3 {
        if left <= 0.0 {
            break;
        }
        if x > 0.0 || (x == 0.0 && k > 0.0) {
            let hit = if a * x + k < 0.0 && k < 0.0 {
                if a == 0.0 {
                    x / -k
                } else {
                    (k / (a * x + k)).ln() / a
                }
            } else {
                f64::INFINITY
            };
            if hit >= left {
                let grow = if a == 0.0 { left } else { (a * left).exp_m1() / a };
                return x + (a * x + k) * grow;
            }
            x = 0.0;
            left -= hit;
        } else {
            let hit = if k > 0.0 { -x / k } else { f64::INFINITY };
            if hit >= left {
                return x + k * left;
            }
            x = 0.0;
            left -= hit;
        }
    }
    x
}

fn nonzero_rows(w: &DMatrix<f64>) -> Vec<usize> {
    (0..w.nrows()).filter(|&i| w.row(i).iter().any(|v| *v != 0.0)).collect()
}

fn nonzero_cols(w: &DMatrix<f64>) -> Vec<usize> {
    (0..w.ncols()).filter(|&j| w.column(j).iter().any(|v| *v != 0.0)).collect()
}

/// Exact flow of one piece for the shapes the matching construction uses
/// (translations, one active column, one active row); adaptive integration
/// otherwise.
pub fn linear_segment_flow(seg: &LinearSegment, x: &[f64], tau: f64) -> Vec<f64> {
    let d = x.len();
    let cols = nonzero_cols(&seg.w);
    let rows = nonzero_rows(&seg.w);
    let mut y = x.to_vec();
    if cols.is_empty() || (cols.len() == 1 && seg.w[(cols[0], cols[0])] == 0.0) {
        let (c, mass) = match cols.first() {
            Some(&c) => (Some(c), positive_part_integral(x[c], seg.b[c], tau)),
            None => (None, 0.0),
        };
        for k in 0..d {
            let coupling = c.map_or(0.0, |c| seg.w[(k, c)] * mass);
            y[k] = x[k] + coupling + seg.b[k] * tau;
        }
        return y;
    }
    if rows.len() == 1 && (0..d).all(|k| k == rows[0] || seg.b[k] == 0.0) {
        let r = rows[0];
        let a = seg.w[(r, r)];
        let k: f64 = (0..d).filter(|&j| j != r).map(|j| seg.w[(r, j)] * x[j].max(0.0)).sum::<f64>() + seg.b[r];
        y[r] = relu_affine(x[r], a, k, tau);
        return y;
    }
    linear_segment_ode(seg, x, tau, 1e-12)
}

/// Adaptive integration of one piece.
pub fn linear_segment_ode(seg: &LinearSegment, x: &[f64], tau: f64, tol: f64) -> Vec<f64> {
    integrate(
        |_, y, dy| {
            let v = seg.velocity(y);
            dy.copy_from_slice(v.as_slice());
        },
        0.0,
        tau,
        x,
        tol,
        tol,
    )
    .expect("integration of a constant piece")
}

/// Pushes `x` through every piece in order.
pub fn flow_linear_schedule(segments: &[LinearSegment], x: &[f64]) -> Vec<f64> {
    segments.iter().fold(x.to_vec(), |y, s| linear_segment_flow(s, &y, s.duration()))
}

/// Same as [`flow_linear_schedule`] with adaptive integration of each piece.
pub fn ode_linear_schedule(segments: &[LinearSegment], x: &[f64], tol: f64) -> Vec<f64> {
    segments.iter().fold(x.to_vec(), |y, s| linear_segment_ode(s, &y, s.duration(), tol))
}

fn scale(points: &[Vec<f64>]) -> f64 {
    points.iter().flatten().fold(1.0f64, |m, v| m.max(v.abs()))
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn check_distinct(points: &[Vec<f64>]) -> Result<()> {
    let tol = DISTINCT_TOL * scale(points);
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            if dist(&points[i], &points[j]) <= tol {
                return Err(Error::Distinctness { i, j });
            }
        }
    }
    Ok(())
}

/// A unit vector with positive entries that is not orthogonal to any
/// pairwise difference, drawn deterministically from `seed`.
pub fn pick_separating_vector(points: &[Vec<f64>], seed: u64) -> Result<Vec<f64>> {
    let d = points.first().map_or(0, |p| p.len());
    if d == 0 {
        return Err(Error::Invalid("empty point cloud".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..SEPARATION_DRAWS {
        let mut v: Vec<f64> = (0..d).map(|_| 0.05 + rng.random::<f64>()).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= n);
        let ok = (0..points.len()).all(|i| {
            (i + 1..points.len()).all(|j| {
                let diff: Vec<f64> = points[i].iter().zip(&points[j]).map(|(a, b)| a - b).collect();
                let dot: f64 = diff.iter().zip(&v).map(|(a, b)| a * b).sum();
                dot.abs() > 1e-10 * dist(&points[i], &points[j])
            })
        });
        if ok {
            return Ok(v);
        }
    }
    Err(Error::Separation { draws: SEPARATION_DRAWS })
}

/// A checked ordering chain `x_{(1)} < ... < x_{(m-1)} < 0 < x_{(m)} < ...`
/// of one coordinate, recorded mid-construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderingWitness {
    /// 1-based index of the piece after which the chain was read.
    pub segment: usize,
    pub time: f64,
    /// 0-based coordinate.
    pub coordinate: usize,
    /// Values in the current ordering.
    pub values: Vec<f64>,
    /// Number of entries required to be negative.
    pub negatives: usize,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchingConstants {
    /// Displacement of the initial push into the positive orthant.
    pub beta1: f64,
    /// Displacement of the final pull back from the positive orthant.
    pub beta2: f64,
    /// Exponent `alpha1 v_2` of the second-coordinate separation piece.
    pub alpha1: f64,
    /// Same for the first-coordinate separation of the targets.
    pub alpha2: f64,
    /// Second-coordinate translations of the first induction.
    pub alpha3: Vec<f64>,
    /// First-coordinate translations of the second induction.
    pub alpha4: Vec<f64>,
    pub c: Vec<f64>,
    pub v: Vec<f64>,
    pub u: Vec<f64>,
    /// Preprocessed targets.
    pub y_bar: Vec<Vec<f64>>,
    pub witnesses: Vec<OrderingWitness>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchingPlan {
    pub horizon: f64,
    pub schedule: Vec<LinearSegment>,
    /// Order by second coordinate after the separation piece.
    pub order_second: Vec<usize>,
    /// Order by first coordinate after the first induction.
    pub order_first: Vec<usize>,
    pub constants: Option<MatchingConstants>,
    /// Largest `|Phi(x_i) - y_i| / max(1, |y_i|)` under the exact flow.
    pub landing_error: f64,
}

impl MatchingPlan {
    pub fn switch_count(&self) -> usize {
        self.schedule.len().saturating_sub(1)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

struct Builder {
    d: usize,
    horizon: f64,
    pieces: usize,
    segments: Vec<LinearSegment>,
    state: Vec<Vec<f64>>,
}

impl Builder {
    fn knot(&self, k: usize) -> f64 {
        if k == self.pieces {
            self.horizon
        } else {
            self.horizon * k as f64 / self.pieces as f64
        }
    }

    /// Duration of the next piece exactly as the flow will see it.
    fn dt(&self) -> f64 {
        let k = self.segments.len();
        self.knot(k + 1) - self.knot(k)
    }

    fn push(&mut self, w: DMatrix<f64>, b: DVector<f64>) {
        let k = self.segments.len();
        let seg = LinearSegment { t_start: self.knot(k), t_end: self.knot(k + 1), w, b };
        let tau = seg.duration();
        for x in self.state.iter_mut() {
            *x = linear_segment_flow(&seg, x, tau);
        }
        self.segments.push(seg);
    }

    fn idle(&mut self) {
        self.push(DMatrix::zeros(self.d, self.d), DVector::zeros(self.d));
    }

    fn translate(&mut self, shift: &[f64]) {
        let dt = self.dt();
        let b = DVector::from_iterator(self.d, shift.iter().map(|s| s / dt));
        self.push(DMatrix::zeros(self.d, self.d), b);
    }

    fn time(&self) -> f64 {
        self.knot(self.segments.len())
    }
}

/// `(alpha / dt) e_row v^T`, the separation piece.
fn separation_matrix(d: usize, row: usize, v: &[f64], rate: f64) -> DMatrix<f64> {
    let mut w = DMatrix::zeros(d, d);
    for k in 0..d {
        w[(row, k)] = rate * v[k];
    }
    w
}

fn min_gap(vals: &[f64]) -> f64 {
    let mut s = vals.to_vec();
    s.sort_by(f64::total_cmp);
    s.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min)
}

/// Number of candidate vectors tried when tuning a separation piece.
pub const SEPARATION_CANDIDATES: u64 = 32;

/// Picks the separating vector and strength `alpha` (from `2^2` down to
/// `2^-12`) that leave coordinate `row` with the largest smallest gap
/// relative to its spread. Small gaps make the later couplings steep.
fn tune_separation(points: &[Vec<f64>], row: usize, seed: u64) -> Result<(Vec<f64>, f64)> {
    let d = points[0].len();
    let margin = ORDER_MARGIN * scale(points);
    let mut best: Option<(f64, Vec<f64>, f64)> = None;
    for k in 0..SEPARATION_CANDIDATES {
        let v = pick_separating_vector(points, seed.wrapping_mul(SEPARATION_CANDIDATES).wrapping_add(k))?;
        for e in -12..=2 {
            let alpha = f64::powi(2.0, e);
            let seg = LinearSegment { t_start: 0.0, t_end: 1.0, w: separation_matrix(d, row, &v, alpha / v[row]), b: DVector::zeros(d) };
            let vals: Vec<f64> = points.iter().map(|x| linear_segment_flow(&seg, x, 1.0)[row]).collect();
            let gap = min_gap(&vals);
            if gap <= margin {
                continue;
            }
            let spread = vals.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v)) - vals.iter().fold(f64::INFINITY, |m, v| m.min(*v));
            let quality = gap / spread;
            if best.as_ref().map_or(true, |b| quality > b.0) {
                best = Some((quality, v.clone(), alpha));
            }
        }
    }
    best.map(|(_, v, a)| (v, a)).ok_or(Error::Separation { draws: SEPARATION_CANDIDATES as usize })
}

fn argsort(vals: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..vals.len()).collect();
    idx.sort_by(|&i, &j| vals[i].total_cmp(&vals[j]).then(i.cmp(&j)));
    idx
}

fn witness(b: &Builder, order: &[usize], coordinate: usize, negatives: usize) -> OrderingWitness {
    let values: Vec<f64> = order.iter().map(|&i| b.state[i][coordinate]).collect();
    let sorted = values.windows(2).all(|w| w[0] < w[1]);
    let signs = values.iter().enumerate().all(|(k, v)| if k < negatives { *v < 0.0 } else { *v > 0.0 });
    OrderingWitness { segment: b.segments.len(), time: b.time(), coordinate, values, negatives, holds: sorted && signs }
}

/// One induction pass: for each point in `order` after the first, translate
/// along `pivot` so that exactly it and the later points are positive there,
/// then move the coordinates in `moved` of the positive side so that it
/// lands on `y_bar + c`.
fn induction(
    b: &mut Builder,
    order: &[usize],
    pivot: usize,
    moved: &[usize],
    y_bar: &[Vec<f64>],
    c: &mut [f64],
    shifts: &mut Vec<f64>,
    witnesses: &mut Vec<OrderingWitness>,
) {
    let d = b.d;
    b.idle();
    for m in 1..order.len() {
        let (prev, cur) = (b.state[order[m - 1]][pivot], b.state[order[m]][pivot]);
        // hyperplane just above the matched block keeps the couplings small
        let s = prev + 0.001 * (cur - prev);
        let mut shift = vec![0.0; d];
        shift[pivot] = -s;
        b.translate(&shift);
        c[pivot] -= s;
        shifts.push(s);
        witnesses.push(witness(b, order, pivot, m));

        let i = order[m];
        let height = b.state[i][pivot];
        let dt = b.dt();
        let mut w = DMatrix::zeros(d, d);
        for &k in moved {
            w[(k, pivot)] = (y_bar[i][k] + c[k] - b.state[i][k]) / (dt * height);
        }
        b.push(w, DVector::zeros(d));
    }
}

/// Piecewise-constant `(w, b)` on `[0, T]` with at most `4n + 3` pieces
/// sending every `x_i` to `y_i` under `x' = w x_+ + b`.
pub fn exact_match(xs: &[Vec<f64>], ys: &[Vec<f64>], horizon: f64, seed: u64) -> Result<MatchingPlan> {
    let n = xs.len();
    if n == 0 || ys.len() != n {
        return Err(Error::Invalid(format!("need equally many points, got {} and {}", n, ys.len())));
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::Invalid(format!("horizon must be positive, got {horizon}")));
    }
    let d = xs[0].len();
    for p in xs.iter().chain(ys) {
        if p.len() != d {
            return Err(Error::Dimension { expected: d, got: p.len() });
        }
    }
    check_distinct(xs)?;
    check_distinct(ys)?;

    if n == 1 {
        let b = DVector::from_iterator(d, ys[0].iter().zip(&xs[0]).map(|(y, x)| (y - x) / horizon));
        let schedule = vec![LinearSegment { t_start: 0.0, t_end: horizon, w: DMatrix::zeros(d, d), b }];
        return Ok(finish(xs, ys, horizon, schedule, vec![0], vec![0], None));
    }
    if d < 2 {
        return Err(Error::UnsupportedDimension { d, reason: "matching two or more points needs d >= 2".into() });
    }

    let pieces = 4 * n + 3;
    let mut b = Builder { d, horizon, pieces, segments: Vec::with_capacity(pieces), state: xs.to_vec() };
    let mut witnesses = Vec::new();

    // Step 1: push into the positive orthant and separate the second coordinate
    let beta1 = 2.0 * (1.0 + scale(xs));
    b.translate(&vec![beta1; d]);
    let (v, alpha1) = tune_separation(&b.state, 1, seed)?;
    let dt = b.dt();
    b.push(separation_matrix(d, 1, &v, alpha1 / (v[1] * dt)), DVector::zeros(d));

    // targets run backwards through the last two pieces
    let beta2 = 2.0 * (1.0 + scale(ys));
    let lifted: Vec<Vec<f64>> = ys.iter().map(|y| y.iter().map(|v| v + beta2).collect()).collect();
    let (u, alpha2) = tune_separation(&lifted, 0, seed.wrapping_add(1))?;
    // the reversed piece must see the same duration as the forward one
    let back_dt = b.knot(pieces - 1) - b.knot(pieces - 2);
    let back_w = separation_matrix(d, 0, &u, alpha2 / (u[0] * back_dt));
    let back = LinearSegment { t_start: 0.0, t_end: back_dt, w: back_w, b: DVector::zeros(d) };
    let y_bar: Vec<Vec<f64>> = lifted.iter().map(|y| linear_segment_flow(&back, y, back_dt)).collect();

    // Step 2: match the first coordinate, pivoting on the second
    let order_second = argsort(&b.state.iter().map(|x| x[1]).collect::<Vec<_>>());
    let first = order_second[0];
    let mut c: Vec<f64> = (0..d).map(|k| b.state[first][k] - y_bar[first][k]).collect();
    let mut alpha3 = Vec::new();
    induction(&mut b, &order_second, 1, &[0], &y_bar, &mut c, &mut alpha3, &mut witnesses);

    // Step 3: match the remaining coordinates, pivoting on the first
    let order_first = argsort(&b.state.iter().map(|x| x[0]).collect::<Vec<_>>());
    let first = order_first[0];
    for k in 0..d {
        c[k] = b.state[first][k] - y_bar[first][k];
    }
    let mut alpha4 = Vec::new();
    let rest: Vec<usize> = (1..d).collect();
    induction(&mut b, &order_first, 0, &rest, &y_bar, &mut c, &mut alpha4, &mut witnesses);

    let neg_c: Vec<f64> = c.iter().map(|v| -v).collect();
    b.translate(&neg_c);
    b.push(-back.w.clone(), DVector::zeros(d));
    b.translate(&vec![-beta2; d]);
    debug_assert_eq!(b.segments.len(), pieces);

    let constants = MatchingConstants { beta1, beta2, alpha1, alpha2, alpha3, alpha4, c, v, u, y_bar, witnesses };
    Ok(finish(xs, ys, horizon, b.segments, order_second, order_first, Some(constants)))
}

fn finish(
    xs: &[Vec<f64>],
    ys: &[Vec<f64>],
    horizon: f64,
    schedule: Vec<LinearSegment>,
    order_second: Vec<usize>,
    order_first: Vec<usize>,
    constants: Option<MatchingConstants>,
) -> MatchingPlan {
    let landing_error = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let z = flow_linear_schedule(&schedule, x);
            dist(&z, y) / dist(y, &vec![0.0; y.len()]).max(1.0)
        })
        .fold(0.0, f64::max);
    MatchingPlan { horizon, schedule, order_second, order_first, constants, landing_error }
}

/// Settings of [`minimum_norm_path`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinNormOptions {
    pub nodes: usize,
    /// Solve for `[w b]` on the lifted state `(x, 1)` instead of `w` alone.
    pub augmented: bool,
    /// Landing tolerance; the grid is doubled until integration meets it.
    pub tolerance: f64,
    pub max_refinements: usize,
}

impl Default for MinNormOptions {
    fn default() -> Self {
        Self { nodes: 256, augmented: true, tolerance: 1e-6, max_refinements: 4 }
    }
}

/// Control sampled on a uniform grid, linear in between.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlPath {
    pub horizon: f64,
    pub activation: Activation,
    pub times: Vec<f64>,
    pub w: Vec<DMatrix<f64>>,
    pub b: Vec<DVector<f64>>,
}

impl ControlPath {
    pub fn control_at(&self, t: f64) -> (DMatrix<f64>, DVector<f64>) {
        let n = self.times.len() - 1;
        let s = (t / self.horizon).clamp(0.0, 1.0) * n as f64;
        let i = (s.floor() as usize).min(n - 1);
        let f = s - i as f64;
        (&self.w[i] * (1.0 - f) + &self.w[i + 1] * f, &self.b[i] * (1.0 - f) + &self.b[i + 1] * f)
    }

    pub fn velocity(&self, t: f64, x: &[f64]) -> DVector<f64> {
        let (w, b) = self.control_at(t);
        w * self.activation.map(x) + b
    }

    /// States at every grid time, integrating node to node.
    pub fn trajectory(&self, x0: &[f64], tol: f64) -> Result<Vec<Vec<f64>>> {
        let mut out = vec![x0.to_vec()];
        for k in 0..self.times.len() - 1 {
            let (t0, t1) = (self.times[k], self.times[k + 1]);
            let next = integrate(
                |t, y, dy| dy.copy_from_slice(self.velocity(t, y).as_slice()),
                t0,
                t1,
                out.last().unwrap(),
                tol,
                tol,
            )?;
            out.push(next);
        }
        Ok(out)
    }

    /// `max_t |[w(t) b(t)]|_2`.
    pub fn max_norm(&self) -> f64 {
        self.w
            .iter()
            .zip(&self.b)
            .map(|(w, b)| {
                let m = DMatrix::from_fn(w.nrows(), w.ncols() + 1, |i, j| if j < w.ncols() { w[(i, j)] } else { b[i] });
                m.singular_values().max()
            })
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinNormPath {
    pub path: ControlPath,
    /// Largest `|x_i(T) - y_i|` after integration.
    pub landing_error: f64,
    /// `T max_t |w(t)| / max_i |x_i - y_i|_1`.
    pub empirical_c: f64,
    /// `max_s |S(s)^+|_2`, the right-inverse bound along the path.
    pub uniform_bound: f64,
    /// `max_s |w(s) (I - S S^+)|`, zero for a minimum-norm solution.
    pub characterization_residual: f64,
    pub refinements: usize,
}

fn feature_matrix(points: &[Vec<f64>], activation: Activation, augmented: bool) -> DMatrix<f64> {
    let d = points[0].len();
    let rows = if augmented { d + 1 } else { d };
    DMatrix::from_fn(rows, points.len(), |k, i| if k < d { activation.apply(points[i][k]) } else { activation.apply(1.0) })
}

struct NodeSolve {
    w: DMatrix<f64>,
    b: DVector<f64>,
    pinv_norm: f64,
    residual: f64,
}

fn solve_node(s: f64, xs: &[Vec<f64>], ys: &[Vec<f64>], horizon: f64, activation: Activation, augmented: bool) -> Result<NodeSolve> {
    let d = xs[0].len();
    let pts: Vec<Vec<f64>> = xs.iter().zip(ys).map(|(x, y)| x.iter().zip(y).map(|(a, b)| (1.0 - s) * a + s * b).collect()).collect();
    let feat = feature_matrix(&pts, activation, augmented);
    let svd = feat.clone().svd(true, true);
    let sv = svd.singular_values.clone();
    let (smax, smin) = (sv.max(), sv.min());
    if !(smin > RANK_TOL * smax.max(f64::MIN_POSITIVE)) {
        return Err(Error::Rank { s, singular_values: sv.iter().copied().collect() });
    }
    let pinv = svd.pseudo_inverse(RANK_TOL * smax).map_err(|e| Error::Invalid(e.to_string()))?;
    let rows = feat.nrows();
    let vel = DMatrix::from_fn(rows, xs.len(), |k, i| if k < d { (ys[i][k] - xs[i][k]) / horizon } else { 0.0 });
    let full = &vel * &pinv;
    let proj = DMatrix::identity(rows, rows) - &feat * &pinv;
    let residual = (&full * proj).abs().max();
    let w = full.view((0, 0), (d, d)).into_owned();
    let b = if augmented { full.view((0, d), (d, 1)).column(0) * activation.apply(1.0) } else { DVector::zeros(d) };
    Ok(NodeSolve { w, b, pinv_norm: 1.0 / smin, residual })
}

/// Minimum-norm control steering each `x_i` to `y_i` along the straight
/// line `(1 - t/T) x_i + (t/T) y_i` under `x' = w(t) sigma(x) (+ b(t))`.
pub fn minimum_norm_path(
    xs: &[Vec<f64>],
    ys: &[Vec<f64>],
    horizon: f64,
    activation: Activation,
    opts: &MinNormOptions,
) -> Result<MinNormPath> {
    let n = xs.len();
    if n == 0 || ys.len() != n {
        return Err(Error::Invalid("need equally many points".into()));
    }
    let d = xs[0].len();
    let dim = if opts.augmented { d + 1 } else { d };
    if dim < n {
        return Err(Error::Invalid(format!("need at least {n} features, have {dim}")));
    }
    if !(horizon > 0.0) || opts.nodes < 2 {
        return Err(Error::Invalid("horizon must be positive and the grid needs two nodes".into()));
    }
    let gap = xs.iter().zip(ys).map(|(x, y)| x.iter().zip(y).map(|(a, b)| (a - b).abs()).sum::<f64>()).fold(0.0, f64::max);

    let mut nodes = opts.nodes;
    let mut refinements = 0;
    loop {
        let mut path = ControlPath { horizon, activation, times: Vec::new(), w: Vec::new(), b: Vec::new() };
        let (mut bound, mut residual) = (0.0f64, 0.0f64);
        for k in 0..nodes {
            let s = k as f64 / (nodes - 1) as f64;
            let node = solve_node(s, xs, ys, horizon, activation, opts.augmented)?;
            bound = bound.max(node.pinv_norm);
            residual = residual.max(node.residual);
            path.times.push(s * horizon);
            path.w.push(node.w);
            path.b.push(node.b);
        }
        let mut landing = 0.0f64;
        for (x, y) in xs.iter().zip(ys) {
            let traj = path.trajectory(x, 1e-12)?;
            landing = landing.max(dist(traj.last().unwrap(), y));
        }
        if landing <= opts.tolerance || refinements >= opts.max_refinements {
            let max_w = path.max_norm();
            let empirical_c = if gap > 0.0 { horizon * max_w / gap } else { 0.0 };
            return Ok(MinNormPath { path, landing_error: landing, empirical_c, uniform_bound: bound, characterization_residual: residual, refinements });
        }
        nodes = 2 * nodes - 1;
        refinements += 1;
    }
}

/// Sampling law for [`genericity_probe`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SampleLaw {
    StandardNormal,
    /// Uniform on `(0, hi)^d`.
    PositiveUniform { hi: f64 },
    /// `t * direction` with `t` uniform on `(0.5, 2)`: a degenerate law.
    Ray { direction: Vec<f64> },
}

/// Fraction of `trials` draws of `n` points in `R^d` whose activated
/// feature matrix has full column rank.
pub fn genericity_probe(n: usize, d: usize, activation: Activation, law: &SampleLaw, trials: usize, seed: u64) -> Result<f64> {
    if n == 0 || d < n || trials == 0 {
        return Err(Error::Invalid(format!("need 1 <= n <= d and trials > 0, got n={n}, d={d}")));
    }
    if let SampleLaw::Ray { direction } = law {
        if direction.len() != d {
            return Err(Error::Dimension { expected: d, got: direction.len() });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0;
    for _ in 0..trials {
        let pts: Vec<Vec<f64>> = (0..n)
            .map(|_| match law {
                SampleLaw::StandardNormal => (0..d).map(|_| StandardNormal.sample(&mut rng)).collect(),
                SampleLaw::PositiveUniform { hi } => (0..d).map(|_| hi * rng.random::<f64>()).collect(),
                SampleLaw::Ray { direction } => {
                    let t = 0.5 + 1.5 * rng.random::<f64>();
                    direction.iter().map(|v| t * v).collect()
                }
            })
            .collect();
        let sv = feature_matrix(&pts, activation, false).singular_values();
        if sv.min() > RANK_TOL * sv.max() {
            hits += 1;
        }
    }
    Ok(hits as f64 / trials as f64)
}
