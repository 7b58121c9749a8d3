//! Control synthesis: a TV stage on `[0, T/2]` followed by tail taming on
//! `[T/2, T]`, with every certificate constant measured and reported.

pub mod tail;
pub mod tv1d;
pub mod tvnd;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::density::{BoxDomain, Density, Gaussian};
use crate::divergence::{pinsker_certificates, tv, Estimator, PinskerCertificate};
use crate::error::{Error, Result};
use crate::flow::{pushforward_density, Pushforward};
use crate::grid::box_mass;
use crate::piecewise::PiecewiseGaussianDensity;
use crate::quadrature::halton_in;
use crate::schedule::ControlSchedule;
use crate::target::{TailMode, TargetSpec};

pub use tail::{
    certify_tail_domination, envelope_density, envelope_ln_alpha, envelope_sigma, omega_threshold,
    tail_schedule, tail_taming_segments, EnvelopeMode, TailCertificate, TailDirection, TailPlan, OMEGA_MARGIN,
};
pub use tv1d::{tv_stage_1d, TvStage1d};
pub use tvnd::{tv_stage_nd, NdOptions, TvStageNd};

/// Which relative entropy is driven below `epsilon`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// `KL(rho_* || rho(T))`.
    Kl,
    /// `KL(rho(T) || rho_*)`.
    ReverseKl,
}

impl Objective {
    fn envelope(self) -> (EnvelopeMode, TailDirection, TailMode) {
        match self {
            Objective::Kl => (EnvelopeMode::Lower, TailDirection::DominateTarget, TailMode::UpperBounded),
            Objective::ReverseKl => (EnvelopeMode::Upper, TailDirection::DominatedByTarget, TailMode::LowerBounded),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SynthesisOptions {
    /// Number of times `eps_tv` is halved before giving up (1D only).
    pub max_attempts: usize,
    pub nd: NdOptions,
    /// Seed for Monte Carlo divergence estimates in `d >= 3`.
    pub seed: u64,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        Self { max_attempts: 6, nd: NdOptions::default(), seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TvStageKind {
    Constructive1d,
    Search,
}

/// `|rho(T) - rho_*|_1 <= interior gap + both exterior masses` on
/// `[-M_bar, M_bar]^d`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TvDecomposition {
    pub interior_gap: f64,
    pub exterior_solution: f64,
    pub exterior_target: f64,
    pub total: f64,
    /// Measured TV does not exceed `total` (up to the quadrature bar).
    pub bound_holds: bool,
    /// `total < 3 eps_tv`.
    pub within_three_eps: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisReport {
    pub objective: Objective,
    pub dim: usize,
    pub epsilon: f64,
    pub horizon: f64,
    pub success: bool,
    pub schedule: ControlSchedule,
    pub switch_count: usize,
    pub tv_stage: TvStageKind,
    pub eps_tv: f64,
    /// L1 gap at `T/2`.
    pub stage_tv: f64,
    pub baseline_tv: Option<f64>,
    pub truncation_radius: Option<f64>,
    pub grid_step: Option<f64>,
    pub switch_budget: Option<usize>,
    pub tail_plan: TailPlan,
    pub omega_threshold: f64,
    pub tail_worst_ratio: f64,
    /// L1 gap at `T`.
    pub tv_achieved: f64,
    pub kl_achieved: f64,
    pub kl_error_bar: f64,
    /// `sup rho_* / rho(T)` for `kl`, `sup rho(T) / rho_*` for `reverse_kl`.
    pub sup_ratio: f64,
    pub decomposition: TvDecomposition,
    pub pinsker: PinskerCertificate,
}

const CSV_HEADER: &str = "objective,dim,epsilon,horizon,success,switch_count,eps_tv,stage_tv,tv_achieved,kl_achieved,kl_error_bar,sup_ratio,sigma_env,alpha,omega,m_bar,m_bar_bar";

impl SynthesisReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn csv_header() -> &'static str {
        CSV_HEADER
    }

    pub fn csv_row(&self) -> String {
        let p = &self.tail_plan;
        let obj = match self.objective {
            Objective::Kl => "kl",
            Objective::ReverseKl => "reverse_kl",
        };
        format!(
            "{obj},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.dim,
            self.epsilon,
            self.horizon,
            self.success,
            self.switch_count,
            self.eps_tv,
            self.stage_tv,
            self.tv_achieved,
            self.kl_achieved,
            self.kl_error_bar,
            self.sup_ratio,
            p.sigma_env,
            p.alpha,
            p.omega,
            p.m_bar,
            p.m_bar_bar
        )
    }
}

fn estimator(d: usize, seed: u64) -> Estimator {
    match d {
        1 => Estimator::quadrature(1024),
        2 => Estimator::quadrature(64),
        _ => Estimator::monte_carlo(1 << 16, seed),
    }
}

/// Points at which the envelope amplitude is fitted: a grid on the box plus
/// rays out to `16 M_bar`.
fn envelope_points(d: usize, m_bar: f64) -> Vec<Vec<f64>> {
    let mut pts = match d {
        1 => (0..=2000).map(|i| vec![-m_bar + 2.0 * m_bar * i as f64 / 2000.0]).collect(),
        2 => {
            let n = 101;
            let step = 2.0 * m_bar / (n - 1) as f64;
            (0..n * n).map(|i| vec![-m_bar + (i / n) as f64 * step, -m_bar + (i % n) as f64 * step]).collect()
        }
        _ => halton_in(&BoxDomain::cube(m_bar, d), 4096),
    };
    for u in crate::divergence::ray_directions(d, 32 * d) {
        for k in 0..=16 {
            let s = m_bar * f64::powf(2.0, k as f64 / 4.0);
            pts.push(u.iter().map(|v| v * s).collect());
        }
    }
    pts
}

struct Stage {
    schedule: ControlSchedule,
    tv: f64,
    solution: PiecewiseGaussianDensity,
    kind: TvStageKind,
    baseline: Option<f64>,
    truncation: Option<(f64, f64, usize)>,
}

fn run_tv_stage(base: &Gaussian, target: &TargetSpec, eps_tv: f64, half: f64, opts: &SynthesisOptions) -> Result<Stage> {
    if base.dim() == 1 {
        let s = tv_stage_1d(base, target, eps_tv, half)?;
        Ok(Stage {
            schedule: s.schedule,
            tv: s.tv,
            solution: s.solution,
            kind: TvStageKind::Constructive1d,
            baseline: None,
            truncation: Some((s.r, s.h, s.budget)),
        })
    } else {
        let s = tv_stage_nd(base, target, eps_tv, half, opts.nd)?;
        let initial = PiecewiseGaussianDensity::from_base(base.clone());
        let solution = pushforward_density(&initial, &s.schedule)?;
        Ok(Stage {
            schedule: s.schedule,
            tv: s.tv,
            solution,
            kind: TvStageKind::Search,
            baseline: Some(s.baseline_tv),
            truncation: None,
        })
    }
}

fn attempt(
    base: &Gaussian,
    target: &TargetSpec,
    eps: f64,
    horizon: f64,
    objective: Objective,
    eps_tv: f64,
    opts: &SynthesisOptions,
) -> Result<SynthesisReport> {
    let d = base.dim();
    let half = 0.5 * horizon;
    let (env_mode, direction, _) = objective.envelope();
    let stage = run_tv_stage(base, target, eps_tv, half, opts)?;

    let sigma_env = envelope_sigma(&stage.solution, env_mode)?;
    let threshold = match objective {
        Objective::Kl => omega_threshold(d, horizon, target.sigma_tail, sigma_env),
        Objective::ReverseKl => omega_threshold(d, horizon, sigma_env, target.sigma_tail),
    };

    let mut m_bar = target.radius.max(1.0);
    for _ in 0..30 {
        let inside = box_mass(&stage.solution, m_bar, opts.seed)?.min(box_mass(target.density.as_ref(), m_bar, opts.seed)?);
        if inside > 1.0 - eps_tv {
            break;
        }
        m_bar *= 2.0;
    }

    let pts = envelope_points(d, m_bar);
    let ln_alpha = envelope_ln_alpha(|x| stage.solution.ln_density(x), sigma_env, &pts, env_mode);
    if !ln_alpha.is_finite() {
        return Err(Error::Synthesis(format!("envelope amplitude is not finite (ln alpha = {ln_alpha})")));
    }
    let mut plan = TailPlan { sigma_env, alpha: ln_alpha.exp(), omega: threshold, m_bar, m_bar_bar: m_bar, direction };
    let tail = tail_schedule(d, m_bar, plan.omega, horizon - half, direction);
    let env_t = pushforward_density(&envelope_density(d, plan.alpha, sigma_env), &tail)?;
    let cert = certify_tail_domination(&env_t, target, &plan)?;
    plan.m_bar_bar = cert.m_bar_bar;

    let schedule = stage.schedule.then(&tail)?;
    let rho_t: Arc<dyn Density> = if d == 1 {
        Arc::new(pushforward_density(&stage.solution, &tail)?)
    } else {
        Arc::new(Pushforward::new(base.clone(), schedule.clone(), horizon))
    };
    let rho_star = target.density.as_ref();
    let est = estimator(d, opts.seed);
    let pinsker = match objective {
        Objective::Kl => pinsker_certificates(rho_star, rho_t.as_ref(), &est)?,
        Objective::ReverseKl => pinsker_certificates(rho_t.as_ref(), rho_star, &est)?,
    };

    let interior = tv(rho_t.as_ref(), rho_star, &est.clone().with_domain(BoxDomain::cube(m_bar, d)))?;
    let ext_t = (1.0 - box_mass(rho_t.as_ref(), m_bar, opts.seed)?).max(0.0);
    let ext_star = (1.0 - box_mass(rho_star, m_bar, opts.seed)?).max(0.0);
    let total = interior.value + ext_t + ext_star;
    let decomposition = TvDecomposition {
        interior_gap: interior.value,
        exterior_solution: ext_t,
        exterior_target: ext_star,
        total,
        bound_holds: pinsker.tv.value <= total + 3.0 * (pinsker.tv.error_bar + interior.error_bar) + 1e-9,
        within_three_eps: total < 3.0 * eps_tv,
    };

    let kl_achieved = pinsker.kl.value;
    let success = kl_achieved <= eps && pinsker.sup_ratio.is_finite();
    Ok(SynthesisReport {
        objective,
        dim: d,
        epsilon: eps,
        horizon,
        success,
        switch_count: schedule.switch_count(),
        schedule,
        tv_stage: stage.kind,
        eps_tv,
        stage_tv: stage.tv,
        baseline_tv: stage.baseline,
        truncation_radius: stage.truncation.map(|t| t.0),
        grid_step: stage.truncation.map(|t| t.1),
        switch_budget: stage.truncation.map(|t| t.2),
        tail_plan: plan,
        omega_threshold: threshold,
        tail_worst_ratio: cert.worst_ratio,
        tv_achieved: pinsker.tv.value,
        kl_achieved,
        kl_error_bar: pinsker.kl.error_bar,
        sup_ratio: pinsker.sup_ratio,
        decomposition,
        pinsker,
    })
}

/// Builds a schedule on `[0, T]` steering `N(m_B, Sigma_B)` towards the
/// target in the chosen relative entropy.
///
/// In 1D the TV tolerance starts at `epsilon` and is halved until the
/// measured divergence is below `epsilon`. In higher dimension the TV stage
/// is a bounded search and the report may come back with `success = false`.
pub fn synthesize(
    base: &Gaussian,
    target: &TargetSpec,
    epsilon: f64,
    horizon: f64,
    objective: Objective,
    opts: &SynthesisOptions,
) -> Result<SynthesisReport> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::Invalid(format!("epsilon must be positive, got {epsilon}")));
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::Invalid(format!("horizon must be positive, got {horizon}")));
    }
    if base.dim() != target.dim() {
        return Err(Error::Dimension { expected: base.dim(), got: target.dim() });
    }
    let (_, _, mode) = objective.envelope();
    if target.mode != mode {
        return Err(Error::Invalid(format!("objective {objective:?} needs a target with tail mode {mode:?}")));
    }
    target.validate_tail()?;

    let attempts = if base.dim() == 1 { opts.max_attempts.max(1) } else { 1 };
    let mut eps_tv = epsilon.min(0.5);
    let mut last = None;
    for _ in 0..attempts {
        let report = attempt(base, target, epsilon, horizon, objective, eps_tv, opts)?;
        if report.success {
            return Ok(report);
        }
        last = Some(report);
        eps_tv *= 0.5;
    }
    Ok(last.expect("at least one attempt"))
}
