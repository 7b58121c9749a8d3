use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use contflow::density::{BoxDomain, Density, Gaussian};
use contflow::divergence::{
    estimates_csv, hellinger_sq, kl, pinsker_certificates, renyi, tv, DivergenceEstimate, Estimator,
    PinskerCertificate,
};
use contflow::flow::{flow_forward, ln_density_at, segment_flow, Pushforward};
use contflow::ode::integrate_schedule;
use contflow::points::{
    exact_match, flow_linear_schedule, linear_segment_flow, minimum_norm_path, ode_linear_schedule, Activation,
};
use contflow::quadrature::integrate_1d;
use contflow::schedule::ControlSchedule;
use contflow::synthesis::{synthesize, NdOptions, Objective, SynthesisOptions, SynthesisReport};
use contflow::target::TargetSpec;
use contflow::xlogx::{tail_conversion_check, time_reversed_check, TailConversion};
use serde_json::{json, Value};

use crate::config::{
    check_positive, load, relative_to, tail_radius, DivergenceConfig, DivergenceName, FlowEvalConfig, PointsConfig,
    PointsMode, SynthesizeConfig, XlogxConfig,
};
use crate::error::CliError;
use crate::svg::{line_plot, Series};

/// Largest closed-form landing residual accepted for an exact matching.
pub const LANDING_TOLERANCE: f64 = 1e-8;
/// Largest integrated residual accepted for matchings and min-norm paths.
pub const TRAJECTORY_TOLERANCE: f64 = 1e-6;
const PLOT_POINTS: usize = 241;

/// Artifact directory; files are written whole, one at a time.
pub struct Output {
    dir: PathBuf,
    written: Vec<String>,
}

impl Output {
    pub fn new(dir: PathBuf) -> Self {
        Self { dir, written: Vec::new() }
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<(), CliError> {
        std::fs::create_dir_all(&self.dir)?;
        std::fs::write(self.dir.join(name), contents)?;
        self.written.push(name.to_string());
        Ok(())
    }

    fn files(&self) -> Value {
        json!(self.written)
    }
}

fn pretty(v: &impl serde::Serialize) -> String {
    serde_json::to_string_pretty(v).expect("plain data serializes") + "\n"
}

fn grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

pub fn synthesize_cmd(path: &Path, overrides: &[(String, Value)], out: &mut Output) -> Result<Value, CliError> {
    let cfg: SynthesizeConfig = load(path, overrides)?;
    check_positive("epsilon", cfg.epsilon)?;
    check_positive("horizon", cfg.horizon)?;
    check_positive("target.sigma_tail", cfg.target.sigma_tail)?;
    let base = cfg.base.build("base")?;
    let density = cfg.target.density.build("target.density")?;
    if density.dim() != base.dim() {
        return Err(CliError::validation(
            "target.density",
            format!("dimension {} does not match base dimension {}", density.dim(), base.dim()),
        ));
    }
    let d = base.dim();
    if d >= 2 && cfg.seed.is_none() {
        return Err(CliError::validation("seed", "the search stage in d >= 2 needs an explicit seed"));
    }
    let radius = tail_radius(density.clone(), &cfg.target)?;
    let target = TargetSpec::new(density, cfg.target.sigma_tail, radius, cfg.target.tail_mode)?;
    let defaults = SynthesisOptions::default();
    let seed = cfg.seed.unwrap_or(0);
    let opts = SynthesisOptions {
        max_attempts: cfg.max_attempts.unwrap_or(defaults.max_attempts),
        nd: NdOptions {
            seed,
            iterations: cfg.search_iterations.unwrap_or(defaults.nd.iterations),
            ..defaults.nd
        },
        seed,
    };
    let report = synthesize(&base, &target, cfg.epsilon, cfg.horizon, cfg.objective, &opts)?;

    out.write("report.json", &(report.to_json()? + "\n"))?;
    out.write("schedule.json", &(report.schedule.to_json()? + "\n"))?;
    let kl_name = match cfg.objective {
        Objective::Kl => "kl",
        Objective::ReverseKl => "reverse_kl",
    };
    let rows = vec![(kl_name.to_string(), report.pinsker.kl), ("tv".to_string(), report.pinsker.tv)];
    out.write("divergences.csv", &estimates_csv(&rows))?;
    out.write("report.csv", &format!("{}\n{}\n", SynthesisReport::csv_header(), report.csv_row()))?;
    if let Some(svg) = synthesis_plot(&base, &target, &report) {
        out.write("densities.svg", &svg)?;
    }

    let summary = json!({
        "command": "synthesize",
        "success": report.success,
        "objective": kl_name,
        "kl_achieved": report.kl_achieved,
        "kl_error_bar": report.kl_error_bar,
        "tv_achieved": report.tv_achieved,
        "switch_count": report.switch_count,
        "files": out.files(),
    });
    if !report.success {
        return Err(CliError::failure(
            "synthesis",
            format!("achieved {kl_name} {:.4e} above epsilon {}", report.kl_achieved, cfg.epsilon),
        ));
    }
    Ok(summary)
}

/// `rho_B`, `rho(T/2)`, `rho(T)` and `rho_*` in 1D, first-coordinate
/// marginals in 2D, nothing above.
fn synthesis_plot(base: &Gaussian, target: &TargetSpec, report: &SynthesisReport) -> Option<String> {
    let d = base.dim();
    if d > 2 {
        return None;
    }
    let half = Pushforward::new(base.clone(), report.schedule.clone(), 0.5 * report.horizon);
    let end = Pushforward::new(base.clone(), report.schedule.clone(), report.horizon);
    let mut domain: BoxDomain = base.support_box(1e-4)?;
    if let Some(b) = target.density.support_box(1e-4) {
        domain = domain.union(&b);
    }
    let curves: [(&str, &dyn Density); 4] =
        [("rho_B", base), ("rho(T/2)", &half), ("rho(T)", &end), ("target", target.density.as_ref())];
    let xs = grid(domain.lo[0], domain.hi[0], PLOT_POINTS);
    let series = curves
        .iter()
        .map(|(label, rho)| {
            let pts = xs
                .iter()
                .map(|&x| {
                    let y = if d == 1 {
                        rho.density(&[x])
                    } else {
                        integrate_1d(|y| rho.density(&[x, y]), domain.lo[1], domain.hi[1], 64, &[])
                    };
                    (x, y)
                })
                .collect();
            Series::new(*label, pts)
        })
        .collect::<Vec<_>>();
    let title = if d == 1 { "densities" } else { "first-coordinate marginals" };
    Some(line_plot(title, "x", "density", &series))
}

fn method_name(e: &Estimator) -> (&'static str, String) {
    match e.method {
        contflow::divergence::Method::Quadrature { .. } => ("quadrature", String::new()),
        contflow::divergence::Method::MonteCarlo { seed, .. } => ("monte_carlo", seed.to_string()),
    }
}

pub fn divergence_cmd(path: &Path, overrides: &[(String, Value)], out: &mut Output) -> Result<Value, CliError> {
    let cfg: DivergenceConfig = load(path, overrides)?;
    let p = cfg.p.build("p")?;
    let q = cfg.q.build("q")?;
    if p.dim() != q.dim() {
        return Err(CliError::validation("q", format!("dimension {} does not match p's {}", q.dim(), p.dim())));
    }
    if cfg.divergences.is_empty() && cfg.renyi_orders.is_empty() {
        return Err(CliError::validation("divergences", "nothing to evaluate"));
    }
    let mut est = cfg.method.build("method")?;
    if let Some((lo, hi)) = &cfg.domain {
        if lo.len() != p.dim() || hi.len() != p.dim() || lo.iter().zip(hi).any(|(l, h)| !(l < h)) {
            return Err(CliError::validation("domain", "must be [lo, hi] with lo < hi in every coordinate"));
        }
        est = est.with_domain(BoxDomain::new(lo.clone(), hi.clone()));
    }
    for (i, l) in cfg.renyi_orders.iter().enumerate() {
        if !(*l > 0.0 && *l != 1.0 && l.is_finite()) {
            return Err(CliError::validation(format!("renyi_orders[{i}]"), "must be positive and != 1"));
        }
    }

    let (p, q) = (p.as_ref(), q.as_ref());
    let mut rows: Vec<(String, Result<DivergenceEstimate, contflow::Error>)> = Vec::new();
    for name in &cfg.divergences {
        let (label, value) = match name {
            DivergenceName::Kl => ("kl", kl(p, q, &est)),
            DivergenceName::ReverseKl => ("reverse_kl", kl(q, p, &est)),
            DivergenceName::Tv => ("tv", tv(p, q, &est)),
            DivergenceName::HellingerSq => ("hellinger_sq", hellinger_sq(p, q, &est)),
        };
        rows.push((label.to_string(), value));
    }
    for l in &cfg.renyi_orders {
        rows.push((format!("renyi_{l}"), renyi(*l, p, q, &est)));
    }

    let (method, seed) = method_name(&est);
    let mut csv = String::from("name,value,error_bar,method,seed,status\n");
    for (name, r) in rows {
        match r {
            Ok(e) => {
                let _ = writeln!(csv, "{name},{:.12e},{:.6e},{method},{seed},ok", e.value, e.error_bar);
            }
            Err(contflow::Error::AbsoluteContinuity { .. }) => {
                let _ = writeln!(csv, "{name},inf,,{method},{seed},absolute_continuity");
            }
            Err(e) => return Err(e.into()),
        }
    }
    out.write("divergences.csv", &csv)?;

    let cert = pinsker_certificates(p, q, &est)?;
    out.write("pinsker.csv", &pinsker_csv(&cert))?;
    out.write("pinsker.json", &pretty(&cert))?;
    Ok(json!({
        "command": "divergence",
        "pinsker_ok": cert.pinsker_ok,
        "reverse_pinsker_ok": cert.reverse_pinsker_ok,
        "sup_ratio": finite_or_string(cert.sup_ratio),
        "files": out.files(),
    }))
}

fn finite_or_string(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        json!(v.to_string())
    }
}

fn pinsker_csv(c: &PinskerCertificate) -> String {
    let mut s = String::from("check,holds,bound,slack\n");
    let _ = writeln!(s, "pinsker,{},{:.12e},{:.6e}", c.pinsker_ok, c.tv.value, c.pinsker_slack);
    match (c.reverse_pinsker_ok, c.reverse_bound, c.reverse_slack) {
        (Some(ok), Some(b), Some(sl)) => {
            let _ = writeln!(s, "reverse_pinsker,{ok},{b:.12e},{sl:.6e}");
        }
        _ => s.push_str("reverse_pinsker,n/a,n/a,n/a\n"),
    }
    s
}

fn read_cloud(path: &Path, field: &str) -> Result<Vec<Vec<f64>>, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::validation(field, format!("cannot read {}: {e}", path.display())))?;
    let mut pts = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| CliError::validation(field, e.to_string()))?;
        let row = rec
            .iter()
            .map(|v| v.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| CliError::validation(format!("{field}[{i}]"), e.to_string()))?;
        pts.push(row);
    }
    if pts.is_empty() {
        return Err(CliError::validation(field, "no points"));
    }
    let d = pts[0].len();
    if let Some(i) = pts.iter().position(|p| p.len() != d) {
        return Err(CliError::validation(format!("{field}[{i}]"), format!("expected {d} coordinates")));
    }
    Ok(pts)
}

fn residual(a: &[f64], y: &[f64]) -> f64 {
    let e = a.iter().zip(y).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
    e / y.iter().map(|v| v * v).sum::<f64>().sqrt().max(1.0)
}

pub fn points_cmd(path: &Path, overrides: &[(String, Value)], out: &mut Output) -> Result<Value, CliError> {
    let cfg: PointsConfig = load(path, overrides)?;
    check_positive("horizon", cfg.horizon)?;
    let xs = read_cloud(&relative_to(path, &cfg.source), "source")?;
    let ys = read_cloud(&relative_to(path, &cfg.target), "target")?;
    if xs.len() != ys.len() || xs[0].len() != ys[0].len() {
        return Err(CliError::validation("target", "clouds must have the same size and dimension"));
    }
    let d = xs[0].len();
    let mut tracks: Vec<Vec<Vec<f64>>> = Vec::new();
    let mut csv = String::from("index,closed_form,integrated\n");
    let (mut worst_exact, mut worst_ode): (f64, f64) = (0.0, 0.0);
    let mode;
    match cfg.mode {
        PointsMode::Exact => {
            mode = "exact";
            let seed = cfg.seed.ok_or_else(|| CliError::validation("seed", "exact matching draws separating vectors and needs a seed"))?;
            let plan = exact_match(&xs, &ys, cfg.horizon, seed)?;
            for (i, (x, y)) in xs.iter().zip(&ys).enumerate() {
                let a = residual(&flow_linear_schedule(&plan.schedule, x), y);
                let b = residual(&ode_linear_schedule(&plan.schedule, x, 1e-13), y);
                worst_exact = worst_exact.max(a);
                worst_ode = worst_ode.max(b);
                let _ = writeln!(csv, "{i},{a:.6e},{b:.6e}");
                let mut z = x.clone();
                let mut track = vec![z.clone()];
                for seg in &plan.schedule {
                    for k in 1..=8 {
                        track.push(linear_segment_flow(seg, &z, seg.duration() * k as f64 / 8.0));
                    }
                    z = linear_segment_flow(seg, &z, seg.duration());
                }
                tracks.push(track);
            }
            out.write("plan.json", &(plan.to_json()? + "\n"))?;
        }
        PointsMode::MinNorm => {
            mode = "min_norm";
            let act = cfg.activation.unwrap_or(Activation::Tanh);
            let res = minimum_norm_path(&xs, &ys, cfg.horizon, act, &cfg.min_norm_options())?;
            for (i, (x, y)) in xs.iter().zip(&ys).enumerate() {
                let track = res.path.trajectory(x, 1e-12)?;
                let b = residual(track.last().expect("trajectory has its start point"), y);
                worst_ode = worst_ode.max(b);
                let _ = writeln!(csv, "{i},,{b:.6e}");
                tracks.push(track);
            }
            out.write("path.json", &pretty(&res))?;
        }
    }
    out.write("residuals.csv", &csv)?;
    if d == 2 {
        let series: Vec<Series> = tracks
            .iter()
            .enumerate()
            .map(|(i, t)| Series::new(format!("point {i}"), t.iter().map(|p| (p[0], p[1])).collect()))
            .collect();
        out.write("trajectories.svg", &line_plot("trajectories", "x1", "x2", &series))?;
    }
    if worst_exact > LANDING_TOLERANCE || worst_ode > TRAJECTORY_TOLERANCE {
        return Err(CliError::OracleMismatch {
            message: format!("residuals {worst_exact:.3e} (closed form) and {worst_ode:.3e} (integrated)"),
        });
    }
    Ok(json!({
        "command": "points",
        "mode": mode,
        "closed_form_residual": worst_exact,
        "integrated_residual": worst_ode,
        "files": out.files(),
    }))
}

pub fn xlogx_cmd(path: &Path, overrides: &[(String, Value)], out: &mut Output) -> Result<Value, CliError> {
    let cfg: XlogxConfig = load(path, overrides)?;
    check_positive("p", cfg.p)?;
    check_positive("q", cfg.q)?;
    if !cfg.reversed && cfg.q > cfg.p {
        return Err(CliError::validation("q", "forward conversion needs q <= p"));
    }
    if cfg.reversed && cfg.q < cfg.p {
        return Err(CliError::validation("q", "reversed conversion needs q >= p"));
    }
    let threshold = (cfg.p / cfg.q).ln().abs();
    let times = match &cfg.times {
        Some(t) => {
            if let Some(i) = t.iter().position(|v| !(*v > 0.0 && v.is_finite())) {
                return Err(CliError::validation(format!("times[{i}]"), "must be positive"));
            }
            t.clone()
        }
        None if threshold > 0.0 => [0.5, 0.8, 1.2, 1.5, 2.0].iter().map(|f| f * threshold).collect(),
        None => vec![0.1, 0.5, 1.0, 2.0],
    };
    let mut sweep = String::from("t,threshold,ratio_limit_finite\n");
    let mut series = Vec::new();
    let mut flags = Vec::new();
    for (k, &t) in times.iter().enumerate() {
        let r: TailConversion = if cfg.reversed {
            time_reversed_check(cfg.p, cfg.q, t)?
        } else {
            tail_conversion_check(cfg.p, cfg.q, t)?
        };
        let _ = writeln!(sweep, "{t},{},{}", r.threshold, r.ratio_limit_finite);
        out.write(&format!("tail_{k}.csv"), &r.to_csv())?;
        series.push(Series::new(
            format!("t = {t:.3}"),
            r.x.iter().zip(&r.ln_ratio).map(|(x, l)| (x.ln(), *l)).collect(),
        ));
        flags.push(r.ratio_limit_finite);
    }
    out.write("sweep.csv", &sweep)?;
    out.write("ratios.svg", &line_plot("tail ratio", "ln x", "ln ratio", &series))?;
    Ok(json!({
        "command": "xlogx",
        "threshold": threshold,
        "times": times,
        "ratio_limit_finite": flags,
        "files": out.files(),
    }))
}

/// Largest per-segment gap between the closed form and the ODE, each segment
/// restarted from the closed-form state. A point sitting exactly on a
/// hyperplane has no well-defined Jacobian, so an end-to-end comparison can
/// pick up a full `c dt` from a 1e-14 drift onto the active side.
fn segmentwise_ode_error(schedule: &ControlSchedule, x: &[f64], t: f64) -> Result<f64, CliError> {
    let d = x.len();
    let mut z = x.to_vec();
    let mut worst: f64 = 0.0;
    for seg in &schedule.segments {
        let dt = seg.t1.min(t) - seg.t0;
        if dt <= 0.0 {
            break;
        }
        let mut one = seg.clone();
        one.t0 = 0.0;
        one.t1 = dt;
        let ode = integrate_schedule(&ControlSchedule::new(dt, vec![one])?, &z, dt, 1e-12)?;
        let img = segment_flow(seg, &z, dt);
        let e = residual(&img.point, &ode[..d]).max((img.log_jacobian - ode[d]).abs() / img.log_jacobian.abs().max(1.0));
        worst = worst.max(e);
        z = img.point;
    }
    Ok(worst)
}

pub fn flow_eval_cmd(path: &Path, overrides: &[(String, Value)], out: &mut Output) -> Result<Value, CliError> {
    let cfg: FlowEvalConfig = load(path, overrides)?;
    let sched_path = relative_to(path, &cfg.schedule);
    let text = std::fs::read_to_string(&sched_path)
        .map_err(|e| CliError::validation("schedule", format!("cannot read {}: {e}", sched_path.display())))?;
    let schedule = ControlSchedule::from_json(&text).map_err(|e| CliError::validation("schedule", e.to_string()))?;
    let initial = cfg.initial.build("initial")?;
    let d = initial.dim();
    if let Some(sd) = schedule.dim() {
        if sd != d {
            return Err(CliError::validation("initial.mean", format!("schedule acts on dimension {sd}, not {d}")));
        }
    }
    if let Some(i) = cfg.points.iter().position(|p| p.len() != d) {
        return Err(CliError::validation(format!("points[{i}]"), format!("expected {d} coordinates")));
    }
    let t = cfg.time.unwrap_or(schedule.horizon);
    if !(0.0..=schedule.horizon).contains(&t) {
        return Err(CliError::validation("time", format!("must lie in [0, {}]", schedule.horizon)));
    }
    if let Some(tol) = cfg.ode_tolerance {
        check_positive("ode_tolerance", tol)?;
    }

    let initial: Arc<dyn Density> = Arc::new(initial);
    let mut csv = String::from("index");
    for k in 0..d {
        let _ = write!(csv, ",x{k}");
    }
    for k in 0..d {
        let _ = write!(csv, ",y{k}");
    }
    csv.push_str(",log_jacobian,ln_density_at_x,ode_error\n");
    let mut worst: f64 = 0.0;
    for (i, x) in cfg.points.iter().enumerate() {
        let img = flow_forward(&schedule, x, t);
        let ln_rho = ln_density_at(initial.as_ref(), &schedule, t, x);
        let err = match cfg.ode_tolerance {
            Some(_) => {
                let e = segmentwise_ode_error(&schedule, x, t)?;
                worst = worst.max(e);
                format!("{e:.6e}")
            }
            None => String::new(),
        };
        let _ = write!(csv, "{i}");
        for v in x.iter().chain(&img.point) {
            let _ = write!(csv, ",{v:.15e}");
        }
        let _ = writeln!(csv, ",{:.15e},{ln_rho:.15e},{err}", img.log_jacobian);
    }
    out.write("flow_eval.csv", &csv)?;
    if let Some(tol) = cfg.ode_tolerance {
        if worst > tol {
            return Err(CliError::OracleMismatch {
                message: format!("closed form and ODE differ by {worst:.3e} (tolerance {tol:e})"),
            });
        }
    }
    Ok(json!({
        "command": "flow-eval",
        "time": t,
        "points": cfg.points.len(),
        "max_ode_error": cfg.ode_tolerance.map(|_| worst),
        "files": out.files(),
    }))
}
