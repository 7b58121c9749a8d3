use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use contflow::schedule::ScheduleBuilder;
use serde_json::{json, Value};
use tempfile::TempDir;

struct Run {
    code: i32,
    stdout: Value,
    stderr: Value,
    out: PathBuf,
}

fn write_config(dir: &Path, name: &str, cfg: &Value) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    p
}

fn run(dir: &Path, out: &str, args: &[&str]) -> Run {
    let out = dir.join(out);
    let o: Output = Command::new(env!("CARGO_BIN_EXE_contflow"))
        .args(args)
        .env("CONTFLOW_OUT_DIR", &out)
        .output()
        .unwrap();
    let parse = |b: &[u8]| serde_json::from_slice(b).unwrap_or(Value::Null);
    Run { code: o.status.code().unwrap(), stdout: parse(&o.stdout), stderr: parse(&o.stderr), out }
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap()
}

#[test]
fn synthesize_gaussian_to_gaussian() {
    let dir = TempDir::new().unwrap();
    let cfg = json!({
        "base": {"mean": [0.0]},
        "target": {
            "density": {"kind": "gaussian", "mean": [0.8], "sd": 0.7},
            "sigma_tail": 1.5,
            "tail_mode": "upper_bounded"
        },
        "epsilon": 0.05,
        "horizon": 1.0,
        "objective": "kl"
    });
    let c = write_config(dir.path(), "synth.json", &cfg);
    let r = run(dir.path(), "out", &["synthesize", c.to_str().unwrap()]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let report: Value = serde_json::from_str(&read(&r.out.join("report.json"))).unwrap();
    assert!(report["kl_achieved"].as_f64().unwrap() <= 0.05);
    assert_eq!(report["success"], true);
    let sched = contflow::schedule::ControlSchedule::from_json(&read(&r.out.join("schedule.json"))).unwrap();
    assert_eq!(sched.switch_count(), report["switch_count"].as_u64().unwrap() as usize);
    assert!(read(&r.out.join("divergences.csv")).starts_with("name,value,error_bar,method,seed\nkl,"));
    assert!(read(&r.out.join("densities.svg")).contains("rho(T/2)"));
}

#[test]
fn tail_violation_is_a_certification_failure() {
    let dir = TempDir::new().unwrap();
    let cfg = json!({
        "base": {"mean": [0.0]},
        "target": {
            "density": {"kind": "gaussian", "mean": [0.0], "sd": 2.0},
            "sigma_tail": 1.0,
            "radius": 3.0,
            "tail_mode": "upper_bounded"
        },
        "epsilon": 0.05,
        "horizon": 1.0,
        "objective": "kl"
    });
    let c = write_config(dir.path(), "bad.json", &cfg);
    let r = run(dir.path(), "out", &["synthesize", c.to_str().unwrap()]);
    assert_eq!(r.code, 3);
    assert_eq!(r.stderr["error"], "tail_certification");
}

#[test]
fn validation_errors_name_the_field() {
    let dir = TempDir::new().unwrap();
    let base = json!({
        "p": {"kind": "gaussian", "mean": [0.0]},
        "q": {"kind": "gaussian", "mean": [1.0]},
        "divergences": ["kl"],
        "method": {"kind": "monte_carlo", "samples": 1024}
    });
    let c = write_config(dir.path(), "mc.json", &base);
    let r = run(dir.path(), "out", &["divergence", c.to_str().unwrap()]);
    assert_eq!(r.code, 2);
    assert_eq!(r.stderr["field"], "method.seed");

    let mut unknown = base.clone();
    unknown["p"]["variance"] = json!(2.0);
    let c = write_config(dir.path(), "unknown.json", &unknown);
    let r = run(dir.path(), "out", &["divergence", c.to_str().unwrap()]);
    assert_eq!(r.code, 2);
    assert_eq!(r.stderr["field"], "p");
    assert!(r.stderr["message"].as_str().unwrap().contains("variance"));
}

#[test]
fn divergence_rows() {
    let dir = TempDir::new().unwrap();
    let cfg = json!({
        "p": {"kind": "gaussian", "mean": [0.0]},
        "q": {"kind": "gaussian", "mean": [1.0]},
        "divergences": ["kl", "reverse_kl", "tv", "hellinger_sq"],
        "renyi_orders": [0.5]
    });
    let c = write_config(dir.path(), "d.json", &cfg);
    let r = run(dir.path(), "a", &["divergence", c.to_str().unwrap()]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let csv = read(&r.out.join("divergences.csv"));
    let kl_row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(kl_row[0], "kl");
    let (v, bar): (f64, f64) = (kl_row[1].parse().unwrap(), kl_row[2].parse().unwrap());
    assert!((v - 0.5).abs() <= bar.max(1e-6));

    let same = write_config(dir.path(), "same.json", &json!({
        "p": {"kind": "gaussian", "mean": [0.3], "sd": 1.2},
        "q": {"kind": "gaussian", "mean": [0.3], "sd": 1.2},
        "divergences": ["kl", "reverse_kl", "tv", "hellinger_sq"],
        "renyi_orders": [0.5, 2.0]
    }));
    let r = run(dir.path(), "b", &["divergence", same.to_str().unwrap()]);
    assert_eq!(r.code, 0);
    for row in read(&r.out.join("divergences.csv")).lines().skip(1) {
        let v: f64 = row.split(',').nth(1).unwrap().parse().unwrap();
        // the default domain drops about 1e-8 of the mass
        assert!(v.abs() < 1e-6, "{row}");
    }

    let heavy = write_config(dir.path(), "heavy.json", &json!({
        "p": {"kind": "gaussian", "mean": [0.0], "sd": 2.0},
        "q": {"kind": "gaussian", "mean": [0.0]},
        "divergences": ["kl"]
    }));
    let r = run(dir.path(), "c", &["divergence", heavy.to_str().unwrap()]);
    assert_eq!(r.code, 0);
    assert!(read(&r.out.join("pinsker.csv")).contains("reverse_pinsker,n/a"));
}

#[test]
fn absolute_continuity_is_reported_per_row() {
    let dir = TempDir::new().unwrap();
    let c = write_config(dir.path(), "u.json", &json!({
        "p": {"kind": "uniform", "lo": [0.0], "hi": [2.0]},
        "q": {"kind": "uniform", "lo": [0.0], "hi": [1.0]},
        "divergences": ["kl", "reverse_kl", "tv"]
    }));
    let r = run(dir.path(), "out", &["divergence", c.to_str().unwrap()]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let csv = read(&r.out.join("divergences.csv"));
    assert!(csv.lines().nth(1).unwrap().ends_with("absolute_continuity"));
    assert!(csv.lines().nth(2).unwrap().ends_with(",ok"));
}

fn cloud_csv(dir: &Path, name: &str, pts: &[[f64; 2]]) -> PathBuf {
    let body: String = pts.iter().map(|p| format!("{},{}\n", p[0], p[1])).collect();
    let p = dir.join(name);
    std::fs::write(&p, format!("# x,y\n{body}")).unwrap();
    p
}

#[test]
fn points_exact_and_min_norm() {
    let dir = TempDir::new().unwrap();
    let xs = [[0.1, 0.9], [-1.2, 0.4], [0.7, -0.5], [1.5, 1.1], [-0.3, -1.4]];
    let ys = [[1.0, 0.0], [0.2, 0.8], [-0.9, -0.3], [0.4, 1.6], [-1.1, 0.5]];
    cloud_csv(dir.path(), "x.csv", &xs);
    cloud_csv(dir.path(), "y.csv", &ys);
    let cfg = json!({"source": "x.csv", "target": "y.csv", "horizon": 1.0, "mode": "exact", "seed": 3});
    let c = write_config(dir.path(), "p.json", &cfg);
    let r = run(dir.path(), "out", &["points", c.to_str().unwrap()]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert!(r.stdout["closed_form_residual"].as_f64().unwrap() < 1e-8);
    assert!(r.out.join("plan.json").exists() && r.out.join("trajectories.svg").exists());
    assert_eq!(read(&r.out.join("residuals.csv")).lines().count(), 6);

    cloud_csv(dir.path(), "dup.csv", &[[0.1, 0.9], [0.1, 0.9], [0.7, -0.5], [1.5, 1.1], [-0.3, -1.4]]);
    let c = write_config(dir.path(), "dup.json", &json!({"source": "dup.csv", "target": "y.csv", "horizon": 1.0, "mode": "exact", "seed": 3}));
    let r = run(dir.path(), "dup", &["points", c.to_str().unwrap()]);
    assert_eq!(r.code, 2);
    assert!(r.stderr["message"].as_str().unwrap().contains("coincide"));

    let c = write_config(dir.path(), "mn.json", &json!({"source": "x.csv", "target": "y.csv", "horizon": 1.0, "mode": "min_norm", "augmented": false}));
    let r = run(dir.path(), "mn", &["points", c.to_str().unwrap()]);
    assert_eq!(r.code, 2);
    assert!(r.stderr["message"].as_str().unwrap().contains("features"));
}

#[test]
fn xlogx_sweep_and_determinism() {
    let dir = TempDir::new().unwrap();
    let c = write_config(dir.path(), "x.json", &json!({"p": 2.0, "q": 1.0, "times": [0.5, 0.7, 0.9]}));
    let a = run(dir.path(), "a", &["xlogx", c.to_str().unwrap()]);
    assert_eq!(a.code, 0, "{}", a.stderr);
    assert_eq!(a.stdout["ratio_limit_finite"], json!([false, true, true]));
    let b = run(dir.path(), "b", &["xlogx", c.to_str().unwrap()]);
    for f in ["sweep.csv", "tail_0.csv", "ratios.svg"] {
        assert_eq!(std::fs::read(a.out.join(f)).unwrap(), std::fs::read(b.out.join(f)).unwrap(), "{f}");
    }

    let r = run(dir.path(), "c", &["xlogx", c.to_str().unwrap(), "--p=-1"]);
    assert_eq!(r.code, 2);
    assert_eq!(r.stderr["field"], "p");
    let r = run(dir.path(), "d", &["xlogx", c.to_str().unwrap(), "--set", "p=1", "--set", "q=1"]);
    assert_eq!(r.code, 0);
    assert_eq!(r.stdout["ratio_limit_finite"], json!([true, true, true]));
}

#[test]
fn flow_eval_matches_ode() {
    let dir = TempDir::new().unwrap();
    let mut s = ScheduleBuilder::new();
    s.push(vec![1.0, -0.5], vec![0.3, 1.0], 0.2, 0.4);
    s.push(vec![0.0, 1.0], vec![1.0, 0.0], -0.1, 0.6);
    std::fs::write(dir.path().join("s.json"), s.finish().unwrap().to_json().unwrap()).unwrap();
    let cfg = json!({
        "schedule": "s.json",
        "initial": {"mean": [0.0, 0.0]},
        "points": [[0.5, 0.5], [-1.0, 2.0], [1.5, -0.3]],
        "ode_tolerance": 1e-8
    });
    let c = write_config(dir.path(), "f.json", &cfg);
    let r = run(dir.path(), "out", &["flow-eval", c.to_str().unwrap()]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert!(r.stdout["max_ode_error"].as_f64().unwrap() < 1e-8);
    assert_eq!(read(&r.out.join("flow_eval.csv")).lines().count(), 4);

    let r = run(dir.path(), "late", &["flow-eval", c.to_str().unwrap(), "--time", "2.0"]);
    assert_eq!(r.code, 2);
    assert_eq!(r.stderr["field"], "time");
}
