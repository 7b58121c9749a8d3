use std::time::Instant;

use contflow::density::{Density, Gaussian};
use contflow::flow::{flow_forward, ln_density_at, pushforward_density, pushforward_until};
use contflow::ode::integrate_schedule;
use contflow::piecewise::PiecewiseGaussianDensity;
use contflow::schedule::{ControlSchedule, ScheduleBuilder};
use contflow::synthesis::{
    certify_tail_domination, envelope_density, omega_threshold, tail_schedule, TailDirection, TailPlan,
};
use contflow::target::{TailMode, TargetSpec};
use nalgebra::{DMatrix, DVector};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn normal_vec(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> Vec<f64> {
    (0..d).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Up to `max_segments` random segments on `[0, 1]` with uneven durations.
fn random_schedule(rng: &mut ChaCha8Rng, d: usize, max_segments: usize) -> ControlSchedule {
    let n = rng.random_range(1..=max_segments);
    let cuts: Vec<f64> = (0..n).map(|_| 0.2 + rng.random::<f64>()).collect();
    let total: f64 = cuts.iter().sum();
    let mut s = ScheduleBuilder::new();
    for c in cuts {
        let w = normal_vec(rng, d, 1.0);
        let a = normal_vec(rng, d, 1.0 / (d as f64).sqrt());
        let b = rng.sample::<f64, _>(StandardNormal);
        s.push(w, a, b, c / total);
    }
    s.finish().unwrap()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[test]
fn closed_form_flow_matches_ode() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for i in 0..50 {
        let d = 1 + i % 4;
        let s = random_schedule(&mut rng, d, 20);
        for _ in 0..4 {
            let x0 = normal_vec(&mut rng, d, 1.5);
            let exact = flow_forward(&s, &x0, s.horizon);
            let ode = integrate_schedule(&s, &x0, s.horizon, 1e-13).unwrap();
            let diff: Vec<f64> = exact.point.iter().zip(&ode).map(|(a, b)| a - b).collect();
            let rel = norm(&diff) / norm(&exact.point).max(1.0);
            let jac = (exact.log_jacobian - ode[d]).abs() / exact.log_jacobian.abs().max(1.0);
            worst = worst.max(rel).max(jac);
        }
    }
    assert!(worst < 1e-8, "worst relative disagreement {worst:e}");
    assert!(start.elapsed().as_secs_f64() < 60.0);
}

#[test]
fn one_dimensional_relu_example() {
    let mut s = ScheduleBuilder::new();
    s.push(vec![1.0], vec![1.0], 0.0, 1.0);
    let s = s.finish().unwrap();
    let init = PiecewiseGaussianDensity::from_base(Gaussian::standard(1));
    let phi = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    for t in [0.25, 0.6, 1.0] {
        let rho = pushforward_until(&init, &s, t, 1 << 10).unwrap();
        for i in 0..=400 {
            let x = -6.0 + 12.0 * i as f64 / 400.0;
            let expect = if x <= 0.0 { phi(x) } else { (-t).exp() * phi(x * (-t).exp()) };
            assert!((rho.density(&[x]) - expect).abs() < 1e-12, "t={t} x={x}");
        }
    }
}

#[test]
fn nilpotent_segment_matches_shear_formula_and_ode() {
    let base = Gaussian::new(
        DVector::from_vec(vec![0.3, -0.2]),
        DMatrix::from_row_slice(2, 2, &[1.2, 0.3, 0.3, 0.8]),
    )
    .unwrap();
    let (w, a, b, tau) = ([1.5, 0.0], [0.0, 1.0], 0.4, 0.7);
    let mut s = ScheduleBuilder::new();
    s.push(w.to_vec(), a.to_vec(), b, tau);
    let s = s.finish().unwrap();
    let rho = pushforward_density(&PiecewiseGaussianDensity::from_base(base.clone()), &s).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..200 {
        let x = normal_vec(&mut rng, 2, 1.5);
        let act = a[0] * x[0] + a[1] * x[1] + b;
        let pre = if act > 0.0 {
            // (I - tau w a^T) x - tau b w
            let ax = a[0] * x[0] + a[1] * x[1];
            vec![x[0] - tau * w[0] * ax - tau * b * w[0], x[1] - tau * w[1] * ax - tau * b * w[1]]
        } else {
            x.clone()
        };
        let expect = base.density(&pre);
        let got = rho.density(&x);
        assert!((got - expect).abs() <= 1e-8 * expect.max(1e-3), "x={x:?}");

        // along a characteristic rho(T, Phi(x0)) = rho_0(x0) / det
        let ode = integrate_schedule(&s, &x, tau, 1e-12).unwrap();
        let along = base.ln_density(&x) - ode[2];
        assert!((rho.ln_density(&ode[..2]) - along).abs() < 1e-8);
    }
}

#[test]
fn pushforwards_conserve_mass() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for i in 0..16 {
        let d = 1 + i % 2;
        let s = random_schedule(&mut rng, d, if d == 1 { 8 } else { 4 });
        let mean = DVector::from_vec(normal_vec(&mut rng, d, 0.5));
        let init = PiecewiseGaussianDensity::from_base(Gaussian::isotropic(mean, 0.9).unwrap());
        let rho = pushforward_density(&init, &s).unwrap();
        let m = rho.mass().unwrap();
        assert!((m - 1.0).abs() < 1e-4, "instance {i}: mass {m}");
    }
}

#[test]
fn strict_ordering_is_preserved() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    for i in 0..20 {
        let d = if i < 12 { 1 } else { 2 };
        let s = random_schedule(&mut rng, d, 6);
        let mean = DVector::from_vec(normal_vec(&mut rng, d, 0.5));
        let s1 = 0.5 + rng.random::<f64>();
        let s2 = s1 * (1.1 + rng.random::<f64>());
        let g1 = Gaussian::isotropic(mean.clone(), s1).unwrap();
        let g2 = Gaussian::isotropic(mean, s2).unwrap();
        // alpha g1 < g2 everywhere since alpha (s2/s1)^d < 1
        let ln_alpha = 0.95f64.ln() + d as f64 * (s1 / s2).ln();
        let grid: Vec<Vec<f64>> = if d == 1 {
            (0..1000).map(|k| vec![-5.0 + 10.0 * k as f64 / 999.0]).collect()
        } else {
            (0..1024).map(|k| vec![-4.0 + 8.0 * (k % 32) as f64 / 31.0, -4.0 + 8.0 * (k / 32) as f64 / 31.0]).collect()
        };
        for x in &grid {
            assert!(ln_alpha + g1.ln_density(x) < g2.ln_density(x));
            let lo = ln_alpha + ln_density_at(&g1, &s, s.horizon, x);
            let hi = ln_density_at(&g2, &s, s.horizon, x);
            assert!(lo < hi, "instance {i} at {x:?}: {lo} vs {hi}");
        }
    }
}

fn axis_point(d: usize, k: usize, r: f64) -> Vec<f64> {
    let mut x = vec![0.0; d];
    x[k] = r;
    x
}

#[test]
fn tail_stage_covariances() {
    let (sigma_env, sigma_t, m_bar, horizon) = (0.8, 1.5, 2.0, 1.0);
    for d in 1..=3 {
        let omega = omega_threshold(d, horizon, sigma_t, sigma_env);
        let env = envelope_density(d, 0.3, sigma_env);
        let s = tail_schedule(d, m_bar, omega, horizon / 2.0, TailDirection::DominateTarget);
        let out = pushforward_density(&env, &s).unwrap();
        let grow = (omega * horizon / (2 * d) as f64).exp();
        let cov_at = |x: &[f64]| {
            let i = out.locate(x).unwrap();
            out.pieces()[i].covariance(out.base()).unwrap()
        };
        let tol = 1e-10 * sigma_env * sigma_env * grow;
        for k in 0..d {
            let mut slab = DMatrix::<f64>::identity(d, d) * sigma_env * sigma_env;
            slab[(k, k)] *= grow;
            for side in [1.0, -1.0] {
                let c = cov_at(&axis_point(d, k, side * 3.0 * m_bar));
                assert!((c - &slab).abs().max() < tol, "d={d} k={k}");
            }
        }
        let corner = DMatrix::<f64>::identity(d, d) * sigma_env * sigma_env * grow;
        for q in 0..(1usize << d) {
            let x: Vec<f64> = (0..d).map(|j| if q >> j & 1 == 1 { -3.0 * m_bar } else { 3.0 * m_bar }).collect();
            assert!((cov_at(&x) - &corner).abs().max() < tol, "d={d} q={q}");
        }
    }
}

#[test]
fn omega_threshold_is_sharp() {
    let (sigma_env, sigma_t, m_bar, horizon) = (0.8, 1.5, 2.0, 1.0);
    for d in 1..=2 {
        let raw = omega_threshold(d, horizon, sigma_t, sigma_env) / 1.05;
        let target = TargetSpec::new(
            std::sync::Arc::new(Gaussian::isotropic(DVector::zeros(d), sigma_t).unwrap()),
            sigma_t,
            m_bar,
            TailMode::UpperBounded,
        )
        .unwrap();
        for (factor, ok) in [(1.05, true), (0.5, false)] {
            let omega = factor * raw;
            let env = envelope_density(d, 0.05, sigma_env);
            let s = tail_schedule(d, m_bar, omega, horizon / 2.0, TailDirection::DominateTarget);
            let out = pushforward_density(&env, &s).unwrap();
            let plan = TailPlan {
                sigma_env,
                alpha: 0.05,
                omega,
                m_bar,
                m_bar_bar: m_bar,
                direction: TailDirection::DominateTarget,
            };
            let cert = certify_tail_domination(&out, &target, &plan);
            assert_eq!(cert.is_ok(), ok, "d={d} factor={factor}");

            // corner piece: Sigma^{-1} < I / sigma_bullet^2 iff omega clears the bound
            let x = vec![5.0 * m_bar; d];
            let i = out.locate(&x).unwrap();
            let cov = out.pieces()[i].covariance(out.base()).unwrap();
            let min_eig = cov.symmetric_eigenvalues().min();
            assert_eq!(min_eig > sigma_t * sigma_t, ok);
        }
    }
}
