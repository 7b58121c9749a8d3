use contflow::ode::integrate;
use contflow::xlogx::*;

#[test]
fn flow_matches_adaptive_integration() {
    for (x, t) in [(1.5, 0.7), (3.0, 1.2), (0.4, 2.0), (10.0, 0.3), (1.0, 4.0)] {
        let y = integrate(|_, y, dy| dy[0] = xlogx_field(y[0]), 0.0, t, &[x], 1e-13, 1e-13).unwrap()[0];
        let exact = xlogx_flow(x, t);
        assert!((y - exact).abs() <= 1e-8 * exact.abs(), "x={x} t={t}: {y} vs {exact}");
    }
}

#[test]
fn density_is_transport_along_characteristics() {
    let base = StretchedExponential::new(2.0).unwrap();
    let t = 0.9;
    // x = 1 itself is a fixed point sitting on the jump of the closed form
    for i in 1..=30 {
        let x = 1000f64.powf(i as f64 / 30.0);
        // carry x backwards together with the integrated divergence ln y + 1
        let y = integrate(
            |_, y, dy| {
                dy[0] = -xlogx_field(y[0]);
                dy[1] = if y[0] > 1.0 { y[0].ln() + 1.0 } else { 0.0 };
            },
            0.0,
            t,
            &[x, 0.0],
            1e-13,
            1e-13,
        )
        .unwrap();
        let oracle = base.ln_density(y[0]) - y[1];
        let closed = xlogx_ln_density(&base, t, x);
        assert!((oracle.exp() - closed.exp()).abs() <= 1e-8 * closed.exp().max(1e-300), "x={x}");
        assert!((oracle - closed).abs() < 1e-8, "x={x}");
    }
}

#[test]
fn mass_is_conserved() {
    for (p, t) in [(2.0, 0.0), (2.0, 2f64.ln()), (3.0, 1.5), (1.0, 0.5)] {
        let base = StretchedExponential::new(p).unwrap();
        let m = xlogx_mass(&base, t);
        assert!((m - 1.0).abs() < 1e-5, "p={p} t={t}: {m}");
    }
}

#[test]
fn tail_exponent_halves_after_log_two() {
    let base = StretchedExponential::new(2.0).unwrap();
    let slope = tail_exponent_fit(&base, 2f64.ln(), 1e2, 1e4);
    assert!((slope - 1.0).abs() < 1e-2, "{slope}");
}

#[test]
fn conversion_threshold_examples() {
    assert!(tail_conversion_check(2.0, 1.0, 0.8).unwrap().ratio_limit_finite);
    assert!(!tail_conversion_check(2.0, 1.0, 0.5).unwrap().ratio_limit_finite);
    assert!(tail_conversion_check(1.5, 1.5, 0.01).unwrap().ratio_limit_finite);
    let r = tail_conversion_check(3.0, 1.0, 1.3).unwrap();
    assert!(r.to_csv().lines().count() == r.x.len() + 1);
}

#[test]
fn reversed_field_converts_the_other_way() {
    let thr = 2f64.ln();
    assert!(time_reversed_check(1.0, 2.0, 1.2 * thr).unwrap().ratio_limit_finite);
    assert!(!time_reversed_check(1.0, 2.0, 0.5 * thr).unwrap().ratio_limit_finite);
}
