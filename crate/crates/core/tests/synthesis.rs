use std::sync::Arc;

use contflow::density::{Density, Gaussian, GaussianMixture};
use contflow::synthesis::{synthesize, tv_stage_1d, tv_stage_nd, NdOptions, Objective, SynthesisOptions};
use contflow::target::{TailMode, TargetSpec};
use nalgebra::{DMatrix, DVector};

fn bimodal() -> Arc<dyn Density> {
    let c = |m: f64| Gaussian::univariate(m, 0.6).unwrap();
    Arc::new(GaussianMixture::new(vec![0.5, 0.5], vec![c(-1.0), c(1.0)]).unwrap())
}

fn target(sigma: f64, mode: TailMode) -> TargetSpec {
    let rho = bimodal();
    let m = TargetSpec::find_tail_radius(rho.clone(), sigma, mode, 0.5, 40).unwrap();
    TargetSpec::new(rho, sigma, m, mode).unwrap()
}

#[test]
fn kl_pipeline_on_bimodal_target() {
    let r = synthesize(&Gaussian::standard(1), &target(1.5, TailMode::UpperBounded), 0.05, 1.0, Objective::Kl, &SynthesisOptions::default()).unwrap();
    eprintln!("{}", r.csv_row());
    assert!(r.success);
    assert!(r.kl_achieved <= 0.05);
    assert!(r.switch_count <= r.switch_budget.unwrap() + 2);
    assert!(r.sup_ratio.is_finite());
    assert_eq!(r.pinsker.reverse_pinsker_ok, Some(true));
    assert!(r.pinsker.pinsker_ok);
    assert!(r.decomposition.bound_holds && r.decomposition.within_three_eps);
    assert!(r.tail_worst_ratio < 0.99);
}

#[test]
fn reverse_kl_pipeline_on_bimodal_target() {
    let r = synthesize(&Gaussian::standard(1), &target(0.5, TailMode::LowerBounded), 0.05, 1.0, Objective::ReverseKl, &SynthesisOptions::default()).unwrap();
    eprintln!("{}", r.csv_row());
    assert!(r.success);
    assert!(r.kl_achieved <= 0.05);
    assert_eq!(r.pinsker.reverse_pinsker_ok, Some(true));
}

#[test]
fn tv_stage_examples() {
    let base = Gaussian::standard(1);
    let shifted = TargetSpec::new(Arc::new(Gaussian::univariate(1.0, 1.0).unwrap()), 1.5, 3.0, TailMode::UpperBounded).unwrap();
    assert!(tv_stage_1d(&base, &shifted, 0.05, 0.5).unwrap().tv <= 0.05);
    let c = |m: f64| Gaussian::univariate(m, 0.5).unwrap();
    let mix = Arc::new(GaussianMixture::new(vec![0.5, 0.5], vec![c(-2.0), c(2.0)]).unwrap());
    let two = TargetSpec::new(mix, 3.0, 4.0, TailMode::UpperBounded).unwrap();
    let s = tv_stage_1d(&base, &two, 0.1, 0.5).unwrap();
    assert!(s.tv <= 0.1);
    assert!(s.schedule.switch_count() <= s.budget);
    let same = TargetSpec::new(Arc::new(base.clone()), 1.5, 3.0, TailMode::UpperBounded).unwrap();
    let s = tv_stage_1d(&base, &same, 0.05, 0.5).unwrap();
    assert!(s.schedule.segments.is_empty() && s.tv < 1e-9);
}

#[test]
fn search_stage_beats_baseline_and_is_deterministic() {
    let base = Gaussian::standard(2);
    let shifted = Gaussian::new(DVector::from_vec(vec![1.0, 0.0]), DMatrix::identity(2, 2)).unwrap();
    let t = TargetSpec::new(Arc::new(shifted), 2.0, 4.0, TailMode::UpperBounded).unwrap();
    let opts = NdOptions { iterations: 10, ..NdOptions::default() };
    let a = tv_stage_nd(&base, &t, 0.01, 0.5, opts).unwrap();
    let b = tv_stage_nd(&base, &t, 0.01, 0.5, opts).unwrap();
    assert!(a.tv < a.baseline_tv, "{} vs {}", a.tv, a.baseline_tv);
    assert_eq!(a.schedule, b.schedule);
    let same = TargetSpec::new(Arc::new(base.clone()), 2.0, 4.0, TailMode::UpperBounded).unwrap();
    let s = tv_stage_nd(&base, &same, 0.01, 0.5, opts).unwrap();
    assert!(s.schedule.segments.is_empty() && s.tv < 1e-6);
}
