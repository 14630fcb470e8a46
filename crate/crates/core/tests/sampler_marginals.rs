//! Terminal moments of every sampler driven by the exact Gaussian velocity.

use rectiflow::data::sample_noise;
use rectiflow::samplers::{run_sampler, Record, SamplerConfig, SamplerKind, SigmaSchedule};
use rectiflow::{moment_summary, GaussianSpec, MomentSummary, StreamFamily, TimeGrid};

const SAMPLES: usize = 50_000;

fn terminal(kind: SamplerKind, steps: usize) -> MomentSummary {
    let spec = GaussianSpec::scalar(1.0, 4.0).unwrap();
    let z0 = sample_noise(&StreamFamily::new(21, "z0"), 0, SAMPLES, 1);
    let mut cfg = SamplerConfig::new(kind, TimeGrid::uniform(steps).unwrap(), 5);
    cfg.record = Record::TerminalOnly;
    moment_summary(&run_sampler(&spec, &cfg, &z0).unwrap().terminal).unwrap()
}

fn assert_moments(kind: SamplerKind, mean_tol: f64, std_tol: f64) {
    let m = terminal(kind, 500);
    assert!((m.mean[0] - 1.0).abs() <= mean_tol, "{kind:?} mean {}", m.mean[0]);
    assert!((m.std[0] - 2.0).abs() <= std_tol, "{kind:?} std {}", m.std[0]);
}

#[test]
fn euler_preserves_the_marginal() {
    assert_moments(SamplerKind::Euler, 0.02, 0.04);
}

#[test]
fn langevin_preserves_the_marginal() {
    let sigma = SigmaSchedule::Triangular { sigma0: 0.5 };
    assert_moments(SamplerKind::LangevinSde { sigma }, 0.05, 0.05);
}

#[test]
fn curved_euler_preserves_the_marginal() {
    assert_moments(SamplerKind::CurvedEulerSde, 0.05, 0.05);
}

#[test]
fn overshoot_preserves_the_marginal() {
    assert_moments(SamplerKind::Overshoot { c: 1.0 }, 0.05, 0.05);
}

#[test]
fn curved_euler_and_unit_overshoot_agree_on_fine_grids() {
    let a = terminal(SamplerKind::CurvedEulerSde, 1000);
    let b = terminal(SamplerKind::Overshoot { c: 1.0 }, 1000);
    assert!((a.mean[0] - b.mean[0]).abs() <= 0.03, "{a:?} {b:?}");
    assert!((a.std[0] - b.std[0]).abs() <= 0.05, "{a:?} {b:?}");
}
