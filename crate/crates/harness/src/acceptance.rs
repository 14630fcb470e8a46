//! The acceptance checks, each returning a pass/fail line.
//!
//! Criteria 1 to 8 need no training and make up `oracle-check`. Criterion 9
//! trains the three parameterizations on the `fig2_toy` recipe over several
//! seeds, and criterion 10 runs the boundary-function sweep.

use std::fmt;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rectiflow::nn::MlpArch;
use rectiflow::samplers::SamplerConfig;
use rectiflow::score::tweedie_score_batch;
use rectiflow::training::rf_loss_and_grads;
use rectiflow::{
    boundary_violation, derive_seed, gaussian_oracle_score, moment_summary, run_sampler, sample_noise, Batch,
    BoundaryKind, Distribution, FlowModel, GaussianSpec, LossWeight, Mlp, MlpParams, ModelKind, Point,
    SamplerKind, ScoreOptions, SigmaSchedule, StreamFamily, TimeGrid, Trainable,
};

use crate::config::{parse_config_str, ExperimentConfig, ModelChoice};
use crate::error::{HarnessError, Result};
use crate::experiment::{run_experiment, RunOptions};
use crate::manifest::{MetricsSummary, RunStatus};
use crate::sweep::{run_sweep, SweepAxis, SweepOptions};

/// The shipped `fig2_toy` recipe.
pub const FIG2_RECIPE: &str = include_str!("../recipes/fig2_toy.toml");

pub fn fig2_recipe() -> ExperimentConfig {
    parse_config_str(FIG2_RECIPE).expect("the fig2_toy recipe is valid")
}

#[derive(Clone, Debug, PartialEq)]
pub struct CriterionResult {
    pub id: u8,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
    pub budget: Duration,
}

impl CriterionResult {
    fn finish(id: u8, name: &'static str, budget_secs: f64, start: Instant, ok: bool, detail: String) -> Self {
        let elapsed = start.elapsed();
        let budget = Duration::from_secs_f64(budget_secs);
        let within = elapsed <= budget;
        let detail = if within {
            detail
        } else {
            format!("{detail}; over the runtime budget")
        };
        Self {
            id,
            name,
            passed: ok && within,
            detail,
            elapsed,
            budget,
        }
    }

    fn error(id: u8, name: &'static str, budget_secs: f64, start: Instant, e: impl fmt::Display) -> Self {
        Self::finish(id, name, budget_secs, start, false, format!("error: {e}"))
    }
}

impl fmt::Display for CriterionResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "criterion {:>2} [{}] {}: {} ({:.2} s of {:.0} s)",
            self.id,
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.detail,
            self.elapsed.as_secs_f64(),
            self.budget.as_secs_f64()
        )
    }
}

fn wrap(id: u8, name: &'static str, budget: f64, body: impl FnOnce() -> Result<(bool, String)>) -> CriterionResult {
    let start = Instant::now();
    match body() {
        Ok((ok, detail)) => CriterionResult::finish(id, name, budget, start, ok, detail),
        Err(e) => CriterionResult::error(id, name, budget, start, e),
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundaryCheck {
    /// Worst `|v(x, 1) - x|` component over all initializations and probes.
    pub max_right: f64,
    /// Worst `|v(x, 0) - (C - x)|` component.
    pub max_left: f64,
    /// Right bound holds, and for the mask model the left bound too.
    pub passed: bool,
}

pub const BOUNDARY_TOLERANCE: f64 = 1e-9;

/// Evaluates freshly initialized models of one kind at both boundaries.
/// Each initialization gets its own backbone, `C` and probes.
pub fn boundary_exactness_check(
    kind: ModelKind,
    set: BoundaryKind,
    arch: &MlpArch,
    inits: usize,
    probes: usize,
    seed: u64,
) -> Result<BoundaryCheck> {
    let d = arch.data_dim;
    let family = StreamFamily::new(seed, "acceptance/boundary");
    let (mut max_right, mut max_left) = (0.0f64, 0.0f64);
    for i in 0..inits {
        let fam = family.child(i as u64);
        let mlp = Mlp::init(arch.clone(), derive_seed(seed, "acceptance/boundary/init", i as u64))?;
        let c = sample_noise::<f64>(&fam, 0, 1, d).point(0);
        let mut data = sample_noise::<f64>(&fam, 1, probes, d);
        data.view_mut().mapv_inplace(|x| 3.0 * x);
        let noise = sample_noise::<f64>(&fam, 1 + probes as u64, probes, d);
        let model = FlowModel::build(kind, set, c.clone(), mlp)?;
        let r = boundary_violation(&model, &data, &noise, &c)?;
        max_right = max_right.max(r.right_violation_max_abs);
        max_left = max_left.max(r.left_violation_max_abs);
    }
    let passed = match kind {
        ModelKind::Mask => max_right <= BOUNDARY_TOLERANCE && max_left <= BOUNDARY_TOLERANCE,
        ModelKind::Subtraction => max_right <= BOUNDARY_TOLERANCE,
        ModelKind::Vanilla => false,
    };
    Ok(BoundaryCheck {
        max_right,
        max_left,
        passed,
    })
}

pub fn criterion_1() -> CriterionResult {
    wrap(1, "boundary exactness", 5.0, || {
        let arch = MlpArch::default_for(2);
        let mask = boundary_exactness_check(ModelKind::Mask, BoundaryKind::StandardCosine, &arch, 100, 100, 1)?;
        let sub = boundary_exactness_check(ModelKind::Subtraction, BoundaryKind::StandardCosine, &arch, 100, 100, 1)?;
        Ok((
            mask.passed && sub.passed,
            format!(
                "100 inits x 100 probes; mask right {:.1e} left {:.1e}, subtraction right {:.1e} (tolerance 1e-9)",
                mask.max_right, mask.max_left, sub.max_right
            ),
        ))
    })
}

fn gaussian_3d() -> Result<GaussianSpec> {
    Ok(GaussianSpec::new(Point::new(vec![1.0, -2.0, 0.5])?, vec![4.0, 0.25, 1.0])?)
}

pub fn criterion_2() -> CriterionResult {
    wrap(2, "oracle boundary identities", 1.0, || {
        let mut worst = 0.0f64;
        let fam = StreamFamily::new(2, "acceptance/oracle");
        let gaussian = Distribution::Gaussian(gaussian_3d()?);
        let mixture = fig2_recipe().data.build()?;
        for (k, target) in [gaussian, mixture].iter().enumerate() {
            let d = target.dim();
            let data = target.sample_batch(&fam.child(k as u64), 0, 1000);
            let noise = sample_noise::<f64>(&fam.child(k as u64), 1000, 1000, d);
            let r = boundary_violation(target, &data, &noise, &target.mean())?;
            worst = worst.max(r.right_violation_max_abs).max(r.left_violation_max_abs);
        }
        Ok((
            worst <= 1e-12,
            format!("Gaussian and mixture oracles, 1000 probes each; worst deviation {worst:.1e} (tolerance 1e-12)"),
        ))
    })
}

pub fn criterion_3() -> CriterionResult {
    wrap(3, "Tweedie identity", 1.0, || {
        let mut worst = 0.0f64;
        let fam = StreamFamily::new(3, "acceptance/tweedie");
        for (k, spec) in [GaussianSpec::scalar(1.0, 4.0)?, gaussian_3d()?].iter().enumerate() {
            let mut probes = sample_noise::<f64>(&fam, 100 * k as u64, 100, spec.dim());
            probes.view_mut().mapv_inplace(|x| 2.5 * x);
            for i in 1..=19 {
                let t = i as f64 * 0.05;
                let (scores, _, _) = tweedie_score_batch(spec, &probes, t, &ScoreOptions::default())?;
                for (x, s) in probes.points().zip(scores.points()) {
                    worst = worst.max(s.max_abs_diff(&gaussian_oracle_score(spec, &x, t)?));
                }
            }
        }
        Ok((
            worst <= 1e-10,
            format!("t = 0.05..0.95, 100 probes, 1D and 3D Gaussians; worst component error {worst:.1e} (tolerance 1e-10)"),
        ))
    })
}

fn unit_direction(like: &MlpParams, family: &StreamFamily, k: u64) -> MlpParams {
    let mut d = like.zeros_like();
    let noise = sample_noise::<f64>(family, k, 1, d.num_params());
    for (v, z) in d.iter_mut().zip(noise.array().iter()) {
        *v = *z;
    }
    let norm = d.dot(&d).sqrt();
    d.scale(1.0 / norm);
    d
}

/// Worst relative error between reverse-mode and central-difference directional derivatives.
pub fn gradient_check(kind: ModelKind, directions: usize, seed: u64) -> Result<f64> {
    const STEP: f64 = 1e-5;
    let family = StreamFamily::new(seed, "acceptance/gradient");
    let mlp = Mlp::init(MlpArch::default_for(2), derive_seed(seed, "acceptance/gradient/init", 0))?;
    let mut net = FlowModel::build(kind, BoundaryKind::OffsetCosine, Point::new(vec![0.3, -0.2])?, mlp)?;
    let x0 = sample_noise::<f64>(&family, 0, 16, 2);
    let x1 = sample_noise::<f64>(&family, 100, 16, 2);
    let z = sample_noise::<f64>(&family, 200, 16, 1);
    let times: Vec<f64> = z.array().iter().map(|z| 0.02 + 0.96 / (1.0 + (-z).exp())).collect();
    let eta = LossWeight::Unit;
    let (_, grads) = rf_loss_and_grads(&net, &x0, &x1, &times, &eta)?;
    let base = net.backbone().params().clone();
    let directions_family = family.child(1);
    let mut worst = 0.0f64;
    for k in 0..directions {
        let d = unit_direction(&base, &directions_family, k as u64);
        let analytic = grads.dot(&d);
        let mut loss_at = |s: f64| -> Result<f64> {
            let mut p = base.clone();
            p.add_scaled(&d, s);
            *net.backbone_mut().params_mut() = p;
            Ok(rf_loss_and_grads(&net, &x0, &x1, &times, &eta)?.0)
        };
        let numeric = (loss_at(STEP)? - loss_at(-STEP)?) / (2.0 * STEP);
        let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12);
        worst = worst.max(err);
    }
    Ok(worst)
}

pub fn criterion_4() -> CriterionResult {
    wrap(4, "gradient correctness", 10.0, || {
        let mut parts = Vec::new();
        let mut ok = true;
        for kind in [ModelKind::Vanilla, ModelKind::Mask, ModelKind::Subtraction] {
            let worst = gradient_check(kind, 24, 4)?;
            ok &= worst < 1e-5;
            parts.push(format!("{} {worst:.1e}", kind.name()));
        }
        Ok((ok, format!("24 directions, default architecture; worst relative error {} (tolerance 1e-5)", parts.join(", "))))
    })
}

const MARGINAL_SAMPLES: usize = 50_000;

fn oracle_terminal(kind: SamplerKind, steps: usize, tag: &str) -> Result<Batch> {
    let spec = GaussianSpec::scalar(1.0, 4.0)?;
    let z0 = sample_noise::<f64>(&StreamFamily::new(5, "acceptance/z0"), 0, MARGINAL_SAMPLES, 1);
    let config = SamplerConfig::new(kind, TimeGrid::uniform(steps)?, derive_seed(5, tag, 0)).terminal_only();
    Ok(run_sampler(&spec, &config, &z0)?.terminal)
}

fn moments_1d(b: &Batch) -> Result<(f64, f64)> {
    let m = moment_summary(b)?;
    Ok((m.mean[0], m.std[0]))
}

pub fn criterion_5() -> CriterionResult {
    wrap(5, "marginal preservation, Euler", 30.0, || {
        let (mean, std) = moments_1d(&oracle_terminal(SamplerKind::Euler, 500, "euler")?)?;
        Ok((
            (mean - 1.0).abs() <= 0.02 && (std - 2.0).abs() <= 0.04,
            format!("N(1, 2^2), 500 steps, 50k samples; mean {mean:.4} (1 +- 0.02), std {std:.4} (2 +- 0.04)"),
        ))
    })
}

pub fn criterion_6() -> CriterionResult {
    wrap(6, "marginal preservation, stochastic samplers", 120.0, || {
        let mut ok = true;
        let mut parts = Vec::new();
        for kind in [
            SamplerKind::CurvedEulerSde,
            SamplerKind::LangevinSde {
                sigma: SigmaSchedule::Triangular { sigma0: 0.5 },
            },
            SamplerKind::Overshoot { c: 1.0 },
        ] {
            let (mean, std) = moments_1d(&oracle_terminal(kind, 500, kind.name())?)?;
            ok &= (mean - 1.0).abs() <= 0.05 && (std - 2.0).abs() <= 0.08;
            parts.push(format!("{} mean {mean:.4} std {std:.4}", kind.name()));
        }
        Ok((ok, format!("{} (mean 1 +- 0.05, std 2 +- 0.08)", parts.join("; "))))
    })
}

pub fn criterion_7() -> CriterionResult {
    wrap(7, "degeneracy ladder", 5.0, || {
        let target = fig2_recipe().data.build()?;
        let z0 = sample_noise::<f64>(&StreamFamily::new(7, "acceptance/z0"), 0, 2000, 2);
        let grid = TimeGrid::uniform(100)?;
        let run = |kind| -> Result<_> { Ok(run_sampler(&target, &SamplerConfig::new(kind, grid.clone(), 77), &z0)?) };
        let euler = run(SamplerKind::Euler)?;
        let overshoot = run(SamplerKind::Overshoot { c: 0.0 })?;
        let langevin = run(SamplerKind::LangevinSde {
            sigma: SigmaSchedule::Zero,
        })?;
        let same = |a: &rectiflow::Trajectory| {
            a.states.len() == euler.states.len()
                && a.states.iter().zip(&euler.states).all(|(x, y)| x.array() == y.array())
                && a.terminal.array() == euler.terminal.array()
        };
        let ok = same(&overshoot) && same(&langevin) && overshoot.noise_draws == 0 && langevin.noise_draws == 0;
        Ok((
            ok,
            format!(
                "overshoot c = 0 and Langevin sigma = 0 vs Euler, 100 steps, 2000 samples: {} (noise draws {} and {})",
                if ok { "bitwise identical" } else { "differ" },
                overshoot.noise_draws,
                langevin.noise_draws
            ),
        ))
    })
}

pub fn criterion_8() -> CriterionResult {
    wrap(8, "curved Euler matches unit overshoot on fine grids", 120.0, || {
        let (ma, sa) = moments_1d(&oracle_terminal(SamplerKind::CurvedEulerSde, 1000, "fine/curved")?)?;
        let (mb, sb) = moments_1d(&oracle_terminal(SamplerKind::Overshoot { c: 1.0 }, 1000, "fine/overshoot")?)?;
        let (dm, ds) = ((ma - mb).abs(), (sa - sb).abs());
        Ok((
            dm <= 0.03 && ds <= 0.05,
            format!("1000 steps, 50k samples; mean gap {dm:.4} (<= 0.03), std gap {ds:.4} (<= 0.05)"),
        ))
    })
}

/// Criteria 1 to 8.
pub fn oracle_check() -> Vec<CriterionResult> {
    vec![
        criterion_1(),
        criterion_2(),
        criterion_3(),
        criterion_4(),
        criterion_5(),
        criterion_6(),
        criterion_7(),
        criterion_8(),
    ]
}

#[derive(Clone, Debug)]
pub struct Fig2Options {
    pub seeds: Vec<u64>,
    pub train_steps: usize,
    pub out_dir: PathBuf,
}

impl Fig2Options {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        Self {
            seeds: vec![0, 1, 2],
            train_steps: 20_000,
            out_dir: out_dir.into(),
        }
    }
}

/// Metrics of one trained model in the fig2 comparison.
#[derive(Clone, Debug)]
pub struct Fig2Run {
    pub seed: u64,
    pub model: ModelChoice,
    pub dir: PathBuf,
    pub metrics: MetricsSummary,
}

pub const FIG2_SCORE_TIME: f64 = 0.98;
pub const FIG2_SAMPLER: &str = "curved_euler_sde";

/// Trains and evaluates vanilla, mask and subtraction models for each seed.
pub fn fig2_runs(options: &Fig2Options) -> Result<Vec<Fig2Run>> {
    let mut runs = Vec::new();
    for &seed in &options.seeds {
        for model in [ModelChoice::Vanilla, ModelChoice::Mask, ModelChoice::Subtraction] {
            let mut config = fig2_recipe();
            config.seed = seed;
            config.model.kind = model;
            config.train.steps = options.train_steps;
            let dir = options.out_dir.join(format!("seed{seed}")).join(model.name());
            let manifest = run_experiment(&config, &RunOptions::new(&dir))?;
            if manifest.status != RunStatus::Completed {
                return Err(HarnessError::Other(format!("run in {} did not complete", dir.display())));
            }
            runs.push(Fig2Run {
                seed,
                model,
                dir,
                metrics: manifest.metrics,
            });
        }
    }
    Ok(runs)
}

/// The three fig2 comparisons over completed runs.
pub fn judge_fig2(runs: &[Fig2Run], seeds: &[u64]) -> Result<(bool, String)> {
    let find = |seed: u64, model: ModelChoice| -> Result<&MetricsSummary> {
        runs.iter()
            .find(|r| r.seed == seed && r.model == model)
            .map(|r| &r.metrics)
            .ok_or_else(|| HarnessError::Other(format!("missing {} run for seed {seed}", model.name())))
    };
    let boundary_models = [ModelChoice::Mask, ModelChoice::Subtraction];
    let majority = seeds.len() / 2 + 1;
    let mut a_ok = true;
    let mut b_wins = [0usize; 2];
    let mut c_wins = [0usize; 2];
    let mut lines = Vec::new();
    for &seed in seeds {
        let vanilla = find(seed, ModelChoice::Vanilla)?;
        let metric = |m: &MetricsSummary| -> Result<(f64, f64, f64)> {
            let b = m.boundary.ok_or_else(|| HarnessError::Other("missing boundary report".into()))?;
            let score = m
                .score_norm_at(FIG2_SCORE_TIME)
                .ok_or_else(|| HarnessError::Other("missing score norm at t = 0.98".into()))?;
            let ratio = m
                .sampler(FIG2_SAMPLER)
                .ok_or_else(|| HarnessError::Other("missing curved Euler sampler".into()))?
                .trace_ratio;
            Ok((b.right_violation_mean, score, (ratio - 1.0).abs()))
        };
        let (v_right, v_score, v_trace) = metric(vanilla)?;
        let mut line = format!("seed {seed}: vanilla right {v_right:.2e} score {v_score:.3} |ratio-1| {v_trace:.3}");
        for (k, model) in boundary_models.iter().enumerate() {
            let m = find(seed, *model)?;
            let (right, score, trace) = metric(m)?;
            let right_max = m.boundary.map_or(f64::INFINITY, |b| b.right_violation_max_abs);
            a_ok &= right_max <= BOUNDARY_TOLERANCE && v_right >= 1e3 * right.max(BOUNDARY_TOLERANCE);
            b_wins[k] += usize::from(v_score > score);
            c_wins[k] += usize::from(trace < v_trace);
            line.push_str(&format!(
                "; {} right {right:.1e} score {score:.3} |ratio-1| {trace:.3}",
                model.name()
            ));
        }
        lines.push(line);
    }
    let b_ok = b_wins.iter().all(|&w| w >= majority);
    let c_ok = c_wins.iter().all(|&w| w >= majority);
    let verdict = format!(
        "(a) {} (b) {} [mask {}/{n}, subtraction {}/{n}] (c) {} [mask {}/{n}, subtraction {}/{n}]",
        pass_word(a_ok),
        pass_word(b_ok),
        b_wins[0],
        b_wins[1],
        pass_word(c_ok),
        c_wins[0],
        c_wins[1],
        n = seeds.len()
    );
    lines.insert(0, verdict);
    Ok((a_ok && b_ok && c_ok, lines.join(" | ")))
}

fn pass_word(ok: bool) -> &'static str {
    if ok {
        "pass"
    } else {
        "fail"
    }
}

pub fn criterion_9(options: &Fig2Options) -> (CriterionResult, Vec<Fig2Run>) {
    let start = Instant::now();
    let name = "fig2 phenomenon reproduction";
    match fig2_runs(options) {
        Ok(runs) => {
            let result = match judge_fig2(&runs, &options.seeds) {
                Ok((ok, detail)) => CriterionResult::finish(9, name, 1800.0, start, ok, detail),
                Err(e) => CriterionResult::error(9, name, 1800.0, start, e),
            };
            (result, runs)
        }
        Err(e) => (CriterionResult::error(9, name, 1800.0, start, e), Vec::new()),
    }
}

/// The boundary-function sweep over all five sets. With a checkpoint the
/// children skip training and use a reduced sample count; the boundary
/// checks must then finish within a minute.
pub fn criterion_10(out_dir: &Path, checkpoint: Option<&Path>) -> CriterionResult {
    let budget = if checkpoint.is_some() { 600.0 } else { 3600.0 };
    wrap(10, "boundary function sweep", budget, || {
        let mut base = fig2_recipe();
        if checkpoint.is_some() {
            base.sampling.n_samples = 1000;
            base.metrics.reference_samples = 1000;
        }
        let mut options = SweepOptions::new(out_dir);
        options.checkpoint = checkpoint.map(Path::to_path_buf);
        let axis = SweepAxis::BoundaryFunctionSet;
        let outcome = run_sweep(&base, axis, &axis.default_values(), &options)?;
        let completed = outcome
            .children
            .iter()
            .filter(|c| matches!(&c.manifest, Ok(m) if m.status == RunStatus::Completed))
            .count();
        let checked = outcome.children.iter().filter(|c| c.boundary_check == Some(true)).count();
        let check_secs: f64 = outcome.children.iter().map(|c| c.boundary_check_secs).sum();
        let rows = std::fs::read_to_string(&outcome.summary_path)
            .map_err(|e| HarnessError::io(&outcome.summary_path, e))?
            .lines()
            .count()
            .saturating_sub(1);
        let n = BoundaryKind::ALL.len();
        let fast_enough = checkpoint.is_none() || check_secs < 60.0;
        Ok((
            completed == n && checked == n && rows == n && fast_enough,
            format!(
                "{completed}/{n} runs completed, {checked}/{n} pass the boundary check ({check_secs:.1} s), {rows} summary rows{}",
                if checkpoint.is_some() { ", checkpoint reuse" } else { "" }
            ),
        ))
    })
}
