//! One-axis parameter sweeps over a base config.
//!
//! Each value gets its own child directory and child seed. A failing child is
//! recorded in the summary and the sweep continues.

use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rectiflow::{derive_seed, BoundaryKind, ModelKind};

use crate::acceptance::boundary_exactness_check;
use crate::config::{ExperimentConfig, ModelChoice, SamplerSpec};
use crate::error::{HarnessError, Result};
use crate::experiment::{run_experiment, RunOptions};
use crate::manifest::{RunManifest, RunStatus};

pub const SUMMARY_FILE: &str = "summary.csv";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepAxis {
    BoundaryFunctionSet,
    OvershootC,
    NSteps,
}

impl SweepAxis {
    pub const ALL: [SweepAxis; 3] = [SweepAxis::BoundaryFunctionSet, SweepAxis::OvershootC, SweepAxis::NSteps];

    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::BoundaryFunctionSet => "boundary_function_set",
            SweepAxis::OvershootC => "overshoot_c",
            SweepAxis::NSteps => "n_steps",
        }
    }

    pub fn default_values(self) -> Vec<String> {
        let v: &[&str] = match self {
            SweepAxis::BoundaryFunctionSet => &["standard_cosine", "offset_cosine", "quadratic", "square_root", "linear"],
            SweepAxis::OvershootC => &["0", "1", "2", "5"],
            SweepAxis::NSteps => &["50", "100", "200"],
        };
        v.iter().map(ToString::to_string).collect()
    }

    /// The child config for one value. The child seed is set by the caller.
    pub fn apply(self, base: &ExperimentConfig, value: &str) -> Result<ExperimentConfig> {
        let bad = |what: &str| HarnessError::Config(format!("sweep {}: invalid value `{value}` ({what})", self.name()));
        let mut config = base.clone();
        match self {
            SweepAxis::BoundaryFunctionSet => {
                if config.model.kind != ModelChoice::Mask {
                    return Err(HarnessError::Config(
                        "a boundary_function_set sweep needs model.kind = \"mask\"".into(),
                    ));
                }
                config.model.boundary_functions = value.parse().map_err(|_| bad("unknown set"))?;
            }
            SweepAxis::OvershootC => {
                let c: f64 = value.parse().map_err(|_| bad("not a number"))?;
                if !(c.is_finite() && c >= 0.0) {
                    return Err(bad("must be finite and non-negative"));
                }
                if let Some(SamplerSpec::Overshoot { c: existing, .. }) =
                    config.samplers.iter_mut().find(|s| matches!(s, SamplerSpec::Overshoot { .. }))
                {
                    *existing = c;
                } else {
                    let steps = config.samplers.first().map_or(100, SamplerSpec::steps);
                    config.samplers.push(SamplerSpec::Overshoot { steps, c });
                }
            }
            SweepAxis::NSteps => {
                let n: usize = value.parse().map_err(|_| bad("not a positive integer"))?;
                if n == 0 {
                    return Err(bad("not a positive integer"));
                }
                config.samplers.iter_mut().for_each(|s| s.set_steps(n));
            }
        }
        Ok(config)
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepAxis {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        SweepAxis::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| HarnessError::Config(format!("unknown sweep axis `{s}`")))
    }
}

#[derive(Clone, Debug)]
pub struct SweepChild {
    pub index: usize,
    pub value: String,
    pub seed: u64,
    pub dir: PathBuf,
    pub manifest: std::result::Result<RunManifest, String>,
    /// Randomized boundary exactness check for the child's wrapper (mask and subtraction models only).
    pub boundary_check: Option<bool>,
    pub boundary_check_secs: f64,
}

#[derive(Clone, Debug)]
pub struct SweepOutcome {
    pub axis: SweepAxis,
    pub children: Vec<SweepChild>,
    pub summary_path: PathBuf,
}

impl SweepOutcome {
    pub fn failures(&self) -> usize {
        self.children.iter().filter(|c| c.manifest.is_err()).count()
    }
}

#[derive(Clone, Debug)]
pub struct SweepOptions {
    pub out_dir: PathBuf,
    pub workers: usize,
    /// Shared backbone for every child, skipping training.
    pub checkpoint: Option<PathBuf>,
    /// Random initializations per child for the boundary exactness column; 0 disables it.
    pub boundary_inits: usize,
}

impl SweepOptions {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        Self {
            out_dir: out_dir.into(),
            workers: 1,
            checkpoint: None,
            boundary_inits: 100,
        }
    }
}

fn child_dir_name(axis: SweepAxis, index: usize, value: &str) -> String {
    let clean: String = value
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
        .collect();
    format!("{}-{index:02}-{clean}", axis.name())
}

/// Runs one child per value and writes `summary.csv`.
///
/// Values are validated up front, so a bad value fails the sweep before any
/// child runs. Runtime failures of individual children do not stop the sweep.
pub fn run_sweep(
    base: &ExperimentConfig,
    axis: SweepAxis,
    values: &[String],
    options: &SweepOptions,
) -> Result<SweepOutcome> {
    base.validate()?;
    if values.is_empty() {
        return Err(HarnessError::Config("a sweep needs at least one value".into()));
    }
    let mut plans = Vec::with_capacity(values.len());
    for (index, value) in values.iter().enumerate() {
        let mut config = axis.apply(base, value)?;
        config.seed = derive_seed(base.seed, &format!("sweep/{}", axis.name()), index as u64);
        config.output_dir = None;
        config.validate()?;
        let dir = options.out_dir.join(child_dir_name(axis, index, value));
        plans.push((index, value.clone(), config, dir));
    }
    fs::create_dir_all(&options.out_dir).map_err(|e| HarnessError::io(&options.out_dir, e))?;

    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<SweepChild>>> = Mutex::new(vec![None; plans.len()]);
    let workers = options.workers.clamp(1, plans.len());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::SeqCst);
                let Some((index, value, config, dir)) = plans.get(k) else {
                    break;
                };
                let child = run_child(*index, value, config, dir, options);
                slots.lock().expect("sweep slots")[k] = Some(child);
            });
        }
    });
    let children: Vec<SweepChild> = slots
        .into_inner()
        .expect("sweep slots")
        .into_iter()
        .map(|c| c.expect("every child ran"))
        .collect();

    let configs: Vec<&ExperimentConfig> = plans.iter().map(|p| &p.2).collect();
    let summary_path = options.out_dir.join(SUMMARY_FILE);
    let text = summary_csv(axis, &children, &configs);
    fs::write(&summary_path, text).map_err(|e| HarnessError::io(&summary_path, e))?;
    Ok(SweepOutcome {
        axis,
        children,
        summary_path,
    })
}

fn run_child(index: usize, value: &str, config: &ExperimentConfig, dir: &Path, options: &SweepOptions) -> SweepChild {
    let run_options = RunOptions {
        out_dir: dir.to_path_buf(),
        checkpoint: options.checkpoint.clone(),
        ..RunOptions::new(dir)
    };
    let manifest = run_experiment(config, &run_options).map_err(|e| e.to_string());
    let check_start = std::time::Instant::now();
    let boundary_check = match config.model.kind.trainable() {
        Some(kind @ (ModelKind::Mask | ModelKind::Subtraction)) if options.boundary_inits > 0 => {
            let set: BoundaryKind = config.model.boundary_functions;
            Some(
                boundary_exactness_check(kind, set, &config.arch(), options.boundary_inits, 100, config.seed)
                    .map(|c| c.passed)
                    .unwrap_or(false),
            )
        }
        _ => None,
    };
    SweepChild {
        index,
        value: value.to_string(),
        seed: config.seed,
        dir: dir.to_path_buf(),
        manifest,
        boundary_check,
        boundary_check_secs: check_start.elapsed().as_secs_f64(),
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One row per child. Sampler columns cover every sampler that appears in any child.
pub fn summary_csv(axis: SweepAxis, children: &[SweepChild], configs: &[&ExperimentConfig]) -> String {
    let mut samplers: Vec<&'static str> = Vec::new();
    for c in configs {
        for s in &c.samplers {
            if !samplers.contains(&s.name()) {
                samplers.push(s.name());
            }
        }
    }
    let mut out = format!(
        "index,{},seed,status,final_loss,right_violation_max_abs,left_violation_max_abs,boundary_check",
        axis.name()
    );
    for s in &samplers {
        let _ = write!(out, ",energy_{s},trace_ratio_{s}");
    }
    out.push_str(",error\n");
    for child in children {
        let (status, metrics, error) = match &child.manifest {
            Ok(m) => (m.status, Some(&m.metrics), String::new()),
            Err(e) => (RunStatus::Failed, None, e.replace([',', '\n'], ";")),
        };
        let status = match status {
            RunStatus::Completed => "completed",
            RunStatus::Failed => "failed",
        };
        let boundary = metrics.and_then(|m| m.boundary);
        let check = match child.boundary_check {
            Some(true) => "pass",
            Some(false) => "fail",
            None => "",
        };
        let _ = write!(
            out,
            "{},{},{},{status},{},{},{},{check}",
            child.index,
            child.value,
            child.seed,
            fmt_opt(metrics.and_then(|m| m.train.as_ref()).map(|t| t.final_loss)),
            fmt_opt(boundary.map(|b| b.right_violation_max_abs)),
            fmt_opt(boundary.map(|b| b.left_violation_max_abs)),
        );
        for s in &samplers {
            let summary = metrics.and_then(|m| m.sampler(s));
            let _ = write!(
                out,
                ",{},{}",
                fmt_opt(summary.and_then(|x| x.energy_distance)),
                fmt_opt(summary.map(|x| x.trace_ratio))
            );
        }
        let _ = writeln!(out, ",{error}");
    }
    out
}
