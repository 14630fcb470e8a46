//! One experiment: train (or load, or use the oracle), sample, evaluate.
//!
//! Every artifact goes into a single output directory. `manifest.json` is
//! written last, including when a stage fails, in which case its status is
//! `failed` and it lists whatever was written before the failure.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write as _};
use std::path::PathBuf;

use rectiflow::samplers::SamplerConfig;
use rectiflow::training::data_mean_for;
use rectiflow::{
    boundary_violation, derive_seed, energy_distance, moment_summary, run_sampler, sample_noise, score_field_on_grid,
    score_norm_profile, train_with, Batch, Checkpoint, Coupling, Distribution, FlowModel, LossRecord, Mlp, Point, Record,
    StreamFamily, TimeGrid, VelocityField,
};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::manifest::{
    config_digest, timestamp, MetricsSummary, RunManifest, RunStatus, SamplerSummary, TrainSummary, MANIFEST_FILE,
};
use crate::svg::{emit_quiver_svg, emit_scatter_svg, PlotStyle};

pub const LOSS_FILE: &str = "loss.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const BOUNDARY_FILE: &str = "boundary_report.json";
pub const SCORE_PROFILE_FILE: &str = "score_profile.csv";
pub const ENERGY_FILE: &str = "energy_distance.json";
pub const VELOCITY_PROBE_FILE: &str = "velocity_probe.csv";
pub const SCORE_FIELD_FILE: &str = "score_field.csv";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Stages {
    pub train: bool,
    /// Write sample files and plots.
    pub sample: bool,
    /// Boundary, score and distribution metrics.
    pub evaluate: bool,
}

impl Stages {
    pub const ALL: Stages = Stages {
        train: true,
        sample: true,
        evaluate: true,
    };
    pub const TRAIN: Stages = Stages {
        train: true,
        sample: false,
        evaluate: false,
    };
    pub const SAMPLE: Stages = Stages {
        train: false,
        sample: true,
        evaluate: false,
    };
    pub const EVALUATE: Stages = Stages {
        train: false,
        sample: false,
        evaluate: true,
    };
}

#[derive(Clone, Debug)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    /// Backbone to load instead of training. The config still chooses the
    /// wrapper (model kind and boundary functions).
    pub checkpoint: Option<PathBuf>,
    pub stages: Stages,
}

impl RunOptions {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        Self {
            out_dir: out_dir.into(),
            checkpoint: None,
            stages: Stages::ALL,
        }
    }
}

/// Seeds of every stage, keyed by stage name.
pub fn stage_seeds(config: &ExperimentConfig) -> BTreeMap<String, u64> {
    let m = config.seed;
    let mut seeds = BTreeMap::new();
    for tag in ["train", "coupling", "sampling/z0", "metrics/probes", "metrics/reference"] {
        seeds.insert(tag.to_string(), derive_seed(m, tag, 0));
    }
    for s in &config.samplers {
        let tag = format!("sampler/{}", s.name());
        seeds.insert(tag.clone(), derive_seed(m, &tag, 0));
    }
    seeds
}

/// Per-sampler distribution metrics as written to `energy_distance.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub reference_samples: usize,
    pub target_covariance_trace: f64,
    pub samplers: Vec<SamplerSummary>,
}

struct Outputs {
    dir: PathBuf,
    files: BTreeSet<String>,
}

impl Outputs {
    fn path(&mut self, name: &str) -> PathBuf {
        self.files.insert(name.to_string());
        self.dir.join(name)
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.path(name);
        fs::write(&path, contents).map_err(|e| HarnessError::io(&path, e))
    }

    fn write_json<S: Serialize>(&mut self, name: &str, value: &S) -> Result<()> {
        let text = serde_json::to_string_pretty(value).map_err(|e| HarnessError::Other(e.to_string()))?;
        self.write(name, &(text + "\n"))
    }
}

struct Run<'a> {
    config: &'a ExperimentConfig,
    options: &'a RunOptions,
    seeds: &'a BTreeMap<String, u64>,
    out: Outputs,
    metrics: MetricsSummary,
    notes: Vec<String>,
}

enum Field {
    Oracle(Distribution),
    Trained(FlowModel),
}

impl Field {
    fn as_velocity(&self) -> &dyn VelocityField<f64> {
        match self {
            Field::Oracle(d) => d,
            Field::Trained(m) => m,
        }
    }
}

/// Runs the configured stages and writes the manifest.
pub fn run_experiment(config: &ExperimentConfig, options: &RunOptions) -> Result<RunManifest> {
    config.validate()?;
    let started_at = timestamp();
    let dir = &options.out_dir;
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let seeds = stage_seeds(config);
    let mut run = Run {
        config,
        options,
        seeds: &seeds,
        out: Outputs {
            dir: dir.clone(),
            files: BTreeSet::new(),
        },
        metrics: MetricsSummary {
            model: config.model.kind.name().to_string(),
            ..MetricsSummary::default()
        },
        notes: vec!["target distribution: synthetic toy from config.data, a stand-in rather than a published dataset".into()],
    };
    let result = run.execute();
    run.out.files.remove(MANIFEST_FILE);
    let manifest = RunManifest {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        status: if result.is_ok() { RunStatus::Completed } else { RunStatus::Failed },
        error: result.as_ref().err().map(ToString::to_string),
        config_digest: config_digest(config),
        config: config.clone(),
        started_at,
        finished_at: timestamp(),
        seeds: seeds.clone(),
        files: run.out.files.iter().cloned().collect(),
        metrics: run.metrics,
        notes: run.notes,
    };
    manifest.write(dir)?;
    result.map(|()| manifest)
}

impl Run<'_> {
    fn seed(&self, tag: &str) -> u64 {
        self.seeds[tag]
    }

    fn execute(&mut self) -> Result<()> {
        let target = self.config.data.build()?;
        let coupling = Coupling::new(target.clone(), self.seed("coupling"));
        let (field, c) = self.obtain_field(&target, &coupling)?;
        let stages = self.options.stages;
        if !(stages.sample || stages.evaluate) {
            return Ok(());
        }
        let v = field.as_velocity();
        let samples = self.sample(v)?;
        if stages.evaluate {
            self.evaluate(v, &target, &c, &samples)?;
        }
        Ok(())
    }

    /// The velocity field to sample from and the `C` its left boundary is judged against.
    fn obtain_field(&mut self, target: &Distribution, coupling: &Coupling) -> Result<(Field, Point)> {
        let config = self.config;
        let Some(kind) = config.model.kind.trainable() else {
            if self.options.checkpoint.is_some() {
                return Err(HarnessError::Config("the oracle model does not take a checkpoint".into()));
            }
            return Ok((Field::Oracle(target.clone()), target.mean()));
        };
        let train_cfg = config.train_config(self.seed("train"));
        if let Some(path) = &self.options.checkpoint {
            let ckpt = Checkpoint::load(path)?;
            if ckpt.arch.data_dim != target.dim() {
                return Err(HarnessError::Config(format!(
                    "checkpoint has data dimension {}, config has {}",
                    ckpt.arch.data_dim,
                    target.dim()
                )));
            }
            let c = match &ckpt.model.data_mean {
                Some(m) => Point::new(m.clone())?,
                None => data_mean_for(&train_cfg, coupling)?,
            };
            let mlp = Mlp::new(ckpt.arch.clone(), ckpt.params.clone())?;
            let model = FlowModel::build(kind, config.model.boundary_functions, c.clone(), mlp)?;
            self.notes.push(format!("backbone loaded from {}", path.display()));
            return Ok((Field::Trained(model), c));
        }
        if !self.options.stages.train {
            return Err(HarnessError::Config(format!(
                "model `{}` needs training; pass --checkpoint or run the train stage",
                kind.name()
            )));
        }
        let c = data_mean_for(&train_cfg, coupling)?;
        let model = self.train(&train_cfg, coupling)?;
        Ok((Field::Trained(model), c))
    }

    fn train(&mut self, train_cfg: &rectiflow::TrainConfig, coupling: &Coupling) -> Result<FlowModel> {
        let path = self.out.path(LOSS_FILE);
        let file = File::create(&path).map_err(|e| HarnessError::io(&path, e))?;
        let mut writer = BufWriter::new(file);
        let mut io_error = writeln!(writer, "step,loss").err();
        let mut recent: Vec<f64> = Vec::new();
        let observe = |r: &LossRecord| {
            recent.push(r.loss);
            if io_error.is_none() {
                io_error = writeln!(writer, "{},{}", r.step, r.loss).and_then(|()| writer.flush()).err();
            }
        };
        let outcome = train_with(train_cfg, coupling, observe);
        if let Some(e) = io_error {
            return Err(HarnessError::io(&path, e));
        }
        let outcome = outcome?;
        let tail = &recent[recent.len().saturating_sub(10)..];
        self.metrics.train = Some(TrainSummary {
            steps: outcome.steps,
            final_loss: tail.iter().sum::<f64>() / tail.len().max(1) as f64,
        });
        let ckpt_path = self.out.path(CHECKPOINT_FILE);
        outcome.checkpoint().save(&ckpt_path)?;
        Ok(outcome.model)
    }

    /// Runs every sampler from one shared batch of initial noise.
    fn sample(&mut self, v: &dyn VelocityField<f64>) -> Result<Vec<(String, usize, u64, Batch)>> {
        let config = self.config;
        let d = config.data.dim();
        let z0 = sample_noise(&StreamFamily::new(self.seed("sampling/z0"), "z0"), 0, config.sampling.n_samples, d);
        let mut results = Vec::with_capacity(config.samplers.len());
        for spec in &config.samplers {
            let name = spec.name();
            let grid = TimeGrid::uniform(spec.steps())?;
            let sampler = SamplerConfig::new(spec.kind(), grid, self.seed(&format!("sampler/{name}"))).terminal_only();
            let traj = run_sampler(v, &sampler, &z0)?;
            if self.options.stages.sample {
                self.out.write(&format!("samples_{name}.csv"), &batch_csv(&traj.terminal))?;
                if d == 2 && config.plots.enabled {
                    let style = PlotStyle::from_spec(&config.plots, format!("{} samples ({name})", config.model.kind.name()));
                    emit_scatter_svg(&traj.terminal, self.out.path(&format!("samples_{name}.svg")), &style)?;
                }
                let k = config.sampling.trajectory_samples;
                if k > 0 {
                    // Noise is keyed by sample index, so these paths end at the first k samples above.
                    let full = SamplerConfig {
                        record: Record::Full,
                        ..sampler.clone()
                    };
                    let paths = run_sampler(v, &full, &z0.slice_rows(0, k))?;
                    self.out.write(&format!("trajectory_{name}.csv"), &trajectory_csv(&paths.times, &paths.states))?;
                }
            }
            results.push((name.to_string(), spec.steps(), traj.noise_draws, traj.terminal));
        }
        Ok(results)
    }

    fn evaluate(
        &mut self,
        v: &dyn VelocityField<f64>,
        target: &Distribution,
        c: &Point,
        samples: &[(String, usize, u64, Batch)],
    ) -> Result<()> {
        let config = self.config;
        let d = target.dim();
        let probe_seed = self.seed("metrics/probes");
        let probes_data = target.sample_batch(&StreamFamily::new(probe_seed, "data"), 0, config.metrics.probes);
        let probes_noise = sample_noise(&StreamFamily::new(probe_seed, "noise"), 0, config.metrics.probes, d);

        let report = boundary_violation(v, &probes_data, &probes_noise, c)?;
        self.out.write_json(BOUNDARY_FILE, &report)?;
        self.metrics.boundary = Some(report);

        let profile = score_norm_profile(v, &probes_data, &config.metrics.profile_times)?;
        self.out.write(SCORE_PROFILE_FILE, &profile.to_csv())?;
        self.metrics.score_profile = profile.rows;

        let reference = target.sample_batch(
            &StreamFamily::new(self.seed("metrics/reference"), "reference"),
            0,
            config.metrics.reference_samples,
        );
        let target_trace = target.covariance_trace();
        let mut summaries = Vec::with_capacity(samples.len());
        for (name, steps, noise_draws, batch) in samples {
            let moments = moment_summary(batch)?;
            summaries.push(SamplerSummary {
                sampler: name.clone(),
                steps: *steps,
                noise_draws: *noise_draws,
                trace_ratio: moments.covariance_trace / target_trace,
                covariance_trace: moments.covariance_trace,
                mean: moments.mean,
                std: moments.std,
                energy_distance: Some(energy_distance(batch, &reference)?),
            });
        }
        self.out.write_json(
            ENERGY_FILE,
            &EnergyReport {
                reference_samples: reference.len(),
                target_covariance_trace: target_trace,
                samplers: summaries.clone(),
            },
        )?;
        self.metrics.samplers = summaries;

        if d == 2 {
            self.grid_fields(v, c)?;
        }
        Ok(())
    }

    /// Velocity probe at both boundaries and the score field, on a regular grid over the plot viewport.
    fn grid_fields(&mut self, v: &dyn VelocityField<f64>, c: &Point) -> Result<()> {
        let config = self.config;
        let grid = viewport_grid(config.plots.viewport, config.metrics.grid_resolution);
        let at_one = v.velocity(&grid, 1.0)?;
        let at_zero = v.velocity(&grid, 0.0)?;
        let mut csv = String::from("t,x0,x1,v0,v1,expected0,expected1\n");
        for (t, vel) in [(0.0, &at_zero), (1.0, &at_one)] {
            for i in 0..grid.len() {
                let (x0, x1) = (grid.array()[[i, 0]], grid.array()[[i, 1]]);
                let expected = if t == 0.0 {
                    [c.coords()[0] - x0, c.coords()[1] - x1]
                } else {
                    [x0, x1]
                };
                let _ = writeln!(
                    csv,
                    "{t},{x0},{x1},{},{},{},{}",
                    vel.array()[[i, 0]],
                    vel.array()[[i, 1]],
                    expected[0],
                    expected[1]
                );
            }
        }
        self.out.write(VELOCITY_PROBE_FILE, &csv)?;

        let entries = score_field_on_grid(v, &grid, &config.metrics.score_grid_times)?;
        let mut csv = String::from("t,x0,x1,s0,s1,clamped\n");
        for e in &entries {
            let (x, s) = (e.x.coords(), e.estimate.value.coords());
            let _ = writeln!(csv, "{},{},{},{},{},{}", e.estimate.t, x[0], x[1], s[0], s[1], e.estimate.clamped);
        }
        self.out.write(SCORE_FIELD_FILE, &csv)?;

        if config.plots.enabled {
            let style = PlotStyle::from_spec(&config.plots, format!("{} velocity at t = 1", config.model.kind.name()));
            emit_quiver_svg(&grid, &at_one, self.out.path("velocity_t1.svg"), &style, None)?;
            for (k, t) in config.metrics.score_grid_times.iter().enumerate() {
                let chunk: Vec<Point> = entries[k * grid.len()..(k + 1) * grid.len()]
                    .iter()
                    .map(|e| e.estimate.value.clone())
                    .collect();
                let scores = Batch::from_points(&chunk)?;
                let style = PlotStyle::from_spec(&config.plots, format!("{} score at t = {t}", config.model.kind.name()));
                emit_quiver_svg(&grid, &scores, self.out.path(&format!("score_field_t{t}.svg")), &style, None)?;
            }
        }
        Ok(())
    }
}

/// `resolution x resolution` points spanning the viewport, row-major in `y` then `x`.
pub fn viewport_grid(viewport: [f64; 4], resolution: usize) -> Batch {
    let [x0, x1, y0, y1] = viewport;
    let r = resolution.max(2);
    let step = |lo: f64, hi: f64, i: usize| lo + (hi - lo) * i as f64 / (r - 1) as f64;
    let mut flat = Vec::with_capacity(2 * r * r);
    for j in 0..r {
        for i in 0..r {
            flat.push(step(x0, x1, i));
            flat.push(step(y0, y1, j));
        }
    }
    Batch::from_flat(2, flat).expect("grid shape")
}

pub fn batch_csv(b: &Batch) -> String {
    let mut out = coord_header(b.dim());
    out.push('\n');
    for row in b.array().rows() {
        let line: Vec<String> = row.iter().map(f64::to_string).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

fn coord_header(d: usize) -> String {
    (0..d).map(|j| format!("x{j}")).collect::<Vec<_>>().join(",")
}

/// Long format: one line per (sample, step).
pub fn trajectory_csv(times: &[f64], states: &[Batch]) -> String {
    let d = states.first().map_or(0, Batch::dim);
    let mut out = format!("sample_id,step,t,{}\n", coord_header(d));
    let n = states.first().map_or(0, Batch::len);
    for i in 0..n {
        for (k, (t, s)) in times.iter().zip(states).enumerate() {
            let coords: Vec<String> = s.row(i).iter().map(f64::to_string).collect();
            let _ = writeln!(out, "{i},{k},{t},{}", coords.join(","));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_spans_the_viewport() {
        let g = viewport_grid([-1.0, 1.0, 0.0, 2.0], 3);
        assert_eq!(g.len(), 9);
        assert_eq!(g.row(0).to_vec(), vec![-1.0, 0.0]);
        assert_eq!(g.row(2).to_vec(), vec![1.0, 0.0]);
        assert_eq!(g.row(8).to_vec(), vec![1.0, 2.0]);
    }

    #[test]
    fn csv_layouts() {
        let b = Batch::from_flat(2, vec![1.0, 2.5, -3.0, 0.0]).unwrap();
        assert_eq!(batch_csv(&b), "x0,x1\n1,2.5\n-3,0\n");
        let states = vec![b.clone(), b];
        let csv = trajectory_csv(&[0.0, 1.0], &states);
        assert_eq!(csv.lines().next(), Some("sample_id,step,t,x0,x1"));
        assert_eq!(csv.lines().nth(2), Some("0,1,1,1,2.5"));
        assert_eq!(csv.lines().count(), 5);
    }

    #[test]
    fn stage_seeds_are_distinct_and_cover_samplers() {
        let config = crate::config::parse_config_str(
            "seed = 3\n[data]\nkind = \"gaussian\"\nmean = [0.0]\nvariances = [1.0]\n",
        )
        .unwrap();
        let seeds = stage_seeds(&config);
        assert!(seeds.contains_key("sampler/euler") && seeds.contains_key("sampler/curved_euler_sde"));
        let unique: BTreeSet<u64> = seeds.values().copied().collect();
        assert_eq!(unique.len(), seeds.len());
    }
}
