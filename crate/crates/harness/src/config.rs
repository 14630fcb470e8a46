//! Experiment configuration.
//!
//! Configs are TOML. Every table rejects unknown keys, and every key except
//! `seed` and `data` has a documented default, so a misspelled key is an
//! error rather than a silently ignored setting. The full grammar with
//! defaults is in the repository README.

use std::fs;
use std::path::{Path, PathBuf};

use rectiflow::data::{GaussianMixture, ToyDistribution};
use rectiflow::metrics::DEFAULT_PROFILE_TIMES;
use rectiflow::{
    Activation, AdamConfig, BoundaryKind, DataMeanMode, GaussianSpec, LossWeight, MlpArch, ModelKind, Point,
    SamplerKind, SigmaSchedule, TimeSampler, TrainConfig,
};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed. Every stage seed is derived from it.
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub data: DataSpec,
    #[serde(default)]
    pub model: ModelSpec,
    #[serde(default)]
    pub train: TrainSpec,
    #[serde(default = "default_samplers")]
    pub samplers: Vec<SamplerSpec>,
    #[serde(default)]
    pub sampling: SamplingSpec,
    #[serde(default)]
    pub metrics: MetricsSpec,
    #[serde(default)]
    pub plots: PlotSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSpec {
    /// Diagonal Gaussian.
    Gaussian { mean: Vec<f64>, variances: Vec<f64> },
    /// Isotropic Gaussian mixture with a shared standard deviation.
    Mixture {
        means: Vec<Vec<f64>>,
        std: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        weights: Option<Vec<f64>>,
    },
}

impl DataSpec {
    pub fn build(&self) -> Result<ToyDistribution<f64>> {
        let built = match self {
            DataSpec::Gaussian { mean, variances } => {
                GaussianSpec::new(Point::new(mean.clone())?, variances.clone()).map(ToyDistribution::Gaussian)
            }
            DataSpec::Mixture { means, std, weights } => means
                .iter()
                .map(|m| Point::new(m.clone()))
                .collect::<rectiflow::Result<Vec<_>>>()
                .and_then(|means| GaussianMixture::new(means, *std, weights.clone()))
                .map(ToyDistribution::Mixture),
        };
        built.map_err(|e| HarnessError::Config(format!("data: {e}")))
    }

    pub fn dim(&self) -> usize {
        match self {
            DataSpec::Gaussian { mean, .. } => mean.len(),
            DataSpec::Mixture { means, .. } => means.first().map_or(0, Vec::len),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelChoice {
    Vanilla,
    #[default]
    Mask,
    Subtraction,
    /// The closed-form optimal velocity of the data distribution; nothing is trained.
    Oracle,
}

impl ModelChoice {
    pub fn trainable(self) -> Option<ModelKind> {
        match self {
            ModelChoice::Vanilla => Some(ModelKind::Vanilla),
            ModelChoice::Mask => Some(ModelKind::Mask),
            ModelChoice::Subtraction => Some(ModelKind::Subtraction),
            ModelChoice::Oracle => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelChoice::Oracle => "oracle",
            other => other.trainable().expect("trainable").name(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    #[serde(default)]
    pub kind: ModelChoice,
    #[serde(default)]
    pub boundary_functions: BoundaryKind,
    #[serde(default = "default_data_mean")]
    pub data_mean: DataMeanMode,
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_time_frequencies")]
    pub time_frequencies: usize,
    #[serde(default)]
    pub activation: Activation,
}

fn default_data_mean() -> DataMeanMode {
    DataMeanMode::Empirical { samples: 100_000 }
}
fn default_hidden() -> Vec<usize> {
    vec![128, 128, 128]
}
fn default_time_frequencies() -> usize {
    8
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            kind: ModelChoice::default(),
            boundary_functions: BoundaryKind::default(),
            data_mean: default_data_mean(),
            hidden: default_hidden(),
            time_frequencies: default_time_frequencies(),
            activation: Activation::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSpec {
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_log_every")]
    pub log_every: usize,
    #[serde(default)]
    pub optimizer: AdamConfig,
    #[serde(default)]
    pub time_sampler: TimeSampler,
    #[serde(default)]
    pub loss_weight: LossWeight,
}

fn default_steps() -> usize {
    20_000
}
fn default_batch() -> usize {
    256
}
fn default_log_every() -> usize {
    100
}

impl Default for TrainSpec {
    fn default() -> Self {
        Self {
            steps: default_steps(),
            batch_size: default_batch(),
            log_every: default_log_every(),
            optimizer: AdamConfig::default(),
            time_sampler: TimeSampler::default(),
            loss_weight: LossWeight::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SamplerSpec {
    Euler {
        #[serde(default = "default_sampler_steps")]
        steps: usize,
    },
    LangevinSde {
        #[serde(default = "default_sampler_steps")]
        steps: usize,
        #[serde(default = "default_sigma")]
        sigma: SigmaSchedule,
    },
    CurvedEulerSde {
        #[serde(default = "default_sampler_steps")]
        steps: usize,
    },
    Overshoot {
        #[serde(default = "default_sampler_steps")]
        steps: usize,
        c: f64,
    },
}

fn default_sampler_steps() -> usize {
    100
}
fn default_sigma() -> SigmaSchedule {
    SigmaSchedule::Triangular { sigma0: 0.5 }
}
fn default_samplers() -> Vec<SamplerSpec> {
    vec![
        SamplerSpec::Euler { steps: 100 },
        SamplerSpec::CurvedEulerSde { steps: 100 },
    ]
}

impl SamplerSpec {
    pub fn kind(&self) -> SamplerKind {
        match *self {
            SamplerSpec::Euler { .. } => SamplerKind::Euler,
            SamplerSpec::LangevinSde { sigma, .. } => SamplerKind::LangevinSde { sigma },
            SamplerSpec::CurvedEulerSde { .. } => SamplerKind::CurvedEulerSde,
            SamplerSpec::Overshoot { c, .. } => SamplerKind::Overshoot { c },
        }
    }

    pub fn steps(&self) -> usize {
        match *self {
            SamplerSpec::Euler { steps }
            | SamplerSpec::LangevinSde { steps, .. }
            | SamplerSpec::CurvedEulerSde { steps }
            | SamplerSpec::Overshoot { steps, .. } => steps,
        }
    }

    pub fn set_steps(&mut self, n: usize) {
        match self {
            SamplerSpec::Euler { steps }
            | SamplerSpec::LangevinSde { steps, .. }
            | SamplerSpec::CurvedEulerSde { steps }
            | SamplerSpec::Overshoot { steps, .. } => *steps = n,
        }
    }

    pub fn name(&self) -> &'static str {
        self.kind().name()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingSpec {
    /// Samples generated per sampler.
    #[serde(default = "default_n_samples")]
    pub n_samples: usize,
    /// How many of those samples also get their full trajectory written.
    #[serde(default)]
    pub trajectory_samples: usize,
}

fn default_n_samples() -> usize {
    5000
}

impl Default for SamplingSpec {
    fn default() -> Self {
        Self {
            n_samples: default_n_samples(),
            trajectory_samples: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsSpec {
    /// Probe count for boundary reports and score profiles.
    #[serde(default = "default_probes")]
    pub probes: usize,
    /// Target samples compared against each sampler's output.
    #[serde(default = "default_n_samples")]
    pub reference_samples: usize,
    #[serde(default = "default_profile_times")]
    pub profile_times: Vec<f64>,
    /// Grid points per axis for the velocity probe and the score field (2D only).
    #[serde(default = "default_grid")]
    pub grid_resolution: usize,
    #[serde(default = "default_grid_times")]
    pub score_grid_times: Vec<f64>,
}

fn default_probes() -> usize {
    1000
}
fn default_profile_times() -> Vec<f64> {
    DEFAULT_PROFILE_TIMES.to_vec()
}
fn default_grid() -> usize {
    20
}
fn default_grid_times() -> Vec<f64> {
    vec![0.5, 0.9, 0.98]
}

impl Default for MetricsSpec {
    fn default() -> Self {
        Self {
            probes: default_probes(),
            reference_samples: default_n_samples(),
            profile_times: default_profile_times(),
            grid_resolution: default_grid(),
            score_grid_times: default_grid_times(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlotSpec {
    #[serde(default = "default_true")]
    pub enabled: bool,
    /// `[x_min, x_max, y_min, y_max]` in data units.
    #[serde(default = "default_viewport")]
    pub viewport: [f64; 4],
    #[serde(default = "default_width")]
    pub width: u32,
    #[serde(default = "default_height")]
    pub height: u32,
}

fn default_true() -> bool {
    true
}
fn default_viewport() -> [f64; 4] {
    [-4.0, 4.0, -3.0, 3.0]
}
fn default_width() -> u32 {
    480
}
fn default_height() -> u32 {
    360
}

impl Default for PlotSpec {
    fn default() -> Self {
        Self {
            enabled: true,
            viewport: default_viewport(),
            width: default_width(),
            height: default_height(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(HarnessError::Config(msg));
        let target = self.data.build()?;
        let d = target.dim();
        if self.samplers.is_empty() {
            return bad("at least one sampler is required".into());
        }
        for s in &self.samplers {
            if s.steps() == 0 {
                return bad(format!("sampler `{}` needs at least one step", s.name()));
            }
            s.kind().validate().map_err(|e| HarnessError::Config(format!("sampler `{}`: {e}", s.name())))?;
        }
        let mut names: Vec<&str> = self.samplers.iter().map(SamplerSpec::name).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return bad("each sampler kind may appear at most once".into());
        }
        if self.sampling.n_samples < 2 {
            return bad("sampling.n_samples must be at least 2".into());
        }
        if self.sampling.trajectory_samples > self.sampling.n_samples {
            return bad("sampling.trajectory_samples exceeds sampling.n_samples".into());
        }
        if self.metrics.probes == 0 || self.metrics.reference_samples < 2 {
            return bad("metrics.probes must be positive and metrics.reference_samples at least 2".into());
        }
        if let Some(t) = self.metrics.profile_times.iter().chain(&self.metrics.score_grid_times).find(|t| !(**t >= 0.0 && **t < 1.0 - 1e-6)) {
            return bad(format!("score times must lie in [0, 1 - 1e-6), got {t}"));
        }
        if self.metrics.grid_resolution < 2 {
            return bad("metrics.grid_resolution must be at least 2".into());
        }
        let [x0, x1, y0, y1] = self.plots.viewport;
        if !(x0 < x1 && y0 < y1) || self.plots.width == 0 || self.plots.height == 0 {
            return bad("plots.viewport must be [x_min, x_max, y_min, y_max] with positive extent".into());
        }
        if self.model.kind.trainable().is_some() {
            self.train_config(self.seed).validate().map_err(|e| HarnessError::Config(format!("train: {e}")))?;
        }
        debug_assert_eq!(d, self.data.dim());
        Ok(())
    }

    pub fn arch(&self) -> MlpArch {
        MlpArch {
            data_dim: self.data.dim(),
            hidden: self.model.hidden.clone(),
            time_frequencies: self.model.time_frequencies,
            activation: self.model.activation,
        }
    }

    /// The core training configuration, with the given training seed.
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            model: self.model.kind.trainable().unwrap_or_default(),
            boundary_functions: self.model.boundary_functions,
            data_mean: self.model.data_mean,
            arch: self.arch(),
            optimizer: self.train.optimizer,
            batch_size: self.train.batch_size,
            steps: self.train.steps,
            time_sampler: self.train.time_sampler,
            loss_weight: self.train.loss_weight,
            seed,
            log_every: self.train.log_every,
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| HarnessError::Config(e.to_string()))
    }
}

/// Parses and validates a config from TOML text.
pub fn parse_config_str(text: &str) -> Result<ExperimentConfig> {
    let config: ExperimentConfig = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
    config.validate()?;
    Ok(config)
}

pub fn parse_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)
        .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_config_str(&text).map_err(|e| match e {
        HarnessError::Config(msg) => HarnessError::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
seed = 3

[data]
kind = "gaussian"
mean = [1.0]
variances = [4.0]
"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = parse_config_str(MINIMAL).unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.model, ModelSpec::default());
        assert_eq!(c.model.hidden, vec![128, 128, 128]);
        assert_eq!(c.train.steps, 20_000);
        assert_eq!(c.train.optimizer.learning_rate, 1e-3);
        assert_eq!(c.samplers, default_samplers());
        assert_eq!(c.metrics.profile_times, vec![0.5, 0.9, 0.98, 0.999]);
        assert_eq!(c.output_dir, None);
    }

    #[test]
    fn unknown_keys_are_named() {
        let text = format!("{MINIMAL}\n[train]\nsigmaa = 0.5\n");
        let err = parse_config_str(&text).unwrap_err().to_string();
        assert!(err.contains("sigmaa"), "{err}");
        let nested = MINIMAL.replace("variances", "variance");
        assert!(parse_config_str(&nested).is_err());
        let sampler = format!("{MINIMAL}\n[[samplers]]\nkind = \"overshoot\"\nc = 1.0\nsigmaa = 2\n");
        assert!(parse_config_str(&sampler).unwrap_err().to_string().contains("sigmaa"));
    }

    #[test]
    fn seed_is_required() {
        assert!(parse_config_str(&MINIMAL.replace("seed = 3", "")).is_err());
    }

    #[test]
    fn semantic_errors_are_config_errors() {
        for bad in [
            MINIMAL.replace("[4.0]", "[-4.0]"),
            format!("{MINIMAL}\n[[samplers]]\nkind = \"overshoot\"\nc = -1.0\n"),
            format!("{MINIMAL}\n[train]\nsteps = 0\n"),
            format!("{MINIMAL}\n[metrics]\nprofile_times = [1.0]\n"),
        ] {
            assert!(matches!(parse_config_str(&bad), Err(HarnessError::Config(_))), "{bad}");
        }
    }

    #[test]
    fn round_trip_is_idempotent() {
        let c = parse_config_str(MINIMAL).unwrap();
        let text = c.to_toml().unwrap();
        let again = parse_config_str(&text).unwrap();
        assert_eq!(again, c);
        assert_eq!(again.to_toml().unwrap(), text);
    }
}
