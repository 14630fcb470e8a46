//! Rectified flow with boundary-enforced velocity parameterizations.
//!
//! The crate covers the full toy-scale pipeline: data couplings, velocity
//! fields (vanilla, mask-based and subtraction-based), a small MLP backbone
//! with hand-written reverse mode, Adam, the training loop, Tweedie scores,
//! four samplers and the diagnostics used to compare them.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases at the crate root fix the scalar to `f64`.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod flow;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod samplers;
pub mod scalar;
pub mod score;
pub mod training;
pub mod velocity;

pub use checkpoint::{CheckpointHeader, ModelDescriptor};
pub use data::{mixture_oracle_score, mixture_oracle_velocity, sample_noise, CouplingSampler, GaussianMixture, ToyDistribution};
pub use error::{FlowError, Result};
pub use flow::{interpolate, interpolate_batch, make_time_grid, slope_target, slope_target_batch, GridKind};
pub use metrics::{
    boundary_violation, energy_distance, energy_distance_unbiased, moment_summary, score_norm_profile,
    BoundaryReport, ScoreNormProfile, ScoreNormRow,
};
pub use nn::{Activation, AdamConfig, MlpArch};
pub use rng::{derive_seed, StreamFamily};
pub use samplers::{
    curved_euler_sde_sample, euler_sample, langevin_sde_sample, overshoot_sample, run_sampler, Record,
    SamplerKind, SigmaSchedule,
};
pub use scalar::{CompensatedSum, Scalar};
pub use score::{score_field_on_grid, tweedie_score, ScoreOptions, SingularityPolicy};
pub use training::{
    rf_loss, rf_loss_and_grads, train, train_with, DataMeanMode, LossRecord, LossWeight, TimeSampler,
    TrainConfig, Trainable,
};
pub use velocity::{
    eval_boundary_functions, gaussian_oracle_score, gaussian_oracle_velocity, BoundaryFunctionSet, BoundaryKind,
    ModelKind, VelocityField,
};

pub type Point = flow::Point<f64>;
pub type Batch = flow::Batch<f64>;
pub type TimeGrid = flow::TimeGrid<f64>;
pub type GaussianSpec = velocity::GaussianSpec<f64>;
pub type Mixture = data::GaussianMixture<f64>;
pub type Distribution = data::ToyDistribution<f64>;
pub type Coupling = data::CouplingSampler<f64>;
pub type Mlp = nn::Mlp<f64>;
pub type MlpParams = nn::MlpParams<f64>;
pub type Adam = nn::Adam<f64>;
pub type FlowModel = training::FlowModel<f64>;
pub type TrainOutcome = training::TrainOutcome<f64>;
pub type Checkpoint = checkpoint::Checkpoint<f64>;
pub type SamplerConfig = samplers::SamplerConfig<f64>;
pub type Trajectory = samplers::Trajectory<f64>;
pub type ScoreEstimate = score::ScoreEstimate<f64>;
pub type MomentSummary = metrics::MomentSummary<f64>;
