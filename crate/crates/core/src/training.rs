//! The rectified-flow regression objective and the seeded training loop.

use std::time::Instant;

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, ModelDescriptor};
use crate::data::CouplingSampler;
use crate::error::{FlowError, Result};
use crate::flow::{interpolate_batch, slope_target_batch, Batch, Point};
use crate::nn::{Adam, AdamConfig, Mlp, MlpArch, MlpParams};
use crate::rng::{derive_seed, standard_normal, StreamFamily};
use crate::scalar::{CompensatedSum, Scalar};
use crate::velocity::{
    combine_subtraction, estimate_data_mean, BoundaryFunctionSet, BoundaryKind, MaskBoundaryModel, ModelKind,
    SubtractionBoundaryModel, VanillaModel, VelocityField,
};

/// Training times are kept this far from 0 and 1.
pub const TIME_CLAMP: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TimeSampler {
    Uniform,
    LogitNormal {
        #[serde(default)]
        location: f64,
        #[serde(default = "unit")]
        scale: f64,
    },
}

fn unit() -> f64 {
    1.0
}

impl Default for TimeSampler {
    fn default() -> Self {
        TimeSampler::LogitNormal {
            location: 0.0,
            scale: 1.0,
        }
    }
}

impl TimeSampler {
    pub fn validate(&self) -> Result<()> {
        match *self {
            TimeSampler::LogitNormal { location, scale } if !(scale > 0.0) || !location.is_finite() => Err(
                FlowError::InvalidArgument(format!("logit-normal needs scale > 0, got {scale}")),
            ),
            _ => Ok(()),
        }
    }

    /// `sigmoid(location + scale z)` for a given standard-normal `z`, clamped.
    pub fn logit_normal_from_normal(location: f64, scale: f64, z: f64) -> f64 {
        let t = 1.0 / (1.0 + (-(location + scale * z)).exp());
        clamp_time(t)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            TimeSampler::Uniform => clamp_time(rng.random::<f64>()),
            TimeSampler::LogitNormal { location, scale } => {
                Self::logit_normal_from_normal(location, scale, standard_normal(rng))
            }
        }
    }
}

fn clamp_time(t: f64) -> f64 {
    t.clamp(TIME_CLAMP, 1.0 - TIME_CLAMP)
}

pub fn sample_time<T: Scalar, R: Rng + ?Sized>(sampler: &TimeSampler, rng: &mut R) -> T {
    T::lit(sampler.sample(rng))
}

/// The time weighting `eta_t` of the objective.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LossWeight {
    #[default]
    Unit,
    Constant { value: f64 },
}

impl LossWeight {
    pub fn weight<T: Scalar>(&self, _t: T) -> T {
        match *self {
            LossWeight::Unit => T::one(),
            LossWeight::Constant { value } => T::lit(value),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            LossWeight::Constant { value } if !(value > 0.0) || !value.is_finite() => Err(
                FlowError::InvalidArgument(format!("loss weight must be positive, got {value}")),
            ),
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataMeanMode {
    /// Mean of a fresh sample of this many data points.
    Empirical { samples: usize },
    #[default]
    Zero,
}

/// Mean over rows of `eta_i |v_i - u_i|^2` and its gradient with respect to `v`.
fn weighted_residual<T: Scalar>(v: &Array2<T>, target: ArrayView2<'_, T>, weights: &[T]) -> (T, Array2<T>) {
    let n = T::lit(v.nrows() as f64);
    let two = T::lit(2.0);
    let mut loss = CompensatedSum::new();
    let mut grad = Array2::zeros(v.raw_dim());
    for (i, &w) in weights.iter().enumerate() {
        let mut row = CompensatedSum::new();
        for j in 0..v.ncols() {
            let r = v[[i, j]] - target[[i, j]];
            row.add(r * r);
            grad[[i, j]] = two * w * r / n;
        }
        loss.add(w * row.value());
    }
    (loss.value() / n, grad)
}

/// A velocity parameterization whose backbone can be trained.
pub trait Trainable<T: Scalar>: VelocityField<T> {
    fn backbone(&self) -> &Mlp<T>;

    fn backbone_mut(&mut self) -> &mut Mlp<T>;

    /// Weighted loss at interpolants `x_t` with regression targets, and its
    /// exact gradient with respect to the backbone parameters.
    fn loss_and_grads_at(
        &self,
        x_t: ArrayView2<'_, T>,
        times: &[T],
        target: ArrayView2<'_, T>,
        weights: &[T],
    ) -> Result<(T, MlpParams<T>)>;
}

impl<T: Scalar> Trainable<T> for VanillaModel<Mlp<T>> {
    fn backbone(&self) -> &Mlp<T> {
        VanillaModel::backbone(self)
    }

    fn backbone_mut(&mut self) -> &mut Mlp<T> {
        VanillaModel::backbone_mut(self)
    }

    fn loss_and_grads_at(
        &self,
        x_t: ArrayView2<'_, T>,
        times: &[T],
        target: ArrayView2<'_, T>,
        weights: &[T],
    ) -> Result<(T, MlpParams<T>)> {
        let (v, tape) = self.backbone().forward_with_tape(x_t, times)?;
        let (loss, dv) = weighted_residual(&v, target, weights);
        let grads = self.backbone().backward(&tape, dv.view())?;
        Ok((loss, grads))
    }
}

impl<T: Scalar> Trainable<T> for MaskBoundaryModel<T, Mlp<T>> {
    fn backbone(&self) -> &Mlp<T> {
        MaskBoundaryModel::backbone(self)
    }

    fn backbone_mut(&mut self) -> &mut Mlp<T> {
        MaskBoundaryModel::backbone_mut(self)
    }

    fn loss_and_grads_at(
        &self,
        x_t: ArrayView2<'_, T>,
        times: &[T],
        target: ArrayView2<'_, T>,
        weights: &[T],
    ) -> Result<(T, MlpParams<T>)> {
        let (m, tape) = self.backbone().forward_with_tape(x_t, times)?;
        let v = self.combine(x_t, times, &m);
        let (loss, mut upstream) = weighted_residual(&v, target, weights);
        // dv/dm = h(t) per row.
        for (mut row, &t) in upstream.rows_mut().into_iter().zip(times) {
            let h = self.functions().eval_unchecked(t).h;
            row.mapv_inplace(|g| g * h);
        }
        let grads = self.backbone().backward(&tape, upstream.view())?;
        Ok((loss, grads))
    }
}

impl<T: Scalar> Trainable<T> for SubtractionBoundaryModel<Mlp<T>> {
    fn backbone(&self) -> &Mlp<T> {
        SubtractionBoundaryModel::backbone(self)
    }

    fn backbone_mut(&mut self) -> &mut Mlp<T> {
        SubtractionBoundaryModel::backbone_mut(self)
    }

    fn loss_and_grads_at(
        &self,
        x_t: ArrayView2<'_, T>,
        times: &[T],
        target: ArrayView2<'_, T>,
        weights: &[T],
    ) -> Result<(T, MlpParams<T>)> {
        let net = self.backbone();
        let (m_t, tape_t) = net.forward_with_tape(x_t, times)?;
        let ones = vec![T::one(); times.len()];
        let (m_1, tape_1) = net.forward_with_tape(x_t, &ones)?;
        let v = combine_subtraction(x_t, &m_t, &m_1);
        let (loss, dv) = weighted_residual(&v, target, weights);
        // Both passes share parameters and both receive gradient.
        let mut grads = net.backward(&tape_t, dv.view())?;
        let at_one = net.backward(&tape_1, dv.view())?;
        grads.add_scaled(&at_one, -T::one());
        Ok((loss, grads))
    }
}

fn weights_for<T: Scalar>(times: &[T], eta: &LossWeight) -> Vec<T> {
    times.iter().map(|&t| eta.weight(t)).collect()
}

fn check_training_times<T: Scalar>(times: &[T], n: usize) -> Result<()> {
    if times.len() != n {
        return Err(FlowError::InvalidArgument(format!("{} times for {n} pairs", times.len())));
    }
    if let Some(t) = times.iter().find(|&&t| !(t > T::zero() && t < T::one())) {
        return Err(FlowError::TimeOutOfRange(t.as_f64()));
    }
    Ok(())
}

/// Loss and backbone gradients on one batch of pairs with per-pair times.
pub fn rf_loss_and_grads<T: Scalar, M: Trainable<T> + ?Sized>(
    model: &M,
    x0: &Batch<T>,
    x1: &Batch<T>,
    times: &[T],
    eta: &LossWeight,
) -> Result<(T, MlpParams<T>)> {
    if x0.is_empty() {
        return Err(FlowError::EmptyBatch);
    }
    check_training_times(times, x0.len())?;
    let x_t = interpolate_batch(x0, x1, times)?;
    let target = slope_target_batch(x0, x1)?;
    let (loss, grads) = model.loss_and_grads_at(x_t.view(), times, target.view(), &weights_for(times, eta))?;
    if !loss.is_finite() {
        return Err(FlowError::NonFinite("loss".into()));
    }
    Ok((loss, grads))
}

/// The objective for any velocity field, without gradients.
pub fn rf_loss<T: Scalar, V: VelocityField<T> + ?Sized>(
    v: &V,
    x0: &Batch<T>,
    x1: &Batch<T>,
    times: &[T],
    eta: &LossWeight,
) -> Result<T> {
    if x0.is_empty() {
        return Err(FlowError::EmptyBatch);
    }
    check_training_times(times, x0.len())?;
    let x_t = interpolate_batch(x0, x1, times)?;
    let target = slope_target_batch(x0, x1)?;
    let pred = v.velocity_rows(x_t.view(), times)?;
    let (loss, _) = weighted_residual(&pred, target.view(), &weights_for(times, eta));
    Ok(loss)
}

/// One of the three trainable parameterizations around an [`Mlp`] backbone.
#[derive(Clone, Debug)]
pub enum FlowModel<T> {
    Vanilla(VanillaModel<Mlp<T>>),
    Mask(MaskBoundaryModel<T, Mlp<T>>),
    Subtraction(SubtractionBoundaryModel<Mlp<T>>),
}

impl<T: Scalar> FlowModel<T> {
    /// `data_mean` is only used by the mask model.
    pub fn build(kind: ModelKind, boundary: BoundaryKind, data_mean: Point<T>, backbone: Mlp<T>) -> Result<Self> {
        Ok(match kind {
            ModelKind::Vanilla => FlowModel::Vanilla(VanillaModel::new(backbone)),
            ModelKind::Mask => FlowModel::Mask(MaskBoundaryModel::new(
                backbone,
                BoundaryFunctionSet::new(boundary)?,
                data_mean,
            )?),
            ModelKind::Subtraction => FlowModel::Subtraction(SubtractionBoundaryModel::new(backbone)),
        })
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            FlowModel::Vanilla(_) => ModelKind::Vanilla,
            FlowModel::Mask(_) => ModelKind::Mask,
            FlowModel::Subtraction(_) => ModelKind::Subtraction,
        }
    }

    pub fn descriptor(&self) -> ModelDescriptor {
        match self {
            FlowModel::Mask(m) => ModelDescriptor {
                kind: ModelKind::Mask,
                boundary_functions: Some(m.functions().kind()),
                data_mean: Some(m.data_mean().coords().iter().map(|c| c.as_f64()).collect()),
            },
            other => ModelDescriptor {
                kind: other.kind(),
                boundary_functions: None,
                data_mean: None,
            },
        }
    }

    /// Rebuilds a model from a checkpoint.
    pub fn from_checkpoint(ckpt: &Checkpoint<T>) -> Result<Self> {
        let mlp = Mlp::new(ckpt.arch.clone(), ckpt.params.clone())?;
        let d = ckpt.arch.data_dim;
        let mean = match &ckpt.model.data_mean {
            Some(m) => Point::new(m.iter().map(|&c| T::lit(c)).collect())?,
            None => Point::zeros(d),
        };
        Self::build(
            ckpt.model.kind,
            ckpt.model.boundary_functions.unwrap_or_default(),
            mean,
            mlp,
        )
    }

    pub fn to_checkpoint(&self, seed: u64, step: u64) -> Checkpoint<T> {
        let mlp = self.backbone();
        Checkpoint {
            arch: mlp.arch().clone(),
            seed,
            step,
            model: self.descriptor(),
            params: mlp.params().clone(),
        }
    }

    fn as_trainable(&self) -> &dyn Trainable<T> {
        match self {
            FlowModel::Vanilla(m) => m,
            FlowModel::Mask(m) => m,
            FlowModel::Subtraction(m) => m,
        }
    }

    fn as_trainable_mut(&mut self) -> &mut dyn Trainable<T> {
        match self {
            FlowModel::Vanilla(m) => m,
            FlowModel::Mask(m) => m,
            FlowModel::Subtraction(m) => m,
        }
    }
}

impl<T: Scalar> VelocityField<T> for FlowModel<T> {
    fn dim(&self) -> usize {
        self.as_trainable().dim()
    }

    fn velocity_rows(&self, x: ArrayView2<'_, T>, times: &[T]) -> Result<Array2<T>> {
        self.as_trainable().velocity_rows(x, times)
    }
}

impl<T: Scalar> Trainable<T> for FlowModel<T> {
    fn backbone(&self) -> &Mlp<T> {
        self.as_trainable().backbone()
    }

    fn backbone_mut(&mut self) -> &mut Mlp<T> {
        self.as_trainable_mut().backbone_mut()
    }

    fn loss_and_grads_at(
        &self,
        x_t: ArrayView2<'_, T>,
        times: &[T],
        target: ArrayView2<'_, T>,
        weights: &[T],
    ) -> Result<(T, MlpParams<T>)> {
        self.as_trainable().loss_and_grads_at(x_t, times, target, weights)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub model: ModelKind,
    pub boundary_functions: BoundaryKind,
    pub data_mean: DataMeanMode,
    pub arch: MlpArch,
    pub optimizer: AdamConfig,
    pub batch_size: usize,
    pub steps: usize,
    pub time_sampler: TimeSampler,
    pub loss_weight: LossWeight,
    pub seed: u64,
    /// A loss record is emitted every this many steps, and after the last step.
    pub log_every: usize,
}

impl TrainConfig {
    pub fn new(model: ModelKind, data_dim: usize, seed: u64) -> Self {
        Self {
            model,
            boundary_functions: BoundaryKind::StandardCosine,
            data_mean: DataMeanMode::Empirical { samples: 100_000 },
            arch: MlpArch::default_for(data_dim),
            optimizer: AdamConfig::default(),
            batch_size: 256,
            steps: 20_000,
            time_sampler: TimeSampler::default(),
            loss_weight: LossWeight::Unit,
            seed,
            log_every: 100,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(FlowError::InvalidArgument("batch size must be at least 1".into()));
        }
        if self.steps == 0 {
            return Err(FlowError::InvalidArgument("training needs at least one step".into()));
        }
        if self.log_every == 0 {
            return Err(FlowError::InvalidArgument("log_every must be at least 1".into()));
        }
        if let DataMeanMode::Empirical { samples: 0 } = self.data_mean {
            return Err(FlowError::InvalidArgument("data mean needs at least one sample".into()));
        }
        self.arch.validate()?;
        self.optimizer.validate()?;
        self.time_sampler.validate()?;
        self.loss_weight.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub loss: f64,
    /// Seconds since the start of training.
    pub elapsed: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    pub model: FlowModel<T>,
    pub losses: Vec<LossRecord>,
    pub steps: usize,
    pub seed: u64,
}

impl<T: Scalar> TrainOutcome<T> {
    pub fn checkpoint(&self) -> Checkpoint<T> {
        self.model.to_checkpoint(self.seed, self.steps as u64)
    }
}

/// The frozen mean `C` for a configuration.
pub fn data_mean_for<T: Scalar>(config: &TrainConfig, coupling: &CouplingSampler<T>) -> Result<Point<T>> {
    match config.data_mean {
        DataMeanMode::Zero => Ok(Point::zeros(coupling.dim())),
        DataMeanMode::Empirical { samples } => {
            let family = StreamFamily::new(config.seed, "train/data_mean");
            estimate_data_mean(&coupling.target().sample_batch(&family, 0, samples))
        }
    }
}

/// The freshly initialised model a training run starts from.
pub fn initial_model<T: Scalar>(config: &TrainConfig, coupling: &CouplingSampler<T>) -> Result<FlowModel<T>> {
    config.validate()?;
    if config.arch.data_dim != coupling.dim() {
        return Err(FlowError::DimensionMismatch {
            expected: config.arch.data_dim,
            found: coupling.dim(),
        });
    }
    let mean = data_mean_for(config, coupling)?;
    let mlp = Mlp::init(config.arch.clone(), derive_seed(config.seed, "train/init", 0))?;
    FlowModel::build(config.model, config.boundary_functions, mean, mlp)
}

pub fn train<T: Scalar>(config: &TrainConfig, coupling: &CouplingSampler<T>) -> Result<TrainOutcome<T>> {
    train_with(config, coupling, |_| {})
}

/// Runs the loop, handing each loss record to `observe` as it is produced.
///
/// Every step draws pairs `step * batch .. (step + 1) * batch` from the
/// coupling and one time per pair from its own substream, so a run is a pure
/// function of the configuration and the coupling seed. A non-finite loss or
/// gradient aborts with [`FlowError::Diverged`].
pub fn train_with<T: Scalar>(
    config: &TrainConfig,
    coupling: &CouplingSampler<T>,
    mut observe: impl FnMut(&LossRecord),
) -> Result<TrainOutcome<T>> {
    let mut model = initial_model(config, coupling)?;
    let mut adam = Adam::new(config.optimizer, model.backbone().params())?;
    let time_family = StreamFamily::new(config.seed, "train/time");
    let start = Instant::now();
    let mut losses = Vec::new();
    let batch = config.batch_size;
    for step in 0..config.steps {
        let offset = (step * batch) as u64;
        let (x0, x1) = coupling.sample_at(offset, batch);
        let times: Vec<T> = (0..batch as u64)
            .map(|j| sample_time(&config.time_sampler, &mut time_family.stream(offset + j)))
            .collect();
        let (loss, grads) = match rf_loss_and_grads(&model, &x0, &x1, &times, &config.loss_weight) {
            Ok(r) => r,
            Err(e) if e.is_divergence() => {
                return Err(FlowError::Diverged {
                    step,
                    loss: f64::NAN,
                })
            }
            Err(e) => return Err(e),
        };
        let params = model.backbone_mut().params_mut();
        adam.step(params, &grads).map_err(|e| match e {
            FlowError::NonFinite(_) => FlowError::Diverged {
                step,
                loss: loss.as_f64(),
            },
            other => other,
        })?;
        if !params.is_finite() {
            return Err(FlowError::Diverged {
                step,
                loss: loss.as_f64(),
            });
        }
        if step % config.log_every == 0 || step + 1 == config.steps {
            let record = LossRecord {
                step,
                loss: loss.as_f64(),
                elapsed: start.elapsed().as_secs_f64(),
            };
            observe(&record);
            losses.push(record);
        }
    }
    Ok(TrainOutcome {
        model,
        losses,
        steps: config.steps,
        seed: config.seed,
    })
}
