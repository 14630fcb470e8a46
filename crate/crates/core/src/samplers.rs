//! Generation procedures that integrate a velocity field from noise at
//! `t = 0` to data at `t = 1`.
//!
//! Stochastic samplers draw `xi` for sample `j` at step `k` from its own
//! substream, so results do not depend on batch layout or evaluation order.

use ndarray::{s, Array2, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{FlowError, Result};
use crate::flow::{Batch, TimeGrid};
use crate::rng::{fill_standard_normal, StreamFamily};
use crate::scalar::Scalar;
use crate::score::{resolve_time, tweedie_from_velocity, ScoreOptions};
use crate::velocity::VelocityField;

/// Rows per velocity evaluation, bounding activation memory for large batches.
const EVAL_CHUNK: usize = 4096;

/// Radicand tolerance for the overshoot noise scale.
const RADICAND_TOLERANCE: f64 = 1e-15;

/// Noise scale `sigma_t` of the Langevin-augmented SDE.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SigmaSchedule {
    #[default]
    Zero,
    Constant { sigma0: f64 },
    /// `sigma0 * t * (1 - t)`, vanishing at both ends.
    Triangular { sigma0: f64 },
}

impl SigmaSchedule {
    pub fn at<T: Scalar>(&self, t: T) -> T {
        match *self {
            SigmaSchedule::Zero => T::zero(),
            SigmaSchedule::Constant { sigma0 } => T::lit(sigma0),
            SigmaSchedule::Triangular { sigma0 } => T::lit(sigma0) * t * (T::one() - t),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            SigmaSchedule::Constant { sigma0 } | SigmaSchedule::Triangular { sigma0 }
                if !(sigma0 >= 0.0) || !sigma0.is_finite() =>
            {
                Err(FlowError::InvalidArgument(format!("sigma0 must be non-negative, got {sigma0}")))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SamplerKind {
    Euler,
    LangevinSde {
        #[serde(default)]
        sigma: SigmaSchedule,
    },
    CurvedEulerSde,
    Overshoot { c: f64 },
}

impl SamplerKind {
    pub fn name(&self) -> &'static str {
        match self {
            SamplerKind::Euler => "euler",
            SamplerKind::LangevinSde { .. } => "langevin_sde",
            SamplerKind::CurvedEulerSde => "curved_euler_sde",
            SamplerKind::Overshoot { .. } => "overshoot",
        }
    }

    pub fn is_stochastic(&self) -> bool {
        !matches!(self, SamplerKind::Euler)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            SamplerKind::LangevinSde { sigma } => sigma.validate(),
            SamplerKind::Overshoot { c } if !(*c >= 0.0) || !c.is_finite() => Err(FlowError::InvalidArgument(
                format!("overshoot strength must be non-negative, got {c}"),
            )),
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Record {
    #[default]
    Full,
    TerminalOnly,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SamplerConfig<T> {
    pub kind: SamplerKind,
    pub grid: TimeGrid<T>,
    pub seed: u64,
    pub record: Record,
}

impl<T: Scalar> SamplerConfig<T> {
    pub fn new(kind: SamplerKind, grid: TimeGrid<T>, seed: u64) -> Self {
        Self {
            kind,
            grid,
            seed,
            record: Record::Full,
        }
    }

    pub fn terminal_only(mut self) -> Self {
        self.record = Record::TerminalOnly;
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory<T> {
    pub times: Vec<T>,
    /// One batch per grid point when recorded in full, otherwise empty.
    pub states: Vec<Batch<T>>,
    pub terminal: Batch<T>,
    /// Number of standard-normal vectors drawn.
    pub noise_draws: u64,
}

fn noise_family(seed: u64, kind: &SamplerKind) -> StreamFamily {
    StreamFamily::new(seed, &format!("sampler/{}", kind.name()))
}

/// `xi` for every row at step `step`.
fn draw_noise<T: Scalar>(family: &StreamFamily, step: usize, n: usize, dim: usize) -> Array2<T> {
    let fam = family.child(step as u64);
    let mut out = Array2::zeros((n, dim));
    for (j, mut row) in out.rows_mut().into_iter().enumerate() {
        let mut rng = fam.stream(j as u64);
        fill_standard_normal(&mut rng, row.as_slice_mut().expect("standard layout"));
    }
    out
}

fn velocity_at<T: Scalar, V: VelocityField<T> + ?Sized>(v: &V, z: ArrayView2<'_, T>, t: T) -> Result<Array2<T>> {
    let n = z.nrows();
    if n <= EVAL_CHUNK {
        return v.velocity_rows(z, &vec![t; n]);
    }
    let mut out = Array2::zeros(z.raw_dim());
    let mut start = 0;
    while start < n {
        let end = (start + EVAL_CHUNK).min(n);
        let part = v.velocity_rows(z.slice(s![start..end, ..]), &vec![t; end - start])?;
        out.slice_mut(s![start..end, ..]).assign(&part);
        start = end;
    }
    Ok(out)
}

/// One grid step. Returns the number of noise vectors drawn.
type StepFn<'a, T> = dyn FnMut(usize, T, T, &mut Array2<T>, &Array2<T>) -> Result<u64> + 'a;

fn integrate<T: Scalar, V: VelocityField<T> + ?Sized>(
    v: &V,
    grid: &TimeGrid<T>,
    z0: &Batch<T>,
    record: Record,
    step: &mut StepFn<'_, T>,
) -> Result<Trajectory<T>> {
    if z0.dim() != v.dim() {
        return Err(FlowError::DimensionMismatch {
            expected: v.dim(),
            found: z0.dim(),
        });
    }
    z0.require_finite("initial state")?;
    let mut z = z0.array().to_owned();
    let mut states = Vec::new();
    if record == Record::Full {
        states.push(z0.clone());
    }
    let mut noise_draws = 0;
    for (k, (t, t_next)) in grid.steps().enumerate() {
        let vel = velocity_at(v, z.view(), t)?;
        noise_draws += step(k, t, t_next, &mut z, &vel)?;
        if !z.iter().all(|x| x.is_finite()) {
            return Err(FlowError::NonFinite(format!("sampler state at step {k}")));
        }
        if record == Record::Full {
            states.push(Batch::from_array(z.clone()));
        }
    }
    Ok(Trajectory {
        times: grid.times().to_vec(),
        states,
        terminal: Batch::from_array(z),
        noise_draws,
    })
}

fn euler_update<T: Scalar>(z: &mut Array2<T>, vel: &Array2<T>, dt: T) {
    Zip::from(z).and(vel).for_each(|zi, &vi| *zi = *zi + dt * vi);
}

fn run_euler<T: Scalar, V: VelocityField<T> + ?Sized>(
    v: &V,
    grid: &TimeGrid<T>,
    z0: &Batch<T>,
    record: Record,
) -> Result<Trajectory<T>> {
    integrate(v, grid, z0, record, &mut |_, t, t_next, z, vel| {
        euler_update(z, vel, t_next - t);
        Ok(0)
    })
}

fn run_langevin<T: Scalar, V: VelocityField<T> + ?Sized>(
    v: &V,
    grid: &TimeGrid<T>,
    sigma: SigmaSchedule,
    z0: &Batch<T>,
    seed: u64,
    record: Record,
) -> Result<Trajectory<T>> {
    sigma.validate()?;
    let family = noise_family(seed, &SamplerKind::LangevinSde { sigma });
    let opts = ScoreOptions::default();
    integrate(v, grid, z0, record, &mut |k, t, t_next, z, vel| {
        let dt = t_next - t;
        let s = sigma.at(t);
        if s == T::zero() {
            euler_update(z, vel, dt);
            return Ok(0);
        }
        resolve_time(t, &opts)?;
        let score = tweedie_from_velocity(z.view(), vel, t);
        let xi = draw_noise::<T>(&family, k, z.nrows(), z.ncols());
        let scale = (T::lit(2.0) * s * dt).sqrt();
        Zip::from(&mut *z)
            .and(vel)
            .and(&score)
            .and(&xi)
            .for_each(|zi, &vi, &si, &ni| *zi = *zi + (vi + s * si) * dt + scale * ni);
        Ok(z.nrows() as u64)
    })
}

/// Noise replacement factor of the curved Euler step from `t` to `t_next`.
pub fn curved_euler_alpha<T: Scalar>(t: T, t_next: T) -> T {
    T::one() - t * (T::one() - t_next) / (t_next * (T::one() - t))
}

fn run_curved_euler<T: Scalar, V: VelocityField<T> + ?Sized>(
    v: &V,
    grid: &TimeGrid<T>,
    z0: &Batch<T>,
    seed: u64,
    record: Record,
) -> Result<Trajectory<T>> {
    let family = noise_family(seed, &SamplerKind::CurvedEulerSde);
    integrate(v, grid, z0, record, &mut |k, t, t_next, z, vel| {
        let alpha = curved_euler_alpha(t, t_next);
        let keep = T::one() - alpha;
        let fresh = (T::one() - keep * keep).max(T::zero()).sqrt();
        let xi = draw_noise::<T>(&family, k, z.nrows(), z.ncols());
        let one = T::one();
        Zip::from(&mut *z).and(vel).and(&xi).for_each(|zi, &vi, &ni| {
            let end1 = *zi + (one - t) * vi;
            let end0 = *zi - t * vi;
            let refreshed = keep * end0 + fresh * ni;
            *zi = t_next * end1 + (one - t_next) * refreshed;
        });
        Ok(z.nrows() as u64)
    })
}

/// Coefficients `(o, a, b)` of one overshoot step from `t` to `s`.
pub fn overshoot_coefficients<T: Scalar>(t: T, s: T, c: T) -> Result<(T, T, T)> {
    let o = (s + c * (s - t)).min(T::one());
    let a = s / o;
    let one_minus_s = T::one() - s;
    let shrunk = a * (T::one() - o);
    let radicand = one_minus_s * one_minus_s - shrunk * shrunk;
    if radicand < T::lit(-RADICAND_TOLERANCE) {
        return Err(FlowError::NonFinite(format!(
            "overshoot noise radicand {} at t = {}",
            radicand.as_f64(),
            t.as_f64()
        )));
    }
    Ok((o, a, radicand.max(T::zero()).sqrt()))
}

fn run_overshoot<T: Scalar, V: VelocityField<T> + ?Sized>(
    v: &V,
    grid: &TimeGrid<T>,
    c: f64,
    z0: &Batch<T>,
    seed: u64,
    record: Record,
) -> Result<Trajectory<T>> {
    let kind = SamplerKind::Overshoot { c };
    kind.validate()?;
    let family = noise_family(seed, &kind);
    let c = T::lit(c);
    integrate(v, grid, z0, record, &mut |k, t, s, z, vel| {
        let (o, a, b) = overshoot_coefficients(t, s, c)?;
        let reach = o - t;
        if b == T::zero() {
            Zip::from(&mut *z).and(vel).for_each(|zi, &vi| *zi = a * (*zi + reach * vi));
            return Ok(0);
        }
        let xi = draw_noise::<T>(&family, k, z.nrows(), z.ncols());
        Zip::from(&mut *z)
            .and(vel)
            .and(&xi)
            .for_each(|zi, &vi, &ni| *zi = a * (*zi + reach * vi) + b * ni);
        Ok(z.nrows() as u64)
    })
}

/// Explicit Euler integration of `dZ = v(Z, t) dt`.
pub fn euler_sample<T: Scalar, V: VelocityField<T> + ?Sized>(
    v: &V,
    grid: &TimeGrid<T>,
    z0: &Batch<T>,
) -> Result<Trajectory<T>> {
    run_euler(v, grid, z0, Record::Full)
}

/// Euler-Maruyama for the score-corrected SDE
/// `dZ = [v + sigma_t score] dt + sqrt(2 sigma_t) dW`.
///
/// Steps where `sigma_t` is zero are plain Euler steps and draw no noise.
pub fn langevin_sde_sample<T: Scalar, V: VelocityField<T> + ?Sized>(
    v: &V,
    grid: &TimeGrid<T>,
    sigma: SigmaSchedule,
    z0: &Batch<T>,
    seed: u64,
) -> Result<Trajectory<T>> {
    run_langevin(v, grid, sigma, z0, seed, Record::Full)
}

/// Predicts both endpoints, partially refreshes the noise endpoint and
/// recombines them at the next time.
pub fn curved_euler_sde_sample<T: Scalar, V: VelocityField<T> + ?Sized>(
    v: &V,
    grid: &TimeGrid<T>,
    z0: &Batch<T>,
    seed: u64,
) -> Result<Trajectory<T>> {
    run_curved_euler(v, grid, z0, seed, Record::Full)
}

/// Integrates past the next grid time to `o`, then scales back and re-noises.
/// With `c = 0` this is exactly Euler.
pub fn overshoot_sample<T: Scalar, V: VelocityField<T> + ?Sized>(
    v: &V,
    grid: &TimeGrid<T>,
    c: f64,
    z0: &Batch<T>,
    seed: u64,
) -> Result<Trajectory<T>> {
    run_overshoot(v, grid, c, z0, seed, Record::Full)
}

pub fn run_sampler<T: Scalar, V: VelocityField<T> + ?Sized>(
    v: &V,
    config: &SamplerConfig<T>,
    z0: &Batch<T>,
) -> Result<Trajectory<T>> {
    config.kind.validate()?;
    let (grid, seed, record) = (&config.grid, config.seed, config.record);
    match config.kind {
        SamplerKind::Euler => run_euler(v, grid, z0, record),
        SamplerKind::LangevinSde { sigma } => run_langevin(v, grid, sigma, z0, seed, record),
        SamplerKind::CurvedEulerSde => run_curved_euler(v, grid, z0, seed, record),
        SamplerKind::Overshoot { c } => run_overshoot(v, grid, c, z0, seed, record),
    }
}
