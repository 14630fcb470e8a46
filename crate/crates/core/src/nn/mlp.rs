use std::f64::consts::TAU;

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{FlowError, Result};
use crate::flow::Point;
use crate::rng::{standard_normal, StreamFamily};
use crate::scalar::{CompensatedSum, Scalar};
use crate::velocity::{check_rows, Backbone};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Silu,
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply<T: Scalar>(self, z: T) -> T {
        match self {
            Activation::Silu => z / (T::one() + (-z).exp()),
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(T::zero()),
            Activation::Identity => z,
        }
    }

    /// The activation and its derivative at `z`, sharing one exponential.
    #[inline]
    fn apply_with_derivative<T: Scalar>(self, z: T) -> (T, T) {
        match self {
            Activation::Silu => {
                let denom = T::one() + (-z).exp();
                let s = T::one() / denom;
                (z / denom, s * (T::one() + z * (T::one() - s)))
            }
            Activation::Tanh => {
                let th = z.tanh();
                (th, T::one() - th * th)
            }
            Activation::Relu => {
                if z > T::zero() {
                    (z, T::one())
                } else {
                    (T::zero(), T::zero())
                }
            }
            Activation::Identity => (z, T::one()),
        }
    }
}

/// Network shape. The output dimension always equals `data_dim`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpArch {
    pub data_dim: usize,
    pub hidden: Vec<usize>,
    pub time_frequencies: usize,
    pub activation: Activation,
}

impl MlpArch {
    /// Three SiLU layers of width 128 with 8 time frequencies.
    pub fn default_for(data_dim: usize) -> Self {
        Self {
            data_dim,
            hidden: vec![128, 128, 128],
            time_frequencies: 8,
            activation: Activation::Silu,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.data_dim == 0 {
            return Err(FlowError::InvalidArgument("data dimension must be positive".into()));
        }
        if self.hidden.iter().any(|&w| w == 0) {
            return Err(FlowError::InvalidArgument("hidden widths must be at least 1".into()));
        }
        Ok(())
    }

    /// `data_dim + 2K + 1`.
    pub fn input_width(&self) -> usize {
        self.data_dim + 2 * self.time_frequencies + 1
    }

    /// `(fan_out, fan_in)` for each dense layer, in order.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut widths = vec![self.input_width()];
        widths.extend(&self.hidden);
        widths.push(self.data_dim);
        widths.windows(2).map(|w| (w[1], w[0])).collect()
    }
}

/// `(t, sin(2 pi t 2^0), cos(2 pi t 2^0), ..., sin(2 pi t 2^(K-1)), cos(2 pi t 2^(K-1)))`.
pub fn time_embed<T: Scalar>(t: T, frequencies: usize) -> Vec<T> {
    let mut out = vec![T::zero(); 2 * frequencies + 1];
    write_time_embed(t, &mut out);
    out
}

fn write_time_embed<T: Scalar>(t: T, out: &mut [T]) {
    out[0] = t;
    let mut scale = T::lit(TAU);
    for pair in out[1..].chunks_exact_mut(2) {
        let phase = scale * t;
        pair[0] = phase.sin();
        pair[1] = phase.cos();
        scale = scale + scale;
    }
}

/// One affine layer; `weight` is `fan_out x fan_in`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense<T> {
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

/// Weights and biases of every layer, in forward order. Also used for gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams<T> {
    pub layers: Vec<Dense<T>>,
}

impl<T: Scalar> MlpParams<T> {
    pub fn zeros(arch: &MlpArch) -> Self {
        Self {
            layers: arch
                .layer_shapes()
                .into_iter()
                .map(|(out, inp)| Dense {
                    weight: Array2::zeros((out, inp)),
                    bias: Array1::zeros(out),
                })
                .collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Dense {
                    weight: Array2::zeros(l.weight.raw_dim()),
                    bias: Array1::zeros(l.bias.raw_dim()),
                })
                .collect(),
        }
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.weight.dim() == b.weight.dim() && a.bias.dim() == b.bias.dim())
    }

    /// All entries in declared order: per layer, weight row-major then bias.
    pub fn iter(&self) -> impl Iterator<Item = &T> + '_ {
        self.layers.iter().flat_map(|l| l.weight.iter().chain(l.bias.iter()))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut T> + '_ {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weight.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }

    pub fn scale(&mut self, s: T) {
        self.iter_mut().for_each(|v| *v *= s);
    }

    /// `self += s * other`.
    pub fn add_scaled(&mut self, other: &Self, s: T) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight.scaled_add(s, &b.weight);
            a.bias.scaled_add(s, &b.bias);
        }
    }

    pub fn dot(&self, other: &Self) -> T {
        self.iter()
            .zip(other.iter())
            .map(|(&a, &b)| a * b)
            .collect::<CompensatedSum<T>>()
            .value()
    }
}

/// Weights drawn from `N(0, 2 / (fan_in + fan_out))`, biases zero.
pub fn init_params<T: Scalar>(arch: &MlpArch, seed: u64) -> Result<MlpParams<T>> {
    arch.validate()?;
    let family = StreamFamily::new(seed, "mlp/init");
    let mut params = MlpParams::zeros(arch);
    for (l, layer) in params.layers.iter_mut().enumerate() {
        let (out, inp) = layer.weight.dim();
        let std = T::lit((2.0 / (out + inp) as f64).sqrt());
        let mut rng = family.stream(l as u64);
        layer
            .weight
            .iter_mut()
            .for_each(|w| *w = std * standard_normal::<T, _>(&mut rng));
    }
    Ok(params)
}

/// Intermediate activations recorded by [`Mlp::forward_with_tape`].
#[derive(Clone, Debug)]
pub struct Tape<T> {
    /// Input to each dense layer.
    inputs: Vec<Array2<T>>,
    /// Activation derivatives of each hidden layer.
    slopes: Vec<Array2<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<T> {
    arch: MlpArch,
    params: MlpParams<T>,
}

impl<T: Scalar> Mlp<T> {
    pub fn new(arch: MlpArch, params: MlpParams<T>) -> Result<Self> {
        arch.validate()?;
        if !params.same_shape(&MlpParams::zeros(&arch)) {
            return Err(FlowError::InvalidArgument(
                "parameter shapes do not match the architecture".into(),
            ));
        }
        if !params.is_finite() {
            return Err(FlowError::NonFinite("network parameters".into()));
        }
        Ok(Self { arch, params })
    }

    pub fn init(arch: MlpArch, seed: u64) -> Result<Self> {
        let params = init_params(&arch, seed)?;
        Ok(Self { arch, params })
    }

    pub fn arch(&self) -> &MlpArch {
        &self.arch
    }

    pub fn params(&self) -> &MlpParams<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut MlpParams<T> {
        &mut self.params
    }

    fn assemble_input(&self, x: ArrayView2<'_, T>, times: &[T]) -> Array2<T> {
        let d = self.arch.data_dim;
        let mut input = Array2::zeros((x.nrows(), self.arch.input_width()));
        for (i, mut row) in input.rows_mut().into_iter().enumerate() {
            let row = row.as_slice_mut().expect("standard layout");
            for (dst, &src) in row[..d].iter_mut().zip(x.row(i)) {
                *dst = src;
            }
            write_time_embed(times[i], &mut row[d..]);
        }
        input
    }

    fn run(&self, x: ArrayView2<'_, T>, times: &[T], mut tape: Option<&mut Tape<T>>) -> Result<Array2<T>> {
        check_rows(self.arch.data_dim, x, times)?;
        let mut a = self.assemble_input(x, times);
        let last = self.params.layers.len() - 1;
        for (l, layer) in self.params.layers.iter().enumerate() {
            let mut z = a.dot(&layer.weight.t());
            z += &layer.bias;
            if l == last {
                if let Some(tape) = tape.as_deref_mut() {
                    tape.inputs.push(a);
                }
                a = z;
            } else {
                let act = self.arch.activation;
                if let Some(tape) = tape.as_deref_mut() {
                    let mut slope = Array2::zeros(z.dim());
                    Zip::from(&mut z).and(&mut slope).for_each(|v, d| {
                        let (value, derivative) = act.apply_with_derivative(*v);
                        *v = value;
                        *d = derivative;
                    });
                    tape.inputs.push(a);
                    tape.slopes.push(slope);
                } else {
                    z.mapv_inplace(|v| act.apply(v));
                }
                a = z;
            }
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(FlowError::NonFinite("network forward pass".into()));
        }
        Ok(a)
    }

    pub fn forward(&self, x: ArrayView2<'_, T>, times: &[T]) -> Result<Array2<T>> {
        self.run(x, times, None)
    }

    pub fn forward_with_tape(&self, x: ArrayView2<'_, T>, times: &[T]) -> Result<(Array2<T>, Tape<T>)> {
        let mut tape = Tape {
            inputs: Vec::with_capacity(self.params.layers.len()),
            slopes: Vec::with_capacity(self.params.layers.len()),
        };
        let out = self.run(x, times, Some(&mut tape))?;
        Ok((out, tape))
    }

    /// Gradient of `sum_i <upstream_i, out_i>` with respect to every parameter.
    pub fn backward(&self, tape: &Tape<T>, upstream: ArrayView2<'_, T>) -> Result<MlpParams<T>> {
        let n = tape.inputs.first().map_or(0, |a| a.nrows());
        if upstream.dim() != (n, self.arch.data_dim) {
            return Err(FlowError::InvalidArgument(format!(
                "upstream gradient has shape {:?}, expected {:?}",
                upstream.dim(),
                (n, self.arch.data_dim)
            )));
        }
        let mut grads = Vec::with_capacity(self.params.layers.len());
        let mut delta = upstream.to_owned();
        for l in (0..self.params.layers.len()).rev() {
            let weight = delta.t().dot(&tape.inputs[l]);
            let bias = delta.sum_axis(Axis(0));
            if l > 0 {
                let mut back = delta.dot(&self.params.layers[l].weight);
                back *= &tape.slopes[l - 1];
                delta = back;
            }
            grads.push(Dense { weight, bias });
        }
        grads.reverse();
        let grads = MlpParams { layers: grads };
        if !grads.is_finite() {
            return Err(FlowError::NonFinite("network backward pass".into()));
        }
        Ok(grads)
    }
}

impl<T: Scalar> Backbone<T> for Mlp<T> {
    fn dim(&self) -> usize {
        self.arch.data_dim
    }

    fn forward(&self, x: ArrayView2<'_, T>, times: &[T]) -> Result<Array2<T>> {
        Mlp::forward(self, x, times)
    }
}

fn single_row<T: Scalar>(x: &Point<T>) -> Result<ArrayView2<'_, T>> {
    ArrayView2::from_shape((1, x.dim()), x.coords()).map_err(|e| FlowError::InvalidArgument(e.to_string()))
}

pub fn mlp_forward<T: Scalar>(mlp: &Mlp<T>, x: &Point<T>, t: T) -> Result<Point<T>> {
    let out = mlp.forward(single_row(x)?, &[t])?;
    Ok(Point::from_view(out.row(0)))
}

/// Single-point reverse pass: gradient of `<upstream, m(x, t)>`.
pub fn mlp_backward<T: Scalar>(mlp: &Mlp<T>, x: &Point<T>, t: T, upstream: &Point<T>) -> Result<MlpParams<T>> {
    let (_, tape) = mlp.forward_with_tape(single_row(x)?, &[t])?;
    mlp.backward(&tape, single_row(upstream)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(c: &[f64]) -> Point<f64> {
        Point::new(c.to_vec()).unwrap()
    }

    #[test]
    fn time_embed_examples() {
        let e = time_embed(0.0f64, 3);
        assert_eq!(e, vec![0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        assert_eq!(time_embed(0.7f64, 0), vec![0.7]);
        let e = time_embed(0.5f64, 1);
        assert_eq!(e[0], 0.5);
        assert!(e[1].abs() < 1e-15);
        assert_eq!(e[2], -1.0);
    }

    #[test]
    fn time_embed_doubles_frequency() {
        let t = 0.137f64;
        let e = time_embed(t, 4);
        for k in 0..4 {
            let phase = TAU * t * f64::from(1u32 << k);
            assert!((e[1 + 2 * k] - phase.sin()).abs() < 1e-14);
            assert!((e[2 + 2 * k] - phase.cos()).abs() < 1e-14);
        }
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let arch = MlpArch::default_for(2);
        let a = init_params::<f64>(&arch, 9).unwrap();
        let b = init_params::<f64>(&arch, 9).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, init_params::<f64>(&arch, 10).unwrap());
        assert!(a.layers.iter().all(|l| l.bias.iter().all(|&b| b == 0.0)));
    }

    #[test]
    fn init_variance_is_glorot() {
        let arch = MlpArch::default_for(2);
        let params = init_params::<f64>(&arch, 1).unwrap();
        let w = &params.layers[1].weight; // 128 x 128
        let n = w.len() as f64;
        let mean = w.sum() / n;
        let var = w.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        let target = 2.0 / 256.0;
        assert!((var / target - 1.0).abs() < 0.3, "var {var} vs {target}");
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let arch = MlpArch::default_for(2);
        let mlp = Mlp::new(arch.clone(), MlpParams::zeros(&arch)).unwrap();
        assert_eq!(mlp_forward(&mlp, &p(&[1.0, -3.0]), 0.3).unwrap(), p(&[0.0, 0.0]));
    }

    #[test]
    fn forward_is_pure() {
        let mlp = Mlp::<f64>::init(MlpArch::default_for(2), 4).unwrap();
        let x = p(&[0.2, 0.9]);
        assert_eq!(mlp_forward(&mlp, &x, 0.4).unwrap(), mlp_forward(&mlp, &x, 0.4).unwrap());
    }

    #[test]
    fn hand_computed_forward() {
        // 1-D data, K = 0: input (x, t); one tanh hidden unit.
        let arch = MlpArch {
            data_dim: 1,
            hidden: vec![1],
            time_frequencies: 0,
            activation: Activation::Tanh,
        };
        let params = MlpParams {
            layers: vec![
                Dense {
                    weight: Array2::from_shape_vec((1, 2), vec![0.5, -1.0]).unwrap(),
                    bias: Array1::from(vec![0.25]),
                },
                Dense {
                    weight: Array2::from_shape_vec((1, 1), vec![2.0]).unwrap(),
                    bias: Array1::from(vec![-0.5]),
                },
            ],
        };
        let mlp = Mlp::new(arch, params).unwrap();
        // z = 0.5 * 2 - 1 * 0.5 + 0.25 = 0.75; out = 2 tanh(0.75) - 0.5
        let out = mlp_forward(&mlp, &p(&[2.0]), 0.5).unwrap();
        assert!((out.coords()[0] - (2.0 * 0.75f64.tanh() - 0.5)).abs() < 1e-15);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mlp = Mlp::<f64>::init(MlpArch::default_for(2), 4).unwrap();
        let g = mlp_backward(&mlp, &p(&[0.3, 0.1]), 0.6, &p(&[0.0, 0.0])).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_layer_gradient_is_outer_product() {
        let arch = MlpArch {
            data_dim: 2,
            hidden: vec![],
            time_frequencies: 1,
            activation: Activation::Silu,
        };
        let mlp = Mlp::<f64>::init(arch, 2).unwrap();
        let (x, t, u) = (p(&[0.3, -1.2]), 0.2, p(&[1.5, -0.5]));
        let g = mlp_backward(&mlp, &x, t, &u).unwrap();
        let mut input = x.coords().to_vec();
        input.extend(time_embed(t, 1));
        for i in 0..2 {
            for j in 0..input.len() {
                assert!((g.layers[0].weight[[i, j]] - u.coords()[i] * input[j]).abs() < 1e-15);
            }
            assert_eq!(g.layers[0].bias[i], u.coords()[i]);
        }
    }

    #[test]
    fn arch_validation() {
        let mut arch = MlpArch::default_for(2);
        arch.hidden = vec![16, 0];
        assert!(Mlp::<f64>::init(arch, 0).is_err());
        assert!(Mlp::<f64>::init(MlpArch::default_for(0), 0).is_err());
        let arch = MlpArch::default_for(2);
        let wrong = MlpParams::<f64>::zeros(&MlpArch::default_for(3));
        assert!(Mlp::new(arch, wrong).is_err());
    }

    #[test]
    fn backward_rejects_bad_upstream_shape() {
        let mlp = Mlp::<f64>::init(MlpArch::default_for(2), 4).unwrap();
        let x = Array2::zeros((3, 2));
        let (_, tape) = mlp.forward_with_tape(x.view(), &[0.1, 0.2, 0.3]).unwrap();
        assert!(mlp.backward(&tape, Array2::zeros((2, 2)).view()).is_err());
    }
}
