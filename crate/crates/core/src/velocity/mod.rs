//! Velocity fields `v(x, t)`.
//!
//! [`VelocityField`] is the evaluation contract shared by samplers, the score
//! estimator and the metrics. The trainable parameterizations wrap a
//! [`Backbone`] network `m(x, t)`:
//!
//! * [`VanillaModel`]: `v = m(x, t)`
//! * [`MaskBoundaryModel`]: `v = g(t) (C - x) + f(t) x + h(t) m(x, t)`
//! * [`SubtractionBoundaryModel`]: `v = x + m(x, t) - m(x, 1)`
//!
//! [`GaussianSpec`] provides the closed-form optimal field for a Gaussian target.

mod boundary;
mod mask;
mod oracle;
mod subtraction;

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

pub use boundary::{eval_boundary_functions, BoundaryFunctionSet, BoundaryKind, BoundaryValues};
pub use mask::{estimate_data_mean, mask_velocity, MaskBoundaryModel};
pub use oracle::{gaussian_oracle_score, gaussian_oracle_velocity, GaussianSpec};
pub use subtraction::{subtraction_velocity, SubtractionBoundaryModel};
pub(crate) use subtraction::combine_subtraction;

use crate::error::{FlowError, Result};
use crate::flow::{check_time, Batch, Point};
use crate::scalar::Scalar;

pub trait VelocityField<T: Scalar>: Sync {
    fn dim(&self) -> usize;

    /// Velocity for each row of `x`, row `i` evaluated at `times[i]`.
    fn velocity_rows(&self, x: ArrayView2<'_, T>, times: &[T]) -> Result<Array2<T>>;

    /// Velocity for a batch at a shared time.
    fn velocity(&self, x: &Batch<T>, t: T) -> Result<Batch<T>> {
        check_time(t)?;
        let times = vec![t; x.len()];
        self.velocity_rows(x.view(), &times).map(Batch::from_array)
    }

    fn evaluate(&self, x: &Point<T>, t: T) -> Result<Point<T>> {
        check_time(t)?;
        let view = ArrayView2::from_shape((1, x.dim()), x.coords())
            .map_err(|e| FlowError::InvalidArgument(e.to_string()))?;
        let out = self.velocity_rows(view, &[t])?;
        Ok(Point::from_view(out.row(0)))
    }
}

impl<T: Scalar, V: VelocityField<T> + ?Sized> VelocityField<T> for &V {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn velocity_rows(&self, x: ArrayView2<'_, T>, times: &[T]) -> Result<Array2<T>> {
        (**self).velocity_rows(x, times)
    }
}

impl<T: Scalar, V: VelocityField<T> + ?Sized> VelocityField<T> for Box<V> {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn velocity_rows(&self, x: ArrayView2<'_, T>, times: &[T]) -> Result<Array2<T>> {
        (**self).velocity_rows(x, times)
    }
}

/// The network `m(x, t)` inside a parameterization. Input and output share
/// the data dimension.
pub trait Backbone<T: Scalar>: Sync {
    fn dim(&self) -> usize;

    fn forward(&self, x: ArrayView2<'_, T>, times: &[T]) -> Result<Array2<T>>;
}

/// A backbone defined by a closure over one row.
pub struct FnBackbone<F> {
    dim: usize,
    f: F,
}

impl<F> FnBackbone<F> {
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<T, F> Backbone<T> for FnBackbone<F>
where
    T: Scalar,
    F: Fn(ArrayView1<'_, T>, T) -> Vec<T> + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn forward(&self, x: ArrayView2<'_, T>, times: &[T]) -> Result<Array2<T>> {
        let mut out = Array2::zeros((x.nrows(), self.dim));
        for (i, row) in x.rows().into_iter().enumerate() {
            let v = (self.f)(row, times[i]);
            if v.len() != self.dim {
                return Err(FlowError::DimensionMismatch {
                    expected: self.dim,
                    found: v.len(),
                });
            }
            out.row_mut(i).assign(&ArrayView1::from(&v[..]));
        }
        Ok(out)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Vanilla,
    #[default]
    Mask,
    Subtraction,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Vanilla => "vanilla",
            ModelKind::Mask => "mask",
            ModelKind::Subtraction => "subtraction",
        }
    }
}

pub(crate) fn check_rows<T: Scalar>(dim: usize, x: ArrayView2<'_, T>, times: &[T]) -> Result<()> {
    if x.ncols() != dim {
        return Err(FlowError::DimensionMismatch {
            expected: dim,
            found: x.ncols(),
        });
    }
    if times.len() != x.nrows() {
        return Err(FlowError::InvalidArgument(format!(
            "{} times for {} rows",
            times.len(),
            x.nrows()
        )));
    }
    times.iter().try_for_each(|&t| check_time(t))
}

pub(crate) fn require_finite<T: Scalar>(a: &Array2<T>, what: &str) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(FlowError::NonFinite(what.to_string()))
    }
}

/// `v(x, t) = m(x, t)` with no boundary guarantee.
#[derive(Clone, Debug)]
pub struct VanillaModel<B> {
    backbone: B,
}

impl<B> VanillaModel<B> {
    pub fn new(backbone: B) -> Self {
        Self { backbone }
    }

    pub fn backbone(&self) -> &B {
        &self.backbone
    }

    pub fn backbone_mut(&mut self) -> &mut B {
        &mut self.backbone
    }

    pub fn into_backbone(self) -> B {
        self.backbone
    }
}

impl<T: Scalar, B: Backbone<T>> VelocityField<T> for VanillaModel<B> {
    fn dim(&self) -> usize {
        self.backbone.dim()
    }

    fn velocity_rows(&self, x: ArrayView2<'_, T>, times: &[T]) -> Result<Array2<T>> {
        check_rows(self.dim(), x, times)?;
        let out = self.backbone.forward(x, times)?;
        require_finite(&out, "backbone")?;
        Ok(out)
    }
}

pub fn vanilla_velocity<T: Scalar, B: Backbone<T>>(backbone: &B, x: &Point<T>, t: T) -> Result<Point<T>> {
    VanillaModel::new(backbone).evaluate(x, t)
}

impl<T: Scalar, B: Backbone<T> + ?Sized> Backbone<T> for &B {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn forward(&self, x: ArrayView2<'_, T>, times: &[T]) -> Result<Array2<T>> {
        (**self).forward(x, times)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_backbone_gives_zero_velocity() {
        let zero = FnBackbone::new(2, |_x: ArrayView1<'_, f64>, _t| vec![0.0, 0.0]);
        for t in [0.0, 0.3, 1.0] {
            let v = vanilla_velocity(&zero, &Point::new(vec![1.5, -2.0]).unwrap(), t).unwrap();
            assert_eq!(v.coords(), &[0.0, 0.0]);
        }
    }

    #[test]
    fn non_finite_backbone_output_is_an_error() {
        let bad = FnBackbone::new(1, |_x: ArrayView1<'_, f64>, _t| vec![f64::NAN]);
        let err = vanilla_velocity(&bad, &Point::new(vec![1.0]).unwrap(), 0.5).unwrap_err();
        assert!(err.is_divergence());
    }

    #[test]
    fn dimension_and_time_are_checked() {
        let id = FnBackbone::new(2, |x: ArrayView1<'_, f64>, _t| x.to_vec());
        let model = VanillaModel::new(id);
        assert!(model.evaluate(&Point::new(vec![1.0]).unwrap(), 0.5).is_err());
        assert!(model.evaluate(&Point::new(vec![1.0, 2.0]).unwrap(), 1.01).is_err());
    }
}
