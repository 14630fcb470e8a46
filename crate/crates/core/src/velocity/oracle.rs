//! Closed-form optimal velocity and marginal score for a Gaussian target.
//!
//! With `X0 ~ N(0, I)` independent of `X1 ~ N(mu, diag(s2))`, the marginal of
//! `X_t = (1 - t) X0 + t X1` is `N(t mu, diag(V))` with
//! `V_i(t) = (1 - t)^2 + t^2 s2_i`, and
//!
//! ```text
//! v*_i(x, t)   = mu_i + (t s2_i - (1 - t)) (x_i - t mu_i) / V_i(t)
//! score_i(x, t) = -(x_i - t mu_i) / V_i(t)
//! ```

use ndarray::{Array2, ArrayView2};

use super::{check_rows, VelocityField};
use crate::error::{FlowError, Result};
use crate::flow::{check_time, Point};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianSpec<T> {
    mean: Point<T>,
    variances: Vec<T>,
}

impl<T: Scalar> GaussianSpec<T> {
    pub fn new(mean: Point<T>, variances: Vec<T>) -> Result<Self> {
        if mean.dim() == 0 {
            return Err(FlowError::InvalidArgument("Gaussian dimension must be positive".into()));
        }
        if variances.len() != mean.dim() {
            return Err(FlowError::DimensionMismatch {
                expected: mean.dim(),
                found: variances.len(),
            });
        }
        if variances.iter().any(|v| !(*v > T::zero()) || !v.is_finite()) {
            return Err(FlowError::InvalidArgument("variances must be positive and finite".into()));
        }
        Ok(Self { mean, variances })
    }

    /// One-dimensional `N(mean, variance)`.
    pub fn scalar(mean: T, variance: T) -> Result<Self> {
        Self::new(Point::new(vec![mean])?, vec![variance])
    }

    pub fn dim(&self) -> usize {
        self.mean.dim()
    }

    pub fn mean(&self) -> &Point<T> {
        &self.mean
    }

    pub fn variances(&self) -> &[T] {
        &self.variances
    }

    /// `V_i(t)`, the marginal variance of coordinate `i` at time `t`.
    #[inline]
    pub fn marginal_variance(&self, i: usize, t: T) -> T {
        let s = T::one() - t;
        s * s + t * t * self.variances[i]
    }

    #[inline]
    fn velocity_coord(&self, i: usize, x: T, t: T) -> T {
        let mu = self.mean.coords()[i];
        let s2 = self.variances[i];
        mu + (t * s2 - (T::one() - t)) * (x - t * mu) / self.marginal_variance(i, t)
    }

    #[inline]
    fn score_coord(&self, i: usize, x: T, t: T) -> T {
        let mu = self.mean.coords()[i];
        -(x - t * mu) / self.marginal_variance(i, t)
    }

    fn check_point(&self, x: &Point<T>, t: T) -> Result<()> {
        if x.dim() != self.dim() {
            return Err(FlowError::DimensionMismatch {
                expected: self.dim(),
                found: x.dim(),
            });
        }
        check_time(t)
    }
}

pub fn gaussian_oracle_velocity<T: Scalar>(spec: &GaussianSpec<T>, x: &Point<T>, t: T) -> Result<Point<T>> {
    spec.check_point(x, t)?;
    let coords = x
        .coords()
        .iter()
        .enumerate()
        .map(|(i, &xi)| spec.velocity_coord(i, xi, t))
        .collect();
    Ok(Point::from_vec_unchecked(coords))
}

pub fn gaussian_oracle_score<T: Scalar>(spec: &GaussianSpec<T>, x: &Point<T>, t: T) -> Result<Point<T>> {
    spec.check_point(x, t)?;
    let coords = x
        .coords()
        .iter()
        .enumerate()
        .map(|(i, &xi)| spec.score_coord(i, xi, t))
        .collect();
    Ok(Point::from_vec_unchecked(coords))
}

impl<T: Scalar> VelocityField<T> for GaussianSpec<T> {
    fn dim(&self) -> usize {
        self.mean.dim()
    }

    fn velocity_rows(&self, x: ArrayView2<'_, T>, times: &[T]) -> Result<Array2<T>> {
        check_rows(self.dim(), x, times)?;
        let mut out = Array2::zeros(x.raw_dim());
        for ((i, j), o) in out.indexed_iter_mut() {
            *o = self.velocity_coord(j, x[[i, j]], times[i]);
        }
        Ok(out)
    }
}
