//! Points, batches, time grids and the straight-line interpolation process.

use ndarray::{Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{FlowError, Result};
use crate::scalar::Scalar;

/// A single point in data space.
#[derive(Clone, Debug, PartialEq)]
pub struct Point<T> {
    coords: Vec<T>,
}

impl<T: Scalar> Point<T> {
    /// Builds a point, rejecting non-finite coordinates.
    pub fn new(coords: Vec<T>) -> Result<Self> {
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(FlowError::NonFinite("point coordinates".into()));
        }
        Ok(Self { coords })
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            coords: vec![T::zero(); dim],
        }
    }

    pub(crate) fn from_vec_unchecked(coords: Vec<T>) -> Self {
        Self { coords }
    }

    pub fn from_view(v: ArrayView1<'_, T>) -> Self {
        Self {
            coords: v.to_vec(),
        }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &[T] {
        &self.coords
    }

    pub fn into_vec(self) -> Vec<T> {
        self.coords
    }

    pub fn norm(&self) -> T {
        self.coords.iter().map(|&c| c * c).sum::<T>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.coords
            .iter()
            .zip(&other.coords)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), T::max)
    }

    fn check_same_dim(&self, other: &Self) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(FlowError::DimensionMismatch {
                expected: self.dim(),
                found: other.dim(),
            });
        }
        Ok(())
    }
}

/// An ordered collection of points of one dimension, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch<T> {
    data: Array2<T>,
}

impl<T: Scalar> Batch<T> {
    pub fn from_array(data: Array2<T>) -> Self {
        Self { data }
    }

    pub fn zeros(n: usize, dim: usize) -> Self {
        Self {
            data: Array2::zeros((n, dim)),
        }
    }

    pub fn from_points(points: &[Point<T>]) -> Result<Self> {
        let dim = points.first().map_or(0, Point::dim);
        let mut data = Array2::zeros((points.len(), dim));
        for (mut row, p) in data.rows_mut().into_iter().zip(points) {
            if p.dim() != dim {
                return Err(FlowError::DimensionMismatch {
                    expected: dim,
                    found: p.dim(),
                });
            }
            row.assign(&ArrayView1::from(p.coords()));
        }
        Ok(Self { data })
    }

    /// Builds a batch from a flat row-major buffer.
    pub fn from_flat(dim: usize, values: Vec<T>) -> Result<Self> {
        if dim == 0 || values.len() % dim != 0 {
            return Err(FlowError::InvalidArgument(format!(
                "{} values cannot be split into rows of dimension {dim}",
                values.len()
            )));
        }
        let n = values.len() / dim;
        let data = Array2::from_shape_vec((n, dim), values)
            .map_err(|e| FlowError::InvalidArgument(e.to_string()))?;
        Ok(Self { data })
    }

    pub fn len(&self) -> usize {
        self.data.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.data.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn view(&self) -> ArrayView2<'_, T> {
        self.data.view()
    }

    pub fn view_mut(&mut self) -> ArrayViewMut2<'_, T> {
        self.data.view_mut()
    }

    pub fn array(&self) -> &Array2<T> {
        &self.data
    }

    pub fn into_array(self) -> Array2<T> {
        self.data
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, T> {
        self.data.row(i)
    }

    pub fn point(&self, i: usize) -> Point<T> {
        Point::from_view(self.data.row(i))
    }

    pub fn points(&self) -> impl Iterator<Item = Point<T>> + '_ {
        self.data.rows().into_iter().map(Point::from_view)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Rows `start..start + n` as a new batch.
    pub fn slice_rows(&self, start: usize, n: usize) -> Self {
        Self {
            data: self
                .data
                .slice(ndarray::s![start..start + n, ..])
                .to_owned(),
        }
    }

    /// Rows selected by `order`, in that order.
    pub fn select_rows(&self, order: &[usize]) -> Self {
        Self {
            data: self.data.select(Axis(0), order),
        }
    }

    pub(crate) fn require_finite(&self, what: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(FlowError::NonFinite(what.to_string()))
        }
    }

    pub(crate) fn require_same_shape(&self, other: &Self) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(FlowError::DimensionMismatch {
                expected: self.dim(),
                found: other.dim(),
            });
        }
        if self.len() != other.len() {
            return Err(FlowError::InvalidArgument(format!(
                "batch sizes differ: {} vs {}",
                self.len(),
                other.len()
            )));
        }
        Ok(())
    }
}

pub(crate) fn check_time<T: Scalar>(t: T) -> Result<()> {
    if t >= T::zero() && t <= T::one() {
        Ok(())
    } else {
        Err(FlowError::TimeOutOfRange(t.as_f64()))
    }
}

/// `(1 - t) x0 + t x1`, exact at both endpoints.
pub fn interpolate<T: Scalar>(x0: &Point<T>, x1: &Point<T>, t: T) -> Result<Point<T>> {
    x0.check_same_dim(x1)?;
    check_time(t)?;
    let coords = x0
        .coords
        .iter()
        .zip(&x1.coords)
        .map(|(&a, &b)| lerp(a, b, t))
        .collect();
    Ok(Point::from_vec_unchecked(coords))
}

#[inline]
pub(crate) fn lerp<T: Scalar>(a: T, b: T, t: T) -> T {
    (T::one() - t) * a + t * b
}

/// Row-wise interpolation with a per-row time.
pub fn interpolate_batch<T: Scalar>(x0: &Batch<T>, x1: &Batch<T>, times: &[T]) -> Result<Batch<T>> {
    x0.require_same_shape(x1)?;
    if times.len() != x0.len() {
        return Err(FlowError::InvalidArgument(format!(
            "{} times for {} rows",
            times.len(),
            x0.len()
        )));
    }
    let mut out = Array2::zeros((x0.len(), x0.dim()));
    for (i, &t) in times.iter().enumerate() {
        check_time(t)?;
        for j in 0..x0.dim() {
            out[[i, j]] = lerp(x0.data[[i, j]], x1.data[[i, j]], t);
        }
    }
    Ok(Batch::from_array(out))
}

/// The regression target `x1 - x0` of the straight-line path.
pub fn slope_target<T: Scalar>(x0: &Point<T>, x1: &Point<T>) -> Result<Point<T>> {
    x0.check_same_dim(x1)?;
    let coords = x0.coords.iter().zip(&x1.coords).map(|(&a, &b)| b - a).collect();
    Ok(Point::from_vec_unchecked(coords))
}

pub fn slope_target_batch<T: Scalar>(x0: &Batch<T>, x1: &Batch<T>) -> Result<Batch<T>> {
    x0.require_same_shape(x1)?;
    Ok(Batch::from_array(&x1.data - &x0.data))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridKind {
    #[default]
    Uniform,
}

/// Strictly increasing times from exactly 0 to exactly 1.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeGrid<T> {
    times: Vec<T>,
}

impl<T: Scalar> TimeGrid<T> {
    pub fn new(times: Vec<T>) -> Result<Self> {
        if times.len() < 2 {
            return Err(FlowError::InvalidGrid("need at least two points".into()));
        }
        if times[0] != T::zero() || times[times.len() - 1] != T::one() {
            return Err(FlowError::InvalidGrid("grid must start at 0 and end at 1".into()));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(FlowError::InvalidGrid("times must be strictly increasing".into()));
        }
        Ok(Self { times })
    }

    pub fn uniform(n_steps: usize) -> Result<Self> {
        make_time_grid(n_steps, GridKind::Uniform)
    }

    pub fn times(&self) -> &[T] {
        &self.times
    }

    pub fn n_steps(&self) -> usize {
        self.times.len() - 1
    }

    /// `(t_k, t_{k+1})` pairs.
    pub fn steps(&self) -> impl Iterator<Item = (T, T)> + '_ {
        self.times.windows(2).map(|w| (w[0], w[1]))
    }
}

pub fn make_time_grid<T: Scalar>(n_steps: usize, kind: GridKind) -> Result<TimeGrid<T>> {
    if n_steps == 0 {
        return Err(FlowError::InvalidGrid("n_steps must be at least 1".into()));
    }
    match kind {
        GridKind::Uniform => {
            let n = n_steps as f64;
            let times = (0..=n_steps).map(|k| T::lit(k as f64 / n)).collect();
            TimeGrid::new(times)
        }
    }
}
