use ndarray::{Array2, ArrayView2};

use super::boundary::BoundaryFunctionSet;
use super::{check_rows, require_finite, Backbone, VelocityField};
use crate::error::{FlowError, Result};
use crate::flow::{Batch, Point};
use crate::scalar::{CompensatedSum, Scalar};

/// `v(x, t) = g(t) (C - x) + f(t) x + h(t) m(x, t)`.
///
/// Exact at both boundaries for any backbone: `v(x, 1) = x`, `v(x, 0) = C - x`.
#[derive(Clone, Debug)]
pub struct MaskBoundaryModel<T, B> {
    backbone: B,
    functions: BoundaryFunctionSet,
    data_mean: Point<T>,
}

impl<T: Scalar, B: Backbone<T>> MaskBoundaryModel<T, B> {
    pub fn new(backbone: B, functions: BoundaryFunctionSet, data_mean: Point<T>) -> Result<Self> {
        if data_mean.dim() != backbone.dim() {
            return Err(FlowError::DimensionMismatch {
                expected: backbone.dim(),
                found: data_mean.dim(),
            });
        }
        Ok(Self {
            backbone,
            functions,
            data_mean,
        })
    }
}

impl<T, B> MaskBoundaryModel<T, B> {
    pub fn backbone(&self) -> &B {
        &self.backbone
    }

    pub fn backbone_mut(&mut self) -> &mut B {
        &mut self.backbone
    }

    pub fn functions(&self) -> &BoundaryFunctionSet {
        &self.functions
    }

    pub fn data_mean(&self) -> &Point<T> {
        &self.data_mean
    }

    pub fn into_backbone(self) -> B {
        self.backbone
    }
}

impl<T: Scalar, B> MaskBoundaryModel<T, B> {
    /// Combines a backbone output `m` with the boundary terms.
    pub(crate) fn combine(&self, x: ArrayView2<'_, T>, times: &[T], m: &Array2<T>) -> Array2<T> {
        let c = self.data_mean.coords();
        let mut out = Array2::zeros(x.raw_dim());
        for (i, &t) in times.iter().enumerate() {
            let b = self.functions.eval_unchecked(t);
            for (j, &cj) in c.iter().enumerate() {
                let xi = x[[i, j]];
                out[[i, j]] = b.g * (cj - xi) + b.f * xi + b.h * m[[i, j]];
            }
        }
        out
    }
}

impl<T: Scalar, B: Backbone<T>> VelocityField<T> for MaskBoundaryModel<T, B> {
    fn dim(&self) -> usize {
        self.backbone.dim()
    }

    fn velocity_rows(&self, x: ArrayView2<'_, T>, times: &[T]) -> Result<Array2<T>> {
        check_rows(self.dim(), x, times)?;
        let m = self.backbone.forward(x, times)?;
        require_finite(&m, "backbone")?;
        Ok(self.combine(x, times, &m))
    }
}

pub fn mask_velocity<T: Scalar, B: Backbone<T>>(
    model: &MaskBoundaryModel<T, B>,
    x: &Point<T>,
    t: T,
) -> Result<Point<T>> {
    model.evaluate(x, t)
}

/// Empirical mean of a data sample, used as the frozen `C` of the mask model.
pub fn estimate_data_mean<T: Scalar>(samples: &Batch<T>) -> Result<Point<T>> {
    if samples.is_empty() {
        return Err(FlowError::EmptyBatch);
    }
    let n = T::lit(samples.len() as f64);
    let coords = samples
        .view()
        .columns()
        .into_iter()
        .map(|col| col.iter().copied().collect::<CompensatedSum<T>>().value() / n)
        .collect();
    Point::new(coords)
}
