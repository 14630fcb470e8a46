use ndarray::{Array2, ArrayView2};

use super::{check_rows, require_finite, Backbone, VelocityField};
use crate::error::Result;
use crate::flow::Point;
use crate::scalar::Scalar;

/// `v(x, t) = x + (m(x, t) - m(x, 1))`.
///
/// Each evaluation runs the shared backbone twice, at `t` and at `1`, so the
/// right boundary `v(x, 1) = x` holds for any parameters.
#[derive(Clone, Debug)]
pub struct SubtractionBoundaryModel<B> {
    backbone: B,
}

impl<B> SubtractionBoundaryModel<B> {
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

pub(crate) fn combine_subtraction<T: Scalar>(
    x: ArrayView2<'_, T>,
    m_t: &Array2<T>,
    m_1: &Array2<T>,
) -> Array2<T> {
    // The difference is formed first so that equal passes cancel exactly.
    let mut out = m_t - m_1;
    out += &x;
    out
}

impl<T: Scalar, B: Backbone<T>> VelocityField<T> for SubtractionBoundaryModel<B> {
    fn dim(&self) -> usize {
        self.backbone.dim()
    }

    fn velocity_rows(&self, x: ArrayView2<'_, T>, times: &[T]) -> Result<Array2<T>> {
        check_rows(self.dim(), x, times)?;
        let m_t = self.backbone.forward(x, times)?;
        require_finite(&m_t, "backbone")?;
        let ones = vec![T::one(); times.len()];
        let m_1 = self.backbone.forward(x, &ones)?;
        require_finite(&m_1, "backbone")?;
        Ok(combine_subtraction(x, &m_t, &m_1))
    }
}

pub fn subtraction_velocity<T: Scalar, B: Backbone<T>>(
    model: &SubtractionBoundaryModel<B>,
    x: &Point<T>,
    t: T,
) -> Result<Point<T>> {
    model.evaluate(x, t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::velocity::FnBackbone;
    use ndarray::ArrayView1;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn p(c: &[f64]) -> Point<f64> {
        Point::new(c.to_vec()).unwrap()
    }

    #[test]
    fn right_boundary_is_identity() {
        let m = SubtractionBoundaryModel::new(FnBackbone::new(2, |x: ArrayView1<'_, f64>, t: f64| {
            vec![(x[0] * t).sin() * 1e3, x[1].exp()]
        }));
        assert_eq!(subtraction_velocity(&m, &p(&[5.0, 5.0]), 1.0).unwrap(), p(&[5.0, 5.0]));
        let tiny = p(&[1e-300, -3e-20]);
        assert_eq!(subtraction_velocity(&m, &tiny, 1.0).unwrap(), tiny);
    }

    #[test]
    fn constant_backbone_cancels() {
        let m = SubtractionBoundaryModel::new(FnBackbone::new(2, |_x: ArrayView1<'_, f64>, _t| vec![3.0, -8.0]));
        for t in [0.0, 0.4, 0.9] {
            assert_eq!(subtraction_velocity(&m, &p(&[0.5, 1.5]), t).unwrap(), p(&[0.5, 1.5]));
        }
    }

    #[test]
    fn symbolic_backbone() {
        // m(x, t) = t x: v = x + t x - x.
        let m = SubtractionBoundaryModel::new(FnBackbone::new(2, |x: ArrayView1<'_, f64>, t: f64| {
            x.iter().map(|&v| t * v).collect()
        }));
        assert_eq!(subtraction_velocity(&m, &p(&[2.0, 4.0]), 0.25).unwrap(), p(&[0.5, 1.0]));
    }

    #[test]
    fn exactly_two_backbone_passes_per_call() {
        let calls = AtomicUsize::new(0);
        let m = SubtractionBoundaryModel::new(FnBackbone::new(1, |x: ArrayView1<'_, f64>, _t| {
            calls.fetch_add(1, Ordering::SeqCst);
            vec![x[0]]
        }));
        subtraction_velocity(&m, &p(&[1.0]), 0.3).unwrap();
        assert_eq!(calls.load(Ordering::SeqCst), 2);
    }
}
