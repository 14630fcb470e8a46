//! Scores from velocities via Tweedie's formula
//! `grad log rho_t(x) = (t v(x, t) - x) / (1 - t)`.
//!
//! The identity assumes standard-normal noise independent of the data. The
//! estimate diverges as `t -> 1`, so evaluations inside `[1 - delta, 1]` are
//! rejected unless clamping is requested explicitly.

use ndarray::{Array2, ArrayView2, Zip};

use crate::error::{FlowError, Result};
use crate::flow::{Batch, Point};
use crate::scalar::Scalar;
use crate::velocity::VelocityField;

pub const DEFAULT_DELTA: f64 = 1e-6;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SingularityPolicy {
    #[default]
    Error,
    /// Evaluate at `1 - delta` instead and flag the estimate.
    Clamp,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoreOptions {
    pub delta: f64,
    pub policy: SingularityPolicy,
}

impl Default for ScoreOptions {
    fn default() -> Self {
        Self {
            delta: DEFAULT_DELTA,
            policy: SingularityPolicy::Error,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreEstimate<T> {
    pub value: Point<T>,
    /// The time actually used, after any clamping.
    pub t: T,
    pub clamped: bool,
}

/// Resolves the evaluation time, returning it and whether it was clamped.
pub fn resolve_time<T: Scalar>(t: T, opts: &ScoreOptions) -> Result<(T, bool)> {
    if !(opts.delta > 0.0 && opts.delta < 1.0) {
        return Err(FlowError::InvalidArgument(format!("score delta must lie in (0, 1), got {}", opts.delta)));
    }
    if !(t >= T::zero()) || t > T::one() {
        return Err(FlowError::TimeOutOfRange(t.as_f64()));
    }
    let limit = T::one() - T::lit(opts.delta);
    if t < limit {
        return Ok((t, false));
    }
    match opts.policy {
        SingularityPolicy::Error => Err(FlowError::ScoreSingularity {
            t: t.as_f64(),
            delta: opts.delta,
        }),
        SingularityPolicy::Clamp => Ok((limit, true)),
    }
}

/// Applies the formula to a precomputed velocity.
pub(crate) fn tweedie_from_velocity<T: Scalar>(x: ArrayView2<'_, T>, vel: &Array2<T>, t: T) -> Array2<T> {
    let one_minus = T::one() - t;
    let mut out = Array2::zeros(x.raw_dim());
    Zip::from(&mut out).and(x).and(vel).for_each(|o, &xi, &vi| *o = (t * vi - xi) / one_minus);
    out
}

pub fn tweedie_score<T: Scalar, V: VelocityField<T> + ?Sized>(v: &V, x: &Point<T>, t: T) -> Result<ScoreEstimate<T>> {
    tweedie_score_with(v, x, t, &ScoreOptions::default())
}

pub fn tweedie_score_with<T: Scalar, V: VelocityField<T> + ?Sized>(
    v: &V,
    x: &Point<T>,
    t: T,
    opts: &ScoreOptions,
) -> Result<ScoreEstimate<T>> {
    let batch = Batch::from_points(std::slice::from_ref(x))?;
    let (scores, t, clamped) = tweedie_score_batch(v, &batch, t, opts)?;
    Ok(ScoreEstimate {
        value: scores.point(0),
        t,
        clamped,
    })
}

/// Scores for every row of `x` at a shared time. Returns the scores, the
/// time used and the clamp flag.
pub fn tweedie_score_batch<T: Scalar, V: VelocityField<T> + ?Sized>(
    v: &V,
    x: &Batch<T>,
    t: T,
    opts: &ScoreOptions,
) -> Result<(Batch<T>, T, bool)> {
    let (t, clamped) = resolve_time(t, opts)?;
    let vel = v.velocity(x, t)?;
    let out = tweedie_from_velocity(x.view(), vel.array(), t);
    let out = Batch::from_array(out);
    out.require_finite("score")?;
    Ok((out, t, clamped))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreGridEntry<T> {
    pub x: Point<T>,
    pub estimate: ScoreEstimate<T>,
}

/// Scores at every (time, point) pair, ordered by time then point.
pub fn score_field_on_grid<T: Scalar, V: VelocityField<T> + ?Sized>(
    v: &V,
    points: &Batch<T>,
    times: &[T],
) -> Result<Vec<ScoreGridEntry<T>>> {
    let opts = ScoreOptions::default();
    let mut table = Vec::with_capacity(points.len() * times.len());
    if points.is_empty() {
        return Ok(table);
    }
    for &t in times {
        let (scores, t_used, clamped) = tweedie_score_batch(v, points, t, &opts)?;
        for (x, value) in points.points().zip(scores.points()) {
            table.push(ScoreGridEntry {
                x,
                estimate: ScoreEstimate {
                    value,
                    t: t_used,
                    clamped,
                },
            });
        }
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::velocity::{gaussian_oracle_score, GaussianSpec};

    fn p(c: &[f64]) -> Point<f64> {
        Point::new(c.to_vec()).unwrap()
    }

    #[test]
    fn time_zero_gives_standard_normal_score() {
        let spec = GaussianSpec::new(p(&[3.0, -1.0]), vec![0.5, 2.0]).unwrap();
        let x = p(&[0.7, -2.5]);
        let s = tweedie_score(&spec, &x, 0.0).unwrap();
        assert_eq!(s.value.coords(), &[-0.7, 2.5]);
        assert!(!s.clamped);
    }

    #[test]
    fn one_d_oracle_value() {
        let spec = GaussianSpec::scalar(1.0, 4.0).unwrap();
        let s = tweedie_score(&spec, &p(&[0.0]), 0.5).unwrap();
        // V = 0.25 + 0.25 * 4 = 1.25, score = 0.5 / 1.25.
        assert!((s.value.coords()[0] - 0.4).abs() < 1e-15);
        let exact = gaussian_oracle_score(&spec, &p(&[0.0]), 0.5).unwrap();
        assert!((s.value.coords()[0] - exact.coords()[0]).abs() < 1e-15);
    }

    #[test]
    fn singular_zone_is_an_error_unless_clamped() {
        let spec = GaussianSpec::scalar(1.0, 4.0).unwrap();
        let x = p(&[0.3]);
        for t in [1.0, 1.0 - 1e-7] {
            assert!(matches!(
                tweedie_score(&spec, &x, t),
                Err(FlowError::ScoreSingularity { .. })
            ));
        }
        let opts = ScoreOptions {
            policy: SingularityPolicy::Clamp,
            ..Default::default()
        };
        let s = tweedie_score_with(&spec, &x, 1.0, &opts).unwrap();
        assert!(s.clamped);
        assert_eq!(s.t, 1.0 - 1e-6);
        assert!(s.value.coords()[0].is_finite());
        assert!(tweedie_score(&spec, &x, -0.1).is_err());
        assert!(tweedie_score(&spec, &x, 1.0 - 1e-5).is_ok());
    }

    #[test]
    fn grid_table_shapes() {
        let spec = GaussianSpec::scalar(1.0, 4.0).unwrap();
        let empty = Batch::<f64>::zeros(0, 1);
        assert!(score_field_on_grid(&spec, &empty, &[0.5]).unwrap().is_empty());
        let one = Batch::from_flat(1, vec![0.0]).unwrap();
        let table = score_field_on_grid(&spec, &one, &[0.5]).unwrap();
        assert_eq!(table.len(), 1);
        assert_eq!(table[0].estimate, tweedie_score(&spec, &p(&[0.0]), 0.5).unwrap());
        assert!(score_field_on_grid(&spec, &one, &[0.5, 1.0]).is_err());
    }

    #[test]
    fn oracle_grid_matches_closed_form() {
        let spec = GaussianSpec::new(p(&[1.0, -2.0]), vec![4.0, 0.25]).unwrap();
        let mut coords = Vec::new();
        for i in 0..10 {
            for j in 0..10 {
                coords.extend([-3.0 + 0.6 * i as f64, -3.0 + 0.6 * j as f64]);
            }
        }
        let grid = Batch::from_flat(2, coords).unwrap();
        let times = [0.1, 0.5, 0.9];
        let table = score_field_on_grid(&spec, &grid, &times).unwrap();
        assert_eq!(table.len(), 300);
        for entry in &table {
            let exact = gaussian_oracle_score(&spec, &entry.x, entry.estimate.t).unwrap();
            assert!(entry.estimate.value.max_abs_diff(&exact) <= 1e-10);
        }
    }
}
