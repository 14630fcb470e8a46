//! Boundary violations, score-norm profiles, energy distance and moments.

use serde::{Deserialize, Serialize};

use crate::error::{FlowError, Result};
use crate::flow::{Batch, Point};
use crate::scalar::{CompensatedSum, Scalar};
use crate::score::{tweedie_score_batch, ScoreOptions};
use crate::velocity::VelocityField;

/// Deviations from `v(x, 1) = x` on data probes ("right") and from
/// `v(x, 0) = C - x` on noise probes ("left"), in the L2 and max norms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryReport {
    pub right_violation_mean: f64,
    pub right_violation_max: f64,
    pub right_violation_max_abs: f64,
    pub left_violation_mean: f64,
    pub left_violation_max: f64,
    pub left_violation_max_abs: f64,
    pub probe_count: usize,
}

struct Deviation {
    mean: f64,
    max: f64,
    max_abs: f64,
}

fn deviations<T: Scalar>(got: &Batch<T>, want: impl Fn(usize, usize) -> T) -> Deviation {
    let mut sum = CompensatedSum::new();
    let (mut max, mut max_abs) = (0.0f64, 0.0f64);
    for i in 0..got.len() {
        let mut sq = CompensatedSum::new();
        for j in 0..got.dim() {
            let d = (got.array()[[i, j]] - want(i, j)).as_f64();
            sq.add(d * d);
            max_abs = max_abs.max(d.abs());
        }
        let norm = sq.value().sqrt();
        sum.add(norm);
        max = max.max(norm);
    }
    Deviation {
        mean: sum.value() / got.len() as f64,
        max,
        max_abs,
    }
}

pub fn boundary_violation<T: Scalar, V: VelocityField<T> + ?Sized>(
    v: &V,
    probes_data: &Batch<T>,
    probes_noise: &Batch<T>,
    c: &Point<T>,
) -> Result<BoundaryReport> {
    if probes_data.is_empty() || probes_noise.is_empty() {
        return Err(FlowError::EmptyBatch);
    }
    if c.dim() != v.dim() {
        return Err(FlowError::DimensionMismatch {
            expected: v.dim(),
            found: c.dim(),
        });
    }
    let at_one = v.velocity(probes_data, T::one())?;
    let right = deviations(&at_one, |i, j| probes_data.array()[[i, j]]);
    let at_zero = v.velocity(probes_noise, T::zero())?;
    let left = deviations(&at_zero, |i, j| c.coords()[j] - probes_noise.array()[[i, j]]);
    Ok(BoundaryReport {
        right_violation_mean: right.mean,
        right_violation_max: right.max,
        right_violation_max_abs: right.max_abs,
        left_violation_mean: left.mean,
        left_violation_max: left.max,
        left_violation_max_abs: left.max_abs,
        probe_count: probes_data.len().min(probes_noise.len()),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreNormRow {
    pub t: f64,
    pub mean_norm: f64,
    pub max_norm: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreNormProfile {
    pub rows: Vec<ScoreNormRow>,
}

impl ScoreNormProfile {
    pub fn at(&self, t: f64) -> Option<&ScoreNormRow> {
        self.rows.iter().find(|r| r.t == t)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,mean_norm,max_norm\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{}\n", r.t, r.mean_norm, r.max_norm));
        }
        out
    }
}

/// Probe times concentrated near the singular end, stopping at `1 - 1e-3`.
pub const DEFAULT_PROFILE_TIMES: [f64; 4] = [0.5, 0.9, 0.98, 0.999];

pub fn score_norm_profile<T: Scalar, V: VelocityField<T> + ?Sized>(
    v: &V,
    probes: &Batch<T>,
    times: &[T],
) -> Result<ScoreNormProfile> {
    if probes.is_empty() {
        return Err(FlowError::EmptyBatch);
    }
    let opts = ScoreOptions::default();
    let mut rows = Vec::with_capacity(times.len());
    for &t in times {
        let (scores, _, _) = tweedie_score_batch(v, probes, t, &opts)?;
        let mut sum = CompensatedSum::new();
        let mut max = 0.0f64;
        for s in scores.points() {
            let n = s.norm().as_f64();
            sum.add(n);
            max = max.max(n);
        }
        rows.push(ScoreNormRow {
            t: t.as_f64(),
            mean_norm: sum.value() / probes.len() as f64,
            max_norm: max,
        });
    }
    Ok(ScoreNormProfile { rows })
}

fn check_pair<T: Scalar>(a: &Batch<T>, b: &Batch<T>) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(FlowError::EmptyBatch);
    }
    if a.dim() != b.dim() {
        return Err(FlowError::DimensionMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    Ok(())
}

fn distance<T: Scalar>(a: &Batch<T>, i: usize, b: &Batch<T>, j: usize) -> f64 {
    let (x, y) = (a.row(i), b.row(j));
    let mut sq = 0.0;
    for k in 0..x.len() {
        let d = (x[k] - y[k]).as_f64();
        sq += d * d;
    }
    sq.sqrt()
}

/// Sum of `|a_i - b_j|` over all pairs, optionally skipping `i == j`.
fn pair_sum<T: Scalar>(a: &Batch<T>, b: &Batch<T>, skip_diagonal: bool) -> f64 {
    let mut total = CompensatedSum::new();
    for i in 0..a.len() {
        let mut row = CompensatedSum::new();
        for j in 0..b.len() {
            if !(skip_diagonal && i == j) {
                row.add(distance(a, i, b, j));
            }
        }
        total.add(row.value());
    }
    total.value()
}

/// `2 E|a - b| - E|a - a'| - E|b - b'|` with every expectation taken over
/// all ordered pairs. Exactly zero for identical multisets.
pub fn energy_distance<T: Scalar>(a: &Batch<T>, b: &Batch<T>) -> Result<f64> {
    check_pair(a, b)?;
    let (n, m) = (a.len() as f64, b.len() as f64);
    let cross = pair_sum(a, b, false) / (n * m);
    let within_a = pair_sum(a, a, false) / (n * n);
    let within_b = pair_sum(b, b, false) / (m * m);
    Ok(2.0 * cross - within_a - within_b)
}

/// As [`energy_distance`] but with off-diagonal within-set means, which are
/// unbiased. Can be slightly negative for samples from one distribution.
pub fn energy_distance_unbiased<T: Scalar>(a: &Batch<T>, b: &Batch<T>) -> Result<f64> {
    check_pair(a, b)?;
    let within = |x: &Batch<T>| {
        let n = x.len() as f64;
        if x.len() < 2 {
            0.0
        } else {
            pair_sum(x, x, true) / (n * (n - 1.0))
        }
    };
    let cross = pair_sum(a, b, false) / (a.len() as f64 * b.len() as f64);
    Ok(2.0 * cross - within(a) - within(b))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentSummary<T> {
    pub mean: Vec<T>,
    pub std: Vec<T>,
    pub covariance_trace: T,
}

/// Sample mean, unbiased per-dimension standard deviation and covariance trace.
pub fn moment_summary<T: Scalar>(samples: &Batch<T>) -> Result<MomentSummary<T>> {
    let n = samples.len();
    if n < 2 {
        return Err(FlowError::InvalidArgument(format!("moments need at least 2 samples, got {n}")));
    }
    let nf = T::lit(n as f64);
    let mut mean = Vec::with_capacity(samples.dim());
    let mut std = Vec::with_capacity(samples.dim());
    let mut trace = CompensatedSum::new();
    for col in samples.array().columns() {
        let mu = col.iter().copied().collect::<CompensatedSum<T>>().value() / nf;
        let ss = col.iter().map(|&x| (x - mu) * (x - mu)).collect::<CompensatedSum<T>>().value();
        let var = ss / (nf - T::one());
        mean.push(mu);
        std.push(var.sqrt());
        trace.add(var);
    }
    Ok(MomentSummary {
        mean,
        std,
        covariance_trace: trace.value(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::sample_noise;
    use crate::rng::StreamFamily;
    use crate::velocity::GaussianSpec;

    fn b(dim: usize, v: &[f64]) -> Batch<f64> {
        Batch::from_flat(dim, v.to_vec()).unwrap()
    }

    #[test]
    fn oracle_boundaries_are_exact() {
        let spec = GaussianSpec::new(Point::new(vec![1.0, -2.0]).unwrap(), vec![4.0, 0.5]).unwrap();
        let probes = sample_noise(&StreamFamily::new(0, "p"), 0, 50, 2);
        let r = boundary_violation(&spec, &probes, &probes, spec.mean()).unwrap();
        assert!(r.right_violation_max <= 1e-12 && r.left_violation_max <= 1e-12, "{r:?}");
        assert_eq!(r.probe_count, 50);
        assert!(boundary_violation(&spec, &Batch::zeros(0, 2), &probes, spec.mean()).is_err());
    }

    #[test]
    fn profile_at_the_mode_is_zero() {
        let spec = GaussianSpec::scalar(1.0, 4.0).unwrap();
        let times = [0.1, 0.5, 0.98];
        for &t in &times {
            let probes = b(1, &[t]);
            let p = score_norm_profile(&spec, &probes, &[t]).unwrap();
            assert!(p.rows[0].mean_norm < 1e-15);
        }
        let p = score_norm_profile(&spec, &b(1, &[0.0]), &[0.5]).unwrap();
        assert!((p.rows[0].mean_norm - 0.4).abs() < 1e-15);
        assert!(p.to_csv().starts_with("t,mean_norm,max_norm\n0.5,"));
        assert!(score_norm_profile(&spec, &b(1, &[0.0]), &[1.0]).is_err());
    }

    #[test]
    fn energy_distance_examples() {
        let a = b(1, &[0.0]);
        let c = b(1, &[1.0]);
        assert_eq!(energy_distance(&a, &c).unwrap(), 2.0);
        let x = sample_noise(&StreamFamily::new(1, "e"), 0, 60, 3);
        assert!(energy_distance(&x, &x).unwrap().abs() <= 1e-12);
        let y = sample_noise(&StreamFamily::new(2, "e"), 0, 40, 3);
        let perm: Vec<usize> = (0..40).rev().collect();
        let d1 = energy_distance(&x, &y).unwrap();
        assert!((d1 - energy_distance(&x, &y.select_rows(&perm)).unwrap()).abs() <= 1e-12);
        assert!((d1 - energy_distance(&y, &x).unwrap()).abs() <= 1e-12);
        assert!(energy_distance(&x, &b(1, &[0.0])).is_err());
    }

    #[test]
    fn unbiased_form_examples() {
        assert_eq!(energy_distance_unbiased(&b(1, &[0.0]), &b(1, &[1.0])).unwrap(), 2.0);
        // Within-set means exclude self-pairs: {0, 2} has mean |a - a'| = 2.
        let a = b(1, &[0.0, 2.0]);
        let c = b(1, &[1.0]);
        assert_eq!(energy_distance_unbiased(&a, &c).unwrap(), 2.0 * 1.0 - 2.0);
        assert_eq!(energy_distance(&a, &c).unwrap(), 2.0 * 1.0 - 1.0);
    }

    #[test]
    fn moments_by_hand() {
        let m = moment_summary(&b(1, &[-1.0, 1.0])).unwrap();
        assert_eq!(m.mean, vec![0.0]);
        assert!((m.std[0] - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(m.covariance_trace, 2.0);
        assert!(moment_summary(&b(1, &[1.0])).is_err());
        let x = b(2, &[1.0, 2.0, 3.0, 5.0, -1.0, 0.5]);
        let twice = b(2, &[1.0, 2.0, 3.0, 5.0, -1.0, 0.5, 1.0, 2.0, 3.0, 5.0, -1.0, 0.5]);
        assert_eq!(moment_summary(&x).unwrap(), moment_summary(&x.clone()).unwrap());
        assert_eq!(moment_summary(&x).unwrap().mean, moment_summary(&twice).unwrap().mean);
    }

    #[test]
    fn standard_normal_trace() {
        let x = sample_noise::<f64>(&StreamFamily::new(4, "m"), 0, 100_000, 3);
        let tr = moment_summary(&x).unwrap().covariance_trace;
        assert!((tr - 3.0).abs() <= 0.02 * 3.0, "{tr}");
    }
}
