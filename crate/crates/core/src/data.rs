//! Toy target distributions and the independent noise/data coupling.

use ndarray::{Array2, ArrayView2};
use rand::Rng;

use crate::error::{FlowError, Result};
use crate::flow::{check_time, Batch, Point};
use crate::rng::{fill_standard_normal, standard_normal, StreamFamily};
use crate::scalar::Scalar;
use crate::velocity::{check_rows, GaussianSpec, VelocityField};

/// Isotropic Gaussian mixture with shared standard deviation.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianMixture<T> {
    means: Vec<Point<T>>,
    std: T,
    weights: Vec<T>,
}

impl<T: Scalar> GaussianMixture<T> {
    /// `weights` are normalised; pass `None` for equal weights.
    pub fn new(means: Vec<Point<T>>, std: T, weights: Option<Vec<T>>) -> Result<Self> {
        let first = means
            .first()
            .ok_or_else(|| FlowError::InvalidArgument("mixture needs at least one component".into()))?;
        let dim = first.dim();
        if dim == 0 {
            return Err(FlowError::InvalidArgument("mixture dimension must be positive".into()));
        }
        if let Some(m) = means.iter().find(|m| m.dim() != dim) {
            return Err(FlowError::DimensionMismatch {
                expected: dim,
                found: m.dim(),
            });
        }
        if !(std > T::zero()) || !std.is_finite() {
            return Err(FlowError::InvalidArgument("mixture std must be positive".into()));
        }
        let weights = weights.unwrap_or_else(|| vec![T::one(); means.len()]);
        if weights.len() != means.len() || weights.iter().any(|w| !(*w > T::zero()) || !w.is_finite()) {
            return Err(FlowError::InvalidArgument(
                "mixture weights must be positive, one per component".into(),
            ));
        }
        let total: T = weights.iter().copied().sum();
        let weights = weights.into_iter().map(|w| w / total).collect();
        Ok(Self { means, std, weights })
    }

    pub fn dim(&self) -> usize {
        self.means[0].dim()
    }

    pub fn means(&self) -> &[Point<T>] {
        &self.means
    }

    pub fn std(&self) -> T {
        self.std
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn mean(&self) -> Point<T> {
        let mut m = vec![T::zero(); self.dim()];
        for (mu, &w) in self.means.iter().zip(&self.weights) {
            for (acc, &c) in m.iter_mut().zip(mu.coords()) {
                *acc += w * c;
            }
        }
        Point::from_vec_unchecked(m)
    }

    /// Trace of the mixture covariance: `d s^2 + sum_k w_k |mu_k - mean|^2`.
    pub fn covariance_trace(&self) -> T {
        let mean = self.mean();
        let spread: T = self
            .means
            .iter()
            .zip(&self.weights)
            .map(|(mu, &w)| {
                w * mu
                    .coords()
                    .iter()
                    .zip(mean.coords())
                    .map(|(&a, &b)| (a - b) * (a - b))
                    .sum::<T>()
            })
            .sum();
        T::lit(self.dim() as f64) * self.std * self.std + spread
    }

    fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [T]) {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut k = self.weights.len() - 1;
        for (i, w) in self.weights.iter().enumerate() {
            acc += w.as_f64();
            if u < acc {
                k = i;
                break;
            }
        }
        for (o, &m) in out.iter_mut().zip(self.means[k].coords()) {
            *o = m + self.std * standard_normal::<T, R>(rng);
        }
    }
}

/// Closed-form optimal velocity and marginal score of a mixture target.
///
/// At time `t` each component contributes `N(t mu_k, V I)` with
/// `V = (1 - t)^2 + t^2 s^2`. Writing `r_k(x)` for the posterior component
/// weights, `v* = sum_k r_k (mu_k + (t s^2 - (1 - t)) (x - t mu_k) / V)` and
/// `score = -sum_k r_k (x - t mu_k) / V`.
impl<T: Scalar> GaussianMixture<T> {
    fn marginal_variance(&self, t: T) -> T {
        let s = T::one() - t;
        s * s + t * t * self.std * self.std
    }

    fn responsibilities(&self, x: &[T], t: T, var: T) -> Vec<T> {
        let two = T::lit(2.0);
        let logits: Vec<T> = self
            .means
            .iter()
            .zip(&self.weights)
            .map(|(mu, &w)| {
                let sq: T = x.iter().zip(mu.coords()).map(|(&a, &m)| (a - t * m) * (a - t * m)).sum();
                w.ln() - sq / (two * var)
            })
            .collect();
        let top = logits.iter().copied().fold(T::neg_infinity(), T::max);
        let mut r: Vec<T> = logits.iter().map(|&l| (l - top).exp()).collect();
        let total: T = r.iter().copied().sum();
        r.iter_mut().for_each(|v| *v /= total);
        r
    }

    fn oracle_row(&self, x: &[T], t: T, velocity: &mut [T], score: &mut [T]) {
        let var = self.marginal_variance(t);
        let gain = (t * self.std * self.std - (T::one() - t)) / var;
        let r = self.responsibilities(x, t, var);
        velocity.iter_mut().for_each(|v| *v = T::zero());
        score.iter_mut().for_each(|v| *v = T::zero());
        for (mu, &rk) in self.means.iter().zip(&r) {
            for (j, &m) in mu.coords().iter().enumerate() {
                let centred = x[j] - t * m;
                velocity[j] += rk * (m + gain * centred);
                score[j] -= rk * centred / var;
            }
        }
    }

    fn oracle_point(&self, x: &Point<T>, t: T) -> Result<(Point<T>, Point<T>)> {
        if x.dim() != self.dim() {
            return Err(FlowError::DimensionMismatch {
                expected: self.dim(),
                found: x.dim(),
            });
        }
        check_time(t)?;
        let mut v = vec![T::zero(); self.dim()];
        let mut s = vec![T::zero(); self.dim()];
        self.oracle_row(x.coords(), t, &mut v, &mut s);
        Ok((Point::new(v)?, Point::new(s)?))
    }
}

pub fn mixture_oracle_velocity<T: Scalar>(mixture: &GaussianMixture<T>, x: &Point<T>, t: T) -> Result<Point<T>> {
    Ok(mixture.oracle_point(x, t)?.0)
}

pub fn mixture_oracle_score<T: Scalar>(mixture: &GaussianMixture<T>, x: &Point<T>, t: T) -> Result<Point<T>> {
    Ok(mixture.oracle_point(x, t)?.1)
}

impl<T: Scalar> VelocityField<T> for GaussianMixture<T> {
    fn dim(&self) -> usize {
        self.means[0].dim()
    }

    fn velocity_rows(&self, x: ArrayView2<'_, T>, times: &[T]) -> Result<Array2<T>> {
        check_rows(self.dim(), x, times)?;
        let mut out = Array2::zeros(x.raw_dim());
        let mut score = vec![T::zero(); self.dim()];
        for (i, mut row) in out.rows_mut().into_iter().enumerate() {
            let xi = x.row(i).to_vec();
            self.oracle_row(&xi, times[i], row.as_slice_mut().expect("standard layout"), &mut score);
        }
        Ok(out)
    }
}

impl<T: Scalar> VelocityField<T> for ToyDistribution<T> {
    fn dim(&self) -> usize {
        ToyDistribution::dim(self)
    }

    fn velocity_rows(&self, x: ArrayView2<'_, T>, times: &[T]) -> Result<Array2<T>> {
        match self {
            Self::Gaussian(g) => g.velocity_rows(x, times),
            Self::Mixture(m) => m.velocity_rows(x, times),
        }
    }
}

/// Target distribution pi_1 for toy experiments.
#[derive(Clone, Debug, PartialEq)]
pub enum ToyDistribution<T> {
    Gaussian(GaussianSpec<T>),
    Mixture(GaussianMixture<T>),
}

impl<T: Scalar> ToyDistribution<T> {
    pub fn dim(&self) -> usize {
        match self {
            Self::Gaussian(g) => g.dim(),
            Self::Mixture(m) => m.dim(),
        }
    }

    pub fn mean(&self) -> Point<T> {
        match self {
            Self::Gaussian(g) => g.mean().clone(),
            Self::Mixture(m) => m.mean(),
        }
    }

    pub fn covariance_trace(&self) -> T {
        match self {
            Self::Gaussian(g) => g.variances().iter().copied().sum(),
            Self::Mixture(m) => m.covariance_trace(),
        }
    }

    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [T]) {
        match self {
            Self::Gaussian(g) => {
                for ((o, &m), &v) in out.iter_mut().zip(g.mean().coords()).zip(g.variances()) {
                    *o = m + v.sqrt() * standard_normal::<T, R>(rng);
                }
            }
            Self::Mixture(m) => m.sample_into(rng, out),
        }
    }

    /// Draws rows `offset..offset + n`, each from its own substream of `family`.
    pub fn sample_batch(&self, family: &StreamFamily, offset: u64, n: usize) -> Batch<T> {
        let mut out = Array2::zeros((n, self.dim()));
        for (i, mut row) in out.rows_mut().into_iter().enumerate() {
            let mut rng = family.stream(offset + i as u64);
            self.sample_into(&mut rng, row.as_slice_mut().expect("standard layout"));
        }
        Batch::from_array(out)
    }
}

/// Standard-normal rows `offset..offset + n`, one substream per row.
pub fn sample_noise<T: Scalar>(family: &StreamFamily, offset: u64, n: usize, dim: usize) -> Batch<T> {
    let mut out = Array2::zeros((n, dim));
    for (i, mut row) in out.rows_mut().into_iter().enumerate() {
        let mut rng = family.stream(offset + i as u64);
        fill_standard_normal(&mut rng, row.as_slice_mut().expect("standard layout"));
    }
    Batch::from_array(out)
}

/// Independent coupling `(X0, X1) ~ N(0, I) x pi_1`.
///
/// Noise and data rows come from separate stream families, and every pair
/// index owns its own substream in each.
#[derive(Clone, Debug)]
pub struct CouplingSampler<T> {
    target: ToyDistribution<T>,
    noise: StreamFamily,
    data: StreamFamily,
    cursor: u64,
}

impl<T: Scalar> CouplingSampler<T> {
    pub fn new(target: ToyDistribution<T>, seed: u64) -> Self {
        Self {
            target,
            noise: StreamFamily::new(seed, "coupling/noise"),
            data: StreamFamily::new(seed, "coupling/data"),
            cursor: 0,
        }
    }

    pub fn target(&self) -> &ToyDistribution<T> {
        &self.target
    }

    pub fn dim(&self) -> usize {
        self.target.dim()
    }

    /// Pairs with indices `offset..offset + n`; does not move the cursor.
    pub fn sample_at(&self, offset: u64, n: usize) -> (Batch<T>, Batch<T>) {
        let x0 = sample_noise(&self.noise, offset, n, self.dim());
        let x1 = self.target.sample_batch(&self.data, offset, n);
        (x0, x1)
    }

    /// The next `n` pairs.
    pub fn sample(&mut self, n: usize) -> Result<(Batch<T>, Batch<T>)> {
        if n == 0 {
            return Err(FlowError::EmptyBatch);
        }
        let out = self.sample_at(self.cursor, n);
        self.cursor += n as u64;
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::moment_summary;

    fn spec() -> GaussianSpec<f64> {
        GaussianSpec::new(Point::new(vec![1.0, -1.0]).unwrap(), vec![4.0, 0.25]).unwrap()
    }

    #[test]
    fn coupling_is_deterministic() {
        let target = ToyDistribution::Gaussian(spec());
        let mut a = CouplingSampler::new(target.clone(), 11);
        let mut b = CouplingSampler::new(target, 11);
        assert_eq!(a.sample(4).unwrap(), b.sample(4).unwrap());
        assert_eq!(a.sample(4).unwrap(), b.sample(4).unwrap());
    }

    #[test]
    fn coupling_rows_do_not_depend_on_chunking() {
        let s = CouplingSampler::new(ToyDistribution::Gaussian(spec()), 3);
        let (x0, x1) = s.sample_at(0, 10);
        let (y0, y1) = s.sample_at(6, 4);
        assert_eq!(x0.slice_rows(6, 4), y0);
        assert_eq!(x1.slice_rows(6, 4), y1);
    }

    #[test]
    fn zero_pairs_is_an_error() {
        let mut s = CouplingSampler::new(ToyDistribution::Gaussian(spec()), 3);
        assert!(matches!(s.sample(0), Err(FlowError::EmptyBatch)));
    }

    #[test]
    fn noise_moments_match_standard_normal() {
        let s = CouplingSampler::new(ToyDistribution::Gaussian(spec()), 5);
        let (x0, x1) = s.sample_at(0, 100_000);
        let m0 = moment_summary(&x0).unwrap();
        for i in 0..2 {
            assert!(m0.mean[i].abs() <= 0.02, "mean {}", m0.mean[i]);
            assert!((m0.std[i] - 1.0).abs() <= 0.02, "std {}", m0.std[i]);
        }
        let m1 = moment_summary(&x1).unwrap();
        assert!((m1.mean[0] - 1.0).abs() <= 0.03);
        assert!((m1.mean[1] + 1.0).abs() <= 0.03);
    }

    #[test]
    fn noise_and_data_are_uncorrelated() {
        let s = CouplingSampler::new(ToyDistribution::Gaussian(spec()), 9);
        let n = 50_000;
        let (x0, x1) = s.sample_at(0, n);
        // Standardised cross-correlation of coordinate 0; |r| ~ 1/sqrt(n).
        let r: f64 = (0..n).map(|i| x0.row(i)[0] * (x1.row(i)[0] - 1.0) / 2.0).sum::<f64>() / n as f64;
        assert!(r.abs() < 5.0 / (n as f64).sqrt(), "r = {r}");
    }

    #[test]
    fn mixture_moments() {
        let m = GaussianMixture::new(
            vec![Point::new(vec![-2.0f64, 0.0]).unwrap(), Point::new(vec![2.0, 0.0]).unwrap()],
            0.5,
            None,
        )
        .unwrap();
        assert_eq!(m.mean().coords(), &[0.0, 0.0]);
        assert!((m.covariance_trace() - 4.5).abs() < 1e-15);
        let dist = ToyDistribution::Mixture(m);
        let b = dist.sample_batch(&StreamFamily::new(1, "mix"), 0, 100_000);
        let s = moment_summary(&b).unwrap();
        assert!((s.covariance_trace - 4.5).abs() < 0.05, "{}", s.covariance_trace);
    }

    #[test]
    fn mixture_validation() {
        assert!(GaussianMixture::<f64>::new(vec![], 1.0, None).is_err());
        let a = Point::new(vec![0.0]).unwrap();
        assert!(GaussianMixture::new(vec![a.clone()], 0.0, None).is_err());
        assert!(GaussianMixture::new(vec![a.clone()], 1.0, Some(vec![1.0, 2.0])).is_err());
        assert!(GaussianMixture::new(vec![a, Point::new(vec![0.0, 1.0]).unwrap()], 1.0, None).is_err());
    }

    #[test]
    fn mixture_oracle_boundaries_and_score_identity() {
        let m = GaussianMixture::new(
            vec![Point::new(vec![-2.0f64, 0.0]).unwrap(), Point::new(vec![2.0, 1.0]).unwrap()],
            0.5,
            Some(vec![1.0, 3.0]),
        )
        .unwrap();
        let probes = sample_noise::<f64>(&StreamFamily::new(8, "p"), 0, 50, 2);
        let mean = m.mean();
        for x in probes.points() {
            let v1 = mixture_oracle_velocity(&m, &x, 1.0).unwrap();
            assert!(v1.max_abs_diff(&x) <= 1e-12);
            let v0 = mixture_oracle_velocity(&m, &x, 0.0).unwrap();
            for j in 0..2 {
                assert!((v0.coords()[j] - (mean.coords()[j] - x.coords()[j])).abs() <= 1e-12);
            }
            for t in [0.1, 0.5, 0.9] {
                let v = mixture_oracle_velocity(&m, &x, t).unwrap();
                let s = mixture_oracle_score(&m, &x, t).unwrap();
                for j in 0..2 {
                    let tweedie = (t * v.coords()[j] - x.coords()[j]) / (1.0 - t);
                    assert!((tweedie - s.coords()[j]).abs() <= 1e-10);
                }
            }
        }
    }

    #[test]
    fn single_component_mixture_is_the_gaussian_oracle() {
        let m = GaussianMixture::new(vec![Point::new(vec![1.0f64, -1.0]).unwrap()], 2.0, None).unwrap();
        let g = GaussianSpec::new(Point::new(vec![1.0, -1.0]).unwrap(), vec![4.0, 4.0]).unwrap();
        let x = sample_noise::<f64>(&StreamFamily::new(9, "p"), 0, 20, 2);
        for t in [0.0, 0.3, 0.7, 1.0] {
            let a = m.velocity(&x, t).unwrap();
            let b = g.velocity(&x, t).unwrap();
            for (p, q) in a.array().iter().zip(b.array().iter()) {
                assert!((p - q).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn mixture_score_matches_log_density_gradient() {
        let m = GaussianMixture::new(
            vec![Point::new(vec![-2.0f64]).unwrap(), Point::new(vec![2.0]).unwrap()],
            0.5,
            None,
        )
        .unwrap();
        let (t, x, h) = (0.6, 0.3, 1e-6);
        let var = (1.0 - t) * (1.0 - t) + t * t * 0.25;
        let density = |y: f64| {
            [-2.0, 2.0]
                .iter()
                .map(|mu: &f64| (-(y - t * mu) * (y - t * mu) / (2.0 * var)).exp())
                .sum::<f64>()
                .ln()
        };
        let fd = (density(x + h) - density(x - h)) / (2.0 * h);
        let s = mixture_oracle_score(&m, &Point::new(vec![x]).unwrap(), t).unwrap();
        assert!((s.coords()[0] - fd).abs() < 1e-7, "{} vs {fd}", s.coords()[0]);
    }
}
