//! Differentiable tasks with per-sample gradients and Hessian-vector products.
//!
//! [`QuadraticTask`] exposes its population gradient, Hessian, and per-sample
//! gradient covariance exactly, so every estimator and closed form in the
//! crate can be checked against ground truth. [`LogisticTask`] and
//! [`TinyMlpTask`] are the convex and non-convex desk-scale stand-ins for
//! real training.

mod logistic;
mod mlp;
mod quadratic;

pub use logistic::{LogisticGenerator, LogisticTask};
pub(crate) use logistic::{sigmoid, softplus};
pub use mlp::TinyMlpTask;
pub use quadratic::{population_stats, PopulationStats, QuadraticTask};

use num_traits::{One, Zero};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{self, Matrix};
use crate::Scalar;

/// A feature vector with a real-valued target (0/1 for classification).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledPoint<T> {
    pub x: Vec<T>,
    pub y: T,
}

/// A loss landscape over parameters `w ∈ R^d` driven by i.i.d. samples.
///
/// Methods assume `w` and `v` have length [`dim`](Self::dim); shape checks
/// happen at the public operation boundaries.
pub trait DifferentiableTask: Sync {
    type Scalar: Scalar;
    type Sample: Clone + Send + Sync;

    fn dim(&self) -> usize;

    fn loss(&self, w: &[Self::Scalar], sample: &Self::Sample) -> Self::Scalar;

    fn per_sample_gradient(&self, w: &[Self::Scalar], sample: &Self::Sample) -> Vec<Self::Scalar>;

    /// Hessian-vector product of the mean loss over `batch`.
    fn hvp(
        &self,
        w: &[Self::Scalar],
        batch: &[Self::Sample],
        v: &[Self::Scalar],
    ) -> Vec<Self::Scalar>;

    fn sample_draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Self::Sample;

    fn draw_batch<R: Rng + ?Sized>(&self, rng: &mut R, size: usize) -> Vec<Self::Sample> {
        (0..size).map(|_| self.sample_draw(rng)).collect()
    }

    fn per_sample_gradients(
        &self,
        w: &[Self::Scalar],
        batch: &[Self::Sample],
    ) -> Vec<Vec<Self::Scalar>> {
        batch.iter().map(|s| self.per_sample_gradient(w, s)).collect()
    }

    fn batch_loss(&self, w: &[Self::Scalar], batch: &[Self::Sample]) -> Self::Scalar {
        let total: Self::Scalar = batch.iter().map(|s| self.loss(w, s)).sum();
        total / Self::Scalar::from_usize_lossy(batch.len().max(1))
    }

    fn batch_gradient(&self, w: &[Self::Scalar], batch: &[Self::Sample]) -> Vec<Self::Scalar> {
        let mut acc = vec![Self::Scalar::zero(); self.dim()];
        for s in batch {
            linalg::axpy(Self::Scalar::one(), &self.per_sample_gradient(w, s), &mut acc);
        }
        linalg::scale(
            Self::Scalar::one() / Self::Scalar::from_usize_lossy(batch.len().max(1)),
            &acc,
        )
    }

    /// Re-draws the output layer, if the task has one. Used when switching
    /// from public to private training.
    fn reinit_head<R: Rng + ?Sized>(&self, _w: &mut [Self::Scalar], _rng: &mut R) {}
}

/// Sample mean and unbiased sample covariance of per-sample gradients.
#[derive(Debug, Clone)]
pub struct GradientMoments<T> {
    pub mean: Vec<T>,
    pub covariance: Matrix<T>,
    pub samples: usize,
}

/// Estimates `G` and `Σ` from `m` fresh per-sample gradients at `w`.
pub fn empirical_moments<K, R>(
    task: &K,
    w: &[K::Scalar],
    m: usize,
    rng: &mut R,
) -> Result<GradientMoments<K::Scalar>>
where
    K: DifferentiableTask,
    R: Rng + ?Sized,
{
    check_dim(task.dim(), w.len())?;
    if m < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: m });
    }
    let grads: Vec<_> = (0..m)
        .map(|_| {
            let s = task.sample_draw(rng);
            task.per_sample_gradient(w, &s)
        })
        .collect();
    let mean = linalg::mean_vec(&grads)?;
    // shifted by the first gradient: exact zero when all gradients coincide
    let shift = grads[0].clone();
    let d = task.dim();
    let mut cov = Matrix::zeros(d, d);
    let mut shifted_sum = vec![K::Scalar::zero(); d];
    for g in &grads {
        let c = linalg::sub(g, &shift);
        linalg::axpy(K::Scalar::one(), &c, &mut shifted_sum);
        for i in 0..d {
            if c[i] == K::Scalar::zero() {
                continue;
            }
            for j in 0..d {
                cov[(i, j)] += c[i] * c[j];
            }
        }
    }
    let mf = K::Scalar::from_usize_lossy(m);
    let cbar = linalg::scale(K::Scalar::one() / mf, &shifted_sum);
    for i in 0..d {
        for j in 0..d {
            cov[(i, j)] -= mf * cbar[i] * cbar[j];
        }
    }
    let cov = cov.scaled(K::Scalar::one() / K::Scalar::from_usize_lossy(m - 1));
    Ok(GradientMoments {
        mean,
        covariance: cov,
        samples: m,
    })
}

/// Finite-difference step for a parameter vector: √ε·(1 + ‖w‖).
pub fn fd_step<T: Scalar>(w: &[T]) -> T {
    T::epsilon().sqrt() * (T::one() + linalg::norm(w))
}

/// Hessian-vector product by central differences of a gradient oracle
/// along the unit direction of `v`, rescaled by ‖v‖.
pub fn fd_hvp<T: Scalar>(grad: impl Fn(&[T]) -> Vec<T>, w: &[T], v: &[T]) -> Vec<T> {
    let v_norm = linalg::norm(v);
    if v_norm == T::zero() {
        return vec![T::zero(); w.len()];
    }
    let h = fd_step(w);
    let step = h / v_norm;
    let plus: Vec<T> = w.iter().zip(v).map(|(&wi, &vi)| wi + step * vi).collect();
    let minus: Vec<T> = w.iter().zip(v).map(|(&wi, &vi)| wi - step * vi).collect();
    let gp = grad(&plus);
    let gm = grad(&minus);
    let k = v_norm / (T::lit(2.0) * h);
    gp.iter().zip(&gm).map(|(&a, &b)| (a - b) * k).collect()
}

/// Central-difference gradient of a scalar function; used by tests as an
/// independent check of the analytic per-sample gradients.
pub fn fd_gradient<T: Scalar>(f: impl Fn(&[T]) -> T, w: &[T]) -> Vec<T> {
    let h = T::epsilon().cbrt() * (T::one() + linalg::norm(w));
    let mut probe = w.to_vec();
    (0..w.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let fp = f(&probe);
            probe[i] = orig - h;
            let fm = f(&probe);
            probe[i] = orig;
            (fp - fm) / (T::lit(2.0) * h)
        })
        .collect()
}

#[cfg(test)]
pub(crate) mod checks {
    //! Shared invariant checks run against every task.

    use super::*;
    use crate::rng::{normal_vec, seeded};

    pub fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / (a.abs().max(b.abs()).max(1e-12))
    }

    pub fn vec_rel_err(a: &[f64], b: &[f64]) -> f64 {
        let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        diff / linalg::norm(a).max(linalg::norm(b)).max(1e-12)
    }

    pub fn gradient_matches_fd<K: DifferentiableTask<Scalar = f64>>(task: &K, w: &[f64], seed: u64) {
        let mut rng = seeded(seed);
        for _ in 0..5 {
            let s = task.sample_draw(&mut rng);
            let g = task.per_sample_gradient(w, &s);
            let fd = fd_gradient(|p| task.loss(p, &s), w);
            let err = vec_rel_err(&g, &fd);
            assert!(err <= 1e-4, "gradient vs finite differences: rel err {err}");
        }
    }

    pub fn hvp_linear_and_symmetric<K: DifferentiableTask<Scalar = f64>>(
        task: &K,
        w: &[f64],
        tol: f64,
        seed: u64,
    ) {
        let mut rng = seeded(seed);
        let batch = task.draw_batch(&mut rng, 8);
        let d = task.dim();
        let u: Vec<f64> = normal_vec(&mut rng, d);
        let v: Vec<f64> = normal_vec(&mut rng, d);
        let (a, b) = (1.7, -0.6);
        let combo: Vec<f64> = u.iter().zip(&v).map(|(x, y)| a * x + b * y).collect();
        let lhs = task.hvp(w, &batch, &combo);
        let hu = task.hvp(w, &batch, &u);
        let hv = task.hvp(w, &batch, &v);
        let rhs: Vec<f64> = hu.iter().zip(&hv).map(|(x, y)| a * x + b * y).collect();
        let lin = vec_rel_err(&lhs, &rhs);
        assert!(lin <= tol, "hvp linearity rel err {lin}");
        let sym = rel_err(linalg::dot(&u, &hv), linalg::dot(&v, &hu));
        assert!(sym <= tol, "hvp symmetry rel err {sym}");
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn fd_hvp_on_zero_direction_is_zero() {
        let out = fd_hvp(|w: &[f64]| w.to_vec(), &[1.0, 2.0], &[0.0, 0.0]);
        assert_eq!(out, vec![0.0, 0.0]);
    }

    #[test]
    fn empirical_moments_rejects_single_sample() {
        let task = QuadraticTask::isotropic(3, 1.0, 1.0).unwrap();
        let err = empirical_moments(&task, &[0.0; 3], 1, &mut seeded(0)).unwrap_err();
        assert_eq!(err, Error::TooFewSamples { needed: 2, got: 1 });
    }

    #[test]
    fn empirical_moments_rejects_wrong_dimension() {
        let task = QuadraticTask::isotropic(3, 1.0, 1.0).unwrap();
        assert!(matches!(
            empirical_moments(&task, &[0.0; 2], 10, &mut seeded(0)),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
