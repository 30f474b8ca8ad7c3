use rand::Rng;

use super::{DifferentiableTask, LabeledPoint};
use crate::error::{check_dim, Error, Result};
use crate::linalg;
use crate::rng::normal_vec;
use crate::Scalar;

/// Binary logistic regression over a finite labelled dataset.
///
/// Samples are drawn uniformly with replacement from the stored points.
/// An intercept, if wanted, is a constant feature.
#[derive(Debug, Clone)]
pub struct LogisticTask<T> {
    points: Vec<LabeledPoint<T>>,
    dim: usize,
    l2: T,
}

pub(crate) fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// log(1 + e^z) without overflow.
pub(crate) fn softplus<T: Scalar>(z: T) -> T {
    if z > T::zero() {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

impl<T: Scalar> LogisticTask<T> {
    pub fn new(points: Vec<LabeledPoint<T>>, l2: T) -> Result<Self> {
        let dim = points.first().ok_or(Error::EmptyBatch)?.x.len();
        for p in &points {
            check_dim(dim, p.x.len())?;
            if p.y != T::zero() && p.y != T::one() {
                return Err(Error::invalid("labels", "must be 0 or 1"));
            }
        }
        if l2 < T::zero() {
            return Err(Error::invalid("l2", "must be nonnegative"));
        }
        Ok(Self { points, dim, l2 })
    }

    pub fn points(&self) -> &[LabeledPoint<T>] {
        &self.points
    }

    pub fn logit(&self, w: &[T], x: &[T]) -> T {
        linalg::dot(w, x)
    }

    /// P(y = 1 | x), always in (0, 1) for finite logits.
    pub fn predict_proba(&self, w: &[T], x: &[T]) -> T {
        sigmoid(self.logit(w, x))
    }

    /// Unregularized cross-entropy of a single point.
    pub fn point_loss(&self, w: &[T], x: &[T], y: T) -> T {
        let z = self.logit(w, x);
        softplus(z) - y * z
    }

    /// Mean loss over the whole stored dataset.
    pub fn dataset_loss(&self, w: &[T]) -> T {
        self.batch_loss(w, &self.points)
    }
}

impl<T: Scalar> DifferentiableTask for LogisticTask<T> {
    type Scalar = T;
    type Sample = LabeledPoint<T>;

    fn dim(&self) -> usize {
        self.dim
    }

    fn loss(&self, w: &[T], s: &LabeledPoint<T>) -> T {
        self.point_loss(w, &s.x, s.y) + T::lit(0.5) * self.l2 * linalg::norm_sq(w)
    }

    fn per_sample_gradient(&self, w: &[T], s: &LabeledPoint<T>) -> Vec<T> {
        let r = sigmoid(self.logit(w, &s.x)) - s.y;
        s.x.iter().zip(w).map(|(&xi, &wi)| r * xi + self.l2 * wi).collect()
    }

    fn hvp(&self, w: &[T], batch: &[LabeledPoint<T>], v: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.dim];
        for s in batch {
            let p = sigmoid(self.logit(w, &s.x));
            let coef = p * (T::one() - p) * linalg::dot(&s.x, v);
            linalg::axpy(coef, &s.x, &mut out);
        }
        let inv = T::one() / T::from_usize_lossy(batch.len().max(1));
        out.iter().zip(v).map(|(&o, &vi)| o * inv + self.l2 * vi).collect()
    }

    fn sample_draw<R: Rng + ?Sized>(&self, rng: &mut R) -> LabeledPoint<T> {
        self.points[rng.random_range(0..self.points.len())].clone()
    }
}

/// Gaussian-feature generator with a planted logistic model.
///
/// Features are `d − 1` standard normals plus a trailing constant 1.
/// Labels follow `Bernoulli(sigmoid(w_true · x))`, then flip with
/// probability `flip`, which makes the task impossible to fit exactly and
/// gives an over-parameterized model something to memorize.
#[derive(Debug, Clone)]
pub struct LogisticGenerator<T> {
    w_true: Vec<T>,
    flip: T,
}

impl<T: Scalar> LogisticGenerator<T> {
    pub fn new<R: Rng + ?Sized>(d: usize, signal: T, flip: T, rng: &mut R) -> Result<Self> {
        if d < 2 {
            return Err(Error::invalid("d", "need at least one feature plus intercept"));
        }
        if !(T::zero()..T::lit(0.5)).contains(&flip) {
            return Err(Error::invalid("flip", "must lie in [0, 0.5)"));
        }
        let scale = signal / T::from_usize_lossy(d - 1).sqrt();
        let mut w_true: Vec<T> = normal_vec(rng, d);
        for w in &mut w_true {
            *w *= scale;
        }
        Ok(Self { w_true, flip })
    }

    pub fn dim(&self) -> usize {
        self.w_true.len()
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> LabeledPoint<T> {
        let d = self.w_true.len();
        let mut x: Vec<T> = normal_vec(rng, d - 1);
        x.push(T::one());
        let p = sigmoid(linalg::dot(&self.w_true, &x));
        let mut y = if T::lit(rng.random::<f64>()) < p { T::one() } else { T::zero() };
        if T::lit(rng.random::<f64>()) < self.flip {
            y = T::one() - y;
        }
        LabeledPoint { x, y }
    }

    pub fn draw_many<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<LabeledPoint<T>> {
        (0..n).map(|_| self.draw(rng)).collect()
    }
}
