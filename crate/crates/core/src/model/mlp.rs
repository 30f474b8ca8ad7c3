use rand::Rng;

use super::{fd_hvp, DifferentiableTask, LabeledPoint};
use crate::error::{Error, Result};
use crate::linalg;
use crate::rng::{normal_vec, standard_normal};
use crate::Scalar;

pub const MAX_HIDDEN: usize = 64;

/// One-hidden-layer tanh network regressing a fixed random teacher network.
///
/// Parameters are laid out as `[W1 (hidden × input), b1, w2, b2]`; the
/// per-sample loss is `½(f(x) − y)²` with `y = teacher(x) + noise`.
#[derive(Debug, Clone)]
pub struct TinyMlpTask<T> {
    input: usize,
    hidden: usize,
    teacher_hidden: usize,
    teacher: Vec<T>,
    noise_std: T,
}

fn forward<T: Scalar>(params: &[T], input: usize, hidden: usize, x: &[T]) -> (Vec<T>, T) {
    let (w1, rest) = params.split_at(hidden * input);
    let (b1, rest) = rest.split_at(hidden);
    let (w2, b2) = rest.split_at(hidden);
    let h: Vec<T> = (0..hidden)
        .map(|j| (linalg::dot(&w1[j * input..(j + 1) * input], x) + b1[j]).tanh())
        .collect();
    let out = linalg::dot(w2, &h) + b2[0];
    (h, out)
}

fn param_count(input: usize, hidden: usize) -> usize {
    hidden * input + 2 * hidden + 1
}

impl<T: Scalar> TinyMlpTask<T> {
    pub fn new<R: Rng + ?Sized>(
        input: usize,
        hidden: usize,
        teacher_hidden: usize,
        noise_std: T,
        rng: &mut R,
    ) -> Result<Self> {
        if input == 0 {
            return Err(Error::invalid("input", "must be positive"));
        }
        for (name, h) in [("hidden", hidden), ("teacher_hidden", teacher_hidden)] {
            if h == 0 || h > MAX_HIDDEN {
                return Err(Error::invalid(name, format!("must lie in 1..={MAX_HIDDEN}")));
            }
        }
        if noise_std < T::zero() {
            return Err(Error::invalid("noise_std", "must be nonnegative"));
        }
        let mut teacher = Self::random_params(input, teacher_hidden, rng);
        // A larger first layer puts the teacher in the nonlinear regime of tanh.
        for w in &mut teacher[..teacher_hidden * input] {
            *w *= T::lit(2.0);
        }
        Ok(Self {
            input,
            hidden,
            teacher_hidden,
            teacher,
            noise_std,
        })
    }

    fn random_params<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Vec<T> {
        let mut p = vec![T::zero(); param_count(input, hidden)];
        let s1 = T::one() / T::from_usize_lossy(input).sqrt();
        for w in &mut p[..hidden * input] {
            *w = s1 * standard_normal(rng);
        }
        let s2 = T::one() / T::from_usize_lossy(hidden).sqrt();
        let off = hidden * input + hidden;
        for w in &mut p[off..off + hidden] {
            *w = s2 * standard_normal(rng);
        }
        p
    }

    /// Multiplies the teacher's first layer by `gain`. Larger gains saturate
    /// the teacher's hidden units.
    pub fn with_teacher_gain(mut self, gain: T) -> Result<Self> {
        if !(gain > T::zero()) || !gain.is_finite() {
            return Err(Error::invalid("teacher_gain", "must be positive and finite"));
        }
        for w in &mut self.teacher[..self.teacher_hidden * self.input] {
            *w *= gain;
        }
        Ok(self)
    }

    /// Standard random initialization of the student.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<T> {
        Self::random_params(self.input, self.hidden, rng)
    }

    /// A related task: same teacher hidden layer, freshly drawn teacher
    /// output layer. Models pre-trained on `self` transfer their features.
    pub fn downstream_task<R: Rng + ?Sized>(&self, rng: &mut R) -> Self {
        let mut teacher = self.teacher.clone();
        let start = self.teacher_hidden * self.input + self.teacher_hidden;
        let s2 = T::one() / T::from_usize_lossy(self.teacher_hidden).sqrt();
        for w in &mut teacher[start..start + self.teacher_hidden] {
            *w = s2 * standard_normal(rng);
        }
        Self {
            teacher,
            ..self.clone()
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn predict(&self, w: &[T], x: &[T]) -> T {
        forward(w, self.input, self.hidden, x).1
    }

    pub fn teacher_output(&self, x: &[T]) -> T {
        forward(&self.teacher, self.input, self.teacher_hidden, x).1
    }

    /// Expected loss floor from the label noise, ½·noise².
    pub fn noise_floor(&self) -> T {
        T::lit(0.5) * self.noise_std * self.noise_std
    }

    /// Index range of the output layer `[w2, b2]`.
    pub fn head_range(&self) -> std::ops::Range<usize> {
        let start = self.hidden * self.input + self.hidden;
        start..param_count(self.input, self.hidden)
    }
}

impl<T: Scalar> DifferentiableTask for TinyMlpTask<T> {
    type Scalar = T;
    type Sample = LabeledPoint<T>;

    fn dim(&self) -> usize {
        param_count(self.input, self.hidden)
    }

    fn loss(&self, w: &[T], s: &LabeledPoint<T>) -> T {
        let r = self.predict(w, &s.x) - s.y;
        T::lit(0.5) * r * r
    }

    fn per_sample_gradient(&self, w: &[T], s: &LabeledPoint<T>) -> Vec<T> {
        let (input, hidden) = (self.input, self.hidden);
        let (h, out) = forward(w, input, hidden, &s.x);
        let r = out - s.y;
        let w2 = &w[hidden * input + hidden..hidden * input + 2 * hidden];
        let mut g = vec![T::zero(); self.dim()];
        for j in 0..hidden {
            let delta = r * w2[j] * (T::one() - h[j] * h[j]);
            for k in 0..input {
                g[j * input + k] = delta * s.x[k];
            }
            g[hidden * input + j] = delta;
            g[hidden * input + hidden + j] = r * h[j];
        }
        g[hidden * input + 2 * hidden] = r;
        g
    }

    fn hvp(&self, w: &[T], batch: &[LabeledPoint<T>], v: &[T]) -> Vec<T> {
        fd_hvp(|p| self.batch_gradient(p, batch), w, v)
    }

    fn sample_draw<R: Rng + ?Sized>(&self, rng: &mut R) -> LabeledPoint<T> {
        let x: Vec<T> = normal_vec(rng, self.input);
        let y = self.teacher_output(&x) + self.noise_std * standard_normal::<T, _>(rng);
        LabeledPoint { x, y }
    }

    fn reinit_head<R: Rng + ?Sized>(&self, w: &mut [T], rng: &mut R) {
        let range = self.head_range();
        let s2 = T::one() / T::from_usize_lossy(self.hidden).sqrt();
        let last = range.end - 1;
        for i in range {
            w[i] = if i == last { T::zero() } else { s2 * standard_normal(rng) };
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::checks;
    use crate::rng::seeded;

    fn task() -> (TinyMlpTask<f64>, Vec<f64>) {
        let mut rng = seeded(31);
        let t = TinyMlpTask::new(4, 8, 6, 0.1, &mut rng).unwrap();
        let w = t.init_params(&mut rng);
        (t, w)
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (t, w) = task();
        checks::gradient_matches_fd(&t, &w, 3);
    }

    #[test]
    fn fd_hvp_agrees_with_directional_second_difference() {
        let (t, w) = task();
        let mut rng = seeded(7);
        let batch = t.draw_batch(&mut rng, 16);
        for _ in 0..5 {
            let v: Vec<f64> = normal_vec(&mut rng, t.dim());
            let vhv = linalg::dot(&v, &t.hvp(&w, &batch, &v));
            // second difference of the batch loss along v, step chosen for
            // a different error balance than the hvp itself
            let h = 1e-4;
            let f = |s: f64| {
                let p: Vec<f64> = w.iter().zip(&v).map(|(a, b)| a + s * b).collect();
                t.batch_loss(&p, &batch)
            };
            let second = (f(h) - 2.0 * f(0.0) + f(-h)) / (h * h);
            let err = checks::rel_err(vhv, second);
            assert!(err <= 1e-3, "vᵀHv {vhv} vs second difference {second}");
        }
    }

    #[test]
    fn fd_hvp_nearly_linear_and_symmetric() {
        let (t, w) = task();
        // finite differences carry O(√ε) rounding error, so the exact-task
        // tolerance of 1e-8 is relaxed here
        checks::hvp_linear_and_symmetric(&t, &w, 1e-5, 4);
    }

    #[test]
    fn reinit_head_only_touches_output_layer() {
        let (t, w) = task();
        let mut w2 = w.clone();
        t.reinit_head(&mut w2, &mut seeded(1));
        let head = t.head_range();
        for i in 0..t.dim() {
            if !head.contains(&i) {
                assert_eq!(w[i], w2[i]);
            }
        }
        assert_ne!(&w[head.clone()], &w2[head]);
    }

    #[test]
    fn downstream_task_keeps_teacher_features() {
        let (t, _) = task();
        let d = t.downstream_task(&mut seeded(2));
        let head = t.teacher_hidden * t.input + t.teacher_hidden;
        assert_eq!(t.teacher[..head], d.teacher[..head]);
        assert_ne!(t.teacher[head..head + t.teacher_hidden], d.teacher[head..head + t.teacher_hidden]);
        assert_eq!(t.teacher.last(), d.teacher.last());
    }

    #[test]
    fn teacher_gain_scales_first_layer_only() {
        let (t, _) = task();
        let g = t.clone().with_teacher_gain(3.0).unwrap();
        let split = t.teacher_hidden * t.input;
        for (a, b) in t.teacher[..split].iter().zip(&g.teacher[..split]) {
            assert_eq!(3.0 * a, *b);
        }
        assert_eq!(t.teacher[split..], g.teacher[split..]);
        assert!(t.clone().with_teacher_gain(0.0).is_err());
    }

    #[test]
    fn width_limit_enforced() {
        let mut rng = seeded(0);
        assert!(TinyMlpTask::<f64>::new(2, 65, 4, 0.1, &mut rng).is_err());
        assert!(TinyMlpTask::<f64>::new(2, 64, 4, 0.1, &mut rng).is_ok());
    }
}
