use rand::Rng;

use super::{delta_l_priv_star, delta_l_pub_star, positive_denominator, ImprovementInputs};
use crate::error::{check_dim, Error, Result};
use crate::hessian::{hutchinson_trace, trace_h_sigma, ProbeKind};
use crate::linalg;
use crate::Scalar;

const SCALE_INVARIANCE_TOL: f64 = 1e-8;

/// An optimizer's gradient post-processor `p` with its Jacobian `p'`.
pub trait PostProcessor<T: Scalar> {
    fn apply(&self, g: &[T]) -> Vec<T>;
    /// `p'(g)·v`.
    fn jvp(&self, g: &[T], v: &[T]) -> Vec<T>;
    /// `p'(g)ᵀ·v`.
    fn vjp(&self, g: &[T], v: &[T]) -> Vec<T>;
}

/// `p(g) = g/‖g‖`, with Jacobian `(I − ĝĝᵀ)/‖g‖`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Normalize;

impl<T: Scalar> PostProcessor<T> for Normalize {
    fn apply(&self, g: &[T]) -> Vec<T> {
        let n = linalg::norm(g);
        linalg::scale(T::one() / n, g)
    }

    fn jvp(&self, g: &[T], v: &[T]) -> Vec<T> {
        let n = linalg::norm(g);
        let u = linalg::scale(T::one() / n, g);
        let proj = linalg::dot(&u, v);
        v.iter().zip(&u).map(|(&vi, &ui)| (vi - proj * ui) / n).collect()
    }

    fn vjp(&self, g: &[T], v: &[T]) -> Vec<T> {
        // the projector is symmetric
        self.jvp(g, v)
    }
}

/// Per-sample improvement of a scale-invariant optimizer at its optimal
/// learning rate:
///
/// ```text
/// ½|p(G)ᵀG|² / (B·p(G)ᵀHp(G) + tr(p'ᵀHp'Σ) + σ²tr(p'ᵀHp')/(Bc²))
/// ```
///
/// `tr(p'ᵀHp'Σ)` is estimated from `samples` (per-sample gradients) and
/// `tr(p'ᵀHp')` by `probes` Hutchinson probes; the |G|², GᵀHG, tr(H) and
/// tr(HΣ) fields of `inputs` are not used.
#[allow(clippy::too_many_arguments)]
pub fn general_optimizer_improvement<T, P, F, R>(
    p: &P,
    g: &[T],
    inputs: &ImprovementInputs<T>,
    hvp: F,
    samples: &[Vec<T>],
    probes: usize,
    rng: &mut R,
) -> Result<T>
where
    T: Scalar,
    P: PostProcessor<T>,
    F: Fn(&[T]) -> Vec<T>,
    R: Rng + ?Sized,
{
    inputs.validate()?;
    let pg = p.apply(g);
    check_dim(g.len(), pg.len())?;
    let doubled = linalg::scale(T::lit(2.0), g);
    let deviation = linalg::norm(&linalg::sub(&p.apply(&doubled), &pg));
    if !(deviation.as_f64() <= SCALE_INVARIANCE_TOL) {
        return Err(Error::NotScaleInvariant {
            deviation: deviation.as_f64(),
        });
    }
    let composed = |v: &[T]| p.vjp(g, &hvp(&p.jvp(g, v)));
    let tr_php = hutchinson_trace(composed, g.len(), probes, ProbeKind::Gaussian, rng)?.estimate;
    let g_hat = linalg::mean_vec(samples)?;
    let tr_php_sigma = trace_h_sigma(samples, &g_hat, composed)?.estimate;
    let ImprovementInputs { sigma, c, batch, .. } = *inputs;
    let num = linalg::dot(&pg, g);
    let den = batch * linalg::dot(&pg, &hvp(&pg)) + tr_php_sigma + sigma * sigma * tr_php / (batch * c * c);
    let den = positive_denominator(den)?;
    Ok(T::lit(0.5) * num * num / den)
}

/// Statistics of a second measure `L_other` paired with the training loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossMeasureInputs<T> {
    /// `G_otherᵀG`.
    pub g_other_dot_g: T,
    /// `GᵀH_other G`.
    pub g_h_other_g: T,
    pub tr_h_other: T,
    pub tr_h_other_sigma: T,
}

impl<T: Scalar> CrossMeasureInputs<T> {
    /// The measure equal to the training loss itself.
    pub fn same_as(inputs: &ImprovementInputs<T>) -> Self {
        Self {
            g_other_dot_g: inputs.g_norm_sq,
            g_h_other_g: inputs.g_h_g,
            tr_h_other: inputs.tr_h,
            tr_h_other_sigma: inputs.tr_h_sigma,
        }
    }
}

/// Optimal per-sample improvement of `L_other` under DP-SGD on `L`:
/// `½(G_otherᵀG)²/(B·GᵀH_oG + tr(H_oΣ) + σ²tr(H_o)/(Bc²))`.
pub fn cross_measure_improvement<T: Scalar>(
    inputs: &ImprovementInputs<T>,
    other: &CrossMeasureInputs<T>,
) -> Result<T> {
    inputs.validate()?;
    let ImprovementInputs { sigma, c, batch, .. } = *inputs;
    let den = batch * other.g_h_other_g
        + other.tr_h_other_sigma
        + sigma * sigma * other.tr_h_other / (batch * c * c);
    let den = positive_denominator(den)?;
    Ok(T::lit(0.5) * other.g_other_dot_g * other.g_other_dot_g / den)
}

/// Cumulative improvement of a public-then-private schedule against
/// all-public training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CumulativeSchedule<T> {
    pub mixed_sum: T,
    pub public_sum: T,
    /// Improvement lost to the decelerator, `public_sum − mixed_sum`.
    pub gap: T,
    pub switch_step: usize,
}

/// Sums per-step optimal improvements over `sequence`, public for
/// `t < s·T` and private from then on.
pub fn schedule_cumulative<T: Scalar>(sequence: &[ImprovementInputs<T>], s: T) -> Result<CumulativeSchedule<T>> {
    if sequence.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if !(s >= T::zero() && s <= T::one()) {
        return Err(Error::invalid("s", "must lie in [0, 1]"));
    }
    let total = T::from_usize_lossy(sequence.len());
    let mut mixed_sum = T::zero();
    let mut public_sum = T::zero();
    let mut switch_step = sequence.len();
    for (t, inputs) in sequence.iter().enumerate() {
        let public = delta_l_pub_star(inputs)?;
        public_sum += public;
        if T::from_usize_lossy(t) < s * total {
            mixed_sum += public;
        } else {
            switch_step = switch_step.min(t);
            mixed_sum += delta_l_priv_star(inputs)?;
        }
    }
    Ok(CumulativeSchedule {
        mixed_sum,
        public_sum,
        gap: public_sum - mixed_sum,
        switch_step,
    })
}
