//! Optimizers, (DP-)SGD/Adam steps, mixed public/private gradients, the
//! continual pre-training loop, and Monte-Carlo validation of the
//! improvement predictor.

mod continual;
mod contrast;
mod oracle;

pub use continual::{
    continual_pretrain, continual_pretrain_with_validator, mixed_train, ContinualConfig, Phase,
    SwitchMonitor, SwitchPolicy, SwitchTrigger, TrainRecord, TrainRun,
};
pub use contrast::{pretrain_contrast, PretrainContrast, PretrainContrastConfig};
pub use oracle::{empirical_improvement_oracle, four_way_comparison, FourWay, FourWayConfig, OracleEstimate};

use num_traits::Zero;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::clipping::{privatize_gradient, ClippingRule};
use crate::error::{check_dim, Error, Result};
use crate::linalg;
use crate::model::DifferentiableTask;
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Sgd,
    SgdMomentum,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[serde(bound(deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct OptimizerConfig<T> {
    pub kind: OptimizerKind,
    pub eta: T,
    /// Momentum coefficient μ for `sgd_momentum`.
    pub momentum: T,
    /// Weight decay λ; decoupled (AdamW-style) for `adam`.
    pub weight_decay: T,
    pub beta1: T,
    pub beta2: T,
    pub epsilon: T,
}

impl<T: Scalar> Default for OptimizerConfig<T> {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            eta: T::lit(0.1),
            momentum: T::lit(0.9),
            weight_decay: T::zero(),
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            epsilon: T::lit(1e-8),
        }
    }
}

impl<T: Scalar> OptimizerConfig<T> {
    pub fn sgd(eta: T) -> Self {
        Self {
            eta,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta > T::zero()) || !self.eta.is_finite() {
            return Err(Error::invalid("eta", "must be positive and finite"));
        }
        let unit = T::zero()..T::one();
        for (name, v) in [("momentum", self.momentum), ("beta1", self.beta1), ("beta2", self.beta2)] {
            if !unit.contains(&v) {
                return Err(Error::invalid(name, "must lie in [0, 1)"));
            }
        }
        if self.weight_decay < T::zero() {
            return Err(Error::invalid("weight_decay", "must be nonnegative"));
        }
        if !(self.epsilon > T::zero()) {
            return Err(Error::invalid("epsilon", "must be positive"));
        }
        Ok(())
    }
}

/// Optimizer state: step counter, Adam moments, and the momentum buffer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState<T> {
    pub t: u64,
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub b: Vec<T>,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(d: usize) -> Self {
        Self {
            t: 0,
            m: vec![T::zero(); d],
            v: vec![T::zero(); d],
            b: vec![T::zero(); d],
        }
    }

    pub fn apply_reset(&mut self, policy: ResetPolicy) {
        let zero = |x: &mut Vec<T>| x.iter_mut().for_each(|e| *e = T::zero());
        match policy {
            ResetPolicy::None => {}
            ResetPolicy::ResetM => {
                zero(&mut self.m);
                zero(&mut self.b);
            }
            ResetPolicy::ResetV => zero(&mut self.v),
            ResetPolicy::ResetT => self.t = 0,
        }
    }
}

/// Which optimizer state to zero when switching to private training.
/// `ResetM` also clears the SGD momentum buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResetPolicy {
    None,
    #[default]
    ResetM,
    ResetV,
    ResetT,
}

/// Applies one optimizer update to `w` from the (already privatized)
/// gradient `g` and advances `state`.
pub fn optimizer_update<T: Scalar>(
    config: &OptimizerConfig<T>,
    state: &mut OptimizerState<T>,
    w: &mut [T],
    g: &[T],
) -> Result<()> {
    check_dim(w.len(), g.len())?;
    check_dim(w.len(), state.m.len())?;
    state.t += 1;
    let OptimizerConfig {
        eta,
        momentum,
        weight_decay: lambda,
        beta1,
        beta2,
        epsilon,
        ..
    } = *config;
    match config.kind {
        OptimizerKind::Sgd => {
            for (wi, &gi) in w.iter_mut().zip(g) {
                *wi -= eta * (gi + lambda * *wi);
            }
        }
        OptimizerKind::SgdMomentum => {
            for ((wi, &gi), bi) in w.iter_mut().zip(g).zip(state.b.iter_mut()) {
                let p = momentum * *bi + gi + lambda * *wi;
                *bi = p;
                *wi -= eta * p;
            }
        }
        OptimizerKind::Adam => {
            let t = state.t as i32;
            let bc1 = T::one() - beta1.powi(t);
            let bc2 = T::one() - beta2.powi(t);
            for i in 0..w.len() {
                let gi = g[i];
                state.m[i] = beta1 * state.m[i] + (T::one() - beta1) * gi;
                state.v[i] = beta2 * state.v[i] + (T::one() - beta2) * gi * gi;
                let m_hat = state.m[i] / bc1;
                let v_hat = state.v[i] / bc2;
                w[i] -= eta * (m_hat / (v_hat.sqrt() + epsilon) + lambda * w[i]);
            }
        }
    }
    if !linalg::all_finite(w) {
        return Err(Error::NonFinite("parameters after update"));
    }
    Ok(())
}

/// `w − η·privatize_gradient(...)`. With σ = 0 and [`ClippingRule::Unclipped`]
/// this is a plain SGD step.
pub fn dp_sgd_step<K, R>(
    task: &K,
    w: &[K::Scalar],
    batch: &[K::Sample],
    rule: &ClippingRule<K::Scalar>,
    sigma: K::Scalar,
    eta: K::Scalar,
    rng: &mut R,
) -> Result<Vec<K::Scalar>>
where
    K: DifferentiableTask,
    R: Rng + ?Sized,
{
    check_dim(task.dim(), w.len())?;
    if eta < K::Scalar::zero() {
        return Err(Error::invalid("eta", "must be nonnegative"));
    }
    let g = privatize_gradient(&task.per_sample_gradients(w, batch), rule, sigma, rng)?;
    let mut next = w.to_vec();
    linalg::axpy(-eta, &g, &mut next);
    Ok(next)
}

/// One privatized step through any configured optimizer, in place.
#[allow(clippy::too_many_arguments)]
pub fn dp_optimizer_step<K, R>(
    task: &K,
    w: &mut [K::Scalar],
    batch: &[K::Sample],
    rule: &ClippingRule<K::Scalar>,
    sigma: K::Scalar,
    config: &OptimizerConfig<K::Scalar>,
    state: &mut OptimizerState<K::Scalar>,
    rng: &mut R,
) -> Result<()>
where
    K: DifferentiableTask,
    R: Rng + ?Sized,
{
    check_dim(task.dim(), w.len())?;
    let g = privatize_gradient(&task.per_sample_gradients(w, batch), rule, sigma, rng)?;
    optimizer_update(config, state, w, &g)
}

/// DP-Adam: the Adam recursion with bias correction applied to the
/// privatized gradient. `config.kind` is ignored.
#[allow(clippy::too_many_arguments)]
pub fn dp_adam_step<K, R>(
    task: &K,
    w: &[K::Scalar],
    batch: &[K::Sample],
    rule: &ClippingRule<K::Scalar>,
    sigma: K::Scalar,
    config: &OptimizerConfig<K::Scalar>,
    state: &OptimizerState<K::Scalar>,
    rng: &mut R,
) -> Result<(Vec<K::Scalar>, OptimizerState<K::Scalar>)>
where
    K: DifferentiableTask,
    R: Rng + ?Sized,
{
    let adam = OptimizerConfig {
        kind: OptimizerKind::Adam,
        ..*config
    };
    let mut next = w.to_vec();
    let mut st = state.clone();
    dp_optimizer_step(task, &mut next, batch, rule, sigma, &adam, &mut st, rng)?;
    Ok((next, st))
}

/// `α/B₀·Σ g_j + (1 − α)·privatize(private)`.
///
/// Sides with zero weight are skipped entirely (no noise is drawn when
/// `α = 1`).
pub fn mixed_gradient<T: Scalar, R: Rng + ?Sized>(
    public_grads: &[Vec<T>],
    private_grads: &[Vec<T>],
    alpha: T,
    rule: &ClippingRule<T>,
    sigma: T,
    rng: &mut R,
) -> Result<Vec<T>> {
    mixed_gradient_scaled(public_grads, private_grads, alpha, rule, sigma, T::one(), rng)
}

/// [`mixed_gradient`] with the privatized term multiplied by
/// `private_scale` (the clipping rule's `lr_scale` inside training loops).
pub(crate) fn mixed_gradient_scaled<T: Scalar, R: Rng + ?Sized>(
    public_grads: &[Vec<T>],
    private_grads: &[Vec<T>],
    alpha: T,
    rule: &ClippingRule<T>,
    sigma: T,
    private_scale: T,
    rng: &mut R,
) -> Result<Vec<T>> {
    if !(alpha >= T::zero() && alpha <= T::one()) {
        return Err(Error::invalid("alpha", "must lie in [0, 1]"));
    }
    let public = if alpha > T::zero() {
        Some(linalg::mean_vec(public_grads)?)
    } else {
        None
    };
    let private = if alpha < T::one() {
        Some(linalg::scale(private_scale, &privatize_gradient(private_grads, rule, sigma, rng)?))
    } else {
        None
    };
    match (public, private) {
        (Some(p), None) => Ok(p),
        (None, Some(q)) => Ok(q),
        (Some(p), Some(q)) => {
            check_dim(p.len(), q.len())?;
            Ok(p.iter().zip(&q).map(|(&a, &b)| alpha * a + (T::one() - alpha) * b).collect())
        }
        (None, None) => unreachable!("alpha is either positive or below one"),
    }
}
