use num_traits::{One, Zero};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{optimizer_update, OptimizerConfig, OptimizerState, Phase, TrainRecord, TrainRun};
use crate::clipping::{privatize_gradient, ClippingRule};
use crate::error::{check_dim, Error, Result};
use crate::linalg;
use crate::model::{DifferentiableTask, QuadraticTask};
use crate::rng::substream;
use crate::Scalar;

pub const MIN_ORACLE_TRIALS: usize = 100;

/// Monte-Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleEstimate<T> {
    pub mean: T,
    pub standard_error: T,
    pub trials: usize,
}

/// Average one-step population-loss decrease `L(w) − L(w − η·g̃)` of a
/// privatized step on a quadratic task, over independent trials.
///
/// The decrease is evaluated in the exact form `ηGᵀg̃ − η²/2·g̃ᵀAg̃`. Trials
/// run in parallel on per-trial substreams of a seed drawn from `rng`.
#[allow(clippy::too_many_arguments)]
pub fn empirical_improvement_oracle<T: Scalar, R: Rng + ?Sized>(
    task: &QuadraticTask<T>,
    w: &[T],
    eta: T,
    batch: usize,
    rule: &ClippingRule<T>,
    sigma: T,
    trials: usize,
    rng: &mut R,
) -> Result<OracleEstimate<T>> {
    check_dim(task.dim(), w.len())?;
    if trials < MIN_ORACLE_TRIALS {
        return Err(Error::TooFewSamples {
            needed: MIN_ORACLE_TRIALS,
            got: trials,
        });
    }
    if batch == 0 {
        return Err(Error::EmptyBatch);
    }
    if !(eta >= T::zero()) {
        return Err(Error::invalid("eta", "must be nonnegative"));
    }
    let g_pop = task.population_gradient(w);
    let a = task.hessian();
    let base = rng.next_u64();
    let values: Vec<T> = (0..trials)
        .into_par_iter()
        .map(|i| -> Result<T> {
            let mut r = substream(base, i as u64);
            let samples = task.draw_batch(&mut r, batch);
            let g = privatize_gradient(&task.per_sample_gradients(w, &samples), rule, sigma, &mut r)?;
            let ag = a.matvec(&g);
            Ok(eta * linalg::dot(&g_pop, &g) - eta * eta / T::lit(2.0) * linalg::dot(&g, &ag))
        })
        .collect::<Result<_>>()?;
    let n = T::from_usize_lossy(trials);
    let mean = values.iter().copied().sum::<T>() / n;
    let var = values.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / T::from_usize_lossy(trials - 1);
    Ok(OracleEstimate {
        mean,
        standard_error: (var / n).sqrt(),
        trials,
    })
}

/// Settings for [`four_way_comparison`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[serde(bound(deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct FourWayConfig<T> {
    pub optimizer: OptimizerConfig<T>,
    pub steps: usize,
    pub batch: usize,
    pub rule: ClippingRule<T>,
    pub sigma: T,
    pub eval_every: usize,
    pub eval_size: usize,
}

impl<T: Scalar> FourWayConfig<T> {
    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        self.rule.validate()?;
        if self.steps == 0 || self.eval_every == 0 || self.eval_size == 0 {
            return Err(Error::invalid("steps/eval_every/eval_size", "must be positive"));
        }
        if self.batch == 0 {
            return Err(Error::EmptyBatch);
        }
        if !(self.sigma >= T::zero()) || !self.sigma.is_finite() {
            return Err(Error::invalid("sigma", "must be nonnegative and finite"));
        }
        Ok(())
    }
}

/// Training curves of the four arms.
#[derive(Debug, Clone, PartialEq)]
pub struct FourWay<T> {
    pub sgd: TrainRun<T>,
    pub clipped: TrainRun<T>,
    pub noisy: TrainRun<T>,
    pub dp: TrainRun<T>,
}

impl<T: Scalar> FourWay<T> {
    pub fn arms(&self) -> [(&'static str, &TrainRun<T>); 4] {
        [
            ("sgd", &self.sgd),
            ("sgd_clip", &self.clipped),
            ("sgd_noise", &self.noisy),
            ("dp_sgd", &self.dp),
        ]
    }

    /// Final validation losses in [`arms`](Self::arms) order. Errors if any
    /// arm diverged.
    pub fn final_losses(&self) -> Result<[T; 4]> {
        let mut out = [T::zero(); 4];
        for (slot, (_, run)) in out.iter_mut().zip(self.arms()) {
            if run.aborted.is_some() {
                return Err(Error::NonFinite("four-way arm"));
            }
            *slot = run.final_val_loss().ok_or(Error::NonFinite("four-way arm"))?;
        }
        Ok(out)
    }

    /// `(noise + dp) / (sgd + clip) − 1` on final validation losses.
    pub fn noise_gap(&self) -> Result<T> {
        let [s, c, n, d] = self.final_losses()?;
        Ok((n + d) / (s + c) - T::one())
    }

    /// `|clip − sgd| / sgd` on final validation losses.
    pub fn clip_gap(&self) -> Result<T> {
        let [s, c, _, _] = self.final_losses()?;
        Ok((c - s).abs() / s)
    }
}

/// SGD, SGD with clipping only, SGD with noise only, and DP-SGD from the
/// same start on the same batches.
///
/// All arms share the data stream. The two noisy arms draw noise from
/// their own streams. Clipped arms multiply the learning rate by the rule's
/// `lr_scale`; the noise-only arm uses noise `σ·lr_scale` so its noise has
/// the same scale as DP-SGD's.
pub fn four_way_comparison<K, R>(
    task: &K,
    w0: &[K::Scalar],
    config: &FourWayConfig<K::Scalar>,
    rng: &mut R,
) -> Result<FourWay<K::Scalar>>
where
    K: DifferentiableTask,
    R: Rng + ?Sized,
{
    config.validate()?;
    check_dim(task.dim(), w0.len())?;
    let data_seed = rng.next_u64();
    let noise_seed = rng.next_u64();
    let eval = task.draw_batch(rng, config.eval_size);
    let scale = config.rule.lr_scale();
    let zero = K::Scalar::zero();
    let arms = [
        (ClippingRule::Unclipped, zero, K::Scalar::one()),
        (config.rule, zero, scale),
        (ClippingRule::Unclipped, config.sigma * scale, K::Scalar::one()),
        (config.rule, config.sigma, scale),
    ];
    let mut runs: Vec<TrainRun<K::Scalar>> = arms
        .par_iter()
        .enumerate()
        .map(|(i, (rule, sigma, lr_mult))| {
            let mut opt = config.optimizer;
            opt.eta *= *lr_mult;
            train_arm(task, w0, config, &opt, rule, *sigma, &eval, data_seed, substream(noise_seed, i as u64))
        })
        .collect::<Result<_>>()?;
    let dp = runs.pop().expect("four arms");
    let noisy = runs.pop().expect("four arms");
    let clipped = runs.pop().expect("four arms");
    let sgd = runs.pop().expect("four arms");
    Ok(FourWay { sgd, clipped, noisy, dp })
}

#[allow(clippy::too_many_arguments)]
fn train_arm<K: DifferentiableTask>(
    task: &K,
    w0: &[K::Scalar],
    config: &FourWayConfig<K::Scalar>,
    opt: &OptimizerConfig<K::Scalar>,
    rule: &ClippingRule<K::Scalar>,
    sigma: K::Scalar,
    eval: &[K::Sample],
    data_seed: u64,
    mut noise: crate::rng::DetRng,
) -> Result<TrainRun<K::Scalar>> {
    let mut data = substream(data_seed, 0);
    let mut w = w0.to_vec();
    let mut state = OptimizerState::new(w.len());
    let mut records = Vec::with_capacity(config.steps);
    let mut aborted = None;
    let phase = if sigma > K::Scalar::zero() {
        Phase::Private
    } else {
        Phase::Public
    };
    for t in 0..config.steps {
        let batch = task.draw_batch(&mut data, config.batch);
        let train_loss = task.batch_loss(&w, &batch);
        let g = privatize_gradient(&task.per_sample_gradients(&w, &batch), rule, sigma, &mut noise)?;
        if let Err(e) = optimizer_update(opt, &mut state, &mut w, &g) {
            aborted = Some(format!("{e} at step {t}"));
            break;
        }
        let val_loss = if (t + 1) % config.eval_every == 0 || t + 1 == config.steps {
            Some(task.batch_loss(&w, eval))
        } else {
            None
        };
        records.push(TrainRecord {
            iter: t,
            phase,
            alpha: K::Scalar::zero(),
            train_loss,
            val_loss,
            sigma,
            hessian: None,
        });
    }
    Ok(TrainRun {
        records,
        switch_iter: None,
        state_at_switch: None,
        final_w: w,
        aborted,
    })
}
