use serde::{Deserialize, Serialize};

use super::{dp_optimizer_step, four_way_comparison, FourWay, FourWayConfig, OptimizerConfig, OptimizerState};
use crate::clipping::ClippingRule;
use crate::error::{Error, Result};
use crate::model::{DifferentiableTask, TinyMlpTask};
use crate::rng::{seeded, substream};
use crate::Scalar;

/// Four-way comparison on a downstream [`TinyMlpTask`] from a random init
/// and from a model pre-trained on a related upstream task.
///
/// Upstream and downstream share the teacher's hidden layer and differ in
/// its output layer. Pre-training is noiseless SGD with weight decay; the
/// student's head is re-drawn before fine-tuning. Both inits then run the
/// same [`FourWayConfig`] on the same data stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[serde(bound(deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct PretrainContrastConfig<T> {
    pub input: usize,
    pub hidden: usize,
    pub teacher_hidden: usize,
    pub noise_std: T,
    pub pretrain_steps: usize,
    pub pretrain_batch: usize,
    pub pretrain_optimizer: OptimizerConfig<T>,
    pub fourway: FourWayConfig<T>,
}

impl<T: Scalar> Default for PretrainContrastConfig<T> {
    fn default() -> Self {
        let mut pretrain_optimizer = OptimizerConfig::sgd(T::lit(0.05));
        pretrain_optimizer.weight_decay = T::lit(0.05);
        Self {
            input: 8,
            hidden: 16,
            teacher_hidden: 8,
            noise_std: T::lit(0.1),
            pretrain_steps: 5000,
            pretrain_batch: 32,
            pretrain_optimizer,
            fourway: FourWayConfig {
                optimizer: OptimizerConfig::sgd(T::lit(0.05)),
                steps: 2000,
                batch: 32,
                rule: ClippingRule::ReParam { r: T::lit(5.0) },
                sigma: T::lit(0.5),
                eval_every: 100,
                eval_size: 2048,
            },
        }
    }
}

impl<T: Scalar> PretrainContrastConfig<T> {
    pub fn validate(&self) -> Result<()> {
        self.pretrain_optimizer.validate()?;
        self.fourway.validate()?;
        if self.pretrain_batch == 0 {
            return Err(Error::EmptyBatch);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainContrast<T> {
    pub random: FourWay<T>,
    pub pretrained: FourWay<T>,
}

pub fn pretrain_contrast<T: Scalar>(cfg: &PretrainContrastConfig<T>, seed: u64) -> Result<PretrainContrast<T>> {
    cfg.validate()?;
    let mut rng = seeded(seed);
    let upstream = TinyMlpTask::new(cfg.input, cfg.hidden, cfg.teacher_hidden, cfg.noise_std, &mut rng)?;
    let w_random = upstream.init_params(&mut rng);

    let mut w = w_random.clone();
    let mut state = OptimizerState::new(w.len());
    for _ in 0..cfg.pretrain_steps {
        let batch = upstream.draw_batch(&mut rng, cfg.pretrain_batch);
        dp_optimizer_step(
            &upstream,
            &mut w,
            &batch,
            &ClippingRule::Unclipped,
            T::zero(),
            &cfg.pretrain_optimizer,
            &mut state,
            &mut rng,
        )?;
    }
    let downstream = upstream.downstream_task(&mut rng);
    downstream.reinit_head(&mut w, &mut rng);

    Ok(PretrainContrast {
        random: four_way_comparison(&downstream, &w_random, &cfg.fourway, &mut substream(seed, 1))?,
        pretrained: four_way_comparison(&downstream, &w, &cfg.fourway, &mut substream(seed, 1))?,
    })
}
