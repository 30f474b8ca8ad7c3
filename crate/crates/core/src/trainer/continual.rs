use std::io::Write;

use num_traits::{Float, One, Zero};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{mixed_gradient_scaled, optimizer_update, OptimizerConfig, OptimizerState, ResetPolicy};
use crate::clipping::{clip_factor, ClippingRule};
use crate::error::{check_dim, Error, Result};
use crate::hessian::{stats_snapshot, HessianStats, DEFAULT_PROBES};
use crate::linalg;
use crate::model::DifferentiableTask;
use crate::predictor::{alpha_schedule_value, optimal_batch_dp, AlphaSchedule, ImprovementInputs};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Public,
    Private,
    Mixed,
}

impl Phase {
    fn of_alpha<T: Scalar>(alpha: T) -> Self {
        if alpha == T::one() {
            Phase::Public
        } else if alpha == T::zero() {
            Phase::Private
        } else {
            Phase::Mixed
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Public => "public",
            Phase::Private => "private",
            Phase::Mixed => "mixed",
        }
    }
}

/// Early-stopping monitor over a loss sequence.
///
/// Each increase `L_t > L_{t−1}` adds one strike; a new best loss clears
/// them. Fires once the strike count reaches `patience`.
#[derive(Debug, Clone)]
pub struct SwitchMonitor<T> {
    patience: usize,
    strikes: usize,
    best: Option<T>,
    last: Option<T>,
}

impl<T: Scalar> SwitchMonitor<T> {
    pub fn new(patience: usize) -> Result<Self> {
        if patience == 0 {
            return Err(Error::invalid("patience", "must be at least 1"));
        }
        Ok(Self {
            patience,
            strikes: 0,
            best: None,
            last: None,
        })
    }

    /// Feeds one loss; returns true when the switch should happen now.
    pub fn observe(&mut self, loss: T) -> bool {
        if let Some(prev) = self.last {
            if loss > prev {
                self.strikes += 1;
            }
        }
        if self.best.is_none_or(|b| loss < b) {
            self.best = Some(loss);
            self.strikes = 0;
        }
        self.last = Some(loss);
        self.strikes >= self.patience
    }

    pub fn best(&self) -> Option<T> {
        self.best
    }
}

/// When the public phase ends.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SwitchTrigger<T> {
    /// [`SwitchMonitor`] on the validation loss, checked every `eval_every`
    /// steps.
    EarlyStop { patience: usize },
    /// Public for `t < s·T`.
    Indicator { s: T },
    /// Switch once the predicted optimal DP batch size, computed from
    /// Hessian statistics of a public batch, is at most `threshold`.
    BStarThreshold { threshold: T },
    /// Compare each step's public training loss with the previous one and
    /// switch on the first increase.
    StepLoss,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwitchPolicy<T> {
    pub trigger: SwitchTrigger<T>,
    #[serde(default)]
    pub reset: ResetPolicy,
    #[serde(default)]
    pub reinit_head: bool,
}

impl<T: Scalar> SwitchPolicy<T> {
    pub fn validate(&self) -> Result<()> {
        match self.trigger {
            SwitchTrigger::EarlyStop { patience } if patience == 0 => {
                Err(Error::invalid("patience", "must be at least 1"))
            }
            SwitchTrigger::Indicator { s } if !(s >= T::zero() && s <= T::one()) => {
                Err(Error::invalid("s", "must lie in [0, 1]"))
            }
            SwitchTrigger::BStarThreshold { threshold } if !(threshold > T::zero()) => {
                Err(Error::invalid("threshold", "must be positive"))
            }
            _ => Ok(()),
        }
    }
}

/// Settings shared by the public/private training loops.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[serde(bound(deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct ContinualConfig<T> {
    pub optimizer: OptimizerConfig<T>,
    pub steps: usize,
    pub public_batch: usize,
    pub private_batch: usize,
    pub rule: ClippingRule<T>,
    pub sigma: T,
    /// Validation cadence in steps (one "epoch").
    pub eval_every: usize,
    /// Size of the held-out public validation set.
    #[serde(default = "default_val_size")]
    pub val_size: usize,
    /// Record Hessian statistics at every evaluation point.
    #[serde(default)]
    pub track_hessian: bool,
    #[serde(default = "default_probes")]
    pub hessian_probes: usize,
}

fn default_val_size() -> usize {
    1024
}

fn default_probes() -> usize {
    DEFAULT_PROBES
}

impl<T: Scalar> ContinualConfig<T> {
    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        self.rule.validate()?;
        if self.steps == 0 {
            return Err(Error::invalid("steps", "must be positive"));
        }
        if self.public_batch == 0 || self.private_batch == 0 {
            return Err(Error::EmptyBatch);
        }
        if self.eval_every == 0 {
            return Err(Error::invalid("eval_every", "must be positive"));
        }
        if self.val_size == 0 {
            return Err(Error::invalid("val_size", "must be positive"));
        }
        if !(self.sigma >= T::zero()) || !self.sigma.is_finite() {
            return Err(Error::invalid("sigma", "must be nonnegative and finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord<T> {
    pub iter: usize,
    pub phase: Phase,
    pub alpha: T,
    /// Loss of the batch used for this step, before the update.
    pub train_loss: T,
    pub val_loss: Option<T>,
    /// Noise multiplier applied on this step (0 when no private data was used).
    pub sigma: T,
    pub hessian: Option<HessianStats<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainRun<T> {
    pub records: Vec<TrainRecord<T>>,
    /// First private step, if the run switched.
    pub switch_iter: Option<usize>,
    /// Optimizer state right after the reset policy was applied.
    pub state_at_switch: Option<OptimizerState<T>>,
    pub final_w: Vec<T>,
    pub aborted: Option<String>,
}

impl<T: Scalar> TrainRun<T> {
    /// Checks the phase ordering: public steps only before `switch_iter`,
    /// private steps only from it on, and no mixed steps.
    pub fn audit(&self) -> Result<()> {
        for r in &self.records {
            let expect = match self.switch_iter {
                Some(s) if r.iter >= s => Phase::Private,
                _ => Phase::Public,
            };
            if r.phase != expect {
                return Err(Error::invalid(
                    "records",
                    format!("step {} is {} but expected {}", r.iter, r.phase.as_str(), expect.as_str()),
                ));
            }
        }
        Ok(())
    }

    pub fn final_val_loss(&self) -> Option<T> {
        self.records.iter().rev().find_map(|r| r.val_loss)
    }

    /// `iter,phase,alpha,train_loss,val_loss,sigma`, followed by the
    /// Hessian columns when `with_hessian` is set. Missing values are empty.
    pub fn write_csv<W: Write>(&self, out: W, with_hessian: bool) -> Result<(), csv::Error> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        let mut header = vec!["iter", "phase", "alpha", "train_loss", "val_loss", "sigma"];
        if with_hessian {
            header.extend(["tr_H", "tr_H_Sigma", "gHg", "g_norm_sq"]);
        }
        w.write_record(&header)?;
        let opt = |v: Option<T>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.records {
            let mut row = vec![
                r.iter.to_string(),
                r.phase.as_str().to_string(),
                r.alpha.to_string(),
                r.train_loss.to_string(),
                opt(r.val_loss),
                r.sigma.to_string(),
            ];
            if with_hessian {
                let h = r.hessian;
                row.push(opt(h.map(|s| s.tr_h)));
                row.push(opt(h.map(|s| s.tr_h_sigma)));
                row.push(opt(h.map(|s| s.g_h_g)));
                row.push(opt(h.map(|s| s.g_norm_sq)));
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

enum Control<'a, T> {
    Switch(&'a SwitchPolicy<T>),
    Schedule(&'a AlphaSchedule<T>),
}

/// Public-then-private training. Validation loss comes from a held-out
/// public set of `config.val_size` samples.
pub fn continual_pretrain<K, R>(
    public: &K,
    private: &K,
    w0: &[K::Scalar],
    config: &ContinualConfig<K::Scalar>,
    policy: &SwitchPolicy<K::Scalar>,
    rng: &mut R,
) -> Result<TrainRun<K::Scalar>>
where
    K: DifferentiableTask,
    R: Rng + ?Sized,
{
    let val = public.draw_batch(rng, config.val_size);
    continual_pretrain_with_validator(public, private, w0, config, policy, |w| public.batch_loss(w, &val), rng)
}

/// [`continual_pretrain`] with a caller-supplied validation loss.
pub fn continual_pretrain_with_validator<K, R, V>(
    public: &K,
    private: &K,
    w0: &[K::Scalar],
    config: &ContinualConfig<K::Scalar>,
    policy: &SwitchPolicy<K::Scalar>,
    validator: V,
    rng: &mut R,
) -> Result<TrainRun<K::Scalar>>
where
    K: DifferentiableTask,
    R: Rng + ?Sized,
    V: FnMut(&[K::Scalar]) -> K::Scalar,
{
    policy.validate()?;
    run(public, private, w0, config, Control::Switch(policy), validator, rng)
}

/// Training with a per-step mixing weight `α_t` from `schedule`.
pub fn mixed_train<K, R>(
    public: &K,
    private: &K,
    w0: &[K::Scalar],
    config: &ContinualConfig<K::Scalar>,
    schedule: &AlphaSchedule<K::Scalar>,
    rng: &mut R,
) -> Result<TrainRun<K::Scalar>>
where
    K: DifferentiableTask,
    R: Rng + ?Sized,
{
    schedule.validate()?;
    let val = public.draw_batch(rng, config.val_size);
    run(
        public,
        private,
        w0,
        config,
        Control::Schedule(schedule),
        |w| public.batch_loss(w, &val),
        rng,
    )
}

fn b_star<K, R>(
    task: &K,
    w: &[K::Scalar],
    batch: &[K::Sample],
    config: &ContinualConfig<K::Scalar>,
    rng: &mut R,
) -> Result<(K::Scalar, HessianStats<K::Scalar>)>
where
    K: DifferentiableTask,
    R: Rng + ?Sized,
{
    let stats = stats_snapshot(task, w, batch, config.hessian_probes, rng)?;
    let grads = task.per_sample_gradients(w, batch);
    let mut c_sum = K::Scalar::zero();
    for g in &grads {
        c_sum += clip_factor(linalg::norm(g), &config.rule)?;
    }
    let c_hat = c_sum / K::Scalar::from_usize_lossy(grads.len());
    let inputs = ImprovementInputs {
        g_norm_sq: stats.g_norm_sq,
        g_h_g: stats.g_h_g,
        tr_h: stats.tr_h,
        tr_h_sigma: stats.tr_h_sigma,
        sigma: config.sigma,
        c: c_hat,
        batch: K::Scalar::from_usize_lossy(config.private_batch),
    };
    Ok((optimal_batch_dp(&inputs)?, stats))
}

/// Applies the reset policy and optional head re-draw; returns the state
/// the private phase starts from.
fn switch_state<K, R>(
    policy: &SwitchPolicy<K::Scalar>,
    task: &K,
    w: &mut [K::Scalar],
    state: &mut OptimizerState<K::Scalar>,
    rng: &mut R,
) -> OptimizerState<K::Scalar>
where
    K: DifferentiableTask,
    R: Rng + ?Sized,
{
    state.apply_reset(policy.reset);
    if policy.reinit_head {
        task.reinit_head(w, rng);
    }
    state.clone()
}

fn run<K, R, V>(
    public: &K,
    private: &K,
    w0: &[K::Scalar],
    config: &ContinualConfig<K::Scalar>,
    control: Control<'_, K::Scalar>,
    mut validator: V,
    rng: &mut R,
) -> Result<TrainRun<K::Scalar>>
where
    K: DifferentiableTask,
    R: Rng + ?Sized,
    V: FnMut(&[K::Scalar]) -> K::Scalar,
{
    config.validate()?;
    check_dim(public.dim(), w0.len())?;
    check_dim(private.dim(), w0.len())?;
    let zero = K::Scalar::zero();
    let one = K::Scalar::one();
    let total = K::Scalar::from_usize_lossy(config.steps);

    let mut w = w0.to_vec();
    let mut state = OptimizerState::new(w.len());
    let mut records = Vec::with_capacity(config.steps);
    let mut switch_iter = None;
    let mut state_at_switch = None;
    let mut aborted = None;
    let mut monitor = match control {
        Control::Switch(SwitchPolicy {
            trigger: SwitchTrigger::EarlyStop { patience },
            ..
        }) => Some(SwitchMonitor::new(*patience)?),
        Control::Switch(SwitchPolicy {
            trigger: SwitchTrigger::StepLoss,
            ..
        }) => Some(SwitchMonitor::new(1)?),
        _ => None,
    };
    let private_scale = config.rule.lr_scale();

    for t in 0..config.steps {
        // Decide the phase of step t.
        let mut switch_now = false;
        let alpha = match control {
            Control::Schedule(s) => alpha_schedule_value(s, t as u64)?,
            Control::Switch(policy) => {
                if switch_iter.is_some() {
                    zero
                } else {
                    if let SwitchTrigger::Indicator { s } = policy.trigger {
                        switch_now = K::Scalar::from_usize_lossy(t) >= s * total;
                    }
                    if switch_now {
                        zero
                    } else {
                        one
                    }
                }
            }
        };

        if switch_now {
            if let Control::Switch(policy) = control {
                switch_iter = Some(t);
                state_at_switch = Some(switch_state(policy, public, &mut w, &mut state, rng));
            }
            switch_now = false;
        }

        let public_batch = if alpha > zero {
            public.draw_batch(rng, config.public_batch)
        } else {
            Vec::new()
        };
        let private_batch = if alpha < one {
            private.draw_batch(rng, config.private_batch)
        } else {
            Vec::new()
        };

        let train_loss = match (alpha > zero, alpha < one) {
            (true, false) => public.batch_loss(&w, &public_batch),
            (false, true) => private.batch_loss(&w, &private_batch),
            _ => alpha * public.batch_loss(&w, &public_batch) + (one - alpha) * private.batch_loss(&w, &private_batch),
        };
        if !train_loss.is_finite() {
            aborted = Some(format!("non-finite training loss at step {t}"));
            break;
        }

        // StepLoss trigger: the forward-pass loss on this step's
        // public batch versus the previous step's.
        if let (Control::Switch(p), Some(m)) = (&control, monitor.as_mut()) {
            if p.trigger == SwitchTrigger::StepLoss && switch_iter.is_none() && m.observe(train_loss) {
                switch_now = true;
            }
        }

        let g = {
            let pub_grads = public.per_sample_gradients(&w, &public_batch);
            let priv_grads = private.per_sample_gradients(&w, &private_batch);
            mixed_gradient_scaled(&pub_grads, &priv_grads, alpha, &config.rule, config.sigma, private_scale, rng)?
        };
        let step_sigma = if alpha < one { config.sigma } else { zero };
        match optimizer_update(&config.optimizer, &mut state, &mut w, &g) {
            Ok(()) => {}
            Err(Error::NonFinite(what)) => {
                aborted = Some(format!("non-finite {what} at step {t}"));
                break;
            }
            Err(e) => return Err(e),
        }

        let mut record = TrainRecord {
            iter: t,
            phase: Phase::of_alpha(alpha),
            alpha,
            train_loss,
            val_loss: None,
            sigma: step_sigma,
            hessian: None,
        };

        let eval_point = (t + 1) % config.eval_every == 0 || t + 1 == config.steps;
        if eval_point {
            let v = validator(&w);
            record.val_loss = Some(v);
            if !v.is_finite() {
                records.push(record);
                aborted = Some(format!("non-finite validation loss at step {t}"));
                break;
            }
            let public_phase = matches!(control, Control::Switch(_)) && switch_iter.is_none() && !switch_now;
            let wants_bstar = matches!(
                control,
                Control::Switch(SwitchPolicy {
                    trigger: SwitchTrigger::BStarThreshold { .. },
                    ..
                })
            ) && public_phase;
            if config.track_hessian || wants_bstar {
                let probe_batch = public.draw_batch(rng, config.public_batch.max(2));
                if wants_bstar {
                    let (b, stats) = b_star(public, &w, &probe_batch, config, rng)?;
                    record.hessian = Some(stats);
                    if let Control::Switch(SwitchPolicy {
                        trigger: SwitchTrigger::BStarThreshold { threshold },
                        ..
                    }) = control
                    {
                        switch_now |= b <= *threshold;
                    }
                } else {
                    record.hessian = Some(stats_snapshot(public, &w, &probe_batch, config.hessian_probes, rng)?);
                }
            }
            if public_phase {
                if let (
                    Control::Switch(SwitchPolicy {
                        trigger: SwitchTrigger::EarlyStop { .. },
                        ..
                    }),
                    Some(m),
                ) = (&control, monitor.as_mut())
                {
                    switch_now |= m.observe(v);
                }
            }
        }
        records.push(record);

        if switch_now && switch_iter.is_none() {
            if let Control::Switch(policy) = control {
                switch_iter = Some(t + 1);
                state_at_switch = Some(switch_state(policy, public, &mut w, &mut state, rng));
            }
        }
    }

    Ok(TrainRun {
        records,
        switch_iter,
        state_at_switch,
        final_w: w,
        aborted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{QuadraticTask, TinyMlpTask};
    use crate::rng::seeded;
    use crate::trainer::OptimizerKind;

    #[test]
    fn monitor_examples() {
        let mut m = SwitchMonitor::new(1).unwrap();
        let fired: Vec<bool> = [3.0, 2.0, 1.5, 1.6].iter().map(|&l| m.observe(l)).collect();
        assert_eq!(fired, vec![false, false, false, true]);

        let mut m = SwitchMonitor::new(2).unwrap();
        let fired: Vec<bool> = [3.0, 2.0, 2.1, 2.05, 2.2].iter().map(|&l| m.observe(l)).collect();
        assert_eq!(fired, vec![false, false, false, false, true]);

        let mut m = SwitchMonitor::new(2).unwrap();
        let fired: Vec<bool> = [3.0, 3.1, 2.0, 2.1].iter().map(|&l| m.observe(l)).collect();
        assert_eq!(fired, vec![false, false, false, false]);
        assert_eq!(m.best(), Some(2.0));
        assert!(SwitchMonitor::<f64>::new(0).is_err());
    }

    fn quad() -> QuadraticTask<f64> {
        QuadraticTask::isotropic(4, 1.0, 0.5).unwrap()
    }

    fn config(steps: usize) -> ContinualConfig<f64> {
        ContinualConfig {
            optimizer: OptimizerConfig::sgd(0.1),
            steps,
            public_batch: 16,
            private_batch: 32,
            rule: ClippingRule::Auto,
            sigma: 1.0,
            eval_every: 5,
            val_size: 64,
            track_hessian: false,
            hessian_probes: 10,
        }
    }

    fn policy(trigger: SwitchTrigger<f64>) -> SwitchPolicy<f64> {
        SwitchPolicy {
            trigger,
            reset: ResetPolicy::ResetM,
            reinit_head: false,
        }
    }

    #[test]
    fn indicator_switches_at_fraction() {
        let t = quad();
        let run = continual_pretrain(&t, &t, &[3.0; 4], &config(40), &policy(SwitchTrigger::Indicator { s: 0.25 }), &mut seeded(0)).unwrap();
        assert_eq!(run.switch_iter, Some(10));
        run.audit().unwrap();
        assert!(run.records[..10].iter().all(|r| r.sigma == 0.0 && r.alpha == 1.0));
        assert!(run.records[10..].iter().all(|r| r.sigma == 1.0 && r.alpha == 0.0));
        assert_eq!(run.records.len(), 40);

        let never = continual_pretrain(&t, &t, &[3.0; 4], &config(20), &policy(SwitchTrigger::Indicator { s: 1.0 }), &mut seeded(0)).unwrap();
        assert_eq!(never.switch_iter, None);
        let always = continual_pretrain(&t, &t, &[3.0; 4], &config(20), &policy(SwitchTrigger::Indicator { s: 0.0 }), &mut seeded(0)).unwrap();
        assert_eq!(always.switch_iter, Some(0));
        always.audit().unwrap();
    }

    #[test]
    fn runs_are_deterministic() {
        let t = quad();
        let p = policy(SwitchTrigger::EarlyStop { patience: 2 });
        let a = continual_pretrain(&t, &t, &[3.0; 4], &config(60), &p, &mut seeded(5)).unwrap();
        let b = continual_pretrain(&t, &t, &[3.0; 4], &config(60), &p, &mut seeded(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn early_stop_fires_on_scripted_validation() {
        let t = quad();
        let script = [5.0, 4.0, 4.5, 4.6, 3.0, 3.0];
        let mut i = 0;
        let validator = |_: &[f64]| {
            let v = script[i.min(script.len() - 1)];
            i += 1;
            v
        };
        let p = policy(SwitchTrigger::EarlyStop { patience: 2 });
        let run = continual_pretrain_with_validator(&t, &t, &[1.0; 4], &config(30), &p, validator, &mut seeded(0)).unwrap();
        // evaluations after steps 4, 9, 14, 19: the 4th (4.6) is the second strike
        assert_eq!(run.switch_iter, Some(20));
        run.audit().unwrap();
        assert_eq!(run.records[19].val_loss, Some(4.6));
    }

    #[test]
    fn step_loss_trigger_switches_on_first_rise() {
        let t = quad();
        let run = continual_pretrain(&t, &t, &[0.0; 4], &config(50), &policy(SwitchTrigger::StepLoss), &mut seeded(2)).unwrap();
        let s = run.switch_iter.expect("noisy losses rise at some step");
        assert!(run.records[s - 1].train_loss > run.records[s - 2].train_loss);
        for k in 1..s - 1 {
            assert!(run.records[k].train_loss <= run.records[k - 1].train_loss);
        }
        run.audit().unwrap();
    }

    #[test]
    fn bstar_trigger_uses_threshold() {
        let t = quad();
        let cfg = config(20);
        let run = continual_pretrain(&t, &t, &[5.0; 4], &cfg, &policy(SwitchTrigger::BStarThreshold { threshold: 1e9 }), &mut seeded(3)).unwrap();
        assert_eq!(run.switch_iter, Some(cfg.eval_every));
        assert!(run.records[cfg.eval_every - 1].hessian.is_some());
        let run = continual_pretrain(&t, &t, &[5.0; 4], &cfg, &policy(SwitchTrigger::BStarThreshold { threshold: 1e-9 }), &mut seeded(3)).unwrap();
        assert_eq!(run.switch_iter, None);
    }

    #[test]
    fn reset_snapshot_and_head_reinit() {
        let mut rng = seeded(4);
        let task = TinyMlpTask::new(3, 4, 4, 0.1, &mut rng).unwrap();
        let w0 = task.init_params(&mut rng);
        let mut cfg = ContinualConfig {
            optimizer: OptimizerConfig {
                kind: OptimizerKind::Adam,
                eta: 1e-2,
                ..OptimizerConfig::default()
            },
            ..config(10)
        };
        cfg.rule = ClippingRule::Auto;
        let p = SwitchPolicy {
            trigger: SwitchTrigger::Indicator { s: 0.5 },
            reset: ResetPolicy::ResetM,
            reinit_head: true,
        };
        let run = continual_pretrain(&task, &task, &w0, &cfg, &p, &mut rng).unwrap();
        let st = run.state_at_switch.expect("switched");
        assert!(st.m.iter().all(|&x| x == 0.0));
        assert!(st.v.iter().any(|&x| x > 0.0));
        assert_eq!(st.t, 5);
    }

    #[test]
    fn divergence_is_reported() {
        let t = quad();
        let cfg = ContinualConfig {
            optimizer: OptimizerConfig::sgd(1e3),
            rule: ClippingRule::Unclipped,
            sigma: 0.0,
            ..config(200)
        };
        let run = continual_pretrain(&t, &t, &[1.0; 4], &cfg, &policy(SwitchTrigger::Indicator { s: 1.0 }), &mut seeded(0)).unwrap();
        assert!(run.aborted.is_some());
        assert!(run.records.len() < 200);
    }

    #[test]
    fn mixed_schedule_records_alpha() {
        let t = quad();
        let run = mixed_train(&t, &t, &[2.0; 4], &config(20), &AlphaSchedule::Dpmd { k: 20.0 }, &mut seeded(1)).unwrap();
        assert_eq!(run.records[0].phase, Phase::Private);
        assert!(run.records[1..].iter().all(|r| r.phase == Phase::Mixed));
        assert!(run.records.windows(2).all(|w| w[1].alpha >= w[0].alpha));
        assert!(run.audit().is_err());
    }

    #[test]
    fn csv_layout() {
        let t = quad();
        let mut cfg = config(10);
        cfg.track_hessian = true;
        let run = continual_pretrain(&t, &t, &[1.0; 4], &cfg, &policy(SwitchTrigger::Indicator { s: 0.5 }), &mut seeded(0)).unwrap();
        let mut buf = Vec::new();
        run.write_csv(&mut buf, true).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "iter,phase,alpha,train_loss,val_loss,sigma,tr_H,tr_H_Sigma,gHg,g_norm_sq");
        let first: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(first[..3], ["0", "public", "1"]);
        assert_eq!(first[4], "");
        assert_eq!(text.lines().count(), 11);
        assert!(!text.contains('\r'));
    }

    #[test]
    fn rejects_bad_config() {
        let t = quad();
        let p = policy(SwitchTrigger::Indicator { s: 0.5 });
        let mut cfg = config(10);
        cfg.eval_every = 0;
        assert!(continual_pretrain(&t, &t, &[1.0; 4], &cfg, &p, &mut seeded(0)).is_err());
        assert!(continual_pretrain(&t, &t, &[1.0; 3], &config(10), &p, &mut seeded(0)).is_err());
        let bad = policy(SwitchTrigger::Indicator { s: 1.5 });
        assert!(continual_pretrain(&t, &t, &[1.0; 4], &config(10), &bad, &mut seeded(0)).is_err());
    }
}
