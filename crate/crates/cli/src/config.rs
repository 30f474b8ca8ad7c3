//! JSON experiment configuration.
//!
//! Every section has defaults, so a file only needs `schema` plus the
//! sections it changes. Unknown keys are rejected at every level.

use std::path::{Path, PathBuf};

use dplens::attacks::MembershipExperiment;
use dplens::clipping::ClippingRule;
use dplens::linalg::Matrix;
use dplens::model::{LogisticGenerator, LogisticTask, QuadraticTask, TinyMlpTask};
use dplens::predictor::{AlphaSchedule, ImprovementInputs};
use dplens::trainer::{OptimizerConfig, PretrainContrastConfig, SwitchPolicy, SwitchTrigger};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: u32,
    #[serde(default)]
    pub task: TaskSpec,
    #[serde(default)]
    pub optimizer: OptimizerConfig<f64>,
    #[serde(default)]
    pub budget: BudgetSpec,
    #[serde(default = "default_rule")]
    pub rule: ClippingRule<f64>,
    #[serde(default)]
    pub schedule: ScheduleSpec,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub calibrate: CalibrateSpec,
    #[serde(default)]
    pub predict: PredictSpec,
    #[serde(default)]
    pub breakdown: BreakdownSpec,
    #[serde(default)]
    pub oracle: OracleSpec,
    #[serde(default)]
    pub train: TrainSpec,
    #[serde(default)]
    pub fourway: PretrainContrastConfig<f64>,
    #[serde(default)]
    pub mia: MembershipExperiment,
}

fn default_rule() -> ClippingRule<f64> {
    ClippingRule::Auto
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema: SCHEMA_VERSION,
            task: TaskSpec::default(),
            optimizer: OptimizerConfig::default(),
            budget: BudgetSpec::default(),
            rule: default_rule(),
            schedule: ScheduleSpec::default(),
            seeds: default_seeds(),
            out: None,
            calibrate: CalibrateSpec::default(),
            predict: PredictSpec::default(),
            breakdown: BreakdownSpec::default(),
            oracle: OracleSpec::default(),
            train: TrainSpec::default(),
            fourway: PretrainContrastConfig::default(),
            mia: MembershipExperiment::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Canonical pretty JSON with every default written out.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.schema != SCHEMA_VERSION {
            return Err(CliError::Config(format!(
                "unsupported schema {} (expected {SCHEMA_VERSION})",
                self.schema
            )));
        }
        if self.seeds.is_empty() {
            return Err(CliError::Config("`seeds` must not be empty".into()));
        }
        Ok(())
    }
}

/// Synthetic task family and its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskSpec {
    /// Diagonal Hessian with eigenvalues log-spaced in
    /// `[eig_min, eig_max]`, data covariance `data_var·I`, data mean 0.
    /// Training starts from `init_offset·1`.
    Quadratic {
        dim: usize,
        eig_min: f64,
        eig_max: f64,
        data_var: f64,
        init_offset: f64,
    },
    /// Logistic regression on `n` points from a planted linear model.
    Logistic {
        dim: usize,
        n: usize,
        signal: f64,
        flip: f64,
        l2: f64,
    },
    TinyMlp {
        input: usize,
        hidden: usize,
        teacher_hidden: usize,
        noise_std: f64,
        teacher_gain: f64,
    },
}

impl Default for TaskSpec {
    fn default() -> Self {
        TaskSpec::Quadratic {
            dim: 20,
            eig_min: 0.1,
            eig_max: 10.0,
            data_var: 1.0,
            init_offset: 1.0,
        }
    }
}

pub fn build_quadratic(dim: usize, eig_min: f64, eig_max: f64, data_var: f64) -> Result<QuadraticTask<f64>, CliError> {
    if dim == 0 || !(eig_min > 0.0) || !(eig_max >= eig_min) || !(data_var >= 0.0) {
        return Err(CliError::Config(
            "quadratic task needs dim > 0, 0 < eig_min <= eig_max, data_var >= 0".into(),
        ));
    }
    let eig: Vec<f64> = (0..dim)
        .map(|i| {
            let t = if dim == 1 { 0.0 } else { i as f64 / (dim - 1) as f64 };
            eig_min * (eig_max / eig_min).powf(t)
        })
        .collect();
    let s = Matrix::diag(&vec![data_var; dim]);
    Ok(QuadraticTask::new(Matrix::diag(&eig), vec![0.0; dim], s)?)
}

pub fn build_logistic<R: Rng + ?Sized>(
    dim: usize,
    n: usize,
    signal: f64,
    flip: f64,
    l2: f64,
    rng: &mut R,
) -> Result<(LogisticGenerator<f64>, LogisticTask<f64>), CliError> {
    let generator = LogisticGenerator::new(dim, signal, flip, rng)?;
    let task = LogisticTask::new(generator.draw_many(n, rng), l2)?;
    Ok((generator, task))
}

pub fn build_mlp<R: Rng + ?Sized>(
    input: usize,
    hidden: usize,
    teacher_hidden: usize,
    noise_std: f64,
    teacher_gain: f64,
    rng: &mut R,
) -> Result<TinyMlpTask<f64>, CliError> {
    Ok(TinyMlpTask::new(input, hidden, teacher_hidden, noise_std, rng)?.with_teacher_gain(teacher_gain)?)
}

/// Privacy target and the dataset it is spent on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BudgetSpec {
    pub epsilon: f64,
    pub delta: f64,
    /// Dataset size `n`.
    pub dataset_size: u64,
    /// Processed-sample budget `S`; the step count is `⌈S/B⌉`.
    pub samples: u64,
}

impl Default for BudgetSpec {
    fn default() -> Self {
        Self {
            epsilon: 1.0,
            delta: 1e-6,
            dataset_size: 1_000_000,
            samples: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScheduleSpec {
    Alpha { schedule: AlphaSchedule<f64> },
    Switch { policy: SwitchPolicy<f64> },
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        ScheduleSpec::Switch {
            policy: SwitchPolicy {
                trigger: SwitchTrigger::EarlyStop { patience: 2 },
                reset: Default::default(),
                reinit_head: false,
            },
        }
    }
}

/// Log-spaced grid from `min` to `max` inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

impl Grid {
    pub fn values(&self) -> Result<Vec<f64>, CliError> {
        if !(self.min > 0.0) || !(self.max >= self.min) || self.points == 0 {
            return Err(CliError::Config("grid needs 0 < min <= max and points > 0".into()));
        }
        if self.points == 1 {
            return Ok(vec![self.min]);
        }
        let ratio = (self.max / self.min).ln();
        Ok((0..self.points)
            .map(|i| self.min * (ratio * i as f64 / (self.points - 1) as f64).exp())
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrateSpec {
    pub batches: Vec<u64>,
}

impl Default for CalibrateSpec {
    fn default() -> Self {
        Self {
            batches: vec![
                100, 200, 500, 1_000, 2_000, 5_000, 10_000, 20_000, 50_000, 100_000, 200_000, 500_000,
            ],
        }
    }
}

/// Pre-training regime: large `tr(H)`.
pub fn pretrain_inputs() -> ImprovementInputs<f64> {
    ImprovementInputs {
        g_norm_sq: 1.0,
        g_h_g: 1e2,
        tr_h: 2e8,
        tr_h_sigma: 2e4,
        sigma: 0.5,
        c: 1.0,
        batch: 1000.0,
    }
}

/// Fine-tuning regime: `tr(H)` two orders of magnitude smaller.
pub fn finetune_inputs() -> ImprovementInputs<f64> {
    ImprovementInputs {
        tr_h: 2e6,
        ..pretrain_inputs()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictSpec {
    pub inputs: ImprovementInputs<f64>,
    /// Public batch size for the mixing ratio.
    pub public_batch: f64,
    /// Batch grid for `sweep-batch`.
    pub grid: Grid,
}

impl Default for PredictSpec {
    fn default() -> Self {
        Self {
            inputs: pretrain_inputs(),
            public_batch: 1000.0,
            grid: Grid {
                min: 1.0,
                max: 1e6,
                points: 61,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BreakdownSpec {
    pub pretrain: ImprovementInputs<f64>,
    pub finetune: ImprovementInputs<f64>,
    pub grid: Grid,
}

impl Default for BreakdownSpec {
    fn default() -> Self {
        Self {
            pretrain: pretrain_inputs(),
            finetune: finetune_inputs(),
            grid: Grid {
                min: 1.0,
                max: 1e6,
                points: 61,
            },
        }
    }
}

/// Grid for the Monte-Carlo check of the predictor on a quadratic task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleSpec {
    /// Learning rates, multiplied by the rule's `lr_scale`.
    pub etas: Vec<f64>,
    pub batches: Vec<usize>,
    pub sigmas: Vec<f64>,
    pub trials: usize,
    /// Sample count for the clip-factor estimate `ĉ`.
    pub c_samples: usize,
}

impl Default for OracleSpec {
    fn default() -> Self {
        Self {
            etas: vec![0.01, 0.03, 0.1],
            batches: vec![8, 32, 128],
            sigmas: vec![0.0, 0.01, 0.03],
            trials: 10_000,
            c_samples: 4096,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSpec {
    pub steps: usize,
    pub batch: usize,
    /// Public batch for `continual`.
    pub public_batch: usize,
    /// Noise multiplier; calibrated from `budget` when absent, with
    /// `S = steps·batch`.
    pub sigma: Option<f64>,
    pub eval_every: usize,
    pub val_size: usize,
    pub track_hessian: bool,
    pub hessian_probes: usize,
}

impl Default for TrainSpec {
    fn default() -> Self {
        Self {
            steps: 500,
            batch: 64,
            public_batch: 64,
            sigma: None,
            eval_every: 25,
            val_size: 1024,
            track_hessian: false,
            hessian_probes: 20,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_canonically() {
        let cfg = ExperimentConfig::default();
        let once = cfg.to_json();
        let back = ExperimentConfig::from_json(&once).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_json(), once);
    }

    #[test]
    fn minimal_file_takes_defaults() {
        let cfg = ExperimentConfig::from_json(r#"{"schema": 1}"#).unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
    }

    #[test]
    fn rejects_unknown_keys_and_schema() {
        assert!(ExperimentConfig::from_json(r#"{"schema": 1, "extra": 0}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"schema": 1, "train": {"stepz": 3}}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"schema": 2}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{}"#).is_err());
    }

    #[test]
    fn grid_endpoints_exact() {
        let g = Grid {
            min: 1.0,
            max: 1e4,
            points: 5,
        };
        let v = g.values().unwrap();
        assert_eq!(v.len(), 5);
        assert_eq!(v[0], 1.0);
        assert!((v[2] - 100.0).abs() < 1e-9);
        assert!((v[4] - 1e4).abs() < 1e-9);
    }

    #[test]
    fn quadratic_spectrum() {
        let t = build_quadratic(3, 0.1, 10.0, 1.0).unwrap();
        let h = t.hessian();
        assert!((h.row(1)[1] - 1.0).abs() < 1e-12);
        assert!(build_quadratic(3, 0.0, 1.0, 1.0).is_err());
    }
}
