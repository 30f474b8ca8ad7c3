//! Loss-improvement analysis for differentially private optimization.
//!
//! The crate predicts the per-iteration loss decrease of DP-SGD from
//! Hessian statistics, calibrates Gaussian noise to a privacy budget,
//! runs DP and mixed public/private training on small synthetic tasks, and
//! audits the result with a membership-inference harness. Numerics are
//! generic over [`Scalar`] (`f32` or `f64`); the aliases below fix `f64`.

pub mod attacks;
pub mod clipping;
pub mod error;
pub mod hessian;
pub mod linalg;
pub mod model;
pub mod predictor;
pub mod privacy;
pub mod rng;
pub mod scalar;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type ClippingRuleF64 = clipping::ClippingRule<f64>;
pub type HessianStatsF64 = hessian::HessianStats<f64>;
pub type ImprovementInputsF64 = predictor::ImprovementInputs<f64>;
pub type MixInputsF64 = predictor::MixInputs<f64>;
pub type AlphaScheduleF64 = predictor::AlphaSchedule<f64>;
pub type PrivacyBudgetF64 = privacy::PrivacyBudget<f64>;
pub type QuadraticTaskF64 = model::QuadraticTask<f64>;
pub type LogisticTaskF64 = model::LogisticTask<f64>;
pub type TinyMlpTaskF64 = model::TinyMlpTask<f64>;
pub type OptimizerConfigF64 = trainer::OptimizerConfig<f64>;
pub type ContinualConfigF64 = trainer::ContinualConfig<f64>;
pub type SwitchPolicyF64 = trainer::SwitchPolicy<f64>;
pub type TrainRunF64 = trainer::TrainRun<f64>;
pub type FourWayConfigF64 = trainer::FourWayConfig<f64>;
pub type PretrainContrastConfigF64 = trainer::PretrainContrastConfig<f64>;

pub type QuadraticTaskF32 = model::QuadraticTask<f32>;
pub type ImprovementInputsF32 = predictor::ImprovementInputs<f32>;
