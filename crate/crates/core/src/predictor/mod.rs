//! Closed-form per-iteration loss improvement of (DP-)SGD.
//!
//! Under a local quadratic model of the loss, one step `w ← w − ηg` with the
//! privatized gradient improves the expected loss by
//!
//! ```text
//! ΔL_priv(η) = ηc|G|² − η²/2·(c²GᵀHG + c²tr(HΣ)/B + σ²tr(H)/B²)
//! ```
//!
//! Maximizing over η and dividing by the batch size gives the per-sample
//! improvement
//!
//! ```text
//! ΔL*_priv(B) = ½|G|⁴ / (B·GᵀHG + tr(HΣ) + σ²tr(H)/(Bc²))
//! ```
//!
//! whose last denominator term is the decelerator. Setting `σ = 0, c = 1`
//! recovers the non-private formulas.

mod general;
mod mixed;

pub use general::{
    cross_measure_improvement, general_optimizer_improvement, schedule_cumulative,
    CrossMeasureInputs, CumulativeSchedule, Normalize, PostProcessor,
};
pub use mixed::{
    alpha_schedule_value, mix_coefficients, mixed_improvement, optimal_mix_alpha, AlphaSchedule,
    MixCoefficients, MixInputs, MixOptimum,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Scalar;

/// Default factor operationalizing "much smaller than" in
/// [`data_efficiency_condition`].
pub const DEFAULT_EFFICIENCY_THRESHOLD: f64 = 0.1;

/// Scalar statistics that parameterize every closed form in this module.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImprovementInputs<T> {
    pub g_norm_sq: T,
    pub g_h_g: T,
    pub tr_h: T,
    pub tr_h_sigma: T,
    pub sigma: T,
    pub c: T,
    pub batch: T,
}

impl<T: Scalar> ImprovementInputs<T> {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.g_norm_sq,
            self.g_h_g,
            self.tr_h,
            self.tr_h_sigma,
            self.sigma,
            self.c,
            self.batch,
        ];
        if all.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("improvement inputs"));
        }
        if self.g_norm_sq < T::zero() {
            return Err(Error::invalid("g_norm_sq", "must be nonnegative"));
        }
        if !(self.batch > T::zero()) {
            return Err(Error::invalid("B", "must be positive"));
        }
        if !(self.c > T::zero() && self.c <= T::one()) {
            return Err(Error::invalid("c", "must lie in (0, 1]"));
        }
        if self.sigma < T::zero() {
            return Err(Error::invalid("sigma", "must be nonnegative"));
        }
        Ok(())
    }

    pub fn with_batch(&self, batch: T) -> Self {
        Self { batch, ..*self }
    }

    /// The same statistics with `σ = 0, c = 1`.
    pub fn public(&self) -> Self {
        Self {
            sigma: T::zero(),
            c: T::one(),
            ..*self
        }
    }
}

fn check_eta<T: Scalar>(eta: T) -> Result<()> {
    if !(eta > T::zero()) || !eta.is_finite() {
        return Err(Error::invalid("eta", "must be positive and finite"));
    }
    Ok(())
}

fn positive_denominator<T: Scalar>(den: T) -> Result<T> {
    if den > T::zero() {
        Ok(den)
    } else {
        Err(Error::NonPositiveCurvature {
            denominator: den.as_f64(),
        })
    }
}

/// Coefficient of `η²/2` in ΔL_priv.
pub fn curvature_coefficient<T: Scalar>(inputs: &ImprovementInputs<T>) -> T {
    let ImprovementInputs {
        g_h_g,
        tr_h,
        tr_h_sigma,
        sigma,
        c,
        batch,
        ..
    } = *inputs;
    c * c * g_h_g + c * c * tr_h_sigma / batch + sigma * sigma * tr_h / (batch * batch)
}

/// Expected one-step improvement of DP-SGD with learning rate η.
pub fn delta_l_priv<T: Scalar>(eta: T, inputs: &ImprovementInputs<T>) -> Result<T> {
    inputs.validate()?;
    check_eta(eta)?;
    let half = T::lit(0.5);
    Ok(eta * inputs.c * inputs.g_norm_sq - half * eta * eta * curvature_coefficient(inputs))
}

/// Expected one-step improvement of plain SGD; σ and c in `inputs` are ignored.
pub fn delta_l_pub<T: Scalar>(eta: T, inputs: &ImprovementInputs<T>) -> Result<T> {
    delta_l_priv(eta, &inputs.public())
}

/// Per-sample improvement at the optimal learning rate.
pub fn delta_l_priv_star<T: Scalar>(inputs: &ImprovementInputs<T>) -> Result<T> {
    inputs.validate()?;
    let ImprovementInputs {
        g_norm_sq,
        g_h_g,
        tr_h_sigma,
        batch,
        ..
    } = *inputs;
    let den = positive_denominator(batch * g_h_g + tr_h_sigma + decelerator(inputs)?)?;
    Ok(T::lit(0.5) * g_norm_sq * g_norm_sq / den)
}

pub fn delta_l_pub_star<T: Scalar>(inputs: &ImprovementInputs<T>) -> Result<T> {
    delta_l_priv_star(&inputs.public())
}

/// `σ²tr(H)/(Bc²)`: the denominator term present only under DP.
pub fn decelerator<T: Scalar>(inputs: &ImprovementInputs<T>) -> Result<T> {
    inputs.validate()?;
    let ImprovementInputs {
        tr_h, sigma, c, batch, ..
    } = *inputs;
    Ok(sigma * sigma * tr_h / (batch * c * c))
}

/// Learning rate maximizing ΔL_priv, `c|G|²/(c²GᵀHG + c²tr(HΣ)/B + σ²tr(H)/B²)`.
///
/// For analysis only: choosing η from private statistics at run time would
/// itself consume privacy budget.
pub fn optimal_learning_rate<T: Scalar>(inputs: &ImprovementInputs<T>) -> Result<T> {
    inputs.validate()?;
    let k = positive_denominator(curvature_coefficient(inputs))?;
    Ok(inputs.c * inputs.g_norm_sq / k)
}

/// `B* = √(σ²tr(H)/(c²GᵀHG))`, the batch size maximizing [`delta_l_priv_star`].
pub fn optimal_batch_dp<T: Scalar>(inputs: &ImprovementInputs<T>) -> Result<T> {
    inputs.validate()?;
    if inputs.sigma == T::zero() {
        return Err(Error::NoNoiseNoInteriorOptimum);
    }
    if !(inputs.g_h_g > T::zero()) {
        return Err(Error::NonPositiveCurvature {
            denominator: inputs.g_h_g.as_f64(),
        });
    }
    if !(inputs.tr_h > T::zero()) {
        return Err(Error::invalid("tr_h", "must be positive for an interior optimum"));
    }
    let c = inputs.c;
    Ok(inputs.sigma * (inputs.tr_h / (c * c * inputs.g_h_g)).sqrt())
}

/// Both sides of `ΔL*_pub(2B) = ΔL*_priv(B)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwiceBatch<T> {
    pub batch: T,
    pub lhs: T,
    pub rhs: T,
    pub relative_gap: T,
}

/// Compares public training at batch `2B` with private training at `B`.
pub fn twice_batch_at<T: Scalar>(inputs: &ImprovementInputs<T>, batch: T) -> Result<TwiceBatch<T>> {
    let lhs = delta_l_pub_star(&inputs.with_batch(T::lit(2.0) * batch))?;
    let rhs = delta_l_priv_star(&inputs.with_batch(batch))?;
    let scale = lhs.abs().max(rhs.abs());
    let relative_gap = if scale == T::zero() {
        T::zero()
    } else {
        (lhs - rhs).abs() / scale
    };
    Ok(TwiceBatch {
        batch,
        lhs,
        rhs,
        relative_gap,
    })
}

/// At `B = B*` private training matches public training with twice the batch.
pub fn twice_batch_identity<T: Scalar>(inputs: &ImprovementInputs<T>) -> Result<TwiceBatch<T>> {
    let b_star = optimal_batch_dp(inputs)?;
    twice_batch_at(inputs, b_star)
}

/// Whether `B*_DP < threshold · tr(HΣ)/(2GᵀHG)`.
///
/// `b_nondp`, when given, stands in for `2·B*_DP`. Returns false when
/// `tr(HΣ) = 0`.
pub fn data_efficiency_condition<T: Scalar>(
    inputs: &ImprovementInputs<T>,
    b_nondp: Option<T>,
    threshold: T,
) -> Result<bool> {
    inputs.validate()?;
    if !(threshold > T::zero()) {
        return Err(Error::invalid("threshold", "must be positive"));
    }
    if inputs.tr_h_sigma <= T::zero() {
        return Ok(false);
    }
    let b_dp = match b_nondp {
        Some(b) => b * T::lit(0.5),
        None => optimal_batch_dp(inputs)?,
    };
    let bound = threshold * inputs.tr_h_sigma / (T::lit(2.0) * inputs.g_h_g);
    Ok(b_dp < bound)
}


#[cfg(test)]
mod tests {
    use super::testing::*;
    use super::*;
    use proptest::prelude::*;

    fn ones() -> ImprovementInputs<f64> {
        ImprovementInputs {
            g_norm_sq: 1.0,
            g_h_g: 1.0,
            tr_h: 1.0,
            tr_h_sigma: 1.0,
            sigma: 1.0,
            c: 1.0,
            batch: 1.0,
        }
    }

    #[test]
    fn priv_hand_value() {
        assert_eq!(delta_l_priv(1.0, &ones()).unwrap(), -0.5);
    }

    #[test]
    fn priv_small_eta_vanishes() {
        assert!(delta_l_priv(1e-12, &ones()).unwrap().abs() < 1e-11);
        assert!(delta_l_priv(0.0, &ones()).is_err());
        assert!(delta_l_priv(-1.0, &ones()).is_err());
    }

    #[test]
    fn invalid_inputs_rejected() {
        let bad = [
            ImprovementInputs { c: 0.0, ..ones() },
            ImprovementInputs { c: 1.5, ..ones() },
            ImprovementInputs { batch: 0.0, ..ones() },
            ImprovementInputs { sigma: -1.0, ..ones() },
            ImprovementInputs { g_norm_sq: f64::NAN, ..ones() },
        ];
        for b in bad {
            assert!(delta_l_priv_star(&b).is_err(), "{b:?}");
        }
    }

    #[test]
    fn star_is_grid_maximum() {
        let inp = ImprovementInputs {
            g_norm_sq: 2.0,
            g_h_g: 3.0,
            tr_h: 40.0,
            tr_h_sigma: 5.0,
            sigma: 0.8,
            c: 0.6,
            batch: 16.0,
        };
        let eta_star = optimal_learning_rate(&inp).unwrap();
        // log grid around the optimum, resolution 1e-4 in log10
        let mut best = (f64::NEG_INFINITY, 0.0);
        for i in -30_000..=30_000 {
            let eta = eta_star * 10f64.powf(i as f64 * 1e-4);
            let v = delta_l_priv(eta, &inp).unwrap();
            if v > best.0 {
                best = (v, eta);
            }
        }
        assert!((best.1 / eta_star).log10().abs() <= 1e-4);
        let star = delta_l_priv_star(&inp).unwrap();
        assert!((best.0 / inp.batch / star - 1.0).abs() < 1e-7);
    }

    #[test]
    fn zero_gradient_zero_improvement() {
        let inp = ImprovementInputs { g_norm_sq: 0.0, ..ones() };
        assert_eq!(delta_l_priv_star(&inp).unwrap(), 0.0);
    }

    #[test]
    fn nonpositive_denominator_is_error() {
        let inp = ImprovementInputs {
            g_h_g: -10.0,
            ..ones()
        };
        assert!(matches!(
            delta_l_priv_star(&inp),
            Err(Error::NonPositiveCurvature { .. })
        ));
    }

    #[test]
    fn pub_star_small_batch_limit() {
        let inp = ImprovementInputs {
            g_norm_sq: 3.0,
            tr_h_sigma: 2.0,
            batch: 1e-12,
            ..ones()
        };
        let v = delta_l_pub_star(&inp).unwrap();
        assert!((v - 0.5 * 9.0 / 2.0).abs() < 1e-9);
    }

    #[test]
    fn decelerator_examples() {
        let mut inp = pretrain();
        assert_eq!(decelerator(&ImprovementInputs { sigma: 0.0, ..inp }).unwrap(), 0.0);
        assert!((decelerator(&inp).unwrap() - 5e4).abs() < 1e-9);
        inp = finetune();
        assert!((decelerator(&inp).unwrap() - 500.0).abs() < 1e-12);
    }

    #[test]
    fn optimal_batch_examples() {
        let b = optimal_batch_dp(&pretrain()).unwrap();
        assert!((b - 5e5f64.sqrt()).abs() < 1e-9);
        assert!((b - 707.11).abs() < 0.01);
        let b = optimal_batch_dp(&finetune()).unwrap();
        assert!((b - 70.71).abs() < 0.01);
        assert_eq!(
            optimal_batch_dp(&ImprovementInputs { sigma: 0.0, ..pretrain() }),
            Err(Error::NoNoiseNoInteriorOptimum)
        );
        assert!(matches!(
            optimal_batch_dp(&ImprovementInputs { g_h_g: 0.0, ..pretrain() }),
            Err(Error::NonPositiveCurvature { .. })
        ));
    }

    #[test]
    fn optimal_batch_is_log_grid_argmax() {
        for inp in [pretrain(), finetune()] {
            let b_star = optimal_batch_dp(&inp).unwrap();
            let step = 1e-4;
            let mut best = (f64::NEG_INFINITY, 0.0);
            let mut i = 0;
            loop {
                let b = 10f64.powf(i as f64 * step);
                if b > 1e6 {
                    break;
                }
                let v = delta_l_priv_star(&inp.with_batch(b)).unwrap();
                if v > best.0 {
                    best = (v, b);
                }
                i += 1;
            }
            assert!((best.1 / b_star).log10().abs() <= step, "{} vs {b_star}", best.1);
        }
    }

    #[test]
    fn twice_batch_examples() {
        let t = twice_batch_identity(&pretrain()).unwrap();
        assert!(t.relative_gap <= 1e-12, "{t:?}");
        // away from B* the equivalence breaks
        let b_star = optimal_batch_dp(&pretrain()).unwrap();
        let off = twice_batch_at(&pretrain(), 2.0 * b_star).unwrap();
        assert!(off.relative_gap > 1e-3);
    }

    #[test]
    fn data_efficiency_examples() {
        assert!(data_efficiency_condition(&finetune(), None, 1.0).unwrap());
        assert!(!data_efficiency_condition(&pretrain(), None, 1.0).unwrap());
        // default threshold is stricter
        assert!(!data_efficiency_condition(&finetune(), None, DEFAULT_EFFICIENCY_THRESHOLD).unwrap());
        let no_var = ImprovementInputs {
            tr_h_sigma: 0.0,
            ..finetune()
        };
        assert!(!data_efficiency_condition(&no_var, None, 1.0).unwrap());
        assert!(data_efficiency_condition(&finetune(), Some(150.0), 1.0).unwrap());
        assert!(!data_efficiency_condition(&finetune(), Some(250.0), 1.0).unwrap());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(512))]

        #[test]
        fn sigma_zero_reduces_to_public(inp in inputs_strategy(), eta in 1e-4f64..10.0) {
            let p = inp.public();
            prop_assert_eq!(decelerator(&p).unwrap(), 0.0);
            prop_assert_eq!(delta_l_priv_star(&p).unwrap(), delta_l_pub_star(&inp).unwrap());
            prop_assert_eq!(delta_l_priv(eta, &p).unwrap(), delta_l_pub(eta, &inp).unwrap());
        }

        #[test]
        fn twice_batch_identity_holds(inp in inputs_strategy()) {
            let t = twice_batch_identity(&inp).unwrap();
            prop_assert!(t.relative_gap <= 1e-12, "{:?}", t);
        }

        #[test]
        fn star_monotone(inp in inputs_strategy(), f in 1.01f64..3.0) {
            let base = delta_l_priv_star(&inp).unwrap();
            let more_c = ImprovementInputs { c: inp.c / f, ..inp };
            prop_assert!(delta_l_priv_star(&more_c).unwrap() <= base);
            let more_sigma = ImprovementInputs { sigma: inp.sigma * f, ..inp };
            prop_assert!(delta_l_priv_star(&more_sigma).unwrap() <= base);
            prop_assert!(decelerator(&inp.with_batch(inp.batch * f)).unwrap() < decelerator(&inp).unwrap());
            let pub_big = delta_l_pub_star(&inp.with_batch(inp.batch * f)).unwrap();
            prop_assert!(pub_big < delta_l_pub_star(&inp).unwrap());
        }

        #[test]
        fn optimal_eta_is_stationary(inp in inputs_strategy()) {
            let eta = optimal_learning_rate(&inp).unwrap();
            let v = delta_l_priv(eta, &inp).unwrap();
            prop_assert!(v >= delta_l_priv(eta * 1.001, &inp).unwrap());
            prop_assert!(v >= delta_l_priv(eta * 0.999, &inp).unwrap());
            prop_assert!(((v / inp.batch) / delta_l_priv_star(&inp).unwrap() - 1.0).abs() < 1e-12);
        }
    }
}
