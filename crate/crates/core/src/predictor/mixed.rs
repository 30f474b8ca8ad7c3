use serde::{Deserialize, Serialize};

use super::{curvature_coefficient, ImprovementInputs};
use crate::error::{Error, Result};
use crate::Scalar;

/// Inputs of mixed public/private training: per-step gradient
/// `α/B₀·Σ g_j + (1 − α)/B₁·(Σ C_i g_i + σN)` with `η₀ = ηα, η₁ = η(1 − α)`.
///
/// The `batch` field of `base` is ignored in favor of `b0` and `b1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixInputs<T> {
    pub base: ImprovementInputs<T>,
    pub b0: T,
    pub b1: T,
}

impl<T: Scalar> MixInputs<T> {
    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        if !(self.b0 > T::zero()) || !self.b0.is_finite() {
            return Err(Error::invalid("B0", "must be positive"));
        }
        if !(self.b1 > T::zero()) || !self.b1.is_finite() {
            return Err(Error::invalid("B1", "must be positive"));
        }
        Ok(())
    }
}

/// `ΔL_mixed = −(Aη₀² + Bη₁² + Cη₀ + Dη₁ + Eη₀η₁)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixCoefficients<T> {
    pub a: T,
    pub b: T,
    pub c: T,
    pub d: T,
    pub e: T,
}

pub fn mix_coefficients<T: Scalar>(mix: &MixInputs<T>) -> Result<MixCoefficients<T>> {
    mix.validate()?;
    let half = T::lit(0.5);
    let p = &mix.base;
    let public = p.public().with_batch(mix.b0);
    let private = p.with_batch(mix.b1);
    Ok(MixCoefficients {
        a: half * curvature_coefficient(&public),
        b: half * curvature_coefficient(&private),
        c: -p.g_norm_sq,
        d: -p.c * p.g_norm_sq,
        e: p.c * p.g_h_g,
    })
}

/// Expected one-step improvement of mixed training at `(η₀, η₁)`.
pub fn mixed_improvement<T: Scalar>(eta0: T, eta1: T, mix: &MixInputs<T>) -> Result<T> {
    if eta0 < T::zero() || eta1 < T::zero() {
        return Err(Error::invalid("eta", "mixed learning rates must be nonnegative"));
    }
    let k = mix_coefficients(mix)?;
    Ok(-(k.a * eta0 * eta0 + k.b * eta1 * eta1 + k.c * eta0 + k.d * eta1 + k.e * eta0 * eta1))
}

/// Joint optimum over `(η₀, η₁)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixOptimum<T> {
    pub alpha: T,
    pub eta0: T,
    pub eta1: T,
    pub improvement: T,
    /// The public-only optimum `C²/(4A)`.
    pub only_public: T,
    /// The private-only optimum `D²/(4B)`.
    pub only_private: T,
    /// `improvement − only_public`, as `(2AD − CE)²/(4A·(4AB − E²))`.
    pub gain_over_public: T,
    /// `improvement − only_private`, as `(2BC − DE)²/(4B·(4AB − E²))`.
    pub gain_over_private: T,
    /// Set when α fell outside `[0, 1]` and was clamped.
    pub clamped: bool,
}

/// Optimal public weight
/// `α* = ((1/c)·tr(HΣ)·(B₁/B₀)/(tr(HΣ) + σ²tr(H)/(B₁c²)) + 1)⁻¹`,
/// which equals `η₀*/(η₀* + η₁*)` at the stationary point of the mixed
/// quadratic.
pub fn optimal_mix_alpha<T: Scalar>(mix: &MixInputs<T>) -> Result<MixOptimum<T>> {
    let k = mix_coefficients(mix)?;
    let disc = T::lit(4.0) * k.a * k.b - k.e * k.e;
    if !(disc > T::zero()) || !(k.a > T::zero()) {
        return Err(Error::SaddleOrDegenerate {
            discriminant: disc.as_f64(),
        });
    }
    let two = T::lit(2.0);
    let eta0 = -(two * k.b * k.c - k.d * k.e) / disc;
    let eta1 = -(two * k.a * k.d - k.c * k.e) / disc;
    let improvement =
        -(k.a * eta0 * eta0 + k.b * eta1 * eta1 + k.c * eta0 + k.d * eta1 + k.e * eta0 * eta1);

    let p = &mix.base;
    let noise = p.sigma * p.sigma * p.tr_h / (mix.b1 * p.c * p.c);
    let ratio_den = p.tr_h_sigma + noise;
    let raw = if ratio_den == T::zero() {
        // no variance on either side: only the c-scaled private step remains
        T::lit(0.5)
    } else {
        let ratio = p.tr_h_sigma * (mix.b1 / mix.b0) / (p.c * ratio_den);
        T::one() / (ratio + T::one())
    };
    let alpha = raw.max(T::zero()).min(T::one());
    let four = T::lit(4.0);
    Ok(MixOptimum {
        alpha,
        eta0,
        eta1,
        improvement,
        only_public: k.c * k.c / (four * k.a),
        only_private: k.d * k.d / (four * k.b),
        // Schur-complement forms; the plain differences cancel when α* is
        // within rounding of 0 or 1
        gain_over_public: (two * k.a * k.d - k.c * k.e).powi(2) / (four * k.a * disc),
        gain_over_private: (two * k.b * k.c - k.d * k.e).powi(2) / (four * k.b * disc),
        clamped: alpha != raw || !raw.is_finite(),
    })
}

/// Public-data weight α_t as a function of the step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AlphaSchedule<T> {
    /// 1 for `t < s·T`, else 0.
    Indicator { s: T, total: u64 },
    /// `1 − cos(πt/(2K))` rising to 1 at `t = K` and held there.
    Dpmd { k: T },
    /// Public share of the pooled data.
    Sample { n_pub: u64, n_priv: u64 },
    OnlyPublic,
    OnlyPrivate,
}

impl<T: Scalar> AlphaSchedule<T> {
    pub fn validate(&self) -> Result<()> {
        match *self {
            AlphaSchedule::Indicator { s, total } => {
                if !(s > T::zero() && s < T::one()) {
                    return Err(Error::invalid("s", "must lie in (0, 1)"));
                }
                if total == 0 {
                    return Err(Error::invalid("T", "must be positive"));
                }
            }
            AlphaSchedule::Dpmd { k } => {
                if !(k > T::zero()) || !k.is_finite() {
                    return Err(Error::invalid("K", "must be positive"));
                }
            }
            AlphaSchedule::Sample { n_pub, n_priv } => {
                if n_pub + n_priv == 0 {
                    return Err(Error::invalid("n_pub + n_priv", "must be positive"));
                }
            }
            AlphaSchedule::OnlyPublic | AlphaSchedule::OnlyPrivate => {}
        }
        Ok(())
    }
}

pub fn alpha_schedule_value<T: Scalar>(schedule: &AlphaSchedule<T>, t: u64) -> Result<T> {
    schedule.validate()?;
    let tf = T::lit(t as f64);
    Ok(match *schedule {
        AlphaSchedule::Indicator { s, total } => {
            if tf < s * T::lit(total as f64) {
                T::one()
            } else {
                T::zero()
            }
        }
        AlphaSchedule::Dpmd { k } => {
            if tf >= k {
                T::one()
            } else {
                let v = T::one() - (T::PI() * tf / (T::lit(2.0) * k)).cos();
                v.max(T::zero()).min(T::one())
            }
        }
        AlphaSchedule::Sample { n_pub, n_priv } => T::lit(n_pub as f64) / T::lit((n_pub + n_priv) as f64),
        AlphaSchedule::OnlyPublic => T::one(),
        AlphaSchedule::OnlyPrivate => T::zero(),
    })
}
