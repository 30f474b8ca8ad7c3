//! Gaussian differential privacy accounting.
//!
//! A mechanism is μ-GDP when distinguishing neighbouring datasets is as
//! hard as distinguishing N(0,1) from N(μ,1). μ maps one-to-one onto an
//! (ε, δ) curve, and noisy SGD with uniform subsampling rate `B/n`, noise
//! multiplier σ, and `T` steps is asymptotically μ-GDP with
//! `μ = (B/n)·√(T·(e^{1/σ²} − 1))`. Together these give the noise level
//! σ(B) needed to meet a target (ε, δ) at a fixed sample budget `S = B·T`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::normal_cdf;
use crate::Scalar;

const MU_MIN: f64 = 1e-8;
const MU_MAX: f64 = 1e4;
const SIGMA_MAX: f64 = 1e6;

/// Target (ε, δ).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyBudget<T> {
    pub epsilon: T,
    pub delta: T,
}

impl<T: Scalar> PrivacyBudget<T> {
    pub fn new(epsilon: T, delta: T) -> Result<Self> {
        let b = Self { epsilon, delta };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > T::zero()) || !self.epsilon.is_finite() {
            return Err(Error::invalid("epsilon", "must be positive and finite"));
        }
        if !(self.delta > T::zero() && self.delta < T::one()) {
            return Err(Error::invalid("delta", "must lie in (0, 1)"));
        }
        Ok(())
    }

    /// Checks the usual `δ < 1/n` requirement for a dataset of size `n`.
    pub fn validate_for_dataset(&self, n: u64) -> Result<()> {
        self.validate()?;
        if self.delta * T::lit(n as f64) >= T::one() {
            return Err(Error::invalid("delta", format!("must be below 1/n = 1/{n}")));
        }
        Ok(())
    }
}

/// A GDP parameter μ > 0.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct GdpParams<T> {
    mu: T,
}

impl<T: Scalar> GdpParams<T> {
    pub fn new(mu: T) -> Result<Self> {
        if !(mu > T::zero()) || !mu.is_finite() {
            return Err(Error::invalid("mu", "must be positive and finite"));
        }
        Ok(Self { mu })
    }

    pub fn mu(&self) -> T {
        self.mu
    }

    pub fn delta_at(&self, epsilon: T) -> Result<T> {
        mu_to_delta(self.mu, epsilon)
    }
}

/// δ(ε; μ) = Φ(−ε/μ + μ/2) − e^ε·Φ(−ε/μ − μ/2).
pub fn mu_to_delta<T: Scalar>(mu: T, epsilon: T) -> Result<T> {
    if !(mu > T::zero()) || !mu.is_finite() {
        return Err(Error::invalid("mu", "must be positive and finite"));
    }
    if !(epsilon >= T::zero()) {
        return Err(Error::invalid("epsilon", "must be nonnegative"));
    }
    let half = T::lit(0.5);
    let a = normal_cdf(-epsilon / mu + mu * half);
    let b = normal_cdf(-epsilon / mu - mu * half);
    Ok((a - epsilon.exp() * b).max(T::zero()))
}

/// Inverse of [`mu_to_delta`] in μ at fixed ε.
///
/// Bisection in log μ over `[1e-8, 1e4]` run to floating-point resolution,
/// which leaves |δ(μ̂) − δ| far below 1e-10.
pub fn delta_to_mu<T: Scalar>(epsilon: T, delta: T) -> Result<T> {
    if !(epsilon >= T::zero()) || !epsilon.is_finite() {
        return Err(Error::invalid("epsilon", "must be nonnegative and finite"));
    }
    if !(delta > T::zero() && delta < T::one()) {
        return Err(Error::invalid("delta", "must lie in (0, 1)"));
    }
    let (lo, hi) = (T::lit(MU_MIN), T::lit(MU_MAX));
    let f = |mu: T| mu_to_delta(mu, epsilon).map(|d| d - delta);
    if f(lo)? > T::zero() || f(hi)? < T::zero() {
        return Err(Error::NoBracket {
            lo: MU_MIN,
            hi: MU_MAX,
        });
    }
    bisect_log(f, lo, hi)
}

/// Bisection on a nondecreasing function over a positive bracket, halving
/// in log space until the bracket can no longer shrink.
fn bisect_log<T: Scalar>(f: impl Fn(T) -> Result<T>, mut lo: T, mut hi: T) -> Result<T> {
    for _ in 0..400 {
        let mid = (lo * hi).sqrt();
        if !(mid > lo && mid < hi) {
            break;
        }
        if f(mid)? < T::zero() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // return the endpoint whose residual is smaller
    if f(lo)?.abs() <= f(hi)?.abs() {
        Ok(lo)
    } else {
        Ok(hi)
    }
}

fn check_batch(b: u64, n: u64) -> Result<()> {
    if b == 0 {
        return Err(Error::invalid("B", "must be positive"));
    }
    if b > n {
        return Err(Error::invalid("B", format!("batch {b} exceeds dataset size {n}")));
    }
    Ok(())
}

/// μ of noisy SGD with batch `b` sampled from `n`, `t` steps, noise σ.
pub fn mu_of_noisy_sgd<T: Scalar>(b: u64, n: u64, t: u64, sigma: T) -> Result<T> {
    check_batch(b, n)?;
    if t == 0 {
        return Err(Error::invalid("T", "must be positive"));
    }
    if !(sigma > T::zero()) {
        return Err(Error::invalid("sigma", "must be positive"));
    }
    let rate = T::lit(b as f64) / T::lit(n as f64);
    let inv_var = T::one() / (sigma * sigma);
    Ok(rate * (T::lit(t as f64) * inv_var.exp_m1()).sqrt())
}

/// Number of steps for a processed-sample budget: ⌈S/B⌉.
pub fn steps_for_budget(b: u64, samples: u64) -> u64 {
    samples.div_ceil(b).max(1)
}

/// Result of calibrating the noise multiplier for one batch size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration<T> {
    pub batch: u64,
    pub steps: u64,
    pub sigma: T,
    pub mu: T,
}

/// Noise multiplier σ(B) meeting `budget` after `⌈S/B⌉` steps.
///
/// The target μ comes from inverting the (ε, δ) duality; σ then follows in
/// closed form from the subsampled-GDP expression,
/// `σ = 1/√ln(1 + μ²n²/(B²T))`.
pub fn calibrate_sigma<T: Scalar>(
    b: u64,
    n: u64,
    samples: u64,
    budget: &PrivacyBudget<T>,
) -> Result<Calibration<T>> {
    check_batch(b, n)?;
    budget.validate()?;
    if samples == 0 {
        return Err(Error::invalid("S", "must be positive"));
    }
    let t = steps_for_budget(b, samples);
    let mu = delta_to_mu(budget.epsilon, budget.delta)?;
    let floor_mu = mu_of_noisy_sgd(b, n, t, T::lit(SIGMA_MAX))?;
    if mu < floor_mu {
        return Err(Error::InfeasibleBudget(format!(
            "target mu {mu} needs sigma above {SIGMA_MAX}"
        )));
    }
    let ratio = mu * T::lit(n as f64) / T::lit(b as f64);
    let x = ratio * ratio / T::lit(t as f64);
    let sigma = T::one() / x.ln_1p().sqrt();
    if !sigma.is_finite() || !(sigma > T::zero()) {
        return Err(Error::NonFinite("calibrate_sigma"));
    }
    Ok(Calibration {
        batch: b,
        steps: t,
        sigma,
        mu,
    })
}

/// Calibrated σ(B)²/B, the noise term that enters the decelerator.
pub fn sigma_sq_over_b<T: Scalar>(
    b: u64,
    n: u64,
    samples: u64,
    budget: &PrivacyBudget<T>,
) -> Result<T> {
    let cal = calibrate_sigma(b, n, samples, budget)?;
    Ok(cal.sigma * cal.sigma / T::lit(b as f64))
}

/// Two-term large-batch expansion `S/(μ²n²) + 1/(2B)` of σ(B)²/B.
pub fn sigma_sq_over_b_expansion<T: Scalar>(b: u64, n: u64, samples: u64, mu: T) -> T {
    let nf = T::lit(n as f64);
    T::lit(samples as f64) / (mu * mu * nf * nf) + T::lit(0.5) / T::lit(b as f64)
}
