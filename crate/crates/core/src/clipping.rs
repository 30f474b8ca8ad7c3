//! Per-sample clipping and the privatized gradient `(Σ C_i g_i + σ·N(0, I))/B`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg;
use crate::rng::standard_normal;
use crate::Scalar;

/// How per-sample gradients are rescaled before summation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClippingRule<T> {
    /// `C = min(1/‖g‖, 1/R)`.
    ReParam { r: T },
    /// `C = 1/‖g‖`; zero gradients contribute zero.
    Auto,
    /// `C = 1`. Not private; used for the non-DP baselines.
    Unclipped,
}

impl<T: Scalar> ClippingRule<T> {
    pub fn validate(&self) -> Result<()> {
        if let ClippingRule::ReParam { r } = self {
            if !(*r > T::zero()) || !r.is_finite() {
                return Err(Error::invalid("R", "must be positive and finite"));
            }
        }
        Ok(())
    }

    /// Factor that maps the clipped sum back to gradient scale: `R` for
    /// ReParam, 1 otherwise. Multiplying the learning rate by it gives the
    /// usual (non re-parameterized) clipping step size.
    pub fn lr_scale(&self) -> T {
        match self {
            ClippingRule::ReParam { r } => *r,
            _ => T::one(),
        }
    }
}

/// Per-sample factor `C(‖g‖)`. Zero-norm gradients under Auto get factor 0.
pub fn clip_factor<T: Scalar>(g_norm: T, rule: &ClippingRule<T>) -> Result<T> {
    if !(g_norm >= T::zero()) {
        return Err(Error::invalid("g_norm", "must be nonnegative"));
    }
    rule.validate()?;
    Ok(match rule {
        ClippingRule::ReParam { r } => {
            let inv_r = T::one() / *r;
            if g_norm == T::zero() {
                inv_r
            } else {
                (T::one() / g_norm).min(inv_r)
            }
        }
        ClippingRule::Auto => {
            if g_norm == T::zero() {
                T::zero()
            } else {
                T::one() / g_norm
            }
        }
        ClippingRule::Unclipped => T::one(),
    })
}

fn common_dim<T>(grads: &[Vec<T>]) -> Result<usize> {
    let d = grads.first().ok_or(Error::EmptyBatch)?.len();
    for g in grads {
        check_dim(d, g.len())?;
    }
    Ok(d)
}

/// `Σ_i C_i g_i` together with the factors `C_i`.
pub fn clipped_sum<T: Scalar>(grads: &[Vec<T>], rule: &ClippingRule<T>) -> Result<(Vec<T>, Vec<T>)> {
    let d = common_dim(grads)?;
    let mut sum = vec![T::zero(); d];
    let mut factors = Vec::with_capacity(grads.len());
    for g in grads {
        let c = clip_factor(linalg::norm(g), rule)?;
        linalg::axpy(c, g, &mut sum);
        factors.push(c);
    }
    Ok((sum, factors))
}

/// Eq.-style privatized gradient `(Σ C_i g_i + σ·N(0, I_d))/B`.
pub fn privatize_gradient<T: Scalar, R: Rng + ?Sized>(
    grads: &[Vec<T>],
    rule: &ClippingRule<T>,
    sigma: T,
    rng: &mut R,
) -> Result<Vec<T>> {
    if !(sigma >= T::zero()) {
        return Err(Error::invalid("sigma", "must be nonnegative"));
    }
    let (mut sum, _) = clipped_sum(grads, rule)?;
    if sigma > T::zero() {
        for s in &mut sum {
            *s += sigma * standard_normal::<T, _>(rng);
        }
    }
    Ok(linalg::scale(T::one() / T::from_usize_lossy(grads.len()), &sum))
}

/// Batch mean of the clip factors and the cosine between the clipped and
/// raw gradient sums.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClippingBias<T> {
    pub c_hat: T,
    pub cosine: T,
}

/// True when every nonzero gradient points the same way, in which case the
/// clipped and raw sums are exactly parallel.
fn all_codirectional<T: Scalar>(grads: &[Vec<T>]) -> bool {
    let Some(first) = grads.iter().find(|g| linalg::norm(g) > T::zero()) else {
        return false;
    };
    let u = linalg::scale(T::one() / linalg::norm(first), first);
    let tol = T::lit(8.0) * T::epsilon();
    grads.iter().all(|g| {
        let n = linalg::norm(g);
        if n == T::zero() {
            return true;
        }
        let along = linalg::dot(g, &u);
        let mut resid = g.clone();
        linalg::axpy(-along, &u, &mut resid);
        along > T::zero() && linalg::norm(&resid) <= tol * n
    })
}

pub fn clipping_bias_diagnostic<T: Scalar>(
    grads: &[Vec<T>],
    rule: &ClippingRule<T>,
) -> Result<ClippingBias<T>> {
    let (clipped, factors) = clipped_sum(grads, rule)?;
    let d = clipped.len();
    let mut raw = vec![T::zero(); d];
    for g in grads {
        linalg::axpy(T::one(), g, &mut raw);
    }
    let denom = linalg::norm(&clipped) * linalg::norm(&raw);
    if denom == T::zero() {
        return Err(Error::UndefinedCosine);
    }
    let cosine = if all_codirectional(grads) {
        T::one()
    } else {
        (linalg::dot(&clipped, &raw) / denom).max(-T::one()).min(T::one())
    };
    let c_hat = factors.iter().copied().sum::<T>() / T::from_usize_lossy(factors.len());
    Ok(ClippingBias { c_hat, cosine })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use proptest::prelude::*;

    const R1: ClippingRule<f64> = ClippingRule::ReParam { r: 1.0 };

    #[test]
    fn factor_examples() {
        assert_eq!(clip_factor(2.0, &R1).unwrap(), 0.5);
        assert_eq!(clip_factor(0.5, &R1).unwrap(), 1.0);
        assert_eq!(clip_factor(4.0, &ClippingRule::Auto).unwrap(), 0.25);
        assert_eq!(clip_factor(0.0, &ClippingRule::<f64>::Auto).unwrap(), 0.0);
        assert!(clip_factor(-1.0, &R1).is_err());
        assert!(clip_factor(1.0, &ClippingRule::ReParam { r: 0.0 }).is_err());
    }

    #[test]
    fn privatize_examples() {
        let mut rng = seeded(0);
        let g = privatize_gradient(&[vec![1.0, 0.0], vec![0.0, 1.0]], &ClippingRule::Auto, 0.0, &mut rng)
            .unwrap();
        assert_eq!(g, vec![0.5, 0.5]);
        let g: Vec<f64> = privatize_gradient(&[vec![3.0, 4.0]], &ClippingRule::Auto, 0.0, &mut rng).unwrap();
        // unit-norm output: (3,4)/5
        assert!((g[0] - 0.6).abs() < 1e-15 && (g[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn large_radius_recovers_mean_after_rescaling() {
        let grads: Vec<Vec<f64>> = vec![vec![1.0, -2.0], vec![0.5, 3.0], vec![-1.0, 0.25]];
        let rule = ClippingRule::ReParam { r: 8.0 };
        let g = privatize_gradient(&grads, &rule, 0.0, &mut seeded(0)).unwrap();
        let mean = linalg::mean_vec(&grads).unwrap();
        for (a, b) in g.iter().zip(&mean) {
            assert!((a * rule.lr_scale() - b).abs() < 1e-15);
        }
        let plain = privatize_gradient(&grads, &ClippingRule::Unclipped, 0.0, &mut seeded(0)).unwrap();
        assert_eq!(plain, mean);
    }

    #[test]
    fn zero_noise_is_deterministic() {
        let grads = vec![vec![1.0, 2.0, 3.0]];
        let a = privatize_gradient(&grads, &R1, 0.0, &mut seeded(1)).unwrap();
        let b = privatize_gradient(&grads, &R1, 0.0, &mut seeded(2)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn privatize_rejects_bad_input() {
        let mut rng = seeded(0);
        assert_eq!(
            privatize_gradient::<f64, _>(&[], &R1, 0.0, &mut rng),
            Err(Error::EmptyBatch)
        );
        assert!(privatize_gradient(&[vec![1.0], vec![1.0, 2.0]], &R1, 0.0, &mut rng).is_err());
        assert!(privatize_gradient(&[vec![1.0]], &R1, -1.0, &mut rng).is_err());
    }

    #[test]
    fn noise_statistics() {
        // zero gradients isolate the noise; its coordinates are N(0, σ²/B²)
        let (sigma, b, draws) = (2.0, 4usize, 20_000usize);
        let grads = vec![vec![0.0; 3]; b];
        let mut rng = seeded(99);
        let samples: Vec<Vec<f64>> = (0..draws)
            .map(|_| privatize_gradient(&grads, &ClippingRule::Auto, sigma, &mut rng).unwrap())
            .collect();
        let target_var = sigma * sigma / (b * b) as f64;
        for j in 0..3 {
            let xs: Vec<f64> = samples.iter().map(|s| s[j]).collect();
            let mean = xs.iter().sum::<f64>() / draws as f64;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (draws - 1) as f64;
            let se = (target_var / draws as f64).sqrt();
            assert!(mean.abs() <= 3.0 * se, "coord {j}: mean {mean}");
            assert!((var / target_var - 1.0).abs() <= 0.05, "coord {j}: var {var}");
        }
    }

    #[test]
    fn diagnostic_examples() {
        let same = vec![vec![1.0, 2.0]; 3];
        assert_eq!(clipping_bias_diagnostic(&same, &R1).unwrap().cosine, 1.0);
        let unit: Vec<Vec<f64>> = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let d = clipping_bias_diagnostic(&unit, &ClippingRule::Auto).unwrap();
        assert_eq!(d.c_hat, 1.0);
        assert!((d.cosine - 1.0).abs() < 1e-15);
        let skew = vec![vec![10.0, 0.0], vec![0.0, 1.0]];
        let d = clipping_bias_diagnostic(&skew, &ClippingRule::Auto).unwrap();
        // (1,1)·(10,1) / (√2·√101)
        let oracle = 11.0 / (2f64.sqrt() * 101f64.sqrt());
        assert!((d.cosine - oracle).abs() < 1e-14);
        assert!((d.cosine - 0.7740).abs() < 1e-4);
        assert_eq!(
            clipping_bias_diagnostic(&[vec![0.0, 0.0]], &R1),
            Err(Error::UndefinedCosine)
        );
    }

    proptest! {
        #[test]
        fn sensitivity_bounded_by_one(
            g in prop::collection::vec(-1e3f64..1e3, 1..8),
            r in 1.0f64..100.0,
        ) {
            let n = linalg::norm(&g);
            for rule in [ClippingRule::ReParam { r }, ClippingRule::Auto] {
                let c = clip_factor(n, &rule).unwrap();
                prop_assert!(c * n <= 1.0 + 1e-12);
            }
            if n > 0.0 {
                let c = clip_factor(n, &ClippingRule::Auto).unwrap();
                prop_assert!((c * n - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn auto_dominates_reparam(n in 1e-6f64..1e6, r in 1.0f64..1e3) {
            let auto = clip_factor(n, &ClippingRule::Auto).unwrap();
            let re = clip_factor(n, &ClippingRule::ReParam { r }).unwrap();
            prop_assert!(auto >= re);
        }
    }
}
