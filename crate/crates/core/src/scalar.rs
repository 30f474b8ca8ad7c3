//! Floating-point scalar abstraction shared by every numeric routine.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};

/// f32 or f64.
///
/// Everything in the crate is written against this trait so the analysis
/// can run in single precision when memory matters, but the tolerances
/// quoted in the tests assume `f64`.
pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Complementary error function.
    fn erfc(self) -> Self;

    /// Converts an `f64` literal. Panics only if the target type cannot
    /// represent finite `f64` values at all, which never happens for f32/f64.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("usize representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {
    fn erfc(self) -> Self {
        libm::erfcf(self)
    }
}

impl Scalar for f64 {
    fn erfc(self) -> Self {
        libm::erfc(self)
    }
}

/// Standard normal CDF, Φ(x) = ½·erfc(−x/√2).
///
/// Going through erfc keeps full relative precision in the lower tail,
/// where privacy deltas of order 1e-12 live.
pub fn normal_cdf<T: Scalar>(x: T) -> T {
    T::lit(0.5) * (-x / T::SQRT_2()).erfc()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normal_cdf_reference_values() {
        // Reference values from scipy.stats.norm.cdf.
        assert!((normal_cdf(0.0_f64) - 0.5).abs() < 1e-16);
        assert!((normal_cdf(0.5_f64) - 0.691_462_461_274_013_1).abs() < 1e-15);
        assert!((normal_cdf(-1.959_963_984_540_054_f64) - 0.025).abs() < 1e-15);
        let tail = normal_cdf(-7.0_f64);
        assert!((tail / 1.279_812_543_885_835e-12 - 1.0).abs() < 1e-10);
    }

    #[test]
    fn f32_erfc_is_close_to_f64() {
        for &x in &[-2.0_f32, -0.3, 0.0, 0.7, 1.9] {
            let a = Scalar::erfc(x) as f64;
            let b = Scalar::erfc(x as f64);
            assert!((a - b).abs() < 1e-6, "{x}: {a} vs {b}");
        }
    }
}
