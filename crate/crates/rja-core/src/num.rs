//! Scalar abstraction for the numeric pipeline.
//!
//! All image math is generic over [`Scalar`] so the pipeline can run in
//! `f32` or `f64`. The crate-root aliases pin the default precision used by
//! the CLI and the serialization layer.

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating-point sample type used throughout the pipeline.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssign + std::fmt::Debug + std::fmt::Display + Send + Sync + 'static
{
    /// Shorthand for converting an `f64` constant into `Self`.
    #[inline]
    fn c(v: f64) -> Self {
        Self::from_f64(v).expect("constant representable in scalar type")
    }

    /// Lossy conversion back to `f64` (used at serialization boundaries).
    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar convertible to f64")
    }

    /// Bulk in-place `exp` over a slice. The `f64` implementation is a
    /// branch-free saturating kernel (inputs clamp to ±708, outputs accurate
    /// to a few ulps) that the compiler can pipeline and vectorize; other
    /// types fall back to the standard function.
    #[inline]
    fn exp_slice(values: &mut [Self]) {
        for v in values {
            *v = v.exp();
        }
    }
}

impl Scalar for f32 {}

impl Scalar for f64 {
    #[inline]
    fn exp_slice(values: &mut [f64]) {
        for v in values {
            *v = exp_clamped(*v);
        }
    }
}

/// Branch-free `exp` for normal-range results: the input is clamped to
/// `[-708, 708]`, so values that would be subnormal or infinite saturate at
/// `exp(±708)`. Exact at 0; relative error a few ulps inside the range.
#[inline(always)]
pub(crate) fn exp_clamped(x: f64) -> f64 {
    const INV_LN2: f64 = std::f64::consts::LOG2_E;
    const LN2_HI: f64 = 0.693_147_180_369_123_816_49;
    const LN2_LO: f64 = 1.908_214_929_270_587_700_02e-10;
    // 1.5 * 2^52: adding it rounds to integer and parks the result in the
    // low mantissa bits, avoiding any libm round call.
    const SHIFTER: f64 = 6_755_399_441_055_744.0;
    let x = x.min(708.0).max(-708.0);
    let t = x * INV_LN2 + SHIFTER;
    let kf = t - SHIFTER;
    let r = (x - kf * LN2_HI) - kf * LN2_LO;
    // Taylor series to r^13; |r| <= ln(2)/2 keeps the tail below 1 ulp.
    let p = 1.0
        + r * (1.0
            + r * (0.5
                + r * (1.0 / 6.0
                    + r * (1.0 / 24.0
                        + r * (1.0 / 120.0
                            + r * (1.0 / 720.0
                                + r * (1.0 / 5040.0
                                    + r * (1.0 / 40320.0
                                        + r * (1.0 / 362_880.0
                                            + r * (1.0 / 3_628_800.0
                                                + r * (1.0 / 39_916_800.0
                                                    + r * (1.0 / 479_001_600.0
                                                        + r * (1.0 / 6_227_020_800.0)))))))))))));
    // Two's-complement scale exponent recovered from the shifted mantissa.
    let k = (t.to_bits() & ((1u64 << 52) - 1)) as i64 - (1i64 << 51);
    p * f64::from_bits(((1023 + k) << 52) as u64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exp_clamped_matches_std() {
        assert_eq!(exp_clamped(0.0), 1.0);
        let mut worst = 0.0f64;
        for i in -70_000..70_000 {
            let x = i as f64 * 1e-2;
            let got = exp_clamped(x);
            let want = x.exp();
            worst = worst.max(((got - want) / want).abs());
        }
        assert!(worst < 5e-15, "worst rel err {worst:.3e}");
    }

    #[test]
    fn exp_clamped_saturates() {
        assert_eq!(exp_clamped(-2000.0), exp_clamped(-708.0));
        assert_eq!(exp_clamped(1000.0), exp_clamped(708.0));
        assert!(exp_clamped(-708.0) > 0.0);
        assert!(exp_clamped(708.0).is_finite());
    }
}
