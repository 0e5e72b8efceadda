//! Scalar abstractions shared by the emulation layers and the kernels.
//!
//! `Real` is the storage scalar of the native kernel path (f32 or f64);
//! the instrumented path always computes in f64. `scalbn` is a correctly
//! rounded `x * 2^n` used by the rounding and noise code, ported from the
//! usual three-step construction so intermediates never double round.

use std::fmt;

/// Storage scalar for the kernel path. Arithmetic goes through an executor,
/// so this only needs conversions, comparisons and the few native ops that
/// are deliberately not instrumented (sqrt stays native).
pub trait Real: Copy + PartialOrd + fmt::Debug + Send + Sync + 'static {
    /// Element width in bytes, used for traffic accounting.
    const WIDTH: u64;

    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
    fn zero() -> Self;
    fn one() -> Self;
    fn add(self, rhs: Self) -> Self;
    fn sub(self, rhs: Self) -> Self;
    fn mul(self, rhs: Self) -> Self;
    fn div(self, rhs: Self) -> Self;
    fn neg(self) -> Self;
}

impl Real for f64 {
    const WIDTH: u64 = 8;

    #[inline(always)]
    fn from_f64(x: f64) -> Self {
        x
    }
    #[inline(always)]
    fn to_f64(self) -> f64 {
        self
    }
    #[inline(always)]
    fn zero() -> Self {
        0.0
    }
    #[inline(always)]
    fn one() -> Self {
        1.0
    }
    #[inline(always)]
    fn add(self, rhs: Self) -> Self {
        self + rhs
    }
    #[inline(always)]
    fn sub(self, rhs: Self) -> Self {
        self - rhs
    }
    #[inline(always)]
    fn mul(self, rhs: Self) -> Self {
        self * rhs
    }
    #[inline(always)]
    fn div(self, rhs: Self) -> Self {
        self / rhs
    }
    #[inline(always)]
    fn neg(self) -> Self {
        -self
    }
}

impl Real for f32 {
    const WIDTH: u64 = 4;

    #[inline(always)]
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    #[inline(always)]
    fn to_f64(self) -> f64 {
        self as f64
    }
    #[inline(always)]
    fn zero() -> Self {
        0.0
    }
    #[inline(always)]
    fn one() -> Self {
        1.0
    }
    #[inline(always)]
    fn add(self, rhs: Self) -> Self {
        self + rhs
    }
    #[inline(always)]
    fn sub(self, rhs: Self) -> Self {
        self - rhs
    }
    #[inline(always)]
    fn mul(self, rhs: Self) -> Self {
        self * rhs
    }
    #[inline(always)]
    fn div(self, rhs: Self) -> Self {
        self / rhs
    }
    #[inline(always)]
    fn neg(self) -> Self {
        -self
    }
}

/// One binary floating-point operation. Subtraction counts as add-class;
/// there is no fused class because the kernels never emit fused ops.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FpOp {
    Add,
    Sub,
    Mul,
    Div,
}

/// Operation class for flop accounting.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpClass {
    Add,
    Mul,
    Div,
    Fused,
}

impl FpOp {
    #[inline(always)]
    pub fn class(self) -> OpClass {
        match self {
            FpOp::Add | FpOp::Sub => OpClass::Add,
            FpOp::Mul => OpClass::Mul,
            FpOp::Div => OpClass::Div,
        }
    }

    #[inline(always)]
    pub fn apply_f64(self, a: f64, b: f64) -> f64 {
        match self {
            FpOp::Add => a + b,
            FpOp::Sub => a - b,
            FpOp::Mul => a * b,
            FpOp::Div => a / b,
        }
    }

    #[inline(always)]
    pub fn apply<T: Real>(self, a: T, b: T) -> T {
        match self {
            FpOp::Add => a.add(b),
            FpOp::Sub => a.sub(b),
            FpOp::Mul => a.mul(b),
            FpOp::Div => a.div(b),
        }
    }
}

const P1023: u64 = 2046 << 52; // 2^1023
const PM969: u64 = 54 << 52; // 2^-969, keeps downscaling intermediates normal

/// Correctly rounded `x * 2^n` over the full exponent range.
///
/// The final multiply is the only inexact step, so results that are exactly
/// representable (all uses in this crate that must be exact) come out exact.
pub fn scalbn(x: f64, mut n: i32) -> f64 {
    let mut y = x;
    if n > 1023 {
        y *= f64::from_bits(P1023);
        n -= 1023;
        if n > 1023 {
            y *= f64::from_bits(P1023);
            n -= 1023;
            if n > 1023 {
                n = 1023;
            }
        }
    } else if n < -1022 {
        y *= f64::from_bits(PM969);
        n += 969;
        if n < -1022 {
            y *= f64::from_bits(PM969);
            n += 969;
            if n < -1022 {
                n = -1022;
            }
        }
    }
    y * f64::from_bits(((0x3ff + n) as u64) << 52)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalbn_matches_plain_scaling_in_normal_range() {
        assert_eq!(scalbn(1.5, 4), 24.0);
        assert_eq!(scalbn(-3.0, -2), -0.75);
        assert_eq!(scalbn(1.0, 0), 1.0);
    }

    #[test]
    fn scalbn_reaches_extreme_exponents() {
        assert_eq!(scalbn(1.0, -1074), f64::from_bits(1)); // smallest subnormal
        assert_eq!(scalbn(1.0, 1023), f64::from_bits(2046 << 52));
        assert_eq!(scalbn(0.5, 1024), f64::from_bits(2046 << 52));
        assert_eq!(scalbn(1.0, 2000), f64::INFINITY);
        assert_eq!(scalbn(1.0, -2000), 0.0);
    }

    #[test]
    fn scalbn_is_exact_into_the_subnormal_range() {
        // 3 * 2^-1073 is exactly representable (two subnormal bits)
        assert_eq!(scalbn(3.0, -1073), f64::from_bits(6));
        // odd 53-bit significand landing exactly on the bottom normal binade:
        // (2^52 + 1) * 2^-1074 = 2^-1022 + 2^-1074, biased exponent 1
        let x = ((1u64 << 52) | 1) as f64;
        assert_eq!(scalbn(x, -1074).to_bits(), (1u64 << 52) | 1);
    }

    #[test]
    fn op_classes() {
        assert_eq!(FpOp::Add.class(), OpClass::Add);
        assert_eq!(FpOp::Sub.class(), OpClass::Add);
        assert_eq!(FpOp::Mul.class(), OpClass::Mul);
        assert_eq!(FpOp::Div.class(), OpClass::Div);
        assert_eq!(FpOp::Sub.apply_f64(3.0, 1.25), 1.75);
        assert_eq!(FpOp::Div.apply::<f32>(1.0, 8.0), 0.125);
    }
}
