//! Reduced-precision emulation on top of binary64.
//!
//! Operations are computed natively in binary64 and only the *result* is
//! rounded into the target format (outbound rounding): a pseudo-mantissa of
//! `t` explicit fraction bits and an `r`-bit exponent with the usual IEEE
//! bias, round-to-nearest-even, overflow to infinity and gradual underflow.
//! At (t=23, r=8) this reproduces the binary64 -> binary32 -> binary64 round
//! trip bit for bit; at (t=52, r=11) it is the identity on binary64.

use std::fmt;
use std::str::FromStr;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::num::{scalbn, FpOp};

/// Target format: `t` explicit fraction bits in [1, 52], `r` exponent bits
/// in [2, 11]. Serialized in the compact `t<t>r<r>` form, e.g. `t23r8`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct VprecFormat {
    t: u32,
    r: u32,
}

/// Derived exponent bounds of a format: `bias = 2^(r-1) - 1`, `emax = bias`,
/// `emin = 1 - bias`. Exponents here are the power of the leading bit, i.e.
/// a normal number is `m * 2^e` with `m` in [1, 2) and `e` in [emin, emax].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FormatBounds {
    pub bias: i32,
    pub emin: i32,
    pub emax: i32,
}

impl VprecFormat {
    /// The binary32-equivalent format.
    pub const BINARY32: VprecFormat = VprecFormat { t: 23, r: 8 };
    /// The format under which rounding is the identity on binary64.
    pub const BINARY64: VprecFormat = VprecFormat { t: 52, r: 11 };

    pub fn new(t: u32, r: u32) -> Result<Self> {
        if !(1..=52).contains(&t) {
            return Err(Error::VprecFormat(format!(
                "pseudo-mantissa width t = {t} outside [1, 52]"
            )));
        }
        if !(2..=11).contains(&r) {
            return Err(Error::VprecFormat(format!(
                "exponent width r = {r} outside [2, 11]"
            )));
        }
        Ok(VprecFormat { t, r })
    }

    pub fn t(self) -> u32 {
        self.t
    }

    pub fn r(self) -> u32 {
        self.r
    }

    pub fn bounds(self) -> FormatBounds {
        format_bounds(self)
    }
}

/// Exponent bounds of a format. r >= 2 keeps the bias positive.
pub fn format_bounds(fmt: VprecFormat) -> FormatBounds {
    let bias = (1i32 << (fmt.r - 1)) - 1;
    FormatBounds {
        bias,
        emin: 1 - bias,
        emax: bias,
    }
}

impl fmt::Display for VprecFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t{}r{}", self.t, self.r)
    }
}

impl FromStr for VprecFormat {
    type Err = Error;

    /// Parses `t<digits>r<digits>`, e.g. `t23r8`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::VprecFormat(format!("`{s}` does not match t<t>r<r>"));
        let rest = s.strip_prefix('t').ok_or_else(bad)?;
        let rpos = rest.find('r').ok_or_else(bad)?;
        let (tpart, rpart) = rest.split_at(rpos);
        let t: u32 = tpart.parse().map_err(|_| bad())?;
        let r: u32 = rpart[1..].parse().map_err(|_| bad())?;
        VprecFormat::new(t, r)
    }
}

impl Serialize for VprecFormat {
    fn serialize<S: Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        ser.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for VprecFormat {
    fn deserialize<D: Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(de)?;
        s.parse().map_err(D::Error::custom)
    }
}

const SIGN_MASK: u64 = 1 << 63;
const FRAC_MASK: u64 = (1 << 52) - 1;
const INF_BITS: u64 = 0x7FF << 52;

/// Rounds a binary64 value into the target format and returns it as binary64.
///
/// NaN and infinities pass through unchanged (payloads included),
/// signed zeros are preserved. Rounding is to nearest, ties to even.
/// Values whose exponent exceeds the format's emax after rounding overflow
/// to the infinity of matching sign; values below emin lose mantissa bits
/// gradually and reach a signed zero once no bits remain.
pub fn vprec_round(x: f64, fmt: VprecFormat) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    let bits = x.to_bits();
    let sign = bits & SIGN_MASK;
    let abs = bits & !SIGN_MASK;
    let biased = (abs >> 52) as i32;

    // Exact decomposition |x| = s * 2^ee with integer s, plus the floor
    // exponent e_floor = floor(log2 |x|).
    let (s, e_floor, ee) = if biased == 0 {
        let top = 63 - abs.leading_zeros() as i32;
        (abs, top - 1074, -1074)
    } else {
        ((1u64 << 52) | (abs & FRAC_MASK), biased - 1023, biased - 1023 - 52)
    };

    let b = format_bounds(fmt);
    // Quantum 2^q of the target grid at this magnitude; fixed at 2^(emin - t)
    // below emin, which is exactly the gradual-underflow mantissa shrink.
    let q = e_floor.max(b.emin) - fmt.t as i32;
    let shift = q - ee;

    let (rounded, rexp) = if shift <= 0 {
        // Input already lies on a grid at least as coarse as the target.
        (s, ee)
    } else if shift >= 54 {
        // |x| = s * 2^ee < 2^53 * 2^ee <= 2^(q-1): under half a quantum.
        (0, q)
    } else {
        let half = 1u64 << (shift - 1);
        let rem = s & ((1u64 << shift) - 1);
        let down = s >> shift;
        let up = rem > half || (rem == half && down & 1 == 1);
        (if up { down + 1 } else { down }, q)
    };

    if rounded == 0 {
        return f64::from_bits(sign); // signed zero
    }
    let e_new = 63 - rounded.leading_zeros() as i32 + rexp;
    if e_new > b.emax {
        return f64::from_bits(sign | INF_BITS);
    }
    // rounded <= 2^53 and its lowest bit sits at 2^rexp >= 2^-1074, so the
    // reconstruction is exactly representable and scalbn returns it exactly.
    let mag = scalbn(rounded as f64, rexp);
    if sign != 0 {
        -mag
    } else {
        mag
    }
}

/// Computes `a op b` in binary64 and rounds the result into the format.
/// Operands are taken as-is: rounding is outbound only.
pub fn vprec_op(a: f64, b: f64, op: FpOp, fmt: VprecFormat) -> f64 {
    vprec_round(op.apply_f64(a, b), fmt)
}
