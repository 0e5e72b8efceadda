//! Stochastic rounding noise at a virtual precision.
//!
//! `inexact` adds uniform noise one half-quantum wide at virtual precision
//! `t`: `inexact(x) = x + 2^(e_x - t) * xi` with `e_x = floor(log2 |x|) + 1`
//! and `xi` uniform on the open interval (-1/2, 1/2). Zeros, infinities and
//! NaN pass through without consuming a draw. `mca_op` applies this per
//! operation, either to the result only (`rr`) or to both operands and the
//! result (`full`).
//!
//! Noise generator contract (fixed so runs are replayable elsewhere):
//! ChaCha12 from `rand_chacha`, keyed with `seed_from_u64(seed)`, 64-bit
//! stream id set to the instance index. Each `xi` consumes exactly one
//! `next_u64`; the top 52 bits `k` map to `xi = (k + 1/2) / 2^52 - 1/2`,
//! which is exactly representable, symmetric, zero-mean and never hits
//! the interval endpoints.

use std::str::FromStr;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::{scalbn, FpOp};

/// Noise placement mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum McaMode {
    /// Perturb the result of each operation: one draw per perturbable call.
    Rr,
    /// Perturb both operands and the result: three draws per perturbable call.
    Full,
}

impl FromStr for McaMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rr" => Ok(McaMode::Rr),
            "full" => Ok(McaMode::Full),
            other => Err(Error::McaConfig(format!("unknown mode `{other}`"))),
        }
    }
}

/// Virtual-precision noise configuration. `t` counts significand bits
/// including the implicit one, so t = 53 models binary64 itself.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct McaConfig {
    pub mode: McaMode,
    pub t: u32,
    pub seed: u64,
}

impl McaConfig {
    pub fn new(mode: McaMode, t: u32, seed: u64) -> Result<Self> {
        if !(1..=53).contains(&t) {
            return Err(Error::McaConfig(format!(
                "virtual precision t = {t} outside [1, 53]"
            )));
        }
        Ok(McaConfig { mode, t, seed })
    }
}

/// One noise stream. Solver instances own independent streams derived from
/// (seed, instance index); ensemble run i uses instance index i.
#[derive(Clone, Debug)]
pub struct NoiseRng {
    rng: ChaCha12Rng,
}

const P52: f64 = 4503599627370496.0; // 2^52

impl NoiseRng {
    pub fn new(seed: u64, instance: u64) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        rng.set_stream(instance);
        NoiseRng { rng }
    }

    /// One uniform draw from the open interval (-1/2, 1/2).
    /// Every arithmetic step below is exact (the grid is (k + 1/2) / 2^52).
    #[inline]
    pub fn xi(&mut self) -> f64 {
        let k = self.rng.next_u64() >> 12;
        (k as f64 + 0.5) / P52 - 0.5
    }
}

/// Magnitude exponent `floor(log2 |x|) + 1`, computed from the bit pattern
/// so subnormals come out right. Errors on zero, infinities and NaN, which
/// have no magnitude exponent.
pub fn magnitude_exponent(x: f64) -> Result<i32> {
    if x == 0.0 || !x.is_finite() {
        return Err(Error::McaConfig(format!(
            "magnitude exponent undefined for {x}"
        )));
    }
    let abs = x.to_bits() & !(1u64 << 63);
    let biased = (abs >> 52) as i32;
    if biased == 0 {
        // subnormal: |x| = frac * 2^-1074, leading bit at 2^(top - 1074)
        let top = 63 - abs.leading_zeros() as i32;
        Ok(top - 1074 + 1)
    } else {
        Ok(biased - 1023 + 1)
    }
}

/// Adds one half-quantum of uniform noise at virtual precision `t`.
/// Exact zeros and non-finite values pass through without consuming a draw.
///
/// The perturbation magnitude is strictly below `2^(e_x - t - 1)`; after the
/// binary64 add the realized step can reach that bound exactly when `x` sits
/// on a binade edge, and never exceeds it.
pub fn inexact(x: f64, t: u32, rng: &mut NoiseRng) -> f64 {
    assert!((1..=53).contains(&t), "virtual precision t = {t} outside [1, 53]");
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    let e = magnitude_exponent(x).expect("finite nonzero");
    x + scalbn(rng.xi(), e - t as i32)
}

/// One noisy operation at the configured virtual precision. Draw order is
/// fixed: operand `a`, operand `b`, then the result (modes skip the draws
/// they do not use, and non-perturbable values consume none).
pub fn mca_op(a: f64, b: f64, op: FpOp, cfg: &McaConfig, rng: &mut NoiseRng) -> f64 {
    match cfg.mode {
        McaMode::Rr => inexact(op.apply_f64(a, b), cfg.t, rng),
        McaMode::Full => {
            let ap = inexact(a, cfg.t, rng);
            let bp = inexact(b, cfg.t, rng);
            inexact(op.apply_f64(ap, bp), cfg.t, rng)
        }
    }
}
