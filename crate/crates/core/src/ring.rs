//! Fixed-point encoding and exact arithmetic over `Z_{2^ell}`.
//!
//! Ring elements are stored in a `u64` and always kept reduced modulo
//! `2^ell`. Values at or above `2^(ell-1)` are read as negatives (two's
//! complement at width `ell`).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An element of `Z_{2^ell}`. The width lives in [`FixedPointParams`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RingElement(pub u64);

impl RingElement {
    pub const ZERO: RingElement = RingElement(0);

    pub fn value(self) -> u64 {
        self.0
    }
}

impl From<u64> for RingElement {
    fn from(v: u64) -> Self {
        RingElement(v)
    }
}

/// Ring width and fixed-point scale shared by every module in a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FixedPointParams {
    /// Bit width of the ring.
    pub ell: u32,
    /// Fractional bits of the fixed-point scale.
    pub f: u32,
}

impl Default for FixedPointParams {
    fn default() -> Self {
        FixedPointParams { ell: 64, f: 12 }
    }
}

impl FixedPointParams {
    pub fn new(ell: u32, f: u32) -> Result<Self> {
        let p = FixedPointParams { ell, f };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(2 <= self.f && self.f < self.ell && self.ell <= 64) {
            return Err(Error::InvalidParams(format!(
                "need 2 <= f < ell <= 64, got ell={} f={}",
                self.ell, self.f
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn mask(&self) -> u64 {
        if self.ell == 64 {
            u64::MAX
        } else {
            (1u64 << self.ell) - 1
        }
    }

    #[inline]
    pub fn reduce(&self, v: u64) -> u64 {
        v & self.mask()
    }

    /// Signed reading of a reduced ring word.
    #[inline]
    pub fn to_signed(&self, v: u64) -> i64 {
        let shift = 64 - self.ell;
        ((v << shift) as i64) >> shift
    }

    #[inline]
    pub fn from_signed(&self, v: i64) -> u64 {
        (v as u64) & self.mask()
    }

    /// The fixed-point one, `2^f`.
    pub fn one(&self) -> RingElement {
        RingElement(1u64 << self.f)
    }

    /// `round(real * 2^f) mod 2^ell`, rounding half away from zero.
    pub fn encode(&self, real: f64) -> Result<RingElement> {
        self.encode_at(real, self.f)
    }

    /// Encode at an arbitrary number of fractional bits.
    pub fn encode_at(&self, real: f64, frac: u32) -> Result<RingElement> {
        let limit = 2f64.powi(self.ell as i32 - frac as i32 - 1);
        if !real.is_finite() || real.abs() >= limit {
            return Err(Error::Overflow { value: real, limit });
        }
        let scaled = (real * 2f64.powi(frac as i32)).round();
        Ok(RingElement(self.from_signed(scaled as i64)))
    }

    /// `floor(real * 2^frac)`, the ring threshold `t` for which
    /// `k > t` holds exactly when `k / 2^frac > real` for integer `k`.
    pub fn encode_floor_at(&self, real: f64, frac: u32) -> Result<RingElement> {
        let limit = 2f64.powi(self.ell as i32 - frac as i32 - 1);
        if !real.is_finite() || real.abs() >= limit {
            return Err(Error::Overflow { value: real, limit });
        }
        let scaled = (real * 2f64.powi(frac as i32)).floor();
        Ok(RingElement(self.from_signed(scaled as i64)))
    }

    pub fn decode(&self, x: RingElement) -> f64 {
        self.decode_at(x, self.f)
    }

    pub fn decode_at(&self, x: RingElement, frac: u32) -> f64 {
        self.to_signed(x.0) as f64 / 2f64.powi(frac as i32)
    }

    #[inline]
    pub fn add(&self, a: RingElement, b: RingElement) -> RingElement {
        RingElement(self.reduce(a.0.wrapping_add(b.0)))
    }

    #[inline]
    pub fn sub(&self, a: RingElement, b: RingElement) -> RingElement {
        RingElement(self.reduce(a.0.wrapping_sub(b.0)))
    }

    #[inline]
    pub fn neg(&self, a: RingElement) -> RingElement {
        RingElement(self.reduce(a.0.wrapping_neg()))
    }

    /// Full product mod `2^ell`; the scale doubles and is not repaired.
    #[inline]
    pub fn mul(&self, a: RingElement, b: RingElement) -> RingElement {
        RingElement(self.reduce(a.0.wrapping_mul(b.0)))
    }

    /// Arithmetic right shift of the signed reading, re-reduced.
    #[inline]
    pub fn truncate(&self, x: RingElement, bits: u32) -> RingElement {
        if bits == 0 {
            return x;
        }
        let s = self.to_signed(x.0) >> bits.min(63);
        RingElement(self.from_signed(s))
    }

    /// Bit `k` of the raw word.
    #[inline]
    pub fn bit(&self, x: RingElement, k: u32) -> bool {
        (x.0 >> k) & 1 == 1
    }
}
