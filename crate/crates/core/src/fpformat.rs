//! Arbitrary `ExMy` minifloat formats.
//!
//! Every format has one sign bit, `E` exponent bits and `M` mantissa bits.
//! The bias is `2^(E-1) - 1`. Exponent field 0 holds subnormals; all other
//! exponent codes, including the all-ones code IEEE 754 reserves for
//! Inf/NaN, hold ordinary normal values. There is no Inf and no NaN, which
//! is why E4M3 reaches 480 rather than 448.
//!
//! All decoded values are dyadic rationals that `f64` represents exactly
//! for the supported range (`E <= 10`, width `<= 32`).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest exponent width whose values all fit exactly in an `f64`.
pub const MAX_EXPONENT_BITS: u32 = 10;
/// Largest total width (sign + exponent + mantissa).
pub const MAX_WIDTH: u32 = 32;
/// Widest format `enumerate_values` will expand.
pub const ENUMERATION_LIMIT: u32 = 16;

/// An `ExMy` floating-point format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct FpFormat {
    exponent_bits: u32,
    mantissa_bits: u32,
}

impl FpFormat {
    pub const E1M0: FpFormat = FpFormat::new_unchecked(1, 0);
    pub const E1M1: FpFormat = FpFormat::new_unchecked(1, 1);
    pub const E2M1: FpFormat = FpFormat::new_unchecked(2, 1);
    pub const E4M3: FpFormat = FpFormat::new_unchecked(4, 3);
    pub const E5M2: FpFormat = FpFormat::new_unchecked(5, 2);
    pub const E8M7: FpFormat = FpFormat::new_unchecked(8, 7);

    const fn new_unchecked(exponent_bits: u32, mantissa_bits: u32) -> Self {
        FpFormat {
            exponent_bits,
            mantissa_bits,
        }
    }

    pub fn new(exponent_bits: u32, mantissa_bits: u32) -> Result<Self> {
        if exponent_bits == 0 {
            return Err(Error::InvalidFormat(
                "exponent bits must be at least 1".into(),
            ));
        }
        if exponent_bits > MAX_EXPONENT_BITS {
            return Err(Error::InvalidFormat(format!(
                "exponent bits {exponent_bits} exceed the supported maximum of {MAX_EXPONENT_BITS}"
            )));
        }
        let width = 1 + exponent_bits + mantissa_bits;
        if width > MAX_WIDTH {
            return Err(Error::InvalidFormat(format!(
                "width {width} exceeds {MAX_WIDTH} bits"
            )));
        }
        Ok(FpFormat::new_unchecked(exponent_bits, mantissa_bits))
    }

    pub fn exponent_bits(&self) -> u32 {
        self.exponent_bits
    }

    pub fn mantissa_bits(&self) -> u32 {
        self.mantissa_bits
    }

    pub fn bias(&self) -> i32 {
        (1i32 << (self.exponent_bits - 1)) - 1
    }

    /// Total bit width including the sign bit.
    pub fn width(&self) -> u32 {
        1 + self.exponent_bits + self.mantissa_bits
    }

    /// Exponent of the smallest normal binade (also the subnormal scale).
    pub fn min_exponent(&self) -> i32 {
        1 - self.bias()
    }

    pub fn max_exponent(&self) -> i32 {
        ((1i32 << self.exponent_bits) - 1) - self.bias()
    }

    fn max_exponent_field(&self) -> u32 {
        (1u32 << self.exponent_bits) - 1
    }

    fn max_mantissa_field(&self) -> u32 {
        ((1u64 << self.mantissa_bits) - 1) as u32
    }

    /// Largest representable magnitude, `(2 - 2^-M) * 2^(2^(E-1))`.
    pub fn fp_max(&self) -> f64 {
        let m = self.mantissa_bits as i32;
        (2.0 - exp2i(-m)) * exp2i(self.max_exponent())
    }

    /// Smallest positive (subnormal) value, or the smallest normal when `M = 0`.
    pub fn min_positive(&self) -> f64 {
        exp2i(self.min_exponent() - self.mantissa_bits as i32)
    }

    /// Number of bit patterns, `2^width`.
    pub fn code_count(&self) -> u64 {
        1u64 << self.width()
    }
}

impl fmt::Display for FpFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "E{}M{}", self.exponent_bits, self.mantissa_bits)
    }
}

impl FromStr for FpFormat {
    type Err = Error;

    /// Parses `E<k>M<j>`, case-insensitive.
    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_uppercase();
        let bad = || Error::InvalidFormat(format!("expected E<k>M<j>, got {s:?}"));
        let rest = t.strip_prefix('E').ok_or_else(bad)?;
        let (e, m) = rest.split_once('M').ok_or_else(bad)?;
        if e.is_empty() || m.is_empty() || !e.bytes().chain(m.bytes()).all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        let e: u32 = e.parse().map_err(|_| bad())?;
        let m: u32 = m.parse().map_err(|_| bad())?;
        FpFormat::new(e, m)
    }
}

impl TryFrom<String> for FpFormat {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<FpFormat> for String {
    fn from(f: FpFormat) -> String {
        f.to_string()
    }
}

/// The three fields of one encoded value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FpCode {
    pub sign: u8,
    pub exponent_field: u32,
    pub mantissa_field: u32,
}

impl FpCode {
    pub fn new(sign: u8, exponent_field: u32, mantissa_field: u32) -> Self {
        FpCode {
            sign,
            exponent_field,
            mantissa_field,
        }
    }

    pub fn validate(&self, fmt: FpFormat) -> Result<()> {
        if self.sign > 1
            || self.exponent_field > fmt.max_exponent_field()
            || self.mantissa_field > fmt.max_mantissa_field()
        {
            return Err(Error::InvalidInput(format!(
                "code {self:?} out of range for {fmt}"
            )));
        }
        Ok(())
    }

    /// Packs the code as `sign | exponent | mantissa`, mantissa in the low bits.
    pub fn to_bits(&self, fmt: FpFormat) -> u32 {
        let m = fmt.mantissa_bits;
        let e = fmt.exponent_bits;
        ((self.sign as u64) << (e + m) | (self.exponent_field as u64) << m | self.mantissa_field as u64)
            as u32
    }

    pub fn from_bits(bits: u32, fmt: FpFormat) -> Result<Self> {
        if (bits as u64) >= fmt.code_count() {
            return Err(Error::InvalidInput(format!(
                "bit pattern {bits:#x} wider than {fmt}"
            )));
        }
        let m = fmt.mantissa_bits;
        let e = fmt.exponent_bits;
        let bits = bits as u64;
        Ok(FpCode {
            sign: (bits >> (e + m)) as u8 & 1,
            exponent_field: ((bits >> m) & fmt.max_exponent_field() as u64) as u32,
            mantissa_field: (bits & fmt.max_mantissa_field() as u64) as u32,
        })
    }

    /// Unsigned magnitude index; adjacent magnitudes differ by one.
    pub fn magnitude_index(&self, fmt: FpFormat) -> u64 {
        (self.exponent_field as u64) << fmt.mantissa_bits | self.mantissa_field as u64
    }
}

/// Exact `2^k` for `k` in the normal `f64` exponent range.
pub(crate) fn exp2i(k: i32) -> f64 {
    debug_assert!((-1022..=1023).contains(&k));
    f64::from_bits(((k + 1023) as u64) << 52)
}

/// Decodes `code` under `fmt`. Negative zero decodes to `+0.0`.
pub fn decode(code: FpCode, fmt: FpFormat) -> Result<f64> {
    code.validate(fmt)?;
    Ok(decode_unchecked(code, fmt))
}

fn decode_unchecked(code: FpCode, fmt: FpFormat) -> f64 {
    let m = fmt.mantissa_bits as i32;
    let mant = code.mantissa_field as f64;
    let magnitude = if code.exponent_field == 0 {
        mant * exp2i(fmt.min_exponent() - m)
    } else {
        let significand = exp2i(m) + mant;
        significand * exp2i(code.exponent_field as i32 - fmt.bias() - m)
    };
    if magnitude == 0.0 {
        0.0
    } else if code.sign == 1 {
        -magnitude
    } else {
        magnitude
    }
}

/// Encodes an exactly representable value. Zero encodes with sign 0.
pub fn encode(value: f64, fmt: FpFormat) -> Result<FpCode> {
    if !value.is_finite() {
        return Err(Error::InvalidInput(format!("cannot encode {value}")));
    }
    let sign = u8::from(value < 0.0);
    let a = value.abs();
    if a == 0.0 {
        return Ok(FpCode::new(0, 0, 0));
    }
    if a > fmt.fp_max() {
        return Err(Error::InvalidInput(format!("{value} exceeds range of {fmt}")));
    }
    let (e, units) = binade_units(a, fmt);
    if units.fract() != 0.0 {
        return Err(Error::InvalidInput(format!("{value} is not representable in {fmt}")));
    }
    Ok(code_from_units(sign, e, units as u64, fmt))
}

/// Binade exponent `e` (clamped to the subnormal range) and `a / 2^(e - M)`.
fn binade_units(a: f64, fmt: FpFormat) -> (i32, f64) {
    let emin = fmt.min_exponent();
    let e = if a < exp2i(emin) {
        emin
    } else {
        ((a.to_bits() >> 52) & 0x7ff) as i32 - 1023
    };
    (e, a * exp2i(fmt.mantissa_bits as i32 - e))
}

/// Builds the code for `units * 2^(e - M)`, where `units` may equal `2^(M+1)`.
fn code_from_units(sign: u8, e: i32, units: u64, fmt: FpFormat) -> FpCode {
    let m = fmt.mantissa_bits;
    let index = units + ((e - fmt.min_exponent()) as u64) * (1u64 << m);
    FpCode {
        sign,
        exponent_field: (index >> m) as u32,
        mantissa_field: (index & fmt.max_mantissa_field() as u64) as u32,
    }
}

/// Largest finite magnitude of `fmt`.
pub fn fp_max(fmt: FpFormat) -> f64 {
    fmt.fp_max()
}

/// All distinct values of `fmt`, strictly increasing. `+0` and `-0` collapse,
/// so the list has `2^width - 1` entries.
pub fn enumerate_values(fmt: FpFormat) -> Result<Vec<f64>> {
    if fmt.width() > ENUMERATION_LIMIT {
        return Err(Error::EnumerationRefused {
            width: fmt.width(),
            limit: ENUMERATION_LIMIT,
        });
    }
    let half = fmt.code_count() / 2;
    let positives: Vec<f64> = (1..half)
        .map(|bits| decode_unchecked(FpCode::from_bits(bits as u32, fmt).unwrap(), fmt))
        .collect();
    let mut values = Vec::with_capacity(positives.len() * 2 + 1);
    values.extend(positives.iter().rev().map(|v| -v));
    values.push(0.0);
    values.extend_from_slice(&positives);
    Ok(values)
}

/// Rounds `x` to the nearest value of `fmt`.
///
/// Ties go to the candidate whose magnitude bits are even (round half to
/// even on the encoding). Magnitudes above `fp_max` saturate.
pub fn quantize_scalar(x: f64, fmt: FpFormat) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::InvalidInput(format!("cannot quantize {x}")));
    }
    Ok(quantize_finite(x, fmt))
}

/// `quantize_scalar` without the finiteness check. Non-finite input is a
/// logic error.
pub(crate) fn quantize_finite(x: f64, fmt: FpFormat) -> f64 {
    debug_assert!(x.is_finite());
    let a = x.abs();
    let max = fmt.fp_max();
    let q = if a >= max {
        max
    } else if a == 0.0 {
        0.0
    } else {
        let (e, units) = binade_units(a, fmt);
        let lo = units.floor();
        let frac = units - lo;
        let up = if frac > 0.5 {
            true
        } else if frac < 0.5 {
            false
        } else {
            // lower candidate has an odd encoding
            code_from_units(0, e, lo as u64, fmt).magnitude_index(fmt) & 1 == 1
        };
        let units = if up { lo + 1.0 } else { lo };
        units * exp2i(e - fmt.mantissa_bits as i32)
    };
    if x < 0.0 && q != 0.0 {
        -q
    } else {
        q
    }
}
