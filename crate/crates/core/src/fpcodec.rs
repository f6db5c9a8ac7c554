//! Truncated floating-point storage formats.
//!
//! A stored value of `T` total bits is produced by narrowing a binary64 to the
//! smallest IEEE format whose exponent range is used for that width
//! (binary64 for 33..=64 bits, binary32 for 17..=32, binary16 for 7..=16) with
//! round-to-nearest-even, then dropping the low mantissa bits so that exactly
//! `T` bits remain. The sign/exponent/mantissa order of the base format is
//! kept, so a packed value is the top `T` bits of the base encoding.
//!
//! Decoding zero-extends the mantissa and widens exactly to binary64.

use half::f16;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FormatError {
    #[error("total width {0} is below the minimum of {min} bits", min = PrecisionSpec::MIN_BITS)]
    TooNarrow(u32),
    #[error("total width {0} exceeds the maximum of {max} bits", max = PrecisionSpec::MAX_BITS)]
    TooWide(u32),
}

/// IEEE interchange format a truncated layout is derived from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BaseFormat {
    Binary16,
    Binary32,
    Binary64,
}

impl BaseFormat {
    pub const fn width(self) -> u32 {
        match self {
            BaseFormat::Binary16 => 16,
            BaseFormat::Binary32 => 32,
            BaseFormat::Binary64 => 64,
        }
    }

    pub const fn exponent_bits(self) -> u32 {
        match self {
            BaseFormat::Binary16 => 5,
            BaseFormat::Binary32 => 8,
            BaseFormat::Binary64 => 11,
        }
    }

    pub const fn mantissa_bits(self) -> u32 {
        self.width() - 1 - self.exponent_bits()
    }

    /// Round `x` to this format (nearest, ties to even) and return its bit pattern.
    /// Values beyond the finite range become infinities.
    pub fn narrow(self, x: f64) -> u64 {
        match self {
            BaseFormat::Binary16 => f16::from_f64(x).to_bits() as u64,
            BaseFormat::Binary32 => (x as f32).to_bits() as u64,
            BaseFormat::Binary64 => x.to_bits(),
        }
    }

    /// Exact widening of a bit pattern in this format to binary64.
    pub fn widen(self, bits: u64) -> f64 {
        match self {
            BaseFormat::Binary16 => f16::from_bits(bits as u16).to_f64(),
            BaseFormat::Binary32 => f32::from_bits(bits as u32) as f64,
            BaseFormat::Binary64 => f64::from_bits(bits),
        }
    }
}

/// Sign/exponent/mantissa budget for a given total storage width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PrecisionSpec {
    total_bits: u8,
    exponent_bits: u8,
    mantissa_bits: u8,
}

impl PrecisionSpec {
    pub const MIN_BITS: u32 = 7;
    pub const MAX_BITS: u32 = 64;

    pub const BINARY16: PrecisionSpec = PrecisionSpec::exact(BaseFormat::Binary16);
    pub const BINARY32: PrecisionSpec = PrecisionSpec::exact(BaseFormat::Binary32);
    pub const BINARY64: PrecisionSpec = PrecisionSpec::exact(BaseFormat::Binary64);

    const fn exact(base: BaseFormat) -> Self {
        PrecisionSpec {
            total_bits: base.width() as u8,
            exponent_bits: base.exponent_bits() as u8,
            mantissa_bits: base.mantissa_bits() as u8,
        }
    }

    pub fn for_width(total_bits: u32) -> Result<Self, FormatError> {
        if total_bits < Self::MIN_BITS {
            return Err(FormatError::TooNarrow(total_bits));
        }
        if total_bits > Self::MAX_BITS {
            return Err(FormatError::TooWide(total_bits));
        }
        let exponent_bits = match total_bits {
            33.. => 11,
            17..=32 => 8,
            _ => 5,
        };
        Ok(PrecisionSpec {
            total_bits: total_bits as u8,
            exponent_bits: exponent_bits as u8,
            mantissa_bits: (total_bits - 1 - exponent_bits) as u8,
        })
    }

    pub const fn total_bits(self) -> u32 {
        self.total_bits as u32
    }

    pub const fn sign_bits(self) -> u32 {
        1
    }

    pub const fn exponent_bits(self) -> u32 {
        self.exponent_bits as u32
    }

    pub const fn mantissa_bits(self) -> u32 {
        self.mantissa_bits as u32
    }

    pub const fn base(self) -> BaseFormat {
        match self.exponent_bits {
            11 => BaseFormat::Binary64,
            8 => BaseFormat::Binary32,
            _ => BaseFormat::Binary16,
        }
    }

    /// Number of mantissa bits dropped from the base format.
    pub const fn dropped_bits(self) -> u32 {
        self.base().mantissa_bits() - self.mantissa_bits()
    }

    /// True when this layout is exactly an IEEE interchange format.
    pub const fn is_ieee(self) -> bool {
        self.dropped_bits() == 0
    }

    /// Truncate a base-format bit pattern to this layout. NaNs keep a set
    /// top mantissa bit so they cannot collapse into infinities.
    pub fn truncate_base_bits(self, base_bits: u64) -> u64 {
        let base = self.base();
        let drop = self.dropped_bits();
        let base_mant_mask = (1u64 << base.mantissa_bits()) - 1;
        let exp_mask = (1u64 << base.exponent_bits()) - 1;
        let exp = (base_bits >> base.mantissa_bits()) & exp_mask;
        let mut packed = base_bits >> drop;
        if exp == exp_mask && base_bits & base_mant_mask != 0 {
            packed |= 1u64 << (self.mantissa_bits() - 1);
        }
        packed
    }

    /// Zero-extend a packed pattern back to the base-format bit pattern.
    pub fn expand_to_base_bits(self, packed: u64) -> u64 {
        packed << self.dropped_bits()
    }
}

/// Shorthand for [`PrecisionSpec::for_width`].
pub fn layout_for(total_bits: u32) -> Result<PrecisionSpec, FormatError> {
    PrecisionSpec::for_width(total_bits)
}

/// One stored value: the low `spec.total_bits()` bits of `bits` are significant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PackedScalar {
    bits: u64,
    spec: PrecisionSpec,
}

impl PackedScalar {
    pub fn from_bits(bits: u64, spec: PrecisionSpec) -> Self {
        let mask = width_mask(spec.total_bits());
        PackedScalar {
            bits: bits & mask,
            spec,
        }
    }

    pub fn bits(&self) -> u64 {
        self.bits
    }

    pub fn spec(&self) -> PrecisionSpec {
        self.spec
    }
}

pub(crate) fn width_mask(width: u32) -> u64 {
    if width >= 64 {
        u64::MAX
    } else {
        (1u64 << width) - 1
    }
}

pub fn encode(x: f64, spec: PrecisionSpec) -> PackedScalar {
    PackedScalar {
        bits: encode_bits(x, spec),
        spec,
    }
}

pub fn decode(p: PackedScalar) -> f64 {
    decode_bits(p.bits, p.spec)
}

#[inline]
pub fn encode_bits(x: f64, spec: PrecisionSpec) -> u64 {
    spec.truncate_base_bits(spec.base().narrow(x))
}

#[inline]
pub fn decode_bits(bits: u64, spec: PrecisionSpec) -> f64 {
    spec.base().widen(spec.expand_to_base_bits(bits))
}

/// `decode(encode(x, spec))`.
#[inline]
pub fn quantize(x: f64, spec: PrecisionSpec) -> f64 {
    decode_bits(encode_bits(x, spec), spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(t: u32) -> PrecisionSpec {
        layout_for(t).unwrap()
    }

    #[test]
    fn table_columns() {
        let s = spec(64);
        assert_eq!(
            (s.sign_bits(), s.exponent_bits(), s.mantissa_bits()),
            (1, 11, 52)
        );
        let s = spec(20);
        assert_eq!(
            (s.sign_bits(), s.exponent_bits(), s.mantissa_bits()),
            (1, 8, 11)
        );
        let s = spec(16);
        assert_eq!(
            (s.sign_bits(), s.exponent_bits(), s.mantissa_bits()),
            (1, 5, 10)
        );
        assert_eq!(spec(32), PrecisionSpec::BINARY32);
        assert!(spec(7).mantissa_bits() == 1);
    }

    #[test]
    fn width_bounds() {
        assert_eq!(layout_for(6), Err(FormatError::TooNarrow(6)));
        assert_eq!(layout_for(65), Err(FormatError::TooWide(65)));
        assert!(layout_for(0).unwrap_err().to_string().contains("minimum"));
    }

    #[test]
    fn one_survives_half() {
        assert_eq!(quantize(1.0, spec(16)), 1.0);
    }

    #[test]
    fn pi_in_seventeen_bits() {
        // binary32 pi = 0x40490FDB; keeping the top 8 mantissa bits gives 1.10010010b * 2
        assert_eq!(quantize(std::f64::consts::PI, spec(17)), 3.140625);
        assert_eq!(quantize(std::f64::consts::PI, spec(32)), 3.1415927410125732);
    }

    #[test]
    fn signed_zero() {
        for t in 7..=64 {
            let q = quantize(-0.0, spec(t));
            assert_eq!(q.to_bits(), (-0.0f64).to_bits(), "T={t}");
        }
    }

    #[test]
    fn binary32_subnormal_is_kept() {
        let x = 2f64.powi(-130);
        let p = encode(x, spec(17));
        // exponent field zero, mantissa bit 19 of 23 survives as bit 4 of 8
        assert_eq!(p.bits(), 1 << 4);
        assert_eq!(decode(p), x);
    }

    #[test]
    fn tenth_in_half() {
        // nearest binary16 to 0.1 is 0x2E66
        let p = encode(0.1, spec(16));
        assert_eq!(p.bits(), 0x2E66);
        assert_eq!(decode(p), 0.0999755859375);
    }

    #[test]
    fn small_widths() {
        assert_eq!(quantize(1.5, spec(7)), 1.5);
        assert_eq!(quantize(1.75, spec(7)), 1.5);
    }

    #[test]
    fn overflow_saturates() {
        assert_eq!(quantize(1e300, spec(32)), f64::INFINITY);
        assert_eq!(quantize(-1e300, spec(20)), f64::NEG_INFINITY);
        assert_eq!(quantize(1e6, spec(16)), f64::INFINITY);
    }

    #[test]
    fn nan_survives_truncation() {
        // payload only in the low mantissa bits would truncate to an infinity
        let nan = f64::from_bits(0x7FF0_0000_0000_0001);
        assert!(nan.is_nan());
        for t in [7, 12, 16, 17, 24, 33, 40, 63] {
            assert!(quantize(nan, spec(t)).is_nan(), "T={t}");
        }
        assert!(quantize(f64::NAN, spec(16)).is_nan());
        assert_eq!(quantize(f64::INFINITY, spec(9)), f64::INFINITY);
    }

    #[test]
    fn packed_scalar_masks_high_bits() {
        let p = PackedScalar::from_bits(u64::MAX, spec(12));
        assert_eq!(p.bits(), 0xFFF);
    }

    #[test]
    fn exact_widths_match_hardware_narrowing() {
        for &x in &[0.1, 1.0 / 3.0, -7.25e-3, 12345.678, 3.0e38] {
            assert_eq!(quantize(x, spec(32)), (x as f32) as f64);
            assert_eq!(quantize(x, spec(64)), x);
        }
    }
}
