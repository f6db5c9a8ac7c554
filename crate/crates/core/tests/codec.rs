use half::f16;
use proptest::prelude::*;

use soaforge::fpcodec::{
    decode_bits, encode_bits, layout_for, quantize, BaseFormat, PrecisionSpec,
};

/// Every finite binary16 value, ascending.
fn all_finite_f16() -> Vec<f64> {
    let mut v: Vec<f64> = (0u16..=u16::MAX)
        .map(f16::from_bits)
        .filter(|h| h.is_finite())
        .map(f64::from)
        .collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

/// Nearest binary16 value by exhaustive comparison, ties to the even mantissa.
fn nearest_f16(table: &[f64], x: f64) -> f64 {
    let mut best = table[0];
    let mut best_d = (x - best).abs();
    for &c in table {
        let d = (x - c).abs();
        let even = f16::from_f64(c).to_bits() & 1 == 0;
        if d < best_d || (d == best_d && even) {
            best = c;
            best_d = d;
        }
    }
    best
}

#[test]
fn binary16_matches_exhaustive_nearest() {
    let table = all_finite_f16();
    let spec = PrecisionSpec::BINARY16;
    let mut rng_state = 0x9e37_79b9_7f4a_7c15u64;
    for _ in 0..3000 {
        rng_state = rng_state
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        let mag = ((rng_state >> 11) as f64 / (1u64 << 53) as f64) * 60000.0;
        let scale = 2f64.powi(-((rng_state & 31) as i32));
        let x = if rng_state & (1 << 40) != 0 {
            -mag * scale
        } else {
            mag * scale
        };
        let want = nearest_f16(&table, x);
        let got = quantize(x, spec);
        if want == 0.0 {
            assert_eq!(got.abs(), 0.0, "{x}");
        } else {
            assert_eq!(got, want, "{x}");
        }
    }
}

#[test]
fn exponent_regimes() {
    for t in 7..=64 {
        let s = layout_for(t).unwrap();
        let e = match t {
            33..=64 => 11,
            17..=32 => 8,
            _ => 5,
        };
        assert_eq!(
            (s.sign_bits(), s.exponent_bits(), s.mantissa_bits()),
            (1, e, t - 1 - e),
            "T={t}"
        );
    }
    assert!(layout_for(6).is_err());
    assert!(layout_for(65).is_err());
}

fn spec_strategy() -> impl Strategy<Value = PrecisionSpec> {
    (7u32..=64).prop_map(|t| layout_for(t).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn quantize_is_idempotent(x in any::<f64>(), spec in spec_strategy()) {
        let q = quantize(x, spec);
        let qq = quantize(q, spec);
        prop_assert!(q.to_bits() == qq.to_bits() || (q.is_nan() && qq.is_nan()));
    }

    #[test]
    fn encode_fits_width(x in any::<f64>(), spec in spec_strategy()) {
        let bits = encode_bits(x, spec);
        if spec.total_bits() < 64 {
            prop_assert!(bits >> spec.total_bits() == 0);
        }
        let back = decode_bits(bits, spec);
        prop_assert!(back.to_bits() == quantize(x, spec).to_bits() || back.is_nan());
    }

    #[test]
    fn more_bits_never_hurt_within_a_base(x in -1e30f64..1e30, t in 7u32..64) {
        let a = layout_for(t).unwrap();
        let b = layout_for(t + 1).unwrap();
        prop_assume!(a.base() == b.base());
        let ea = (quantize(x, a) - x).abs();
        let eb = (quantize(x, b) - x).abs();
        prop_assert!(eb <= ea, "T={t}: {eb:e} > {ea:e}");
    }

    #[test]
    fn relative_error_bound(mag in 6.103515625e-5f64..65504.0, neg in any::<bool>(), spec in spec_strategy()) {
        let x = if neg { -mag } else { mag };
        let q = quantize(x, spec);
        let bound = 2f64.powi(1 - spec.mantissa_bits() as i32);
        prop_assert!(((q - x) / x).abs() <= bound);
        prop_assert!(q.abs() <= x.abs() + x.abs() * 2f64.powi(-(spec.base().mantissa_bits() as i32) - 1));
    }

    #[test]
    fn ieee_widths_agree_with_hardware(x in any::<f64>()) {
        prop_assert_eq!(quantize(x, PrecisionSpec::BINARY64).to_bits(), x.to_bits());
        let f = x as f32;
        let q = quantize(x, PrecisionSpec::BINARY32);
        prop_assert!(q.to_bits() == (f as f64).to_bits() || (q.is_nan() && f.is_nan()));
        prop_assert_eq!(BaseFormat::Binary64.narrow(x), x.to_bits());
    }

    #[test]
    fn sign_is_preserved(x in any::<f64>(), spec in spec_strategy()) {
        prop_assume!(!x.is_nan());
        prop_assert_eq!(quantize(x, spec).is_sign_negative(), x.is_sign_negative());
    }
}
