//! Browser bindings for three interactive views over `soaforge`:
//! a bit-format explorer, a truncation error curve and a per-kernel
//! transfer profile.

use std::sync::Arc;

use wasm_bindgen::prelude::*;

use soaforge::arena::{Direction, Interconnect, LinkModel};
use soaforge::fpcodec::{encode_bits, layout_for, quantize};
use soaforge::pipelines::{
    run_variant, AccessTable, ExecutionMode, PipelineConfig, PipelineVariant, Population,
};
use soaforge::schema::particle_document;
use soaforge::sph::{self, KernelKind};
use soaforge::study;

fn js_err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

/// How one value is stored at a given width.
#[wasm_bindgen]
#[derive(Debug, Clone, PartialEq)]
pub struct BitView {
    sign: String,
    exponent: String,
    mantissa: String,
    stored: f64,
    rel_error: f64,
}

#[wasm_bindgen]
impl BitView {
    #[wasm_bindgen(getter)]
    pub fn sign(&self) -> String {
        self.sign.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn exponent(&self) -> String {
        self.exponent.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn mantissa(&self) -> String {
        self.mantissa.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn stored(&self) -> f64 {
        self.stored
    }

    /// `|stored - x| / |x|`, zero when both are zero.
    #[wasm_bindgen(getter, js_name = relError)]
    pub fn rel_error(&self) -> f64 {
        self.rel_error
    }
}

fn bit_string(bits: u64, width: u32) -> String {
    (0..width)
        .rev()
        .map(|i| if bits >> i & 1 == 1 { '1' } else { '0' })
        .collect()
}

/// Split the `width`-bit encoding of `x` into its sign, exponent and
/// mantissa bit strings.
#[wasm_bindgen(js_name = exploreBits)]
pub fn explore_bits(x: f64, width: u32) -> Result<BitView, JsError> {
    let spec = layout_for(width).map_err(js_err)?;
    let bits = encode_bits(x, spec);
    let m = spec.mantissa_bits();
    let e = spec.exponent_bits();
    let stored = quantize(x, spec);
    let rel_error = if x == stored {
        0.0
    } else {
        ((stored - x) / x).abs()
    };
    Ok(BitView {
        sign: bit_string(bits >> (m + e), 1),
        exponent: bit_string(bits >> m, e),
        mantissa: bit_string(bits, m),
        stored,
        rel_error,
    })
}

/// Relative RMS acceleration error for each width in `widths`, over
/// `particles` random particles in buffers of 64.
#[wasm_bindgen(js_name = truncationCurve)]
pub fn truncation_curve(
    particles: usize,
    seed: u64,
    widths: Vec<u32>,
) -> Result<Vec<f64>, JsError> {
    let doc = particle_document();
    let states = sph::generate(particles, 64, seed, 1e-3).map_err(js_err)?;
    let rows = study::truncation_study(
        &doc.schema,
        &states,
        &widths,
        &AccessTable::from_sets(&doc.kernels),
    )
    .map_err(js_err)?;
    Ok(rows.into_iter().map(|r| r.rmse_rel).collect())
}

/// Bytes moved per kernel for one variant and mode, with modeled transfer
/// time. Laid out as `[h2d_bytes, d2h_bytes, modeled_s]` per kernel in
/// timestep order; the whole-step figure follows in the same format, so the
/// result has 15 entries. In-place runs report only the whole step.
#[wasm_bindgen(js_name = transferProfile)]
pub fn transfer_profile(
    particles: usize,
    variant: &str,
    mode: &str,
    width: u32,
    latency_s: f64,
    bandwidth: f64,
) -> Result<Vec<f64>, JsError> {
    let variant: PipelineVariant = variant.parse().map_err(|e: String| JsError::new(&e))?;
    let mode: ExecutionMode = mode.parse().map_err(|e: String| JsError::new(&e))?;
    if !(latency_s >= 0.0 && bandwidth > 0.0) {
        return Err(JsError::new("latency must be >= 0 and bandwidth > 0"));
    }
    let doc = particle_document();
    let schema = doc
        .schema
        .with_uniform_truncation(width, &study::UNTRUNCATED)
        .map_err(js_err)?;
    let states = sph::generate(particles, 64, 1, 1e-3).map_err(js_err)?;
    let pop = Population::from_states(Arc::new(schema), &states);
    let link = LinkModel {
        latency_s,
        bandwidth_bytes_per_s: bandwidth,
    };
    let ic = Interconnect::new(link);
    let (_, m) = run_variant(
        &PipelineConfig::new(variant, mode),
        &pop,
        &AccessTable::from_sets(&doc.kernels),
        &ic,
    )
    .map_err(js_err)?;
    let rows = ic.ledger.rows();
    let mut out = Vec::with_capacity(15);
    for k in KernelKind::TIMESTEP {
        let tag = format!("{mode}/{}", k.name());
        let sum = |dir: Direction| -> (u64, u64) {
            rows.iter()
                .filter(|r| r.direction == dir && r.tag.kernel == tag)
                .fold((0, 0), |(b, n), r| (b + r.bytes, n + r.transfers))
        };
        let (h, hn) = sum(Direction::HostToDevice);
        let (d, dn) = sum(Direction::DeviceToHost);
        out.extend([h as f64, d as f64, link.time(hn + dn, h + d)]);
    }
    out.extend([
        m.ledger.h2d.bytes as f64,
        m.ledger.d2h.bytes as f64,
        m.ledger.modeled_time_s,
    ]);
    Ok(out)
}

/// Variant names accepted by [`transfer_profile`].
#[wasm_bindgen(js_name = variantNames)]
pub fn variant_names() -> Vec<String> {
    PipelineVariant::ALL
        .iter()
        .map(|v| v.name().to_string())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bits_of_one_at_sixteen() {
        let v = explore_bits(1.0, 16).unwrap();
        assert_eq!(v.sign(), "0");
        assert_eq!(v.exponent(), "01111");
        assert_eq!(v.mantissa(), "0000000000");
        assert_eq!(v.stored(), 1.0);
        assert_eq!(v.rel_error(), 0.0);
    }

    #[test]
    fn pi_at_seventeen() {
        let v = explore_bits(std::f64::consts::PI, 17).unwrap();
        assert_eq!(v.exponent(), "10000000");
        assert_eq!(v.mantissa(), "10010010");
        assert_eq!(v.stored(), 3.140625);
    }

    #[test]
    fn curve_starts_at_zero() {
        let c = truncation_curve(256, 1, vec![64, 32, 16]).unwrap();
        assert_eq!(c.len(), 3);
        assert_eq!(c[0], 0.0);
        assert!(c[1] < c[2]);
    }

    #[test]
    fn streaming_profile_sums_to_total() {
        let p = transfer_profile(256, "dev-soa", "streaming", 32, 5e-6, 64e9).unwrap();
        assert_eq!(p.len(), 15);
        let h2d: f64 = (0..4).map(|k| p[3 * k]).sum();
        assert_eq!(h2d, p[12]);
        // kick moves v, u, a, du: 8 binary32 lanes per particle
        assert_eq!(p[6], 256.0 * 32.0);
        let inplace = transfer_profile(256, "dev-soa", "inplace", 32, 5e-6, 64e9).unwrap();
        assert_eq!(inplace[12], 256.0 * 88.0);
        assert_eq!(inplace[6], 0.0);
    }

    #[test]
    fn variants_listed() {
        assert_eq!(variant_names().len(), 8);
    }
}
