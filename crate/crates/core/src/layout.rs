//! Packed particle buffers and the four data-transfer operators:
//! narrowing/widening, AoS/SoA conversion, precision unpack/pack and
//! movement between memory spaces.
//!
//! A buffer is tagged along four axes: layout (AoS or SoA), precision
//! (compressed storage widths or native IEEE widths), the field subset it
//! carries, and the memory space it lives in.
//!
//! AoS: record `r` starts at `r * record_bits`; inside a record, fields are
//! in declaration order and vector lanes are consecutive.
//! SoA: one stream per field in declaration order, each stream holding
//! `arity` lane streams of `count` values in record order.

use std::sync::Arc;

use thiserror::Error;

use crate::arena::{Direction, MemorySpace, TransferLedger, TransferTag};
use crate::bitpack::{BitBuffer, FieldSlot};
use crate::fpcodec::{decode_bits, encode_bits, quantize};
use crate::schema::{KernelAccessSet, RecordSchema};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Layout {
    Aos,
    Soa,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Precision {
    Compressed,
    Native,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LayoutError {
    #[error("expected {expected:?} layout, buffer is {found:?}")]
    WrongLayout { expected: Layout, found: Layout },
    #[error("expected {expected:?} precision, buffer is {found:?}")]
    WrongPrecision {
        expected: Precision,
        found: Precision,
    },
    #[error("narrowing requires a buffer carrying every field")]
    AlreadyNarrowed,
    #[error("unknown field `{0}`")]
    UnknownField(String),
    #[error("buffers disagree: {0}")]
    Mismatch(&'static str),
    #[error("buffer already lives in {0}")]
    SameSpace(MemorySpace),
}

/// Placement of one carried field.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Placement {
    field: usize,
    width: u32,
    arity: u32,
    /// AoS: offset inside a record. SoA: start of the field's stream.
    base: usize,
}

/// A contiguous run of particle records in one of the supported encodings.
#[derive(Debug, Clone, PartialEq)]
pub struct PackedBuffer {
    schema: Arc<RecordSchema>,
    count: usize,
    layout: Layout,
    precision: Precision,
    fields: Vec<usize>,
    writable: Vec<usize>,
    placements: Vec<Placement>,
    record_bits: usize,
    data: BitBuffer,
    home: MemorySpace,
}

impl PackedBuffer {
    /// Zeroed compressed AoS buffer carrying every field.
    pub fn new(schema: Arc<RecordSchema>, count: usize, home: MemorySpace) -> Self {
        let all: Vec<usize> = (0..schema.len()).collect();
        Self::with_shape(
            schema,
            count,
            Layout::Aos,
            Precision::Compressed,
            all.clone(),
            all,
            home,
            Vec::new(),
        )
    }

    #[allow(clippy::too_many_arguments)]
    fn with_shape(
        schema: Arc<RecordSchema>,
        count: usize,
        layout: Layout,
        precision: Precision,
        fields: Vec<usize>,
        writable: Vec<usize>,
        home: MemorySpace,
        storage: Vec<u8>,
    ) -> Self {
        let mut placements = Vec::with_capacity(fields.len());
        let mut acc = 0usize;
        for &f in &fields {
            let decl = schema.field(f);
            let width = match precision {
                Precision::Compressed => decl.stored_width(),
                Precision::Native => decl.native_width(),
            };
            placements.push(Placement {
                field: f,
                width,
                arity: decl.arity,
                base: match layout {
                    Layout::Aos => acc,
                    Layout::Soa => acc * count,
                },
            });
            acc += (width * decl.arity) as usize;
        }
        let record_bits = acc;
        PackedBuffer {
            data: BitBuffer::from_storage(storage, record_bits * count),
            schema,
            count,
            layout,
            precision,
            fields,
            writable,
            placements,
            record_bits,
            home,
        }
    }

    fn reshaped(
        &self,
        layout: Layout,
        precision: Precision,
        fields: Vec<usize>,
        storage: Vec<u8>,
    ) -> Self {
        let writable = self
            .writable
            .iter()
            .copied()
            .filter(|f| fields.contains(f))
            .collect();
        Self::with_shape(
            self.schema.clone(),
            self.count,
            layout,
            precision,
            fields,
            writable,
            self.home,
            storage,
        )
    }

    pub fn schema(&self) -> &Arc<RecordSchema> {
        &self.schema
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    pub fn home(&self) -> MemorySpace {
        self.home
    }

    /// Schema indices of the carried fields, in declaration order.
    pub fn fields(&self) -> &[usize] {
        &self.fields
    }

    /// Fields that [`widen_merge`] copies back into a full buffer.
    pub fn writable(&self) -> &[usize] {
        &self.writable
    }

    pub fn is_full(&self) -> bool {
        self.fields.len() == self.schema.len()
    }

    /// Bits per record for the carried fields at the current precision.
    pub fn record_bits(&self) -> usize {
        self.record_bits
    }

    pub fn data(&self) -> &BitBuffer {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut BitBuffer {
        &mut self.data
    }

    pub fn byte_len(&self) -> usize {
        self.data.len_bytes()
    }

    /// Give back the backing storage, e.g. to a scratch pool.
    pub fn into_storage(self) -> Vec<u8> {
        self.data.into_bytes()
    }

    /// Position of schema field `field` among the carried fields.
    pub fn position(&self, field: usize) -> Option<usize> {
        self.fields.iter().position(|&f| f == field)
    }

    pub fn position_of(&self, name: &str) -> Option<usize> {
        self.schema.index_of(name).and_then(|f| self.position(f))
    }

    /// Bit slot of lane `lane` of carried field `pos` in record `record`.
    #[inline]
    pub fn slot(&self, pos: usize, record: usize, lane: u32) -> FieldSlot {
        let p = &self.placements[pos];
        debug_assert!(record < self.count && lane < p.arity);
        let offset = match self.layout {
            Layout::Aos => record * self.record_bits + p.base + (lane * p.width) as usize,
            Layout::Soa => p.base + (lane as usize * self.count + record) * p.width as usize,
        };
        FieldSlot::new(offset, p.width)
    }

    #[inline]
    pub fn raw(&self, pos: usize, record: usize, lane: u32) -> u64 {
        let s = self.slot(pos, record, lane);
        self.data.get(s.offset_bits, s.width_bits)
    }

    #[inline]
    pub fn set_raw(&mut self, pos: usize, record: usize, lane: u32, bits: u64) {
        let s = self.slot(pos, record, lane);
        self.data.put(s.offset_bits, s.width_bits, bits);
    }

    /// Value of a floating lane widened to binary64. Integer fields are
    /// returned as their signed value converted to f64.
    #[inline]
    pub fn value(&self, pos: usize, record: usize, lane: u32) -> f64 {
        let bits = self.raw(pos, record, lane);
        let decl = self.schema.field(self.placements[pos].field);
        match (decl.precision(), self.precision) {
            (Some(spec), Precision::Compressed) => decode_bits(bits, spec),
            (Some(spec), Precision::Native) => spec.base().widen(bits),
            (None, _) => bits as i64 as f64,
        }
    }

    /// Store `x` into a floating lane, quantized through the field's storage
    /// format regardless of the buffer's precision tag.
    #[inline]
    pub fn set_value(&mut self, pos: usize, record: usize, lane: u32, x: f64) {
        let decl = self.schema.field(self.placements[pos].field);
        let bits = match (decl.precision(), self.precision) {
            (Some(spec), Precision::Compressed) => encode_bits(x, spec),
            (Some(spec), Precision::Native) => spec.base().narrow(quantize(x, spec)),
            (None, _) => x as i64 as u64,
        };
        self.set_raw(pos, record, lane, bits);
    }

    pub fn int_value(&self, pos: usize, record: usize) -> i64 {
        self.raw(pos, record, 0) as i64
    }

    pub fn set_int(&mut self, pos: usize, record: usize, v: i64) {
        self.set_raw(pos, record, 0, v as u64);
    }

    fn arity(&self, pos: usize) -> u32 {
        self.placements[pos].arity
    }

    fn expect_layout(&self, expected: Layout) -> Result<(), LayoutError> {
        if self.layout != expected {
            return Err(LayoutError::WrongLayout {
                expected,
                found: self.layout,
            });
        }
        Ok(())
    }

    fn expect_precision(&self, expected: Precision) -> Result<(), LayoutError> {
        if self.precision != expected {
            return Err(LayoutError::WrongPrecision {
                expected,
                found: self.precision,
            });
        }
        Ok(())
    }

    /// Copy every carried lane of `src` (same fields and precision) into self.
    fn copy_lanes_from(&mut self, src: &PackedBuffer) {
        debug_assert_eq!(self.fields, src.fields);
        for pos in 0..self.fields.len() {
            for lane in 0..self.arity(pos) {
                for r in 0..self.count {
                    let from = src.slot(pos, r, lane);
                    let to = self.slot(pos, r, lane);
                    self.data
                        .copy_from(to.offset_bits, &src.data, from.offset_bits, to.width_bits);
                }
            }
        }
    }
}

/// Project onto the fields the kernel reads or writes (operator N).
pub fn narrow(buf: &PackedBuffer, access: &KernelAccessSet) -> Result<PackedBuffer, LayoutError> {
    narrow_in(buf, access, Vec::new())
}

pub fn narrow_in(
    buf: &PackedBuffer,
    access: &KernelAccessSet,
    storage: Vec<u8>,
) -> Result<PackedBuffer, LayoutError> {
    if !buf.is_full() {
        return Err(LayoutError::AlreadyNarrowed);
    }
    let lookup = |name: &String| {
        buf.schema
            .index_of(name)
            .ok_or_else(|| LayoutError::UnknownField(name.clone()))
    };
    let mut fields = access
        .reads
        .iter()
        .chain(&access.writes)
        .map(lookup)
        .collect::<Result<Vec<_>, _>>()?;
    fields.sort_unstable();
    fields.dedup();
    let mut writable = access
        .writes
        .iter()
        .map(lookup)
        .collect::<Result<Vec<_>, _>>()?;
    writable.sort_unstable();

    let mut out = buf.reshaped(buf.layout, buf.precision, fields.clone(), storage);
    out.writable = writable;
    for (pos, &f) in fields.iter().enumerate() {
        let src_pos = buf.position(f).expect("full buffer carries every field");
        for lane in 0..out.arity(pos) {
            for r in 0..buf.count {
                let from = buf.slot(src_pos, r, lane);
                let to = out.slot(pos, r, lane);
                out.data
                    .copy_from(to.offset_bits, &buf.data, from.offset_bits, to.width_bits);
            }
        }
    }
    Ok(out)
}

/// Merge the written fields of `narrowed` back into a copy of `original`
/// (operator N^T). Layouts may differ; precision and shape must agree.
pub fn widen_merge(
    narrowed: &PackedBuffer,
    original: &PackedBuffer,
) -> Result<PackedBuffer, LayoutError> {
    let mut out = original.clone();
    merge_into(narrowed, &mut out)?;
    Ok(out)
}

/// In-place form of [`widen_merge`].
pub fn merge_into(narrowed: &PackedBuffer, original: &mut PackedBuffer) -> Result<(), LayoutError> {
    if narrowed.schema != original.schema {
        return Err(LayoutError::Mismatch("schema"));
    }
    if narrowed.count != original.count {
        return Err(LayoutError::Mismatch("record count"));
    }
    if narrowed.precision != original.precision {
        return Err(LayoutError::Mismatch("precision"));
    }
    for &f in &narrowed.writable {
        let src = narrowed.position(f).expect("writable fields are carried");
        let dst = original
            .position(f)
            .ok_or(LayoutError::Mismatch("target lacks a written field"))?;
        for lane in 0..narrowed.arity(src) {
            for r in 0..narrowed.count {
                let from = narrowed.slot(src, r, lane);
                let to = original.slot(dst, r, lane);
                original.data.copy_from(
                    to.offset_bits,
                    &narrowed.data,
                    from.offset_bits,
                    to.width_bits,
                );
            }
        }
    }
    Ok(())
}

/// Permute AoS records into per-field streams (operator C).
pub fn aos_to_soa(buf: &PackedBuffer) -> Result<PackedBuffer, LayoutError> {
    aos_to_soa_in(buf, Vec::new())
}

pub fn aos_to_soa_in(buf: &PackedBuffer, storage: Vec<u8>) -> Result<PackedBuffer, LayoutError> {
    buf.expect_layout(Layout::Aos)?;
    let mut out = buf.reshaped(Layout::Soa, buf.precision, buf.fields.clone(), storage);
    out.copy_lanes_from(buf);
    Ok(out)
}

/// Inverse of [`aos_to_soa`].
pub fn soa_to_aos(buf: &PackedBuffer) -> Result<PackedBuffer, LayoutError> {
    soa_to_aos_in(buf, Vec::new())
}

pub fn soa_to_aos_in(buf: &PackedBuffer, storage: Vec<u8>) -> Result<PackedBuffer, LayoutError> {
    buf.expect_layout(Layout::Soa)?;
    let mut out = buf.reshaped(Layout::Aos, buf.precision, buf.fields.clone(), storage);
    out.copy_lanes_from(buf);
    Ok(out)
}

/// Expand every stored value to its base IEEE width (operator U).
pub fn unpack(buf: &PackedBuffer) -> Result<PackedBuffer, LayoutError> {
    unpack_in(buf, Vec::new())
}

pub fn unpack_in(buf: &PackedBuffer, storage: Vec<u8>) -> Result<PackedBuffer, LayoutError> {
    buf.expect_precision(Precision::Compressed)?;
    Ok(convert_precision(buf, Precision::Native, storage))
}

/// Truncate native values back to their storage format (operator U^T).
pub fn pack(buf: &PackedBuffer) -> Result<PackedBuffer, LayoutError> {
    pack_in(buf, Vec::new())
}

pub fn pack_in(buf: &PackedBuffer, storage: Vec<u8>) -> Result<PackedBuffer, LayoutError> {
    buf.expect_precision(Precision::Native)?;
    Ok(convert_precision(buf, Precision::Compressed, storage))
}

fn convert_precision(buf: &PackedBuffer, to: Precision, storage: Vec<u8>) -> PackedBuffer {
    let mut out = buf.reshaped(buf.layout, to, buf.fields.clone(), storage);
    for (pos, &f) in buf.fields.iter().enumerate() {
        let spec = buf.schema.field(f).precision();
        for lane in 0..buf.arity(pos) {
            for r in 0..buf.count {
                let bits = buf.raw(pos, r, lane);
                let bits = match (spec, to) {
                    (Some(s), Precision::Native) => s.expand_to_base_bits(bits),
                    (Some(s), Precision::Compressed) => s.truncate_base_bits(bits),
                    (None, _) => bits,
                };
                out.set_raw(pos, r, lane, bits);
            }
        }
    }
    out
}

/// Copy a buffer into another memory space and account the transfer
/// (operator M). The ledger grows by the buffer's byte length.
pub fn move_to(
    buf: &PackedBuffer,
    to: MemorySpace,
    ledger: &TransferLedger,
    tag: &TransferTag,
) -> Result<PackedBuffer, LayoutError> {
    move_in(buf, to, ledger, tag, Vec::new())
}

pub fn move_in(
    buf: &PackedBuffer,
    to: MemorySpace,
    ledger: &TransferLedger,
    tag: &TransferTag,
    mut storage: Vec<u8>,
) -> Result<PackedBuffer, LayoutError> {
    let dir = Direction::between(buf.home, to).ok_or(LayoutError::SameSpace(to))?;
    storage.clear();
    storage.extend_from_slice(buf.data.as_bytes());
    let mut out = buf.clone_shape();
    out.data = BitBuffer::from_bytes(storage, buf.data.len_bits()).expect("same length");
    out.home = to;
    ledger.record(tag, dir, buf.data.len_bytes() as u64);
    Ok(out)
}

impl PackedBuffer {
    fn clone_shape(&self) -> PackedBuffer {
        PackedBuffer {
            schema: self.schema.clone(),
            count: self.count,
            layout: self.layout,
            precision: self.precision,
            fields: self.fields.clone(),
            writable: self.writable.clone(),
            placements: self.placements.clone(),
            record_bits: self.record_bits,
            data: BitBuffer::default(),
            home: self.home,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arena::LinkModel;
    use crate::schema::{parse_document, particle_document};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_fill(buf: &mut PackedBuffer, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for pos in 0..buf.fields().len() {
            for lane in 0..buf.arity(pos) {
                for r in 0..buf.count() {
                    let x: f64 = rng.gen_range(-100.0..100.0);
                    buf.set_value(pos, r, lane, x);
                }
            }
        }
    }

    fn particles(count: usize) -> PackedBuffer {
        let doc = particle_document();
        let mut b = PackedBuffer::new(Arc::new(doc.schema), count, MemorySpace::Host);
        random_fill(&mut b, 1);
        b
    }

    fn kernel(name: &str) -> KernelAccessSet {
        particle_document()
            .kernels
            .into_iter()
            .find(|k| k.kernel == name)
            .unwrap()
    }

    #[test]
    fn drift_view_size() {
        let b = particles(64);
        let n = narrow(&b, &kernel("drift")).unwrap();
        assert_eq!(n.record_bits(), 96 + 192);
        assert_eq!(n.data().len_bits(), 64 * (96 + 192));
        assert_eq!(n.writable(), &[0]);
    }

    #[test]
    fn narrow_everything_is_a_copy() {
        let b = particles(5);
        let names: Vec<&str> = b
            .schema()
            .fields()
            .iter()
            .map(|f| f.name.as_str())
            .collect();
        let all = KernelAccessSet::new("all", names.iter().copied(), []);
        let n = narrow(&b, &all).unwrap();
        assert_eq!(n.data().as_bytes(), b.data().as_bytes());
    }

    #[test]
    fn narrow_matches_slots() {
        let b = particles(2);
        let k = kernel("kick");
        let n = narrow(&b, &k).unwrap();
        for name in ["v", "u", "a", "du"] {
            let f = b.schema().index_of(name).unwrap();
            let src = b.position(f).unwrap();
            let dst = n.position(f).unwrap();
            for r in 0..2 {
                for lane in 0..b.schema().field(f).arity {
                    assert_eq!(n.raw(dst, r, lane), b.raw(src, r, lane));
                    // direct extraction from the record layout
                    let s = b.schema().lane_slot(f, lane);
                    let direct = b
                        .data()
                        .read_bits(r * 704 + s.offset_bits, s.width_bits)
                        .unwrap();
                    assert_eq!(n.raw(dst, r, lane), direct);
                }
            }
        }
        assert!(narrow(&n, &k).is_err());
        let bad = KernelAccessSet::new("bad", ["nope"], []);
        assert_eq!(
            narrow(&b, &bad).unwrap_err(),
            LayoutError::UnknownField("nope".into())
        );
    }

    #[test]
    fn merge_only_touches_writes() {
        let b = particles(8);
        let mut n = narrow(&b, &kernel("drift")).unwrap();
        assert_eq!(widen_merge(&n, &b).unwrap(), b);
        let x = n.position_of("x").unwrap();
        for r in 0..8 {
            n.set_value(x, r, 1, 1234.5);
        }
        let merged = widen_merge(&n, &b).unwrap();
        let xf = b.schema().index_of("x").unwrap();
        for pos in 0..b.fields().len() {
            for r in 0..8 {
                for lane in 0..b.arity(pos) {
                    let changed = merged.raw(pos, r, lane) != b.raw(pos, r, lane);
                    assert_eq!(changed, b.fields()[pos] == xf && lane == 1);
                }
            }
        }
        let empty = KernelAccessSet::new("ro", ["v"], []);
        let mut ro = narrow(&b, &empty).unwrap();
        random_fill(&mut ro, 9);
        assert_eq!(widen_merge(&ro, &b).unwrap(), b);
        assert!(matches!(
            widen_merge(&n, &particles(3)),
            Err(LayoutError::Mismatch(_))
        ));
    }

    #[test]
    fn soa_stream_order() {
        let doc = parse_document("field a : f32; field b : f32;").unwrap();
        let mut buf = PackedBuffer::new(Arc::new(doc.schema), 2, MemorySpace::Host);
        for (r, (a, b)) in [(1.0, 2.0), (3.0, 4.0)].into_iter().enumerate() {
            buf.set_value(0, r, 0, a);
            buf.set_value(1, r, 0, b);
        }
        let soa = aos_to_soa(&buf).unwrap();
        let words: Vec<f32> = soa
            .data()
            .as_bytes()
            .chunks(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        assert_eq!(words, vec![1.0, 3.0, 2.0, 4.0]);
        assert!(aos_to_soa(&soa).is_err());
        assert!(soa_to_aos(&buf).is_err());
    }

    #[test]
    fn single_record_soa_is_identity() {
        let b = particles(1);
        let soa = aos_to_soa(&b).unwrap();
        assert_eq!(soa.data().as_bytes(), b.data().as_bytes());
    }

    #[test]
    fn soa_round_trip() {
        let b = particles(64);
        let back = soa_to_aos(&aos_to_soa(&b).unwrap()).unwrap();
        assert_eq!(back, b);
    }

    #[test]
    fn unpack_without_truncation_is_copy() {
        let b = particles(4);
        let u = unpack(&b).unwrap();
        assert_eq!(u.data().as_bytes(), b.data().as_bytes());
        assert_eq!(u.precision(), Precision::Native);
        assert!(unpack(&u).is_err());
        assert!(pack(&b).is_err());
    }

    #[test]
    fn unpack_truncated_pi() {
        let doc = parse_document("field p : f64 @truncate(17);").unwrap();
        let mut b = PackedBuffer::new(Arc::new(doc.schema), 1, MemorySpace::Host);
        b.set_value(0, 0, 0, std::f64::consts::PI);
        assert_eq!(b.data().len_bits(), 17);
        let u = unpack(&b).unwrap();
        assert_eq!(u.data().len_bits(), 32);
        assert_eq!(f32::from_bits(u.raw(0, 0, 0) as u32), 3.140625);
        assert_eq!(pack(&u).unwrap(), b);
    }

    #[test]
    fn native_store_quantizes() {
        let doc = parse_document("field p : f64 @truncate(20);").unwrap();
        let b = PackedBuffer::new(Arc::new(doc.schema), 1, MemorySpace::Host);
        let mut u = unpack(&b).unwrap();
        u.set_value(0, 0, 0, std::f64::consts::PI);
        let spec = u.schema().field(0).precision().unwrap();
        assert_eq!(u.value(0, 0, 0), quantize(std::f64::consts::PI, spec));
    }

    #[test]
    fn move_accounts_bytes() {
        let b = particles(64);
        let ledger = TransferLedger::new(LinkModel::default());
        let tag = TransferTag::new("test", "full");
        let d = move_to(&b, MemorySpace::Device, &ledger, &tag).unwrap();
        assert_eq!(d.home(), MemorySpace::Device);
        assert_eq!(d.data().as_bytes(), b.data().as_bytes());
        assert_eq!(ledger.snapshot().h2d.bytes, 64 * 704 / 8);
        let h = move_to(&d, MemorySpace::Host, &ledger, &tag).unwrap();
        assert_eq!(h, b);
        assert_eq!(ledger.snapshot().total_bytes(), 2 * 5632);
        assert_eq!(
            move_to(&h, MemorySpace::Host, &ledger, &tag).unwrap_err(),
            LayoutError::SameSpace(MemorySpace::Host)
        );
    }

    #[test]
    fn ints_survive_every_operator() {
        let mut b = particles(3);
        let id = b.position_of("id").unwrap();
        for r in 0..3 {
            b.set_int(id, r, -(r as i64) - 7);
        }
        let there = pack(&soa_to_aos(&unpack(&aos_to_soa(&b).unwrap()).unwrap()).unwrap()).unwrap();
        assert_eq!(there.int_value(id, 2), -9);
        assert_eq!(there.value(id, 0, 0), -7.0);
    }
}
