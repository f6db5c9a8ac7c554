//! Fixed-width bit fields at arbitrary bit offsets.
//!
//! Bit `k` of a stream lives in byte `k >> 3` at bit position `k & 7`
//! (little-endian within the stream), so consecutive fields are laid out by
//! plain offset addition with no alignment.

use std::fmt::Write as _;

use thiserror::Error;

use crate::fpcodec::width_mask;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BitError {
    #[error("bit range {offset}..{end} exceeds buffer length {len}", end = offset + *width as usize)]
    OutOfBounds {
        offset: usize,
        width: u32,
        len: usize,
    },
    #[error("field width {0} is outside 1..=64")]
    BadWidth(u32),
    #[error("value {value:#x} does not fit in {width} bits")]
    ValueTooWide { value: u64, width: u32 },
}

/// Placement of one fixed-width field inside a bit stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FieldSlot {
    pub offset_bits: usize,
    pub width_bits: u32,
}

impl FieldSlot {
    pub fn new(offset_bits: usize, width_bits: u32) -> Self {
        FieldSlot {
            offset_bits,
            width_bits,
        }
    }

    pub fn end(&self) -> usize {
        self.offset_bits + self.width_bits as usize
    }

    pub fn overlaps(&self, other: &FieldSlot) -> bool {
        self.offset_bits < other.end() && other.offset_bits < self.end()
    }
}

/// An owned, zero-initialised bit stream of fixed length.
#[derive(Clone, PartialEq, Eq, Default)]
pub struct BitBuffer {
    bytes: Vec<u8>,
    len_bits: usize,
}

impl std::fmt::Debug for BitBuffer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BitBuffer")
            .field("len_bits", &self.len_bits)
            .field("bytes", &self.bytes.len())
            .finish()
    }
}

impl BitBuffer {
    pub fn zeroed(len_bits: usize) -> Self {
        BitBuffer {
            bytes: vec![0; len_bits.div_ceil(8)],
            len_bits,
        }
    }

    /// Reuse `storage` as the backing store; it is resized and cleared.
    pub fn from_storage(mut storage: Vec<u8>, len_bits: usize) -> Self {
        storage.clear();
        storage.resize(len_bits.div_ceil(8), 0);
        BitBuffer {
            bytes: storage,
            len_bits,
        }
    }

    /// Wrap raw bytes. Bits past `len_bits` are cleared.
    pub fn from_bytes(mut bytes: Vec<u8>, len_bits: usize) -> Result<Self, BitError> {
        if len_bits > bytes.len() * 8 {
            return Err(BitError::OutOfBounds {
                offset: 0,
                width: 0,
                len: bytes.len() * 8,
            });
        }
        bytes.truncate(len_bits.div_ceil(8));
        let tail = len_bits % 8;
        if tail != 0 {
            if let Some(last) = bytes.last_mut() {
                *last &= (1u8 << tail) - 1;
            }
        }
        Ok(BitBuffer { bytes, len_bits })
    }

    pub fn len_bits(&self) -> usize {
        self.len_bits
    }

    pub fn len_bytes(&self) -> usize {
        self.bytes.len()
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.bytes
    }

    /// Flip one bit. Used for fault injection.
    pub fn flip_bit(&mut self, k: usize) {
        assert!(k < self.len_bits);
        self.bytes[k >> 3] ^= 1 << (k & 7);
    }

    fn check(&self, offset: usize, width: u32) -> Result<(), BitError> {
        if width == 0 || width > 64 {
            return Err(BitError::BadWidth(width));
        }
        if offset + width as usize > self.len_bits {
            return Err(BitError::OutOfBounds {
                offset,
                width,
                len: self.len_bits,
            });
        }
        Ok(())
    }

    pub fn write_bits(&mut self, offset: usize, width: u32, value: u64) -> Result<(), BitError> {
        self.check(offset, width)?;
        if value & !width_mask(width) != 0 {
            return Err(BitError::ValueTooWide { value, width });
        }
        self.put(offset, width, value);
        Ok(())
    }

    pub fn read_bits(&self, offset: usize, width: u32) -> Result<u64, BitError> {
        self.check(offset, width)?;
        Ok(self.get(offset, width))
    }

    pub fn write_slot(&mut self, slot: FieldSlot, value: u64) -> Result<(), BitError> {
        self.write_bits(slot.offset_bits, slot.width_bits, value)
    }

    pub fn read_slot(&self, slot: FieldSlot) -> Result<u64, BitError> {
        self.read_bits(slot.offset_bits, slot.width_bits)
    }

    /// Unchecked-range write used by the layout operators, which compute
    /// offsets from the schema. Bounds are still enforced by slice indexing.
    #[inline]
    pub(crate) fn put(&mut self, offset: usize, width: u32, value: u64) {
        debug_assert!(offset + width as usize <= self.len_bits);
        let mut byte = offset >> 3;
        let mut shift = (offset & 7) as u32;
        let mut remaining = width;
        let mut v = value;
        while remaining > 0 {
            let take = (8 - shift).min(remaining);
            let mask = (((1u16 << take) - 1) as u8) << shift;
            self.bytes[byte] = (self.bytes[byte] & !mask) | (((v as u8) << shift) & mask);
            v = v.checked_shr(take).unwrap_or(0);
            remaining -= take;
            shift = 0;
            byte += 1;
        }
    }

    #[inline]
    pub(crate) fn get(&self, offset: usize, width: u32) -> u64 {
        debug_assert!(offset + width as usize <= self.len_bits);
        let mut byte = offset >> 3;
        let mut shift = (offset & 7) as u32;
        let mut remaining = width;
        let mut out = 0u64;
        let mut filled = 0u32;
        while remaining > 0 {
            let take = (8 - shift).min(remaining);
            let chunk = (self.bytes[byte] >> shift) as u64 & ((1u64 << take) - 1);
            out |= chunk << filled;
            filled += take;
            remaining -= take;
            shift = 0;
            byte += 1;
        }
        out
    }

    /// Copy `width` bits between two buffers.
    #[inline]
    pub(crate) fn copy_from(&mut self, dst: usize, src_buf: &BitBuffer, src: usize, width: u32) {
        let v = src_buf.get(src, width);
        self.put(dst, width, v);
    }

    /// Hex dump, 16 bytes per line, lowercase, space separated.
    pub fn to_hex(&self) -> String {
        let mut out = String::with_capacity(self.bytes.len() * 3);
        for line in self.bytes.chunks(16) {
            for (i, b) in line.iter().enumerate() {
                if i > 0 {
                    out.push(' ');
                }
                let _ = write!(out, "{b:02x}");
            }
            out.push('\n');
        }
        out
    }
}
