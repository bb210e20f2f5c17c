//! LSB-first bit packing.
//!
//! Bit `i` of the stream is bit `i % 8` of byte `i / 8`. Multi-bit fields are
//! written least-significant bit first.

use crate::error::{Error, Result};

#[derive(Debug, Default, Clone)]
pub struct BitWriter {
    bytes: Vec<u8>,
    bit_len: usize,
}

impl BitWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bit_len(&self) -> usize {
        self.bit_len
    }

    pub fn write_bit(&mut self, bit: bool) {
        if self.bit_len.is_multiple_of(8) {
            self.bytes.push(0);
        }
        if bit {
            let last = self.bytes.len() - 1;
            self.bytes[last] |= 1 << (self.bit_len % 8);
        }
        self.bit_len += 1;
    }

    /// Writes the low `width` bits of `value`, LSB first.
    pub fn write_bits(&mut self, value: u64, width: u32) {
        debug_assert!(width <= 64);
        debug_assert!(width == 64 || value >> width == 0, "{value} does not fit {width} bits");
        for b in 0..width {
            self.write_bit((value >> b) & 1 == 1);
        }
    }

    pub fn write_f32(&mut self, v: f32) {
        self.write_bits(u64::from(v.to_bits()), 32);
    }

    /// Pads with zero bits to the next byte boundary; returns the pad width.
    pub fn align(&mut self) -> usize {
        let pad = (8 - self.bit_len % 8) % 8;
        self.bit_len += pad;
        pad
    }

    pub fn into_bytes(mut self) -> Vec<u8> {
        self.align();
        self.bytes
    }
}

#[derive(Debug, Clone)]
pub struct BitReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> BitReader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub fn bit_pos(&self) -> usize {
        self.pos
    }

    pub fn byte_offset(&self) -> usize {
        self.pos / 8
    }

    pub fn remaining_bits(&self) -> usize {
        self.bytes.len() * 8 - self.pos
    }

    /// Fails unless at least `bits` more bits are available.
    pub fn require(&self, bits: usize, what: &str) -> Result<()> {
        if self.remaining_bits() < bits {
            return Err(Error::format(
                self.byte_offset(),
                format!("truncated {what}: need {bits} bits, {} left", self.remaining_bits()),
            ));
        }
        Ok(())
    }

    pub fn read_bit(&mut self) -> Result<bool> {
        self.require(1, "stream")?;
        let bit = (self.bytes[self.pos / 8] >> (self.pos % 8)) & 1 == 1;
        self.pos += 1;
        Ok(bit)
    }

    pub fn read_bits(&mut self, width: u32) -> Result<u64> {
        debug_assert!(width <= 64);
        self.require(width as usize, "field")?;
        let mut v = 0u64;
        for b in 0..width {
            if self.read_bit()? {
                v |= 1 << b;
            }
        }
        Ok(v)
    }

    pub fn read_f32(&mut self) -> Result<f32> {
        Ok(f32::from_bits(self.read_bits(32)? as u32))
    }

    /// Skips to the next byte boundary, requiring the skipped bits to be zero.
    pub fn align_zero(&mut self) -> Result<usize> {
        let pad = (8 - self.pos % 8) % 8;
        let start = self.byte_offset();
        if self.read_bits(pad as u32)? != 0 {
            return Err(Error::format(start, "non-zero padding bits"));
        }
        Ok(pad)
    }
}

/// Bits needed to represent every value in `0..=max`.
pub fn width_for(max: u64) -> u32 {
    64 - max.leading_zeros()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn lsb_first_layout() {
        let mut w = BitWriter::new();
        w.write_bits(0b101, 3);
        w.write_bits(0x1f, 5);
        w.write_bit(true);
        assert_eq!(w.into_bytes(), vec![0b1111_1101, 0b0000_0001]);
    }

    #[test]
    fn truncation_is_reported_with_offset() {
        let bytes = [0xffu8; 2];
        let mut r = BitReader::new(&bytes);
        r.read_bits(12).unwrap();
        match r.read_bits(8) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn widths() {
        assert_eq!(width_for(0), 0);
        assert_eq!(width_for(1), 1);
        assert_eq!(width_for(4), 3);
        assert_eq!(width_for(255), 8);
    }

    proptest! {
        #[test]
        fn fields_round_trip(fields in proptest::collection::vec((any::<u64>(), 0u32..=64), 0..40)) {
            let mut w = BitWriter::new();
            let masked: Vec<(u64, u32)> = fields
                .iter()
                .map(|&(v, width)| (if width == 64 { v } else { v & ((1u64 << width) - 1) }, width))
                .collect();
            for &(v, width) in &masked {
                w.write_bits(v, width);
            }
            let bytes = w.into_bytes();
            let mut r = BitReader::new(&bytes);
            for &(v, width) in &masked {
                prop_assert_eq!(r.read_bits(width).unwrap(), v);
            }
            prop_assert!(r.align_zero().is_ok());
            prop_assert_eq!(r.remaining_bits(), 0);
        }
    }
}
