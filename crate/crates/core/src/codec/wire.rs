//! Per-layer record format.
//!
//! A record is a bit stream (LSB-first within bytes, see [`super::bits`]):
//!
//! | field              | bits | notes                                     |
//! |--------------------|------|-------------------------------------------|
//! | magic              | 8    | `0xA7`                                    |
//! | layer_id           | 16   |                                           |
//! | kind               | 2    | 0 conv, 1 fully connected, 2 bias         |
//! | c_out              | 16   |                                           |
//! | c_in               | 16   |                                           |
//! | k                  | 8    |                                           |
//! | L                  | 8    | 0 for bias records                        |
//! | mask flag          | 1    | 0 bitmap, 1 CSR                           |
//! | index flag         | 1    | 0 fixed width, 1 canonical Huffman        |
//! | reserved           | 4    | zero                                      |
//! | kept kernel count  | 32   | `N` for bias records                      |
//!
//! The 112 header bits are followed by the payload:
//!
//! * mask: a `c_out * c_in` bitmap, or CSR rows (per row a kept count of
//!   `width(c_in)` bits, then the kept column indices at `width(c_in - 1)`
//!   bits each, ascending);
//! * Huffman code-length table, `L` entries of 5 bits (index flag = 1 only);
//! * one sign bit per kept value (1 = negative);
//! * `abs_min` and `abs_max` as IEEE-754 binary32;
//! * indices, fixed `log2 L` bits each or Huffman codes.
//!
//! Bias records carry `N` raw binary32 values instead of all of the above.
//! The record is zero-padded to a byte boundary and closed by a CRC-32
//! (IEEE) of all preceding record bytes, stored little-endian.
//!
//! Bit accounting treats the header, padding and CRC as framing; everything
//! else is payload.

use serde::{Deserialize, Serialize};

use super::bits::{width_for, BitReader, BitWriter};
use super::huffman;
use super::quantize::{level_value, QuantizedResult};
use super::sparsify::{reconstruct_sparse, KernelMask};
use crate::error::{Error, Result};
use crate::grad::{GradientTensor, LayerKind, LayerShape, FLOAT_BITS};

pub const MAGIC: u8 = 0xA7;
pub const HEADER_BITS: u64 = 112;
pub const TRAILER_BITS: u64 = 32;
/// Largest level count representable in the 8-bit header field.
pub const MAX_LEVELS: u32 = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MaskEncoding {
    Bitmap,
    Csr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IndexEncoding {
    FixedWidth,
    Huffman,
}

/// Exact size of every part of an encoded record, in bits.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BitCounts {
    pub header: u64,
    pub mask: u64,
    pub huffman_table: u64,
    pub signs: u64,
    /// `abs_min` and `abs_max`.
    pub scalars: u64,
    pub indices: u64,
    /// Raw values of a bias record.
    pub raw: u64,
    pub padding: u64,
    pub trailer: u64,
}

impl BitCounts {
    /// Bits that the compressed-size bound covers (everything except framing).
    pub fn payload(&self) -> u64 {
        self.mask + self.huffman_table + self.signs + self.scalars + self.indices + self.raw
    }

    /// Header, padding and CRC trailer.
    pub fn framing(&self) -> u64 {
        self.header + self.padding + self.trailer
    }

    pub fn total(&self) -> u64 {
        self.payload() + self.framing()
    }
}

/// One encoded layer. `bytes` is the authoritative record; the other fields
/// are conveniences describing it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressedGradient {
    pub shape: LayerShape,
    /// Quantization levels; 0 for bias records.
    pub levels: u32,
    pub mask_encoding: MaskEncoding,
    pub index_encoding: IndexEncoding,
    pub abs_min: f32,
    pub abs_max: f32,
    pub bit_counts: BitCounts,
    pub bytes: Vec<u8>,
}

/// A decoded record: the sparse quantized tensor and the kernel mask that
/// produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodedLayer {
    pub tensor: GradientTensor,
    pub mask: KernelMask,
}

fn log2_levels(levels: u32) -> Result<u32> {
    if !(2..=MAX_LEVELS).contains(&levels) || !levels.is_power_of_two() {
        return Err(Error::domain(format!(
            "levels must be a power of two in [2, {MAX_LEVELS}], got {levels}"
        )));
    }
    Ok(levels.trailing_zeros())
}

fn csr_widths(c_in: usize) -> (u32, u32) {
    (width_for(c_in as u64), width_for(c_in as u64 - 1))
}

fn csr_bits(mask: &KernelMask) -> u64 {
    let (count_w, col_w) = csr_widths(mask.c_in());
    mask.c_out() as u64 * u64::from(count_w) + mask.kept_count() as u64 * u64::from(col_w)
}

#[allow(clippy::too_many_arguments)]
fn write_header(
    w: &mut BitWriter,
    shape: &LayerShape,
    levels: u32,
    mask: MaskEncoding,
    index: IndexEncoding,
    kept: u64,
) {
    w.write_bits(u64::from(MAGIC), 8);
    w.write_bits(u64::from(shape.layer_id()), 16);
    w.write_bits(shape.kind().code(), 2);
    w.write_bits(shape.c_out() as u64, 16);
    w.write_bits(shape.c_in() as u64, 16);
    w.write_bits(shape.k() as u64, 8);
    w.write_bits(u64::from(levels), 8);
    w.write_bit(mask == MaskEncoding::Csr);
    w.write_bit(index == IndexEncoding::Huffman);
    w.write_bits(0, 4);
    w.write_bits(kept, 32);
}

fn finish(w: BitWriter, counts: &mut BitCounts) -> Vec<u8> {
    let mut w = w;
    counts.padding = w.align() as u64;
    let mut bytes = w.into_bytes();
    let crc = crc32fast::hash(&bytes);
    bytes.extend_from_slice(&crc.to_le_bytes());
    counts.trailer = TRAILER_BITS;
    bytes
}

/// Encodes a sparsified and quantized conv or fully connected layer.
pub fn encode(shape: &LayerShape, mask: &KernelMask, quantized: &QuantizedResult) -> Result<CompressedGradient> {
    if shape.kind() == LayerKind::Bias {
        return Err(Error::domain("bias layers are sent raw; use encode_raw"));
    }
    let index_bits = log2_levels(quantized.levels)?;
    if mask.c_out() != shape.c_out() || mask.c_in() != shape.c_in() {
        return Err(Error::domain("mask dimensions do not match the layer shape"));
    }
    let kept = mask.kept_count();
    if kept == 0 {
        return Err(Error::domain("at least one kernel must be kept"));
    }
    let m = kept * shape.kernel_len();
    if quantized.len() != m || quantized.negative.len() != m {
        return Err(Error::domain(format!(
            "expected {m} quantized entries, got {}",
            quantized.len()
        )));
    }
    if let Some(&bad) = quantized.indices.iter().find(|&&i| i >= quantized.levels) {
        return Err(Error::domain(format!("index {bad} out of range")));
    }

    let bitmap_bits = mask.bits().len() as u64;
    let mask_encoding = if csr_bits(mask) < bitmap_bits {
        MaskEncoding::Csr
    } else {
        MaskEncoding::Bitmap
    };

    let mut freqs = vec![0u64; quantized.levels as usize];
    for &i in &quantized.indices {
        freqs[i as usize] += 1;
    }
    let fixed_bits = m as u64 * u64::from(index_bits);
    let huffman = huffman::code_lengths(&freqs).and_then(|lengths| {
        let bits = huffman::encoded_bits(&freqs, &lengths);
        let table = u64::from(quantized.levels) * u64::from(huffman::LENGTH_BITS);
        (bits + table < fixed_bits).then_some(lengths)
    });
    let index_encoding = if huffman.is_some() {
        IndexEncoding::Huffman
    } else {
        IndexEncoding::FixedWidth
    };

    let mut counts = BitCounts {
        header: HEADER_BITS,
        ..BitCounts::default()
    };
    let mut w = BitWriter::new();
    write_header(
        &mut w,
        shape,
        quantized.levels,
        mask_encoding,
        index_encoding,
        kept as u64,
    );

    let mark = w.bit_len();
    match mask_encoding {
        MaskEncoding::Bitmap => {
            for &b in mask.bits() {
                w.write_bit(b);
            }
        }
        MaskEncoding::Csr => {
            let (count_w, col_w) = csr_widths(mask.c_in());
            for row in mask.bits().chunks(mask.c_in()) {
                w.write_bits(row.iter().filter(|&&b| b).count() as u64, count_w);
                for (col, _) in row.iter().enumerate().filter(|(_, &b)| b) {
                    w.write_bits(col as u64, col_w);
                }
            }
        }
    }
    counts.mask = (w.bit_len() - mark) as u64;

    if let Some(lengths) = &huffman {
        let mark = w.bit_len();
        huffman::write_table(&mut w, lengths);
        counts.huffman_table = (w.bit_len() - mark) as u64;
    }

    for &neg in &quantized.negative {
        w.write_bit(neg);
    }
    counts.signs = m as u64;

    w.write_f32(quantized.abs_min);
    w.write_f32(quantized.abs_max);
    counts.scalars = 2 * FLOAT_BITS;

    let mark = w.bit_len();
    match &huffman {
        Some(lengths) => {
            let codes = huffman::canonical_codes(lengths);
            huffman::write_symbols(&mut w, &quantized.indices, lengths, &codes);
        }
        None => {
            for &i in &quantized.indices {
                w.write_bits(u64::from(i), index_bits);
            }
        }
    }
    counts.indices = (w.bit_len() - mark) as u64;

    let bytes = finish(w, &mut counts);
    Ok(CompressedGradient {
        shape: *shape,
        levels: quantized.levels,
        mask_encoding,
        index_encoding,
        abs_min: quantized.abs_min,
        abs_max: quantized.abs_max,
        bit_counts: counts,
        bytes,
    })
}

/// Encodes a layer uncompressed (32 bits per value). Used for bias layers.
pub fn encode_raw(tensor: &GradientTensor) -> Result<CompressedGradient> {
    let shape = tensor.shape();
    if shape.kind() != LayerKind::Bias {
        return Err(Error::domain("raw records are reserved for bias layers"));
    }
    let mut counts = BitCounts {
        header: HEADER_BITS,
        ..BitCounts::default()
    };
    let mut w = BitWriter::new();
    write_header(
        &mut w,
        shape,
        0,
        MaskEncoding::Bitmap,
        IndexEncoding::FixedWidth,
        shape.len() as u64,
    );
    for &v in tensor.values() {
        w.write_f32(v);
    }
    counts.raw = FLOAT_BITS * shape.len() as u64;
    let bytes = finish(w, &mut counts);
    Ok(CompressedGradient {
        shape: *shape,
        levels: 0,
        mask_encoding: MaskEncoding::Bitmap,
        index_encoding: IndexEncoding::FixedWidth,
        abs_min: 0.0,
        abs_max: 0.0,
        bit_counts: counts,
        bytes,
    })
}

/// Decodes one record, returning the tensor and its mask.
pub fn decode_with_mask(blob: &CompressedGradient) -> Result<DecodedLayer> {
    let (layer, used) = decode_record(&blob.bytes)?;
    if used != blob.bytes.len() {
        return Err(Error::format(used, "trailing bytes after record"));
    }
    if *layer.tensor.shape() != blob.shape {
        return Err(Error::format(0, "record shape disagrees with its descriptor"));
    }
    Ok(layer)
}

/// Decodes one record to the sparse quantized tensor it carries.
pub fn decode(blob: &CompressedGradient) -> Result<GradientTensor> {
    decode_with_mask(blob).map(|d| d.tensor)
}

/// Decodes a record from the front of `bytes`; returns it with the number
/// of bytes consumed. Never panics on malformed input.
pub fn decode_record(bytes: &[u8]) -> Result<(DecodedLayer, usize)> {
    let mut r = BitReader::new(bytes);
    r.require(HEADER_BITS as usize, "header")?;
    let magic = r.read_bits(8)?;
    if magic != u64::from(MAGIC) {
        return Err(Error::format(0, format!("bad magic 0x{magic:02x}")));
    }
    let layer_id = r.read_bits(16)? as u16;
    let kind_code = r.read_bits(2)?;
    let c_out = r.read_bits(16)? as u16;
    let c_in = r.read_bits(16)? as u16;
    let k = r.read_bits(8)? as u8;
    let levels = r.read_bits(8)? as u32;
    let csr = r.read_bit()?;
    let huff = r.read_bit()?;
    if r.read_bits(4)? != 0 {
        return Err(Error::format(r.byte_offset(), "reserved header bits set"));
    }
    let kept = r.read_bits(32)? as usize;

    let kind =
        LayerKind::from_code(kind_code).ok_or_else(|| Error::format(3, format!("unknown layer kind {kind_code}")))?;
    let shape = LayerShape::new(layer_id, kind, c_out, c_in, k).map_err(|e| Error::format(3, e.to_string()))?;

    let layer = if kind == LayerKind::Bias {
        decode_raw_body(&mut r, &shape, levels, csr, huff, kept)?
    } else {
        decode_compressed_body(&mut r, &shape, levels, csr, huff, kept)?
    };

    r.align_zero()?;
    let body_end = r.byte_offset();
    if bytes.len() < body_end + 4 {
        return Err(Error::format(body_end, "truncated record: missing CRC"));
    }
    let stored = u32::from_le_bytes(bytes[body_end..body_end + 4].try_into().unwrap());
    if stored != crc32fast::hash(&bytes[..body_end]) {
        return Err(Error::format(body_end, "CRC mismatch"));
    }
    Ok((layer, body_end + 4))
}

/// Decodes a concatenation of records.
pub fn decode_stream(bytes: &[u8]) -> Result<Vec<DecodedLayer>> {
    let mut out = Vec::new();
    let mut pos = 0;
    while pos < bytes.len() {
        let (layer, used) = decode_record(&bytes[pos..]).map_err(|e| match e {
            Error::Format { offset, reason } => Error::Format {
                offset: offset + pos,
                reason,
            },
            other => other,
        })?;
        out.push(layer);
        pos += used;
    }
    Ok(out)
}

fn decode_raw_body(
    r: &mut BitReader<'_>,
    shape: &LayerShape,
    levels: u32,
    csr: bool,
    huff: bool,
    count: usize,
) -> Result<DecodedLayer> {
    if levels != 0 || csr || huff || count != shape.len() {
        return Err(Error::format(3, "inconsistent bias record header"));
    }
    r.require(count * FLOAT_BITS as usize, "raw values")?;
    let mut values = Vec::with_capacity(count);
    for _ in 0..count {
        let at = r.byte_offset();
        let v = r.read_f32()?;
        if !v.is_finite() {
            return Err(Error::format(at, "non-finite raw value"));
        }
        values.push(v);
    }
    Ok(DecodedLayer {
        tensor: GradientTensor::new(*shape, values)?,
        mask: KernelMask::full(shape.c_out(), shape.c_in()),
    })
}

fn decode_compressed_body(
    r: &mut BitReader<'_>,
    shape: &LayerShape,
    levels: u32,
    csr: bool,
    huff: bool,
    kept: usize,
) -> Result<DecodedLayer> {
    let index_bits = log2_levels(levels).map_err(|e| Error::format(11, e.to_string()))?;
    let kernels = shape.kernel_count();
    if kept == 0 || kept > kernels {
        return Err(Error::format(
            10,
            format!("kept kernel count {kept} outside [1, {kernels}]"),
        ));
    }

    let mask_start = r.byte_offset();
    let bits = if csr {
        let (count_w, col_w) = csr_widths(shape.c_in());
        let mut bits = vec![false; kernels];
        let mut total = 0usize;
        for row in 0..shape.c_out() {
            let n = r.read_bits(count_w)? as usize;
            if n > shape.c_in() {
                return Err(Error::format(r.byte_offset(), "CSR row count exceeds c_in"));
            }
            let mut prev: Option<usize> = None;
            for _ in 0..n {
                let col = r.read_bits(col_w)? as usize;
                if col >= shape.c_in() || prev.is_some_and(|p| col <= p) {
                    return Err(Error::format(r.byte_offset(), "CSR column indices not ascending"));
                }
                bits[row * shape.c_in() + col] = true;
                prev = Some(col);
            }
            total += n;
        }
        if total != kept {
            return Err(Error::format(mask_start, "CSR entries disagree with kept count"));
        }
        bits
    } else {
        r.require(kernels, "mask bitmap")?;
        let bits: Vec<bool> = (0..kernels).map(|_| r.read_bit()).collect::<Result<_>>()?;
        if bits.iter().filter(|&&b| b).count() != kept {
            return Err(Error::format(mask_start, "mask bitmap disagrees with kept count"));
        }
        bits
    };
    let mask = KernelMask::new(shape.c_out(), shape.c_in(), bits)?;

    let decoder = if huff {
        let at = r.byte_offset();
        r.require(levels as usize * huffman::LENGTH_BITS as usize, "Huffman table")?;
        let lengths: Vec<u8> = (0..levels)
            .map(|_| r.read_bits(huffman::LENGTH_BITS).map(|l| l as u8))
            .collect::<Result<_>>()?;
        Some(huffman::Decoder::new(&lengths, at)?)
    } else {
        None
    };

    let m = kept * shape.kernel_len();
    // Sign bits and scalars must be present before anything is allocated.
    r.require(m + 2 * FLOAT_BITS as usize, "sign bits")?;
    let negative: Vec<bool> = (0..m).map(|_| r.read_bit()).collect::<Result<_>>()?;
    let scalars_at = r.byte_offset();
    let abs_min = r.read_f32()?;
    let abs_max = r.read_f32()?;
    if !(abs_min.is_finite() && abs_max.is_finite() && abs_min >= 0.0 && abs_max >= abs_min) {
        return Err(Error::format(scalars_at, "invalid magnitude range"));
    }

    let indices: Vec<u32> = match &decoder {
        Some(dec) => (0..m).map(|_| dec.decode(r)).collect::<Result<_>>()?,
        None => {
            r.require(m * index_bits as usize, "indices")?;
            (0..m)
                .map(|_| r.read_bits(index_bits).map(|i| i as u32))
                .collect::<Result<_>>()?
        }
    };
    if abs_min == abs_max && indices.iter().any(|&i| i != 0) {
        return Err(Error::format(r.byte_offset(), "non-zero index with an empty range"));
    }

    let values: Vec<f32> = indices
        .iter()
        .zip(&negative)
        .map(|(&i, &neg)| {
            let mag = level_value(abs_min, abs_max, levels, i);
            if neg {
                -mag
            } else {
                mag
            }
        })
        .collect();
    let tensor = reconstruct_sparse(&values, &mask, shape)?;
    Ok(DecodedLayer { tensor, mask })
}
