//! Canonical Huffman coding of quantization indices.
//!
//! The code is transmitted as a table of code lengths (one 5-bit entry per
//! symbol, 0 = unused). Codes are assigned canonically, shortest first and by
//! ascending symbol within a length, and written most-significant bit first.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use super::bits::{BitReader, BitWriter};
use crate::error::{Error, Result};

/// Width of one code-length table entry.
pub const LENGTH_BITS: u32 = 5;
/// Longest code representable in the table.
pub const MAX_CODE_LEN: u8 = 31;

/// Huffman code lengths for the given symbol frequencies.
///
/// Returns `None` when the optimal code would need a length above
/// [`MAX_CODE_LEN`]; callers then fall back to fixed-width indices.
pub fn code_lengths(freqs: &[u64]) -> Option<Vec<u8>> {
    let used: Vec<usize> = (0..freqs.len()).filter(|&s| freqs[s] > 0).collect();
    let mut lengths = vec![0u8; freqs.len()];
    match used.len() {
        0 => return Some(lengths),
        1 => {
            lengths[used[0]] = 1;
            return Some(lengths);
        }
        _ => {}
    }

    // Nodes 0..n are leaves; internal nodes are appended. Ties are broken by
    // node id so the tree is deterministic.
    let mut parent: Vec<usize> = vec![usize::MAX; used.len()];
    let mut heap: BinaryHeap<Reverse<(u64, usize)>> = used
        .iter()
        .enumerate()
        .map(|(node, &s)| Reverse((freqs[s], node)))
        .collect();
    while heap.len() > 1 {
        let Reverse((fa, a)) = heap.pop().unwrap();
        let Reverse((fb, b)) = heap.pop().unwrap();
        let node = parent.len();
        parent.push(usize::MAX);
        parent[a] = node;
        parent[b] = node;
        heap.push(Reverse((fa + fb, node)));
    }

    for (leaf, &s) in used.iter().enumerate() {
        let mut depth = 0usize;
        let mut n = leaf;
        while parent[n] != usize::MAX {
            n = parent[n];
            depth += 1;
        }
        if depth > MAX_CODE_LEN as usize {
            return None;
        }
        lengths[s] = depth as u8;
    }
    Some(lengths)
}

/// Canonical codes for a length table. `codes[s]` is meaningful only when
/// `lengths[s] > 0`.
pub fn canonical_codes(lengths: &[u8]) -> Vec<u32> {
    let mut count = [0u32; MAX_CODE_LEN as usize + 1];
    for &l in lengths {
        count[l as usize] += 1;
    }
    count[0] = 0;
    let mut next = [0u32; MAX_CODE_LEN as usize + 1];
    let mut code = 0u32;
    for len in 1..=MAX_CODE_LEN as usize {
        code = (code + count[len - 1]) << 1;
        next[len] = code;
    }
    lengths
        .iter()
        .map(|&l| {
            if l == 0 {
                0
            } else {
                let c = next[l as usize];
                next[l as usize] += 1;
                c
            }
        })
        .collect()
}

/// Total payload bits of `symbols` under `lengths`.
pub fn encoded_bits(freqs: &[u64], lengths: &[u8]) -> u64 {
    freqs.iter().zip(lengths).map(|(&f, &l)| f * u64::from(l)).sum()
}

pub fn write_table(w: &mut BitWriter, lengths: &[u8]) {
    for &l in lengths {
        w.write_bits(u64::from(l), LENGTH_BITS);
    }
}

pub fn write_symbols(w: &mut BitWriter, symbols: &[u32], lengths: &[u8], codes: &[u32]) {
    for &s in symbols {
        let (code, len) = (codes[s as usize], lengths[s as usize]);
        for b in (0..len).rev() {
            w.write_bit((code >> b) & 1 == 1);
        }
    }
}

/// Table-driven canonical decoder.
#[derive(Debug, Clone)]
pub struct Decoder {
    count: [u32; MAX_CODE_LEN as usize + 1],
    symbols: Vec<u32>,
}

impl Decoder {
    /// Validates a length table read from a stream. `offset` is only used
    /// to annotate errors.
    pub fn new(lengths: &[u8], offset: usize) -> Result<Self> {
        let mut count = [0u32; MAX_CODE_LEN as usize + 1];
        for &l in lengths {
            if l > MAX_CODE_LEN {
                return Err(Error::format(offset, format!("code length {l} too long")));
            }
            count[l as usize] += 1;
        }
        count[0] = 0;
        let used: u32 = count.iter().sum();
        if used == 0 {
            return Err(Error::format(offset, "empty Huffman table"));
        }
        // Kraft sum in units of 2^-MAX_CODE_LEN.
        let kraft: u64 = (1..=MAX_CODE_LEN as usize)
            .map(|len| u64::from(count[len]) << (MAX_CODE_LEN as usize - len))
            .sum();
        let full = 1u64 << MAX_CODE_LEN;
        let single = used == 1 && count[1] == 1;
        if kraft > full || (kraft < full && !single) {
            return Err(Error::format(offset, "Huffman table is not a complete prefix code"));
        }
        let mut symbols: Vec<u32> = (0..lengths.len() as u32).filter(|&s| lengths[s as usize] > 0).collect();
        symbols.sort_by_key(|&s| (lengths[s as usize], s));
        Ok(Self { count, symbols })
    }

    pub fn decode(&self, r: &mut BitReader<'_>) -> Result<u32> {
        let start = r.byte_offset();
        let (mut code, mut first, mut index) = (0i64, 0i64, 0i64);
        for len in 1..=MAX_CODE_LEN as usize {
            code |= i64::from(r.read_bit()?);
            let count = i64::from(self.count[len]);
            if code - count < first {
                return Ok(self.symbols[(index + (code - first)) as usize]);
            }
            index += count;
            first = (first + count) << 1;
            code <<= 1;
        }
        Err(Error::format(start, "invalid Huffman code"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn textbook_frequencies() {
        // Classic example: a:45 b:13 c:12 d:16 e:9 f:5.
        let lengths = code_lengths(&[45, 13, 12, 16, 9, 5]).unwrap();
        assert_eq!(lengths, vec![1, 3, 3, 3, 4, 4]);
        let codes = canonical_codes(&lengths);
        assert_eq!(codes, vec![0b0, 0b100, 0b101, 0b110, 0b1110, 0b1111]);
        assert_eq!(encoded_bits(&[45, 13, 12, 16, 9, 5], &lengths), 224);
    }

    #[test]
    fn single_symbol_gets_one_bit() {
        let lengths = code_lengths(&[0, 0, 7, 0]).unwrap();
        assert_eq!(lengths, vec![0, 0, 1, 0]);
        let dec = Decoder::new(&lengths, 0).unwrap();
        let mut w = BitWriter::new();
        write_symbols(&mut w, &[2, 2, 2], &lengths, &canonical_codes(&lengths));
        let bytes = w.into_bytes();
        let mut r = BitReader::new(&bytes);
        for _ in 0..3 {
            assert_eq!(dec.decode(&mut r).unwrap(), 2);
        }
    }

    #[test]
    fn rejects_oversubscribed_table() {
        assert!(Decoder::new(&[1, 1, 1], 0).is_err());
        assert!(Decoder::new(&[2, 2, 2], 0).is_err());
        assert!(Decoder::new(&[0, 0], 0).is_err());
    }

    #[test]
    fn fibonacci_frequencies_overflow_the_length_limit() {
        let mut f = vec![1u64, 1];
        while f.len() < 40 {
            let n = f[f.len() - 1] + f[f.len() - 2];
            f.push(n);
        }
        assert!(code_lengths(&f).is_none());
        assert!(code_lengths(&f[..20]).is_some());
    }

    proptest! {
        #[test]
        fn symbols_round_trip(symbols in proptest::collection::vec(0u32..16, 1..400)) {
            let mut freqs = vec![0u64; 16];
            for &s in &symbols {
                freqs[s as usize] += 1;
            }
            let lengths = code_lengths(&freqs).unwrap();
            let codes = canonical_codes(&lengths);
            let mut w = BitWriter::new();
            write_table(&mut w, &lengths);
            write_symbols(&mut w, &symbols, &lengths, &codes);
            prop_assert_eq!(
                w.bit_len() as u64,
                16 * u64::from(LENGTH_BITS) + encoded_bits(&freqs, &lengths)
            );
            let bytes = w.into_bytes();
            let mut r = BitReader::new(&bytes);
            let table: Vec<u8> = (0..16).map(|_| r.read_bits(LENGTH_BITS).unwrap() as u8).collect();
            let dec = Decoder::new(&table, 0).unwrap();
            for &s in &symbols {
                prop_assert_eq!(dec.decode(&mut r).unwrap(), s);
            }
        }
    }
}
