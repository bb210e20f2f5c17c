//! Masked, data-weighted element-wise aggregation.
//!
//! For entry `k` the global value is
//! `sum_i v_i[k] m_i[k] D_i / sum_i m_i[k] D_i`, or 0 when no device covers
//! `k`. [`aggregate`] evaluates this exactly and rounds once to `f32`
//! (nearest, ties to even), so the result does not depend on device order
//! or on a common scaling of the data counts.

use num_bigint::BigInt;
use num_traits::{Signed, Zero};

use crate::codec::{decode_with_mask, CompressedGradient, DecodedLayer};
use crate::error::{Error, Result};
use crate::grad::{GradientTensor, LayerShape};

/// Largest accepted total data count; keeps every count exact in `f64`.
pub const MAX_TOTAL_DATA: u64 = 1 << 53;

/// One device's encoded upload for a round.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceUpload {
    pub device_id: u32,
    pub blobs: Vec<CompressedGradient>,
    pub data_count: u64,
}

/// An upload after decoding.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodedUpload {
    pub device_id: u32,
    pub layers: Vec<DecodedLayer>,
    pub data_count: u64,
}

impl DeviceUpload {
    pub fn decode(&self) -> Result<DecodedUpload> {
        Ok(DecodedUpload {
            device_id: self.device_id,
            layers: self.blobs.iter().map(decode_with_mask).collect::<Result<_>>()?,
            data_count: self.data_count,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalGradient {
    pub layers: Vec<GradientTensor>,
    /// Number of devices covering each entry, per layer.
    pub coverage: Vec<Vec<u32>>,
}

pub fn aggregate(uploads: &[DeviceUpload]) -> Result<GlobalGradient> {
    let decoded = uploads.iter().map(DeviceUpload::decode).collect::<Result<Vec<_>>>()?;
    aggregate_decoded(&decoded)
}

pub fn aggregate_decoded(uploads: &[DecodedUpload]) -> Result<GlobalGradient> {
    let counts: Vec<u64> = uploads.iter().map(|u| u.data_count).collect();
    let shapes = check_uploads(
        uploads
            .iter()
            .map(|u| u.layers.iter().map(|l| *l.tensor.shape()).collect()),
        &counts,
    )?;

    let mut layers = Vec::with_capacity(shapes.len());
    let mut coverage = Vec::with_capacity(shapes.len());
    for (li, shape) in shapes.iter().enumerate() {
        let klen = shape.kernel_len();
        let mut values = Vec::with_capacity(shape.len());
        let mut cov = Vec::with_capacity(shape.len());
        let mut num = Vec::new();
        for k in 0..shape.len() {
            num.clear();
            let mut den = 0u64;
            let mut n = 0u32;
            for u in uploads {
                let layer = &u.layers[li];
                if layer.mask.is_kept(k / klen) {
                    n += 1;
                    den += u.data_count;
                    let (p, e) = two_product(f64::from(layer.tensor.values()[k]), u.data_count as f64);
                    grow(&mut num, e);
                    grow(&mut num, p);
                }
            }
            values.push(if den == 0 {
                0.0
            } else {
                round_quotient(&num, den as f64)
            });
            cov.push(n);
        }
        layers.push(GradientTensor::new(*shape, values)?);
        coverage.push(cov);
    }
    Ok(GlobalGradient { layers, coverage })
}

/// Reference evaluation in exact rational arithmetic. `masks[i][l]` holds
/// one flag per entry of layer `l` of device `i`.
pub fn aggregate_oracle(
    dense: &[Vec<GradientTensor>],
    masks: &[Vec<Vec<bool>>],
    data_counts: &[u64],
) -> Result<GlobalGradient> {
    if masks.len() != dense.len() {
        return Err(Error::Aggregation("one mask set per device required".into()));
    }
    let shapes = check_uploads(
        dense.iter().map(|d| d.iter().map(|t| *t.shape()).collect()),
        data_counts,
    )?;
    let mut layers = Vec::new();
    let mut coverage = Vec::new();
    for (l, shape) in shapes.iter().enumerate() {
        for m in masks {
            if m.get(l).map(Vec::len) != Some(shape.len()) {
                return Err(Error::Aggregation(format!("mask length mismatch in layer {l}")));
            }
        }
        let mut values = vec![0.0f32; shape.len()];
        let mut cov = vec![0u32; shape.len()];
        for (k, out) in values.iter_mut().enumerate() {
            // Every f32 is an integer multiple of 2^-149.
            let mut num = BigInt::zero();
            let mut den = BigInt::zero();
            for i in 0..dense.len() {
                if masks[i][l][k] {
                    num += f32_units(dense[i][l].values()[k]) * BigInt::from(data_counts[i]);
                    den += BigInt::from(data_counts[i]);
                    cov[k] += 1;
                }
            }
            if !den.is_zero() {
                *out = round_units_ratio(&num, &den);
            }
        }
        layers.push(GradientTensor::new(*shape, values)?);
        coverage.push(cov);
    }
    Ok(GlobalGradient { layers, coverage })
}

fn check_uploads(mut shapes: impl Iterator<Item = Vec<LayerShape>>, counts: &[u64]) -> Result<Vec<LayerShape>> {
    let first = shapes.next().ok_or_else(|| Error::domain("no uploads to aggregate"))?;
    for (i, s) in shapes.enumerate() {
        if s != first {
            return Err(Error::Aggregation(format!(
                "upload {} has a different layer set than upload 0",
                i + 1
            )));
        }
    }
    let mut total = 0u64;
    for &d in counts {
        if d == 0 {
            return Err(Error::domain("data counts must be positive"));
        }
        total = total.saturating_add(d);
    }
    if total > MAX_TOTAL_DATA {
        return Err(Error::domain(format!("total data {total} exceeds {MAX_TOTAL_DATA}")));
    }
    Ok(first)
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn two_product(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

/// Adds `b` to a non-overlapping expansion kept in increasing magnitude.
fn grow(e: &mut Vec<f64>, b: f64) {
    let mut q = b;
    let mut out = 0;
    for i in 0..e.len() {
        let (s, h) = two_sum(q, e[i]);
        q = s;
        if h != 0.0 {
            e[out] = h;
            out += 1;
        }
    }
    e.truncate(out);
    if q != 0.0 {
        e.push(q);
    }
}

/// Sign of `e - m * den`.
fn compare(e: &[f64], m: f64, den: f64) -> std::cmp::Ordering {
    let mut d = e.to_vec();
    let (p, err) = two_product(-m, den);
    grow(&mut d, err);
    grow(&mut d, p);
    d.last().copied().unwrap_or(0.0).partial_cmp(&0.0).unwrap()
}

/// Rounds the exact quotient `sum(num) / den` to the nearest `f32`.
fn round_quotient(num: &[f64], den: f64) -> f32 {
    use std::cmp::Ordering::*;
    let approx: f64 = num.iter().sum::<f64>() / den;
    let mut c = approx as f32;
    loop {
        if c > f32::MIN {
            let lower = c.next_down();
            let mid = (f64::from(c) + f64::from(lower)) / 2.0;
            match compare(num, mid, den) {
                Less => {
                    c = lower;
                    continue;
                }
                Equal if c.to_bits() & 1 == 1 => return lower + 0.0,
                _ => {}
            }
        }
        if c < f32::MAX {
            let upper = c.next_up();
            let mid = (f64::from(c) + f64::from(upper)) / 2.0;
            match compare(num, mid, den) {
                Greater => {
                    c = upper;
                    continue;
                }
                Equal if c.to_bits() & 1 == 1 => return upper + 0.0,
                _ => {}
            }
        }
        return c + 0.0;
    }
}

/// `v * 2^149` as an integer.
fn f32_units(v: f32) -> BigInt {
    let bits = v.to_bits();
    let exp = (bits >> 23) & 0xff;
    let frac = bits & 0x7f_ffff;
    let (mant, shift) = if exp == 0 {
        (frac, 0)
    } else {
        (frac | 0x80_0000, exp - 1)
    };
    let mag = BigInt::from(mant) << shift;
    if bits >> 31 == 1 {
        -mag
    } else {
        mag
    }
}

/// Nearest `f32` to `num * 2^-149 / den` with ties to even, by bisection
/// over the ordered bit patterns of non-negative floats.
fn round_units_ratio(num: &BigInt, den: &BigInt) -> f32 {
    let mag = num.abs();
    // Largest finite pattern whose value is <= mag / den.
    let (mut lo, mut hi) = (0u32, f32::MAX.to_bits());
    while lo < hi {
        let mid = lo + (hi - lo).div_ceil(2);
        if f32_units(f32::from_bits(mid)) * den <= mag {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    let below = lo;
    let pick = if below == f32::MAX.to_bits() {
        below
    } else {
        let a = f32_units(f32::from_bits(below));
        let b = f32_units(f32::from_bits(below + 1));
        let twice: BigInt = &mag << 1;
        let midpoint = (a + b) * den;
        match twice.cmp(&midpoint) {
            std::cmp::Ordering::Less => below,
            std::cmp::Ordering::Greater => below + 1,
            std::cmp::Ordering::Equal => {
                if below & 1 == 0 {
                    below
                } else {
                    below + 1
                }
            }
        }
    };
    let v = f32::from_bits(pick);
    if num.is_negative() && pick != 0 {
        -v
    } else {
        v
    }
}
