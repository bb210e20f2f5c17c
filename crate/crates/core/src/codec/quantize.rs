//! Unbiased stochastic quantization of kept gradient entries.
//!
//! Magnitudes are mapped onto `L` levels evenly spaced over
//! `[abs_min, abs_max]`, i.e. a step of `(abs_max - abs_min) / (L - 1)`, so an
//! index needs `log2(L)` bits. A magnitude between two levels rounds up with
//! probability equal to its fractional position, which makes the expected
//! reconstruction equal to the input. The sign is kept separately.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizedResult {
    pub indices: Vec<u32>,
    /// `true` where the original value was negative. Zero counts as positive.
    pub negative: Vec<bool>,
    pub abs_min: f32,
    pub abs_max: f32,
    pub levels: u32,
}

impl QuantizedResult {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Grid spacing `(abs_max - abs_min) / (L - 1)`.
    pub fn step(&self) -> f64 {
        (f64::from(self.abs_max) - f64::from(self.abs_min)) / f64::from(self.levels - 1)
    }

    pub fn sign(&self, j: usize) -> f32 {
        if self.negative[j] {
            -1.0
        } else {
            1.0
        }
    }

    pub fn magnitude(&self, j: usize) -> f32 {
        level_value(self.abs_min, self.abs_max, self.levels, self.indices[j])
    }

    /// Signed reconstruction of every entry.
    pub fn dequantize(&self) -> Vec<f32> {
        (0..self.len()).map(|j| self.sign(j) * self.magnitude(j)).collect()
    }
}

/// Reconstruction magnitude of level `index`. The encoder and the decoder
/// both go through this function, so reconstructions agree bit for bit.
pub fn level_value(abs_min: f32, abs_max: f32, levels: u32, index: u32) -> f32 {
    if index == 0 {
        return abs_min;
    }
    if index + 1 >= levels {
        return abs_max;
    }
    let lo = f64::from(abs_min);
    let span = f64::from(abs_max) - lo;
    let v = (lo + f64::from(index) * span / f64::from(levels - 1)) as f32;
    v.clamp(abs_min, abs_max)
}

pub(crate) fn check_levels(levels: u32) -> Result<()> {
    if levels < 2 {
        return Err(Error::domain(format!(
            "need at least 2 quantization levels, got {levels}"
        )));
    }
    Ok(())
}

/// Quantizes `values` with `levels` levels. Deterministic given `seed`.
pub fn quantize(values: &[f32], levels: u32, seed: u64) -> Result<QuantizedResult> {
    check_levels(levels)?;
    if values.is_empty() {
        return Err(Error::domain("cannot quantize an empty value set"));
    }
    if let Some(p) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::domain(format!("non-finite value at position {p}")));
    }

    let (abs_min, abs_max) = values.iter().fold((f32::INFINITY, 0.0f32), |(lo, hi), &v| {
        (lo.min(v.abs()), hi.max(v.abs()))
    });
    let mut rng = rng::stream(seed);
    let top = levels - 1;
    let step = (f64::from(abs_max) - f64::from(abs_min)) / f64::from(top);
    let level = |i: u32| f64::from(level_value(abs_min, abs_max, levels, i));

    let mut indices = Vec::with_capacity(values.len());
    for &v in values {
        let x = f64::from(v.abs());
        let idx = if abs_max == abs_min || x <= f64::from(abs_min) {
            0
        } else if x >= f64::from(abs_max) {
            top
        } else {
            let mut lower = (((x - f64::from(abs_min)) / step).floor() as u32).min(top - 1);
            // The rounded grid may disagree with the ideal one by an ulp;
            // settle on the cell [level(lower), level(lower + 1)) holding x.
            while lower > 0 && x < level(lower) {
                lower -= 1;
            }
            while lower + 1 < top && x >= level(lower + 1) {
                lower += 1;
            }
            let (lo, hi) = (level(lower), level(lower + 1));
            if x == lo {
                lower
            } else if x >= hi {
                lower + 1
            } else {
                let p_up = (x - lo) / (hi - lo);
                if rng.random::<f64>() < p_up {
                    lower + 1
                } else {
                    lower
                }
            }
        };
        indices.push(idx);
    }

    Ok(QuantizedResult {
        indices,
        negative: values.iter().map(|&v| v < 0.0).collect(),
        abs_min,
        abs_max,
        levels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_magnitudes_are_exact() {
        let q = quantize(&[0.5, -0.5, 0.5], 8, 1).unwrap();
        assert!(q.indices.iter().all(|&i| i == 0));
        assert_eq!(q.dequantize(), vec![0.5, -0.5, 0.5]);
    }

    #[test]
    fn endpoints_are_deterministic() {
        for seed in 0..20 {
            let q = quantize(&[-0.25, 0.3, 1.75, 0.9], 8, seed).unwrap();
            assert_eq!(q.indices[0], 0);
            assert_eq!(q.indices[2], 7);
            assert_eq!(q.abs_min, 0.25);
            assert_eq!(q.abs_max, 1.75);
        }
    }

    #[test]
    fn interior_grid_points_map_to_themselves() {
        // min 0, max 7, L = 8: every integer magnitude is a level.
        let vals: Vec<f32> = (0..8).map(|i| i as f32).collect();
        for seed in 0..10 {
            let q = quantize(&vals, 8, seed).unwrap();
            assert_eq!(q.indices, (0..8).collect::<Vec<_>>());
            assert_eq!(q.dequantize(), vals);
        }
    }

    #[test]
    fn zero_gets_positive_sign() {
        let q = quantize(&[0.0, -1.0], 2, 0).unwrap();
        assert!(!q.negative[0]);
        assert!(q.negative[1]);
    }

    #[test]
    fn reconstruction_brackets_the_input() {
        let vals: Vec<f32> = (0..500).map(|i| ((i * 37 % 101) as f32 - 50.0) / 7.0).collect();
        for levels in [2, 4, 8, 16] {
            let q = quantize(&vals, levels, 11).unwrap();
            let step = q.step();
            for (j, &v) in vals.iter().enumerate() {
                let m = f64::from(q.magnitude(j));
                assert!(m >= f64::from(q.abs_min) && m <= f64::from(q.abs_max));
                assert!((m - f64::from(v.abs())).abs() <= step * (1.0 + 1e-6));
                if m > 0.0 {
                    assert_eq!(q.dequantize()[j] < 0.0, v < 0.0);
                }
            }
        }
    }

    #[test]
    fn midpoint_is_unbiased() {
        // Magnitude 0.5 between levels 3/7 and 4/7 of [0, 1] with L = 8.
        let n = 100_000;
        let x = 0.5f32;
        let mut vals = vec![0.0f32, 1.0];
        vals.extend(std::iter::repeat_n(x, n));
        let q = quantize(&vals, 8, 42).unwrap();
        let mean: f64 = (2..n + 2).map(|j| f64::from(q.magnitude(j))).sum::<f64>() / n as f64;
        let lo = f64::from(level_value(0.0, 1.0, 8, 3));
        let hi = f64::from(level_value(0.0, 1.0, 8, 4));
        let p = (f64::from(x) - lo) / (hi - lo);
        let se = (p * (1.0 - p)).sqrt() * (hi - lo) / (n as f64).sqrt();
        assert!((mean - f64::from(x)).abs() < 3.0 * se, "mean {mean}, se {se}");
    }

    #[test]
    fn errors() {
        assert!(quantize(&[], 8, 0).is_err());
        assert!(quantize(&[1.0], 1, 0).is_err());
    }

    #[test]
    fn seeded_draws_repeat() {
        let vals: Vec<f32> = (0..64).map(|i| (i as f32 * 0.37).sin()).collect();
        assert_eq!(quantize(&vals, 4, 5).unwrap(), quantize(&vals, 4, 5).unwrap());
    }
}
