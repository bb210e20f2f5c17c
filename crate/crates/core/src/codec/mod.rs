//! Device-side gradient compression: kernel-wise sparsification, stochastic
//! quantization and lossless encoding.
//!
//! Fully connected layers are treated as a `c_out x c_in` grid of 1x1
//! kernels. Bias layers bypass the pipeline and are sent as raw 32-bit
//! values.

pub mod bits;
pub mod huffman;
mod quantize;
mod sparsify;
pub mod wire;

use serde::{Deserialize, Serialize};

pub use quantize::{level_value, quantize, QuantizedResult};
pub use sparsify::{kept_kernels, pruned_kernels, reconstruct_sparse, sparsify, KernelMask, SparsifyResult};
pub use wire::{
    decode, decode_record, decode_stream, decode_with_mask, encode, encode_raw, BitCounts, CompressedGradient,
    DecodedLayer, IndexEncoding, MaskEncoding,
};

use crate::error::{Error, Result};
use crate::grad::{GradientTensor, LayerKind, LayerShape, ModelGradient, FLOAT_BITS};
use crate::rng;

/// Largest pruning rate the ratio solver will return.
pub const MAX_PRUNING_RATE: f64 = 1.0 - 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompressionConfig {
    pub levels_conv: u32,
    pub levels_fc: u32,
}

impl Default for CompressionConfig {
    fn default() -> Self {
        Self {
            levels_conv: 8,
            levels_fc: 4,
        }
    }
}

impl CompressionConfig {
    pub fn new(levels_conv: u32, levels_fc: u32) -> Result<Self> {
        for (name, l) in [("levels_conv", levels_conv), ("levels_fc", levels_fc)] {
            if !(2..=wire::MAX_LEVELS).contains(&l) || !l.is_power_of_two() {
                return Err(Error::domain(format!(
                    "{name} must be a power of two in [2, {}], got {l}",
                    wire::MAX_LEVELS
                )));
            }
        }
        Ok(Self { levels_conv, levels_fc })
    }

    /// Level count for a layer; `None` for bias layers.
    pub fn levels_for(&self, kind: LayerKind) -> Option<u32> {
        match kind {
            LayerKind::Conv => Some(self.levels_conv),
            LayerKind::FullyConnected => Some(self.levels_fc),
            LayerKind::Bias => None,
        }
    }
}

/// Upper bound on the payload bits of one compressed layer:
/// `c_out*c_in + ceil((1-rho)*c_out*c_in) * k^2 * (1 + log2 L) + 64`.
///
/// `levels` must be a power of two.
pub fn compressed_bits_bound(shape: &LayerShape, rho: f64, levels: u32) -> u64 {
    debug_assert!(levels.is_power_of_two());
    let n = shape.kernel_count() as u64;
    let kept = kept_kernels(shape.kernel_count(), rho) as u64;
    n + kept * shape.kernel_len() as u64 * (1 + u64::from(levels.ilog2())) + 2 * FLOAT_BITS
}

/// Bound on a whole model's payload at pruning rate `rho` (bias layers
/// counted at 32 bits per value).
pub fn model_bits_bound(shapes: &[LayerShape], rho: f64, config: &CompressionConfig) -> u64 {
    shapes
        .iter()
        .map(|s| match config.levels_for(s.kind()) {
            Some(l) => compressed_bits_bound(s, rho, l),
            None => FLOAT_BITS * s.len() as u64,
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PruningRate {
    pub rho: f64,
    /// Set when the requested ratio is out of reach even at
    /// [`MAX_PRUNING_RATE`].
    pub clamped: bool,
}

/// Pruning rate, shared by every layer, whose summed size bound meets
/// `32 * N_total / alpha`.
///
/// The bound is linear in `rho` once the kept-kernel ceiling is relaxed, so
/// the relaxed equation is solved in closed form. The result is then moved
/// up to the next kernel breakpoint while the exact (ceiled) bound still
/// exceeds the target.
pub fn ratio_to_pruning_rate(shapes: &[LayerShape], alpha: f64, config: &CompressionConfig) -> Result<PruningRate> {
    if !(alpha >= 1.0) {
        return Err(Error::domain(format!("compression ratio must be >= 1, got {alpha}")));
    }
    let total: u64 = shapes.iter().map(|s| s.len() as u64).sum();
    let target = (FLOAT_BITS * total) as f64 / alpha;

    let (mut fixed, mut slope) = (0.0f64, 0.0f64);
    for s in shapes {
        match config.levels_for(s.kind()) {
            Some(l) => {
                fixed += (s.kernel_count() as u64 + 2 * FLOAT_BITS) as f64;
                slope += (s.len() as u64 * (1 + u64::from(l.ilog2()))) as f64;
            }
            None => fixed += (FLOAT_BITS * s.len() as u64) as f64,
        }
    }
    if slope == 0.0 {
        return Ok(PruningRate {
            rho: 0.0,
            clamped: fixed > target,
        });
    }

    let mut rho = (1.0 - (target - fixed) / slope).clamp(0.0, MAX_PRUNING_RATE);
    while (model_bits_bound(shapes, rho, config) as f64) > target && rho < MAX_PRUNING_RATE {
        let next = shapes
            .iter()
            .filter(|s| s.kind() != LayerKind::Bias)
            .filter_map(|s| {
                let n = s.kernel_count();
                let j = pruned_kernels(n, rho) + 1;
                (j < n).then(|| {
                    let mut cand = j as f64 / n as f64;
                    while pruned_kernels(n, cand) < j {
                        cand = cand.next_up();
                    }
                    cand
                })
            })
            .fold(f64::INFINITY, f64::min);
        if !next.is_finite() {
            rho = MAX_PRUNING_RATE;
            break;
        }
        rho = next.min(MAX_PRUNING_RATE);
    }
    Ok(PruningRate {
        rho,
        clamped: model_bits_bound(shapes, rho, config) as f64 > target,
    })
}

/// Sparsifies, quantizes and encodes one layer. Bias layers are sent raw.
pub fn compress_layer(
    tensor: &GradientTensor,
    rho: f64,
    config: &CompressionConfig,
    seed: u64,
) -> Result<CompressedGradient> {
    let shape = tensor.shape();
    match config.levels_for(shape.kind()) {
        None => encode_raw(tensor),
        Some(levels) => {
            let s = sparsify(tensor, rho)?;
            let q = quantize(&s.kept_values, levels, seed)?;
            encode(shape, &s.mask, &q)
        }
    }
}

/// Output of [`compress_model`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressedModel {
    pub layers: Vec<CompressedGradient>,
    pub rho: f64,
    /// Requested ratio could not be reached.
    pub clamped: bool,
    /// `32 * N_total` over payload bits (headers, padding and CRC excluded;
    /// raw bias values included).
    pub achieved_alpha: f64,
    /// Same ratio counting every transmitted bit.
    pub wire_alpha: f64,
}

impl CompressedModel {
    pub fn payload_bits(&self) -> u64 {
        self.layers.iter().map(|l| l.bit_counts.payload()).sum()
    }

    pub fn wire_bits(&self) -> u64 {
        self.layers.iter().map(|l| l.bit_counts.total()).sum()
    }
}

/// Compresses every layer of `model` at ratio `alpha`. The quantizer stream
/// of each layer is seeded from `(seed, layer_id)`.
pub fn compress_model(
    model: &ModelGradient,
    alpha: f64,
    config: &CompressionConfig,
    seed: u64,
) -> Result<CompressedModel> {
    let rate = ratio_to_pruning_rate(&model.shapes(), alpha, config)?;
    let layers = model
        .layers()
        .iter()
        .map(|t| {
            let layer_seed = rng::derive_seed(seed, &[u64::from(t.shape().layer_id())]);
            compress_layer(t, rate.rho, config, layer_seed)
        })
        .collect::<Result<Vec<_>>>()?;
    let raw = (FLOAT_BITS * model.total_len() as u64) as f64;
    let mut out = CompressedModel {
        layers,
        rho: rate.rho,
        clamped: rate.clamped,
        achieved_alpha: 0.0,
        wire_alpha: 0.0,
    };
    out.achieved_alpha = raw / out.payload_bits().max(1) as f64;
    out.wire_alpha = raw / out.wire_bits().max(1) as f64;
    Ok(out)
}
