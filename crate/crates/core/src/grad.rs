//! Gradient tensors, layer shapes and a seeded synthetic generator.
//!
//! Values are stored flat in `c_out`-major order: output channel, then input
//! channel, then kernel row, then kernel column. One `k x k` block is a
//! *kernel*, the unit that sparsification keeps or drops.

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Bits used to transmit one uncompressed value.
pub const FLOAT_BITS: u64 = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Conv,
    FullyConnected,
    Bias,
}

impl LayerKind {
    pub(crate) fn code(self) -> u64 {
        match self {
            LayerKind::Conv => 0,
            LayerKind::FullyConnected => 1,
            LayerKind::Bias => 2,
        }
    }

    pub(crate) fn from_code(code: u64) -> Option<Self> {
        match code {
            0 => Some(LayerKind::Conv),
            1 => Some(LayerKind::FullyConnected),
            2 => Some(LayerKind::Bias),
            _ => None,
        }
    }
}

/// Shape of one layer's gradient. Field widths match the wire header.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LayerShape {
    layer_id: u16,
    kind: LayerKind,
    c_out: u16,
    c_in: u16,
    k: u8,
}

impl LayerShape {
    pub fn new(layer_id: u16, kind: LayerKind, c_out: u16, c_in: u16, k: u8) -> Result<Self> {
        if c_out == 0 || c_in == 0 || k == 0 {
            return Err(Error::domain(format!(
                "layer {layer_id}: dimensions must be positive (c_out={c_out}, c_in={c_in}, k={k})"
            )));
        }
        match kind {
            LayerKind::FullyConnected if k != 1 => {
                return Err(Error::domain(format!(
                    "layer {layer_id}: fully connected layers need k = 1"
                )))
            }
            LayerKind::Bias if c_in != 1 || k != 1 => {
                return Err(Error::domain(format!(
                    "layer {layer_id}: bias layers need c_in = 1 and k = 1"
                )))
            }
            _ => {}
        }
        Ok(Self {
            layer_id,
            kind,
            c_out,
            c_in,
            k,
        })
    }

    pub fn conv(layer_id: u16, c_out: u16, c_in: u16, k: u8) -> Result<Self> {
        Self::new(layer_id, LayerKind::Conv, c_out, c_in, k)
    }

    pub fn fully_connected(layer_id: u16, c_out: u16, c_in: u16) -> Result<Self> {
        Self::new(layer_id, LayerKind::FullyConnected, c_out, c_in, 1)
    }

    pub fn bias(layer_id: u16, len: u16) -> Result<Self> {
        Self::new(layer_id, LayerKind::Bias, len, 1, 1)
    }

    pub fn layer_id(&self) -> u16 {
        self.layer_id
    }

    pub fn kind(&self) -> LayerKind {
        self.kind
    }

    pub fn c_out(&self) -> usize {
        self.c_out as usize
    }

    pub fn c_in(&self) -> usize {
        self.c_in as usize
    }

    pub fn k(&self) -> usize {
        self.k as usize
    }

    /// Entries per kernel, `k * k`.
    pub fn kernel_len(&self) -> usize {
        self.k() * self.k()
    }

    /// Number of kernels, `c_out * c_in`.
    pub fn kernel_count(&self) -> usize {
        self.c_out() * self.c_in()
    }

    /// Element count `N = c_out * c_in * k * k`.
    pub fn len(&self) -> usize {
        self.kernel_count() * self.kernel_len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Flat position of coordinate `(o, i, r, c)`.
pub fn flat_index(shape: &LayerShape, o: usize, i: usize, r: usize, c: usize) -> Result<usize> {
    if o >= shape.c_out() || i >= shape.c_in() || r >= shape.k() || c >= shape.k() {
        return Err(Error::Index(format!(
            "({o}, {i}, {r}, {c}) outside shape ({}, {}, {}, {})",
            shape.c_out(),
            shape.c_in(),
            shape.k(),
            shape.k()
        )));
    }
    Ok(((o * shape.c_in() + i) * shape.k() + r) * shape.k() + c)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientTensor {
    shape: LayerShape,
    values: Vec<f32>,
}

impl GradientTensor {
    pub fn new(shape: LayerShape, values: Vec<f32>) -> Result<Self> {
        if values.len() != shape.len() {
            return Err(Error::domain(format!(
                "layer {}: expected {} values, got {}",
                shape.layer_id(),
                shape.len(),
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::domain(format!(
                "layer {}: non-finite value at flat index {pos}",
                shape.layer_id()
            )));
        }
        Ok(Self { shape, values })
    }

    pub fn zeros(shape: LayerShape) -> Self {
        Self {
            shape,
            values: vec![0.0; shape.len()],
        }
    }

    pub fn shape(&self) -> &LayerShape {
        &self.shape
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    /// Values of kernel `kernel` (flat kernel index `o * c_in + i`).
    pub fn kernel(&self, kernel: usize) -> &[f32] {
        let len = self.shape.kernel_len();
        &self.values[kernel * len..(kernel + 1) * len]
    }

    pub fn squared_norm(&self) -> f64 {
        self.values.iter().map(|&v| f64::from(v) * f64::from(v)).sum()
    }
}

/// All layer gradients of one device plus the sample count behind them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelGradient {
    layers: Vec<GradientTensor>,
    data_count: u64,
}

impl ModelGradient {
    pub fn new(layers: Vec<GradientTensor>, data_count: u64) -> Result<Self> {
        if data_count == 0 {
            return Err(Error::domain("data_count must be positive"));
        }
        for pair in layers.windows(2) {
            if pair[0].shape().layer_id() >= pair[1].shape().layer_id() {
                return Err(Error::domain(format!(
                    "layer ids must be unique and ascending ({} then {})",
                    pair[0].shape().layer_id(),
                    pair[1].shape().layer_id()
                )));
            }
        }
        Ok(Self { layers, data_count })
    }

    pub fn layers(&self) -> &[GradientTensor] {
        &self.layers
    }

    pub fn data_count(&self) -> u64 {
        self.data_count
    }

    pub fn shapes(&self) -> Vec<LayerShape> {
        self.layers.iter().map(|l| *l.shape()).collect()
    }

    pub fn total_len(&self) -> usize {
        self.layers.iter().map(|l| l.shape().len()).sum()
    }
}

pub fn total_bits_uncompressed(model: &ModelGradient) -> u64 {
    FLOAT_BITS * model.total_len() as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticGradientSpec {
    pub seed: u64,
    /// Ratio between the largest and smallest per-kernel standard deviation.
    pub kernel_scale_spread: f64,
}

impl SyntheticGradientSpec {
    pub fn new(seed: u64, kernel_scale_spread: f64) -> Result<Self> {
        if !(kernel_scale_spread >= 1.0) || !kernel_scale_spread.is_finite() {
            return Err(Error::domain(format!(
                "kernel_scale_spread must be a finite value >= 1, got {kernel_scale_spread}"
            )));
        }
        Ok(Self {
            seed,
            kernel_scale_spread,
        })
    }
}

/// Per-kernel standard deviations used by [`generate_synthetic`].
///
/// The scales are log-spaced over `[1, spread]` and then assigned to kernels
/// in a seeded random order, so that small-norm kernels are scattered across
/// the layer rather than packed at the front.
pub fn kernel_scales(shape: &LayerShape, spec: &SyntheticGradientSpec) -> Vec<f64> {
    let n = shape.kernel_count();
    let log_spread = spec.kernel_scale_spread.ln();
    let mut scales: Vec<f64> = (0..n)
        .map(|j| {
            if n == 1 {
                1.0
            } else {
                (log_spread * j as f64 / (n - 1) as f64).exp()
            }
        })
        .collect();
    let mut rng = rng::substream(spec.seed, &[u64::from(shape.layer_id()), 0]);
    scales.shuffle(&mut rng);
    scales
}

/// Deterministic synthetic gradient: zero-mean Gaussian entries with a
/// per-kernel standard deviation from [`kernel_scales`].
pub fn generate_synthetic(shape: &LayerShape, spec: &SyntheticGradientSpec) -> GradientTensor {
    let scales = kernel_scales(shape, spec);
    let mut rng = rng::substream(spec.seed, &[u64::from(shape.layer_id()), 1]);
    let mut values = Vec::with_capacity(shape.len());
    for sigma in scales {
        for _ in 0..shape.kernel_len() {
            let z: f64 = StandardNormal.sample(&mut rng);
            values.push((z * sigma) as f32);
        }
    }
    GradientTensor { shape: *shape, values }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape223() -> LayerShape {
        LayerShape::conv(0, 2, 2, 3).unwrap()
    }

    #[test]
    fn flat_index_examples() {
        let s = shape223();
        assert_eq!(flat_index(&s, 0, 0, 0, 0).unwrap(), 0);
        assert_eq!(flat_index(&s, 1, 1, 2, 2).unwrap(), 35);
        assert_eq!(flat_index(&s, 0, 1, 0, 0).unwrap(), 9);
    }

    #[test]
    fn flat_index_rejects_out_of_range() {
        let s = shape223();
        assert!(matches!(flat_index(&s, 2, 0, 0, 0), Err(Error::Index(_))));
        assert!(matches!(flat_index(&s, 0, 0, 3, 0), Err(Error::Index(_))));
    }

    #[test]
    fn flat_index_is_a_bijection() {
        let s = LayerShape::conv(3, 3, 5, 2).unwrap();
        let mut seen = vec![false; s.len()];
        for o in 0..s.c_out() {
            for i in 0..s.c_in() {
                for r in 0..s.k() {
                    for c in 0..s.k() {
                        let idx = flat_index(&s, o, i, r, c).unwrap();
                        assert!(!seen[idx]);
                        seen[idx] = true;
                    }
                }
            }
        }
        assert!(seen.iter().all(|&b| b));
    }

    #[test]
    fn shape_invariants() {
        assert!(LayerShape::new(0, LayerKind::FullyConnected, 2, 2, 3).is_err());
        assert!(LayerShape::new(0, LayerKind::Bias, 2, 2, 1).is_err());
        assert!(LayerShape::conv(0, 0, 1, 1).is_err());
        assert_eq!(LayerShape::bias(1, 7).unwrap().len(), 7);
    }

    #[test]
    fn tensor_rejects_bad_values() {
        let s = shape223();
        assert!(GradientTensor::new(s, vec![0.0; 35]).is_err());
        let mut v = vec![0.0; 36];
        v[4] = f32::NAN;
        assert!(GradientTensor::new(s, v).is_err());
    }

    #[test]
    fn model_rejects_unordered_layers() {
        let a = GradientTensor::zeros(LayerShape::conv(1, 1, 1, 1).unwrap());
        let b = GradientTensor::zeros(LayerShape::conv(1, 1, 1, 1).unwrap());
        assert!(ModelGradient::new(vec![a, b], 1).is_err());
    }

    #[test]
    fn uncompressed_bits() {
        let conv = GradientTensor::zeros(shape223());
        let fc = GradientTensor::zeros(LayerShape::fully_connected(1, 10, 4).unwrap());
        let one = ModelGradient::new(vec![conv.clone()], 1).unwrap();
        assert_eq!(total_bits_uncompressed(&one), 1152);
        let empty = ModelGradient::new(vec![], 1).unwrap();
        assert_eq!(total_bits_uncompressed(&empty), 0);
        let two = ModelGradient::new(vec![conv, fc], 1).unwrap();
        assert_eq!(total_bits_uncompressed(&two), 2432);
    }

    #[test]
    fn synthetic_is_deterministic() {
        let s = LayerShape::conv(2, 4, 4, 3).unwrap();
        let spec = SyntheticGradientSpec::new(7, 8.0).unwrap();
        assert_eq!(generate_synthetic(&s, &spec), generate_synthetic(&s, &spec));
        let other = SyntheticGradientSpec::new(8, 8.0).unwrap();
        assert_ne!(generate_synthetic(&s, &spec), generate_synthetic(&s, &other));
    }

    #[test]
    fn unit_spread_shares_one_scale() {
        let s = LayerShape::conv(0, 3, 3, 3).unwrap();
        let spec = SyntheticGradientSpec::new(1, 1.0).unwrap();
        assert!(kernel_scales(&s, &spec).iter().all(|&x| x == 1.0));
        assert!(SyntheticGradientSpec::new(1, 0.5).is_err());
    }

    #[test]
    fn sample_spread_follows_assigned_scales() {
        // (4,4,3) with spread 8: rank correlation between assigned scale and
        // the sample standard deviation of each kernel. With 9 samples per
        // kernel individual pairs can swap, so compare extremes and the
        // overall Spearman correlation.
        let s = LayerShape::conv(0, 4, 4, 3).unwrap();
        let spec = SyntheticGradientSpec::new(7, 8.0).unwrap();
        let scales = kernel_scales(&s, &spec);
        let t = generate_synthetic(&s, &spec);
        let sd: Vec<f64> = (0..s.kernel_count())
            .map(|j| {
                let k = t.kernel(j);
                let m = k.iter().map(|&v| f64::from(v)).sum::<f64>() / k.len() as f64;
                (k.iter().map(|&v| (f64::from(v) - m).powi(2)).sum::<f64>() / (k.len() - 1) as f64).sqrt()
            })
            .collect();
        let rank = |xs: &[f64]| {
            let mut idx: Vec<usize> = (0..xs.len()).collect();
            idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
            let mut r = vec![0.0; xs.len()];
            for (pos, &i) in idx.iter().enumerate() {
                r[i] = pos as f64;
            }
            r
        };
        let (ra, rb) = (rank(&scales), rank(&sd));
        let n = ra.len() as f64;
        let d2: f64 = ra.iter().zip(&rb).map(|(a, b)| (a - b).powi(2)).sum();
        let spearman = 1.0 - 6.0 * d2 / (n * (n * n - 1.0));
        assert!(spearman > 0.8, "spearman = {spearman}");
        let smallest = (0..16).min_by(|&a, &b| scales[a].total_cmp(&scales[b])).unwrap();
        let largest = (0..16).max_by(|&a, &b| scales[a].total_cmp(&scales[b])).unwrap();
        assert!(sd[smallest] < sd[largest]);
    }
}
