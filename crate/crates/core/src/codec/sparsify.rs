//! Kernel-wise sparsification.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grad::{GradientTensor, LayerShape};

/// Keep/drop flag per kernel, indexed by flat kernel index `o * c_in + i`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KernelMask {
    c_out: usize,
    c_in: usize,
    bits: Vec<bool>,
}

impl KernelMask {
    pub fn new(c_out: usize, c_in: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != c_out * c_in {
            return Err(Error::domain(format!(
                "mask has {} bits, expected {}",
                bits.len(),
                c_out * c_in
            )));
        }
        Ok(Self { c_out, c_in, bits })
    }

    pub fn full(c_out: usize, c_in: usize) -> Self {
        Self {
            c_out,
            c_in,
            bits: vec![true; c_out * c_in],
        }
    }

    pub fn c_out(&self) -> usize {
        self.c_out
    }

    pub fn c_in(&self) -> usize {
        self.c_in
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn is_kept(&self, kernel: usize) -> bool {
        self.bits[kernel]
    }

    pub fn kept_count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Expands the kernel mask to one flag per tensor entry.
    pub fn expand(&self, kernel_len: usize) -> Vec<bool> {
        self.bits
            .iter()
            .flat_map(|&b| std::iter::repeat_n(b, kernel_len))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsifyResult {
    pub mask: KernelMask,
    /// Entries of the surviving kernels, in flat order.
    pub kept_values: Vec<f32>,
    pub pruned_count: usize,
}

/// Number of kernels removed at pruning rate `rho`: `floor(rho * kernels)`.
pub fn pruned_kernels(kernels: usize, rho: f64) -> usize {
    ((rho * kernels as f64).floor() as usize).min(kernels.saturating_sub(1))
}

/// Number of kernels kept at pruning rate `rho`.
///
/// Equals `ceil((1 - rho) * kernels)` in exact arithmetic; computing it as
/// the complement of [`pruned_kernels`] keeps the bound and the encoder in
/// agreement under floating-point rounding.
pub fn kept_kernels(kernels: usize, rho: f64) -> usize {
    kernels - pruned_kernels(kernels, rho)
}

pub(crate) fn check_rho(rho: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::domain(format!("pruning rate must lie in [0, 1), got {rho}")));
    }
    Ok(())
}

/// Zeroes the `floor(rho * c_out * c_in)` kernels of smallest L2 norm.
/// Equal norms are pruned in ascending flat kernel order.
pub fn sparsify(tensor: &GradientTensor, rho: f64) -> Result<SparsifyResult> {
    check_rho(rho)?;
    let shape = tensor.shape();
    let kernels = shape.kernel_count();
    let pruned_count = pruned_kernels(kernels, rho);

    let norms: Vec<f64> = (0..kernels)
        .map(|j| tensor.kernel(j).iter().map(|&v| f64::from(v) * f64::from(v)).sum())
        .collect();
    let mut order: Vec<usize> = (0..kernels).collect();
    order.sort_by(|&a, &b| norms[a].total_cmp(&norms[b]).then(a.cmp(&b)));

    let mut bits = vec![true; kernels];
    for &j in &order[..pruned_count] {
        bits[j] = false;
    }
    let kept_values = (0..kernels)
        .filter(|&j| bits[j])
        .flat_map(|j| tensor.kernel(j).iter().copied())
        .collect();
    Ok(SparsifyResult {
        mask: KernelMask::new(shape.c_out(), shape.c_in(), bits)?,
        kept_values,
        pruned_count,
    })
}

/// Places `kept_values` back into a dense tensor according to `mask`.
pub fn reconstruct_sparse(kept_values: &[f32], mask: &KernelMask, shape: &LayerShape) -> Result<GradientTensor> {
    if mask.c_out() != shape.c_out() || mask.c_in() != shape.c_in() {
        return Err(Error::format(0, "mask dimensions do not match the layer shape"));
    }
    let klen = shape.kernel_len();
    let expected = mask.kept_count() * klen;
    if kept_values.len() != expected {
        return Err(Error::format(
            0,
            format!(
                "kept value count {} does not match mask ({} kernels x {klen})",
                kept_values.len(),
                mask.kept_count()
            ),
        ));
    }
    let mut values = vec![0.0f32; shape.len()];
    let mut src = kept_values.chunks_exact(klen);
    for j in 0..shape.kernel_count() {
        if mask.is_kept(j) {
            values[j * klen..(j + 1) * klen].copy_from_slice(src.next().unwrap());
        }
    }
    GradientTensor::new(*shape, values)
}
