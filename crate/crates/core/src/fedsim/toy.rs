//! Desk-scale federated training through the real codec.
//!
//! The model is a 3x3 convolution (1 to 4 channels, no padding) on 8x8
//! single-channel images, a ReLU, and a fully connected layer from the 144
//! activations to 2 classes, trained with softmax cross-entropy. Its four
//! parameter tensors are layers 0 (conv weights), 1 (conv bias), 2 (FC
//! weights) and 3 (FC bias).
//!
//! Data are two classes of Gaussian blobs with jittered centres and pixel
//! noise. Each round every participating device computes its full-shard
//! gradient, compresses it at its planned ratio, and the server aggregates
//! the decoded uploads and takes one gradient step. Entries no device
//! covered are left untouched.

use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{ledger_for_round, plans_for_round, RoundLedger, Scenario, Strategy};
use crate::aggregate::{aggregate_decoded, DecodedUpload, DeviceUpload};
use crate::codec::{compress_model, CompressionConfig, DecodedLayer, KernelMask};
use crate::error::{Error, Result};
use crate::grad::{GradientTensor, LayerShape, ModelGradient};
use crate::optimizer::SolverSettings;
use crate::rng;

pub const IMAGE_SIZE: usize = 8;
pub const CHANNELS: usize = 4;
pub const KERNEL: usize = 3;
pub const CLASSES: usize = 2;
const OUT: usize = IMAGE_SIZE - KERNEL + 1;
const HIDDEN: usize = CHANNELS * OUT * OUT;
const PIXELS: usize = IMAGE_SIZE * IMAGE_SIZE;

/// Consecutive rounds above the divergence threshold that abort a run.
pub const DIVERGENCE_ROUNDS: usize = 10;
pub const DIVERGENCE_FACTOR: f64 = 10.0;

const TAG_TRAIN: u64 = 20;
const TAG_TEST: u64 = 21;
const TAG_INIT: u64 = 22;
const TAG_CODEC: u64 = 23;

pub fn toy_shapes() -> Vec<LayerShape> {
    vec![
        LayerShape::conv(0, CHANNELS as u16, 1, KERNEL as u8).unwrap(),
        LayerShape::bias(1, CHANNELS as u16).unwrap(),
        LayerShape::fully_connected(2, CLASSES as u16, HIDDEN as u16).unwrap(),
        LayerShape::bias(3, CLASSES as u16).unwrap(),
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub pixels: [f32; PIXELS],
    pub label: usize,
}

/// `n` labelled blob images. Classes alternate so every prefix is balanced.
pub fn toy_dataset(seed: u64, n: usize) -> Vec<Sample> {
    let centres = [(3.5, 2.5), (3.5, 4.5)];
    let mut r = rng::stream(seed);
    let jitter = Normal::new(0.0, 0.9).unwrap();
    let noise = Normal::new(0.0, 0.5).unwrap();
    (0..n)
        .map(|i| {
            let label = i % CLASSES;
            let (cy, cx) = centres[label];
            let (cy, cx): (f64, f64) = (cy + jitter.sample(&mut r), cx + jitter.sample(&mut r));
            let mut pixels = [0f32; PIXELS];
            for (k, p) in pixels.iter_mut().enumerate() {
                let (y, x) = ((k / IMAGE_SIZE) as f64, (k % IMAGE_SIZE) as f64);
                let d2 = (y - cy).powi(2) + (x - cx).powi(2);
                *p = ((-d2 / 4.0).exp() + noise.sample(&mut r)) as f32;
            }
            Sample { pixels, label }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyNet {
    /// Parameters in layer order, flat as in [`toy_shapes`].
    pub params: Vec<Vec<f32>>,
}

struct Forward {
    z: [f64; HIDDEN],
    probs: [f64; CLASSES],
}

impl ToyNet {
    pub fn init(seed: u64) -> Self {
        let mut r = rng::substream(seed, &[TAG_INIT]);
        let mut normal = |n: usize, std: f64| -> Vec<f32> {
            (0..n)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut r);
                    (z * std) as f32
                })
                .collect()
        };
        let conv = normal(CHANNELS * KERNEL * KERNEL, (2.0 / 9.0f64).sqrt());
        let fc = normal(CLASSES * HIDDEN, (1.0 / HIDDEN as f64).sqrt());
        Self {
            params: vec![conv, vec![0.0; CHANNELS], fc, vec![0.0; CLASSES]],
        }
    }

    fn forward(&self, s: &Sample) -> Forward {
        let (w1, b1, w2, b2) = (&self.params[0], &self.params[1], &self.params[2], &self.params[3]);
        let mut z = [0f64; HIDDEN];
        for o in 0..CHANNELS {
            for r in 0..OUT {
                for c in 0..OUT {
                    let mut acc = f64::from(b1[o]);
                    for u in 0..KERNEL {
                        for v in 0..KERNEL {
                            acc += f64::from(w1[o * 9 + u * 3 + v]) * f64::from(s.pixels[(r + u) * IMAGE_SIZE + c + v]);
                        }
                    }
                    z[o * OUT * OUT + r * OUT + c] = acc;
                }
            }
        }
        let mut logits = [0f64; CLASSES];
        for (j, l) in logits.iter_mut().enumerate() {
            *l = f64::from(b2[j])
                + (0..HIDDEN)
                    .map(|i| f64::from(w2[j * HIDDEN + i]) * z[i].max(0.0))
                    .sum::<f64>();
        }
        let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut probs = logits.map(|l| (l - m).exp());
        let sum: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|p| *p /= sum);
        Forward { z, probs }
    }

    pub fn predict(&self, s: &Sample) -> usize {
        let p = self.forward(s).probs;
        (0..CLASSES).max_by(|&a, &b| p[a].total_cmp(&p[b])).unwrap()
    }

    pub fn accuracy(&self, data: &[Sample]) -> f64 {
        data.iter().filter(|s| self.predict(s) == s.label).count() as f64 / data.len().max(1) as f64
    }

    pub fn loss(&self, data: &[Sample]) -> f64 {
        data.iter()
            .map(|s| -self.forward(s).probs[s.label].max(1e-300).ln())
            .sum::<f64>()
            / data.len().max(1) as f64
    }

    /// Mean loss and mean gradient over `data`.
    pub fn gradient(&self, data: &[Sample]) -> (f64, Vec<Vec<f32>>) {
        let w2 = &self.params[2];
        let mut g: Vec<Vec<f64>> = self.params.iter().map(|p| vec![0.0; p.len()]).collect();
        let mut loss = 0.0;
        for s in data {
            let fw = self.forward(s);
            loss -= fw.probs[s.label].max(1e-300).ln();
            let mut dlogit = fw.probs;
            dlogit[s.label] -= 1.0;
            let mut dz = [0f64; HIDDEN];
            for (j, &d) in dlogit.iter().enumerate() {
                g[3][j] += d;
                for i in 0..HIDDEN {
                    g[2][j * HIDDEN + i] += d * fw.z[i].max(0.0);
                    dz[i] += d * f64::from(w2[j * HIDDEN + i]);
                }
            }
            for o in 0..CHANNELS {
                for r in 0..OUT {
                    for c in 0..OUT {
                        let idx = o * OUT * OUT + r * OUT + c;
                        if fw.z[idx] <= 0.0 {
                            continue;
                        }
                        let d = dz[idx];
                        g[1][o] += d;
                        for u in 0..KERNEL {
                            for v in 0..KERNEL {
                                g[0][o * 9 + u * 3 + v] += d * f64::from(s.pixels[(r + u) * IMAGE_SIZE + c + v]);
                            }
                        }
                    }
                }
            }
        }
        let n = data.len().max(1) as f64;
        let grads = g
            .into_iter()
            .map(|layer| layer.into_iter().map(|v| (v / n) as f32).collect())
            .collect();
        (loss / n, grads)
    }

    /// `w -= lr * g`.
    pub fn step(&mut self, grads: &[GradientTensor], lr: f64) {
        for (p, g) in self.params.iter_mut().zip(grads) {
            for (w, &d) in p.iter_mut().zip(g.values()) {
                *w = (f64::from(*w) - lr * f64::from(d)) as f32;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyTrainSpec {
    pub seed: u64,
    pub rounds: u32,
    pub samples_per_device: usize,
    pub learning_rate: f64,
    pub strategy: Strategy,
    pub test_samples: usize,
    pub compression: CompressionConfig,
}

impl Default for ToyTrainSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            rounds: 30,
            samples_per_device: 32,
            learning_rate: 0.3,
            strategy: Strategy::FedGreen,
            test_samples: 512,
            compression: CompressionConfig::default(),
        }
    }
}

impl ToyTrainSpec {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::config("toy.rounds", "must be at least 1"));
        }
        if self.samples_per_device < 8 {
            return Err(Error::config("toy.samples_per_device", "must be at least 8"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("toy.learning_rate", "must be positive"));
        }
        if self.test_samples == 0 {
            return Err(Error::config("toy.test_samples", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyRun {
    pub ledgers: Vec<RoundLedger>,
    /// Held-out accuracy after each round.
    pub test_accuracy: Vec<f64>,
    /// Training loss after each round.
    pub train_loss: Vec<f64>,
    /// Training loss before the first round.
    pub initial_loss: f64,
    /// Mean achieved compression ratio over uploads, per round.
    pub achieved_alpha: Vec<f64>,
}

/// Shard sizes proportional to the scenario's data counts, at least one
/// sample each, totalling about `devices * samples_per_device`.
pub fn shard_sizes(scenario: &Scenario, samples_per_device: usize) -> Vec<usize> {
    let total = (scenario.devices.len() * samples_per_device) as f64;
    let sum: u64 = scenario.devices.iter().map(|d| d.data).sum();
    scenario
        .devices
        .iter()
        .map(|d| ((d.data as f64 / sum as f64 * total).round() as usize).max(1))
        .collect()
}

/// Dense gradient as an upload covering every entry.
pub fn dense_upload(device_id: u32, grads: Vec<Vec<f32>>, data_count: u64) -> Result<DecodedUpload> {
    let layers = toy_shapes()
        .into_iter()
        .zip(grads)
        .map(|(shape, g)| {
            Ok(DecodedLayer {
                tensor: GradientTensor::new(shape, g)?,
                mask: KernelMask::full(shape.c_out(), shape.c_in()),
            })
        })
        .collect::<Result<_>>()?;
    Ok(DecodedUpload {
        device_id,
        layers,
        data_count,
    })
}

/// Compresses a dense gradient at ratio `alpha` and decodes it again, as
/// the server would see it. Returns the upload and its achieved ratio.
pub fn compressed_upload(
    device_id: u32,
    grads: Vec<Vec<f32>>,
    data_count: u64,
    alpha: f64,
    config: &CompressionConfig,
    seed: u64,
) -> Result<(DecodedUpload, f64)> {
    let layers = toy_shapes()
        .into_iter()
        .zip(grads)
        .map(|(s, g)| GradientTensor::new(s, g))
        .collect::<Result<Vec<_>>>()?;
    let model = ModelGradient::new(layers, data_count)?;
    let c = compress_model(&model, alpha, config, seed)?;
    let upload = DeviceUpload {
        device_id,
        blobs: c.layers,
        data_count,
    };
    Ok((upload.decode()?, c.achieved_alpha))
}

pub fn run_toy_training(scenario: &Scenario, spec: &ToyTrainSpec) -> Result<ToyRun> {
    spec.validate()?;
    scenario.validate()?;
    let sizes = shard_sizes(scenario, spec.samples_per_device);
    let train = toy_dataset(rng::derive_seed(spec.seed, &[TAG_TRAIN]), sizes.iter().sum());
    let test = toy_dataset(rng::derive_seed(spec.seed, &[TAG_TEST]), spec.test_samples);
    let mut shards = Vec::with_capacity(sizes.len());
    let mut start = 0;
    for &n in &sizes {
        shards.push(&train[start..start + n]);
        start += n;
    }

    let mut net = ToyNet::init(spec.seed);
    let initial_loss = net.loss(&train);
    let settings = SolverSettings::default();
    let mut run = ToyRun {
        ledgers: Vec::new(),
        test_accuracy: Vec::new(),
        train_loss: Vec::new(),
        initial_loss,
        achieved_alpha: Vec::new(),
    };
    let mut cumulative = 0.0;
    let mut above = 0;
    for round in 1..=spec.rounds {
        let devices = scenario.devices_for_round(round);
        let plans = plans_for_round(scenario, &devices, spec.strategy, round, &settings)?;
        let ledger = ledger_for_round(scenario, &devices, &plans, round, cumulative)?;
        cumulative = ledger.cumulative_energy;

        let mut uploads = Vec::new();
        let mut alphas = Vec::new();
        for (i, plan) in plans.iter().enumerate() {
            if !plan.participating {
                continue;
            }
            let (_, grads) = net.gradient(shards[i]);
            let count = shards[i].len() as u64;
            if spec.strategy == Strategy::Uncompressed {
                uploads.push(dense_upload(plan.device_id, grads, count)?);
                alphas.push(1.0);
            } else {
                let seed = rng::derive_seed(spec.seed, &[TAG_CODEC, u64::from(round), u64::from(plan.device_id)]);
                let (u, a) = compressed_upload(plan.device_id, grads, count, plan.alpha, &spec.compression, seed)?;
                uploads.push(u);
                alphas.push(a);
            }
        }
        let global = aggregate_decoded(&uploads)?;
        net.step(&global.layers, spec.learning_rate);

        let loss = net.loss(&train);
        if !loss.is_finite() || loss > DIVERGENCE_FACTOR * initial_loss {
            above += 1;
        } else {
            above = 0;
        }
        if above >= DIVERGENCE_ROUNDS {
            return Err(Error::Divergence {
                round: round as usize,
                loss,
                initial: initial_loss,
            });
        }
        run.ledgers.push(ledger);
        run.train_loss.push(loss);
        run.test_accuracy.push(net.accuracy(&test));
        run.achieved_alpha
            .push(alphas.iter().sum::<f64>() / alphas.len() as f64);
    }
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregate::aggregate_decoded;
    use crate::fedsim::sample_scenario;

    #[test]
    fn gradient_matches_finite_differences() {
        let data = toy_dataset(3, 16);
        let net = ToyNet::init(4);
        let (_, g) = net.gradient(&data);
        for (layer, idx) in [(0, 4), (1, 2), (2, 100), (3, 1)] {
            let h = 1e-3f32;
            let mut plus = net.clone();
            plus.params[layer][idx] += h;
            let mut minus = net.clone();
            minus.params[layer][idx] -= h;
            let fd = (plus.loss(&data) - minus.loss(&data)) / (2.0 * f64::from(h));
            let an = f64::from(g[layer][idx]);
            assert!(
                (fd - an).abs() <= 1e-3 * (1.0 + an.abs()),
                "layer {layer}: fd {fd} vs {an}"
            );
        }
    }

    #[test]
    fn dataset_is_balanced_and_seeded() {
        let d = toy_dataset(1, 100);
        assert_eq!(d.iter().filter(|s| s.label == 1).count(), 50);
        assert_eq!(d, toy_dataset(1, 100));
    }

    #[test]
    fn uncompressed_loss_decreases() {
        let s = sample_scenario(4, 0).unwrap();
        let spec = ToyTrainSpec {
            rounds: 20,
            learning_rate: 0.05,
            strategy: Strategy::Uncompressed,
            ..ToyTrainSpec::default()
        };
        let run = run_toy_training(&s, &spec).unwrap();
        let mut last = run.initial_loss;
        for &l in &run.train_loss {
            assert!(l < last, "{:?}", run.train_loss);
            last = l;
        }
    }

    #[test]
    fn lossless_uploads_match_fedavg() {
        // Constant magnitudes per layer quantize exactly; ratio 1 prunes
        // nothing, so the codec path must reproduce the dense average.
        let mut uploads = Vec::new();
        let mut dense = Vec::new();
        for dev in 0..3u32 {
            let grads: Vec<Vec<f32>> = toy_shapes()
                .iter()
                .map(|s| {
                    (0..s.len())
                        .map(|k| {
                            if (k + dev as usize).is_multiple_of(3) {
                                -0.25
                            } else {
                                0.25
                            }
                        })
                        .collect()
                })
                .collect();
            let count = 10 + u64::from(dev) * 7;
            dense.push(dense_upload(dev, grads.clone(), count).unwrap());
            let (u, _) = compressed_upload(dev, grads, count, 1.0, &CompressionConfig::default(), 5).unwrap();
            uploads.push(u);
        }
        assert_eq!(aggregate_decoded(&uploads).unwrap(), aggregate_decoded(&dense).unwrap());
    }

    #[test]
    fn deterministic_runs() {
        let s = sample_scenario(4, 1).unwrap();
        let spec = ToyTrainSpec {
            rounds: 3,
            ..ToyTrainSpec::default()
        };
        let a = run_toy_training(&s, &spec).unwrap();
        assert_eq!(a, run_toy_training(&s, &spec).unwrap());
    }

    #[test]
    fn divergence_is_reported() {
        let s = sample_scenario(4, 1).unwrap();
        let spec = ToyTrainSpec {
            rounds: 40,
            learning_rate: 1e4,
            strategy: Strategy::Uncompressed,
            ..ToyTrainSpec::default()
        };
        assert!(matches!(run_toy_training(&s, &spec), Err(Error::Divergence { .. })));
    }

    #[test]
    fn spec_validation() {
        let spec = ToyTrainSpec {
            samples_per_device: 4,
            ..ToyTrainSpec::default()
        };
        assert!(matches!(spec.validate(), Err(Error::Config { .. })));
    }
}
