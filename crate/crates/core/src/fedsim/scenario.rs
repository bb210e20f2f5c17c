//! Seeded device populations.

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::perf::{AccuracyModel, DeviceProfile, SystemConfig};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ChannelMode {
    /// Channels and baseline draws stay fixed for the whole run.
    #[default]
    Static,
    /// Block fading: each round redraws every device's SNR and the random
    /// baseline's ratios.
    PerRoundRedraw,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DataSplit {
    /// Equal shares; the remainder goes one sample each to the first devices.
    #[default]
    Iid,
    /// Shares proportional to a Dirichlet draw, at least one sample each.
    Dirichlet { concentration: f64 },
}

/// Sampling distributions for a population. Ranges are closed intervals
/// sampled uniformly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PopulationSpec {
    pub device_count: usize,
    pub total_data: u64,
    pub split: DataSplit,
    pub epsilon: (f64, f64),
    /// Cycles/s.
    pub f_max: (f64, f64),
    /// Hz.
    pub bandwidth: (f64, f64),
    /// W.
    pub power: (f64, f64),
    /// Received SNR `p |h|^2 / (N0 b)` in dB; `h` is derived from it.
    pub snr_db: (f64, f64),
}

impl Default for PopulationSpec {
    fn default() -> Self {
        Self {
            device_count: 16,
            total_data: 50_000,
            split: DataSplit::Iid,
            epsilon: (5e-27, 1e-26),
            f_max: (1.5e9, 4e9),
            bandwidth: (0.8e6, 5e6),
            power: (0.1, 1.0),
            snr_db: (3.0, 12.0),
        }
    }
}

impl PopulationSpec {
    /// Checks every field; errors name the offending key.
    pub fn validate(&self) -> Result<()> {
        if self.device_count == 0 {
            return Err(Error::config("population.device_count", "must be at least 1"));
        }
        if self.total_data < self.device_count as u64 {
            return Err(Error::config(
                "population.total_data",
                "must be at least one sample per device",
            ));
        }
        if let DataSplit::Dirichlet { concentration } = self.split {
            if !(concentration > 0.0 && concentration.is_finite()) {
                return Err(Error::config("population.split.concentration", "must be positive"));
            }
        }
        let ranges = [
            ("population.epsilon", self.epsilon, true),
            ("population.f_max", self.f_max, true),
            ("population.bandwidth", self.bandwidth, true),
            ("population.power", self.power, true),
            ("population.snr_db", self.snr_db, false),
        ];
        for (key, (lo, hi), positive) in ranges {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::config(
                    key,
                    format!("need a finite range with min <= max, got [{lo}, {hi}]"),
                ));
            }
            if positive && !(lo > 0.0) {
                return Err(Error::config(key, format!("must be positive, got minimum {lo}")));
            }
        }
        Ok(())
    }
}

/// A fixed population plus the shared round parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub devices: Vec<DeviceProfile>,
    pub config: SystemConfig,
    pub accuracy_model: AccuracyModel,
    pub seed: u64,
    pub channel_mode: ChannelMode,
    /// Distribution used for per-round channel redraws.
    pub snr_db: (f64, f64),
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if self.devices.is_empty() {
            return Err(Error::domain("scenario has no devices"));
        }
        for d in &self.devices {
            d.validate()?;
        }
        self.config.validate()?;
        self.accuracy_model.validate()?;
        let total: u64 = self.devices.iter().map(|d| d.data).sum();
        if total != self.config.total_data {
            return Err(Error::domain(format!(
                "total_data {} differs from the device sum {total}",
                self.config.total_data
            )));
        }
        Ok(())
    }

    /// Device profiles in effect during `round` (1-based).
    pub fn devices_for_round(&self, round: u32) -> Vec<DeviceProfile> {
        match self.channel_mode {
            ChannelMode::Static => self.devices.clone(),
            ChannelMode::PerRoundRedraw => self
                .devices
                .iter()
                .map(|d| {
                    let mut r = rng::substream(self.seed, &[TAG_CHANNEL, u64::from(round), u64::from(d.device_id)]);
                    DeviceProfile {
                        gain: gain_for_snr(r.random_range(self.snr_db.0..=self.snr_db.1), d, self.config.noise_psd),
                        ..*d
                    }
                })
                .collect(),
        }
    }
}

const TAG_DEVICE: u64 = 1;
const TAG_SPLIT: u64 = 2;
const TAG_CHANNEL: u64 = 3;

/// Amplitude gain giving `snr_db` for this device's power and bandwidth.
pub fn gain_for_snr(snr_db: f64, device: &DeviceProfile, noise_psd: f64) -> f64 {
    let snr = 10f64.powf(snr_db / 10.0);
    (snr * noise_psd * device.bandwidth / device.power).sqrt()
}

/// Splits `total` samples over `n` devices.
pub fn split_data(total: u64, n: usize, split: DataSplit, seed: u64) -> Result<Vec<u64>> {
    if n == 0 || total < n as u64 {
        return Err(Error::domain(format!("cannot split {total} samples over {n} devices")));
    }
    match split {
        DataSplit::Iid => {
            let base = total / n as u64;
            let extra = (total % n as u64) as usize;
            Ok((0..n).map(|i| base + u64::from(i < extra)).collect())
        }
        DataSplit::Dirichlet { concentration } => {
            let gamma = Gamma::new(concentration, 1.0).map_err(|e| Error::domain(e.to_string()))?;
            let mut r = rng::substream(seed, &[TAG_SPLIT]);
            let draws: Vec<f64> = (0..n).map(|_| gamma.sample(&mut r)).collect();
            let sum: f64 = draws.iter().sum();
            // One sample each up front, the rest by largest remainder.
            let spare = total - n as u64;
            let ideal: Vec<f64> = draws
                .iter()
                .map(|g| {
                    if sum > 0.0 {
                        g / sum * spare as f64
                    } else {
                        spare as f64 / n as f64
                    }
                })
                .collect();
            let mut shares: Vec<u64> = ideal.iter().map(|x| x.floor() as u64).collect();
            let mut left = spare - shares.iter().sum::<u64>().min(spare);
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| {
                (ideal[b] - ideal[b].floor())
                    .total_cmp(&(ideal[a] - ideal[a].floor()))
                    .then(a.cmp(&b))
            });
            for &i in order.iter().cycle() {
                if left == 0 {
                    break;
                }
                shares[i] += 1;
                left -= 1;
            }
            Ok(shares.into_iter().map(|s| s + 1).collect())
        }
    }
}

/// Draws a population from `spec`.
pub fn sample_population(
    spec: &PopulationSpec,
    config: &SystemConfig,
    accuracy_model: &AccuracyModel,
    channel_mode: ChannelMode,
    seed: u64,
) -> Result<Scenario> {
    spec.validate()?;
    let data = split_data(spec.total_data, spec.device_count, spec.split, seed)?;
    let devices = (0..spec.device_count)
        .map(|i| {
            let mut r = rng::substream(seed, &[TAG_DEVICE, i as u64]);
            let mut d = DeviceProfile {
                device_id: i as u32,
                epsilon: r.random_range(spec.epsilon.0..=spec.epsilon.1),
                f_max: r.random_range(spec.f_max.0..=spec.f_max.1),
                bandwidth: r.random_range(spec.bandwidth.0..=spec.bandwidth.1),
                power: r.random_range(spec.power.0..=spec.power.1),
                gain: 0.0,
                data: data[i],
            };
            d.gain = gain_for_snr(r.random_range(spec.snr_db.0..=spec.snr_db.1), &d, config.noise_psd);
            d
        })
        .collect();
    let scenario = Scenario {
        devices,
        config: SystemConfig {
            total_data: spec.total_data,
            ..*config
        },
        accuracy_model: *accuracy_model,
        seed,
        channel_mode,
        snr_db: spec.snr_db,
    };
    scenario.validate()?;
    Ok(scenario)
}

/// Default population with `device_count` devices, IID data and static
/// channels.
pub fn sample_scenario(device_count: usize, seed: u64) -> Result<Scenario> {
    let spec = PopulationSpec {
        device_count,
        ..PopulationSpec::default()
    };
    sample_population(
        &spec,
        &SystemConfig::default(),
        &AccuracyModel::default(),
        ChannelMode::Static,
        seed,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perf::uplink_rate;

    #[test]
    fn deterministic() {
        assert_eq!(sample_scenario(16, 3).unwrap(), sample_scenario(16, 3).unwrap());
        assert_ne!(sample_scenario(16, 3).unwrap(), sample_scenario(16, 4).unwrap());
    }

    #[test]
    fn draws_respect_ranges() {
        let s = sample_scenario(200, 1).unwrap();
        for d in &s.devices {
            assert!((5e-27..=1e-26).contains(&d.epsilon));
            assert!((1.5e9..=4e9).contains(&d.f_max));
            assert!((0.8e6..=5e6).contains(&d.bandwidth));
            assert!((0.1..=1.0).contains(&d.power));
            let r = uplink_rate(d, s.config.noise_psd);
            assert!((0.8e6..=5e6 * 4.1).contains(&r), "rate {r}");
        }
        assert_eq!(s.config.deadline, 100.0);
        assert_eq!(s.config.global_iterations, 300);
    }

    #[test]
    fn iid_split_is_equal() {
        let spec = PopulationSpec {
            total_data: 48_000,
            ..PopulationSpec::default()
        };
        let s = sample_population(
            &spec,
            &SystemConfig::default(),
            &AccuracyModel::default(),
            ChannelMode::Static,
            0,
        )
        .unwrap();
        assert!(s.devices.iter().all(|d| d.data == 3000));
        assert_eq!(split_data(10, 3, DataSplit::Iid, 0).unwrap(), vec![4, 3, 3]);
    }

    #[test]
    fn dirichlet_split_sums_and_is_skewed() {
        let shares = split_data(50_000, 16, DataSplit::Dirichlet { concentration: 0.5 }, 7).unwrap();
        assert_eq!(shares.iter().sum::<u64>(), 50_000);
        assert!(shares.iter().all(|&s| s >= 1));
        let (lo, hi) = (shares.iter().min().unwrap(), shares.iter().max().unwrap());
        assert!(hi > &(3 * lo));
        let tiny = split_data(16, 16, DataSplit::Dirichlet { concentration: 0.5 }, 7).unwrap();
        assert!(tiny.iter().all(|&s| s == 1));
    }

    #[test]
    fn redraw_changes_only_gains() {
        let mut s = sample_scenario(4, 9).unwrap();
        assert_eq!(s.devices_for_round(1), s.devices);
        s.channel_mode = ChannelMode::PerRoundRedraw;
        let (a, b) = (s.devices_for_round(1), s.devices_for_round(2));
        assert_ne!(a, b);
        assert_eq!(a, s.devices_for_round(1));
        for (x, y) in a.iter().zip(&s.devices) {
            assert_eq!(x.f_max, y.f_max);
            assert_eq!(x.data, y.data);
        }
    }

    #[test]
    fn validation_names_keys() {
        let spec = PopulationSpec {
            bandwidth: (-1.0, 5e6),
            ..PopulationSpec::default()
        };
        match spec.validate() {
            Err(Error::Config { key, .. }) => assert_eq!(key, "population.bandwidth"),
            other => panic!("{other:?}"),
        }
    }
}
