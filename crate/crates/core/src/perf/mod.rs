//! Analytical models: accuracy versus compression ratio, uplink rate,
//! per-round latency and energy, and the accuracy/energy goal.
//!
//! All arithmetic is in `f64`.

mod fit;

use serde::{Deserialize, Serialize};

pub use fit::{fit_kappa, fit_kappa_with_scale, FitReport, DEFAULT_KAPPA2};

use crate::error::{Error, Result};

/// `F(alpha) = kappa1 * log2(max(kappa2/alpha - kappa3, clamp_epsilon)) + kappa4`,
/// clamped to `[0, 1]`.
///
/// With the default constants the log argument is positive only for
/// `alpha < kappa2/kappa3 ~ 7.5`; beyond that the argument is floored at
/// `clamp_epsilon`, which makes `F` constant, and evaluations report
/// `clamped = true`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AccuracyModel {
    pub kappa1: f64,
    pub kappa2: f64,
    pub kappa3: f64,
    pub kappa4: f64,
    pub clamp_epsilon: f64,
}

impl Default for AccuracyModel {
    /// Constants fitted on a proxy dataset (CINIC-10, VGG-9).
    fn default() -> Self {
        Self {
            kappa1: 0.024,
            kappa2: 19.221,
            kappa3: 2.561,
            kappa4: 0.609,
            clamp_epsilon: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccuracyEval {
    pub value: f64,
    /// The log argument hit its floor or the output hit 0 or 1.
    pub clamped: bool,
}

impl AccuracyModel {
    pub fn new(kappa1: f64, kappa2: f64, kappa3: f64, kappa4: f64, clamp_epsilon: f64) -> Result<Self> {
        let m = Self {
            kappa1,
            kappa2,
            kappa3,
            kappa4,
            clamp_epsilon,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.kappa1, self.kappa2, self.kappa3, self.kappa4, self.clamp_epsilon];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("accuracy model constants must be finite"));
        }
        if self.kappa1 < 0.0 || self.kappa2 <= 0.0 || self.kappa3 < 0.0 || self.clamp_epsilon <= 0.0 {
            return Err(Error::domain(format!(
                "need kappa1 >= 0, kappa2 > 0, kappa3 >= 0, clamp_epsilon > 0; got {self:?}"
            )));
        }
        Ok(())
    }

    /// `kappa2 * lambda - kappa3` with `lambda = 1/alpha`.
    pub fn log_argument(&self, lambda: f64) -> f64 {
        self.kappa2 * lambda - self.kappa3
    }

    /// Unclamped value as a function of `lambda = 1/alpha`. Only meaningful
    /// where the log argument is positive.
    pub fn raw(&self, lambda: f64) -> f64 {
        self.kappa1 * self.log_argument(lambda).log2() + self.kappa4
    }

    /// Evaluates `F` at `lambda = 1/alpha` without the `alpha >= 1` check.
    pub fn evaluate_lambda(&self, lambda: f64) -> AccuracyEval {
        let arg = self.log_argument(lambda);
        let arg_clamped = !(arg >= self.clamp_epsilon);
        let v = self.kappa1 * arg.max(self.clamp_epsilon).log2() + self.kappa4;
        AccuracyEval {
            value: v.clamp(0.0, 1.0),
            clamped: arg_clamped || !(0.0..=1.0).contains(&v),
        }
    }

    pub fn evaluate(&self, alpha: f64) -> Result<AccuracyEval> {
        if !(alpha >= 1.0) {
            return Err(Error::domain(format!("compression ratio must be >= 1, got {alpha}")));
        }
        Ok(self.evaluate_lambda(1.0 / alpha))
    }

    pub fn accuracy(&self, alpha: f64) -> Result<f64> {
        self.evaluate(alpha).map(|e| e.value)
    }

    /// Range of `lambda` on which neither clamp is active:
    /// the log argument is at least `clamp_epsilon` and the value lies in
    /// `[0, 1]`. Returns `None` when the range is empty or `kappa1 = 0`.
    pub fn unclamped_lambda_range(&self) -> Option<(f64, f64)> {
        if self.kappa1 == 0.0 {
            return None;
        }
        // arg >= eps, F >= 0 and F <= 1 are each a threshold on arg.
        let arg_for = |f: f64| ((f - self.kappa4) / self.kappa1).exp2();
        let lo_arg = self.clamp_epsilon.max(arg_for(0.0));
        let hi_arg = arg_for(1.0);
        if !(lo_arg < hi_arg) {
            return None;
        }
        let to_lambda = |arg: f64| (arg + self.kappa3) / self.kappa2;
        Some((to_lambda(lo_arg), to_lambda(hi_arg)))
    }
}

/// Per-device hardware and channel parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceProfile {
    pub device_id: u32,
    /// Maximum CPU frequency, cycles/s.
    pub f_max: f64,
    /// Transmit power, W.
    pub power: f64,
    /// Bandwidth, Hz.
    pub bandwidth: f64,
    /// Channel amplitude gain `h`; the rate uses `|h|^2`.
    pub gain: f64,
    /// Effective switched capacitance.
    pub epsilon: f64,
    /// Training samples held by the device.
    pub data: u64,
}

impl DeviceProfile {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("f_max", self.f_max),
            ("power", self.power),
            ("bandwidth", self.bandwidth),
            ("gain", self.gain),
            ("epsilon", self.epsilon),
        ];
        for (name, v) in fields {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::domain(format!(
                    "device {}: {name} must be positive and finite, got {v}",
                    self.device_id
                )));
            }
        }
        if self.data == 0 {
            return Err(Error::domain(format!(
                "device {}: data must be positive",
                self.device_id
            )));
        }
        Ok(())
    }

    /// Cycles per round, `n * D * W`.
    pub fn workload(&self, config: &SystemConfig) -> f64 {
        f64::from(config.local_epochs) * self.data as f64 * config.cycles_per_sample
    }
}

/// Round-level system parameters shared by all devices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    /// Uncompressed gradient size `S`, bits.
    pub gradient_bits: f64,
    /// `W`, CPU cycles per training sample.
    pub cycles_per_sample: f64,
    /// `n`, local epochs per round.
    pub local_epochs: u32,
    /// `N0`, noise power spectral density, W/Hz.
    pub noise_psd: f64,
    /// `T_max`, per-round deadline, s.
    pub deadline: f64,
    /// `J`, global iterations.
    pub global_iterations: u32,
    /// Weight of the energy term in the goal, 1/J.
    pub varpi: f64,
    /// Sum of device sample counts.
    pub total_data: u64,
    /// Largest compression ratio the codec is asked to deliver.
    pub alpha_max: f64,
}

/// Converts a power spectral density from dBm/Hz to W/Hz.
pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0) * 1e-3
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            gradient_bits: 111.7e6,
            cycles_per_sample: 0.98e6,
            local_epochs: 1,
            noise_psd: dbm_to_watts(-114.0),
            deadline: 100.0,
            global_iterations: 300,
            varpi: 1e-4,
            total_data: 50_000,
            alpha_max: 300.0,
        }
    }
}

impl SystemConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("gradient_bits", self.gradient_bits),
            ("cycles_per_sample", self.cycles_per_sample),
            ("noise_psd", self.noise_psd),
            ("deadline", self.deadline),
        ];
        for (name, v) in fields {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::domain(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if !(self.varpi >= 0.0 && self.varpi.is_finite()) {
            return Err(Error::domain(format!("varpi must be >= 0, got {}", self.varpi)));
        }
        if self.local_epochs == 0 || self.global_iterations == 0 || self.total_data == 0 {
            return Err(Error::domain(
                "local_epochs, global_iterations and total_data must be positive",
            ));
        }
        if !(self.alpha_max >= 1.0 && self.alpha_max.is_finite()) {
            return Err(Error::domain(format!("alpha_max must be >= 1, got {}", self.alpha_max)));
        }
        Ok(())
    }

    /// Energy weight of the goal, `varpi * J`.
    pub fn energy_weight(&self) -> f64 {
        self.varpi * f64::from(self.global_iterations)
    }
}

/// `r = b * log2(1 + p |h|^2 / (N0 b))`, bits/s.
pub fn uplink_rate(profile: &DeviceProfile, noise_psd: f64) -> f64 {
    let snr = profile.power * profile.gain * profile.gain / (noise_psd * profile.bandwidth);
    profile.bandwidth * snr.ln_1p() / std::f64::consts::LN_2
}

/// Data-weighted mean of per-device accuracies:
/// `(1/total) * sum_i D_i F(alpha_i)`.
pub fn contribution(model: &AccuracyModel, alphas: &[f64], data: &[u64], total: u64) -> Result<f64> {
    if alphas.len() != data.len() {
        return Err(Error::domain(format!(
            "{} ratios for {} devices",
            alphas.len(),
            data.len()
        )));
    }
    if total == 0 {
        return Err(Error::domain("total data must be positive"));
    }
    let mut acc = 0.0;
    for (&a, &d) in alphas.iter().zip(data) {
        acc += d as f64 * model.accuracy(a)?;
    }
    Ok(acc / total as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub comm_time: f64,
    pub comp_time: f64,
    pub comm_energy: f64,
    pub comp_energy: f64,
}

impl CostBreakdown {
    pub fn latency(&self) -> f64 {
        self.comm_time + self.comp_time
    }

    pub fn energy(&self) -> f64 {
        self.comm_energy + self.comp_energy
    }
}

/// Relative slack allowed on the deadline check.
pub const DEADLINE_TOLERANCE: f64 = 1e-9;

/// True when `latency <= T_max` up to [`DEADLINE_TOLERANCE`].
pub fn meets_deadline(latency: f64, config: &SystemConfig) -> bool {
    latency <= config.deadline * (1.0 + DEADLINE_TOLERANCE)
}

/// Latency and energy of one round at ratio `alpha` and frequency `f`.
pub fn round_cost(profile: &DeviceProfile, config: &SystemConfig, alpha: f64, f: f64) -> Result<CostBreakdown> {
    if !(alpha >= 1.0) {
        return Err(Error::domain(format!("compression ratio must be >= 1, got {alpha}")));
    }
    if !(f > 0.0 && f <= profile.f_max) {
        return Err(Error::domain(format!(
            "device {}: frequency {f} outside (0, {}]",
            profile.device_id, profile.f_max
        )));
    }
    let rate = uplink_rate(profile, config.noise_psd);
    let cycles = profile.workload(config);
    let comm_time = config.gradient_bits / (alpha * rate);
    Ok(CostBreakdown {
        comm_time,
        comp_time: cycles / f,
        comm_energy: profile.power * comm_time,
        comp_energy: profile.epsilon * f * f * cycles,
    })
}

/// One device's decision as seen by the goal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub alpha: f64,
    pub f: f64,
    /// Excluded devices add neither accuracy nor energy.
    pub participating: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalEval {
    pub goal: f64,
    pub contribution: f64,
    /// Total per-round energy of participating devices, J.
    pub energy: f64,
    pub costs: Vec<CostBreakdown>,
    /// Per-device deadline check.
    pub feasible: Vec<bool>,
    pub accuracy_clamped: bool,
}

impl GoalEval {
    pub fn all_feasible(&self) -> bool {
        self.feasible.iter().all(|&f| f)
    }
}

/// `G = F_contrib - varpi * J * sum_i (p_i S/(alpha_i r_i) + eps_i f_i^2 n D_i W)`.
///
/// Infeasible decisions are still evaluated and flagged in
/// [`GoalEval::feasible`].
pub fn goal(
    model: &AccuracyModel,
    profiles: &[DeviceProfile],
    config: &SystemConfig,
    decisions: &[Decision],
) -> Result<GoalEval> {
    if profiles.len() != decisions.len() {
        return Err(Error::domain(format!(
            "{} decisions for {} devices",
            decisions.len(),
            profiles.len()
        )));
    }
    let mut accuracy = 0.0;
    let mut energy = 0.0;
    let mut costs = Vec::with_capacity(profiles.len());
    let mut feasible = Vec::with_capacity(profiles.len());
    let mut accuracy_clamped = false;
    for (p, d) in profiles.iter().zip(decisions) {
        let cost = round_cost(p, config, d.alpha, d.f)?;
        feasible.push(meets_deadline(cost.latency(), config));
        if d.participating {
            let eval = model.evaluate(d.alpha)?;
            accuracy_clamped |= eval.clamped;
            accuracy += p.data as f64 * eval.value;
            energy += cost.energy();
            costs.push(cost);
        } else {
            costs.push(CostBreakdown::default());
        }
    }
    let contribution = accuracy / config.total_data as f64;
    Ok(GoalEval {
        goal: contribution - config.energy_weight() * energy,
        contribution,
        energy,
        costs,
        feasible,
        accuracy_clamped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn device() -> DeviceProfile {
        DeviceProfile {
            device_id: 0,
            f_max: 3e9,
            power: 0.5,
            bandwidth: 1e6,
            gain: 1.0,
            epsilon: 1e-26,
            data: 1000,
        }
    }

    #[test]
    fn rate_examples() {
        let mut d = device();
        // p|h|^2 / (N0 b) = 15.
        d.gain = (15.0f64 * 1e-12 * 1e6 / 0.5).sqrt();
        assert!((uplink_rate(&d, 1e-12) - 4e6).abs() < 1e-3);
        d.bandwidth = 2e6;
        d.gain = (3.0f64 * 1e-12 * 2e6 / 0.5).sqrt();
        assert!((uplink_rate(&d, 1e-12) - 4e6).abs() < 1e-3);
        d.gain = 1e-12;
        assert!(uplink_rate(&d, 1e-12) < 1e-6);
    }

    #[test]
    fn accuracy_reference_values() {
        let m = AccuracyModel::default();
        // Frozen from an independent evaluation of the formula.
        assert!((m.accuracy(1.0).unwrap() - 0.706_399_595_894_179_8).abs() < 1e-12);
        assert!((m.accuracy(2.0).unwrap() - 0.676_620_502_442_057).abs() < 1e-12);
        assert!(m.accuracy(0.5).is_err());
    }

    #[test]
    fn accuracy_clamps_beyond_domain() {
        let m = AccuracyModel::default();
        let e = m.evaluate(50.0).unwrap();
        assert!(e.clamped);
        assert!((e.value - 0.369_821_177_168_109_9).abs() < 1e-12);
        assert!(!m.evaluate(3.0).unwrap().clamped);
        assert_eq!(m.accuracy(100.0).unwrap(), m.accuracy(300.0).unwrap());
    }

    #[test]
    fn flat_model() {
        let m = AccuracyModel::new(0.0, 19.0, 2.0, 0.55, 1e-3).unwrap();
        for a in [1.0, 2.0, 10.0, 300.0] {
            assert_eq!(m.accuracy(a).unwrap(), 0.55);
        }
        assert!(m.unclamped_lambda_range().is_none());
    }

    #[test]
    fn accuracy_is_monotone() {
        let m = AccuracyModel::default();
        let mut last = f64::INFINITY;
        for i in 0..2000 {
            let a = 1.0 + i as f64 * 0.01;
            let v = m.accuracy(a).unwrap();
            assert!(v <= last);
            if !m.evaluate(a).unwrap().clamped && i > 0 {
                assert!(v < last);
            }
            last = v;
        }
    }

    #[test]
    fn unclamped_range_matches_evaluation() {
        let m = AccuracyModel::default();
        let (lo, hi) = m.unclamped_lambda_range().unwrap();
        assert!(!m.evaluate_lambda(lo * (1.0 + 1e-9)).clamped);
        assert!(m.evaluate_lambda(lo * (1.0 - 1e-6)).clamped);
        assert!(hi > 1.0);
    }

    #[test]
    fn contribution_examples() {
        let m = AccuracyModel::default();
        let f = m.accuracy(2.0).unwrap();
        assert!((contribution(&m, &[2.0, 2.0, 2.0], &[1, 5, 9], 15).unwrap() - f).abs() < 1e-15);
        assert_eq!(contribution(&m, &[4.0], &[7], 7).unwrap(), m.accuracy(4.0).unwrap());
        assert!(contribution(&m, &[1.0], &[1, 2], 3).is_err());
        // D = (1, 3), F = (0.7, 0.6) -> 0.625 with a flat model per device.
        let a = AccuracyModel::new(0.0, 1.0, 0.0, 0.7, 1e-3).unwrap();
        let b = AccuracyModel::new(0.0, 1.0, 0.0, 0.6, 1e-3).unwrap();
        let mixed = contribution(&a, &[1.0], &[1], 4).unwrap() + contribution(&b, &[1.0], &[3], 4).unwrap();
        assert!((mixed - 0.625).abs() < 1e-15);
    }

    #[test]
    fn contribution_ignores_uniform_data_scaling() {
        let m = AccuracyModel::default();
        let a = contribution(&m, &[1.5, 3.0, 6.0], &[2, 3, 5], 10).unwrap();
        let b = contribution(&m, &[1.5, 3.0, 6.0], &[20, 30, 50], 100).unwrap();
        assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn round_cost_examples() {
        let mut d = device();
        let mut cfg = SystemConfig {
            gradient_bits: 1e6,
            ..SystemConfig::default()
        };
        // r = 1e5 bps: b = 1e5, SNR = 1.
        d.bandwidth = 1e5;
        cfg.noise_psd = 1e-12;
        d.gain = (1e-12 * 1e5 / d.power).sqrt();
        let c = round_cost(&d, &cfg, 10.0, 1e9).unwrap();
        assert!((c.comm_time - 1.0).abs() < 1e-12);
        assert!((c.comm_energy - 0.5).abs() < 1e-12);

        // eps = 1e-26, f = 2e9, nDW = 1e9 -> 40 J.
        let mut d2 = device();
        d2.data = 1000;
        let cfg2 = SystemConfig {
            cycles_per_sample: 1e6,
            ..SystemConfig::default()
        };
        let c2 = round_cost(&d2, &cfg2, 1.0, 2e9).unwrap();
        assert!((c2.comp_energy - 40.0).abs() < 1e-9);
        assert!((c2.comp_time - 0.5).abs() < 1e-15);

        let far = round_cost(&d2, &cfg2, 1e300, 2e9).unwrap();
        assert!(far.comm_time < 1e-290 && far.comm_energy < 1e-290);
        assert!(round_cost(&d2, &cfg2, 1.0, 4e9).is_err());
        assert!(round_cost(&d2, &cfg2, 1.0, 0.0).is_err());
    }

    fn devices() -> Vec<DeviceProfile> {
        (0..3)
            .map(|i| DeviceProfile {
                device_id: i,
                data: 1000 + 500 * u64::from(i),
                gain: 1.0 + f64::from(i),
                ..device()
            })
            .collect()
    }

    #[test]
    fn goal_without_energy_weight_is_contribution() {
        let m = AccuracyModel::default();
        let devs = devices();
        let cfg = SystemConfig {
            varpi: 0.0,
            total_data: 4500,
            ..SystemConfig::default()
        };
        let ds: Vec<Decision> = devs
            .iter()
            .map(|_| Decision {
                alpha: 2.0,
                f: 1e9,
                participating: true,
            })
            .collect();
        let g = goal(&m, &devs, &cfg, &ds).unwrap();
        assert_eq!(g.goal, g.contribution);
    }

    #[test]
    fn goal_composes_contribution_and_costs() {
        let m = AccuracyModel::default();
        let devs = &devices()[..1];
        let cfg = SystemConfig {
            total_data: 1000,
            ..SystemConfig::default()
        };
        let d = Decision {
            alpha: 3.0,
            f: 2e9,
            participating: true,
        };
        let g = goal(&m, devs, &cfg, &[d]).unwrap();
        let cost = round_cost(&devs[0], &cfg, 3.0, 2e9).unwrap();
        let expected = m.accuracy(3.0).unwrap() - 1e-4 * 300.0 * (cost.comm_energy + cost.comp_energy);
        assert!((g.goal - expected).abs() < 1e-12 * expected.abs().max(1.0));

        let doubled = SystemConfig {
            global_iterations: 600,
            ..cfg
        };
        let g2 = goal(&m, devs, &doubled, &[d]).unwrap();
        let pen1 = g.contribution - g.goal;
        let pen2 = g2.contribution - g2.goal;
        assert!((pen2 - 2.0 * pen1).abs() <= 1e-12 * pen2.abs());
    }

    #[test]
    fn goal_decreases_with_frequency() {
        let m = AccuracyModel::default();
        let devs = &devices()[..1];
        let cfg = SystemConfig::default();
        let mut last = f64::INFINITY;
        for k in 1..30 {
            let d = Decision {
                alpha: 2.0,
                f: 1e8 * f64::from(k),
                participating: true,
            };
            let g = goal(&m, devs, &cfg, &[d]).unwrap().goal;
            assert!(g < last);
            last = g;
        }
    }

    #[test]
    fn excluded_devices_cost_nothing() {
        let m = AccuracyModel::default();
        let devs = devices();
        let cfg = SystemConfig {
            total_data: 4500,
            ..SystemConfig::default()
        };
        let mut ds: Vec<Decision> = devs
            .iter()
            .map(|_| Decision {
                alpha: 2.0,
                f: 1e9,
                participating: true,
            })
            .collect();
        let full = goal(&m, &devs, &cfg, &ds).unwrap();
        ds[1].participating = false;
        let part = goal(&m, &devs, &cfg, &ds).unwrap();
        assert!(part.energy < full.energy);
        assert!(part.contribution < full.contribution);
        assert_eq!(part.costs[1], CostBreakdown::default());
    }

    #[test]
    fn noise_conversion() {
        assert!((dbm_to_watts(-114.0) - 3.981_071_705_534_969_5e-15).abs() < 1e-27);
    }
}
