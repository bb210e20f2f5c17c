//! Per-device choice of compression ratio and CPU frequency.
//!
//! With the deadline binding, a device's decision reduces to one number
//! `beta`, the fraction of the round spent uploading:
//! `alpha = S / (beta r T)` and `f = n D W / ((1 - beta) T)`. The device's
//! share of the goal is concave in `beta` wherever the accuracy model is
//! unclamped and decreasing elsewhere, so the optimum is found by bisecting
//! the derivative's sign change and comparing against the lower edge.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::perf::{meets_deadline, round_cost, uplink_rate, AccuracyModel, DeviceProfile, SystemConfig};
use crate::rng;

/// Keeps `beta` strictly below 1.
pub const BETA_EPSILON: f64 = 1e-9;

/// Ratio range of the random baseline.
pub const RANDOM_ALPHA_RANGE: (f64, f64) = (50.0, 300.0);

/// Fraction of devices the selection baseline drops.
pub const SELECTION_EXCLUDED_FRACTION: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    Interior,
    /// Lower edge of the `beta` range: the largest allowed ratio.
    BetaMin,
    /// Upper edge set by `alpha >= 1`.
    AlphaFloor,
    /// Upper edge set by `f <= f_max`.
    FrequencyCap,
    /// Ratio imposed by a baseline strategy.
    Fixed,
    Infeasible,
}

impl Boundary {
    pub fn as_str(&self) -> &'static str {
        match self {
            Boundary::Interior => "interior",
            Boundary::BetaMin => "beta_min",
            Boundary::AlphaFloor => "alpha_floor",
            Boundary::FrequencyCap => "frequency_cap",
            Boundary::Fixed => "fixed",
            Boundary::Infeasible => "infeasible",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompressionPlan {
    pub device_id: u32,
    pub alpha: f64,
    pub f: f64,
    pub beta: f64,
    /// This device's additive term of the goal; 0 when not participating.
    pub objective_share: f64,
    pub feasible: bool,
    pub boundary: Boundary,
    pub participating: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSettings {
    /// Bracket width at which bisection on `beta` stops.
    pub tolerance: f64,
    pub max_iterations: u32,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            max_iterations: 200,
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) || self.max_iterations == 0 {
            return Err(Error::domain("solver tolerance and iteration limit must be positive"));
        }
        Ok(())
    }
}

/// `f* = min(n D W / (T - S/(alpha r)), f_max)`.
pub fn optimal_frequency(profile: &DeviceProfile, config: &SystemConfig, alpha: f64) -> Result<f64> {
    if !(alpha >= 1.0) {
        return Err(Error::domain(format!("compression ratio must be >= 1, got {alpha}")));
    }
    let comm = config.gradient_bits / (alpha * uplink_rate(profile, config.noise_psd));
    let left = config.deadline - comm;
    if !(left > 0.0) {
        return Err(Error::Infeasible(format!(
            "device {}: upload alone takes {comm} s of a {} s deadline",
            profile.device_id, config.deadline
        )));
    }
    Ok((profile.workload(config) / left).min(profile.f_max))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaBounds {
    /// `S / (alpha_max r T)`.
    pub lower: f64,
    /// `min(1 - eps, S/(r T), 1 - n D W/(f_max T))`.
    pub upper: f64,
    /// Which constraint sets `upper`.
    pub upper_boundary: Boundary,
}

pub fn beta_bounds(profile: &DeviceProfile, config: &SystemConfig) -> Result<BetaBounds> {
    let rt = uplink_rate(profile, config.noise_psd) * config.deadline;
    let lower = config.gradient_bits / (config.alpha_max * rt);
    let alpha_cap = (config.gradient_bits / rt).min(1.0 - BETA_EPSILON);
    let freq_cap = 1.0 - profile.workload(config) / (profile.f_max * config.deadline);
    let (upper, upper_boundary) = if freq_cap < alpha_cap {
        (freq_cap, Boundary::FrequencyCap)
    } else {
        (alpha_cap, Boundary::AlphaFloor)
    };
    if !(lower < upper) {
        return Err(Error::Infeasible(format!(
            "device {}: no ratio in [1, {}] meets the deadline",
            profile.device_id, config.alpha_max
        )));
    }
    Ok(BetaBounds {
        lower,
        upper,
        upper_boundary,
    })
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::domain(format!("beta must lie in (0, 1), got {beta}")));
    }
    Ok(())
}

/// The device's share of the goal as a function of `beta`.
pub fn share_at_beta(profile: &DeviceProfile, config: &SystemConfig, model: &AccuracyModel, beta: f64) -> Result<f64> {
    check_beta(beta)?;
    let rt = uplink_rate(profile, config.noise_psd) * config.deadline;
    let lambda = beta * rt / config.gradient_bits;
    let acc = model.evaluate_lambda(lambda).value * profile.data as f64 / config.total_data as f64;
    let cycles = profile.workload(config);
    let t = config.deadline;
    let energy = profile.power * beta * t + profile.epsilon * cycles.powi(3) / (t * t * (1.0 - beta).powi(2));
    Ok(acc - config.energy_weight() * energy)
}

/// Accuracy and energy parts of the derivative of [`share_at_beta`]; the
/// derivative is their difference.
pub fn goal_derivative_parts(
    profile: &DeviceProfile,
    config: &SystemConfig,
    model: &AccuracyModel,
    beta: f64,
) -> Result<(f64, f64)> {
    check_beta(beta)?;
    let scale = uplink_rate(profile, config.noise_psd) * config.deadline / config.gradient_bits;
    let clamped = model.evaluate_lambda(beta * scale).clamped;
    Ok(derivative_parts(profile, config, model, beta, clamped))
}

/// Derivative parts on one branch of the accuracy model: `clamped = false`
/// differentiates the logarithm even where the clamp is active, which the
/// solver needs at the edges of the unclamped range.
fn derivative_parts(
    profile: &DeviceProfile,
    config: &SystemConfig,
    model: &AccuracyModel,
    beta: f64,
    clamped: bool,
) -> (f64, f64) {
    let scale = uplink_rate(profile, config.noise_psd) * config.deadline / config.gradient_bits;
    let lambda = beta * scale;
    let acc = if clamped {
        0.0
    } else {
        scale * profile.data as f64 * model.kappa1 * model.kappa2
            / (config.total_data as f64 * model.log_argument(lambda) * std::f64::consts::LN_2)
    };
    let cycles = profile.workload(config);
    let t = config.deadline;
    let energy = config.energy_weight()
        * (profile.power * t + 2.0 * profile.epsilon * cycles.powi(3) / (t * t * (1.0 - beta).powi(3)));
    (acc, energy)
}

pub fn goal_derivative_beta(
    profile: &DeviceProfile,
    config: &SystemConfig,
    model: &AccuracyModel,
    beta: f64,
) -> Result<f64> {
    goal_derivative_parts(profile, config, model, beta).map(|(a, e)| a - e)
}

/// Evaluates a device running at ratio `alpha` with the deadline-minimal frequency.
pub fn plan_for_alpha(
    profile: &DeviceProfile,
    config: &SystemConfig,
    model: &AccuracyModel,
    alpha: f64,
    boundary: Boundary,
) -> Result<CompressionPlan> {
    let rt = uplink_rate(profile, config.noise_psd) * config.deadline;
    let beta = config.gradient_bits / (alpha * rt);
    let (f, feasible) = match optimal_frequency(profile, config, alpha) {
        Ok(f) => {
            let cost = round_cost(profile, config, alpha, f)?;
            (f, meets_deadline(cost.latency(), config))
        }
        Err(Error::Infeasible(_)) => (profile.f_max, false),
        Err(e) => return Err(e),
    };
    let mut plan = CompressionPlan {
        device_id: profile.device_id,
        alpha,
        f,
        beta,
        objective_share: 0.0,
        feasible,
        boundary: if feasible { boundary } else { Boundary::Infeasible },
        participating: feasible,
    };
    plan.objective_share = objective_share(profile, config, model, &plan)?;
    Ok(plan)
}

/// Share of the goal for a plan; 0 for devices that sit the round out.
pub fn objective_share(
    profile: &DeviceProfile,
    config: &SystemConfig,
    model: &AccuracyModel,
    plan: &CompressionPlan,
) -> Result<f64> {
    if !plan.participating {
        return Ok(0.0);
    }
    let cost = round_cost(profile, config, plan.alpha, plan.f)?;
    let acc = model.accuracy(plan.alpha)? * profile.data as f64 / config.total_data as f64;
    Ok(acc - config.energy_weight() * cost.energy())
}

/// Bisects the sign change of the derivative on `[a, b]`, assuming it is
/// positive at `a` and negative at `b`.
fn bisect(mut a: f64, mut b: f64, settings: &SolverSettings, deriv: impl Fn(f64) -> f64) -> f64 {
    for _ in 0..settings.max_iterations {
        if b - a <= settings.tolerance {
            break;
        }
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        if deriv(m) > 0.0 {
            a = m;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

/// Solves one device's problem. Infeasible devices come back with
/// `feasible = false` and `participating = false`.
pub fn solve_device(
    profile: &DeviceProfile,
    config: &SystemConfig,
    model: &AccuracyModel,
    settings: &SolverSettings,
) -> Result<CompressionPlan> {
    settings.validate()?;
    profile.validate()?;
    let bounds = match beta_bounds(profile, config) {
        Ok(b) => b,
        Err(Error::Infeasible(_)) => {
            return plan_for_alpha(profile, config, model, config.alpha_max, Boundary::Infeasible);
        }
        Err(e) => return Err(e),
    };
    let rt = uplink_rate(profile, config.noise_psd) * config.deadline;
    let to_beta = |lambda: f64| lambda * config.gradient_bits / rt;
    let deriv = |b: f64| {
        let (acc, energy) = derivative_parts(profile, config, model, b, false);
        acc - energy
    };
    let share = |b: f64| share_at_beta(profile, config, model, b).unwrap_or(f64::NEG_INFINITY);

    // Candidate from the concave part, if it meets the feasible range.
    let mut best = (bounds.lower, Boundary::BetaMin);
    if let Some((l0, l1)) = model.unclamped_lambda_range() {
        let (a, b) = (to_beta(l0).max(bounds.lower), to_beta(l1).min(bounds.upper));
        if a < b {
            let (beta, boundary) = if deriv(b) >= 0.0 {
                let edge = if b == bounds.upper {
                    bounds.upper_boundary
                } else {
                    Boundary::Interior
                };
                (b, edge)
            } else if deriv(a) <= 0.0 {
                let edge = if a == bounds.lower {
                    Boundary::BetaMin
                } else {
                    Boundary::Interior
                };
                (a, edge)
            } else {
                (bisect(a, b, settings, deriv), Boundary::Interior)
            };
            if share(beta) > share(best.0) {
                best = (beta, boundary);
            }
        }
    }
    let (beta, boundary) = best;
    let alpha = match boundary {
        Boundary::BetaMin => config.alpha_max,
        Boundary::AlphaFloor => 1.0,
        _ => (config.gradient_bits / (beta * rt)).clamp(1.0, config.alpha_max),
    };
    let mut plan = plan_for_alpha(profile, config, model, alpha, boundary)?;
    if boundary == Boundary::FrequencyCap {
        plan.f = profile.f_max;
        plan.objective_share = objective_share(profile, config, model, &plan)?;
    }
    Ok(plan)
}

/// Solves every device independently.
pub fn solve_all(
    profiles: &[DeviceProfile],
    config: &SystemConfig,
    model: &AccuracyModel,
    settings: &SolverSettings,
) -> Result<Vec<CompressionPlan>> {
    profiles
        .iter()
        .map(|p| solve_device(p, config, model, settings))
        .collect()
}

/// Ratios drawn uniformly from [`RANDOM_ALPHA_RANGE`], one stream per device.
pub fn strategy_random(
    profiles: &[DeviceProfile],
    config: &SystemConfig,
    model: &AccuracyModel,
    seed: u64,
) -> Result<Vec<CompressionPlan>> {
    profiles
        .iter()
        .map(|p| {
            let mut r = rng::substream(seed, &[u64::from(p.device_id)]);
            let alpha = r.random_range(RANDOM_ALPHA_RANGE.0..=RANDOM_ALPHA_RANGE.1);
            plan_for_alpha(p, config, model, alpha, Boundary::Fixed)
        })
        .collect()
}

/// Every device uses the mean ratio of `fedgreen`.
pub fn strategy_uniform(
    profiles: &[DeviceProfile],
    config: &SystemConfig,
    model: &AccuracyModel,
    fedgreen: &[CompressionPlan],
) -> Result<Vec<CompressionPlan>> {
    if fedgreen.is_empty() {
        return Err(Error::domain("uniform strategy needs at least one plan"));
    }
    let mean = fedgreen.iter().map(|p| p.alpha).sum::<f64>() / fedgreen.len() as f64;
    profiles
        .iter()
        .map(|p| plan_for_alpha(p, config, model, mean, Boundary::Fixed))
        .collect()
}

/// Indices of the `ceil(0.25 * I)` devices with the largest round energy;
/// ties go to the lower device id.
pub fn selection_excluded(
    profiles: &[DeviceProfile],
    config: &SystemConfig,
    plans: &[CompressionPlan],
) -> Result<Vec<usize>> {
    let mut energy = Vec::with_capacity(plans.len());
    for (p, plan) in profiles.iter().zip(plans) {
        let e = round_cost(p, config, plan.alpha, plan.f)?.energy();
        energy.push(e);
    }
    let mut order: Vec<usize> = (0..plans.len()).collect();
    order.sort_by(|&a, &b| {
        energy[b]
            .total_cmp(&energy[a])
            .then(profiles[a].device_id.cmp(&profiles[b].device_id))
    });
    let drop = (SELECTION_EXCLUDED_FRACTION * plans.len() as f64).ceil() as usize;
    let mut out = order[..drop].to_vec();
    out.sort_unstable();
    Ok(out)
}

/// The uniform plans with the most energy-hungry quarter of devices left out.
pub fn strategy_selection(
    profiles: &[DeviceProfile],
    config: &SystemConfig,
    model: &AccuracyModel,
    uniform: &[CompressionPlan],
) -> Result<Vec<CompressionPlan>> {
    if profiles.len() != uniform.len() {
        return Err(Error::domain("one uniform plan per device required"));
    }
    let excluded = selection_excluded(profiles, config, uniform)?;
    let mut plans = uniform.to_vec();
    for i in excluded {
        plans[i].participating = false;
        plans[i].objective_share = objective_share(&profiles[i], config, model, &plans[i])?;
    }
    Ok(plans)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn device() -> DeviceProfile {
        DeviceProfile {
            device_id: 3,
            f_max: 2.5e9,
            power: 0.5,
            bandwidth: 2e6,
            // SNR of 100 at the default noise density.
            gain: (100.0 * SystemConfig::default().noise_psd * 2e6 / 0.5f64).sqrt(),
            epsilon: 8e-27,
            data: 3000,
        }
    }

    fn config() -> SystemConfig {
        SystemConfig {
            total_data: 48_000,
            ..SystemConfig::default()
        }
    }

    #[test]
    fn interior_optimum_beats_the_clamp_edge() {
        // A light energy weight puts the optimum inside the unclamped range;
        // the derivative at the range's left edge must not read as clamped.
        let mut c = config();
        c.varpi = 1e-6;
        let mut d = device();
        d.gain = (5.0 * c.noise_psd * d.bandwidth / d.power).sqrt();
        let m = AccuracyModel::default();
        let plan = solve_device(&d, &c, &m, &SolverSettings::default()).unwrap();
        let b = beta_bounds(&d, &c).unwrap();
        let mut best = f64::NEG_INFINITY;
        for i in 0..=20_000 {
            let beta = b.lower + (b.upper - b.lower) * f64::from(i) / 20_000.0;
            best = best.max(share_at_beta(&d, &c, &m, beta).unwrap());
        }
        assert_eq!(plan.boundary, Boundary::Interior);
        assert!(plan.objective_share >= best - 1e-9, "{} < {best}", plan.objective_share);
    }

    #[test]
    fn frequency_examples() {
        let mut d = device();
        let mut c = config();
        c.cycles_per_sample = 1e9 / d.data as f64;
        // Upload takes 50 s at alpha = 2.
        c.gradient_bits = 100.0 * uplink_rate(&d, c.noise_psd);
        let alpha = 2.0;
        let f = optimal_frequency(&d, &c, alpha).unwrap();
        assert!((f - 2e7).abs() < 1e-6);
        d.f_max = 1e7;
        assert_eq!(optimal_frequency(&d, &c, alpha).unwrap(), 1e7);
        assert!(matches!(optimal_frequency(&d, &c, 1.0), Err(Error::Infeasible(_))));
    }

    #[test]
    fn bounds_examples() {
        let mut d = device();
        let mut c = config();
        c.cycles_per_sample = 1e9 / d.data as f64;
        d.f_max = 1e8;
        c.gradient_bits = 0.95 * uplink_rate(&d, c.noise_psd) * c.deadline;
        let b = beta_bounds(&d, &c).unwrap();
        assert!((b.upper - 0.9).abs() < 1e-12);
        assert_eq!(b.upper_boundary, Boundary::FrequencyCap);
        d.f_max = 1e15;
        let r = uplink_rate(&d, c.noise_psd);
        c.gradient_bits = 0.5 * r * c.deadline;
        let b = beta_bounds(&d, &c).unwrap();
        assert!((b.upper - 0.5).abs() < 1e-12);
        assert_eq!(b.upper_boundary, Boundary::AlphaFloor);
        assert!((b.lower - 0.5 / c.alpha_max).abs() < 1e-15);
        d.f_max = 1e6;
        assert!(matches!(beta_bounds(&d, &c), Err(Error::Infeasible(_))));
    }

    #[test]
    fn derivative_matches_finite_differences() {
        let (d, c, m) = (device(), config(), AccuracyModel::default());
        let b = beta_bounds(&d, &c).unwrap();
        for i in 1..50 {
            let beta = b.lower + (b.upper - b.lower) * f64::from(i) / 50.0;
            let h = 1e-6 * beta;
            let (lo, hi) = (beta - h, beta + h);
            if m.evaluate_lambda(lo * 1.0).clamped != m.evaluate_lambda(hi).clamped {
                continue;
            }
            let fd = (share_at_beta(&d, &c, &m, hi).unwrap() - share_at_beta(&d, &c, &m, lo).unwrap()) / (2.0 * h);
            let an = goal_derivative_beta(&d, &c, &m, beta).unwrap();
            let (pa, pe) = goal_derivative_parts(&d, &c, &m, beta).unwrap();
            assert!(
                (fd - an).abs() <= 1e-4 * (pa + pe),
                "beta {beta}: fd {fd} analytic {an}"
            );
        }
        assert!(goal_derivative_beta(&d, &c, &m, 1.0).is_err());
    }

    #[test]
    fn derivative_diverges_near_one() {
        let (d, c, m) = (device(), config(), AccuracyModel::default());
        assert!(goal_derivative_beta(&d, &c, &m, 1.0 - 1e-6).unwrap() < -1e6);
    }

    #[test]
    fn no_energy_weight_means_least_compression() {
        let d = device();
        let c = SystemConfig { varpi: 0.0, ..config() };
        let m = AccuracyModel::default();
        let plan = solve_device(&d, &c, &m, &SolverSettings::default()).unwrap();
        let b = beta_bounds(&d, &c).unwrap();
        assert_eq!(plan.boundary, b.upper_boundary);
        assert!((plan.beta - b.upper).abs() <= 1e-12);
        let (pa, _) = goal_derivative_parts(&d, &c, &m, 0.5 * (b.lower + b.upper)).unwrap();
        assert!(pa >= 0.0);
    }

    #[test]
    fn heavy_energy_weight_means_most_compression() {
        let d = device();
        let c = SystemConfig { varpi: 1e3, ..config() };
        let plan = solve_device(&d, &c, &AccuracyModel::default(), &SolverSettings::default()).unwrap();
        assert_eq!(plan.boundary, Boundary::BetaMin);
        assert_eq!(plan.alpha, c.alpha_max);
        assert!(plan.feasible);
    }

    #[test]
    fn solution_beats_a_fine_grid() {
        let (d, c, m) = (device(), config(), AccuracyModel::default());
        let plan = solve_device(&d, &c, &m, &SolverSettings::default()).unwrap();
        let b = beta_bounds(&d, &c).unwrap();
        let n = 100_000;
        let best = (0..=n)
            .map(|i| b.lower + (b.upper - b.lower) * f64::from(i) / f64::from(n))
            .map(|beta| share_at_beta(&d, &c, &m, beta.min(b.upper)).unwrap())
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(plan.objective_share >= best - 1e-6 * (1.0 + best.abs()));
        assert!(plan.feasible && plan.participating);
        let r = uplink_rate(&d, c.noise_psd);
        assert!((plan.beta - c.gradient_bits / (plan.alpha * r * c.deadline)).abs() <= 1e-9 * plan.beta);
        let comp = d.workload(&c) / (plan.f * c.deadline);
        assert!(((1.0 - plan.beta) - comp).abs() <= 1e-9 * comp);
    }

    #[test]
    fn infeasible_device_is_flagged() {
        let mut d = device();
        d.f_max = 1e6;
        let plan = solve_device(&d, &config(), &AccuracyModel::default(), &SolverSettings::default()).unwrap();
        assert!(!plan.feasible && !plan.participating);
        assert_eq!(plan.boundary, Boundary::Infeasible);
        assert_eq!(plan.objective_share, 0.0);
    }

    fn fleet() -> Vec<DeviceProfile> {
        (0..16)
            .map(|i| DeviceProfile {
                device_id: i,
                f_max: 1.5e9 + 1.5e8 * f64::from(i),
                power: 0.1 + 0.05 * f64::from(i),
                data: 3000,
                ..device()
            })
            .collect()
    }

    #[test]
    fn random_strategy_draws_in_range() {
        let (devs, c, m) = (fleet(), config(), AccuracyModel::default());
        let a = strategy_random(&devs, &c, &m, 5).unwrap();
        assert_eq!(a, strategy_random(&devs, &c, &m, 5).unwrap());
        for (p, d) in a.iter().zip(&devs) {
            assert!((50.0..=300.0).contains(&p.alpha));
            assert_eq!(p.f, optimal_frequency(d, &c, p.alpha).unwrap());
        }
    }

    #[test]
    fn uniform_uses_the_mean_ratio() {
        let (devs, c, m) = (fleet(), config(), AccuracyModel::default());
        let fg = solve_all(&devs, &c, &m, &SolverSettings::default()).unwrap();
        let mean = fg.iter().map(|p| p.alpha).sum::<f64>() / 16.0;
        let u = strategy_uniform(&devs, &c, &m, &fg).unwrap();
        assert!(u.iter().all(|p| p.alpha == mean));
        let e0 = round_cost(&devs[0], &c, u[0].alpha, u[0].f).unwrap().energy();
        let e9 = round_cost(&devs[9], &c, u[9].alpha, u[9].f).unwrap().energy();
        assert_ne!(e0, e9);

        let same: Vec<DeviceProfile> = (0..4)
            .map(|i| DeviceProfile {
                device_id: i,
                ..device()
            })
            .collect();
        let fg = solve_all(&same, &c, &m, &SolverSettings::default()).unwrap();
        let u = strategy_uniform(&same, &c, &m, &fg).unwrap();
        for (a, b) in fg.iter().zip(&u) {
            assert_eq!(a.alpha, b.alpha);
            assert_eq!(a.f, b.f);
        }
    }

    #[test]
    fn selection_drops_the_top_quarter() {
        let (devs, c, m) = (fleet(), config(), AccuracyModel::default());
        let fg = solve_all(&devs, &c, &m, &SolverSettings::default()).unwrap();
        let u = strategy_uniform(&devs, &c, &m, &fg).unwrap();
        let s = strategy_selection(&devs, &c, &m, &u).unwrap();
        assert_eq!(s.iter().filter(|p| !p.participating).count(), 4);

        let mut energies: Vec<(f64, usize)> = u
            .iter()
            .zip(&devs)
            .enumerate()
            .map(|(i, (p, d))| (round_cost(d, &c, p.alpha, p.f).unwrap().energy(), i))
            .collect();
        energies.sort_by(|a, b| b.0.total_cmp(&a.0));
        let mut top: Vec<usize> = energies[..4].iter().map(|e| e.1).collect();
        top.sort_unstable();
        assert_eq!(selection_excluded(&devs, &c, &u).unwrap(), top);

        let same: Vec<DeviceProfile> = (0..16)
            .map(|i| DeviceProfile {
                device_id: i,
                ..device()
            })
            .collect();
        let fg = solve_all(&same, &c, &m, &SolverSettings::default()).unwrap();
        let u = strategy_uniform(&same, &c, &m, &fg).unwrap();
        assert_eq!(selection_excluded(&same, &c, &u).unwrap(), vec![0, 1, 2, 3]);
    }
}
