//! Round-based simulation.
//!
//! [`run_modeled`] evaluates strategies analytically: each round picks a
//! ratio and frequency per device and books the modeled energy, latency,
//! contribution and goal. [`toy`] runs real gradient descent on a small
//! network with every upload passing through the codec and the aggregator.

mod scenario;
pub mod toy;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use scenario::{
    gain_for_snr, sample_population, sample_scenario, split_data, ChannelMode, DataSplit, PopulationSpec, Scenario,
};
pub use toy::{run_toy_training, ToyRun, ToyTrainSpec};

use crate::error::{Error, Result};
use crate::optimizer::{
    plan_for_alpha, solve_all, strategy_random, strategy_selection, strategy_uniform, Boundary, CompressionPlan,
    SolverSettings,
};
use crate::perf::{goal, round_cost, Decision, DeviceProfile};
use crate::rng;

const TAG_RANDOM: u64 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    FedGreen,
    Random,
    Uniform,
    Selection,
    /// Ratio 1 with the deadline-minimal frequency; the toy trainer skips
    /// the codec entirely.
    Uncompressed,
    /// The same ratio on every device.
    Fixed(f64),
}

impl Strategy {
    /// FedGreen and the three comparison baselines.
    pub const COMPARISON: [Strategy; 4] = [
        Strategy::FedGreen,
        Strategy::Random,
        Strategy::Uniform,
        Strategy::Selection,
    ];
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::FedGreen => f.write_str("fedgreen"),
            Strategy::Random => f.write_str("random"),
            Strategy::Uniform => f.write_str("uniform"),
            Strategy::Selection => f.write_str("selection"),
            Strategy::Uncompressed => f.write_str("uncompressed"),
            Strategy::Fixed(a) => write!(f, "fixed:{a}"),
        }
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::config("strategy", format!("unknown strategy `{s}`"));
        Ok(match s {
            "fedgreen" => Strategy::FedGreen,
            "random" => Strategy::Random,
            "uniform" => Strategy::Uniform,
            "selection" => Strategy::Selection,
            "uncompressed" => Strategy::Uncompressed,
            _ => {
                let a: f64 = s.strip_prefix("fixed:").ok_or_else(bad)?.parse().map_err(|_| bad())?;
                if !(a >= 1.0 && a.is_finite()) {
                    return Err(Error::config("strategy", format!("fixed ratio must be >= 1, got {a}")));
                }
                Strategy::Fixed(a)
            }
        })
    }
}

/// Plans for one round. `round` is 1-based and only matters for redrawn
/// random ratios.
pub fn plans_for_round(
    scenario: &Scenario,
    devices: &[DeviceProfile],
    strategy: Strategy,
    round: u32,
    settings: &SolverSettings,
) -> Result<Vec<CompressionPlan>> {
    let (config, model) = (&scenario.config, &scenario.accuracy_model);
    let fixed = |alpha: f64| -> Result<Vec<CompressionPlan>> {
        devices
            .iter()
            .map(|d| plan_for_alpha(d, config, model, alpha, Boundary::Fixed))
            .collect()
    };
    match strategy {
        Strategy::FedGreen => solve_all(devices, config, model, settings),
        Strategy::Random => {
            let draw = match scenario.channel_mode {
                ChannelMode::Static => 0,
                ChannelMode::PerRoundRedraw => round,
            };
            strategy_random(
                devices,
                config,
                model,
                rng::derive_seed(scenario.seed, &[TAG_RANDOM, u64::from(draw)]),
            )
        }
        Strategy::Uniform => {
            let fg = solve_all(devices, config, model, settings)?;
            strategy_uniform(devices, config, model, &fg)
        }
        Strategy::Selection => {
            let fg = solve_all(devices, config, model, settings)?;
            let u = strategy_uniform(devices, config, model, &fg)?;
            strategy_selection(devices, config, model, &u)
        }
        Strategy::Uncompressed => fixed(1.0),
        Strategy::Fixed(a) => fixed(a),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceRound {
    pub device_id: u32,
    pub alpha: f64,
    pub f: f64,
    /// Energies are 0 for devices that sat the round out.
    pub comm_energy: f64,
    pub comp_energy: f64,
    /// Latency of the plan, whether or not the device took part.
    pub latency: f64,
    pub feasible: bool,
    pub participating: bool,
}

impl DeviceRound {
    pub fn energy(&self) -> f64 {
        self.comm_energy + self.comp_energy
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundLedger {
    /// 1-based.
    pub round_index: u32,
    pub devices: Vec<DeviceRound>,
    pub total_energy: f64,
    pub contribution: f64,
    pub goal: f64,
    pub cumulative_energy: f64,
    /// Some participating device sat in the clamped region of the
    /// accuracy model.
    pub accuracy_clamped: bool,
}

/// Books one round of `plans`.
pub fn ledger_for_round(
    scenario: &Scenario,
    devices: &[DeviceProfile],
    plans: &[CompressionPlan],
    round_index: u32,
    previous_cumulative: f64,
) -> Result<RoundLedger> {
    if !plans.iter().any(|p| p.participating) {
        return Err(Error::Infeasible(format!(
            "round {round_index}: no device can take part"
        )));
    }
    let decisions: Vec<Decision> = plans
        .iter()
        .map(|p| Decision {
            alpha: p.alpha,
            f: p.f,
            participating: p.participating,
        })
        .collect();
    let eval = goal(&scenario.accuracy_model, devices, &scenario.config, &decisions)?;
    let mut rows = Vec::with_capacity(plans.len());
    for ((d, p), booked) in devices.iter().zip(plans).zip(&eval.costs) {
        let cost = round_cost(d, &scenario.config, p.alpha, p.f)?;
        rows.push(DeviceRound {
            device_id: d.device_id,
            alpha: p.alpha,
            f: p.f,
            comm_energy: booked.comm_energy,
            comp_energy: booked.comp_energy,
            latency: cost.latency(),
            feasible: p.feasible,
            participating: p.participating,
        });
    }
    let total_energy: f64 = rows.iter().map(DeviceRound::energy).sum();
    Ok(RoundLedger {
        round_index,
        devices: rows,
        total_energy,
        contribution: eval.contribution,
        goal: eval.contribution - scenario.config.energy_weight() * total_energy,
        cumulative_energy: previous_cumulative + total_energy,
        accuracy_clamped: eval.accuracy_clamped,
    })
}

/// Runs `rounds` modeled rounds of `strategy`.
pub fn run_modeled(scenario: &Scenario, strategy: Strategy, rounds: u32) -> Result<Vec<RoundLedger>> {
    run_modeled_with(scenario, strategy, rounds, &SolverSettings::default())
}

pub fn run_modeled_with(
    scenario: &Scenario,
    strategy: Strategy,
    rounds: u32,
    settings: &SolverSettings,
) -> Result<Vec<RoundLedger>> {
    scenario.validate()?;
    if rounds == 0 {
        return Err(Error::domain("rounds must be at least 1"));
    }
    let mut out = Vec::with_capacity(rounds as usize);
    let mut cumulative = 0.0;
    for round in 1..=rounds {
        let devices = scenario.devices_for_round(round);
        let plans = plans_for_round(scenario, &devices, strategy, round, settings)?;
        let ledger = ledger_for_round(scenario, &devices, &plans, round, cumulative)?;
        cumulative = ledger.cumulative_energy;
        out.push(ledger);
    }
    Ok(out)
}

/// Cumulative energy at the first round whose contribution reaches `target`.
pub fn energy_to_target(ledgers: &[RoundLedger], target: f64) -> Option<f64> {
    ledgers
        .iter()
        .find(|l| l.contribution >= target)
        .map(|l| l.cumulative_energy)
}

/// Parameter varied by [`sweep`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    /// Energy weight of the goal.
    Varpi,
    /// Local epochs per round.
    LocalEpochs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    pub strategy: Strategy,
    /// Mean over rounds.
    pub goal: f64,
    pub contribution: f64,
    pub energy_per_round: f64,
    pub mean_alpha: f64,
}

/// Re-runs each strategy with `param` set to each of `values`.
pub fn sweep(
    scenario: &Scenario,
    strategies: &[Strategy],
    param: SweepParam,
    values: &[f64],
    rounds: u32,
) -> Result<Vec<SweepPoint>> {
    let mut out = Vec::new();
    for &v in values {
        let mut s = scenario.clone();
        match param {
            SweepParam::Varpi => s.config.varpi = v,
            SweepParam::LocalEpochs => {
                if !(v >= 1.0 && v.fract() == 0.0 && v <= f64::from(u32::MAX)) {
                    return Err(Error::domain(format!(
                        "local epochs must be a positive integer, got {v}"
                    )));
                }
                s.config.local_epochs = v as u32;
            }
        }
        for &strategy in strategies {
            let ledgers = run_modeled(&s, strategy, rounds)?;
            let n = ledgers.len() as f64;
            let participants: Vec<&DeviceRound> = ledgers
                .iter()
                .flat_map(|l| &l.devices)
                .filter(|d| d.participating)
                .collect();
            out.push(SweepPoint {
                value: v,
                strategy,
                goal: ledgers.iter().map(|l| l.goal).sum::<f64>() / n,
                contribution: ledgers.iter().map(|l| l.contribution).sum::<f64>() / n,
                energy_per_round: ledgers.iter().map(|l| l.total_energy).sum::<f64>() / n,
                mean_alpha: participants.iter().map(|d| d.alpha).sum::<f64>() / participants.len().max(1) as f64,
            });
        }
    }
    Ok(out)
}
