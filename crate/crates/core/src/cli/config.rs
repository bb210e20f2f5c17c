//! Scenario files.
//!
//! A scenario is a TOML document (JSON is accepted when the file name ends
//! in `.json`). Every key is optional; absent keys take the defaults below.
//! Unknown keys are rejected.
//!
//! ```toml
//! seed = 7
//! channel_mode = "static"          # or "per_round_redraw"
//!
//! [population]                     # used when no [[devices]] are listed
//! device_count = 16
//! total_data = 50000
//! split = "iid"                    # or "dirichlet"
//! dirichlet_concentration = 0.5
//! epsilon = [5e-27, 1e-26]
//! f_max = [1.5e9, 4e9]             # cycles/s
//! bandwidth = [0.8e6, 5e6]         # Hz
//! power = [0.1, 1.0]               # W
//! snr_db = [3.0, 12.0]
//!
//! [config]
//! S = 111.7e6                      # gradient bits
//! W = 0.98e6                       # cycles per sample
//! n = 1                            # local epochs
//! N0_dbm = -114.0                  # noise density, dBm/Hz
//! T_max = 100.0                    # s
//! J = 300
//! varpi = 1e-4
//! alpha_max = 300.0
//!
//! [accuracy]
//! kappa1 = 0.024
//! kappa2 = 19.221
//! kappa3 = 2.561
//! kappa4 = 0.609
//! clamp_epsilon = 1e-3
//!
//! [codec]
//! levels_conv = 8
//! levels_fc = 4
//!
//! [solver]
//! tolerance = 1e-8
//! max_iterations = 200
//!
//! [toy]
//! rounds = 30
//! samples_per_device = 32
//! learning_rate = 0.3
//! test_samples = 512
//!
//! [[devices]]                      # optional explicit population
//! f_max = 2e9
//! power = 0.5
//! bandwidth = 1e6
//! snr_db = 10.0                    # or gain = ...
//! epsilon = 8e-27
//! data = 3000
//! ```
//!
//! Overrides use dotted keys (`config.T_max=50`, `population.split=dirichlet`)
//! and are applied to the document before validation.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codec::CompressionConfig;
use crate::error::{Error, Result};
use crate::fedsim::{gain_for_snr, sample_population, ChannelMode, DataSplit, PopulationSpec, Scenario};
use crate::optimizer::SolverSettings;
use crate::perf::{dbm_to_watts, AccuracyModel, DeviceProfile, SystemConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioFile {
    pub seed: u64,
    pub channel_mode: ChannelMode,
    pub population: PopulationSection,
    pub config: ConfigSection,
    pub accuracy: AccuracyModel,
    pub codec: CodecSection,
    pub solver: SolverSettings,
    pub toy: ToySection,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub devices: Vec<DeviceSection>,
}

impl Default for ScenarioFile {
    fn default() -> Self {
        Self {
            seed: 0,
            channel_mode: ChannelMode::Static,
            population: PopulationSection::default(),
            config: ConfigSection::default(),
            accuracy: AccuracyModel::default(),
            codec: CodecSection::default(),
            solver: SolverSettings::default(),
            toy: ToySection::default(),
            devices: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitName {
    Iid,
    Dirichlet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PopulationSection {
    pub device_count: usize,
    pub total_data: u64,
    pub split: SplitName,
    pub dirichlet_concentration: f64,
    pub epsilon: [f64; 2],
    pub f_max: [f64; 2],
    pub bandwidth: [f64; 2],
    pub power: [f64; 2],
    pub snr_db: [f64; 2],
}

impl Default for PopulationSection {
    fn default() -> Self {
        let p = PopulationSpec::default();
        Self {
            device_count: p.device_count,
            total_data: p.total_data,
            split: SplitName::Iid,
            dirichlet_concentration: 0.5,
            epsilon: p.epsilon.into(),
            f_max: p.f_max.into(),
            bandwidth: p.bandwidth.into(),
            power: p.power.into(),
            snr_db: p.snr_db.into(),
        }
    }
}

impl PopulationSection {
    fn spec(&self) -> PopulationSpec {
        PopulationSpec {
            device_count: self.device_count,
            total_data: self.total_data,
            split: match self.split {
                SplitName::Iid => DataSplit::Iid,
                SplitName::Dirichlet => DataSplit::Dirichlet {
                    concentration: self.dirichlet_concentration,
                },
            },
            epsilon: self.epsilon.into(),
            f_max: self.f_max.into(),
            bandwidth: self.bandwidth.into(),
            power: self.power.into(),
            snr_db: self.snr_db.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigSection {
    #[serde(rename = "S")]
    pub gradient_bits: f64,
    #[serde(rename = "W")]
    pub cycles_per_sample: f64,
    #[serde(rename = "n")]
    pub local_epochs: u32,
    #[serde(rename = "N0_dbm")]
    pub noise_dbm: f64,
    #[serde(rename = "T_max")]
    pub deadline: f64,
    #[serde(rename = "J")]
    pub global_iterations: u32,
    pub varpi: f64,
    pub alpha_max: f64,
}

impl Default for ConfigSection {
    fn default() -> Self {
        let c = SystemConfig::default();
        Self {
            gradient_bits: c.gradient_bits,
            cycles_per_sample: c.cycles_per_sample,
            local_epochs: c.local_epochs,
            noise_dbm: -114.0,
            deadline: c.deadline,
            global_iterations: c.global_iterations,
            varpi: c.varpi,
            alpha_max: c.alpha_max,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CodecSection {
    pub levels_conv: u32,
    pub levels_fc: u32,
}

impl Default for CodecSection {
    fn default() -> Self {
        let c = CompressionConfig::default();
        Self {
            levels_conv: c.levels_conv,
            levels_fc: c.levels_fc,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToySection {
    pub rounds: u32,
    pub samples_per_device: usize,
    pub learning_rate: f64,
    pub test_samples: usize,
}

impl Default for ToySection {
    fn default() -> Self {
        let t = crate::fedsim::ToyTrainSpec::default();
        Self {
            rounds: t.rounds,
            samples_per_device: t.samples_per_device,
            learning_rate: t.learning_rate,
            test_samples: t.test_samples,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceSection {
    pub f_max: f64,
    pub power: f64,
    pub bandwidth: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gain: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snr_db: Option<f64>,
    pub epsilon: f64,
    pub data: u64,
}

/// A validated scenario plus the settings that travel with it.
#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    pub file: ScenarioFile,
    pub scenario: Scenario,
    pub compression: CompressionConfig,
}

fn positive(key: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(key, format!("must be positive and finite, got {v}")))
    }
}

impl ScenarioFile {
    /// Validates the file and builds the scenario it describes.
    pub fn resolve(&self) -> Result<Resolved> {
        let c = &self.config;
        positive("config.S", c.gradient_bits)?;
        positive("config.W", c.cycles_per_sample)?;
        positive("config.T_max", c.deadline)?;
        if !c.noise_dbm.is_finite() {
            return Err(Error::config("config.N0_dbm", "must be finite"));
        }
        if !(c.varpi >= 0.0 && c.varpi.is_finite()) {
            return Err(Error::config("config.varpi", format!("must be >= 0, got {}", c.varpi)));
        }
        if c.local_epochs == 0 {
            return Err(Error::config("config.n", "must be at least 1"));
        }
        if c.global_iterations == 0 {
            return Err(Error::config("config.J", "must be at least 1"));
        }
        if !(c.alpha_max >= 1.0 && c.alpha_max.is_finite()) {
            return Err(Error::config(
                "config.alpha_max",
                format!("must be >= 1, got {}", c.alpha_max),
            ));
        }
        let a = &self.accuracy;
        for (key, v, ok) in [
            ("accuracy.kappa1", a.kappa1, a.kappa1 >= 0.0),
            ("accuracy.kappa2", a.kappa2, a.kappa2 > 0.0),
            ("accuracy.kappa3", a.kappa3, a.kappa3 >= 0.0),
            ("accuracy.kappa4", a.kappa4, true),
            ("accuracy.clamp_epsilon", a.clamp_epsilon, a.clamp_epsilon > 0.0),
        ] {
            if !(ok && v.is_finite()) {
                return Err(Error::config(key, format!("invalid value {v}")));
            }
        }
        let compression = CompressionConfig::new(self.codec.levels_conv, self.codec.levels_fc)
            .map_err(|e| Error::config("codec", e.to_string()))?;
        if !(self.solver.tolerance > 0.0) {
            return Err(Error::config("solver.tolerance", "must be positive"));
        }
        if self.solver.max_iterations == 0 {
            return Err(Error::config("solver.max_iterations", "must be at least 1"));
        }
        let t = &self.toy;
        if t.rounds == 0 {
            return Err(Error::config("toy.rounds", "must be at least 1"));
        }
        if t.samples_per_device < 8 {
            return Err(Error::config("toy.samples_per_device", "must be at least 8"));
        }
        positive("toy.learning_rate", t.learning_rate)?;
        if t.test_samples == 0 {
            return Err(Error::config("toy.test_samples", "must be at least 1"));
        }

        let system = SystemConfig {
            gradient_bits: c.gradient_bits,
            cycles_per_sample: c.cycles_per_sample,
            local_epochs: c.local_epochs,
            noise_psd: dbm_to_watts(c.noise_dbm),
            deadline: c.deadline,
            global_iterations: c.global_iterations,
            varpi: c.varpi,
            total_data: 1,
            alpha_max: c.alpha_max,
        };
        let scenario = if self.devices.is_empty() {
            let spec = self.population.spec();
            spec.validate()?;
            sample_population(&spec, &system, &self.accuracy, self.channel_mode, self.seed)?
        } else {
            self.explicit_scenario(system)?
        };
        Ok(Resolved {
            file: self.clone(),
            scenario,
            compression,
        })
    }

    fn explicit_scenario(&self, system: SystemConfig) -> Result<Scenario> {
        let mut devices = Vec::with_capacity(self.devices.len());
        for (i, d) in self.devices.iter().enumerate() {
            let key = |f: &str| format!("devices[{i}].{f}");
            positive(&key("f_max"), d.f_max)?;
            positive(&key("power"), d.power)?;
            positive(&key("bandwidth"), d.bandwidth)?;
            positive(&key("epsilon"), d.epsilon)?;
            if d.data == 0 {
                return Err(Error::config(key("data"), "must be at least 1"));
            }
            let mut p = DeviceProfile {
                device_id: i as u32,
                f_max: d.f_max,
                power: d.power,
                bandwidth: d.bandwidth,
                gain: 0.0,
                epsilon: d.epsilon,
                data: d.data,
            };
            p.gain = match (d.gain, d.snr_db) {
                (Some(g), None) => {
                    positive(&key("gain"), g)?;
                    g
                }
                (None, Some(snr)) if snr.is_finite() => gain_for_snr(snr, &p, system.noise_psd),
                (None, Some(_)) => return Err(Error::config(key("snr_db"), "must be finite")),
                _ => return Err(Error::config(key("gain"), "give exactly one of gain or snr_db")),
            };
            devices.push(p);
        }
        let total = devices.iter().map(|d| d.data).sum();
        let scenario = Scenario {
            devices,
            config: SystemConfig {
                total_data: total,
                ..system
            },
            accuracy_model: self.accuracy,
            seed: self.seed,
            channel_mode: self.channel_mode,
            snr_db: self.population.snr_db.into(),
        };
        scenario
            .validate()
            .map_err(|e| Error::config("devices", e.to_string()))?;
        Ok(scenario)
    }
}

/// Reads a scenario document into a generic table.
pub fn read_document(path: &Path) -> Result<toml::Table> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_document(&text, path.extension().is_some_and(|e| e == "json"))
}

pub fn parse_document(text: &str, json: bool) -> Result<toml::Table> {
    if json {
        let v: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::config("<file>", e.to_string()))?;
        if v.is_null() {
            return Ok(toml::Table::new());
        }
        toml::Table::deserialize(v).map_err(|e| Error::config("<file>", e.to_string()))
    } else {
        text.parse::<toml::Table>()
            .map_err(|e| Error::config("<file>", e.message().to_string()))
    }
}

/// Applies one `dotted.key=value` override. Values are read as TOML
/// literals, falling back to a bare string.
pub fn apply_override(doc: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::config(assignment, "override must look like key=value"))?;
    let key = key.trim();
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::config(key, "empty key segment"));
    }
    let mut table = doc;
    for part in &parts[..parts.len() - 1] {
        let entry = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::config(key, format!("`{part}` is not a section")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Deserialises a document, naming the offending key on failure.
pub fn from_document(doc: toml::Table) -> Result<ScenarioFile> {
    ScenarioFile::deserialize(doc).map_err(|e| {
        let msg = e.message().to_string();
        let key = msg
            .split('`')
            .nth(1)
            .filter(|_| msg.starts_with("unknown field"))
            .unwrap_or("<file>")
            .to_string();
        Error::config(key, msg)
    })
}

/// Reads `path` (or defaults when `None`), applies overrides and validates.
pub fn parse_config(path: Option<&Path>, overrides: &[String]) -> Result<Resolved> {
    let mut doc = match path {
        Some(p) => read_document(p)?,
        None => toml::Table::new(),
    };
    for o in overrides {
        apply_override(&mut doc, o)?;
    }
    from_document(doc)?.resolve()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn resolve(text: &str, overrides: &[&str]) -> Result<Resolved> {
        let mut doc = parse_document(text, false)?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        from_document(doc)?.resolve()
    }

    #[test]
    fn empty_file_gives_defaults() {
        let r = resolve("", &[]).unwrap();
        assert_eq!(r.scenario.devices.len(), 16);
        assert_eq!(r.scenario.config.deadline, 100.0);
        assert_eq!(r.scenario.config.varpi, 1e-4);
        assert_eq!(r.scenario.config.total_data, 50_000);
        assert_eq!(r.scenario, crate::fedsim::sample_scenario(16, 0).unwrap());
    }

    #[test]
    fn overrides_apply() {
        let r = resolve("", &["config.T_max=50", "population.split=dirichlet", "seed=4"]).unwrap();
        assert_eq!(r.scenario.config.deadline, 50.0);
        assert_eq!(r.scenario.seed, 4);
        assert_eq!(r.file.population.split, SplitName::Dirichlet);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        match resolve("", &["config.Tmax=50"]) {
            Err(Error::Config { key, .. }) => assert_eq!(key, "Tmax"),
            other => panic!("{other:?}"),
        }
        assert!(resolve("bogus = 1", &[]).is_err());
    }

    #[test]
    fn invalid_values_name_their_key() {
        match resolve("[population]\nbandwidth = [-1.0, 5e6]", &[]) {
            Err(Error::Config { key, .. }) => assert_eq!(key, "population.bandwidth"),
            other => panic!("{other:?}"),
        }
        let text = "[[devices]]\nf_max = 2e9\npower = 0.5\nbandwidth = -1e6\nsnr_db = 10\nepsilon = 1e-26\ndata = 10\n";
        match resolve(text, &[]) {
            Err(Error::Config { key, .. }) => assert_eq!(key, "devices[0].bandwidth"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn explicit_devices() {
        let text = "[[devices]]\nf_max = 2e9\npower = 0.5\nbandwidth = 1e6\nsnr_db = 10\nepsilon = 1e-26\ndata = 10\n\
                    [[devices]]\nf_max = 3e9\npower = 0.2\nbandwidth = 2e6\ngain = 1e-4\nepsilon = 6e-27\ndata = 30\n";
        let r = resolve(text, &[]).unwrap();
        assert_eq!(r.scenario.devices.len(), 2);
        assert_eq!(r.scenario.config.total_data, 40);
        assert_eq!(r.scenario.devices[1].gain, 1e-4);
    }

    #[test]
    fn json_is_accepted() {
        let doc = parse_document(r#"{"config": {"T_max": 60.0}, "seed": 2}"#, true).unwrap();
        let r = from_document(doc).unwrap().resolve().unwrap();
        assert_eq!(r.scenario.config.deadline, 60.0);
    }

    #[test]
    fn resolved_file_round_trips() {
        let r = resolve("", &["config.varpi=2e-4"]).unwrap();
        let text = toml::to_string(&r.file).unwrap();
        let again = resolve(&text, &[]).unwrap();
        assert_eq!(again.scenario, r.scenario);
    }
}
