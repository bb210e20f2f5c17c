//! CSV and manifest writers. Reals are printed with 9 significant digits.

use std::path::Path;

use crate::error::{Error, Result};
use crate::fedsim::RoundLedger;

pub fn num(v: f64) -> String {
    format!("{v:.8e}")
}

pub fn opt_num(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn io(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Io(format!("{}: {e}", path.display()))
}

/// Writes a header and rows of pre-formatted fields.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io(path, e))?;
    w.write_record(header).map_err(|e| io(path, e))?;
    for r in rows {
        w.write_record(r).map_err(|e| io(path, e))?;
    }
    w.flush().map_err(|e| io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| io(path, e))
}

pub const ROUND_HEADER: [&str; 12] = [
    "round",
    "device_id",
    "alpha",
    "f_hz",
    "comm_energy_j",
    "comp_energy_j",
    "latency_s",
    "feasible",
    "total_energy_j",
    "cumulative_energy_j",
    "contribution",
    "goal",
];

/// One row per device and round, then a `device_id = -1` row carrying the
/// round totals. Device rows leave the round-level columns empty.
pub fn round_rows(ledgers: &[RoundLedger]) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for l in ledgers {
        for d in &l.devices {
            rows.push(vec![
                l.round_index.to_string(),
                d.device_id.to_string(),
                num(d.alpha),
                num(d.f),
                num(d.comm_energy),
                num(d.comp_energy),
                num(d.latency),
                d.feasible.to_string(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
            ]);
        }
        let part = || l.devices.iter().filter(|d| d.participating);
        rows.push(vec![
            l.round_index.to_string(),
            "-1".into(),
            String::new(),
            String::new(),
            num(l.devices.iter().map(|d| d.comm_energy).sum()),
            num(l.devices.iter().map(|d| d.comp_energy).sum()),
            num(part().map(|d| d.latency).fold(0.0, f64::max)),
            part().all(|d| d.feasible).to_string(),
            num(l.total_energy),
            num(l.cumulative_energy),
            num(l.contribution),
            num(l.goal),
        ]);
    }
    rows
}

pub fn emit_round_csv(ledgers: &[RoundLedger], path: &Path) -> Result<()> {
    write_csv(path, &ROUND_HEADER, &round_rows(ledgers))
}
