//! Solves the ratio/frequency problem for a handful of devices and shows
//! which constraint each optimum sits on.

use fedgreen::fedsim::sample_scenario;
use fedgreen::optimizer::{beta_bounds, solve_device, SolverSettings};
use fedgreen::perf::round_cost;

fn main() -> fedgreen::Result<()> {
    let s = sample_scenario(8, 3)?;
    println!("device  alpha    f_GHz   beta      bounds               energy_J  latency_s  boundary");
    for d in &s.devices {
        let plan = solve_device(d, &s.config, &s.accuracy_model, &SolverSettings::default())?;
        let cost = round_cost(d, &s.config, plan.alpha, plan.f)?;
        let bounds = beta_bounds(d, &s.config).map(|b| format!("[{:.2e}, {:.2e}]", b.lower, b.upper));
        println!(
            "{:>6}  {:>6.2}  {:>6.3}  {:.2e}  {:<19}  {:>8.3}  {:>9.2}  {}",
            d.device_id,
            plan.alpha,
            plan.f / 1e9,
            plan.beta,
            bounds.unwrap_or_else(|_| "infeasible".into()),
            cost.energy(),
            cost.latency(),
            plan.boundary.as_str()
        );
    }
    Ok(())
}
