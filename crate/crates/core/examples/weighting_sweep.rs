//! Sweeps the energy weight and the number of local epochs.

use fedgreen::fedsim::{sample_scenario, sweep, Strategy, SweepParam};

fn main() -> fedgreen::Result<()> {
    let s = sample_scenario(16, 0)?;
    let strategies = [Strategy::FedGreen, Strategy::Uniform];

    println!("varpi      strategy   goal       energy_J   mean_alpha");
    for p in sweep(&s, &strategies, SweepParam::Varpi, &[1e-7, 1e-6, 1e-5, 1e-4, 1e-3], 1)? {
        println!(
            "{:<9.0e}  {:<9}  {:.6}  {:>9.3}  {:>10.2}",
            p.value,
            p.strategy.to_string(),
            p.goal,
            p.energy_per_round,
            p.mean_alpha
        );
    }
    println!("\nepochs  strategy   goal       energy_J");
    for p in sweep(&s, &strategies, SweepParam::LocalEpochs, &[1.0, 2.0, 4.0], 1)? {
        println!(
            "{:<6}  {:<9}  {:.6}  {:>9.3}",
            p.value,
            p.strategy.to_string(),
            p.goal,
            p.energy_per_round
        );
    }
    Ok(())
}
