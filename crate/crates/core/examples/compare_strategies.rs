//! Runs FedGreen and the three baselines on the same scenarios.

use fedgreen::fedsim::{energy_to_target, run_modeled, sample_scenario, Strategy};

fn main() -> fedgreen::Result<()> {
    let rounds = 5;
    for seed in 0..3 {
        let s = sample_scenario(16, seed)?;
        let fg = run_modeled(&s, Strategy::FedGreen, rounds)?;
        let target = 0.95 * fg[0].contribution;
        println!("scenario {seed} (target contribution {target:.4})");
        for strategy in Strategy::COMPARISON {
            let l = run_modeled(&s, strategy, rounds)?;
            let goal = l.iter().map(|r| r.goal).sum::<f64>() / f64::from(rounds);
            let to_target = energy_to_target(&l, target).map_or("never".to_string(), |e| format!("{e:.3} J"));
            println!(
                "  {:<10} goal {goal:.5}  contribution {:.4}  energy/round {:.3} J  to target {to_target}",
                strategy.to_string(),
                l[0].contribution,
                l[0].total_energy
            );
        }
    }
    Ok(())
}
