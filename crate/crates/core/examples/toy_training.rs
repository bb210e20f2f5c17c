//! Trains the toy network with every upload going through the codec and
//! compares final accuracy across fixed ratios.

use fedgreen::fedsim::{run_toy_training, sample_scenario, Strategy, ToyTrainSpec};

fn main() -> fedgreen::Result<()> {
    let s = sample_scenario(16, 0)?;
    for strategy in [
        Strategy::Uncompressed,
        Strategy::Fixed(2.0),
        Strategy::Fixed(8.0),
        Strategy::Fixed(32.0),
        Strategy::FedGreen,
    ] {
        let spec = ToyTrainSpec {
            strategy,
            ..ToyTrainSpec::default()
        };
        let run = run_toy_training(&s, &spec)?;
        let last = run.test_accuracy.len() - 1;
        println!(
            "{:<12} loss {:.4} -> {:.4}  test accuracy {:.4}  achieved alpha {:.2}",
            strategy.to_string(),
            run.initial_loss,
            run.train_loss[last],
            run.test_accuracy[last],
            run.achieved_alpha[last]
        );
    }
    Ok(())
}
