//! Fits the accuracy model to noisy (ratio, accuracy) measurements.

use fedgreen::perf::{fit_kappa, AccuracyModel};
use rand::Rng;
use rand_distr::{Distribution, Normal};

fn main() -> fedgreen::Result<()> {
    let truth = AccuracyModel::new(0.03, 19.221, 3.2, 0.58, 1e-3)?;
    let noise = Normal::new(0.0, 2e-3).unwrap();
    let mut rng = fedgreen::rng::stream(11);
    let points: Vec<(f64, f64)> = (0..24)
        .map(|_| {
            let alpha = rng.random_range(1.0..5.0);
            (alpha, truth.accuracy(alpha).unwrap() + noise.sample(&mut rng))
        })
        .collect();

    let fit = fit_kappa(&points)?;
    let m = fit.model;
    println!(
        "true   kappa = ({:.4}, {:.3}, {:.4}, {:.4})",
        truth.kappa1, truth.kappa2, truth.kappa3, truth.kappa4
    );
    println!(
        "fitted kappa = ({:.4}, {:.3}, {:.4}, {:.4})",
        m.kappa1, m.kappa2, m.kappa3, m.kappa4
    );
    println!("rms residual {:.2e} over {} points", fit.rms, points.len());
    Ok(())
}
