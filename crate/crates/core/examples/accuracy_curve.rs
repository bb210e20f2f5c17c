//! Tabulates the accuracy model over compression ratios, marking where the
//! logarithm's argument is clamped.

use fedgreen::perf::AccuracyModel;

fn main() -> fedgreen::Result<()> {
    let model = AccuracyModel::default();
    println!(
        "kappa = ({}, {}, {}, {})",
        model.kappa1, model.kappa2, model.kappa3, model.kappa4
    );
    if let Some((lo, _)) = model.unclamped_lambda_range() {
        println!("clamped above alpha = {:.3}", 1.0 / lo);
    }
    for alpha in [1.0, 1.5, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 7.5, 8.0, 16.0, 50.0, 300.0] {
        let e = model.evaluate(alpha)?;
        println!(
            "F({alpha:>5}) = {:.4}{}",
            e.value,
            if e.clamped { "  (clamped)" } else { "" }
        );
    }
    Ok(())
}
