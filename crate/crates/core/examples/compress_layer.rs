//! Compresses one convolutional layer at several pruning rates and reports
//! the record size against the analytic bound.

use fedgreen::codec::{compress_layer, compressed_bits_bound, decode, CompressionConfig};
use fedgreen::grad::{generate_synthetic, LayerShape, SyntheticGradientSpec};

fn main() -> fedgreen::Result<()> {
    let shape = LayerShape::conv(0, 32, 16, 3)?;
    let grad = generate_synthetic(&shape, &SyntheticGradientSpec::new(7, 10.0)?);
    let config = CompressionConfig::default();
    let raw_bits = 32 * shape.len() as u64;

    println!(
        "layer {}x{}x{}x{}, {raw_bits} raw bits",
        shape.c_out(),
        shape.c_in(),
        shape.k(),
        shape.k()
    );
    println!(
        "{:>5} {:>9} {:>9} {:>9} {:>8} {:>10}",
        "rho", "payload", "bound", "wire", "ratio", "rel_err"
    );
    for rho in [0.0, 0.25, 0.5, 0.75, 0.9, 0.99] {
        let blob = compress_layer(&grad, rho, &config, 1)?;
        let back = decode(&blob)?;
        let err: f64 = grad
            .values()
            .iter()
            .zip(back.values())
            .map(|(&a, &b)| f64::from(a - b).powi(2))
            .sum::<f64>()
            / grad.squared_norm();
        let payload = blob.bit_counts.payload();
        println!(
            "{rho:>5} {payload:>9} {:>9} {:>9} {:>8.2} {:>10.4}",
            compressed_bits_bound(&shape, rho, config.levels_conv),
            blob.bit_counts.total(),
            raw_bits as f64 / payload as f64,
            err.sqrt()
        );
    }
    Ok(())
}
