//! Three devices compress the same layer at different ratios; the server
//! aggregates the decoded uploads entry by entry.

use fedgreen::aggregate::{aggregate, DeviceUpload};
use fedgreen::codec::{compress_model, CompressionConfig};
use fedgreen::grad::{generate_synthetic, LayerShape, ModelGradient, SyntheticGradientSpec};

fn main() -> fedgreen::Result<()> {
    let shapes = [LayerShape::conv(0, 16, 8, 3)?, LayerShape::bias(1, 4)?];
    let config = CompressionConfig::default();
    let mut uploads = Vec::new();
    for (id, (alpha, data)) in [(4.0, 1200u64), (16.0, 800), (40.0, 2000)].into_iter().enumerate() {
        let spec = SyntheticGradientSpec::new(id as u64, 6.0)?;
        let layers = shapes.iter().map(|s| generate_synthetic(s, &spec)).collect();
        let model = ModelGradient::new(layers, data)?;
        let c = compress_model(&model, alpha, &config, 100 + id as u64)?;
        println!(
            "device {id}: alpha {alpha:>4}, rho {:.3}, achieved {:.2}, D = {data}",
            c.rho, c.achieved_alpha
        );
        uploads.push(DeviceUpload {
            device_id: id as u32,
            blobs: c.layers,
            data_count: data,
        });
    }

    let global = aggregate(&uploads)?;
    let conv = &global.layers[0];
    let klen = shapes[0].kernel_len();
    println!("\nfirst kernels of the conv layer\nkernel  covered_by  first_entry");
    for k in 0..10 {
        println!(
            "{k:>6}  {:>10}  {:>11.5}",
            global.coverage[0][k * klen],
            conv.values()[k * klen]
        );
    }
    println!("bias (sent raw): {:?}", global.layers[1].values());
    Ok(())
}
