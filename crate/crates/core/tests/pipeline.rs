//! Device compression through server aggregation.

use fedgreen::aggregate::{aggregate, aggregate_oracle, DeviceUpload};
use fedgreen::codec::{compress_model, decode_stream, CompressionConfig};
use fedgreen::fedsim::sample_scenario;
use fedgreen::grad::{generate_synthetic, LayerShape, ModelGradient, SyntheticGradientSpec};
use fedgreen::optimizer::{solve_all, SolverSettings};

fn shapes() -> Vec<LayerShape> {
    vec![
        LayerShape::conv(0, 16, 3, 3).unwrap(),
        LayerShape::bias(1, 16).unwrap(),
        LayerShape::conv(2, 32, 16, 3).unwrap(),
        LayerShape::bias(3, 32).unwrap(),
        LayerShape::fully_connected(4, 10, 512).unwrap(),
        LayerShape::bias(5, 10).unwrap(),
    ]
}

#[test]
fn planned_ratios_compress_and_aggregate() {
    let s = sample_scenario(6, 21).unwrap();
    let plans = solve_all(&s.devices, &s.config, &s.accuracy_model, &SolverSettings::default()).unwrap();
    let config = CompressionConfig::default();
    let mut uploads = Vec::new();
    let mut dense = Vec::new();
    let mut masks = Vec::new();
    for (d, plan) in s.devices.iter().zip(&plans) {
        let spec = SyntheticGradientSpec::new(u64::from(d.device_id), 8.0).unwrap();
        let layers: Vec<_> = shapes().iter().map(|sh| generate_synthetic(sh, &spec)).collect();
        let model = ModelGradient::new(layers, d.data).unwrap();
        let c = compress_model(&model, plan.alpha, &config, 7 + u64::from(d.device_id)).unwrap();
        assert!(
            c.clamped || c.achieved_alpha >= plan.alpha * (1.0 - 1e-9),
            "{} < {}",
            c.achieved_alpha,
            plan.alpha
        );

        // The concatenated records decode as one stream.
        let stream: Vec<u8> = c.layers.iter().flat_map(|l| l.bytes.iter().copied()).collect();
        let decoded = decode_stream(&stream).unwrap();
        assert_eq!(decoded.len(), shapes().len());
        dense.push(decoded.iter().map(|l| l.tensor.clone()).collect::<Vec<_>>());
        masks.push(
            decoded
                .iter()
                .map(|l| l.mask.expand(l.tensor.shape().kernel_len()))
                .collect::<Vec<_>>(),
        );
        uploads.push(DeviceUpload {
            device_id: d.device_id,
            blobs: c.layers,
            data_count: d.data,
        });
    }
    let global = aggregate(&uploads).unwrap();
    let counts: Vec<u64> = s.devices.iter().map(|d| d.data).collect();
    let oracle = aggregate_oracle(&dense, &masks, &counts).unwrap();
    assert_eq!(global.layers, oracle.layers);
    // Bias layers are always sent, so every device covers them.
    assert!(global.coverage[1].iter().all(|&c| c as usize == s.devices.len()));
}
