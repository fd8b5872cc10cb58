//! Compares the encoder's analytic weight gradients with central finite
//! differences in f64 and reports the largest relative error per tensor.

use cdtl::encoder::{ConvBlock, EncoderConfig, EncoderModel, InputSize};
use cdtl::{init_encoder, Tensor};

fn main() -> cdtl::Result<()> {
    let cfg = EncoderConfig {
        input_size: InputSize {
            height: 12,
            width: 12,
            channels: 1,
        },
        conv_blocks: vec![ConvBlock {
            filters: 4,
            kernel_size: 3,
        }],
        embedding_dim: 6,
        seed: 3,
        ..EncoderConfig::default()
    };
    let model: EncoderModel<f64> = init_encoder(&cfg)?.cast();
    let image = Tensor::new(
        vec![12, 12, 1],
        (0..144).map(|i| ((i * 37 % 101) as f64) / 100.0).collect(),
    )?;
    let r: Vec<f64> = (0..6).map(|i| 1.0 - 0.3 * i as f64).collect();
    let objective = |m: &EncoderModel<f64>| -> f64 {
        let e = m.embed(&image).unwrap();
        e.as_slice().iter().zip(&r).map(|(a, b)| a * b).sum()
    };

    let (_, trace) = model.embed_with_cache(&image)?;
    let grads = model.backward(&trace, &r)?;
    let h = 1e-3;
    for (wi, g) in grads.iter().enumerate() {
        let mut worst = 0.0f64;
        for k in 0..g.len() {
            let mut plus = model.clone();
            plus.weights_mut()[wi].data_mut()[k] += h;
            let mut minus = model.clone();
            minus.weights_mut()[wi].data_mut()[k] -= h;
            let numeric = (objective(&plus) - objective(&minus)) / (2.0 * h);
            let analytic = g.data()[k];
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3);
            worst = worst.max(rel);
        }
        println!(
            "weight {wi} {:?}: max relative error {worst:.2e}",
            g.shape()
        );
    }
    Ok(())
}
