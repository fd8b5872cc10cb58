//! Saves and reloads a model and a reference bank, and shows that a bank
//! built with another model is refused.

use cdtl::encoder::EncoderConfig;
use cdtl::{build_bank, classify, init_encoder, EncoderModel, Error, ReferenceBank, Tensor};

fn main() -> cdtl::Result<()> {
    let dir = std::env::temp_dir().join("cdtl-roundtrip");
    std::fs::create_dir_all(&dir)?;
    let model = init_encoder(&EncoderConfig {
        seed: 1,
        ..EncoderConfig::default()
    })?;
    let ckpt = dir.join("model.ckpt");
    model.save_checkpoint(&ckpt)?;
    let back = EncoderModel::load_checkpoint(&ckpt)?;
    println!(
        "checkpoint {} bytes, identical after reload: {}",
        std::fs::metadata(&ckpt)?.len(),
        back.to_checkpoint_bytes() == model.to_checkpoint_bytes()
    );

    let img = |v: f32| Tensor::filled(&[32, 32, 1], v);
    let bank = build_bank(&model, &[img(0.7), img(0.6)], &[img(0.2)])?;
    let bank_path = dir.join("refs.bank");
    bank.save(&bank_path)?;
    let bank_back = ReferenceBank::load(&bank_path)?;
    println!("bank identical after reload: {}", bank_back == bank);
    println!(
        "query 0.65 -> {:?}",
        classify(&back, &bank_back, &img(0.65))?.label
    );

    let other = init_encoder(&EncoderConfig {
        seed: 2,
        ..EncoderConfig::default()
    })?;
    match classify(&other, &bank_back, &img(0.65)) {
        Err(Error::StaleBank) => println!("bank refused for a different model"),
        other => println!("unexpected: {other:?}"),
    }
    Ok(())
}
