//! Trains the default encoder in the cross-domain mode for a few epochs and
//! saves the checkpoint.
//!
//! cargo run --release --example train_encoder -- [checkpoint_path]

use cdtl::experiment::PreparedData;
use cdtl::{train, ExperimentConfig, Mode};

fn main() -> cdtl::Result<()> {
    let mut cfg = ExperimentConfig::default().with_mode(Mode::Ours);
    cfg.train.epochs = 10;
    let data = PreparedData::prepare(&cfg)?;
    println!(
        "pools: {} source noDefect, {} source defect, {} target noDefect",
        data.pools.source_no_defect.len(),
        data.pools.source_defect.len(),
        data.pools.target_no_defect.len()
    );
    let (model, report) = train(&data.pools, &cfg.resolved_encoder(), &cfg.resolved_train())?;
    for (epoch, loss) in report.loss_history.iter().enumerate() {
        println!("epoch {:>2}  loss {loss:.4}", epoch + 1);
    }
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "encoder.ckpt".into());
    model.save_checkpoint(&path)?;
    println!("saved {path} after {:.1} s", report.wall_time_s);
    Ok(())
}
