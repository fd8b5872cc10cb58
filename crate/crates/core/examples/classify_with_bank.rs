//! Trains briefly, builds a reference bank from target positives and source
//! negatives, then labels a few target test images.

use cdtl::experiment::PreparedData;
use cdtl::{build_bank, classify, train, ExperimentConfig, Label};

fn main() -> cdtl::Result<()> {
    let mut cfg = ExperimentConfig::default();
    cfg.train.epochs = 10;
    let data = PreparedData::prepare(&cfg)?;
    let (model, _) = train(&data.pools, &cfg.resolved_encoder(), &cfg.resolved_train())?;

    let (positives, negatives) = data.references(&cfg, &cfg.inference)?;
    let bank = build_bank(&model, &positives, &negatives)?;
    println!(
        "bank: {} positives, {} negatives",
        bank.positives().len(),
        bank.negatives().len()
    );

    let (queries, labels) = data.queries(&cfg)?;
    let picks = [
        0,
        1,
        2,
        queries.len() - 3,
        queries.len() - 2,
        queries.len() - 1,
    ];
    for i in picks {
        let v = classify(&model, &bank, &queries[i])?;
        let mark = if v.label == labels[i] { "ok" } else { "wrong" };
        println!(
            "query {i:>3} truth {:<8} predicted {:<8} d_pos {:.3} d_neg {:.3} {mark}",
            labels[i].as_str(),
            v.label.as_str(),
            v.mean_d_pos,
            v.mean_d_neg
        );
    }
    let correct = queries
        .iter()
        .zip(&labels)
        .filter(|(q, &l)| {
            classify(&model, &bank, q)
                .map(|v| v.label == l)
                .unwrap_or(false)
        })
        .count();
    let defects = labels.iter().filter(|&&l| l == Label::Defect).count();
    println!("{correct} of {} correct ({defects} defects)", queries.len());
    Ok(())
}
