//! Runs all three training modes over a few seeds and prints the summary.
//!
//! cargo run --release --example suite -- [seeds, default 1,2]

use cdtl::{run_suite, ExperimentConfig, Mode};

fn main() -> cdtl::Result<()> {
    let seeds: Vec<u64> = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "1,2".into())
        .split(',')
        .map(|s| {
            s.trim()
                .parse()
                .expect("seeds are comma-separated integers")
        })
        .collect();
    let report = run_suite(&ExperimentConfig::default(), &seeds, &Mode::ALL)?;
    print!("{}", report.to_table());
    Ok(())
}
