//! Generates the default source/target pair, prints the shift statistics and
//! optionally writes the images to a directory.
//!
//! cargo run --example generate_domains -- [out_dir]

use cdtl::synthetic::{mean_intensity_threshold_accuracy, shift_statistics};
use cdtl::{write_dataset, Domain, GeneratorSpec, Label};

fn main() -> cdtl::Result<()> {
    let (source, target) = GeneratorSpec::default().generate(1)?;
    for (name, ds) in [("source", &source), ("target", &target)] {
        let domain = ds.samples[0].domain;
        println!(
            "{name}: {} noDefect, {} defect, mean-intensity threshold accuracy {:.1} %",
            ds.select(domain, Label::NoDefect).len(),
            ds.select(domain, Label::Defect).len(),
            100.0 * mean_intensity_threshold_accuracy(ds)
        );
    }
    if let Some(s) = shift_statistics(&source, &target) {
        println!(
            "domain gap {:.4} vs class gap {:.4}",
            s.domain_gap, s.class_gap
        );
    }
    if let Some(dir) = std::env::args().nth(1) {
        let all = source.concat(target);
        write_dataset(&all, &dir)?;
        println!(
            "wrote {} images ({} target) to {dir}",
            all.len(),
            all.samples
                .iter()
                .filter(|s| s.domain == Domain::Target)
                .count()
        );
    }
    Ok(())
}
