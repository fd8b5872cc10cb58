//! Confusion-matrix metrics with the no-defect class as "positive".

use cdtl::experiment::Rates;
use cdtl::{metrics, ConfusionMatrix};

fn main() {
    let rows = [
        (
            "modified loss",
            ConfusionMatrix {
                tp: 40,
                fn_: 0,
                tn: 38,
                fp: 2,
            },
        ),
        (
            "source only",
            ConfusionMatrix {
                tp: 40,
                fn_: 0,
                tn: 31,
                fp: 9,
            },
        ),
        (
            "all wrong",
            ConfusionMatrix {
                tp: 0,
                fn_: 40,
                tn: 0,
                fp: 40,
            },
        ),
    ];
    let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.3}"));
    println!(
        "{:<14} {:>4} {:>4} {:>4} {:>4}  {:>9} {:>6} {:>7}",
        "", "TP", "FN", "TN", "FP", "precision", "recall", "FP rate"
    );
    for (name, cm) in rows {
        let m = metrics(&cm);
        let r = Rates::from_counts(&cm);
        println!(
            "{name:<14} {:>4} {:>4} {:>4} {:>4}  {:>9} {:>6} {:>7}",
            cm.tp,
            cm.fn_,
            cm.tn,
            cm.fp,
            fmt(m.precision),
            fmt(m.recall),
            fmt(r.fp)
        );
    }
}
