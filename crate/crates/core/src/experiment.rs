//! End-to-end experiment pipeline: data → train → reference bank →
//! confusion matrix, plus multi-seed suites over the three training modes.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::classifier::{build_bank, classify_batch, ConfusionMatrix, ReferenceBank};
use crate::dataset::{read_dataset_with, split, Dataset, Domain, Label, TrainingPools};
use crate::encoder::{EncoderConfig, EncoderModel};
use crate::error::{Error, Result, StageExt};
use crate::loss::{LossConfig, LossVariant};
use crate::sampler::Mode;
use crate::seed::derive_seed;
use crate::synthetic::GeneratorSpec;
use crate::tensor::Tensor;
use crate::trainer::{train, TrainConfig, TrainReport};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
#[allow(clippy::large_enum_variant)]
pub enum DataSource {
    Generate(GeneratorSpec),
    /// A dataset directory holding both domains.
    Directory(PathBuf),
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Generate(GeneratorSpec::default())
    }
}

/// Where the positive (no-defect) references come from at inference.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReferenceSource {
    #[default]
    Target,
    Source,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct InferenceConfig {
    pub n_pos: usize,
    pub n_neg: usize,
    pub positive_source: ReferenceSource,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            n_pos: 50,
            n_neg: 50,
            positive_source: ReferenceSource::Target,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub mode: Mode,
    /// Master seed; data, split, initialization and sampling seeds derive from it.
    pub seed: u64,
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    pub data: DataSource,
    pub source_train_fraction: f64,
    pub target_train_fraction: f64,
    pub test_per_class: usize,
    pub inference: InferenceConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Ours,
            seed: 1,
            encoder: EncoderConfig::default(),
            train: TrainConfig::default(),
            data: DataSource::default(),
            source_train_fraction: 0.8,
            target_train_fraction: 0.5,
            test_per_class: 50,
            inference: InferenceConfig::default(),
        }
    }
}

/// Loss variant paired with each mode: the modified loss for `ours`, the
/// basic loss for both benchmarks.
pub fn loss_variant_for(mode: Mode) -> LossVariant {
    match mode {
        Mode::Ours => LossVariant::Modified,
        Mode::Bench1 | Mode::Bench2 => LossVariant::Basic,
    }
}

impl ExperimentConfig {
    pub fn data_seed(&self) -> u64 {
        derive_seed(self.seed, 1)
    }

    pub fn split_seed(&self) -> u64 {
        derive_seed(self.seed, 2)
    }

    /// Encoder config with the derived initialization seed.
    pub fn resolved_encoder(&self) -> EncoderConfig {
        EncoderConfig {
            seed: derive_seed(self.seed, 3),
            ..self.encoder.clone()
        }
    }

    /// Train config with mode, mode-coupled loss variant and derived seed.
    pub fn resolved_train(&self) -> TrainConfig {
        let variant = loss_variant_for(self.mode);
        TrainConfig {
            mode: self.mode,
            seed: derive_seed(self.seed, 4),
            loss: LossConfig {
                variant,
                m2: if variant == LossVariant::Basic {
                    0.0
                } else {
                    self.train.loss.m2
                },
                ..self.train.loss
            },
            ..self.train.clone()
        }
    }

    pub fn with_mode(&self, mode: Mode) -> Self {
        Self {
            mode,
            ..self.clone()
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }
}

/// Split data ready for training and evaluation.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub source_train: Dataset,
    pub source_test: Dataset,
    pub target_train: Dataset,
    pub target_test: Dataset,
    pub pools: TrainingPools,
}

/// Produces the source and target datasets named by `cfg.data`.
pub fn load_or_generate(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    match &cfg.data {
        DataSource::Generate(spec) => spec.generate(cfg.data_seed()),
        DataSource::Directory(dir) => {
            let size = cfg.encoder.input_size;
            let all = read_dataset_with(dir, Some((size.height, size.width)))?;
            Ok((
                all.filter_domain(Domain::Source),
                all.filter_domain(Domain::Target),
            ))
        }
    }
}

impl PreparedData {
    pub fn from_datasets(
        cfg: &ExperimentConfig,
        source: &Dataset,
        target: &Dataset,
    ) -> Result<Self> {
        let (source_train, source_test) =
            split(source, cfg.source_train_fraction, cfg.split_seed())?;
        let (target_train, target_test) = split(
            target,
            cfg.target_train_fraction,
            derive_seed(cfg.split_seed(), 1),
        )?;
        let pools = TrainingPools::from_splits(&source_train, &target_train);
        Ok(Self {
            source_train,
            source_test,
            target_train,
            target_test,
            pools,
        })
    }

    pub fn prepare(cfg: &ExperimentConfig) -> Result<Self> {
        let (s, t) = load_or_generate(cfg).stage("data")?;
        Self::from_datasets(cfg, &s, &t).stage("split")
    }

    /// Query images and labels: the first `test_per_class` target test
    /// images of each class, no-defect first.
    pub fn queries(&self, cfg: &ExperimentConfig) -> Result<(Vec<Tensor>, Vec<Label>)> {
        let n = cfg.test_per_class;
        if n == 0 {
            return Err(Error::Config("test_per_class must be positive".into()));
        }
        let mut images = Vec::with_capacity(2 * n);
        let mut labels = Vec::with_capacity(2 * n);
        for label in [Label::NoDefect, Label::Defect] {
            let pool = self.target_test.images(Domain::Target, label);
            if pool.len() < n {
                return Err(Error::Config(format!(
                    "target test set has {} {label} images, {n} requested",
                    pool.len()
                )));
            }
            images.extend(pool.into_iter().take(n));
            labels.extend(std::iter::repeat_n(label, n));
        }
        Ok((images, labels))
    }

    /// Positive and negative reference images. Target positives are taken
    /// from the target test no-defect images that follow the queries.
    pub fn references(
        &self,
        cfg: &ExperimentConfig,
        inference: &InferenceConfig,
    ) -> Result<(Vec<Tensor>, Vec<Tensor>)> {
        let take = |pool: Vec<Tensor>, skip: usize, n: usize, what: &str| -> Result<Vec<Tensor>> {
            if n == 0 || pool.len() < skip + n {
                return Err(Error::Config(format!(
                    "{what}: need {n} references after {skip} reserved, pool has {}",
                    pool.len()
                )));
            }
            Ok(pool.into_iter().skip(skip).take(n).collect())
        };
        let positives = match inference.positive_source {
            ReferenceSource::Target => take(
                self.target_test.images(Domain::Target, Label::NoDefect),
                cfg.test_per_class,
                inference.n_pos,
                "target positives",
            )?,
            ReferenceSource::Source => take(
                self.source_test.images(Domain::Source, Label::NoDefect),
                0,
                inference.n_pos,
                "source positives",
            )?,
        };
        let negatives = take(
            self.source_test.images(Domain::Source, Label::Defect),
            0,
            inference.n_neg,
            "source negatives",
        )?;
        Ok((positives, negatives))
    }
}

/// Builds the bank for `inference` and classifies the query set.
pub fn evaluate(
    model: &EncoderModel,
    data: &PreparedData,
    cfg: &ExperimentConfig,
    inference: &InferenceConfig,
) -> Result<(ConfusionMatrix, ReferenceBank)> {
    let (pos, neg) = data.references(cfg, inference).stage("bank")?;
    let bank = build_bank(model, &pos, &neg).stage("bank")?;
    let (images, labels) = data.queries(cfg).stage("classify")?;
    let cm = classify_batch(model, &bank, &images, &labels).stage("classify")?;
    Ok((cm, bank))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub fp_rate: Option<f64>,
    pub tp_rate: Option<f64>,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Metrics with the no-defect class as "positive". Zero denominators give
/// `None`.
pub fn metrics(cm: &ConfusionMatrix) -> Metrics {
    Metrics {
        precision: ratio(cm.tp, cm.tp + cm.fp),
        recall: ratio(cm.tp, cm.tp + cm.fn_),
        fp_rate: ratio(cm.fp, cm.tn + cm.fp),
        tp_rate: ratio(cm.tp, cm.tp + cm.fn_),
    }
}

/// Per-true-class row rates.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    pub tp: Option<f64>,
    #[serde(rename = "fn")]
    pub fn_: Option<f64>,
    pub tn: Option<f64>,
    pub fp: Option<f64>,
}

impl Rates {
    pub fn from_counts(cm: &ConfusionMatrix) -> Self {
        let pos = cm.tp + cm.fn_;
        let neg = cm.tn + cm.fp;
        Self {
            tp: ratio(cm.tp, pos),
            fn_: ratio(cm.fn_, pos),
            tn: ratio(cm.tn, neg),
            fp: ratio(cm.fp, neg),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    /// Synthetic runs reproduce the ordering of the benchmark ladder, not
    /// its absolute rates.
    pub fidelity: String,
    pub mode: Mode,
    pub seed: u64,
    pub counts: ConfusionMatrix,
    pub rates: Rates,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub loss_variant: LossVariant,
    pub config_echo: ExperimentConfig,
    pub runtime_s: f64,
}

impl ExperimentReport {
    pub fn new(cfg: &ExperimentConfig, counts: ConfusionMatrix, runtime_s: f64) -> Self {
        let m = metrics(&counts);
        Self {
            schema_version: SCHEMA_VERSION,
            fidelity: "ordering".into(),
            mode: cfg.mode,
            seed: cfg.seed,
            counts,
            rates: Rates::from_counts(&counts),
            precision: m.precision,
            recall: m.recall,
            loss_variant: loss_variant_for(cfg.mode),
            config_echo: cfg.clone(),
            runtime_s,
        }
    }

    pub fn metrics(&self) -> Metrics {
        metrics(&self.counts)
    }

    pub fn to_table(&self) -> String {
        let pct = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{:6.2} %", 100.0 * v));
        let num = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.3}"));
        let mut s = String::new();
        let _ = writeln!(
            s,
            "mode {} (loss {:?}), seed {}",
            self.mode, self.loss_variant, self.seed
        );
        let _ = writeln!(
            s,
            "                      predicted defect   predicted noDefect"
        );
        let _ = writeln!(
            s,
            "  true defect         TN {:>4} {:>9}   FP {:>4} {:>9}",
            self.counts.tn,
            pct(self.rates.tn),
            self.counts.fp,
            pct(self.rates.fp)
        );
        let _ = writeln!(
            s,
            "  true noDefect       FN {:>4} {:>9}   TP {:>4} {:>9}",
            self.counts.fn_,
            pct(self.rates.fn_),
            self.counts.tp,
            pct(self.rates.tp)
        );
        let _ = writeln!(
            s,
            "  precision {}  recall {}  runtime {:.1} s",
            num(self.precision),
            num(self.recall),
            self.runtime_s
        );
        s
    }
}

/// Everything produced by one run.
pub struct ExperimentRun {
    pub report: ExperimentReport,
    pub model: EncoderModel,
    pub bank: ReferenceBank,
    pub train_report: TrainReport,
}

pub fn run_experiment_full(cfg: &ExperimentConfig) -> Result<ExperimentRun> {
    let start = Instant::now();
    let data = PreparedData::prepare(cfg)?;
    let (model, train_report) =
        train(&data.pools, &cfg.resolved_encoder(), &cfg.resolved_train()).stage("train")?;
    let (counts, bank) = evaluate(&model, &data, cfg, &cfg.inference)?;
    Ok(ExperimentRun {
        report: ExperimentReport::new(cfg, counts, start.elapsed().as_secs_f64()),
        model,
        bank,
        train_report,
    })
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    run_experiment_full(cfg).map(|r| r.report)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl Spread {
    fn of(values: impl IntoIterator<Item = Option<f64>>) -> Option<Self> {
        let v: Vec<f64> = values.into_iter().flatten().collect();
        if v.is_empty() {
            return None;
        }
        Some(Self {
            mean: v.iter().sum::<f64>() / v.len() as f64,
            min: v.iter().copied().fold(f64::INFINITY, f64::min),
            max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub mode: Mode,
    pub runs: usize,
    pub tp_rate: Option<Spread>,
    pub fp_rate: Option<Spread>,
    pub precision: Option<Spread>,
    pub recall: Option<Spread>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub schema_version: u32,
    pub seeds: Vec<u64>,
    pub modes: Vec<Mode>,
    pub runs: Vec<ExperimentReport>,
    pub summary: Vec<ModeSummary>,
    /// Mean FP rate ours < bench1 < bench2; `None` unless all three modes ran.
    pub ordering_holds: Option<bool>,
}

impl SuiteReport {
    pub fn from_runs(seeds: Vec<u64>, modes: Vec<Mode>, runs: Vec<ExperimentReport>) -> Self {
        let summary: Vec<ModeSummary> = modes
            .iter()
            .map(|&mode| {
                let rs: Vec<_> = runs.iter().filter(|r| r.mode == mode).collect();
                let ms: Vec<_> = rs.iter().map(|r| r.metrics()).collect();
                ModeSummary {
                    mode,
                    runs: rs.len(),
                    tp_rate: Spread::of(ms.iter().map(|m| m.tp_rate)),
                    fp_rate: Spread::of(ms.iter().map(|m| m.fp_rate)),
                    precision: Spread::of(ms.iter().map(|m| m.precision)),
                    recall: Spread::of(ms.iter().map(|m| m.recall)),
                }
            })
            .collect();
        let mean_fp = |mode| {
            summary
                .iter()
                .find(|s| s.mode == mode)
                .and_then(|s| s.fp_rate)
                .map(|s| s.mean)
        };
        let ordering_holds = match (
            mean_fp(Mode::Ours),
            mean_fp(Mode::Bench1),
            mean_fp(Mode::Bench2),
        ) {
            (Some(o), Some(b1), Some(b2)) => Some(o < b1 && b1 < b2),
            _ => None,
        };
        Self {
            schema_version: SCHEMA_VERSION,
            seeds,
            modes,
            runs,
            summary,
            ordering_holds,
        }
    }

    pub fn mode_summary(&self, mode: Mode) -> Option<&ModeSummary> {
        self.summary.iter().find(|s| s.mode == mode)
    }

    pub fn to_table(&self) -> String {
        let f = |s: Option<Spread>| {
            s.map_or("n/a".to_string(), |s| {
                format!(
                    "{:5.1}% [{:5.1}, {:5.1}]",
                    100.0 * s.mean,
                    100.0 * s.min,
                    100.0 * s.max
                )
            })
        };
        let mut out = String::new();
        let _ = writeln!(out, "seeds {:?}", self.seeds);
        let _ = writeln!(
            out,
            "{:<8} {:>4}  {:<24} {:<24}",
            "mode", "runs", "TP rate mean [min,max]", "FP rate mean [min,max]"
        );
        for s in &self.summary {
            let _ = writeln!(
                out,
                "{:<8} {:>4}  {:<24} {:<24}",
                s.mode.as_str(),
                s.runs,
                f(s.tp_rate),
                f(s.fp_rate)
            );
        }
        if let Some(ok) = self.ordering_holds {
            let _ = writeln!(
                out,
                "FP ordering ours < bench1 < bench2: {}",
                if ok { "holds" } else { "violated" }
            );
        }
        out
    }
}

/// Runs every `(seed, mode)` pair of `base` sequentially.
pub fn run_suite(base: &ExperimentConfig, seeds: &[u64], modes: &[Mode]) -> Result<SuiteReport> {
    if seeds.is_empty() {
        return Err(Error::Input("suite needs at least one seed".into()));
    }
    if modes.is_empty() {
        return Err(Error::Input("suite needs at least one mode".into()));
    }
    let mut runs = Vec::with_capacity(seeds.len() * modes.len());
    for &seed in seeds {
        for &mode in modes {
            runs.push(run_experiment(&base.with_seed(seed).with_mode(mode))?);
        }
    }
    Ok(SuiteReport::from_runs(seeds.to_vec(), modes.to_vec(), runs))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cm(tp: usize, fn_: usize, tn: usize, fp: usize) -> ConfusionMatrix {
        ConfusionMatrix { tp, fn_, tn, fp }
    }

    #[test]
    fn figure_counts_metrics() {
        let m = metrics(&cm(40, 0, 38, 2));
        assert!((m.precision.unwrap() - 40.0 / 42.0).abs() < 1e-12);
        assert_eq!(m.recall, Some(1.0));
        assert_eq!(m.fp_rate, Some(0.05));
        let m = metrics(&cm(40, 0, 31, 9));
        assert!((m.fp_rate.unwrap() - 0.225).abs() < 1e-12);
    }

    #[test]
    fn perfect_and_undefined() {
        let m = metrics(&cm(10, 0, 10, 0));
        assert_eq!(
            (m.precision, m.recall, m.fp_rate),
            (Some(1.0), Some(1.0), Some(0.0))
        );
        let m = metrics(&cm(0, 5, 5, 0));
        assert_eq!(m.precision, None);
        assert_eq!(m.recall, Some(0.0));
    }

    #[test]
    fn rates_rows_sum_to_one() {
        let r = Rates::from_counts(&cm(37, 3, 11, 29));
        assert!((r.tp.unwrap() + r.fn_.unwrap() - 1.0).abs() < 1e-12);
        assert!((r.tn.unwrap() + r.fp.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mode_fixes_loss_variant() {
        let base = ExperimentConfig::default();
        assert_eq!(
            base.with_mode(Mode::Ours).resolved_train().loss.variant,
            LossVariant::Modified
        );
        for m in [Mode::Bench1, Mode::Bench2] {
            let t = base.with_mode(m).resolved_train();
            assert_eq!(t.loss.variant, LossVariant::Basic);
            assert_eq!(t.mode, m);
        }
    }

    #[test]
    fn suite_needs_seeds() {
        assert!(matches!(
            run_suite(&ExperimentConfig::default(), &[], &Mode::ALL),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn config_json_uses_defaults_for_missing_fields() {
        let cfg: ExperimentConfig = serde_json::from_str(r#"{"mode":"bench2","seed":9}"#).unwrap();
        assert_eq!(cfg.mode, Mode::Bench2);
        assert_eq!(cfg.test_per_class, 50);
        let back: ExperimentConfig =
            serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }
}
