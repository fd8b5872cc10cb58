//! Command-line surface: `gen-data`, `train`, `eval`, `experiment`, `suite`.
//!
//! Configuration is an [`ExperimentConfig`] JSON file (every field
//! optional) with flag overrides on top. Exit status is 0 on success, 1 on
//! usage errors and 2 on pipeline errors.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::classifier::ReferenceBank;
use crate::dataset::{write_dataset, Domain, Label};
use crate::encoder::EncoderModel;
use crate::error::{Error, StageExt};
use crate::experiment::{
    evaluate, load_or_generate, run_experiment_full, run_suite, DataSource, ExperimentConfig,
    ExperimentReport, PreparedData, ReferenceSource,
};
use crate::sampler::Mode;
use crate::synthetic::shift_statistics;
use crate::trainer::train;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_PIPELINE: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "cdtl",
    version,
    about = "Cross-domain triplet-loss defect classification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic source/target dataset directory.
    GenData {
        #[command(flatten)]
        common: Common,
        /// Output directory for the manifest and PGM files.
        #[arg(long)]
        dir: PathBuf,
    },
    /// Train an encoder on a dataset directory and save a checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Classify the target test split of a dataset with a trained checkpoint.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        refs: RefArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Generate (or load), train, build the bank and classify in one run.
    Experiment {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        refs: RefArgs,
        /// Dataset directory to use instead of the configured data source.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Also save the trained checkpoint here.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Run every mode for every seed and summarize.
    Suite {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', required = true)]
        seeds: Vec<u64>,
        #[arg(long, value_delimiter = ',', default_values = ["ours", "bench1", "bench2"])]
        modes: Vec<Mode>,
    },
}

#[derive(Debug, Args)]
struct Common {
    /// JSON experiment configuration; missing fields take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    triplets_per_epoch: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Write the JSON report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RefArgs {
    /// Domain of the positive references.
    #[arg(long, value_enum)]
    positives: Option<RefChoice>,
    #[arg(long)]
    n_pos: Option<usize>,
    #[arg(long)]
    n_neg: Option<usize>,
    /// Save the reference bank here.
    #[arg(long)]
    bank: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum RefChoice {
    Target,
    Source,
}

enum Failure {
    Usage(String),
    Pipeline(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Pipeline(e)
    }
}

impl Common {
    fn resolve(&self) -> Result<ExperimentConfig, Failure> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| {
                    Failure::Usage(format!("cannot read config file {}: {e}", path.display()))
                })?;
                serde_json::from_str(&text).map_err(|e| {
                    Failure::Usage(format!("invalid config file {}: {e}", path.display()))
                })?
            }
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(m) = self.mode {
            cfg.mode = m;
        }
        if let Some(e) = self.epochs {
            cfg.train.epochs = e;
        }
        if let Some(t) = self.triplets_per_epoch {
            cfg.train.triplets_per_epoch = t;
        }
        if let Some(b) = self.batch_size {
            cfg.train.batch_size = b;
        }
        if let Some(lr) = self.learning_rate {
            cfg.train.optimizer = cfg.train.optimizer.with_learning_rate(lr);
        }
        Ok(cfg)
    }
}

impl RefArgs {
    fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(p) = self.positives {
            cfg.inference.positive_source = match p {
                RefChoice::Target => ReferenceSource::Target,
                RefChoice::Source => ReferenceSource::Source,
            };
        }
        if let Some(n) = self.n_pos {
            cfg.inference.n_pos = n;
        }
        if let Some(n) = self.n_neg {
            cfg.inference.n_neg = n;
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                stderr.write_all(text.as_bytes())
            } else {
                stdout.write_all(text.as_bytes())
            };
            return code;
        }
    };
    match dispatch(cli.command, stdout) {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(msg)) => {
            let _ = writeln!(stderr, "error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Pipeline(e)) => {
            let _ = writeln!(stderr, "error: {e}");
            EXIT_PIPELINE
        }
    }
}

fn write_json<T: Serialize>(path: Option<&Path>, value: &T) -> Result<(), Failure> {
    if let Some(path) = path {
        let text = serde_json::to_string_pretty(value).map_err(Error::from)?;
        fs::write(path, text + "\n")
            .map_err(Error::from)
            .stage("report")?;
    }
    Ok(())
}

fn emit(out: &mut dyn Write, text: &str) -> Result<(), Failure> {
    out.write_all(text.as_bytes())
        .map_err(|e| Failure::Pipeline(e.into()))
}

fn dispatch(command: Command, stdout: &mut dyn Write) -> Result<(), Failure> {
    match command {
        Command::GenData { common, dir } => {
            let cfg = common.resolve()?;
            let (source, target) = load_or_generate(&cfg).stage("data")?;
            let stats = shift_statistics(&source, &target);
            let all = source.concat(target);
            write_dataset(&all, &dir).stage("data")?;
            let mut table = format!("wrote {} images to {}\n", all.len(), dir.display());
            for domain in [Domain::Source, Domain::Target] {
                for label in [Label::NoDefect, Label::Defect] {
                    let n = all.select(domain, label).len();
                    table += &format!("  {:<7} {:<9} {n:>5}\n", domain.as_str(), label.as_str());
                }
            }
            if let Some(s) = &stats {
                table += &format!(
                    "  domain gap {:.4}, class gap {:.4}\n",
                    s.domain_gap, s.class_gap
                );
            }
            emit(stdout, &table)?;
            write_json(
                common.out.as_deref(),
                &serde_json::json!({
                    "images": all.len(),
                    "directory": dir,
                    "seed": cfg.seed,
                    "shift": stats,
                }),
            )
        }
        Command::Train {
            common,
            data,
            checkpoint,
        } => {
            let mut cfg = common.resolve()?;
            cfg.data = DataSource::Directory(data);
            let prepared = PreparedData::prepare(&cfg)?;
            let (enc, tr) = (cfg.resolved_encoder(), cfg.resolved_train());
            let (model, report) = train(&prepared.pools, &enc, &tr).stage("train")?;
            model.save_checkpoint(&checkpoint).stage("checkpoint")?;
            let mut table = format!(
                "trained mode {} for {} epochs in {:.1} s\n  epoch  mean loss\n",
                cfg.mode,
                report.loss_history.len(),
                report.wall_time_s
            );
            for (i, l) in report.loss_history.iter().enumerate() {
                table += &format!("  {:>5}  {l:.6}\n", i + 1);
            }
            emit(stdout, &table)?;
            write_json(common.out.as_deref(), &report.to_file(&enc, &tr))
        }
        Command::Eval {
            common,
            refs,
            data,
            checkpoint,
        } => {
            let start = Instant::now();
            let mut cfg = common.resolve()?;
            refs.apply(&mut cfg);
            cfg.data = DataSource::Directory(data);
            let model = EncoderModel::load_checkpoint(&checkpoint).stage("checkpoint")?;
            cfg.encoder = model.config().clone();
            let prepared = PreparedData::prepare(&cfg)?;
            let (counts, bank) = evaluate(&model, &prepared, &cfg, &cfg.inference)?;
            finish(
                &cfg,
                counts,
                bank,
                refs.bank.as_deref(),
                start,
                &common,
                stdout,
            )
        }
        Command::Experiment {
            common,
            refs,
            data,
            checkpoint,
        } => {
            let mut cfg = common.resolve()?;
            refs.apply(&mut cfg);
            if let Some(dir) = data {
                cfg.data = DataSource::Directory(dir);
            }
            let run = run_experiment_full(&cfg)?;
            if let Some(path) = &checkpoint {
                run.model.save_checkpoint(path).stage("checkpoint")?;
            }
            if let Some(path) = &refs.bank {
                run.bank.save(path).stage("bank")?;
            }
            emit(stdout, &run.report.to_table())?;
            write_json(common.out.as_deref(), &run.report)
        }
        Command::Suite {
            common,
            seeds,
            modes,
        } => {
            let cfg = common.resolve()?;
            let report = run_suite(&cfg, &seeds, &modes)?;
            emit(stdout, &report.to_table())?;
            write_json(common.out.as_deref(), &report)
        }
    }
}

fn finish(
    cfg: &ExperimentConfig,
    counts: crate::classifier::ConfusionMatrix,
    bank: ReferenceBank,
    bank_path: Option<&Path>,
    start: Instant,
    common: &Common,
    stdout: &mut dyn Write,
) -> Result<(), Failure> {
    if let Some(path) = bank_path {
        bank.save(path).stage("bank")?;
    }
    let report = ExperimentReport::new(cfg, counts, start.elapsed().as_secs_f64());
    emit(stdout, &report.to_table())?;
    write_json(common.out.as_deref(), &report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_args(args: &[&str]) -> (i32, String, String) {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let code = run(
            std::iter::once("cdtl").chain(args.iter().copied()),
            &mut out,
            &mut err,
        );
        (
            code,
            String::from_utf8(out).unwrap(),
            String::from_utf8(err).unwrap(),
        )
    }

    #[test]
    fn unknown_flag_is_usage_error() {
        let (code, _, err) = run_args(&["experiment", "--bogus"]);
        assert_eq!(code, EXIT_USAGE);
        assert!(err.contains("--bogus"));
    }

    #[test]
    fn missing_config_is_usage_error() {
        let (code, _, err) = run_args(&["experiment", "--config", "/nonexistent/cfg.json"]);
        assert_eq!(code, EXIT_USAGE);
        assert!(err.contains("cannot read config file"));
    }

    #[test]
    fn help_exits_zero() {
        let (code, out, _) = run_args(&["--help"]);
        assert_eq!(code, EXIT_OK);
        for sub in ["gen-data", "train", "eval", "experiment", "suite"] {
            assert!(out.contains(sub), "help lacks {sub}");
        }
    }

    #[test]
    fn pipeline_error_exits_two() {
        let (code, _, err) = run_args(&[
            "train",
            "--data",
            "/nonexistent",
            "--checkpoint",
            "/tmp/x.ckpt",
        ]);
        assert_eq!(code, EXIT_PIPELINE);
        assert!(err.contains("data"));
    }
}
