//! The `ssa` command line.
//!
//! Every command resolves its settings (default, then `--config` file, then
//! `--seed`, then each `--set key=value`) and writes `config.txt` with the
//! resolved values next to its outputs.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use thiserror::Error;

use crate::config::{parse_override, ConfigError, RunSettings};
use crate::data::{generate, load_dataset, save_dataset, Benchmark, DataError, DomainDataset};
use crate::eval::{analyze, embeddings_csv, evaluate, EvalError};
use crate::experiment::{sweep, ExperimentError};
use crate::losses::LossError;
use crate::model::{read_checkpoint, write_checkpoint, Model, ModelError};
use crate::numcore::NumError;
use crate::train::{accuracy, adapt_ssa, train_baseline, TrainError};

pub const SOURCE_FILE: &str = "source.ssad";
pub const TARGET_FILE: &str = "target.ssad";
pub const TARGET_EVAL_FILE: &str = "target_eval.ssad";
pub const CONFIG_FILE: &str = "config.txt";
pub const CHECKPOINT_FILE: &str = "model.ssam";

#[derive(Debug, Parser)]
#[command(name = "ssa", version, about = "Self-similarity domain adaptation for embedding models")]
pub struct Cli {
    /// Config file of `key = value` lines.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Override one config key; repeatable, applied after the file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Shorthand for `--set seed=N` (training and adaptation seed).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic source and target datasets.
    Gen {
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the baseline on the labeled source set.
    TrainBaseline {
        /// Directory written by `gen`.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Adapt a baseline checkpoint to the unlabeled target set.
    Adapt {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run verification, identification and embedding statistics.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// A labeled dataset file.
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute embedding statistics only.
    Analyze {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Adapt and evaluate once per ratio in `sweep.rhos`.
    Sweep {
        #[arg(long)]
        data: PathBuf,
        /// Baseline checkpoint; trained from the source set when omitted.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("usage error: {0}")]
    Usage(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Train(e) => e.into(),
            ExperimentError::Eval(e) => e.into(),
            ExperimentError::NoRho => CliError::Usage("sweep.rhos is empty".into()),
        }
    }
}

fn model_code(e: &ModelError) -> u8 {
    match e {
        ModelError::Num(NumError::Degenerate(_) | NumError::Domain(_)) => 4,
        ModelError::Checkpoint(_) | ModelError::Format { .. } | ModelError::Shape(_) => 3,
        ModelError::Io(_) => 1,
        _ => 5,
    }
}

impl CliError {
    /// 0 success, 1 I/O, 2 config or usage, 3 data or file format,
    /// 4 numerical failure, 5 protocol error.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => 2,
            CliError::Data(DataError::Io(_)) | CliError::Io { .. } => 1,
            CliError::Data(DataError::Spec { .. }) => 2,
            CliError::Data(_) => 3,
            CliError::Model(e) => model_code(e),
            CliError::Train(TrainError::Config(_)) => 2,
            CliError::Train(TrainError::NonFinite { .. }) => 4,
            CliError::Train(TrainError::Data(DataError::Io(_))) => 1,
            CliError::Train(TrainError::Data(DataError::Spec { .. })) => 2,
            CliError::Train(TrainError::Data(_)) => 3,
            CliError::Train(TrainError::Loss(LossError::Config(_))) => 2,
            CliError::Train(TrainError::Loss(LossError::Model(e))) => model_code(e),
            CliError::Train(TrainError::Loss(LossError::Contract(_))) => 5,
            CliError::Eval(EvalError::Model(e)) => model_code(e),
            CliError::Eval(_) => 5,
        }
    }
}

/// Parses `std::env::args`, runs the command and reports errors on stderr.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|source| CliError::Io { path: path.into(), source })
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|source| CliError::Io { path: path.into(), source })
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path).map_err(|source| CliError::Io { path: path.into(), source })
}

pub fn settings(cli: &Cli) -> Result<RunSettings, CliError> {
    let file = cli.config.as_deref().map(read_text).transpose()?;
    let mut overrides = Vec::new();
    if let Some(seed) = cli.seed {
        overrides.push(("seed".to_string(), seed.to_string()));
    }
    for o in &cli.overrides {
        overrides.push(parse_override(o)?);
    }
    Ok(RunSettings::resolve(file.as_deref(), &overrides)?)
}

fn prepare_out(out: &Path, s: &RunSettings) -> Result<(), CliError> {
    create_dir(out)?;
    write_text(&out.join(CONFIG_FILE), &s.snapshot())
}

fn load_benchmark(dir: &Path) -> Result<Benchmark, CliError> {
    let source = load_dataset(&dir.join(SOURCE_FILE))?;
    let target = load_dataset(&dir.join(TARGET_FILE))?;
    let target_labels = load_dataset(&dir.join(TARGET_EVAL_FILE))?
        .labels
        .ok_or_else(|| DataError::Shape(format!("{TARGET_EVAL_FILE} has no labels")))?;
    if target_labels.len() != target.len() {
        return Err(DataError::Shape(format!(
            "{TARGET_EVAL_FILE} has {} labels for {} target samples",
            target_labels.len(),
            target.len()
        ))
        .into());
    }
    Ok(Benchmark { source, target, target_labels })
}

fn label_range(d: &DomainDataset) -> String {
    match d.labels.as_deref() {
        Some(l) if !l.is_empty() => {
            format!("{}..={}", l.iter().min().expect("non-empty"), l.iter().max().expect("non-empty"))
        }
        _ => "unlabeled".into(),
    }
}

fn manifest(bench: &Benchmark) -> String {
    let mut out = String::new();
    let eval = bench.target_eval();
    for (file, d) in [(SOURCE_FILE, &bench.source), (TARGET_FILE, &bench.target), (TARGET_EVAL_FILE, &eval)] {
        let _ = writeln!(
            out,
            "{file}\tdomain={}\tsamples={}\tside={}\tlabels={}",
            d.domain,
            d.len(),
            d.side,
            label_range(d)
        );
    }
    out
}

fn write_model(out: &Path, model: &Model) -> Result<(), CliError> {
    write_checkpoint(&out.join(CHECKPOINT_FILE), model)?;
    Ok(())
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let s = settings(cli)?;
    match &cli.command {
        Command::Gen { out } => {
            let bench = generate(&s.data)?;
            prepare_out(out, &s)?;
            save_dataset(&out.join(SOURCE_FILE), &bench.source)?;
            save_dataset(&out.join(TARGET_FILE), &bench.target)?;
            save_dataset(&out.join(TARGET_EVAL_FILE), &bench.target_eval())?;
            write_text(&out.join("manifest.txt"), &manifest(&bench))?;
        }
        Command::TrainBaseline { data, out } => {
            let source = load_dataset(&data.join(SOURCE_FILE))?;
            prepare_out(out, &s)?;
            let (mut model, log) = train_baseline(&source, &s.baseline)?;
            write_text(&out.join("train_log.txt"), &log.to_text())?;
            let acc = accuracy(&mut model, &source)?;
            write_text(&out.join("summary.txt"), &format!("train_accuracy: {acc}\n"))?;
            write_model(out, &model)?;
        }
        Command::Adapt { data, checkpoint, out } => {
            let source = load_dataset(&data.join(SOURCE_FILE))?;
            let target = load_dataset(&data.join(TARGET_FILE))?;
            let baseline = read_checkpoint(checkpoint, s.classifier())?;
            prepare_out(out, &s)?;
            let (model, log) = adapt_ssa(&baseline, &source, &target, &s.adapt)?;
            write_text(&out.join("adapt_log.txt"), &log.to_text())?;
            write_model(out, &model)?;
        }
        Command::Eval { checkpoint, dataset, out } => {
            let mut model = read_checkpoint(checkpoint, s.classifier())?;
            let data = load_dataset(dataset)?;
            prepare_out(out, &s)?;
            let report = evaluate(&mut model, &data, &s.eval)?;
            write_text(&out.join("report.txt"), &report.to_text())?;
            write_text(&out.join("roc.csv"), &report.roc_csv())?;
            let z = model.embed_all(&data.to_tensor())?;
            write_text(&out.join("embeddings.csv"), &embeddings_csv(&z, data.labels.as_deref()))?;
        }
        Command::Analyze { checkpoint, dataset, out } => {
            let mut model = read_checkpoint(checkpoint, s.classifier())?;
            let data = load_dataset(dataset)?;
            check_dims(&model, &data)?;
            prepare_out(out, &s)?;
            let stats = analyze(&mut model, &data)?;
            write_text(&out.join("stats.txt"), &stats.to_text())?;
        }
        Command::Sweep { data, checkpoint, out } => {
            if s.rhos.is_empty() {
                return Err(CliError::Usage("sweep.rhos is empty".into()));
            }
            let bench = load_benchmark(data)?;
            prepare_out(out, &s)?;
            let baseline = match checkpoint {
                Some(path) => read_checkpoint(path, s.classifier())?,
                None => {
                    let (model, log) = train_baseline(&bench.source, &s.baseline)?;
                    let dir = out.join("baseline");
                    create_dir(&dir)?;
                    write_text(&dir.join("train_log.txt"), &log.to_text())?;
                    write_model(&dir, &model)?;
                    model
                }
            };
            let report = sweep(&baseline, &bench, &s.adapt, &s.rhos, &s.eval)?;
            for row in &report.rows {
                let (Some(rho), Some(model)) = (row.rho, &row.model) else { continue };
                let dir = out.join(format!("rho={rho}"));
                create_dir(&dir)?;
                write_model(&dir, model)?;
                if let Ok(r) = &row.outcome {
                    write_text(&dir.join("report.txt"), &r.to_text())?;
                    write_text(&dir.join("roc.csv"), &r.roc_csv())?;
                }
            }
            write_text(&out.join("sweep.txt"), &report.to_table())?;
            print!("{}", report.to_table());
        }
    }
    Ok(())
}

fn check_dims(model: &Model, data: &DomainDataset) -> Result<(), CliError> {
    if model.input_dim() != data.dim() {
        return Err(EvalError::Protocol(format!(
            "model takes {} inputs, dataset images are {}x{} = {}",
            model.input_dim(),
            data.side,
            data.side,
            data.dim()
        ))
        .into());
    }
    Ok(())
}
