use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use actchange::cli::{
    cmd_baseline, cmd_eval, cmd_gen_synth, cmd_geometry, cmd_train, cmd_validate, cmd_variance, format_variance,
    BaselineKind, DataPaths, Report, RunConfig,
};
use actchange::eval::Protocol;
use actchange::synth::SynthSpec;
use actchange::train::LossMode;

/// Adverb recognition from video features with action-change regression targets.
#[derive(Parser)]
#[command(name = "actchange", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus and its text embeddings.
    GenSynth {
        /// JSON synthetic spec; omitted fields take defaults.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Overrides the spec's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Replace existing files in --out.
        #[arg(long)]
        force: bool,
    },
    /// Train a model; writes checkpoints, train_log.csv and evals.csv.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        overrides: TrainArgs,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score the test split with a checkpoint; writes scores.csv and report.json.
    Eval {
        /// Checkpoint file written by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        /// Use the ground-truth verb as the query, or take the max over all verbs.
        #[arg(long, value_enum, default_value = "with-labels")]
        protocol: ProtocolArg,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the priors or retrieval baseline on the test split.
    Baseline {
        #[command(flatten)]
        data: DataArgs,
        /// Co-occurrence priors or pooled-embedding retrieval.
        #[arg(long, value_enum)]
        kind: KindArg,
        /// Use the ground-truth verb as the query, or take the max over all verbs.
        #[arg(long, value_enum, default_value = "with-labels")]
        protocol: ProtocolArg,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Export d and delta for every verb-adverb pair with summary statistics.
    Geometry {
        /// Vocabulary JSON.
        #[arg(long)]
        vocab: PathBuf,
        /// Text embeddings JSONL.
        #[arg(long)]
        embeddings: PathBuf,
        /// Mark pairs occurring in this manifest as present.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Load a corpus and its embeddings with full validation and print a summary.
    Validate {
        #[command(flatten)]
        data: DataArgs,
    },
    /// Train once per seed and report each metric as mean ± std.
    Variance {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        overrides: TrainArgs,
        /// Comma-separated seeds.
        #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
        seeds: Vec<u64>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct DataArgs {
    /// Directory holding vocab.json, manifest.jsonl and features.bin.
    #[arg(long)]
    corpus: PathBuf,
    /// Text embeddings; defaults to <corpus>/text_embeddings.jsonl.
    #[arg(long)]
    embeddings: Option<PathBuf>,
}

impl DataArgs {
    fn paths(&self) -> DataPaths {
        DataPaths::new(&self.corpus, self.embeddings.as_deref())
    }
}

/// Flags take precedence over --config, which takes precedence over defaults.
#[derive(Args)]
struct TrainArgs {
    /// JSON file with optional `model` and `train` sections.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Training loss.
    #[arg(long, value_enum)]
    loss: Option<LossArg>,
    /// Regress onto targets that ignore antonyms.
    #[arg(long)]
    no_antonyms: bool,
    /// Seed for initialization, dropout and batch order.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of training epochs; 0 writes the initial checkpoint only.
    #[arg(long)]
    epochs: Option<usize>,
    /// Evaluate on the test split every N epochs.
    #[arg(long)]
    eval_every: Option<usize>,
    /// Adam learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Videos per batch.
    #[arg(long)]
    batch_size: Option<usize>,
    /// Skip label-free evaluation during training.
    #[arg(long)]
    no_label_free_eval: bool,
}

impl TrainArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::read(p)?,
            None => RunConfig::default(),
        };
        let t = &mut cfg.train;
        if let Some(l) = self.loss {
            t.loss = l.into();
        }
        if self.no_antonyms {
            t.antonym_mode = false;
        }
        if self.no_label_free_eval {
            t.label_free_eval = false;
        }
        t.seed = self.seed.unwrap_or(t.seed);
        t.epochs = self.epochs.unwrap_or(t.epochs);
        t.eval_every = self.eval_every.unwrap_or(t.eval_every);
        t.lr = self.lr.unwrap_or(t.lr);
        t.batch_size = self.batch_size.unwrap_or(t.batch_size);
        Ok(cfg)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum LossArg {
    Cls,
    Reg,
    RegFixed,
}

impl From<LossArg> for LossMode {
    fn from(l: LossArg) -> Self {
        match l {
            LossArg::Cls => LossMode::Cls,
            LossArg::Reg => LossMode::Reg,
            LossArg::RegFixed => LossMode::RegFixed,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ProtocolArg {
    WithLabels,
    LabelFree,
}

impl From<ProtocolArg> for Protocol {
    fn from(p: ProtocolArg) -> Self {
        match p {
            ProtocolArg::WithLabels => Protocol::WithLabels,
            ProtocolArg::LabelFree => Protocol::LabelFree,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Priors,
    Retrieval,
}

fn print_report(r: &Report) {
    let m = &r.metrics;
    print!(
        "{} ({}): mAP W {:.4}  mAP M {:.4}",
        r.source, m.protocol, m.map_w, m.map_m
    );
    match m.acc_a {
        Some(a) => println!("  Acc-A {a:.4}"),
        None => println!(),
    }
}

fn read_spec(path: Option<&Path>) -> Result<SynthSpec> {
    match path {
        Some(p) => {
            let bytes = std::fs::read(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", p.display()))
        }
        None => Ok(SynthSpec::default()),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenSynth { spec, out, seed, force } => {
            let mut spec = read_spec(spec.as_deref())?;
            spec.seed = seed.unwrap_or(spec.seed);
            let m = cmd_gen_synth(&spec, &out, force)?;
            println!("wrote {} files to {}", m.outputs.len() + 1, out.display());
        }
        Command::Train { data, overrides, out } => {
            let cfg = overrides.resolve()?;
            let t = cmd_train(&data.paths(), &cfg, &out)?;
            if let Some(last) = t.fit.loss_log.last() {
                println!("epoch {} step {} loss {:.6}", last.epoch, last.step, last.loss);
            }
            for b in t.fit.tracker.entries() {
                println!("best {} {} = {:.4} at epoch {}", b.protocol, b.metric, b.value, b.epoch);
            }
            println!("outputs in {}", out.display());
        }
        Command::Eval {
            checkpoint,
            data,
            protocol,
            out,
        } => {
            print_report(&cmd_eval(&checkpoint, &data.paths(), protocol.into(), &out)?);
        }
        Command::Baseline {
            data,
            kind,
            protocol,
            out,
        } => {
            let kind = match kind {
                KindArg::Priors => BaselineKind::Priors,
                KindArg::Retrieval => BaselineKind::Retrieval,
            };
            print_report(&cmd_baseline(&data.paths(), kind, protocol.into(), &out)?);
        }
        Command::Geometry {
            vocab,
            embeddings,
            manifest,
            out,
        } => {
            let s = cmd_geometry(&vocab, &embeddings, manifest.as_deref(), &out)?;
            println!("{}", serde_json::to_string_pretty(&s)?);
        }
        Command::Validate { data } => {
            println!("{}", serde_json::to_string_pretty(&cmd_validate(&data.paths())?)?);
        }
        Command::Variance {
            data,
            overrides,
            seeds,
            out,
        } => {
            let cfg = overrides.resolve()?;
            let v = cmd_variance(&data.paths(), &cfg, &seeds, &out)?;
            print!("{}", format_variance(&v.report));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
