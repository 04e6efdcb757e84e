//! `laf` — run the localization pipeline stage by stage, or end to end.
//!
//! Exit codes: 0 success, 1 invalid input or configuration, 2 I/O failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use laf_core::pipeline::{
    self, load_config, RunConfig, WeightMode, CORPUS_FILE, DETECTIONS_FILE, LAF_CORPUS_FILE, REPORT_FILE,
};
use laf_core::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "laf", version, about = "Weakly-supervised temporal action localization")]
struct Cli {
    /// JSON run configuration; defaults apply to anything left out.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Global seed; overrides every stage seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic corpus.
    Synth {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Filter images and frames against each other and write LAF weights.
    Transfer {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the LSTM on the train split.
    Train {
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// laf | uniform | random30 (defaults to the config's train_mode).
        #[arg(long)]
        mode: Option<WeightMode>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Detect actions in the test split.
    Localize {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score detections with Hit@k and mAP.
    Eval {
        #[arg(long)]
        detections: Option<PathBuf>,
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Fused per-video scores written by `localize`; without them Hit@k
        /// uses the best detection score per label.
        #[arg(long)]
        scores: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// synth → transfer → train → localize → eval, all under one directory.
    Pipeline {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn required(flag: Option<PathBuf>, fallback: &Option<PathBuf>, name: &str) -> Result<PathBuf> {
    flag.or_else(|| fallback.clone())
        .ok_or_else(|| Error::Config(format!("--{name} is required (or set paths.{name} in the config)")))
}

fn print_json<T: serde::Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => load_config(path)?,
        None => RunConfig::default(),
    };
    if cli.seed.is_some() {
        cfg.seed = cli.seed;
    }
    let paths = cfg.paths.clone();
    let out_of = |out: Option<PathBuf>| required(out, &paths.out, "out");

    match cli.command {
        Command::Synth { out } => {
            let out = out_of(out)?;
            let stats = pipeline::stage_synth(&cfg, &out)?;
            print_json(&stats);
            eprintln!("wrote {}", out.join(CORPUS_FILE).display());
        }
        Command::Transfer { corpus, out } => {
            let corpus = required(corpus, &paths.corpus, "corpus")?;
            let out = out_of(out)?;
            let log = pipeline::stage_transfer(&cfg, &corpus, &out)?;
            print_json(&log);
            eprintln!("wrote {}", out.join(LAF_CORPUS_FILE).display());
        }
        Command::Train { corpus, mode, out } => {
            let corpus = required(corpus, &paths.corpus, "corpus")?;
            let out = out_of(out)?;
            let mode = mode.unwrap_or(cfg.train_mode);
            let report = pipeline::stage_train(&cfg, &corpus, mode, &out)?;
            let first = report.epoch_losses.first().copied().unwrap_or(f64::NAN);
            let last = report.epoch_losses.last().copied().unwrap_or(f64::NAN);
            println!("{} training: mean loss {first:.6} -> {last:.6}", mode.name());
            eprintln!("wrote {}", out.join(pipeline::model_file(mode)).display());
        }
        Command::Localize { model, corpus, out } => {
            let model = required(model, &paths.model, "model")?;
            let corpus = required(corpus, &paths.corpus, "corpus")?;
            let out = out_of(out)?;
            let n = pipeline::stage_localize(&cfg, &model, &corpus, &out)?;
            println!("{n} detections");
            eprintln!("wrote {}", out.join(DETECTIONS_FILE).display());
        }
        Command::Eval {
            detections,
            corpus,
            scores,
            out,
        } => {
            let detections = required(detections, &paths.detections, "detections")?;
            let corpus = required(corpus, &paths.corpus, "corpus")?;
            let out = out_of(out)?;
            let report = pipeline::stage_eval(&cfg, &detections, &corpus, scores.as_deref(), &out)?;
            print!("{}", report.to_table());
            eprintln!("wrote {}", out.join(REPORT_FILE).display());
        }
        Command::Pipeline { out } => {
            let out = out_of(out)?;
            let report = pipeline::run_pipeline(&cfg, Path::new(&out))?;
            print!("{}", report.to_table());
            eprintln!("wrote {}", out.join(REPORT_FILE).display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io() { 2 } else { 1 })
        }
    }
}
