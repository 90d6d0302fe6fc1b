#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

mod config;
mod io;
mod lm;
mod parse;
mod probe;
mod simulate;
mod synth;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::Config;

/// Bad input detected before any work started. Exits with status 1; every
/// other failure exits with status 2.
#[derive(Debug)]
pub struct Invalid(String);

impl Invalid {
    pub fn new(msg: impl Into<String>) -> Self {
        Invalid(msg.into())
    }
}

impl fmt::Display for Invalid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

#[derive(Parser, Debug)]
#[command(
    name = "xling",
    version,
    about = "Crosslingual contextual representations: language models, alignment, word translation and parsing"
)]
struct Cli {
    /// TOML experiment configuration.
    #[arg(short, long, global = true, env = "XLING_CONFIG")]
    config: Option<PathBuf>,

    /// Overrides the language-model and parser seeds.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a monolingual or polyglot character-aware BiLM.
    TrainLm(lm::TrainLmArgs),
    /// Context-free word vectors from a language model.
    Decontext(lm::DecontextArgs),
    /// Per-word mean contextual vectors over a corpus.
    Anchors(lm::AnchorsArgs),
    /// Fit per-layer maps from a source table into a target table.
    Align(probe::AlignArgs),
    /// Per-layer word-translation precision at 1.
    TranslateEval(probe::TranslateEvalArgs),
    /// Train a biaffine dependency parser.
    TrainParser(parse::TrainParserArgs),
    /// Parse a CoNLL-U file with a trained parser.
    Parse(parse::ParseArgs),
    /// Attachment scores of predicted against gold CoNLL-U.
    EvalParse(parse::EvalParseArgs),
    /// Low-resource sweep over target treebank sizes.
    Simulate(simulate::SimulateArgs),
    /// Write a synthetic language pair with treebanks, dictionaries and a config.
    Synth(synth::SynthArgs),
}

fn load_config(cli: &Cli) -> anyhow::Result<Config> {
    let mut cfg = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.lm.seed = seed;
        cfg.parser.seed = seed;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = load_config(&cli)?;
    match cli.command {
        Command::TrainLm(a) => lm::train(&cfg, a),
        Command::Decontext(a) => lm::decontext(&cfg, a),
        Command::Anchors(a) => lm::anchors(&cfg, a),
        Command::Align(a) => probe::align(&cfg, a),
        Command::TranslateEval(a) => probe::translate_eval(&cfg, a),
        Command::TrainParser(a) => parse::train(&cfg, a),
        Command::Parse(a) => parse::parse(&cfg, a),
        Command::EvalParse(a) => parse::eval(&cfg, a),
        Command::Simulate(a) => simulate::run(&cfg, a),
        Command::Synth(a) => synth::run(&cfg, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if e.downcast_ref::<Invalid>().is_some() {
                1
            } else {
                2
            })
        }
    }
}
