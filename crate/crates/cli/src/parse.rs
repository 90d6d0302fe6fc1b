use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::Args;
use xling::align::AlignmentMap;
use xling::corpus::{write_conllu, Split, Treebank};
use xling::parser::{evaluate, train_parser, Decoder, Embedder, ParserModel, TrainingData};

use crate::config::{require_file, Config};
use crate::io::{self, LangPath};
use crate::lm::load_lm;
use crate::Invalid;

/// Where the parser's word representations come from.
#[derive(Args, Debug)]
pub struct EmbedArgs {
    /// Language-model checkpoint providing contextual layers.
    #[arg(long, conflicts_with = "vectors")]
    pub lm: Option<PathBuf>,
    /// `LANG=PATH`: alignment map applied to sentences of LANG (repeatable).
    #[arg(long = "map", requires = "lm")]
    pub maps: Vec<String>,
    /// Frozen word vectors: `PATH` for every language or `LANG=PATH`
    /// (repeatable).
    #[arg(long)]
    pub vectors: Vec<String>,
}

impl EmbedArgs {
    pub fn build(&self) -> anyhow::Result<Embedder> {
        if let Some(lm) = &self.lm {
            let lm = load_lm(lm)?;
            let mut maps = Vec::with_capacity(self.maps.len());
            for spec in &self.maps {
                let (lang, path) = spec.split_once('=').ok_or_else(|| {
                    Invalid::new(format!("--map expects LANG=PATH, got `{spec}`"))
                })?;
                let path = Path::new(path);
                require_file(path, "map")?;
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading {}", path.display()))?;
                let mut map = AlignmentMap::from_text(&text)
                    .with_context(|| format!("in {}", path.display()))?;
                map.source_language = lang.to_string();
                maps.push(map);
            }
            return Embedder::retrofit(lm, maps).map_err(|e| Invalid::new(e.to_string()).into());
        }
        if self.vectors.is_empty() {
            return Err(Invalid::new("give --lm or --vectors").into());
        }
        let mut shared = None;
        let mut per_language = BTreeMap::new();
        for spec in &self.vectors {
            match spec.split_once('=') {
                Some((lang, path)) => {
                    let path = Path::new(path);
                    require_file(path, "vectors")?;
                    per_language.insert(lang.to_string(), io::read_vector_file(path)?);
                }
                None => {
                    let path = Path::new(spec);
                    require_file(path, "vectors")?;
                    if shared.replace(io::read_vector_file(path)?).is_some() {
                        return Err(Invalid::new("more than one shared --vectors file").into());
                    }
                }
            }
        }
        let dims: Vec<usize> = shared
            .iter()
            .chain(per_language.values())
            .map(|t| t.dim())
            .collect();
        if dims.windows(2).any(|w| w[0] != w[1]) {
            return Err(Invalid::new("vector files of different widths").into());
        }
        Ok(Embedder::Vectors {
            shared,
            per_language,
        })
    }
}

#[derive(Args, Debug)]
pub struct TrainParserArgs {
    #[command(flatten)]
    pub embed: EmbedArgs,
    /// Source treebank, `LANG` (train file from the config) or `LANG=PATH`
    /// (repeatable, at least one).
    #[arg(long, required = true)]
    pub source: Vec<String>,
    /// Target treebank; omitted for zero-target training.
    #[arg(long)]
    pub target: Option<String>,
    /// Dev treebank for model selection, `LANG` or `LANG=PATH`.
    #[arg(long)]
    pub dev: Option<String>,
    /// Overrides `parser.epochs`.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Model path [default: <out>/parser.json].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn load(spec: &str, cfg: &Config, field: &str, split: Split) -> anyhow::Result<Treebank> {
    let lp = LangPath::parse(spec, cfg, field)?;
    io::read_treebank(&lp.path, &lp.language, split)
}

pub fn train(cfg: &Config, args: TrainParserArgs) -> anyhow::Result<()> {
    let mut config = cfg.parser.clone();
    if let Some(e) = args.epochs {
        config.epochs = e;
    }
    config.validate().map_err(|e| Invalid::new(e.to_string()))?;
    let sources = args
        .source
        .iter()
        .map(|s| load(s, cfg, "train", Split::Train))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let target = args
        .target
        .as_deref()
        .map(|s| load(s, cfg, "train", Split::Train))
        .transpose()?;
    let dev = args
        .dev
        .as_deref()
        .map(|s| load(s, cfg, "dev", Split::Dev))
        .transpose()?;
    let embedder = args.embed.build()?;
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| cfg.out_dir().join("parser.json"));

    let data = TrainingData {
        sources: sources.iter().collect(),
        target: target.as_ref(),
        dev: dev.as_ref(),
    };
    let (model, report) = train_parser(&data, &embedder, &config, |e| match e.dev {
        Some(d) => eprintln!(
            "epoch {:>3}  loss {:.4}  dev UAS {:.2} LAS {:.2}",
            e.epoch, e.mean_loss, d.uas, d.las
        ),
        None => eprintln!("epoch {:>3}  loss {:.4}", e.epoch, e.mean_loss),
    })
    .context("parser training")?;
    io::write_file(&out, &model.to_json()?)?;

    let mut body = String::from("epoch\tmean_loss\tdev_uas\tdev_las\n");
    for e in &report.epochs {
        let (u, l) = e.dev.map_or((String::from("-"), String::from("-")), |d| {
            (format!("{:.2}", d.uas), format!("{:.2}", d.las))
        });
        let _ = writeln!(body, "{}\t{:.6}\t{u}\t{l}", e.epoch, e.mean_loss);
    }
    let mut log = out.clone().into_os_string();
    log.push(".epochs.tsv");
    io::write_file(
        Path::new(&log),
        &io::with_provenance(&body, &cfg.hash(&format!("{args:?}"))),
    )?;
    eprintln!(
        "best epoch {}{} -> {}",
        report.best_epoch,
        if report.stopped_early {
            " (stopped early)"
        } else {
            ""
        },
        out.display()
    );
    Ok(())
}

#[derive(Args, Debug)]
pub struct ParseArgs {
    #[command(flatten)]
    pub embed: EmbedArgs,
    /// Trained parser.
    #[arg(long)]
    pub model: PathBuf,
    /// Input treebank, `LANG` (test file from the config) or `LANG=PATH`.
    #[arg(long)]
    pub input: String,
    #[arg(long, default_value = "mst")]
    pub decoder: Decoder,
    /// CoNLL-U output; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn parse(cfg: &Config, args: ParseArgs) -> anyhow::Result<()> {
    require_file(&args.model, "parser model")?;
    let text = std::fs::read_to_string(&args.model)
        .with_context(|| format!("reading {}", args.model.display()))?;
    let model =
        ParserModel::from_json(&text).with_context(|| format!("in {}", args.model.display()))?;
    let input = load(&args.input, cfg, "test", Split::Test)?;
    let embedder = args.embed.build()?;
    if embedder.fingerprint() != model.embedder_fingerprint {
        return Err(
            Invalid::new("the parser was trained with different word representations").into(),
        );
    }
    let pred = model
        .parse_treebank(&input, &embedder, args.decoder)
        .context("parsing")?;
    let out = write_conllu(&pred);
    match &args.out {
        Some(p) => io::write_file(p, &out)?,
        None => print!("{out}"),
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct EvalParseArgs {
    /// Predicted CoNLL-U.
    #[arg(long)]
    pub pred: PathBuf,
    /// Gold CoNLL-U.
    #[arg(long)]
    pub gold: PathBuf,
}

pub fn eval(_cfg: &Config, args: EvalParseArgs) -> anyhow::Result<()> {
    require_file(&args.pred, "predictions")?;
    require_file(&args.gold, "gold treebank")?;
    let pred = io::read_treebank(&args.pred, "eval", Split::Test)?;
    let gold = io::read_treebank(&args.gold, "eval", Split::Test)?;
    let s = evaluate(&pred, &gold).context("evaluation")?;
    println!("UAS {:.2} LAS {:.2}", s.uas, s.las);
    Ok(())
}
