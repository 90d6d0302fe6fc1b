use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::Args;
use xling::align::compute_anchors;
use xling::bilm::{train_lm, BiLm, LanguageCorpus};
use xling::decontext::{decontextualize_vocab, DecontextOptions};

use crate::config::{require_file, Config};
use crate::io::{self, LangPath};
use crate::Invalid;

#[derive(Args, Debug)]
pub struct TrainLmArgs {
    /// Comma-separated languages; each is `LANG` (corpus from the config) or
    /// `LANG=PATH`. One language trains a monolingual model, several a
    /// polyglot one.
    #[arg(long, value_delimiter = ',', required = true)]
    pub languages: Vec<String>,
    /// Checkpoint path [default: <out>/lm-<languages>.json].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Continue training from this checkpoint.
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Overrides `lm.epochs`.
    #[arg(long)]
    pub epochs: Option<usize>,
}

pub fn load_lm(path: &Path) -> anyhow::Result<BiLm> {
    require_file(path, "language model")?;
    BiLm::load(path).with_context(|| format!("loading {}", path.display()))
}

pub fn train(cfg: &Config, args: TrainLmArgs) -> anyhow::Result<()> {
    let specs = args
        .languages
        .iter()
        .map(|s| LangPath::parse(s, cfg, "corpus"))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let mut names: Vec<&str> = specs.iter().map(|s| s.language.as_str()).collect();
    names.sort_unstable();
    if names.windows(2).any(|w| w[0] == w[1]) {
        return Err(Invalid::new("a language is listed twice").into());
    }
    let init = args.init.as_deref().map(load_lm).transpose()?;
    let mut lm_config = cfg.lm.clone();
    if let Some(e) = args.epochs {
        lm_config.epochs = e;
    }
    lm_config
        .validate()
        .map_err(|e| Invalid::new(e.to_string()))?;
    let out = args.out.clone().unwrap_or_else(|| {
        let langs: Vec<&str> = specs.iter().map(|s| s.language.as_str()).collect();
        cfg.out_dir().join(format!("lm-{}.json", langs.join("-")))
    });

    let corpora = specs
        .iter()
        .map(|s| {
            Ok(LanguageCorpus::new(
                s.language.clone(),
                io::read_corpus(&s.path)?,
            ))
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    for c in &corpora {
        eprintln!(
            "{}: {} sentences, {} tokens",
            c.language,
            c.sentences.len(),
            c.num_tokens()
        );
    }
    let (lm, report) = train_lm(&corpora, &lm_config, init, |e, _| {
        eprintln!(
            "epoch {:>3}  loss {:.4}  batches {}",
            e.epoch, e.mean_loss, e.batches
        );
        Ok(())
    })
    .context("language-model training")?;
    io::create_parent(&out)?;
    lm.save(&out)
        .with_context(|| format!("saving {}", out.display()))?;

    let mut body = String::from("epoch\tmean_loss\tbatches\n");
    let _ = writeln!(body, "0\t{:.6}\t0", report.initial_loss);
    for e in &report.epochs {
        let _ = writeln!(body, "{}\t{:.6}\t{}", e.epoch, e.mean_loss, e.batches);
    }
    let mut log = out.clone().into_os_string();
    log.push(".epochs.tsv");
    io::write_file(
        Path::new(&log),
        &io::with_provenance(&body, &cfg.hash(&format!("{args:?}"))),
    )?;
    eprintln!("wrote {}", out.display());
    Ok(())
}

#[derive(Args, Debug)]
pub struct DecontextArgs {
    /// Language-model checkpoint.
    #[arg(long)]
    pub lm: PathBuf,
    /// `LANG` or `LANG=PATH`: corpus whose word types are embedded.
    #[arg(long)]
    pub corpus: String,
    /// Minimum corpus frequency of an embedded word.
    #[arg(long, default_value_t = 3)]
    pub min_count: u64,
    /// Layer 2 reads the layer-1 output alone, without the skip connection.
    #[arg(long)]
    pub no_skip: bool,
    /// Output prefix; layer j goes to `<prefix>.<j>.vec`
    /// [default: <out>/decontext-<lang>].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn decontext(cfg: &Config, args: DecontextArgs) -> anyhow::Result<()> {
    let corpus = LangPath::parse(&args.corpus, cfg, "corpus")?;
    let lm = load_lm(&args.lm)?;
    let text = io::read_corpus(&corpus.path)?;
    let options = DecontextOptions {
        min_count: args.min_count,
        keep_skip: !args.no_skip,
    };
    let table = decontextualize_vocab(&lm, &text, options).context("decontextualization")?;
    let out = args
        .out
        .unwrap_or_else(|| cfg.out_dir().join(format!("decontext-{}", corpus.language)));
    io::write_layered(&out, &table.table)?;
    eprintln!(
        "{} words -> {}.{{0,1,2}}.vec",
        table.table.len(),
        out.display()
    );
    Ok(())
}

#[derive(Args, Debug)]
pub struct AnchorsArgs {
    #[arg(long)]
    pub lm: PathBuf,
    /// `LANG` or `LANG=PATH`.
    #[arg(long)]
    pub corpus: String,
    /// Output prefix; also writes `<prefix>.counts.tsv`
    /// [default: <out>/anchors-<lang>].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn anchors(cfg: &Config, args: AnchorsArgs) -> anyhow::Result<()> {
    let corpus = LangPath::parse(&args.corpus, cfg, "corpus")?;
    let lm = load_lm(&args.lm)?;
    let text = io::read_corpus(&corpus.path)?;
    let anchors = compute_anchors(&lm, &text).context("anchor computation")?;
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| cfg.out_dir().join(format!("anchors-{}", corpus.language)));
    io::write_layered(&out, &anchors.table)?;
    let mut body = String::from("word\tcount\n");
    for (w, c) in anchors.table.words().iter().zip(&anchors.counts) {
        let _ = writeln!(body, "{w}\t{c}");
    }
    let mut counts = out.clone().into_os_string();
    counts.push(".counts.tsv");
    io::write_file(
        Path::new(&counts),
        &io::with_provenance(&body, &cfg.hash(&format!("{args:?}"))),
    )?;
    eprintln!(
        "{} words -> {}.{{0,1,2}}.vec",
        anchors.table.len(),
        out.display()
    );
    Ok(())
}
