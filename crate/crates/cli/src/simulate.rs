use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::Args;
use xling::corpus::{cap, dev_size, downsample, SimulationConfig, Split, Treebank};
use xling::parser::{evaluate, train_parser, Embedder, ParserConfig, TrainingData};

use crate::config::Config;
use crate::io::{self, Tsv};
use crate::lm::load_lm;
use crate::Invalid;

pub const HEADER: &str = "condition\tD_tau\tseed\tUAS\tLAS";

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Results TSV [default: <out>/simulate.tsv].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// One parser training regime of the sweep.
struct Condition {
    name: &'static str,
    embedder: Embedder,
    /// Extra source-language training and dev trees; `None` for the
    /// target-only condition.
    source: Option<(Treebank, Option<Treebank>)>,
}

fn read(cfg: &Config, lang: &str, split: Split) -> anyhow::Result<Treebank> {
    let paths = cfg.language(lang)?;
    let p = match split {
        Split::Train => &paths.train,
        Split::Dev => &paths.dev,
        Split::Test => &paths.test,
    };
    let p = p
        .as_ref()
        .ok_or_else(|| Invalid::new(format!("languages.{lang}.{split} is not configured")))?;
    io::read_treebank(p, lang, split)
}

pub fn run(cfg: &Config, args: SimulateArgs) -> anyhow::Result<()> {
    let s = cfg
        .simulate
        .as_ref()
        .ok_or_else(|| Invalid::new("the config has no [simulate] section"))?;
    let max = s.sweep.iter().copied().max().unwrap_or(0);
    let test = read(cfg, &s.target, Split::Test)?;
    let pool = if max > 0 {
        read(cfg, &s.target, Split::Train)?
    } else {
        Treebank::new(s.target.clone(), Split::Train)
    };
    let needed = max + dev_size(max);
    if pool.len() < needed {
        return Err(Invalid::new(format!(
            "target treebank has {} trees; |D_tau| = {max} needs {needed}",
            pool.len()
        ))
        .into());
    }

    let mut sources = Vec::new();
    for (name, lang, lm) in [
        ("+hub", &s.hub, &s.hub_lm),
        ("+related", &s.related, &s.related_lm),
    ] {
        if let (Some(lang), Some(lm)) = (lang, lm) {
            let train = read(cfg, lang, Split::Train)?;
            let dev = if s.sweep.contains(&0) {
                Some(read(cfg, lang, Split::Dev)?)
            } else {
                None
            };
            sources.push((name, lm, train, dev));
        }
    }
    // Source treebanks are downsampled to the smallest one.
    let size = sources
        .iter()
        .map(|(_, _, t, _)| t.len())
        .chain(s.source_size)
        .min()
        .unwrap_or(0);

    let mut conditions = Vec::new();
    if let Some(lm) = &s.mono_lm {
        conditions.push(Condition {
            name: "mono",
            embedder: Embedder::language_model(load_lm(lm)?),
            source: None,
        });
    }
    for (name, lm, train, dev) in sources {
        conditions.push(Condition {
            name,
            embedder: Embedder::language_model(load_lm(lm)?),
            source: Some((cap(&train, size, 0), dev)),
        });
    }

    let out = args
        .out
        .clone()
        .unwrap_or_else(|| cfg.out_dir().join("simulate.tsv"));
    let hash = cfg.hash(&format!("{args:?}"));
    let mut tsv = Tsv::create(&out, HEADER, &hash)?;
    let mut results: BTreeMap<(&str, usize), Vec<(f64, f64)>> = BTreeMap::new();
    for &d in &s.sweep {
        if d == 0 && conditions.iter().any(|c| c.source.is_none()) {
            tsv.line("# skipped: mono at D_tau=0 (needs target trees)")?;
            eprintln!("skipping mono at |D_tau| = 0: it needs target trees");
        }
        for &seed in &s.seeds {
            let (train, dev) = if d > 0 {
                downsample(
                    &pool,
                    &SimulationConfig {
                        target_train_size: d,
                        seed,
                    },
                )
                .with_context(|| format!("stage downsample: |D_tau| = {d}, seed {seed}"))?
            } else {
                (
                    Treebank::new(s.target.clone(), Split::Train),
                    Treebank::new(s.target.clone(), Split::Dev),
                )
            };
            let config = ParserConfig {
                seed,
                ..cfg.parser.clone()
            };
            for c in &conditions {
                let data = match &c.source {
                    None if d == 0 => continue,
                    None => TrainingData {
                        sources: vec![&train],
                        target: None,
                        dev: Some(&dev),
                    },
                    Some((src, src_dev)) => TrainingData {
                        sources: vec![src],
                        target: (d > 0).then_some(&train),
                        dev: if d > 0 { Some(&dev) } else { src_dev.as_ref() },
                    },
                };
                let cell = format!("{} at |D_tau| = {d}, seed {seed}", c.name);
                eprintln!("training {cell}");
                let (model, _) = train_parser(&data, &c.embedder, &config, |_| {})
                    .with_context(|| format!("stage train: {cell}"))?;
                let pred = model
                    .parse_treebank(&test, &c.embedder, s.decoder)
                    .with_context(|| format!("stage parse: {cell}"))?;
                let scores =
                    evaluate(&pred, &test).with_context(|| format!("stage evaluate: {cell}"))?;
                tsv.line(&format!(
                    "{}\t{d}\t{seed}\t{:.2}\t{:.2}",
                    c.name, scores.uas, scores.las
                ))?;
                results
                    .entry((c.name, d))
                    .or_default()
                    .push((scores.uas, scores.las));
            }
        }
    }
    if s.plot_data {
        write_plot_data(&out, &results, &hash)?;
    }
    eprintln!("wrote {}", out.display());
    Ok(())
}

/// Mean and standard deviation over seeds per condition and |D_tau|.
fn write_plot_data(
    out: &Path,
    results: &BTreeMap<(&str, usize), Vec<(f64, f64)>>,
    hash: &str,
) -> anyhow::Result<()> {
    let mut body = String::from("condition\tD_tau\tseeds\tmean_UAS\tmean_LAS\tsd_LAS\n");
    for ((name, d), scores) in results {
        let n = scores.len() as f64;
        let uas = scores.iter().map(|s| s.0).sum::<f64>() / n;
        let las = scores.iter().map(|s| s.1).sum::<f64>() / n;
        let sd = (scores.iter().map(|s| (s.1 - las).powi(2)).sum::<f64>() / n).sqrt();
        let _ = writeln!(
            body,
            "{name}\t{d}\t{}\t{uas:.2}\t{las:.2}\t{sd:.2}",
            scores.len()
        );
    }
    let path = out.with_extension("plot.tsv");
    io::write_file(&path, &io::with_provenance(&body, hash))
}
