use std::path::PathBuf;

use anyhow::Context;
use clap::Args;
use xling::align::{fit_alignment, AlignMethod, AlignmentMap};
use xling::corpus::Split;
use xling::translate::{probe_layers, probe_tsv, ProbeOptions, RetrievalMode};

use crate::config::{require_file, Config};
use crate::io;
use crate::Invalid;

#[derive(Args, Debug)]
pub struct AlignArgs {
    /// Source table prefix (files `<prefix>.<j>.vec`).
    #[arg(long)]
    pub source: PathBuf,
    /// Target table prefix.
    #[arg(long)]
    pub target: PathBuf,
    /// Training pairs [default: align.dictionary_train].
    #[arg(long)]
    pub dictionary: Option<PathBuf>,
    /// procrustes | least-squares [default: align.method].
    #[arg(long)]
    pub method: Option<AlignMethod>,
    #[arg(long, default_value = "src")]
    pub source_language: String,
    #[arg(long, default_value = "tgt")]
    pub target_language: String,
    /// Map file [default: <out>/map-<source_language>-<target_language>.txt].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn dictionary_path(
    given: Option<PathBuf>,
    configured: &Option<PathBuf>,
    key: &str,
) -> anyhow::Result<PathBuf> {
    let p = given
        .or_else(|| configured.clone())
        .ok_or_else(|| Invalid::new(format!("no dictionary given and {key} is not configured")))?;
    require_file(&p, "dictionary")?;
    Ok(p)
}

pub fn align(cfg: &Config, args: AlignArgs) -> anyhow::Result<()> {
    let dict_path = dictionary_path(
        args.dictionary.clone(),
        &cfg.align.dictionary_train,
        "align.dictionary_train",
    )?;
    let dict =
        io::read_dict(&dict_path, Split::Train).map_err(|e| Invalid::new(format!("{e:#}")))?;
    if dict.is_empty() {
        return Err(Invalid::new(format!("dictionary {} is empty", dict_path.display())).into());
    }
    let src = io::read_layered(&args.source)?;
    let tgt = io::read_layered(&args.target)?;
    let method = args.method.unwrap_or(cfg.align.method);
    let map = fit_alignment(
        &src,
        &tgt,
        &dict,
        method,
        &args.source_language,
        &args.target_language,
    )
    .context("fitting the alignment")?;
    let out = args.out.unwrap_or_else(|| {
        cfg.out_dir().join(format!(
            "map-{}-{}.txt",
            args.source_language, args.target_language
        ))
    });
    io::write_file(&out, &map.to_text())?;
    eprintln!(
        "{method:?}: {} pairs used, {} skipped, orthogonality error {:.2e} -> {}",
        map.used_pairs,
        map.skipped_pairs,
        map.orthogonality_error(),
        out.display()
    );
    Ok(())
}

#[derive(Args, Debug)]
pub struct TranslateEvalArgs {
    /// Source table prefix.
    #[arg(long)]
    pub source: PathBuf,
    /// Target table prefix.
    #[arg(long)]
    pub target: PathBuf,
    /// Map applied to the source table first.
    #[arg(long)]
    pub map: Option<PathBuf>,
    /// Test pairs [default: align.dictionary_test].
    #[arg(long)]
    pub dictionary: Option<PathBuf>,
    /// csls | cosine [default: align.mode].
    #[arg(long)]
    pub mode: Option<RetrievalMode>,
    /// Neighborhood size of the hubness terms [default: align.k].
    #[arg(long)]
    pub k: Option<usize>,
    /// Only dictionary targets are candidates.
    #[arg(long)]
    pub restrict_to_dictionary: bool,
    /// TSV report; printed to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn translate_eval(cfg: &Config, args: TranslateEvalArgs) -> anyhow::Result<()> {
    let dict_path = dictionary_path(
        args.dictionary.clone(),
        &cfg.align.dictionary_test,
        "align.dictionary_test",
    )?;
    let dict =
        io::read_dict(&dict_path, Split::Test).map_err(|e| Invalid::new(format!("{e:#}")))?;
    if dict.is_empty() {
        return Err(
            Invalid::new(format!("test dictionary {} is empty", dict_path.display())).into(),
        );
    }
    let k = args.k.unwrap_or(cfg.align.k);
    if k == 0 {
        return Err(Invalid::new("k must be at least 1").into());
    }
    let map = match &args.map {
        Some(p) => {
            require_file(p, "map")?;
            let text =
                std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Some(AlignmentMap::from_text(&text).with_context(|| format!("in {}", p.display()))?)
        }
        None => None,
    };
    let src = io::read_layered(&args.source)?;
    let tgt = io::read_layered(&args.target)?;
    let options = ProbeOptions {
        mode: args.mode.unwrap_or(cfg.align.mode),
        k,
        restrict_to_dictionary: args.restrict_to_dictionary || cfg.align.restrict_to_dictionary,
    };
    let rows =
        probe_layers(&src, &tgt, map.as_ref(), &dict, options).context("word translation")?;
    let report = io::with_provenance(&probe_tsv(&rows), &cfg.hash(&format!("{args:?}")));
    match &args.out {
        Some(p) => io::write_file(p, &report)?,
        None => print!("{report}"),
    }
    Ok(())
}
