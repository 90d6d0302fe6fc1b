//! File helpers shared by the subcommands.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use xling::bilm::LayeredTable;
use xling::corpus::{
    read_conllu, read_dictionary, read_tokenized, read_vectors, write_vectors, BilingualDictionary,
    Direction, Split, Treebank, VectorTable,
};

use crate::config::{require_file, Config};
use crate::Invalid;

pub fn read_bytes(path: &Path) -> anyhow::Result<Vec<u8>> {
    fs::read(path).with_context(|| format!("reading {}", path.display()))
}

pub fn create_parent(path: &Path) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

pub fn write_file(path: &Path, contents: &str) -> anyhow::Result<()> {
    create_parent(path)?;
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

pub fn read_corpus(path: &Path) -> anyhow::Result<Vec<Vec<String>>> {
    read_tokenized(&read_bytes(path)?).with_context(|| format!("in {}", path.display()))
}

pub fn read_treebank(path: &Path, language: &str, split: Split) -> anyhow::Result<Treebank> {
    read_conllu(&read_bytes(path)?, language, split)
        .with_context(|| format!("in {}", path.display()))
}

pub fn read_dict(path: &Path, split: Split) -> anyhow::Result<BilingualDictionary> {
    read_dictionary(&read_bytes(path)?, Direction::Forward, split)
        .with_context(|| format!("in {}", path.display()))
}

pub fn read_vector_file(path: &Path) -> anyhow::Result<VectorTable> {
    read_vectors(&read_bytes(path)?).with_context(|| format!("in {}", path.display()))
}

/// Per-layer file of a layered table stored under `prefix`.
pub fn layer_path(prefix: &Path, layer: usize) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(format!(".{layer}.vec"));
    PathBuf::from(s)
}

/// Writes one word-vector text file per layer.
pub fn write_layered(prefix: &Path, table: &LayeredTable) -> anyhow::Result<()> {
    for j in 0..3 {
        write_file(
            &layer_path(prefix, j),
            &write_vectors(&table.to_vector_table(j)?, None),
        )?;
    }
    Ok(())
}

pub fn read_layered(prefix: &Path) -> anyhow::Result<LayeredTable> {
    let mut tables = Vec::with_capacity(3);
    for j in 0..3 {
        let p = layer_path(prefix, j);
        require_file(&p, &format!("layer {j} of table {}", prefix.display()))?;
        tables.push(read_vector_file(&p)?);
    }
    let tables: [VectorTable; 3] = tables.try_into().expect("three layers");
    LayeredTable::from_vector_tables(tables).with_context(|| format!("table {}", prefix.display()))
}

/// `LANG=PATH`, or a bare `LANG` resolved through the config.
#[derive(Debug, Clone)]
pub struct LangPath {
    pub language: String,
    pub path: PathBuf,
}

impl LangPath {
    pub fn parse(spec: &str, cfg: &Config, field: &str) -> anyhow::Result<Self> {
        let (language, path) = match spec.split_once('=') {
            Some((l, p)) => (l.to_string(), PathBuf::from(p)),
            None => {
                let paths = cfg.language(spec)?;
                let p = match field {
                    "corpus" => &paths.corpus,
                    "train" => &paths.train,
                    "dev" => &paths.dev,
                    _ => &paths.test,
                };
                let p = p.clone().ok_or_else(|| {
                    Invalid::new(format!("languages.{spec}.{field} is not configured"))
                })?;
                (spec.to_string(), p)
            }
        };
        if language.is_empty() {
            return Err(Invalid::new(format!("`{spec}`: empty language name")).into());
        }
        require_file(&path, &format!("{field} for `{language}`"))?;
        Ok(LangPath { language, path })
    }
}

/// Tab-separated report with a provenance comment above the header. Rows
/// are flushed as they are written.
pub struct Tsv {
    out: BufWriter<File>,
    path: PathBuf,
}

impl Tsv {
    pub fn create(path: &Path, header: &str, config_hash: &str) -> anyhow::Result<Self> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        let mut tsv = Tsv {
            out: BufWriter::new(file),
            path: path.to_path_buf(),
        };
        tsv.line(&format!("# config-hash: {config_hash}"))?;
        tsv.line(header)?;
        Ok(tsv)
    }

    pub fn line(&mut self, line: &str) -> anyhow::Result<()> {
        writeln!(self.out, "{line}")
            .and_then(|_| self.out.flush())
            .with_context(|| format!("writing {}", self.path.display()))
    }
}

/// TSV body (header plus rows, newline-terminated) with the provenance line
/// prepended.
pub fn with_provenance(body: &str, config_hash: &str) -> String {
    format!("# config-hash: {config_hash}\n{body}")
}
