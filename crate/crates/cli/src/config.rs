//! Experiment configuration: a TOML file validated before any work starts.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use xling::align::AlignMethod;
use xling::bilm::LmConfig;
use xling::parser::{Decoder, ParserConfig};
use xling::translate::{RetrievalMode, DEFAULT_K};

use crate::Invalid;

/// Data files of one language. Every field is optional; commands complain
/// about the ones they need.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LanguagePaths {
    /// Tokenized text, one sentence per line.
    pub corpus: Option<PathBuf>,
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub test: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlignSettings {
    pub method: AlignMethod,
    /// `source target` pairs used to fit maps.
    pub dictionary_train: Option<PathBuf>,
    /// `source target` pairs used by `translate-eval`.
    pub dictionary_test: Option<PathBuf>,
    pub mode: RetrievalMode,
    pub k: usize,
    pub restrict_to_dictionary: bool,
}

impl Default for AlignSettings {
    fn default() -> Self {
        AlignSettings {
            method: AlignMethod::Procrustes,
            dictionary_train: None,
            dictionary_test: None,
            mode: RetrievalMode::Csls,
            k: DEFAULT_K,
            restrict_to_dictionary: false,
        }
    }
}

/// The low-resource sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSettings {
    pub target: String,
    /// High-resource language paired with every target (English in the
    /// usual setup).
    pub hub: Option<String>,
    pub related: Option<String>,
    #[serde(default = "default_sweep")]
    pub sweep: Vec<usize>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Source treebanks are capped to this many trees.
    pub source_size: Option<usize>,
    /// Language model for the target-only condition.
    pub mono_lm: Option<PathBuf>,
    /// Polyglot model over target and hub.
    pub hub_lm: Option<PathBuf>,
    /// Polyglot model over target and related language.
    pub related_lm: Option<PathBuf>,
    #[serde(default)]
    pub decoder: Decoder,
    /// Also write per-condition means and standard deviations.
    #[serde(default)]
    pub plot_data: bool,
}

fn default_sweep() -> Vec<usize> {
    vec![0, 100, 500, 1000]
}

fn default_seeds() -> Vec<u64> {
    vec![1]
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Directory for outputs whose path is not given on the command line.
    pub out: Option<PathBuf>,
    pub languages: BTreeMap<String, LanguagePaths>,
    pub lm: LmConfig,
    pub parser: ParserConfig,
    pub align: AlignSettings,
    pub simulate: Option<SimulateSettings>,
}

impl Config {
    /// Reads, resolves relative paths against the file's directory and
    /// validates.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Invalid::new(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: Config = toml::from_str(&text)
            .map_err(|e| Invalid::new(format!("config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve(base);
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = self.out.as_mut() {
            fix(p);
        }
        for l in self.languages.values_mut() {
            for p in [&mut l.corpus, &mut l.train, &mut l.dev, &mut l.test]
                .into_iter()
                .flatten()
            {
                fix(p);
            }
        }
        for p in [
            &mut self.align.dictionary_train,
            &mut self.align.dictionary_test,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
        if let Some(s) = self.simulate.as_mut() {
            for p in [&mut s.mono_lm, &mut s.hub_lm, &mut s.related_lm]
                .into_iter()
                .flatten()
            {
                fix(p);
            }
        }
    }

    /// Schema-level checks: value ranges and existence of input files.
    pub fn validate(&self) -> anyhow::Result<()> {
        self.lm
            .validate()
            .map_err(|e| Invalid::new(format!("[lm] {e}")))?;
        self.parser
            .validate()
            .map_err(|e| Invalid::new(format!("[parser] {e}")))?;
        if self.align.k == 0 {
            return Err(Invalid::new("[align] k must be at least 1").into());
        }
        for (lang, paths) in &self.languages {
            for (field, p) in [
                ("corpus", &paths.corpus),
                ("train", &paths.train),
                ("dev", &paths.dev),
                ("test", &paths.test),
            ] {
                if let Some(p) = p {
                    require_file(p, &format!("languages.{lang}.{field}"))?;
                }
            }
        }
        for (field, p) in [
            ("align.dictionary_train", &self.align.dictionary_train),
            ("align.dictionary_test", &self.align.dictionary_test),
        ] {
            if let Some(p) = p {
                require_file(p, field)?;
            }
        }
        if let Some(s) = &self.simulate {
            self.validate_simulate(s)?;
        }
        Ok(())
    }

    fn validate_simulate(&self, s: &SimulateSettings) -> anyhow::Result<()> {
        if s.sweep.is_empty() || s.seeds.is_empty() {
            return Err(Invalid::new("[simulate] sweep and seeds must be nonempty").into());
        }
        let lang = |name: &str, field: &str| -> anyhow::Result<&LanguagePaths> {
            self.languages.get(name).ok_or_else(|| {
                Invalid::new(format!(
                    "[simulate] {field} `{name}` has no [languages.{name}] entry"
                ))
                .into()
            })
        };
        let target = lang(&s.target, "target")?;
        if target.test.is_none() {
            return Err(Invalid::new(format!(
                "[simulate] target `{}` needs a test treebank",
                s.target
            ))
            .into());
        }
        let max = s.sweep.iter().copied().max().unwrap_or(0);
        if max > 0 && target.train.is_none() {
            return Err(Invalid::new(format!(
                "[simulate] target `{}` needs a train treebank",
                s.target
            ))
            .into());
        }
        let mut conditions = 0;
        if s.mono_lm.is_some() {
            conditions += 1;
        }
        for (name, model, what) in [
            (&s.hub, &s.hub_lm, "hub"),
            (&s.related, &s.related_lm, "related"),
        ] {
            match (name, model) {
                (Some(name), Some(_)) => {
                    let l = lang(name, what)?;
                    if l.train.is_none() {
                        return Err(Invalid::new(format!(
                            "[simulate] {what} `{name}` needs a train treebank"
                        ))
                        .into());
                    }
                    if s.sweep.contains(&0) && l.dev.is_none() {
                        return Err(Invalid::new(format!(
                            "[simulate] |D_tau| = 0 needs a dev treebank for {what} `{name}`"
                        ))
                        .into());
                    }
                    conditions += 1;
                }
                (Some(_), None) => {
                    return Err(
                        Invalid::new(format!("[simulate] {what} given without {what}_lm")).into(),
                    )
                }
                (None, Some(_)) => {
                    return Err(
                        Invalid::new(format!("[simulate] {what}_lm given without {what}")).into(),
                    )
                }
                (None, None) => {}
            }
        }
        if conditions == 0 {
            return Err(Invalid::new(
                "[simulate] no condition configured (mono_lm, hub_lm or related_lm)",
            )
            .into());
        }
        for (field, p) in [
            ("mono_lm", &s.mono_lm),
            ("hub_lm", &s.hub_lm),
            ("related_lm", &s.related_lm),
        ] {
            if let Some(p) = p {
                require_file(p, &format!("simulate.{field}"))?;
            }
        }
        Ok(())
    }

    pub fn language(&self, name: &str) -> anyhow::Result<&LanguagePaths> {
        self.languages
            .get(name)
            .ok_or_else(|| Invalid::new(format!("language `{name}` is not configured")).into())
    }

    /// Output directory, `.` when unset.
    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("."))
    }

    /// Short content hash of the resolved configuration plus `extra`
    /// (typically the command's own arguments).
    pub fn hash(&self, extra: &str) -> String {
        let mut h = Sha256::new();
        h.update(
            serde_json::to_string(self)
                .expect("config serializes")
                .as_bytes(),
        );
        h.update(b"\n");
        h.update(extra.as_bytes());
        h.finalize()
            .iter()
            .take(8)
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

pub fn require_file(p: &Path, what: &str) -> anyhow::Result<()> {
    if !p.is_file() {
        return Err(Invalid::new(format!("{what}: no such file {}", p.display())).into());
    }
    Ok(())
}
