//! Word-representation inputs for the parser. The parser sees only these
//! vectors: no part-of-speech or other token features.

use std::collections::BTreeMap;

use crate::align::AlignmentMap;
use crate::bilm::BiLm;
use crate::corpus::{Sentence, VectorTable};
use crate::error::{Error, Result};
use crate::fingerprint::Fnv64;
use crate::numerics::Matrix;

/// Sentences embedded per language-model pass.
const EMBED_BATCH: usize = 32;

/// Precomputed layers for one sentence: one `n × dim` matrix per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct SentenceInput {
    pub layers: Vec<Matrix>,
}

impl SentenceInput {
    pub fn len(&self) -> usize {
        self.layers.first().map_or(0, Matrix::rows)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Source of frozen word representations.
#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
pub enum Embedder {
    /// Contextual layers of a language model. Sentences in a language with
    /// an entry in `maps` are mapped into the hub space first.
    LanguageModel {
        lm: BiLm,
        maps: BTreeMap<String, AlignmentMap>,
    },
    /// Static vectors; a language-specific table overrides the shared one.
    /// Unknown words get the zero vector.
    Vectors {
        shared: Option<VectorTable>,
        per_language: BTreeMap<String, VectorTable>,
    },
}

impl Embedder {
    pub fn language_model(lm: BiLm) -> Self {
        Embedder::LanguageModel {
            lm,
            maps: BTreeMap::new(),
        }
    }

    /// Language model plus per-language alignment maps.
    pub fn retrofit(lm: BiLm, maps: impl IntoIterator<Item = AlignmentMap>) -> Result<Self> {
        let dim = lm.embedding_dim();
        let mut out = BTreeMap::new();
        for m in maps {
            if m.dim() != dim {
                return Err(Error::shape(format!(
                    "map for `{}` has width {} but the model emits {dim}",
                    m.source_language,
                    m.dim()
                )));
            }
            out.insert(m.source_language.clone(), m);
        }
        Ok(Embedder::LanguageModel { lm, maps: out })
    }

    pub fn vectors(table: VectorTable) -> Self {
        Embedder::Vectors {
            shared: Some(table),
            per_language: BTreeMap::new(),
        }
    }

    pub fn per_language_vectors(
        tables: impl IntoIterator<Item = (String, VectorTable)>,
    ) -> Result<Self> {
        let per_language: BTreeMap<String, VectorTable> = tables.into_iter().collect();
        let mut dims = per_language.values().map(VectorTable::dim);
        if let Some(d) = dims.next() {
            if dims.any(|x| x != d) {
                return Err(Error::shape("vector tables of different widths"));
            }
        } else {
            return Err(Error::invalid("no vector tables given"));
        }
        Ok(Embedder::Vectors {
            shared: None,
            per_language,
        })
    }

    pub fn num_layers(&self) -> usize {
        match self {
            Embedder::LanguageModel { .. } => 3,
            Embedder::Vectors { .. } => 1,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Embedder::LanguageModel { lm, .. } => lm.embedding_dim(),
            Embedder::Vectors {
                shared,
                per_language,
            } => shared
                .as_ref()
                .or_else(|| per_language.values().next())
                .map_or(0, VectorTable::dim),
        }
    }

    /// Content fingerprint, recorded in parser checkpoints.
    pub fn fingerprint(&self) -> String {
        let mut h = Fnv64::default();
        match self {
            Embedder::LanguageModel { lm, maps } => {
                h.write(b"lm");
                h.write(lm.fingerprint().as_bytes());
                for m in maps.values() {
                    h.write(m.to_text().as_bytes());
                }
            }
            Embedder::Vectors {
                shared,
                per_language,
            } => {
                h.write(b"vectors");
                let tables = shared.iter().map(|t| ("", t));
                for (lang, t) in tables.chain(per_language.iter().map(|(l, t)| (l.as_str(), t))) {
                    h.write(lang.as_bytes());
                    for w in t.words() {
                        h.write(w.as_bytes());
                    }
                    h.write_f64s(t.vectors().as_slice());
                }
            }
        }
        h.hex()
    }

    /// Embeds every sentence.
    pub fn embed_all(&self, sentences: &[&Sentence]) -> Result<Vec<SentenceInput>> {
        if let Some(i) = sentences.iter().position(|s| s.is_empty()) {
            return Err(Error::invalid(format!("sentence {} is empty", i + 1)));
        }
        match self {
            Embedder::LanguageModel { lm, maps } => {
                let mut out = Vec::with_capacity(sentences.len());
                for chunk in sentences.chunks(EMBED_BATCH) {
                    let toks: Vec<Vec<&str>> = chunk
                        .iter()
                        .map(|s| s.tokens.iter().map(String::as_str).collect())
                        .collect();
                    for (s, embs) in chunk.iter().zip(lm.forward_batch(&toks)?) {
                        let map = maps.get(&s.language);
                        let mut rows: [Vec<f64>; 3] = Default::default();
                        for e in embs {
                            let e = match map {
                                Some(m) => m.map_embedding(&e)?,
                                None => e,
                            };
                            for j in 0..3 {
                                rows[j].extend_from_slice(&e.layers[j]);
                            }
                        }
                        let n = s.len();
                        let layers = rows
                            .into_iter()
                            .map(|r| Matrix::from_vec(n, r.len() / n, r))
                            .collect::<Result<Vec<_>>>()?;
                        out.push(SentenceInput { layers });
                    }
                }
                Ok(out)
            }
            Embedder::Vectors {
                shared,
                per_language,
            } => sentences
                .iter()
                .map(|s| {
                    let table = per_language
                        .get(&s.language)
                        .or(shared.as_ref())
                        .ok_or_else(|| {
                            Error::invalid(format!("no word vectors for language `{}`", s.language))
                        })?;
                    let mut m = Matrix::zeros(s.len(), table.dim());
                    for (i, w) in s.tokens.iter().enumerate() {
                        if let Some(v) = table.get(w) {
                            m.row_mut(i).copy_from_slice(v);
                        }
                    }
                    Ok(SentenceInput { layers: vec![m] })
                })
                .collect(),
        }
    }
}
