//! Context-free word vectors obtained by running every LSTM cell of a
//! language model with its recurrent inputs removed.

use std::collections::BTreeMap;

use crate::bilm::{BiLm, LayeredEmbedding, LayeredTable};
use crate::error::{Error, Result};

/// Options for [`decontextualize_vocab`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecontextOptions {
    pub min_count: u64,
    /// Mirror the model's layer-2 skip connection (the default). When false,
    /// layer 2 reads the layer-1 output alone.
    pub keep_skip: bool,
}

impl Default for DecontextOptions {
    fn default() -> Self {
        DecontextOptions {
            min_count: 3,
            keep_skip: true,
        }
    }
}

/// Decontextualized vectors of one word, wired exactly like the
/// contextual network.
pub fn decontextualize(lm: &BiLm, word: &str) -> LayeredEmbedding {
    lm.zero_recurrence(word, true)
}

pub fn decontextualize_with(lm: &BiLm, word: &str, keep_skip: bool) -> LayeredEmbedding {
    lm.zero_recurrence(word, keep_skip)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecontextTable {
    pub table: LayeredTable,
    pub lm_fingerprint: String,
    pub min_count: u64,
    pub keep_skip: bool,
}

/// Decontextualizes every word type seen at least `min_count` times in
/// `corpus`. Words are listed in lexicographic order.
pub fn decontextualize_vocab(
    lm: &BiLm,
    corpus: &[Vec<String>],
    options: DecontextOptions,
) -> Result<DecontextTable> {
    if corpus.iter().all(Vec::is_empty) {
        return Err(Error::invalid(
            "decontextualization needs a nonempty corpus",
        ));
    }
    let mut counts: BTreeMap<&str, u64> = BTreeMap::new();
    for w in corpus.iter().flatten() {
        *counts.entry(w.as_str()).or_default() += 1;
    }
    let words: Vec<String> = counts
        .into_iter()
        .filter(|&(_, c)| c >= options.min_count)
        .map(|(w, _)| w.to_string())
        .collect();
    if words.is_empty() {
        return Err(Error::invalid(format!(
            "no word occurs at least {} times",
            options.min_count
        )));
    }
    let embeddings: Vec<LayeredEmbedding> = words
        .iter()
        .map(|w| decontextualize_with(lm, w, options.keep_skip))
        .collect();
    Ok(DecontextTable {
        table: LayeredTable::new(words, &embeddings)?,
        lm_fingerprint: lm.fingerprint(),
        min_count: options.min_count,
        keep_skip: options.keep_skip,
    })
}
