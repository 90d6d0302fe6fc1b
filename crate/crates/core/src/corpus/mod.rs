//! Treebanks, raw LM text, bilingual dictionaries, word-vector files,
//! vocabularies and the low-resource sampling protocols.

mod conllu;
mod dictionary;
mod sampling;
mod vectors;
mod vocab;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use conllu::{read_conllu, read_conllu_lenient, write_conllu, ConlluRead};
pub use dictionary::{read_dictionary, BilingualDictionary, Direction};
pub use sampling::{
    cap, dev_size, downsample, stratified_batches, Batch, BatchItem, Side, SimulationConfig,
};
pub use vectors::{read_vectors, write_vectors, VectorTable};
pub use vocab::{build_vocab, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(Error::invalid(format!("unknown split `{other}`"))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        })
    }
}

/// A dependency-annotated sentence. `heads[i]` is the 1-based head of token
/// `i + 1`, with 0 denoting the synthetic root.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub tokens: Vec<String>,
    pub heads: Vec<usize>,
    pub labels: Vec<String>,
    pub language: String,
}

impl Sentence {
    pub fn new(
        tokens: Vec<String>,
        heads: Vec<usize>,
        labels: Vec<String>,
        language: impl Into<String>,
    ) -> Result<Self> {
        let s = Sentence {
            tokens,
            heads,
            labels,
            language: language.into(),
        };
        s.validate().map_err(Error::data)?;
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Checks lengths and that the heads form an arborescence rooted at 0.
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.tokens.len() != self.heads.len() || self.tokens.len() != self.labels.len() {
            return Err(format!(
                "{} tokens, {} heads, {} labels",
                self.tokens.len(),
                self.heads.len(),
                self.labels.len()
            ));
        }
        check_tree(&self.heads)
    }
}

/// Verifies that `heads` (1-based, 0 = root) form a tree rooted at 0, by a
/// depth-first traversal from the root.
pub fn check_tree(heads: &[usize]) -> std::result::Result<(), String> {
    let n = heads.len();
    let mut children = vec![Vec::new(); n + 1];
    for (i, &h) in heads.iter().enumerate() {
        if h > n {
            return Err(format!("head {} of token {} is out of range", h, i + 1));
        }
        if h == i + 1 {
            return Err(format!("cycle: token {} is its own head", i + 1));
        }
        children[h].push(i + 1);
    }
    let mut seen = vec![false; n + 1];
    let mut stack = vec![0];
    seen[0] = true;
    let mut reached = 0;
    while let Some(v) = stack.pop() {
        for &c in &children[v] {
            if !seen[c] {
                seen[c] = true;
                reached += 1;
                stack.push(c);
            }
        }
    }
    if reached != n {
        let stray = (1..=n).find(|&i| !seen[i]).unwrap_or(0);
        return Err(format!("cycle through token {stray}"));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Treebank {
    pub language: String,
    pub split: Split,
    pub sentences: Vec<Sentence>,
}

impl Treebank {
    pub fn new(language: impl Into<String>, split: Split) -> Self {
        Treebank {
            language: language.into(),
            split,
            sentences: Vec::new(),
        }
    }

    pub fn from_sentences(
        language: impl Into<String>,
        split: Split,
        sentences: Vec<Sentence>,
    ) -> Result<Self> {
        let language = language.into();
        if let Some(s) = sentences.iter().find(|s| s.language != language) {
            return Err(Error::data(format!(
                "sentence in `{}` placed in a `{}` treebank",
                s.language, language
            )));
        }
        Ok(Treebank {
            language,
            split,
            sentences,
        })
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn num_tokens(&self) -> usize {
        self.sentences.iter().map(Sentence::len).sum()
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.sentences
            .iter()
            .flat_map(|s| s.labels.iter().map(String::as_str))
    }
}

/// Whitespace-tokenized raw text, one sentence per nonblank line.
pub fn read_tokenized(input: &[u8]) -> Result<Vec<Vec<String>>> {
    let text = std::str::from_utf8(input).map_err(|_| Error::Utf8)?;
    Ok(text
        .lines()
        .map(|l| l.split_whitespace().map(str::to_string).collect::<Vec<_>>())
        .filter(|toks| !toks.is_empty())
        .collect())
}
