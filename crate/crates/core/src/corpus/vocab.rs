use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

/// Word and character inventories with reserved symbols.
///
/// Word ids: `0` unknown, `1` begin-of-sentence, `2` end-of-sentence, then
/// corpus words by descending count (ties broken lexicographically).
/// Character ids: `0` unknown, `1` begin-of-word, `2` end-of-word, `3`
/// padding, then corpus characters in code-point order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    words: Vec<String>,
    counts: Vec<u64>,
    chars: Vec<char>,
    #[serde(skip)]
    word_index: HashMap<String, usize>,
    #[serde(skip)]
    char_index: HashMap<char, usize>,
}

impl Vocabulary {
    pub const UNK: usize = 0;
    pub const BOS: usize = 1;
    pub const EOS: usize = 2;
    pub const NUM_RESERVED_WORDS: usize = 3;

    pub const UNK_CHAR: usize = 0;
    pub const BOW: usize = 1;
    pub const EOW: usize = 2;
    pub const PAD_CHAR: usize = 3;
    pub const NUM_RESERVED_CHARS: usize = 4;

    const RESERVED_WORDS: [&'static str; 3] = ["<unk>", "<s>", "</s>"];

    fn from_parts(words: Vec<(String, u64)>, chars: Vec<char>) -> Self {
        let mut all_words: Vec<String> =
            Self::RESERVED_WORDS.iter().map(|s| s.to_string()).collect();
        let mut counts = vec![0; Self::NUM_RESERVED_WORDS];
        for (w, c) in words {
            all_words.push(w);
            counts.push(c);
        }
        let mut v = Vocabulary {
            words: all_words,
            counts,
            chars,
            word_index: HashMap::new(),
            char_index: HashMap::new(),
        };
        v.rebuild_index();
        v
    }

    /// Restores lookup tables after deserialization.
    pub fn rebuild_index(&mut self) {
        // Reserved word ids are looked up by constant, never by surface
        // form, so a corpus word spelled `<unk>` cannot collide with them.
        self.word_index = self
            .words
            .iter()
            .enumerate()
            .skip(Self::NUM_RESERVED_WORDS)
            .map(|(i, w)| (w.clone(), i))
            .collect();
        self.char_index = self
            .chars
            .iter()
            .enumerate()
            .map(|(i, &c)| (c, i + Self::NUM_RESERVED_CHARS))
            .collect();
    }

    pub fn num_words(&self) -> usize {
        self.words.len()
    }

    pub fn num_chars(&self) -> usize {
        self.chars.len() + Self::NUM_RESERVED_CHARS
    }

    /// Corpus words (reserved symbols excluded), in id order.
    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.words[Self::NUM_RESERVED_WORDS..]
            .iter()
            .map(String::as_str)
    }

    pub fn word(&self, id: usize) -> &str {
        &self.words[id]
    }

    pub fn word_id(&self, word: &str) -> usize {
        self.word_index.get(word).copied().unwrap_or(Self::UNK)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.word_index.contains_key(word)
    }

    pub fn count(&self, word: &str) -> u64 {
        self.word_index
            .get(word)
            .map(|&i| self.counts[i])
            .unwrap_or(0)
    }

    pub fn char_id(&self, c: char) -> usize {
        self.char_index.get(&c).copied().unwrap_or(Self::UNK_CHAR)
    }

    /// `[BOW, chars…, EOW]`.
    pub fn encode_chars(&self, word: &str) -> Vec<usize> {
        let mut ids = Vec::with_capacity(word.chars().count() + 2);
        ids.push(Self::BOW);
        ids.extend(word.chars().map(|c| self.char_id(c)));
        ids.push(Self::EOW);
        ids
    }
}

/// Builds a vocabulary from a token stream, keeping words seen at least
/// `min_count` times. Characters of every token are kept regardless of
/// frequency.
pub fn build_vocab<'a>(tokens: impl IntoIterator<Item = &'a str>, min_count: u64) -> Vocabulary {
    let min_count = min_count.max(1);
    let mut counts: BTreeMap<&str, u64> = BTreeMap::new();
    let mut chars = BTreeSet::new();
    for t in tokens {
        *counts.entry(t).or_default() += 1;
    }
    for w in counts.keys() {
        chars.extend(w.chars());
    }
    let mut words: Vec<(String, u64)> = counts
        .into_iter()
        .filter(|&(_, c)| c >= min_count)
        .map(|(w, c)| (w.to_string(), c))
        .collect();
    words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Vocabulary::from_parts(words, chars.into_iter().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn min_count_filter() {
        let v = build_vocab(["a", "a", "b"], 2);
        assert_eq!(v.words().collect::<Vec<_>>(), vec!["a"]);
        let v = build_vocab(["a", "a", "b"], 1);
        assert_eq!(v.words().collect::<Vec<_>>(), vec!["a", "b"]);
        assert_eq!(v.count("a"), 2);
    }

    #[test]
    fn empty_stream_has_reserved_only() {
        let v = build_vocab(std::iter::empty(), 1);
        assert_eq!(v.num_words(), Vocabulary::NUM_RESERVED_WORDS);
        assert_eq!(v.num_chars(), Vocabulary::NUM_RESERVED_CHARS);
    }

    #[test]
    fn reserved_ids_do_not_collide() {
        let v = build_vocab(["<unk>", "<s>", "x"], 1);
        assert!(v.word_id("<unk>") >= Vocabulary::NUM_RESERVED_WORDS);
        assert!(v.word_id("<s>") >= Vocabulary::NUM_RESERVED_WORDS);
        assert_eq!(v.word_id("never-seen"), Vocabulary::UNK);
        assert!(v.char_id('x') >= Vocabulary::NUM_RESERVED_CHARS);
    }

    #[test]
    fn stable_ids() {
        let a = build_vocab(["z", "y", "y", "x"], 1);
        let b = build_vocab(["x", "y", "z", "y"], 1);
        assert_eq!(a, b);
        assert_eq!(a.words().collect::<Vec<_>>(), vec!["y", "x", "z"]);
    }

    #[test]
    fn serde_round_trip_restores_index() {
        let v = build_vocab(["a", "b"], 1);
        let json = serde_json::to_string(&v).unwrap();
        let mut back: Vocabulary = serde_json::from_str(&json).unwrap();
        back.rebuild_index();
        assert_eq!(back.word_id("b"), v.word_id("b"));
        assert_eq!(back.encode_chars("ab"), v.encode_chars("ab"));
    }
}
