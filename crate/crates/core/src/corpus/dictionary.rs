use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::Split;

/// Which column of a dictionary file is the source side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    /// First column source, second column target.
    Forward,
    /// Second column source, first column target.
    Reverse,
}

/// Word-translation pairs. A source word may have several targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BilingualDictionary {
    pairs: Vec<(String, String)>,
    pub split: Split,
}

impl BilingualDictionary {
    pub fn new(pairs: impl IntoIterator<Item = (String, String)>, split: Split) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut kept = Vec::new();
        for (s, t) in pairs {
            if s.is_empty() || t.is_empty() {
                return Err(Error::data("dictionary entries must be nonempty"));
            }
            if seen.insert((s.clone(), t.clone())) {
                kept.push((s, t));
            }
        }
        Ok(BilingualDictionary { pairs: kept, split })
    }

    pub fn pairs(&self) -> &[(String, String)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Gold targets per source word, sources in first-appearance order.
    pub fn grouped(&self) -> Vec<(&str, Vec<&str>)> {
        let mut order: Vec<&str> = Vec::new();
        let mut map: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for (s, t) in &self.pairs {
            let entry = map.entry(s.as_str()).or_insert_with(|| {
                order.push(s.as_str());
                Vec::new()
            });
            entry.push(t.as_str());
        }
        order
            .into_iter()
            .map(|s| (s, map.remove(s).unwrap_or_default()))
            .collect()
    }
}

/// Parses `source target` lines (space or tab separated). Blank lines are
/// ignored; any other line without exactly two fields is rejected.
pub fn read_dictionary(
    input: &[u8],
    direction: Direction,
    split: Split,
) -> Result<BilingualDictionary> {
    let text = std::str::from_utf8(input).map_err(|_| Error::Utf8)?;
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 2 {
            return Err(Error::format(
                i + 1,
                format!("expected 2 fields, found {}", fields.len()),
            ));
        }
        let (a, b) = (fields[0].to_string(), fields[1].to_string());
        pairs.push(match direction {
            Direction::Forward => (a, b),
            Direction::Reverse => (b, a),
        });
    }
    BilingualDictionary::new(pairs, split)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_pairs() {
        let d = read_dictionary(b"chien dog\nchat cat", Direction::Forward, Split::Train).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.pairs()[1], ("chat".to_string(), "cat".to_string()));
    }

    #[test]
    fn duplicates_collapse_and_multi_targets_kept() {
        let d = read_dictionary(
            b"chien dog\nchien dog\nchien hound\n",
            Direction::Forward,
            Split::Test,
        )
        .unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.grouped(), vec![("chien", vec!["dog", "hound"])]);
    }

    #[test]
    fn three_fields_rejected_with_line() {
        let err = read_dictionary(b"x y\na b c\n", Direction::Forward, Split::Train).unwrap_err();
        assert!(matches!(err, Error::Format { line: 2, .. }));
    }

    #[test]
    fn reverse_and_tabs() {
        let d = read_dictionary(b"dog\tchien\n", Direction::Reverse, Split::Train).unwrap();
        assert_eq!(d.pairs()[0], ("chien".to_string(), "dog".to_string()));
    }
}
