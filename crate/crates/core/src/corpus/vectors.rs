use std::collections::HashMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Word → vector table in the word2vec text layout.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorTable {
    words: Vec<String>,
    vectors: Matrix,
    index: HashMap<String, usize>,
}

impl VectorTable {
    pub fn new(words: Vec<String>, vectors: Matrix) -> Result<Self> {
        if words.len() != vectors.rows() {
            return Err(Error::shape(format!(
                "{} words but {} vectors",
                words.len(),
                vectors.rows()
            )));
        }
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if w.is_empty() || w.chars().any(char::is_whitespace) {
                return Err(Error::data(format!("invalid vector-table word `{w}`")));
            }
            if index.insert(w.clone(), i).is_some() {
                return Err(Error::data(format!("duplicate vector-table word `{w}`")));
            }
        }
        Ok(VectorTable {
            words,
            vectors,
            index,
        })
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn vectors(&self) -> &Matrix {
        &self.vectors
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.index.get(word).map(|&i| self.vectors.row(i))
    }

    pub fn position(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }
}

/// Parses a `count dim` header followed by `word v1 … vdim` rows.
pub fn read_vectors(input: &[u8]) -> Result<VectorTable> {
    let text = std::str::from_utf8(input).map_err(|_| Error::Utf8)?;
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::format(1, "missing `count dim` header"))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    let parse_usize = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::format(1, "bad header"))
    };
    if fields.len() != 2 {
        return Err(Error::format(1, "header must be `count dim`"));
    }
    let count = parse_usize(fields[0])?;
    let dim = parse_usize(fields[1])?;

    let mut words = Vec::with_capacity(count);
    let mut data = Vec::with_capacity(count * dim);
    for (i, line) in lines {
        let mut parts = line.split_whitespace();
        let word = parts.next().expect("nonblank line");
        let values = parts
            .map(|p| p.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::format(i + 1, format!("bad number: {e}")))?;
        if values.len() != dim {
            return Err(Error::format(
                i + 1,
                format!("expected {} values, found {}", dim, values.len()),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::format(i + 1, "non-finite value"));
        }
        words.push(word.to_string());
        data.extend(values);
    }
    if words.len() != count {
        return Err(Error::format(
            1,
            format!("header announces {} vectors, found {}", count, words.len()),
        ));
    }
    VectorTable::new(words, Matrix::from_vec(count, dim, data)?)
}

/// Serializes a table. With `precision = None` every value is written in its
/// shortest round-trip form, so reading back is exact.
pub fn write_vectors(table: &VectorTable, precision: Option<usize>) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{} {}", table.len(), table.dim());
    for (i, w) in table.words.iter().enumerate() {
        out.push_str(w);
        for v in table.vectors.row(i) {
            let _ = match precision {
                Some(p) => write!(out, " {:.*}", p, v),
                None => write!(out, " {}", v),
            };
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_and_rows() {
        let t = read_vectors(b"2 3\na 1 2 3\nb 0.5 -1 0\n").unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.dim(), 3);
        assert_eq!(t.get("b").unwrap(), &[0.5, -1.0, 0.0]);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let err = read_vectors(b"2 3\na 1 2 3\nb 1 2\n").unwrap_err();
        assert!(matches!(err, Error::Format { line: 3, .. }));
    }

    #[test]
    fn exact_round_trip() {
        let t = VectorTable::new(
            vec!["x".into(), "y".into()],
            Matrix::from_vec(2, 2, vec![0.1, 1.0 / 3.0, -2.5e-7, 1e300]).unwrap(),
        )
        .unwrap();
        let back = read_vectors(write_vectors(&t, None).as_bytes()).unwrap();
        assert_eq!(back, t);
    }
}
