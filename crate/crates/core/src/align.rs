//! Anchors and per-layer linear alignment between representation spaces.
//!
//! Vectors are columns: a map `W` sends a source vector `h` to `W·h`.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bilm::{BiLm, LayeredEmbedding, LayeredTable};
use crate::corpus::BilingualDictionary;
use crate::decontext::DecontextTable;
use crate::error::{Error, Result};
use crate::fingerprint::Fnv64;
use crate::nn::ScalarMix;
use crate::numerics::{least_squares, procrustes, Matrix};

/// Sentences embedded per batched forward pass while computing anchors.
const ANCHOR_BATCH: usize = 32;

/// Per-word mean contextual vectors over a corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorTable {
    pub table: LayeredTable,
    /// Occurrence count of each word, aligned with `table.words()`.
    pub counts: Vec<u64>,
    pub lm_fingerprint: String,
}

impl AsRef<LayeredTable> for AnchorTable {
    fn as_ref(&self) -> &LayeredTable {
        &self.table
    }
}

impl AsRef<LayeredTable> for DecontextTable {
    fn as_ref(&self) -> &LayeredTable {
        &self.table
    }
}

impl AsRef<LayeredTable> for LayeredTable {
    fn as_ref(&self) -> &LayeredTable {
        self
    }
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

struct Accumulator {
    count: u64,
    layers: [Vec<CompensatedSum>; 3],
}

/// Averages each word's contextual vectors over all its occurrences.
/// Words are listed in lexicographic order.
pub fn compute_anchors(lm: &BiLm, corpus: &[Vec<String>]) -> Result<AnchorTable> {
    let sentences: Vec<Vec<&str>> = corpus
        .iter()
        .filter(|s| !s.is_empty())
        .map(|s| s.iter().map(String::as_str).collect())
        .collect();
    if sentences.is_empty() {
        return Err(Error::invalid("anchors need a nonempty corpus"));
    }
    let dim = lm.embedding_dim();
    let mut acc: BTreeMap<&str, Accumulator> = BTreeMap::new();
    for chunk in sentences.chunks(ANCHOR_BATCH) {
        let embedded = lm.forward_batch(chunk)?;
        for (sentence, vectors) in chunk.iter().zip(embedded) {
            for (word, e) in sentence.iter().zip(vectors) {
                let a = acc.entry(word).or_insert_with(|| Accumulator {
                    count: 0,
                    layers: [0, 1, 2].map(|_| vec![CompensatedSum::default(); dim]),
                });
                a.count += 1;
                for (sums, layer) in a.layers.iter_mut().zip(&e.layers) {
                    for (s, &x) in sums.iter_mut().zip(layer) {
                        s.add(x);
                    }
                }
            }
        }
    }
    let mut words = Vec::with_capacity(acc.len());
    let mut counts = Vec::with_capacity(acc.len());
    let mut means = Vec::with_capacity(acc.len());
    for (w, a) in acc {
        let n = a.count as f64;
        means.push(LayeredEmbedding {
            layers: a
                .layers
                .map(|sums| sums.iter().map(|s| s.value() / n).collect()),
        });
        words.push(w.to_string());
        counts.push(a.count);
    }
    Ok(AnchorTable {
        table: LayeredTable::new(words, &means)?,
        counts,
        lm_fingerprint: lm.fingerprint(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlignMethod {
    #[default]
    Procrustes,
    LeastSquares,
}

impl FromStr for AlignMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "procrustes" | "orthogonal-procrustes" => Ok(AlignMethod::Procrustes),
            "least-squares" | "lstsq" => Ok(AlignMethod::LeastSquares),
            other => Err(Error::invalid(format!(
                "unknown alignment method `{other}`"
            ))),
        }
    }
}

impl fmt::Display for AlignMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AlignMethod::Procrustes => "procrustes",
            AlignMethod::LeastSquares => "least-squares",
        })
    }
}

/// One linear map per layer, sending source vectors into the target space.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentMap {
    pub method: AlignMethod,
    pub source_language: String,
    pub target_language: String,
    pub dictionary_id: String,
    pub maps: [Matrix; 3],
    pub used_pairs: usize,
    pub skipped_pairs: usize,
    /// Per layer: the least-squares problem was underdetermined and the
    /// minimum-norm solution was returned.
    pub rank_deficient: [bool; 3],
}

/// Identifies a dictionary by content.
pub fn dictionary_id(dict: &BilingualDictionary) -> String {
    let mut h = Fnv64::default();
    for (s, t) in dict.pairs() {
        h.write(s.as_bytes());
        h.write(&[0]);
        h.write(t.as_bytes());
        h.write(&[1]);
    }
    h.hex()
}

/// Fits `W^(j)` for each layer from dictionary pairs whose words appear in
/// both tables. Pairs with a missing word are skipped and counted.
pub fn fit_alignment(
    src: &impl AsRef<LayeredTable>,
    tgt: &impl AsRef<LayeredTable>,
    dict: &BilingualDictionary,
    method: AlignMethod,
    source_language: &str,
    target_language: &str,
) -> Result<AlignmentMap> {
    let (src, tgt) = (src.as_ref(), tgt.as_ref());
    if src.dim() != tgt.dim() {
        return Err(Error::shape(format!(
            "source width {} differs from target width {}",
            src.dim(),
            tgt.dim()
        )));
    }
    let usable: Vec<(&str, &str)> = dict
        .pairs()
        .iter()
        .filter(|(s, t)| src.contains(s) && tgt.contains(t))
        .map(|(s, t)| (s.as_str(), t.as_str()))
        .collect();
    if usable.is_empty() {
        return Err(Error::data(format!(
            "0 usable pairs: none of the {} dictionary pairs has both words in the tables",
            dict.len()
        )));
    }
    let (src_words, tgt_words): (Vec<&str>, Vec<&str>) = usable.iter().copied().unzip();
    let mut rank_deficient = [false; 3];
    let mut fit = |j: usize| -> Result<Matrix> {
        // Rows of `rows_of` are words; the solvers take words as columns.
        let hs = src
            .rows_of(&src_words, j)
            .expect("usable words")
            .transpose();
        let ht = tgt
            .rows_of(&tgt_words, j)
            .expect("usable words")
            .transpose();
        match method {
            AlignMethod::Procrustes => procrustes(&hs, &ht),
            AlignMethod::LeastSquares => {
                let ls = least_squares(&hs, &ht)?;
                rank_deficient[j] = ls.rank_deficient;
                Ok(ls.solution)
            }
        }
    };
    let maps = [fit(0)?, fit(1)?, fit(2)?];
    Ok(AlignmentMap {
        method,
        source_language: source_language.to_string(),
        target_language: target_language.to_string(),
        dictionary_id: dictionary_id(dict),
        maps,
        used_pairs: usable.len(),
        skipped_pairs: dict.len() - usable.len(),
        rank_deficient,
    })
}

const MAP_HEADER: &str = "alignment-map 1";

impl AlignmentMap {
    /// Identity maps, used on the hub-language side.
    pub fn identity(dim: usize, language: &str) -> Self {
        AlignmentMap {
            method: AlignMethod::Procrustes,
            source_language: language.to_string(),
            target_language: language.to_string(),
            dictionary_id: String::new(),
            maps: [0, 1, 2].map(|_| Matrix::identity(dim)),
            used_pairs: 0,
            skipped_pairs: 0,
            rank_deficient: [false; 3],
        }
    }

    pub fn dim(&self) -> usize {
        self.maps[0].cols()
    }

    /// Largest `|WᵀW − I|` entry over the layers.
    pub fn orthogonality_error(&self) -> f64 {
        self.maps
            .iter()
            .map(|w| w.t_matmul(w).max_abs_diff(&Matrix::identity(w.cols())))
            .fold(0.0, f64::max)
    }

    /// Applies every layer's map.
    pub fn map_embedding(&self, e: &LayeredEmbedding) -> Result<LayeredEmbedding> {
        let mut layers: [Vec<f64>; 3] = Default::default();
        for j in 0..3 {
            let w = &self.maps[j];
            if e.layers[j].len() != w.cols() {
                return Err(Error::shape(format!(
                    "layer {j} has width {} but the map expects {}",
                    e.layers[j].len(),
                    w.cols()
                )));
            }
            layers[j] = (0..w.rows())
                .map(|r| w.row(r).iter().zip(&e.layers[j]).map(|(a, b)| a * b).sum())
                .collect();
        }
        Ok(LayeredEmbedding { layers })
    }

    /// Maps every row of a table.
    pub fn map_table(&self, table: &LayeredTable) -> Result<LayeredTable> {
        if table.dim() != self.dim() {
            return Err(Error::shape(format!(
                "table width {} but map width {}",
                table.dim(),
                self.dim()
            )));
        }
        let layers = [0, 1, 2].map(|j| table.layer(j).matmul_t(&self.maps[j]));
        LayeredTable::from_layers(table.words().to_vec(), layers)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{MAP_HEADER}");
        let _ = writeln!(out, "method {}", self.method);
        let _ = writeln!(out, "source {}", self.source_language);
        let _ = writeln!(out, "target {}", self.target_language);
        let _ = writeln!(out, "dictionary {}", or_dash(&self.dictionary_id));
        let _ = writeln!(out, "pairs {} {}", self.used_pairs, self.skipped_pairs);
        for (j, w) in self.maps.iter().enumerate() {
            let _ = writeln!(
                out,
                "layer {j} {} {} {}",
                w.rows(),
                w.cols(),
                if self.rank_deficient[j] {
                    "min-norm"
                } else {
                    "exact"
                }
            );
            for r in 0..w.rows() {
                let row: Vec<String> = w.row(r).iter().map(|x| format!("{x:?}")).collect();
                let _ = writeln!(out, "{}", row.join(" "));
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = Lines(text.lines().enumerate());
        let (n, header) = lines.next("header")?;
        if header != MAP_HEADER {
            return Err(Error::format(n, format!("expected `{MAP_HEADER}`")));
        }
        let (n, method) = lines.field("method")?;
        let method = method
            .parse()
            .map_err(|e: Error| Error::format(n, e.to_string()))?;
        let source_language = lines.field("source")?.1;
        let target_language = lines.field("target")?.1;
        let dictionary_id = lines.field("dictionary")?.1;
        let dictionary_id = if dictionary_id == "-" {
            String::new()
        } else {
            dictionary_id
        };
        let (n, pairs) = lines.field("pairs")?;
        let counts: Vec<usize> = pairs
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::format(n, "bad pair counts"))?;
        if counts.len() != 2 {
            return Err(Error::format(n, "expected used and skipped pair counts"));
        }
        let mut maps: Vec<Matrix> = Vec::with_capacity(3);
        let mut rank_deficient = [false; 3];
        for j in 0..3 {
            let (n, spec) = lines.field("layer")?;
            let parts: Vec<&str> = spec.split_whitespace().collect();
            let dims = match parts.as_slice() {
                [id, r, c, flag] if *id == j.to_string() => {
                    rank_deficient[j] = *flag == "min-norm";
                    (r.parse::<usize>(), c.parse::<usize>())
                }
                _ => return Err(Error::format(n, format!("bad header for layer {j}"))),
            };
            let (rows, cols) = match dims {
                (Ok(r), Ok(c)) => (r, c),
                _ => return Err(Error::format(n, "bad layer dimensions")),
            };
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows {
                let (n, line) = lines.next("matrix row")?;
                let row: Vec<f64> = line
                    .split_whitespace()
                    .map(str::parse)
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| Error::format(n, "bad matrix entry"))?;
                if row.len() != cols {
                    return Err(Error::format(
                        n,
                        format!("expected {cols} entries, found {}", row.len()),
                    ));
                }
                if row.iter().any(|x| !x.is_finite()) {
                    return Err(Error::format(n, "non-finite matrix entry"));
                }
                data.extend(row);
            }
            maps.push(Matrix::from_vec(rows, cols, data)?);
        }
        let [m0, m1, m2]: [Matrix; 3] = maps.try_into().expect("three layers");
        Ok(AlignmentMap {
            method,
            source_language,
            target_language,
            dictionary_id,
            maps: [m0, m1, m2],
            used_pairs: counts[0],
            skipped_pairs: counts[1],
            rank_deficient,
        })
    }
}

struct Lines<'a>(std::iter::Enumerate<std::str::Lines<'a>>);

impl<'a> Lines<'a> {
    fn next(&mut self, what: &str) -> Result<(usize, &'a str)> {
        self.0
            .next()
            .map(|(i, l)| (i + 1, l.trim()))
            .ok_or_else(|| Error::format(0, format!("alignment map ends before {what}")))
    }

    fn field(&mut self, key: &str) -> Result<(usize, String)> {
        let (n, line) = self.next(key)?;
        match line.split_once(' ') {
            Some((k, v)) if k == key => Ok((n, v.to_string())),
            _ => Err(Error::format(n, format!("expected `{key} …`"))),
        }
    }
}

fn or_dash(s: &str) -> &str {
    if s.is_empty() {
        "-"
    } else {
        s
    }
}

/// `γ · Σ_j λ_j · W^(j) · h^(j)`.
pub fn apply_alignment(
    e: &LayeredEmbedding,
    map: &AlignmentMap,
    mix: &ScalarMix,
) -> Result<Vec<f64>> {
    let mapped = map.map_embedding(e)?;
    let layers: Vec<&[f64]> = mapped.layers.iter().map(Vec::as_slice).collect();
    mix.apply(&layers)
}
