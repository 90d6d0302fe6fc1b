//! Word translation by nearest-neighbor retrieval with cosine or CSLS
//! scoring, and precision-at-1 evaluation.

use std::collections::{BTreeSet, HashMap};
use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::align::AlignmentMap;
use crate::bilm::LayeredTable;
use crate::corpus::BilingualDictionary;
use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub const DEFAULT_K: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RetrievalMode {
    #[default]
    Csls,
    Cosine,
}

impl FromStr for RetrievalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csls" => Ok(RetrievalMode::Csls),
            "cosine" | "nn" => Ok(RetrievalMode::Cosine),
            other => Err(Error::invalid(format!("unknown retrieval mode `{other}`"))),
        }
    }
}

impl fmt::Display for RetrievalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RetrievalMode::Csls => "csls",
            RetrievalMode::Cosine => "cosine",
        })
    }
}

fn normalized_rows(m: &Matrix, what: &str) -> Result<Matrix> {
    let mut out = m.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::data(format!(
                "{what} vector {i} has zero or non-finite norm"
            )));
        }
        row.iter_mut().for_each(|x| *x /= norm);
    }
    Ok(out)
}

fn unit(x: &[f64]) -> Result<Vec<f64>> {
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::invalid("query vector has zero or non-finite norm"));
    }
    Ok(x.iter().map(|v| v / norm).collect())
}

/// Mean of the `k` largest values.
fn top_k_mean(values: &mut [f64], k: usize) -> f64 {
    let k = k.min(values.len());
    if k < values.len() {
        values.select_nth_unstable_by(k - 1, |a, b| b.total_cmp(a));
    }
    values[..k].iter().sum::<f64>() / k as f64
}

/// Unit-normalized target vectors with a cached per-target hubness term:
/// `r_S(y)`, the mean cosine of target `y` to its `k` nearest sources.
#[derive(Debug, Clone)]
pub struct RetrievalIndex {
    words: Vec<String>,
    targets: Matrix,
    sources: Matrix,
    k: usize,
    target_hubness: Vec<f64>,
}

impl RetrievalIndex {
    /// `targets` and `sources` hold one vector per row.
    pub fn new(words: Vec<String>, targets: &Matrix, sources: &Matrix, k: usize) -> Result<Self> {
        if words.is_empty() || words.len() != targets.rows() {
            return Err(Error::invalid(format!(
                "retrieval index needs one word per target vector ({} words, {} vectors)",
                words.len(),
                targets.rows()
            )));
        }
        if sources.rows() == 0 {
            return Err(Error::invalid(
                "retrieval index needs at least one source vector",
            ));
        }
        if targets.cols() != sources.cols() {
            return Err(Error::shape(format!(
                "target width {} differs from source width {}",
                targets.cols(),
                sources.cols()
            )));
        }
        if k == 0 || k > targets.rows() || k > sources.rows() {
            return Err(Error::invalid(format!(
                "k = {k} must lie in 1..={}",
                targets.rows().min(sources.rows())
            )));
        }
        let targets = normalized_rows(targets, "target")?;
        let sources = normalized_rows(sources, "source")?;
        let sims = targets.matmul_t(&sources);
        let target_hubness = (0..sims.rows())
            .map(|i| top_k_mean(&mut sims.row(i).to_vec(), k))
            .collect();
        Ok(RetrievalIndex {
            words,
            targets,
            sources,
            k,
            target_hubness,
        })
    }

    pub fn k(&self) -> usize {
        self.k
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

    pub fn target_hubness(&self) -> &[f64] {
        &self.target_hubness
    }

    /// Cosine of `x` to every target.
    pub fn cosines(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.targets.cols() {
            return Err(Error::shape(format!(
                "query width {} but index width {}",
                x.len(),
                self.targets.cols()
            )));
        }
        let x = unit(x)?;
        Ok((0..self.targets.rows())
            .map(|i| self.targets.row(i).iter().zip(&x).map(|(a, b)| a * b).sum())
            .collect())
    }

    /// `r_T(x)`: mean cosine of `x` to its `k` nearest targets.
    pub fn query_hubness(&self, x: &[f64]) -> Result<f64> {
        Ok(top_k_mean(&mut self.cosines(x)?, self.k))
    }

    pub fn num_sources(&self) -> usize {
        self.sources.rows()
    }
}

/// `2·cos(x, y) − r_T(x) − r_S(y)` for every target `y`.
pub fn csls_scores(x: &[f64], index: &RetrievalIndex) -> Result<Vec<f64>> {
    let cos = index.cosines(x)?;
    let r_t = top_k_mean(&mut cos.clone(), index.k);
    Ok(cos
        .iter()
        .zip(&index.target_hubness)
        .map(|(c, r_s)| 2.0 * c - r_t - r_s)
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ranked {
    pub source: String,
    /// Best first; equal scores ordered by target word.
    pub candidates: Vec<(String, f64)>,
}

/// Ranks targets for each query and keeps the best `top_n`.
pub fn translate(
    queries: &[(String, Vec<f64>)],
    index: &RetrievalIndex,
    mode: RetrievalMode,
    top_n: usize,
) -> Result<Vec<Ranked>> {
    if index.is_empty() {
        return Err(Error::invalid("empty retrieval index"));
    }
    queries
        .iter()
        .map(|(source, x)| {
            let scores = match mode {
                RetrievalMode::Csls => csls_scores(x, index)?,
                RetrievalMode::Cosine => index.cosines(x)?,
            };
            let mut order: Vec<usize> = (0..scores.len()).collect();
            order.sort_by(|&a, &b| {
                scores[b]
                    .total_cmp(&scores[a])
                    .then_with(|| index.words[a].cmp(&index.words[b]))
            });
            Ok(Ranked {
                source: source.clone(),
                candidates: order
                    .into_iter()
                    .take(top_n.max(1))
                    .map(|i| (index.words[i].clone(), scores[i]))
                    .collect(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrecisionReport {
    pub precision: f64,
    pub correct: usize,
    pub evaluated: usize,
    /// Test source words with no ranked list.
    pub skipped: usize,
}

/// Fraction of test source words whose top candidate is one of their gold
/// targets. Sources without a ranked list are skipped and counted.
pub fn precision_at_1(ranked: &[Ranked], dict: &BilingualDictionary) -> Result<PrecisionReport> {
    let top: HashMap<&str, &str> = ranked
        .iter()
        .filter_map(|r| {
            r.candidates
                .first()
                .map(|(w, _)| (r.source.as_str(), w.as_str()))
        })
        .collect();
    let mut correct = 0;
    let mut evaluated = 0;
    let mut skipped = 0;
    for (source, golds) in dict.grouped() {
        match top.get(source) {
            Some(best) => {
                evaluated += 1;
                if golds.contains(best) {
                    correct += 1;
                }
            }
            None => skipped += 1,
        }
    }
    if evaluated == 0 {
        return Err(Error::data(format!(
            "0 evaluable test pairs ({skipped} source words without candidates)"
        )));
    }
    Ok(PrecisionReport {
        precision: correct as f64 / evaluated as f64,
        correct,
        evaluated,
        skipped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeOptions {
    pub mode: RetrievalMode,
    pub k: usize,
    /// Only test-dictionary targets are candidates.
    pub restrict_to_dictionary: bool,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        ProbeOptions {
            mode: RetrievalMode::Csls,
            k: DEFAULT_K,
            restrict_to_dictionary: false,
        }
    }
}

/// One row of the per-layer translation report.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerResult {
    pub layer: usize,
    pub mode: RetrievalMode,
    pub k: usize,
    pub evaluated: usize,
    pub skipped: usize,
    pub precision: f64,
}

/// Translates test-dictionary source words layer by layer. Source vectors
/// are mapped with `map` when given. Test sources missing from `src`, or
/// whose gold targets are all missing from `tgt`, are skipped.
pub fn probe_layers(
    src: &LayeredTable,
    tgt: &LayeredTable,
    map: Option<&AlignmentMap>,
    dict_test: &BilingualDictionary,
    options: ProbeOptions,
) -> Result<Vec<LayerResult>> {
    let src = match map {
        Some(m) => m.map_table(src)?,
        None => src.clone(),
    };
    let candidates: Vec<String> = if options.restrict_to_dictionary {
        let golds: BTreeSet<&str> = dict_test.pairs().iter().map(|(_, t)| t.as_str()).collect();
        tgt.words()
            .iter()
            .filter(|w| golds.contains(w.as_str()))
            .cloned()
            .collect()
    } else {
        tgt.words().to_vec()
    };
    if candidates.is_empty() {
        return Err(Error::data("no candidate target words"));
    }
    let grouped = dict_test.grouped();
    let total_sources = grouped.len();
    let query_words: Vec<&str> = grouped
        .iter()
        .filter(|(s, golds)| src.contains(s) && golds.iter().any(|g| tgt.contains(g)))
        .map(|(s, _)| *s)
        .collect();
    if query_words.is_empty() {
        return Err(Error::data(format!(
            "0 evaluable test pairs among {total_sources} test source words"
        )));
    }
    let cand_refs: Vec<&str> = candidates.iter().map(String::as_str).collect();
    let all_src: Vec<&str> = src.words().iter().map(String::as_str).collect();
    let k = options.k.min(candidates.len()).min(all_src.len()).max(1);
    let mut out = Vec::with_capacity(3);
    for layer in 0..3 {
        let targets = tgt.rows_of(&cand_refs, layer).expect("candidates in table");
        let sources = src.layer(layer).clone();
        let index = RetrievalIndex::new(candidates.clone(), &targets, &sources, k)?;
        let queries: Vec<(String, Vec<f64>)> = query_words
            .iter()
            .map(|w| (w.to_string(), src.vector(w, layer).expect("query").to_vec()))
            .collect();
        let ranked = translate(&queries, &index, options.mode, 1)?;
        let report = precision_at_1(&ranked, dict_test)?;
        out.push(LayerResult {
            layer,
            mode: options.mode,
            k,
            evaluated: report.evaluated,
            skipped: report.skipped,
            precision: report.precision,
        });
    }
    Ok(out)
}

pub const PROBE_TSV_HEADER: &str = "layer\tmethod\tk\tevaluated\tskipped\tp_at_1";

pub fn probe_tsv(rows: &[LayerResult]) -> String {
    let mut out = String::from(PROBE_TSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{:.4}",
            r.layer, r.mode, r.k, r.evaluated, r.skipped, r.precision
        );
    }
    out
}
