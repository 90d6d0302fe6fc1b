use std::collections::HashMap;

use crate::corpus::VectorTable;
use crate::error::{Error, Result};
use crate::numerics::Matrix;

use super::LayeredEmbedding;

/// Word-type table holding one vector per layer for each word.
#[derive(Debug, Clone, PartialEq)]
pub struct LayeredTable {
    words: Vec<String>,
    layers: [Matrix; 3],
    index: HashMap<String, usize>,
}

impl LayeredTable {
    pub fn new(words: Vec<String>, embeddings: &[LayeredEmbedding]) -> Result<Self> {
        if words.len() != embeddings.len() {
            return Err(Error::shape(format!(
                "{} words but {} embeddings",
                words.len(),
                embeddings.len()
            )));
        }
        let dim = embeddings.first().map_or(0, LayeredEmbedding::dim);
        let layers = [0, 1, 2].map(|j| {
            let mut data = Vec::with_capacity(words.len() * dim);
            for e in embeddings {
                data.extend_from_slice(&e.layers[j]);
            }
            data
        });
        if layers.iter().any(|d| d.len() != words.len() * dim) {
            return Err(Error::shape("embeddings of unequal width".to_string()));
        }
        let [l0, l1, l2] = layers.map(|d| Matrix::from_vec(words.len(), dim, d));
        Self::from_layers(words, [l0?, l1?, l2?])
    }

    pub fn from_layers(words: Vec<String>, layers: [Matrix; 3]) -> Result<Self> {
        let dim = layers[0].cols();
        for m in &layers {
            if m.rows() != words.len() || m.cols() != dim {
                return Err(Error::shape(format!(
                    "layer of shape {:?} for {} words of width {dim}",
                    m.shape(),
                    words.len()
                )));
            }
            m.ensure_finite("layered table")?;
        }
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if index.insert(w.clone(), i).is_some() {
                return Err(Error::data(format!("duplicate word `{w}`")));
            }
        }
        Ok(LayeredTable {
            words,
            layers,
            index,
        })
    }

    /// Reassembles a table from three per-layer vector files.
    pub fn from_vector_tables(tables: [VectorTable; 3]) -> Result<Self> {
        if tables[1].words() != tables[0].words() || tables[2].words() != tables[0].words() {
            return Err(Error::data("layer files list different words"));
        }
        let words = tables[0].words().to_vec();
        let [a, b, c] = tables.map(|t| t.vectors().clone());
        Self::from_layers(words, [a, b, c])
    }

    pub fn to_vector_table(&self, layer: usize) -> Result<VectorTable> {
        VectorTable::new(self.words.clone(), self.layers[layer].clone())
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.layers[0].cols()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn layer(&self, j: usize) -> &Matrix {
        &self.layers[j]
    }

    pub fn position(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    pub fn vector(&self, word: &str, layer: usize) -> Option<&[f64]> {
        self.position(word).map(|i| self.layers[layer].row(i))
    }

    pub fn embedding(&self, word: &str) -> Option<LayeredEmbedding> {
        self.position(word).map(|i| LayeredEmbedding {
            layers: [0, 1, 2].map(|j| self.layers[j].row(i).to_vec()),
        })
    }

    /// Per-word rows of `layer` restricted to `words`, in the given order.
    pub fn rows_of(&self, words: &[&str], layer: usize) -> Option<Matrix> {
        let rows: Option<Vec<Vec<f64>>> = words
            .iter()
            .map(|w| self.vector(w, layer).map(<[f64]>::to_vec))
            .collect();
        rows.and_then(|r| Matrix::from_rows(&r).ok())
    }
}
