use serde::Serialize;

use crate::corpus::Treebank;
use crate::error::{Error, Result};

/// Attachment scores in percent, micro-averaged over tokens.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AttachmentScores {
    pub uas: f64,
    pub las: f64,
    pub tokens: usize,
}

/// Compares predicted heads and labels with gold on the gold segmentation.
pub fn evaluate(pred: &Treebank, gold: &Treebank) -> Result<AttachmentScores> {
    if pred.len() != gold.len() {
        return Err(Error::data(format!(
            "{} predicted sentences for {} gold sentences",
            pred.len(),
            gold.len()
        )));
    }
    let mut tokens = 0;
    let mut heads = 0;
    let mut labeled = 0;
    for (i, (p, g)) in pred.sentences.iter().zip(&gold.sentences).enumerate() {
        if p.len() != g.len() {
            return Err(Error::data(format!(
                "sentence {}: {} predicted tokens for {} gold tokens",
                i + 1,
                p.len(),
                g.len()
            )));
        }
        for k in 0..g.len() {
            tokens += 1;
            if p.heads[k] == g.heads[k] {
                heads += 1;
                if p.labels[k] == g.labels[k] {
                    labeled += 1;
                }
            }
        }
    }
    if tokens == 0 {
        return Err(Error::data("no tokens to evaluate"));
    }
    Ok(AttachmentScores {
        uas: 100.0 * heads as f64 / tokens as f64,
        las: 100.0 * labeled as f64 / tokens as f64,
        tokens,
    })
}
