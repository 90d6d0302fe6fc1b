//! Low-resource simulation protocols: target downsampling at a fixed 5:1
//! train:dev ratio, source capping, and stratified source/target batching.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::rng;

use super::{Split, Treebank};

/// Train:dev ratio kept throughout simulations.
pub const TRAIN_DEV_RATIO: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimulationConfig {
    /// Number of target training trees, |D_τ|.
    pub target_train_size: usize,
    pub seed: u64,
}

/// `⌈|D_τ| / 5⌉`, which is 0 exactly when `|D_τ| = 0`.
pub fn dev_size(target_train_size: usize) -> usize {
    target_train_size.div_ceil(TRAIN_DEV_RATIO)
}

/// Draws disjoint train and dev subsets of `tb` of sizes `|D_τ|` and
/// `⌈|D_τ|/5⌉` by a seeded uniform permutation.
pub fn downsample(tb: &Treebank, cfg: &SimulationConfig) -> Result<(Treebank, Treebank)> {
    let n_train = cfg.target_train_size;
    let n_dev = dev_size(n_train);
    let required = n_train + n_dev;
    if required > tb.len() {
        return Err(Error::data(format!(
            "downsampling to |D_τ|={} needs {} sentences ({} train + {} dev), treebank has {}",
            n_train,
            required,
            n_train,
            n_dev,
            tb.len()
        )));
    }
    let mut order: Vec<usize> = (0..tb.len()).collect();
    order.shuffle(&mut rng::derive(cfg.seed, "downsample"));
    let pick = |ix: &[usize], split: Split| Treebank {
        language: tb.language.clone(),
        split,
        sentences: ix.iter().map(|&i| tb.sentences[i].clone()).collect(),
    };
    Ok((
        pick(&order[..n_train], Split::Train),
        pick(&order[n_train..required], Split::Dev),
    ))
}

/// Seeded uniform subset of at most `size` sentences, original order kept.
pub fn cap(tb: &Treebank, size: usize, seed: u64) -> Treebank {
    if tb.len() <= size {
        return tb.clone();
    }
    let mut order: Vec<usize> = (0..tb.len()).collect();
    order.shuffle(&mut rng::derive(seed, "cap"));
    let mut keep = order[..size].to_vec();
    keep.sort_unstable();
    Treebank {
        language: tb.language.clone(),
        split: tb.split,
        sentences: keep.iter().map(|&i| tb.sentences[i].clone()).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Source,
    Target,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BatchItem {
    pub side: Side,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub items: Vec<BatchItem>,
}

impl Batch {
    pub fn count(&self, side: Side) -> usize {
        self.items.iter().filter(|i| i.side == side).count()
    }
}

/// One epoch of batches with equal source/target composition.
///
/// The larger side is visited once in shuffled order; the smaller side is
/// resampled with replacement to pair with it. A trailing partial batch
/// keeps the 50/50 split. An empty side degrades to single-side batching.
pub fn stratified_batches<R: Rng>(
    src_len: usize,
    tgt_len: usize,
    batch_size: usize,
    rng: &mut R,
) -> Result<Vec<Batch>> {
    if batch_size < 2 || !batch_size.is_multiple_of(2) {
        return Err(Error::invalid(format!(
            "stratified batch size must be even and at least 2, got {batch_size}"
        )));
    }
    if src_len == 0 && tgt_len == 0 {
        return Ok(Vec::new());
    }
    if src_len == 0 || tgt_len == 0 {
        let (side, n) = if tgt_len == 0 {
            (Side::Source, src_len)
        } else {
            (Side::Target, tgt_len)
        };
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        return Ok(order
            .chunks(batch_size)
            .map(|c| Batch {
                items: c.iter().map(|&index| BatchItem { side, index }).collect(),
            })
            .collect());
    }

    let half = batch_size / 2;
    let (large_side, large_n, small_side, small_n) = if src_len >= tgt_len {
        (Side::Source, src_len, Side::Target, tgt_len)
    } else {
        (Side::Target, tgt_len, Side::Source, src_len)
    };
    let mut order: Vec<usize> = (0..large_n).collect();
    order.shuffle(rng);
    let mut batches = Vec::with_capacity(large_n.div_ceil(half));
    for chunk in order.chunks(half) {
        let mut items = Vec::with_capacity(2 * chunk.len());
        for &index in chunk {
            items.push(BatchItem {
                side: large_side,
                index,
            });
        }
        for _ in 0..chunk.len() {
            items.push(BatchItem {
                side: small_side,
                index: rng.gen_range(0..small_n),
            });
        }
        items.sort_by_key(|i| i.side == Side::Target);
        batches.push(Batch { items });
    }
    Ok(batches)
}
