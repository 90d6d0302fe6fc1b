use rand::seq::SliceRandom;

use crate::corpus::{build_vocab, Vocabulary};
use crate::error::{Error, Result};
use crate::nn;
use crate::numerics::{rng, Adagrad, Tape, Var};

use super::{BiLm, LmConfig};

/// Raw text of one language: tokenized sentences.
#[derive(Debug, Clone)]
pub struct LanguageCorpus {
    pub language: String,
    pub sentences: Vec<Vec<String>>,
}

impl LanguageCorpus {
    pub fn new(language: impl Into<String>, sentences: Vec<Vec<String>>) -> Self {
        LanguageCorpus {
            language: language.into(),
            sentences,
        }
    }

    pub fn num_tokens(&self) -> usize {
        self.sentences.iter().map(Vec::len).sum()
    }
}

#[derive(Debug, Clone)]
pub struct EpochSummary {
    pub epoch: usize,
    pub mean_loss: f64,
    pub batches: usize,
}

#[derive(Debug, Clone, Default)]
pub struct LmTrainReport {
    pub initial_loss: f64,
    pub epochs: Vec<EpochSummary>,
}

/// A training window: a span of a sentence plus the prediction targets just
/// outside it (boundary symbols at sentence edges).
#[derive(Debug, Clone)]
pub(crate) struct Window<'a> {
    pub tokens: Vec<&'a str>,
    pub ids: Vec<usize>,
    pub before: usize,
    pub after: usize,
}

impl<'a> Window<'a> {
    pub fn whole(vocab: &Vocabulary, tokens: &[&'a str]) -> Self {
        Window {
            tokens: tokens.to_vec(),
            ids: tokens.iter().map(|t| vocab.word_id(t)).collect(),
            before: Vocabulary::BOS,
            after: Vocabulary::EOS,
        }
    }

    pub fn split(vocab: &Vocabulary, tokens: &[&'a str], unroll: usize) -> Vec<Self> {
        let ids: Vec<usize> = tokens.iter().map(|t| vocab.word_id(t)).collect();
        (0..tokens.len())
            .step_by(unroll)
            .map(|start| {
                let end = (start + unroll).min(tokens.len());
                Window {
                    tokens: tokens[start..end].to_vec(),
                    ids: ids[start..end].to_vec(),
                    before: if start == 0 {
                        Vocabulary::BOS
                    } else {
                        ids[start - 1]
                    },
                    after: if end == tokens.len() {
                        Vocabulary::EOS
                    } else {
                        ids[end]
                    },
                }
            })
            .collect()
    }
}

/// Summed NLL over both directions of a batch, and the prediction count.
/// `dropout` enables training-mode dropout.
pub(crate) fn batch_nll(
    lm: &BiLm,
    tape: &mut Tape,
    windows: &[Window],
    mut dropout: Option<&mut rng::Rng>,
) -> (Var, usize) {
    let seqs: Vec<Vec<&str>> = windows.iter().map(|w| w.tokens.clone()).collect();
    let run = lm.run_batch(tape, &seqs, dropout.as_deref_mut());
    let steps = run.fwd[1].len();
    let mut targets = Vec::with_capacity(2 * steps * windows.len());
    for t in 0..steps {
        for w in windows {
            let n = w.ids.len();
            targets.push(if t + 1 < n {
                Some(w.ids[t + 1])
            } else if t + 1 == n {
                Some(w.after)
            } else {
                None
            });
        }
    }
    for t in 0..steps {
        for w in windows {
            let n = w.ids.len();
            // Backward step t sits on token n-1-t and predicts token n-2-t.
            targets.push(if t + 1 < n {
                Some(w.ids[n - 2 - t])
            } else if t + 1 == n {
                Some(w.before)
            } else {
                None
            });
        }
    }
    let count = targets.iter().filter(|t| t.is_some()).count();
    let mut tops = run.fwd[1].clone();
    tops.extend_from_slice(&run.bwd[1]);
    let mut states = tape.concat_rows(&tops);
    if let Some(r) = dropout {
        states = nn::dropout(tape, states, lm.config().dropout, r);
    }
    let logits = lm.softmax_layer().forward(tape, states);
    (tape.cross_entropy(logits, targets), count)
}

/// Trains a language model on one corpus (monolingual) or several
/// (polyglot). Every batch interleaves the language shards round-robin.
///
/// When `init` is given, training continues from that model; its
/// vocabulary must equal the one built from `corpora`.
pub fn train_lm(
    corpora: &[LanguageCorpus],
    config: &LmConfig,
    init: Option<BiLm>,
    mut on_epoch: impl FnMut(&EpochSummary, &BiLm) -> Result<()>,
) -> Result<(BiLm, LmTrainReport)> {
    config.validate()?;
    if corpora.is_empty() || corpora.iter().all(|c| c.num_tokens() == 0) {
        return Err(Error::invalid(
            "language-model training needs a nonempty corpus",
        ));
    }
    if let Some(c) = corpora.iter().find(|c| c.num_tokens() == 0) {
        return Err(Error::invalid(format!(
            "corpus for `{}` is empty",
            c.language
        )));
    }
    let vocab = build_vocab(
        corpora
            .iter()
            .flat_map(|c| c.sentences.iter().flatten().map(String::as_str)),
        config.min_count,
    );
    let languages: Vec<String> = corpora.iter().map(|c| c.language.clone()).collect();
    let mut lm = match init {
        Some(lm) => {
            if lm.vocab() != &vocab {
                return Err(Error::invalid(
                    "vocabulary of the initial model does not match the training corpus",
                ));
            }
            let mut lm = lm;
            lm.config = LmConfig {
                epochs: config.epochs,
                learning_rate: config.learning_rate,
                dropout: config.dropout,
                batch_size: config.batch_size,
                seed: config.seed,
                ..lm.config.clone()
            };
            lm
        }
        None => BiLm::new(config.clone(), vocab, languages.clone())?,
    };

    let shards: Vec<Vec<Vec<&str>>> = corpora
        .iter()
        .map(|c| {
            c.sentences
                .iter()
                .filter(|s| !s.is_empty())
                .map(|s| s.iter().map(String::as_str).collect())
                .collect()
        })
        .collect();

    let mut optimizer = Adagrad::new(
        lm.params(),
        config.learning_rate,
        config.adagrad_initial_accumulator,
    );
    let mut report = LmTrainReport::default();

    for epoch in 0..config.epochs {
        let mut shuffled: Vec<Vec<Window>> = shards
            .iter()
            .enumerate()
            .map(|(k, shard)| {
                let mut windows: Vec<Window> = shard
                    .iter()
                    .flat_map(|s| Window::split(lm.vocab(), s, config.unroll))
                    .collect();
                windows.shuffle(&mut rng::derive(
                    config.seed,
                    &format!("lm-epoch{epoch}-shard{k}"),
                ));
                windows
            })
            .collect();
        let order = interleave(&mut shuffled);

        let mut drop_rng = rng::derive(config.seed, &format!("lm-dropout{epoch}"));
        let mut total = 0.0;
        let mut batches = 0;
        for batch in order.chunks(config.batch_size) {
            let (loss, grads) = {
                let mut tape = Tape::new(lm.params());
                let (sum, count) = batch_nll(&lm, &mut tape, batch, Some(&mut drop_rng));
                let mean = tape.scale(sum, 1.0 / count as f64);
                (tape.scalar(mean), tape.backward(mean))
            };
            if !loss.is_finite() || !grads.all_finite() {
                return Err(Error::data(format!(
                    "non-finite loss in language-model epoch {}",
                    epoch + 1
                )));
            }
            if epoch == 0 && batches == 0 {
                report.initial_loss = loss;
            }
            let mut grads = grads;
            grads.clip_global_norm(config.clip_norm);
            optimizer.step(lm.params_mut(), &grads);
            total += loss;
            batches += 1;
        }
        let summary = EpochSummary {
            epoch: epoch + 1,
            mean_loss: total / batches.max(1) as f64,
            batches,
        };
        on_epoch(&summary, &lm)?;
        report.epochs.push(summary);
    }
    lm.languages = languages;
    Ok((lm, report))
}

/// Round-robin merge of per-language window lists.
fn interleave<'a>(shards: &mut [Vec<Window<'a>>]) -> Vec<Window<'a>> {
    let total: usize = shards.iter().map(Vec::len).sum();
    let mut iters: Vec<_> = shards
        .iter_mut()
        .map(|s| std::mem::take(s).into_iter())
        .collect();
    let mut out = Vec::with_capacity(total);
    while out.len() < total {
        for it in iters.iter_mut() {
            if let Some(w) = it.next() {
                out.push(w);
            }
        }
    }
    out
}
