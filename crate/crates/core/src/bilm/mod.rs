//! Character-aware bidirectional LSTM language model.
//!
//! Words are encoded by a character CNN (embeddings, parallel convolutions
//! with max-over-time pooling, linear projection). Two stacked LSTM layers
//! run in each direction; layer 2 reads layer-1 output plus layer-1 input
//! when skip connections are on. A softmax shared by both directions
//! predicts the next (forward) or previous (backward) word. Sentence
//! boundary symbols only ever appear as prediction targets, so a token's
//! states never depend on a boundary input.

mod checkpoint;
mod table;
mod train;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::fingerprint::Fnv64;
use crate::nn::{self, run_lstm, Linear, LstmCell, LstmState};
use crate::numerics::{rng, Activation, Matrix, ParamId, ParamStore, Tape, Var};

pub use checkpoint::CHECKPOINT_VERSION;
pub use table::LayeredTable;
pub use train::{train_lm, EpochSummary, LanguageCorpus, LmTrainReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LmConfig {
    pub char_dim: usize,
    /// `(window, filters)` per convolution.
    pub filters: Vec<(usize, usize)>,
    pub activation: Activation,
    /// LSTM cell size.
    pub lstm_size: usize,
    /// Size of the projected LSTM state; `None` exposes the raw cell output.
    pub projection: Option<usize>,
    pub skip_connections: bool,
    /// Longer words are truncated to this many characters.
    pub max_word_chars: usize,
    /// Dropout on each LSTM layer's output during training.
    pub dropout: f64,
    /// Minimum corpus count for a word to get its own softmax row.
    pub min_count: u64,
    pub batch_size: usize,
    /// Sentences longer than this are split into independent windows.
    pub unroll: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub adagrad_initial_accumulator: f64,
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for LmConfig {
    fn default() -> Self {
        LmConfig {
            char_dim: 16,
            filters: vec![(1, 8), (2, 8), (3, 16), (4, 32)],
            activation: Activation::Relu,
            lstm_size: 128,
            projection: Some(32),
            skip_connections: true,
            max_word_chars: 50,
            dropout: 0.1,
            min_count: 1,
            batch_size: 128,
            unroll: 20,
            epochs: 10,
            learning_rate: 0.2,
            adagrad_initial_accumulator: 1.0,
            clip_norm: 10.0,
            seed: 1,
        }
    }
}

impl LmConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("char_dim", self.char_dim),
            ("lstm_size", self.lstm_size),
            ("max_word_chars", self.max_word_chars),
            ("batch_size", self.batch_size),
            ("unroll", self.unroll),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::invalid(format!("lm.{name} must be positive")));
            }
        }
        if self.filters.is_empty() || self.filters.iter().any(|&(w, f)| w == 0 || f == 0) {
            return Err(Error::invalid(
                "lm.filters must be nonempty (window, count) pairs",
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid("lm.dropout must lie in [0, 1)"));
        }
        if self.projection == Some(0) {
            return Err(Error::invalid("lm.projection must be positive"));
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return Err(Error::invalid("lm.learning_rate must be positive"));
        }
        Ok(())
    }

    /// Width of the exposed per-direction state.
    pub fn state_dim(&self) -> usize {
        self.projection.unwrap_or(self.lstm_size)
    }

    fn max_window(&self) -> usize {
        self.filters.iter().map(|&(w, _)| w).max().unwrap_or(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvFilter {
    pub window: usize,
    pub weight: ParamId,
    pub bias: ParamId,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CharCnn {
    pub char_embedding: ParamId,
    pub convolutions: Vec<ConvFilter>,
    pub projection: Linear,
    pub activation: Activation,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Layout {
    char_cnn: CharCnn,
    forward: [LstmCell; 2],
    backward: [LstmCell; 2],
    softmax: Linear,
}

/// Per-token representation: the character-CNN vector (repeated to full
/// width) and the concatenated forward/backward states of each LSTM layer.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LayeredEmbedding {
    pub layers: [Vec<f64>; 3],
}

impl LayeredEmbedding {
    pub fn dim(&self) -> usize {
        self.layers[0].len()
    }

    pub fn layer(&self, j: usize) -> &[f64] {
        &self.layers[j]
    }
}

/// Recorded forward pass over a batch of sequences.
pub(crate) struct BatchRun {
    /// Character-CNN output, one row per distinct word.
    pub cnn: Var,
    pub rows: Vec<Vec<usize>>,
    /// Time-major states per direction and layer: `[layer][t]`, each
    /// `batch × state_dim`. Backward step `t` of sequence `b` is token
    /// `len_b − 1 − t`.
    pub fwd: [Vec<Var>; 2],
    pub bwd: [Vec<Var>; 2],
}

/// A trained (or freshly initialized) bidirectional language model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BiLm {
    pub languages: Vec<String>,
    config: LmConfig,
    vocab: Vocabulary,
    params: ParamStore,
    layout: Layout,
}

impl BiLm {
    /// Randomly initialized model over `vocab`, seeded by `config.seed`.
    pub fn new(config: LmConfig, vocab: Vocabulary, languages: Vec<String>) -> Result<Self> {
        config.validate()?;
        let mut r = rng::derive(config.seed, "bilm-init");
        let mut store = ParamStore::new();
        let dim = config.state_dim();
        let char_embedding = store.add(
            "cnn.char_embedding",
            Matrix::uniform(vocab.num_chars(), config.char_dim, 0.5, &mut r),
        );
        let convolutions = config
            .filters
            .iter()
            .map(|&(window, count)| {
                let fan_in = window * config.char_dim;
                let limit = (2.0 / fan_in as f64).sqrt();
                ConvFilter {
                    window,
                    weight: store.add(
                        format!("cnn.conv{window}.weight"),
                        Matrix::uniform(fan_in, count, limit, &mut r),
                    ),
                    bias: store.add(format!("cnn.conv{window}.bias"), Matrix::zeros(1, count)),
                }
            })
            .collect();
        let total_filters: usize = config.filters.iter().map(|&(_, c)| c).sum();
        let projection = Linear::new(&mut store, "cnn.projection", total_filters, dim, &mut r);
        let char_cnn = CharCnn {
            char_embedding,
            convolutions,
            projection,
            activation: config.activation,
        };
        let mut cell = |name: &str, store: &mut ParamStore| {
            LstmCell::new(
                store,
                name,
                dim,
                config.lstm_size,
                config.projection,
                &mut r,
            )
        };
        let forward = [cell("fwd.l1", &mut store), cell("fwd.l2", &mut store)];
        let backward = [cell("bwd.l1", &mut store), cell("bwd.l2", &mut store)];
        let softmax = Linear::new(
            &mut store,
            "softmax",
            dim,
            vocab.num_words(),
            &mut rng::derive(config.seed, "bilm-softmax"),
        );
        Ok(BiLm {
            languages,
            config,
            vocab,
            params: store,
            layout: Layout {
                char_cnn,
                forward,
                backward,
                softmax,
            },
        })
    }

    pub fn config(&self) -> &LmConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn char_cnn(&self) -> &CharCnn {
        &self.layout.char_cnn
    }

    /// `[layer 1, layer 2]` cells of one direction.
    pub fn cells(&self, forward: bool) -> &[LstmCell; 2] {
        if forward {
            &self.layout.forward
        } else {
            &self.layout.backward
        }
    }

    pub fn softmax_layer(&self) -> &Linear {
        &self.layout.softmax
    }

    /// Width of every [`LayeredEmbedding`] layer.
    pub fn embedding_dim(&self) -> usize {
        2 * self.config.state_dim()
    }

    /// Content fingerprint over configuration, vocabulary and parameters.
    pub fn fingerprint(&self) -> String {
        let mut h = Fnv64::default();
        h.write(
            serde_json::to_string(&self.config)
                .unwrap_or_default()
                .as_bytes(),
        );
        for w in self.vocab.words() {
            h.write(w.as_bytes());
            h.write(&[0]);
        }
        for id in self.params.ids() {
            h.write_f64s(self.params.get(id).as_slice());
        }
        h.hex()
    }

    fn char_ids(&self, word: &str) -> Vec<usize> {
        let mut ids = self.vocab.encode_chars(word);
        let limit = self.config.max_word_chars + 2;
        if ids.len() > limit {
            ids.truncate(limit - 1);
            ids.push(Vocabulary::EOW);
        }
        while ids.len() < self.config.max_window() {
            ids.push(Vocabulary::PAD_CHAR);
        }
        ids
    }

    /// Character-CNN vectors for `words`, one row each. Every word is
    /// processed on its own character span, so a row never depends on the
    /// other words in the call.
    pub(crate) fn encode_words(&self, tape: &mut Tape, words: &[&str]) -> Var {
        let cnn = &self.layout.char_cnn;
        let mut ids = Vec::new();
        let mut lengths = Vec::with_capacity(words.len());
        for w in words {
            let c = self.char_ids(w);
            lengths.push(c.len());
            ids.extend(c);
        }
        let table = tape.param(cnn.char_embedding);
        let chars = tape.gather_rows(table, ids);
        let mut pooled = Vec::with_capacity(cnn.convolutions.len());
        for conv in &cnn.convolutions {
            let windows = tape.unfold(chars, lengths.clone(), conv.window);
            let w = tape.param(conv.weight);
            let b = tape.param(conv.bias);
            let z = tape.matmul(windows, w);
            let z = tape.add_row(z, b);
            let a = tape.activate(z, cnn.activation);
            let groups: Vec<usize> = lengths.iter().map(|l| l - conv.window + 1).collect();
            pooled.push(tape.max_pool_groups(a, &groups));
        }
        let features = if pooled.len() == 1 {
            pooled[0]
        } else {
            tape.concat_cols(&pooled)
        };
        cnn.projection.forward(tape, features)
    }

    /// Context-independent character-CNN vector of one word.
    pub fn char_cnn_encode(&self, word: &str) -> Vec<f64> {
        let mut tape = Tape::new(&self.params);
        let v = self.encode_words(&mut tape, &[word]);
        tape.value(v).as_slice().to_vec()
    }

    /// Records both directions over a batch of sequences.
    /// With `dropout`, layer outputs are dropped as in training.
    pub(crate) fn run_batch(
        &self,
        tape: &mut Tape,
        seqs: &[Vec<&str>],
        mut dropout: Option<&mut rng::Rng>,
    ) -> BatchRun {
        let mut uniq: Vec<&str> = Vec::new();
        let mut index: HashMap<&str, usize> = HashMap::new();
        let rows: Vec<Vec<usize>> = seqs
            .iter()
            .map(|s| {
                s.iter()
                    .map(|w| {
                        *index.entry(w).or_insert_with(|| {
                            uniq.push(w);
                            uniq.len() - 1
                        })
                    })
                    .collect()
            })
            .collect();
        let cnn = self.encode_words(tape, &uniq);
        let steps = rows.iter().map(Vec::len).max().unwrap_or(0);
        let mut x_fwd = Vec::with_capacity(steps);
        let mut x_bwd = Vec::with_capacity(steps);
        for t in 0..steps {
            let f: Vec<usize> = rows
                .iter()
                .map(|r| r.get(t).copied().unwrap_or(0))
                .collect();
            let b: Vec<usize> = rows
                .iter()
                .map(|r| if t < r.len() { r[r.len() - 1 - t] } else { 0 })
                .collect();
            x_fwd.push(tape.gather_rows(cnn, f));
            x_bwd.push(tape.gather_rows(cnn, b));
        }
        let fwd = self.run_direction(tape, &self.layout.forward, &x_fwd, dropout.as_deref_mut());
        let bwd = self.run_direction(tape, &self.layout.backward, &x_bwd, dropout);
        BatchRun {
            cnn,
            rows,
            fwd,
            bwd,
        }
    }

    fn run_direction(
        &self,
        tape: &mut Tape,
        cells: &[LstmCell; 2],
        xs: &[Var],
        dropout: Option<&mut rng::Rng>,
    ) -> [Vec<Var>; 2] {
        let l1 = run_lstm(tape, &cells[0], xs);
        let mut l2_in = l1.clone();
        if let Some(r) = dropout {
            for h in &mut l2_in {
                *h = nn::dropout(tape, *h, self.config.dropout, r);
            }
        }
        if self.config.skip_connections {
            for (h, &x) in l2_in.iter_mut().zip(xs) {
                *h = tape.add(*h, x);
            }
        }
        let l2 = run_lstm(tape, &cells[1], &l2_in);
        [l1, l2]
    }

    /// Contextual layered embeddings for every token of a sentence, from
    /// zero initial states.
    pub fn forward(&self, tokens: &[&str]) -> Result<Vec<LayeredEmbedding>> {
        let mut out = self.forward_batch(&[tokens.to_vec()])?;
        Ok(out.pop().unwrap_or_default())
    }

    /// [`BiLm::forward`] over several sentences in one batched pass.
    pub fn forward_batch(&self, sentences: &[Vec<&str>]) -> Result<Vec<Vec<LayeredEmbedding>>> {
        if sentences.iter().any(Vec::is_empty) {
            return Err(Error::invalid("cannot embed an empty sentence"));
        }
        if sentences.is_empty() {
            return Ok(Vec::new());
        }
        let mut tape = Tape::new(&self.params);
        let run = self.run_batch(&mut tape, sentences, None);
        let cnn = tape.value(run.cnn);
        let out = sentences
            .iter()
            .enumerate()
            .map(|(b, s)| {
                let n = s.len();
                let state = |v: Var| tape.value(v).row(b);
                (0..n)
                    .map(|i| {
                        let x = cnn.row(run.rows[b][i]);
                        let layer = |j: usize| {
                            [state(run.fwd[j][i]), state(run.bwd[j][n - 1 - i])].concat()
                        };
                        LayeredEmbedding {
                            layers: [[x, x].concat(), layer(0), layer(1)],
                        }
                    })
                    .collect()
            })
            .collect();
        Ok(out)
    }

    /// Convenience wrapper over [`BiLm::forward`] for owned tokens.
    pub fn embed_sentence(&self, tokens: &[String]) -> Result<Vec<LayeredEmbedding>> {
        let refs: Vec<&str> = tokens.iter().map(String::as_str).collect();
        self.forward(&refs)
    }

    /// Zero-recurrence states of a single word: every LSTM cell is
    /// evaluated with its recurrent input and previous cell removed.
    /// `keep_skip = false` feeds layer 2 with the layer-1 output alone.
    pub(crate) fn zero_recurrence(&self, word: &str, keep_skip: bool) -> LayeredEmbedding {
        let mut tape = Tape::new(&self.params);
        let x = self.encode_words(&mut tape, &[word]);
        let direction = |cells: &[LstmCell; 2], tape: &mut Tape| -> [Vec<f64>; 2] {
            let LstmState { h: h1, .. } = cells[0].step(tape, x, None);
            let input2 = if self.config.skip_connections && keep_skip {
                tape.add(h1, x)
            } else {
                h1
            };
            let LstmState { h: h2, .. } = cells[1].step(tape, input2, None);
            [
                tape.value(h1).row(0).to_vec(),
                tape.value(h2).row(0).to_vec(),
            ]
        };
        let [f1, f2] = direction(&self.layout.forward, &mut tape);
        let [b1, b2] = direction(&self.layout.backward, &mut tape);
        let xv = tape.value(x).row(0);
        LayeredEmbedding {
            layers: [[xv, xv].concat(), [f1, b1].concat(), [f2, b2].concat()],
        }
    }

    /// Mean joint forward+backward negative log-likelihood of `sentences`
    /// recorded on `tape`, together with the number of predictions.
    pub fn loss(&self, tape: &mut Tape, sentences: &[Vec<&str>]) -> (Var, usize) {
        let windows: Vec<train::Window> = sentences
            .iter()
            .map(|s| train::Window::whole(&self.vocab, s))
            .collect();
        let (sum, count) = train::batch_nll(self, tape, &windows, None);
        (tape.scale(sum, 1.0 / count as f64), count)
    }

    /// `exp` of the mean per-prediction NLL over both directions.
    pub fn perplexity(&self, sentences: &[Vec<String>]) -> Result<f64> {
        let sentences: Vec<Vec<&str>> = sentences
            .iter()
            .filter(|s| !s.is_empty())
            .map(|s| s.iter().map(String::as_str).collect())
            .collect();
        if sentences.is_empty() {
            return Err(Error::invalid("perplexity of an empty token stream"));
        }
        let mut total = 0.0;
        let mut count = 0;
        for chunk in sentences.chunks(self.config.batch_size.max(1)) {
            let windows: Vec<train::Window> = chunk
                .iter()
                .flat_map(|s| train::Window::split(&self.vocab, s, self.config.unroll))
                .collect();
            let mut tape = Tape::new(&self.params);
            let (sum, n) = train::batch_nll(self, &mut tape, &windows, None);
            total += tape.scalar(sum);
            count += n;
        }
        Ok((total / count as f64).exp())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::build_vocab;
    use crate::numerics::check_tape_gradients;

    pub(crate) fn tiny_config() -> LmConfig {
        LmConfig {
            char_dim: 3,
            filters: vec![(1, 2), (2, 3)],
            lstm_size: 3,
            projection: Some(2),
            batch_size: 4,
            unroll: 5,
            ..LmConfig::default()
        }
    }

    fn tiny_lm() -> BiLm {
        let vocab = build_vocab(["the", "cat", "sat", "on", "mat", "the"], 1);
        BiLm::new(tiny_config(), vocab, vec!["eng".into()]).unwrap()
    }

    #[test]
    fn three_layers_of_equal_width() {
        let lm = tiny_lm();
        let out = lm.forward(&["the", "cat", "sat"]).unwrap();
        assert_eq!(out.len(), 3);
        for e in &out {
            assert!(e.layers.iter().all(|l| l.len() == lm.embedding_dim()));
        }
    }

    #[test]
    fn char_cnn_deterministic_and_context_free() {
        let lm = tiny_lm();
        assert_eq!(lm.char_cnn_encode("cat"), lm.char_cnn_encode("cat"));
        let mut tape = Tape::new(lm.params());
        let v = lm.encode_words(&mut tape, &["a", "cat", "extraordinarily"]);
        assert_eq!(tape.value(v).row(1), lm.char_cnn_encode("cat").as_slice());
        let a = lm.forward(&["the", "cat"]).unwrap();
        let b = lm.forward(&["cat"]).unwrap();
        assert_eq!(a[1].layers[0], b[0].layers[0]);
    }

    #[test]
    fn zero_parameters_give_projection_bias() {
        let mut lm = tiny_lm();
        for id in lm.params.ids().collect::<Vec<_>>() {
            lm.params.get_mut(id).fill(0.0);
        }
        let bias_id = lm.layout.char_cnn.projection.bias;
        *lm.params.get_mut(bias_id) = Matrix::row_vector(&[0.25, -0.5]);
        assert_eq!(lm.char_cnn_encode("mat"), vec![0.25, -0.5]);
    }

    #[test]
    fn deterministic_and_context_sensitive() {
        let lm = tiny_lm();
        let a = lm.forward(&["the", "cat", "sat"]).unwrap();
        assert_eq!(a, lm.forward(&["the", "cat", "sat"]).unwrap());
        let b = lm.forward(&["the", "mat", "sat"]).unwrap();
        assert_ne!(a[0].layers[1], b[0].layers[1]);
        assert_ne!(a[2].layers[1], b[2].layers[1]);
        assert_eq!(a[0].layers[0], b[0].layers[0]);
    }

    #[test]
    fn batched_forward_matches_single() {
        let lm = tiny_lm();
        let a = vec!["the", "cat", "sat", "on"];
        let b = vec!["mat"];
        let batch = lm.forward_batch(&[a.clone(), b.clone()]).unwrap();
        let close = |x: &[LayeredEmbedding], y: &[LayeredEmbedding]| {
            x.iter().zip(y).all(|(p, q)| {
                (0..3).all(|j| {
                    p.layers[j]
                        .iter()
                        .zip(&q.layers[j])
                        .all(|(u, v)| (u - v).abs() < 1e-12)
                })
            })
        };
        assert!(close(&batch[0], &lm.forward(&a).unwrap()));
        assert!(close(&batch[1], &lm.forward(&b).unwrap()));
    }

    #[test]
    fn empty_sentence_rejected() {
        assert!(tiny_lm().forward(&[]).is_err());
    }

    #[test]
    fn char_cnn_gradients() {
        let lm = tiny_lm();
        let report = check_tape_gradients(
            lm.params(),
            |t| {
                let v = lm.encode_words(t, &["cat", "on", "x"]);
                let sq = t.mul(v, v);
                Ok(t.sum(sq))
            },
            1e-5,
            1e-4,
            None,
        )
        .unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn loss_gradients_two_token_sentence() {
        let lm = tiny_lm();
        let report = check_tape_gradients(
            lm.params(),
            |t| Ok(lm.loss(t, &[vec!["the", "cat"]]).0),
            1e-5,
            1e-4,
            None,
        )
        .unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn uniform_output_gives_vocab_perplexity() {
        let mut lm = tiny_lm();
        let softmax = lm.layout.softmax;
        lm.params.get_mut(softmax.weight).fill(0.0);
        lm.params.get_mut(softmax.bias).fill(0.0);
        let text = vec![
            vec!["the".to_string(), "cat".to_string()],
            vec!["dog".to_string()],
        ];
        let ppl = lm.perplexity(&text).unwrap();
        let v = lm.vocab().num_words() as f64;
        assert!((ppl - v).abs() / v < 0.01, "{ppl} vs {v}");
        assert!(lm.perplexity(&[]).is_err());
    }
}
