//! Graph-based dependency parser: scalar-mixed word representations, a
//! multi-layer BiLSTM encoder, and biaffine arc and label scorers.

mod decode;
mod embed;
mod eval;
mod train;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Sentence, Treebank};
use crate::error::{Error, Result};
use crate::nn::{self, run_lstm, Linear, LstmCell, ScalarMix};
use crate::numerics::{rng, Matrix, ParamId, ParamStore, Tape, Var};

pub use decode::{greedy_decode, mst_decode, tree_score};
pub use embed::{Embedder, SentenceInput};
pub use eval::{evaluate, AttachmentScores};
pub use train::{train_parser, ParserEpoch, ParserTrainReport, TrainingData};

/// Added to the score of a token heading itself before the head softmax.
const SELF_ARC_PENALTY: f64 = -1e30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decoder {
    #[default]
    Mst,
    Greedy,
}

impl std::str::FromStr for Decoder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mst" => Ok(Decoder::Mst),
            "greedy" => Ok(Decoder::Greedy),
            other => Err(Error::invalid(format!("unknown decoder `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParserConfig {
    pub lstm_size: usize,
    pub lstm_layers: usize,
    pub arc_mlp: usize,
    pub label_mlp: usize,
    pub input_dropout: f64,
    /// Sentences per batch; split evenly between source and target when both
    /// are present.
    pub batch_size: usize,
    pub epochs: usize,
    /// Epochs without a dev LAS improvement before stopping.
    pub patience: usize,
    pub learning_rate: f64,
    pub clip_norm: f64,
    /// Decoder used for the per-epoch dev evaluation.
    pub dev_decoder: Decoder,
    pub seed: u64,
}

impl Default for ParserConfig {
    fn default() -> Self {
        ParserConfig {
            lstm_size: 100,
            lstm_layers: 3,
            arc_mlp: 125,
            label_mlp: 25,
            input_dropout: 0.3,
            batch_size: 80,
            epochs: 80,
            patience: 50,
            learning_rate: 0.001,
            clip_norm: 5.0,
            dev_decoder: Decoder::Greedy,
            seed: 1,
        }
    }
}

impl ParserConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lstm_size", self.lstm_size),
            ("lstm_layers", self.lstm_layers),
            ("arc_mlp", self.arc_mlp),
            ("label_mlp", self.label_mlp),
            ("batch_size", self.batch_size),
        ] {
            if v == 0 {
                return Err(Error::invalid(format!("parser.{name} must be positive")));
            }
        }
        if !(0.0..1.0).contains(&self.input_dropout) {
            return Err(Error::invalid("parser.input_dropout must lie in [0, 1)"));
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return Err(Error::invalid("parser.learning_rate must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Layout {
    mix_raw: ParamId,
    mix_gamma: ParamId,
    root: ParamId,
    /// `[forward, backward]` per layer.
    encoder: Vec<[LstmCell; 2]>,
    arc_head: Linear,
    arc_dep: Linear,
    label_head: Linear,
    label_dep: Linear,
    arc_u: ParamId,
    arc_b: ParamId,
    /// `label_mlp × (labels · label_mlp)`: one bilinear block per label.
    label_u: ParamId,
    label_w: ParamId,
    label_b: ParamId,
}

/// Scores of every candidate arc of one sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct ArcScores {
    /// `(n + 1) × n`: row = head (0 = root), column = dependent − 1.
    pub arcs: Matrix,
    /// `((n + 1) · n) × labels`: row `h · n + d − 1` scores arc `h → d`.
    pub labels: Matrix,
}

impl ArcScores {
    pub fn len(&self) -> usize {
        self.arcs.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Label scores of the arc `head → dep` (`dep` 1-based).
    pub fn label_scores(&self, head: usize, dep: usize) -> &[f64] {
        self.labels.row(head * self.len() + dep - 1)
    }
}

/// `heads · U · depsᵀ + heads · b`, one row per head and one column per
/// dependent.
pub fn biaffine_arc_scores(heads: &Matrix, deps: &Matrix, u: &Matrix, b: &Matrix) -> Matrix {
    let hb = heads.matmul(b);
    let mut s = heads.matmul(u).matmul_t(deps);
    for i in 0..s.rows() {
        let bias = hb[(i, 0)];
        s.row_mut(i).iter_mut().for_each(|x| *x += bias);
    }
    s
}

/// Mean per-token loss: cross-entropy over candidate heads (every other
/// position, root included) plus cross-entropy over labels at the gold head.
pub fn parse_loss(scores: &ArcScores, heads: &[usize], labels: &[usize]) -> Result<f64> {
    let n = scores.len();
    if heads.len() != n || labels.len() != n {
        return Err(Error::shape(format!(
            "{n} scored tokens but {} heads and {} labels",
            heads.len(),
            labels.len()
        )));
    }
    let nll = |row: &[f64], target: usize| {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        lse - row[target]
    };
    let mut total = 0.0;
    for d in 1..=n {
        let column: Vec<f64> = (0..=n)
            .map(|h| scores.arcs[(h, d - 1)] + if h == d { SELF_ARC_PENALTY } else { 0.0 })
            .collect();
        total += nll(&column, heads[d - 1]);
        total += nll(scores.label_scores(heads[d - 1], d), labels[d - 1]);
    }
    Ok(total / n as f64)
}

/// Recorded encoder pass over a batch.
pub(crate) struct Encoded {
    pub states: Var,
    /// Row of each sentence's root position; tokens follow it.
    pub offsets: Vec<usize>,
    pub lengths: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParserModel {
    config: ParserConfig,
    labels: Vec<String>,
    input_dim: usize,
    input_layers: usize,
    pub embedder_fingerprint: String,
    params: ParamStore,
    layout: Layout,
}

impl ParserModel {
    pub fn new(
        config: ParserConfig,
        labels: Vec<String>,
        input_dim: usize,
        input_layers: usize,
        embedder_fingerprint: String,
    ) -> Result<Self> {
        config.validate()?;
        if labels.is_empty() {
            return Err(Error::invalid("parser needs at least one label"));
        }
        if input_dim == 0 || input_layers == 0 {
            return Err(Error::invalid("parser input must be nonempty"));
        }
        let mut r = rng::derive(config.seed, "parser-init");
        let mut store = ParamStore::new();
        let mix_raw = store.add("mix.raw", Matrix::zeros(1, input_layers));
        let mix_gamma = store.add("mix.gamma", Matrix::filled(1, 1, 1.0));
        let root = store.add("root", Matrix::randn(1, input_dim, 0.1, &mut r));
        let h = config.lstm_size;
        let encoder = (0..config.lstm_layers)
            .map(|k| {
                let input = if k == 0 { input_dim } else { 2 * h };
                [
                    LstmCell::new(&mut store, &format!("enc{k}.fwd"), input, h, None, &mut r),
                    LstmCell::new(&mut store, &format!("enc{k}.bwd"), input, h, None, &mut r),
                ]
            })
            .collect();
        let (a, l, nl) = (config.arc_mlp, config.label_mlp, labels.len());
        let arc_head = Linear::new(&mut store, "arc.head", 2 * h, a, &mut r);
        let arc_dep = Linear::new(&mut store, "arc.dep", 2 * h, a, &mut r);
        let label_head = Linear::new(&mut store, "label.head", 2 * h, l, &mut r);
        let label_dep = Linear::new(&mut store, "label.dep", 2 * h, l, &mut r);
        let arc_u = store.add("arc.u", Matrix::randn(a, a, 1.0 / a as f64, &mut r));
        let arc_b = store.add("arc.b", Matrix::zeros(a, 1));
        let label_u = store.add("label.u", Matrix::randn(l, nl * l, 1.0 / l as f64, &mut r));
        let label_w = store.add(
            "label.w",
            Matrix::uniform(2 * l, nl, (6.0 / (2 * l + nl) as f64).sqrt(), &mut r),
        );
        let label_b = store.add("label.b", Matrix::zeros(1, nl));
        Ok(ParserModel {
            config,
            labels,
            input_dim,
            input_layers,
            embedder_fingerprint,
            params: store,
            layout: Layout {
                mix_raw,
                mix_gamma,
                root,
                encoder,
                arc_head,
                arc_dep,
                label_head,
                label_dep,
                arc_u,
                arc_b,
                label_u,
                label_w,
                label_b,
            },
        })
    }

    pub fn config(&self) -> &ParserConfig {
        &self.config
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label_id(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn input_layers(&self) -> usize {
        self.input_layers
    }

    /// Current layer weights and scale.
    pub fn scalar_mix(&self) -> ScalarMix {
        ScalarMix::new(
            self.params.get(self.layout.mix_raw).as_slice().to_vec(),
            self.params.get(self.layout.mix_gamma)[(0, 0)],
        )
    }

    pub fn set_scalar_mix(&mut self, mix: &ScalarMix) -> Result<()> {
        if mix.num_layers() != self.input_layers || !mix.excluded.is_empty() {
            return Err(Error::shape(format!(
                "mix over {} layers for a {}-layer input",
                mix.num_layers(),
                self.input_layers
            )));
        }
        *self.params.get_mut(self.layout.mix_raw) = Matrix::row_vector(&mix.raw);
        *self.params.get_mut(self.layout.mix_gamma) = Matrix::filled(1, 1, mix.gamma);
        Ok(())
    }

    fn check_input(&self, input: &SentenceInput) -> Result<()> {
        if input.layers.len() != self.input_layers
            || input
                .layers
                .iter()
                .any(|m| m.cols() != self.input_dim || m.rows() != input.len())
        {
            return Err(Error::shape(format!(
                "parser expects {} layers of width {}",
                self.input_layers, self.input_dim
            )));
        }
        if input.is_empty() {
            return Err(Error::invalid("cannot parse an empty sentence"));
        }
        Ok(())
    }

    /// Scalar mix of stacked token rows of all `inputs`.
    pub(crate) fn mix_tape(&self, tape: &mut Tape, inputs: &[&SentenceInput]) -> Var {
        let raw = tape.param(self.layout.mix_raw);
        let weights = tape.softmax_rows(raw);
        let mut mixed = None;
        for j in 0..self.input_layers {
            let parts: Vec<Var> = inputs
                .iter()
                .map(|s| tape.constant(s.layers[j].clone()))
                .collect();
            let layer = if parts.len() == 1 {
                parts[0]
            } else {
                tape.concat_rows(&parts)
            };
            let w = tape.slice_cols(weights, j, j + 1);
            let term = tape.mul_scalar(layer, w);
            mixed = Some(match mixed {
                Some(m) => tape.add(m, term),
                None => term,
            });
        }
        let gamma = tape.param(self.layout.mix_gamma);
        tape.mul_scalar(mixed.expect("at least one layer"), gamma)
    }

    /// Encoder states for every position (root first) of every sentence.
    pub(crate) fn encode_tape(
        &self,
        tape: &mut Tape,
        inputs: &[&SentenceInput],
        dropout: Option<&mut rng::Rng>,
    ) -> Encoded {
        let mixed = self.mix_tape(tape, inputs);
        let root = tape.param(self.layout.root);
        let table = tape.concat_rows(&[mixed, root]);
        let root_row = inputs.iter().map(|s| s.len()).sum::<usize>();
        let lengths: Vec<usize> = inputs.iter().map(|s| s.len() + 1).collect();
        let mut offsets = Vec::with_capacity(inputs.len());
        let mut index = Vec::with_capacity(root_row + inputs.len());
        let mut token_row = 0;
        for s in inputs {
            offsets.push(index.len());
            index.push(root_row);
            index.extend(token_row..token_row + s.len());
            token_row += s.len();
        }
        let mut x = tape.gather_rows(table, index);
        if let Some(r) = dropout {
            x = nn::dropout(tape, x, self.config.input_dropout, r);
        }
        let batch = inputs.len();
        let steps = lengths.iter().copied().max().unwrap_or(0);
        for cells in &self.layout.encoder {
            let mut xs_f = Vec::with_capacity(steps);
            let mut xs_b = Vec::with_capacity(steps);
            for t in 0..steps {
                let f: Vec<usize> = (0..batch)
                    .map(|b| offsets[b] + if t < lengths[b] { t } else { 0 })
                    .collect();
                let bw: Vec<usize> = (0..batch)
                    .map(|b| {
                        offsets[b]
                            + if t < lengths[b] {
                                lengths[b] - 1 - t
                            } else {
                                0
                            }
                    })
                    .collect();
                xs_f.push(tape.gather_rows(x, f));
                xs_b.push(tape.gather_rows(x, bw));
            }
            let hf = run_lstm(tape, &cells[0], &xs_f);
            let hb = run_lstm(tape, &cells[1], &xs_b);
            let hf = tape.concat_rows(&hf);
            let hb = tape.concat_rows(&hb);
            let mut rows_f = Vec::with_capacity(offsets.len());
            let mut rows_b = Vec::with_capacity(offsets.len());
            for b in 0..batch {
                for i in 0..lengths[b] {
                    rows_f.push(i * batch + b);
                    rows_b.push((lengths[b] - 1 - i) * batch + b);
                }
            }
            let f = tape.gather_rows(hf, rows_f);
            let bk = tape.gather_rows(hb, rows_b);
            x = tape.concat_cols(&[f, bk]);
        }
        Encoded {
            states: x,
            offsets,
            lengths,
        }
    }

    fn mlp(&self, tape: &mut Tape, layer: Linear, states: Var) -> Var {
        let z = layer.forward(tape, states);
        tape.relu(z)
    }

    /// Per-sentence `(n + 1) × n` arc scores and the label-MLP outputs for
    /// every position.
    pub(crate) fn score_tape(&self, tape: &mut Tape, enc: &Encoded) -> (Vec<Var>, Var, Var) {
        let l = &self.layout;
        let arc_h = self.mlp(tape, l.arc_head, enc.states);
        let arc_d = self.mlp(tape, l.arc_dep, enc.states);
        let lab_h = self.mlp(tape, l.label_head, enc.states);
        let lab_d = self.mlp(tape, l.label_dep, enc.states);
        let u = tape.param(l.arc_u);
        let bias = tape.param(l.arc_b);
        let arcs = enc
            .offsets
            .iter()
            .zip(&enc.lengths)
            .map(|(&off, &len)| {
                let heads = tape.slice_rows(arc_h, off, off + len);
                let deps = tape.slice_rows(arc_d, off + 1, off + len);
                let hu = tape.matmul(heads, u);
                let s = tape.matmul_t(hu, deps);
                let hb = tape.matmul(heads, bias);
                tape.add_col(s, hb)
            })
            .collect();
        (arcs, lab_h, lab_d)
    }

    /// Label logits for arcs given as `(head row, dependent row)` pairs of
    /// the label-MLP outputs.
    pub(crate) fn label_logits(
        &self,
        tape: &mut Tape,
        lab_h: Var,
        lab_d: Var,
        head_rows: Vec<usize>,
        dep_rows: Vec<usize>,
    ) -> Var {
        let l = &self.layout;
        let nl = self.labels.len();
        let hl = tape.gather_rows(lab_h, head_rows);
        let dl = tape.gather_rows(lab_d, dep_rows);
        let u = tape.param(l.label_u);
        let hu = tape.matmul(hl, u);
        let tiled = tape.tile_cols(dl, nl);
        let prod = tape.mul(hu, tiled);
        let bilinear = tape.sum_col_groups(prod, self.config.label_mlp);
        let both = tape.concat_cols(&[hl, dl]);
        let w = tape.param(l.label_w);
        let linear = tape.matmul(both, w);
        let sum = tape.add(bilinear, linear);
        let b = tape.param(l.label_b);
        tape.add_row(sum, b)
    }

    /// Summed head and label cross-entropy over a batch, and its token
    /// count. Gold labels outside the inventory contribute no label term.
    pub(crate) fn loss_tape(
        &self,
        tape: &mut Tape,
        inputs: &[&SentenceInput],
        golds: &[&Sentence],
        dropout: Option<&mut rng::Rng>,
    ) -> (Var, usize) {
        let enc = self.encode_tape(tape, inputs, dropout);
        let (arcs, lab_h, lab_d) = self.score_tape(tape, &enc);
        let mut terms = Vec::with_capacity(arcs.len() + 1);
        let mut head_rows = Vec::new();
        let mut dep_rows = Vec::new();
        let mut label_targets = Vec::new();
        for ((s, gold), &off) in arcs.into_iter().zip(golds).zip(&enc.offsets) {
            let n = gold.len();
            let logits = tape.transpose(s);
            let mask = tape.constant(Matrix::from_fn(n, n + 1, |d, h| {
                if h == d + 1 {
                    SELF_ARC_PENALTY
                } else {
                    0.0
                }
            }));
            let logits = tape.add(logits, mask);
            terms.push(tape.cross_entropy(logits, gold.heads.iter().map(|&h| Some(h)).collect()));
            for (i, (&h, label)) in gold.heads.iter().zip(&gold.labels).enumerate() {
                head_rows.push(off + h);
                dep_rows.push(off + i + 1);
                label_targets.push(self.label_id(label));
            }
        }
        let lab = self.label_logits(tape, lab_h, lab_d, head_rows, dep_rows);
        terms.push(tape.cross_entropy(lab, label_targets));
        let mut total = terms[0];
        for &t in &terms[1..] {
            total = tape.add(total, t);
        }
        let tokens = golds.iter().map(|g| g.len()).sum();
        (total, tokens)
    }

    /// Mean per-token loss over `golds`, for gradient checks and telemetry.
    pub fn loss(&self, tape: &mut Tape, inputs: &[&SentenceInput], golds: &[&Sentence]) -> Var {
        let (sum, n) = self.loss_tape(tape, inputs, golds, None);
        tape.scale(sum, 1.0 / n as f64)
    }

    /// Encoder states `(n + 1) × 2·lstm_size`, root first; dropout off.
    pub fn encode(&self, input: &SentenceInput) -> Result<Matrix> {
        self.check_input(input)?;
        let mut tape = Tape::new(&self.params);
        let enc = self.encode_tape(&mut tape, &[input], None);
        Ok(tape.value(enc.states).clone())
    }

    /// All arc and label scores of one sentence; dropout off.
    pub fn scores(&self, input: &SentenceInput) -> Result<ArcScores> {
        self.check_input(input)?;
        let mut tape = Tape::new(&self.params);
        let enc = self.encode_tape(&mut tape, &[input], None);
        let (arcs, lab_h, lab_d) = self.score_tape(&mut tape, &enc);
        let n = input.len();
        let mut heads = Vec::with_capacity((n + 1) * n);
        let mut deps = Vec::with_capacity((n + 1) * n);
        for h in 0..=n {
            for d in 1..=n {
                heads.push(h);
                deps.push(d);
            }
        }
        let labels = self.label_logits(&mut tape, lab_h, lab_d, heads, deps);
        let scores = ArcScores {
            arcs: tape.value(arcs[0]).clone(),
            labels: tape.value(labels).clone(),
        };
        scores.arcs.ensure_finite("arc scores")?;
        Ok(scores)
    }

    /// Heads (1-based, 0 = root) and labels for one sentence.
    pub fn parse(
        &self,
        input: &SentenceInput,
        decoder: Decoder,
    ) -> Result<(Vec<usize>, Vec<String>)> {
        Ok(self
            .parse_batch(&[input], decoder)?
            .pop()
            .expect("one sentence"))
    }

    /// [`ParserModel::parse`] over several sentences in one batched pass.
    pub fn parse_batch(
        &self,
        inputs: &[&SentenceInput],
        decoder: Decoder,
    ) -> Result<Vec<(Vec<usize>, Vec<String>)>> {
        for input in inputs {
            self.check_input(input)?;
        }
        if inputs.is_empty() {
            return Ok(Vec::new());
        }
        let mut tape = Tape::new(&self.params);
        let enc = self.encode_tape(&mut tape, inputs, None);
        let (arcs, lab_h, lab_d) = self.score_tape(&mut tape, &enc);
        let mut all_heads = Vec::with_capacity(inputs.len());
        let mut head_rows = Vec::new();
        let mut dep_rows = Vec::new();
        for (s, &off) in arcs.iter().zip(&enc.offsets) {
            let scores = tape.value(*s);
            scores.ensure_finite("arc scores")?;
            let heads = match decoder {
                Decoder::Mst => mst_decode(scores),
                Decoder::Greedy => greedy_decode(scores),
            };
            for (i, &h) in heads.iter().enumerate() {
                head_rows.push(off + h);
                dep_rows.push(off + i + 1);
            }
            all_heads.push(heads);
        }
        let logits = self.label_logits(&mut tape, lab_h, lab_d, head_rows, dep_rows);
        let logits = tape.value(logits);
        let mut row = 0;
        Ok(all_heads
            .into_iter()
            .map(|heads| {
                let labels = heads
                    .iter()
                    .map(|_| {
                        let scores = logits.row(row);
                        row += 1;
                        let best =
                            (0..scores.len())
                                .fold(0, |b, k| if scores[k] > scores[b] { k } else { b });
                        self.labels[best].clone()
                    })
                    .collect();
                (heads, labels)
            })
            .collect())
    }

    /// Parses every sentence of a treebank, keeping its tokens.
    pub fn parse_treebank(
        &self,
        treebank: &Treebank,
        embedder: &Embedder,
        decoder: Decoder,
    ) -> Result<Treebank> {
        let refs: Vec<&Sentence> = treebank.sentences.iter().collect();
        let inputs = embedder.embed_all(&refs)?;
        self.parse_inputs(treebank, &inputs, decoder)
    }

    pub(crate) fn parse_inputs(
        &self,
        treebank: &Treebank,
        inputs: &[SentenceInput],
        decoder: Decoder,
    ) -> Result<Treebank> {
        let mut sentences = Vec::with_capacity(treebank.len());
        for (chunk, golds) in inputs.chunks(32).zip(treebank.sentences.chunks(32)) {
            let refs: Vec<&SentenceInput> = chunk.iter().collect();
            for ((heads, labels), gold) in self.parse_batch(&refs, decoder)?.into_iter().zip(golds)
            {
                sentences.push(Sentence {
                    tokens: gold.tokens.clone(),
                    heads,
                    labels,
                    language: gold.language.clone(),
                });
            }
        }
        Ok(Treebank {
            language: treebank.language.clone(),
            split: treebank.split,
            sentences,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&serde_json::json!({
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "model": self,
        }))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Envelope {
            format: String,
            version: u32,
            model: ParserModel,
        }
        let env: Envelope = serde_json::from_str(text)
            .map_err(|e| Error::Checkpoint(format!("unreadable parser: {e}")))?;
        if env.format != CHECKPOINT_FORMAT || env.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "expected {CHECKPOINT_FORMAT} version {CHECKPOINT_VERSION}, found {} version {}",
                env.format, env.version
            )));
        }
        env.model.config.validate()?;
        if !env.model.params.all_finite() {
            return Err(Error::NonFinite("parser checkpoint"));
        }
        Ok(env.model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_json()?)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

const CHECKPOINT_FORMAT: &str = "xling-parser";
const CHECKPOINT_VERSION: u32 = 1;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::check_tape_gradients;

    pub(crate) fn tiny_config() -> ParserConfig {
        ParserConfig {
            lstm_size: 3,
            lstm_layers: 3,
            arc_mlp: 4,
            label_mlp: 2,
            ..ParserConfig::default()
        }
    }

    fn input(n: usize, layers: usize, dim: usize, seed: u64) -> SentenceInput {
        let mut r = rng::seeded(seed);
        SentenceInput {
            layers: (0..layers)
                .map(|_| Matrix::randn(n, dim, 1.0, &mut r))
                .collect(),
        }
    }

    fn sentence(heads: Vec<usize>, labels: &[&str]) -> Sentence {
        let n = heads.len();
        Sentence::new(
            (0..n).map(|i| format!("t{i}")).collect(),
            heads,
            labels.iter().map(|l| l.to_string()).collect(),
            "xx",
        )
        .unwrap()
    }

    fn model() -> ParserModel {
        ParserModel::new(
            tiny_config(),
            vec!["a".into(), "b".into(), "root".into()],
            4,
            3,
            String::new(),
        )
        .unwrap()
    }

    #[test]
    fn biaffine_hand_arithmetic() {
        let u = Matrix::identity(2);
        let b = Matrix::zeros(2, 1);
        let s = biaffine_arc_scores(
            &Matrix::row_vector(&[1.0, 2.0]),
            &Matrix::row_vector(&[3.0, 4.0]),
            &u,
            &b,
        );
        assert_eq!(s[(0, 0)], 11.0);
        let s = biaffine_arc_scores(
            &Matrix::row_vector(&[1.0, 0.0]),
            &Matrix::row_vector(&[0.0, 1.0]),
            &u,
            &b,
        );
        assert_eq!(s[(0, 0)], 0.0);
    }

    #[test]
    fn uniform_and_saturated_loss() {
        let n = 4;
        let uniform = ArcScores {
            arcs: Matrix::zeros(n + 1, n),
            labels: Matrix::zeros((n + 1) * n, 1),
        };
        let loss = parse_loss(&uniform, &[2, 0, 2, 3], &[0; 4]).unwrap();
        assert!((loss - (n as f64).ln()).abs() < 1e-12);

        let mut arcs = Matrix::zeros(n + 1, n);
        for (d, h) in [2, 0, 2, 3].into_iter().enumerate() {
            arcs[(h, d)] = 1e6;
        }
        let sat = ArcScores {
            arcs,
            labels: Matrix::zeros((n + 1) * n, 1),
        };
        assert!(parse_loss(&sat, &[2, 0, 2, 3], &[0; 4]).unwrap().abs() < 1e-9);
    }

    #[test]
    fn tape_loss_matches_value_loss() {
        let m = model();
        let x = input(3, 3, 4, 1);
        let gold = sentence(vec![2, 0, 2], &["a", "root", "b"]);
        let scores = m.scores(&x).unwrap();
        let ids: Vec<usize> = gold.labels.iter().map(|l| m.label_id(l).unwrap()).collect();
        let value = parse_loss(&scores, &gold.heads, &ids).unwrap();
        let mut tape = Tape::new(m.params());
        let v = m.loss(&mut tape, &[&x], &[&gold]);
        assert!((tape.scalar(v) - value).abs() < 1e-12);
    }

    #[test]
    fn encoder_shape_and_determinism() {
        let m = model();
        let x = input(5, 3, 4, 2);
        let a = m.encode(&x).unwrap();
        assert_eq!(a.shape(), (6, 6));
        assert_eq!(a, m.encode(&x).unwrap());
        assert!(m.encode(&input(2, 1, 4, 3)).is_err());
    }

    #[test]
    fn batched_parse_matches_single() {
        let m = model();
        let xs = [input(4, 3, 4, 4), input(1, 3, 4, 5), input(6, 3, 4, 6)];
        let refs: Vec<&SentenceInput> = xs.iter().collect();
        let batch = m.parse_batch(&refs, Decoder::Mst).unwrap();
        for (x, got) in xs.iter().zip(batch) {
            assert_eq!(got, m.parse(x, Decoder::Mst).unwrap());
            assert!(crate::corpus::check_tree(&got.0).is_ok());
        }
    }

    #[test]
    fn encoder_gradients() {
        let m = model();
        let x = input(2, 3, 4, 7);
        let report = check_tape_gradients(
            m.params(),
            |t| {
                let enc = m.encode_tape(t, &[&x], None);
                let sq = t.mul(enc.states, enc.states);
                Ok(t.sum(sq))
            },
            1e-6,
            1e-4,
            None,
        )
        .unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn parse_loss_gradients() {
        let m = model();
        let xs = [input(3, 3, 4, 8), input(2, 3, 4, 9)];
        let golds = [
            sentence(vec![2, 0, 2], &["a", "root", "b"]),
            sentence(vec![0, 1], &["root", "a"]),
        ];
        let report = check_tape_gradients(
            m.params(),
            |t| Ok(m.loss(t, &[&xs[0], &xs[1]], &[&golds[0], &golds[1]])),
            1e-5,
            1e-4,
            None,
        )
        .unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = model();
        let back = ParserModel::from_json(&m.to_json().unwrap()).unwrap();
        let x = input(3, 3, 4, 10);
        assert_eq!(back.scores(&x).unwrap(), m.scores(&x).unwrap());
    }
}
