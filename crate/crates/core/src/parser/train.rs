use std::collections::BTreeSet;

use crate::corpus::{stratified_batches, Sentence, Side, Treebank};
use crate::error::{Error, Result};
use crate::numerics::{rng, Adam, Tape};

use super::{evaluate, AttachmentScores, Embedder, ParserConfig, ParserModel, SentenceInput};

/// Treebanks for one training run. All sources share the source side of
/// each batch; without a target the run is zero-target.
#[derive(Debug, Clone, Default)]
pub struct TrainingData<'a> {
    pub sources: Vec<&'a Treebank>,
    pub target: Option<&'a Treebank>,
    pub dev: Option<&'a Treebank>,
}

#[derive(Debug, Clone)]
pub struct ParserEpoch {
    pub epoch: usize,
    pub mean_loss: f64,
    pub dev: Option<AttachmentScores>,
}

#[derive(Debug, Clone, Default)]
pub struct ParserTrainReport {
    pub epochs: Vec<ParserEpoch>,
    /// Epoch whose parameters were kept (1-based).
    pub best_epoch: usize,
    pub stopped_early: bool,
}

/// Trains a parser on frozen representations from `embedder`. Parameters
/// from the epoch with the best dev LAS are kept; without dev data, the
/// final epoch's.
pub fn train_parser(
    data: &TrainingData,
    embedder: &Embedder,
    config: &ParserConfig,
    mut on_epoch: impl FnMut(&ParserEpoch),
) -> Result<(ParserModel, ParserTrainReport)> {
    config.validate()?;
    let source: Vec<&Sentence> = data
        .sources
        .iter()
        .flat_map(|t| t.sentences.iter())
        .collect();
    let target: Vec<&Sentence> = data
        .target
        .map_or(Vec::new(), |t| t.sentences.iter().collect());
    if source.is_empty() {
        return Err(Error::invalid(
            "parser training needs a nonempty source treebank",
        ));
    }
    let labels: Vec<String> = source
        .iter()
        .chain(&target)
        .flat_map(|s| s.labels.iter().cloned())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut model = ParserModel::new(
        config.clone(),
        labels,
        embedder.dim(),
        embedder.num_layers(),
        embedder.fingerprint(),
    )?;
    let src_inputs = embedder.embed_all(&source)?;
    let tgt_inputs = embedder.embed_all(&target)?;
    let dev_inputs = match data.dev {
        Some(dev) if !dev.is_empty() => {
            let refs: Vec<&Sentence> = dev.sentences.iter().collect();
            Some((dev, embedder.embed_all(&refs)?))
        }
        _ => None,
    };

    let mut optimizer = Adam::new(model.params(), config.learning_rate);
    let mut report = ParserTrainReport::default();
    let mut best_las = f64::NEG_INFINITY;
    let mut best_params = model.params().clone();
    let even_batch = config.batch_size.max(2) & !1;

    for epoch in 1..=config.epochs {
        let batches = stratified_batches(
            source.len(),
            target.len(),
            even_batch,
            &mut rng::derive(config.seed, &format!("parser-batches-{epoch}")),
        )?;
        let mut dropout = rng::derive(config.seed, &format!("parser-dropout-{epoch}"));
        let mut total = 0.0;
        for batch in &batches {
            let pick = |side: Side, i: usize| -> (&SentenceInput, &Sentence) {
                match side {
                    Side::Source => (&src_inputs[i], source[i]),
                    Side::Target => (&tgt_inputs[i], target[i]),
                }
            };
            let (inputs, golds): (Vec<&SentenceInput>, Vec<&Sentence>) =
                batch.items.iter().map(|it| pick(it.side, it.index)).unzip();
            let (loss, mut grads) = {
                let mut tape = Tape::new(model.params());
                let (sum, n) = model.loss_tape(&mut tape, &inputs, &golds, Some(&mut dropout));
                let mean = tape.scale(sum, 1.0 / n as f64);
                (tape.scalar(mean), tape.backward(mean))
            };
            if !loss.is_finite() || !grads.all_finite() {
                return Err(Error::data(format!(
                    "non-finite parser loss in epoch {epoch}"
                )));
            }
            grads.clip_global_norm(config.clip_norm);
            optimizer.step(model.params_mut(), &grads);
            total += loss;
        }
        let dev = match &dev_inputs {
            Some((tb, inputs)) => {
                let pred = model.parse_inputs(tb, inputs, config.dev_decoder)?;
                Some(evaluate(&pred, tb)?)
            }
            None => None,
        };
        let summary = ParserEpoch {
            epoch,
            mean_loss: total / batches.len().max(1) as f64,
            dev,
        };
        on_epoch(&summary);
        report.epochs.push(summary);
        match dev {
            Some(scores) => {
                if scores.las > best_las {
                    best_las = scores.las;
                    best_params = model.params().clone();
                    report.best_epoch = epoch;
                } else if epoch - report.best_epoch >= config.patience {
                    report.stopped_early = true;
                    break;
                }
            }
            None => report.best_epoch = epoch,
        }
    }
    if dev_inputs.is_some() && report.best_epoch > 0 {
        *model.params_mut() = best_params;
    }
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Split, VectorTable};
    use crate::numerics::Matrix;
    use crate::parser::Decoder;

    fn toy_treebank(language: &str, n: usize) -> Treebank {
        let sentences = (0..n)
            .map(|i| {
                let k = 2 + i % 3;
                let tokens: Vec<String> = (0..k)
                    .map(|j| format!("{language}{}", (i + j) % 7))
                    .collect();
                let heads = (0..k).map(|j| if j == 0 { 0 } else { j }).collect();
                let labels = (0..k)
                    .map(|j| if j == 0 { "root".into() } else { "dep".into() })
                    .collect();
                Sentence::new(tokens, heads, labels, language).unwrap()
            })
            .collect();
        Treebank::from_sentences(language, Split::Train, sentences).unwrap()
    }

    fn vectors(languages: &[&str]) -> Embedder {
        let words: Vec<String> = languages
            .iter()
            .flat_map(|l| (0..7).map(move |i| format!("{l}{i}")))
            .collect();
        let table = VectorTable::new(
            words.clone(),
            Matrix::randn(words.len(), 4, 1.0, &mut rng::seeded(1)),
        )
        .unwrap();
        Embedder::vectors(table)
    }

    fn config() -> ParserConfig {
        ParserConfig {
            lstm_size: 8,
            lstm_layers: 1,
            arc_mlp: 8,
            label_mlp: 4,
            batch_size: 8,
            epochs: 3,
            ..ParserConfig::default()
        }
    }

    #[test]
    fn zero_target_and_multi_source() {
        let a = toy_treebank("aa", 10);
        let b = toy_treebank("bb", 10);
        let c = toy_treebank("cc", 10);
        let emb = vectors(&["aa", "bb", "cc"]);
        let data = TrainingData {
            sources: vec![&a, &b, &c],
            ..Default::default()
        };
        let (model, report) = train_parser(&data, &emb, &config(), |_| {}).unwrap();
        assert_eq!(report.epochs.len(), 3);
        assert_eq!(model.labels(), ["dep", "root"]);
        let parsed = model.parse_treebank(&c, &emb, Decoder::Mst).unwrap();
        assert_eq!(parsed.len(), c.len());
    }

    #[test]
    fn empty_source_rejected() {
        let emb = vectors(&["aa"]);
        let empty = Treebank::new("aa", Split::Train);
        let data = TrainingData {
            sources: vec![&empty],
            ..Default::default()
        };
        assert!(train_parser(&data, &emb, &config(), |_| {}).is_err());
    }

    #[test]
    fn deterministic_and_embedder_untouched() {
        let a = toy_treebank("aa", 12);
        let t = toy_treebank("bb", 4);
        let emb = vectors(&["aa", "bb"]);
        let before = emb.fingerprint();
        let data = TrainingData {
            sources: vec![&a],
            target: Some(&t),
            dev: Some(&t),
        };
        let (m1, r1) = train_parser(&data, &emb, &config(), |_| {}).unwrap();
        let (m2, _) = train_parser(&data, &emb, &config(), |_| {}).unwrap();
        assert_eq!(m1.params(), m2.params());
        assert!(r1.epochs.iter().all(|e| e.dev.is_some()));
        assert_eq!(emb.fingerprint(), before);
    }
}
