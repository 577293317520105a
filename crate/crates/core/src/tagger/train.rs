use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::TrainedModel;
use super::network::{Dims, Dropout, Network, OutputKind, Target};
use super::vocab::{build_vocab, Vocabularies};
use super::{TaggerError, TaskId, TrainConfig};
use crate::corpus::Sentence;
use crate::evaluation::subset_metrics;
use crate::nn::{clip_grad_norm, Adam, Graph, ParamStore};
use crate::preprocess::{apply_capitalization_noise, SplitSet};

const MAX_GRAD_NORM: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training loss per prediction.
    pub loss: f64,
    pub dev_score: f64,
    pub learning_rate: f64,
    pub improved: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Improved,
    Continue,
    DecayLearningRate,
    Stop,
}

/// Tracks dev scores across epochs. Only strict improvements count.
#[derive(Debug, Clone)]
pub struct PlateauTracker {
    lr_patience: usize,
    early_stop_patience: usize,
    best: Option<f64>,
    best_epoch: usize,
    bad_epochs: usize,
    since_decay: usize,
}

impl PlateauTracker {
    pub fn new(lr_patience: usize, early_stop_patience: usize) -> Self {
        PlateauTracker {
            lr_patience,
            early_stop_patience,
            best: None,
            best_epoch: 0,
            bad_epochs: 0,
            since_decay: 0,
        }
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best.map(|b| (self.best_epoch, b))
    }

    pub fn observe(&mut self, epoch: usize, score: f64) -> StepOutcome {
        if self.best.is_none_or(|b| score > b) {
            self.best = Some(score);
            self.best_epoch = epoch;
            self.bad_epochs = 0;
            self.since_decay = 0;
            return StepOutcome::Improved;
        }
        self.bad_epochs += 1;
        self.since_decay += 1;
        if self.bad_epochs >= self.early_stop_patience {
            StepOutcome::Stop
        } else if self.since_decay >= self.lr_patience {
            self.since_decay = 0;
            StepOutcome::DecayLearningRate
        } else {
            StepOutcome::Continue
        }
    }
}

pub(crate) fn network_dims(config: &TrainConfig, vocab: &Vocabularies) -> Dims {
    Dims {
        n_chars: vocab.chars.len(),
        cemb_size: config.cemb_size,
        cemb_layers: config.cemb_layers,
        hidden_size: config.hidden_size,
        output: if config.task.is_generative() {
            OutputKind::Lemma(vocab.output_size())
        } else {
            OutputKind::Classes(vocab.output_size())
        },
    }
}

enum EncodedTarget {
    Labels(Vec<usize>),
    Lemmas(Vec<Vec<usize>>),
}

impl EncodedTarget {
    fn items(&self) -> usize {
        match self {
            EncodedTarget::Labels(l) => l.len(),
            EncodedTarget::Lemmas(l) => l.iter().map(|c| c.len() + 1).sum(),
        }
    }

    fn as_target(&self) -> Target<'_> {
        match self {
            EncodedTarget::Labels(l) => Target::Labels(l),
            EncodedTarget::Lemmas(l) => Target::Lemmas(l),
        }
    }
}

fn encode_target(
    task: TaskId,
    vocab: &Vocabularies,
    sentence: &Sentence,
) -> Result<EncodedTarget, TaggerError> {
    if let Some(chars) = &vocab.lemma_chars {
        return Ok(EncodedTarget::Lemmas(
            sentence.tokens.iter().map(|t| chars.encode_chars(&t.lemma)).collect(),
        ));
    }
    let labels = vocab.labels.as_ref().expect("classifier vocabulary");
    sentence
        .tokens
        .iter()
        .map(|t| {
            let gold = task.gold_label(t)?;
            labels
                .get(&gold)
                .ok_or_else(|| TaggerError::InvalidConfig(format!("label `{gold}` not in vocabulary")))
        })
        .collect::<Result<_, _>>()
        .map(EncodedTarget::Labels)
}

/// Target metric of `model` on the dev sentences, over all tokens.
pub(crate) fn dev_score(model: &TrainedModel, dev: &[Sentence]) -> Result<f64, TaggerError> {
    let mut gold = Vec::new();
    let mut pred = Vec::new();
    for sentence in dev.iter().filter(|s| !s.is_empty()) {
        for t in &sentence.tokens {
            gold.push(model.config.task.gold_label(t)?);
        }
        pred.extend(model.predict_task(&sentence.forms())?);
    }
    let metrics = subset_metrics(&gold, &pred).expect("aligned by construction");
    Ok(metrics.get(model.config.target_metric))
}

/// Length-bucketed batches of sentence indices.
fn buckets(train: &[Sentence], batch_size: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..train.len()).filter(|&i| !train[i].is_empty()).collect();
    order.sort_by_key(|&i| (train[i].len(), i));
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

pub fn train(config: &TrainConfig, splits: &SplitSet) -> Result<TrainedModel, TaggerError> {
    train_with_observer(config, &splits.train, &splits.dev, |_| {})
}

/// Trains one task. `observer` sees every epoch record as it is produced.
/// The returned model holds the parameters of the best dev epoch.
pub fn train_with_observer(
    config: &TrainConfig,
    train: &[Sentence],
    dev: &[Sentence],
    mut observer: impl FnMut(&EpochRecord),
) -> Result<TrainedModel, TaggerError> {
    config.validate()?;
    if dev.iter().all(Sentence::is_empty) {
        return Err(TaggerError::EmptySplit("dev"));
    }
    let vocab = build_vocab(train, config.task, config.noise_probability > 0.0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = ParamStore::<f32>::new();
    let network = Network::build(network_dims(config, &vocab), &mut params, &mut rng);
    let mut grads = params.zeros_like();
    let mut adam = Adam::new(&params, config.learning_rate);

    let targets: Vec<EncodedTarget> = train
        .iter()
        .map(|s| encode_target(config.task, &vocab, s))
        .collect::<Result<_, _>>()?;
    let mut batches = buckets(train, config.batch_size);

    let mut model = TrainedModel::from_parts(config.clone(), vocab, network, params.clone(), Vec::new());
    let mut best = params.clone();
    let mut tracker = PlateauTracker::new(config.lr_patience, config.early_stop_patience);
    let mut log = Vec::new();

    for epoch in 1..=config.max_epochs {
        batches.shuffle(&mut rng);
        let mut total_loss = 0.0f64;
        let mut total_items = 0usize;
        for batch in &batches {
            let items: usize = batch.iter().map(|&i| targets[i].items()).sum();
            grads.fill_zero();
            for &i in batch {
                let noisy = apply_capitalization_noise(&train[i], config.noise_probability, &mut rng);
                let words: Vec<Vec<usize>> = noisy
                    .tokens
                    .iter()
                    .map(|t| model.vocab.chars.encode_chars(&t.form))
                    .collect();
                let mut g = Graph::new(&params);
                let mut drop = Dropout {
                    p: config.dropout,
                    rng: &mut rng,
                };
                let (loss, _) = model.network.loss(&mut g, &words, targets[i].as_target(), Some(&mut drop));
                let value = g.scalar(loss) as f64;
                if !value.is_finite() {
                    return Err(TaggerError::Diverged { epoch });
                }
                total_loss += value;
                g.backward(loss, 1.0 / items as f32, &mut grads);
            }
            total_items += items;
            clip_grad_norm(&mut grads, MAX_GRAD_NORM);
            adam.step(&mut params, &grads);
        }
        if !params.all_finite() {
            return Err(TaggerError::Diverged { epoch });
        }

        model.params = params.clone();
        let score = dev_score(&model, dev)?;
        let outcome = tracker.observe(epoch, score);
        let record = EpochRecord {
            epoch,
            loss: total_loss / total_items.max(1) as f64,
            dev_score: score,
            learning_rate: adam.learning_rate,
            improved: outcome == StepOutcome::Improved,
        };
        observer(&record);
        log.push(record);
        match outcome {
            StepOutcome::Improved => best = params.clone(),
            StepOutcome::DecayLearningRate => adam.learning_rate *= config.lr_decay,
            StepOutcome::Stop => break,
            StepOutcome::Continue => {}
        }
    }
    model.params = best;
    model.log = log;
    Ok(model)
}

/// Decoded predictions for every dev token; used by tests.
#[cfg(test)]
pub(crate) fn predict_all(model: &TrainedModel, sentences: &[Sentence]) -> Vec<String> {
    sentences
        .iter()
        .flat_map(|s| model.predict_task(&s.forms()).expect("non-empty"))
        .collect()
}
