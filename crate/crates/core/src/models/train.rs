//! Mini-batch training loop shared by all families.
//!
//! Every random choice (shuffling, GPT sequence permutations, BERT mask
//! positions, negative sampling, dropout) is drawn from a stream derived
//! from (seed, purpose, epoch, index), so training is bit-reproducible and
//! an interrupted run resumed from an epoch checkpoint finishes with the
//! same parameters as an uninterrupted one.

use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use crate::catalog::{Vocabulary, UNK_TOKEN};
use crate::nn::{Adam, Graph, Mode};
use crate::rng::derive_rng;

use super::siamese::SiameseExample;
use super::{Model, ModelError, TrainSample};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("loss became non-finite ({loss}) at epoch {epoch} step {step}; aborting")]
    NanLoss { epoch: usize, step: usize, loss: f64 },
    #[error("no trainable samples after filtering")]
    NoSamples,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("checkpoint callback: {0}")]
    Callback(String),
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub data_seed: u64,
    pub init_seed: u64,
    /// First epoch to run (non-zero when resuming from a checkpoint).
    pub start_epoch: usize,
}

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
}

/// Train in place. `on_epoch` runs after each completed epoch (checkpoint
/// hook); its error aborts training.
pub fn train_with_callback(
    model: &mut Model,
    samples: &[TrainSample],
    opts: &TrainOptions,
    mut on_epoch: impl FnMut(&Model, &EpochLog) -> Result<(), String>,
) -> Result<Vec<EpochLog>, TrainError> {
    let usable: Vec<&TrainSample> = samples
        .iter()
        .filter(|s| s.tokens.len() >= 2 && !s.tokens.iter().any(|&t| t == UNK_TOKEN))
        .collect();
    if usable.is_empty() {
        return Err(TrainError::NoSamples);
    }
    let adam = Adam::with_lr(opts.learning_rate);
    let mut logs = Vec::new();
    for epoch in opts.start_epoch..opts.epochs {
        let mut order: Vec<usize> = (0..usable.len()).collect();
        order.shuffle(&mut derive_rng(opts.data_seed, "epoch-shuffle", &[epoch as u64]));
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for (step, chunk) in order.chunks(opts.batch_size.max(1)).enumerate() {
            let dropout_rng = derive_rng(opts.init_seed, "dropout", &[epoch as u64, step as u64]);
            let loss = run_batch(model, &usable, chunk, epoch, opts, Mode::Train { dropout_rng })?;
            if !loss.is_finite() {
                return Err(TrainError::NanLoss { epoch, step, loss });
            }
            adam.step(model.params_mut());
            loss_sum += loss;
            batches += 1;
        }
        let log = EpochLog { epoch, mean_loss: loss_sum / batches.max(1) as f64 };
        on_epoch(model, &log).map_err(TrainError::Callback)?;
        logs.push(log);
    }
    Ok(logs)
}

pub fn train(model: &mut Model, samples: &[TrainSample], opts: &TrainOptions) -> Result<Vec<EpochLog>, TrainError> {
    train_with_callback(model, samples, opts, |_, _| Ok(()))
}

fn run_batch(
    model: &mut Model,
    samples: &[&TrainSample],
    chunk: &[usize],
    epoch: usize,
    opts: &TrainOptions,
    mode: Mode,
) -> Result<f64, TrainError> {
    let (grads, loss) = match model {
        Model::Gpt(m) => {
            // random permutation per sample per epoch: the FITB protocol
            // requires training on shuffled outfit orders
            let shuffled: Vec<(Vec<usize>, Option<&super::ContextInput>)> = chunk
                .iter()
                .map(|&i| {
                    let mut tokens = samples[i].tokens.clone();
                    tokens.shuffle(&mut derive_rng(opts.data_seed, "gpt-perm", &[epoch as u64, i as u64]));
                    (tokens, samples[i].context.as_ref())
                })
                .collect();
            let batch: Vec<(&[usize], Option<&super::ContextInput>)> =
                shuffled.iter().map(|(t, c)| (t.as_slice(), *c)).collect();
            let mut g = Graph::new(&m.params, mode);
            let loss = m.batch_loss(&mut g, &batch)?;
            let value = g.value(loss).item();
            (g.backward(loss).map_err(ModelError::from)?, value)
        }
        Model::Bert(m) => {
            let prepared: Vec<(&[usize], usize, Option<&super::ContextInput>)> = chunk
                .iter()
                .map(|&i| {
                    let tokens = samples[i].tokens.as_slice();
                    let mask_pos = derive_rng(opts.data_seed, "bert-mask", &[epoch as u64, i as u64]).gen_range(0..tokens.len());
                    (tokens, mask_pos, samples[i].context.as_ref())
                })
                .collect();
            let mut g = Graph::new(&m.params, mode);
            let loss = m.batch_loss(&mut g, &prepared)?;
            let value = g.value(loss).item();
            (g.backward(loss).map_err(ModelError::from)?, value)
        }
        Model::Lstm(m) => {
            let batch: Vec<&[usize]> = chunk.iter().map(|&i| samples[i].tokens.as_slice()).collect();
            let mut g = Graph::new(&m.params, mode);
            let loss = m.batch_loss(&mut g, &batch, true)?;
            let value = g.value(loss).item();
            (g.backward(loss).map_err(ModelError::from)?, value)
        }
        Model::Transformer(m) => {
            let batch = contextual_batch(samples, chunk, "transformer")?;
            let mut g = Graph::new(&m.params, mode);
            let loss = m.batch_loss(&mut g, &batch, false)?;
            let value = g.value(loss).item();
            (g.backward(loss).map_err(ModelError::from)?, value)
        }
        Model::S2s(m) => {
            let batch = contextual_batch(samples, chunk, "s2s_lstm")?;
            let mut g = Graph::new(&m.params, mode);
            let loss = m.batch_loss(&mut g, &batch, true, false)?;
            let value = g.value(loss).item();
            (g.backward(loss).map_err(ModelError::from)?, value)
        }
        Model::Siamese(m) => {
            let examples: Vec<SiameseExample> = chunk
                .iter()
                .map(|&i| {
                    let mut rng = derive_rng(opts.data_seed, "siamese-neg", &[epoch as u64, i as u64]);
                    let positive = samples[i].tokens.clone();
                    let n = positive.len();
                    let k = rng.gen_range(1..=n);
                    let mut positions: Vec<usize> = (0..n).collect();
                    positions.shuffle(&mut rng);
                    let mut negative = positive.clone();
                    for &pos in positions.iter().take(k) {
                        negative[pos] = random_item(&m.vocab, &negative, &mut rng);
                    }
                    let a = rng.gen_range(0..n);
                    let mut b = rng.gen_range(0..n - 1);
                    if b >= a {
                        b += 1;
                    }
                    let corrupt = random_item(&m.vocab, &positive[a..=a], &mut rng);
                    SiameseExample { pair_pos: (positive[a], positive[b]), pair_neg: (positive[a], corrupt), positive, negative }
                })
                .collect();
            let mut g = Graph::new(&m.params, mode);
            let loss = m.batch_loss(&mut g, &examples)?;
            let value = g.value(loss).item();
            (g.backward(loss).map_err(ModelError::from)?, value)
        }
    };
    model.params_mut().accumulate(&grads);
    Ok(loss)
}

fn contextual_batch<'a>(
    samples: &[&'a TrainSample],
    chunk: &[usize],
    family: &str,
) -> Result<Vec<(&'a [usize], &'a super::ContextInput)>, ModelError> {
    chunk
        .iter()
        .map(|&i| {
            let ctx = samples[i].context.as_ref().ok_or_else(|| ModelError::ConfigMismatch {
                family: family.to_string(),
                requirement: "an action-sequence context on every sample".into(),
            })?;
            Ok((samples[i].tokens.as_slice(), ctx))
        })
        .collect()
}

fn random_item(vocab: &Vocabulary, exclude: &[usize], rng: &mut rand_chacha::ChaCha8Rng) -> usize {
    loop {
        let idx = Vocabulary::FIRST_ITEM + rng.gen_range(0..vocab.num_items());
        if !exclude.contains(&idx) {
            return idx;
        }
    }
}
