//! Bidirectional outfit LSTM: a forward model predicting the next item and
//! a backward model predicting the previous one, each with its own
//! parameters and softmax head, trained on canonically ordered sequences
//! with a stop token appended.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::catalog::{Catalog, Vocabulary, STOP_TOKEN};
use crate::nn::{Graph, LstmCell, Mode, NodeId, ParamStore, Tensor};
use crate::rng::derive_rng;
use crate::scoring::NextItemScorer;

use super::features::{InputEmbed, ItemFeatures, VocabReadout};
use super::{ModelConfig, ModelError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

pub struct LstmModel {
    pub config: ModelConfig,
    pub vocab: Arc<Vocabulary>,
    pub params: ParamStore,
    pub features: ItemFeatures,
    input: InputEmbed,
    fwd: LstmCell,
    bwd: LstmCell,
    readout_fwd: VocabReadout,
    readout_bwd: VocabReadout,
}

impl LstmModel {
    pub fn new(config: ModelConfig, vocab: Arc<Vocabulary>, catalog: &Catalog, init_seed: u64) -> Result<Self, ModelError> {
        let mut rng = derive_rng(init_seed, "init-lstm", &[]);
        let features = ItemFeatures::resolve(catalog, &vocab, &config.feature_spec)?;
        let d_item = config.feature_spec.item_dim();
        let hidden = config.lstm_hidden;
        let mut params = ParamStore::new();
        features.init_params(&mut params, &mut rng);
        let input = InputEmbed::init(&mut params, "lstm.in", d_item, config.d_model, &mut rng);
        let fwd = LstmCell::init(&mut params, "lstm.fwd", config.d_model, hidden, &mut rng);
        let bwd = LstmCell::init(&mut params, "lstm.bwd", config.d_model, hidden, &mut rng);
        let readout_fwd = VocabReadout::init(&mut params, "lstm.fwd.out", hidden, d_item, vocab.size(), &mut rng);
        let readout_bwd = VocabReadout::init(&mut params, "lstm.bwd.out", hidden, d_item, vocab.size(), &mut rng);
        Ok(Self { config, vocab, params, features, input, fwd, bwd, readout_fwd, readout_bwd })
    }

    fn cell(&self, dir: Direction) -> &LstmCell {
        match dir {
            Direction::Forward => &self.fwd,
            Direction::Backward => &self.bwd,
        }
    }

    fn readout(&self, dir: Direction) -> &VocabReadout {
        match dir {
            Direction::Forward => &self.readout_fwd,
            Direction::Backward => &self.readout_bwd,
        }
    }

    /// Hidden-state rows before each prediction step: h0, then the state
    /// after consuming each token. Returns [len+1 x hidden].
    fn unroll(&self, g: &mut Graph, f: NodeId, tokens: &[usize], dir: Direction, dropout: f64) -> NodeId {
        let cell = self.cell(dir);
        let mut state = cell.zero_state(g);
        let mut rows = vec![state.0];
        if !tokens.is_empty() {
            let gathered = g.gather_rows(f, tokens);
            let projected = self.input.project(g, gathered);
            for t in 0..tokens.len() {
                let x = g.gather_rows(projected, &[t]);
                state = cell.step(g, state, x);
                let h = if dropout > 0.0 { g.dropout(state.0, dropout) } else { state.0 };
                rows.push(h);
            }
        }
        g.concat_rows(&rows)
    }

    /// Eq-style bidirectional loss: mean forward NLL plus mean backward
    /// NLL, each direction predicting every item and finally the stop
    /// token. Sequences must be in canonical order and have >= 2 items.
    pub fn batch_loss<'p>(&'p self, g: &mut Graph<'p>, batch: &[&[usize]], train_dropout: bool) -> Result<NodeId, ModelError> {
        assert!(!batch.is_empty());
        let f = self.features.build_matrix(g);
        let dropout = if train_dropout { self.config.dropout } else { 0.0 };
        let mut loss_terms = Vec::with_capacity(2);
        for dir in [Direction::Forward, Direction::Backward] {
            let mut all_rows = Vec::new();
            let mut targets = Vec::new();
            let mut weights = Vec::new();
            for tokens in batch {
                if tokens.len() < 2 {
                    return Err(ModelError::SequenceTooShort { min: 2, got: tokens.len() });
                }
                let ordered: Vec<usize> = match dir {
                    Direction::Forward => tokens.to_vec(),
                    Direction::Backward => tokens.iter().rev().copied().collect(),
                };
                let steps = ordered.len() + 1;
                let w = 1.0 / (batch.len() * steps) as f64;
                // predict ordered[t] from the state after t consumed tokens
                let rows = self.unroll(g, f, &ordered, dir, dropout);
                all_rows.push(rows);
                for t in 0..steps {
                    targets.push(if t < ordered.len() { ordered[t] } else { STOP_TOKEN });
                    weights.push(w);
                }
            }
            let stacked = g.concat_rows(&all_rows);
            let logits = self.readout(dir).logits(g, stacked, f);
            loss_terms.push(g.cross_entropy(logits, &targets, &weights)?);
        }
        Ok(g.add(loss_terms[0], loss_terms[1]))
    }

    pub fn loss(&self, tokens: &[usize]) -> Result<f64, ModelError> {
        let mut g = Graph::new(&self.params, Mode::Eval);
        let loss = self.batch_loss(&mut g, &[tokens], false)?;
        Ok(g.value(loss).item())
    }

    /// Frozen autoregressive scorer. For the backward direction the prefix
    /// is interpreted in reversed space (last item first).
    pub fn frozen_features(&self) -> Arc<Tensor> {
        Arc::new(self.features.materialize(&self.params))
    }

    pub fn scorer(&self, direction: Direction) -> LstmScorer<'_> {
        self.scorer_with(self.frozen_features(), direction)
    }

    pub fn scorer_with(&self, features: Arc<Tensor>, direction: Direction) -> LstmScorer<'_> {
        LstmScorer { model: self, features, direction, passes: AtomicU64::new(0) }
    }
}

pub struct LstmScorer<'m> {
    model: &'m LstmModel,
    features: Arc<Tensor>,
    direction: Direction,
    passes: AtomicU64,
}

impl NextItemScorer for LstmScorer<'_> {
    fn next_logits(&self, prefix: &[usize]) -> Vec<f64> {
        self.passes.fetch_add(1, Ordering::Relaxed);
        let mut g = Graph::new(&self.model.params, Mode::Eval);
        let f = g.input_ref(&self.features);
        let rows = self.model.unroll(&mut g, f, prefix, self.direction, 0.0);
        let last = g.gather_rows(rows, &[prefix.len()]);
        let logits = self.model.readout(self.direction).logits(&mut g, last, f);
        g.value(logits).data.clone()
    }

    fn vocab_size(&self) -> usize {
        self.model.vocab.size()
    }

    fn forward_passes(&self) -> u64 {
        self.passes.load(Ordering::Relaxed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ModelFamily;
    use crate::synthgen::{generate_catalog, generate_outfits, StyleWorld};

    fn tiny_model() -> (LstmModel, Vec<Vec<usize>>) {
        let world = StyleWorld::default();
        let catalog = generate_catalog(&world, 60, 51).unwrap();
        let (outfits, _) = generate_outfits(&world, &catalog, 60, 52, None);
        let vocab = Vocabulary::build(&outfits, 1).unwrap();
        let mut config = ModelConfig::desk_default(ModelFamily::Lstm);
        config.d_model = 12;
        config.lstm_hidden = 10;
        let rank = crate::catalog::default_category_rank();
        let seqs: Vec<Vec<usize>> = outfits
            .iter()
            .map(|o| super::super::outfit_tokens(&o.items, &catalog, &vocab, &rank).unwrap())
            .collect();
        let model = LstmModel::new(config, Arc::new(vocab), &catalog, 79).unwrap();
        (model, seqs)
    }

    #[test]
    fn uniform_readout_gives_two_log_vocab() {
        let (mut model, seqs) = tiny_model();
        for dir in ["fwd", "bwd"] {
            for suffix in ["w", "b", "vocab_bias"] {
                model.params.get_mut(&format!("lstm.{dir}.out.{suffix}")).data.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let v = model.vocab.size() as f64;
        let loss = model.loss(&seqs[0]).unwrap();
        assert!((loss - 2.0 * v.ln()).abs() < 1e-12, "uniform bidirectional loss {loss} != 2 ln {v}");
    }

    #[test]
    fn loss_is_nonnegative_and_finite() {
        let (model, seqs) = tiny_model();
        for s in seqs.iter().take(10) {
            let l = model.loss(s).unwrap();
            assert!(l >= 0.0 && l.is_finite());
        }
    }

    #[test]
    fn sequences_shorter_than_two_are_rejected() {
        let (model, seqs) = tiny_model();
        assert!(matches!(model.loss(&seqs[0][..1]), Err(ModelError::SequenceTooShort { min: 2, got: 1 })));
    }

    #[test]
    fn gradcheck_full_lstm_loss() {
        use crate::nn::{grad_check, GradCheckOptions};
        let (mut model, seqs) = tiny_model();
        let sample: Vec<usize> = seqs.iter().find(|s| s.len() >= 3).unwrap().clone();
        let mut store = std::mem::take(&mut model.params);
        let forward = |params: &ParamStore| {
            let mut g = Graph::new(params, Mode::Eval);
            let loss = model.batch_loss(&mut g, &[&sample], false).unwrap();
            g.value(loss).item()
        };
        let grads = {
            let mut g = Graph::new(&store, Mode::Eval);
            let loss = model.batch_loss(&mut g, &[&sample], false).unwrap();
            g.backward(loss).unwrap()
        };
        let mut rng = derive_rng(7, "lstm-gc", &[]);
        grad_check(&mut store, forward, &grads, GradCheckOptions { max_components: Some(10), ..GradCheckOptions::default() }, &mut rng)
            .unwrap();
    }
}
