//! Sequence-to-sequence LSTM: an encoder LSTM reads the user's action
//! sequence, a bidirectional pair of decoder LSTMs generates the outfit
//! (canonical category order) conditioned on the encoder's final state.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::catalog::{Catalog, Vocabulary, STOP_TOKEN};
use crate::nn::{Graph, LstmCell, Mode, NodeId, ParamStore, Tensor};
use crate::rng::derive_rng;
use crate::scoring::NextItemScorer;

use super::context::ContextInput;
use super::features::{InputEmbed, ItemFeatures, VocabReadout};
use super::lstm::Direction;
use super::{ModelConfig, ModelError, NUM_EVENT_TYPES};

pub struct S2sModel {
    pub config: ModelConfig,
    pub vocab: Arc<Vocabulary>,
    pub params: ParamStore,
    pub features: ItemFeatures,
    enc_in: InputEmbed,
    encoder: LstmCell,
    dec_in: InputEmbed,
    fwd: LstmCell,
    bwd: LstmCell,
    readout_fwd: VocabReadout,
    readout_bwd: VocabReadout,
}

impl S2sModel {
    pub fn new(config: ModelConfig, vocab: Arc<Vocabulary>, catalog: &Catalog, init_seed: u64) -> Result<Self, ModelError> {
        let mut rng = derive_rng(init_seed, "init-s2s", &[]);
        let features = ItemFeatures::resolve(catalog, &vocab, &config.feature_spec)?;
        let d_item = config.feature_spec.item_dim();
        let hidden = config.lstm_hidden;
        let mut params = ParamStore::new();
        features.init_params(&mut params, &mut rng);
        let enc_in = InputEmbed::init(&mut params, "s2s.enc_in", d_item + NUM_EVENT_TYPES + 1, config.d_model, &mut rng);
        let encoder = LstmCell::init(&mut params, "s2s.enc", config.d_model, hidden, &mut rng);
        let dec_in = InputEmbed::init(&mut params, "s2s.dec_in", d_item, config.d_model, &mut rng);
        let fwd = LstmCell::init(&mut params, "s2s.fwd", config.d_model, hidden, &mut rng);
        let bwd = LstmCell::init(&mut params, "s2s.bwd", config.d_model, hidden, &mut rng);
        let readout_fwd = VocabReadout::init(&mut params, "s2s.fwd.out", hidden, d_item, vocab.size(), &mut rng);
        let readout_bwd = VocabReadout::init(&mut params, "s2s.bwd.out", hidden, d_item, vocab.size(), &mut rng);
        Ok(Self { config, vocab, params, features, enc_in, encoder, dec_in, fwd, bwd, readout_fwd, readout_bwd })
    }

    /// Run the encoder over the action sequence and return its final
    /// (h, c) state.
    fn encode(&self, g: &mut Graph, f: NodeId, ctx: &ContextInput) -> Result<(NodeId, NodeId), ModelError> {
        let ContextInput::Actions { item_tokens, events, ages } = ctx else {
            return Err(ModelError::ConfigMismatch { family: "s2s_lstm".into(), requirement: "action-sequence context".into() });
        };
        if item_tokens.is_empty() {
            return Err(ModelError::EmptyActions);
        }
        let rows = g.gather_rows(f, item_tokens);
        let mut extra = Tensor::zeros(item_tokens.len(), NUM_EVENT_TYPES + 1);
        for (i, (&e, &a)) in events.iter().zip(ages).enumerate() {
            extra.row_mut(i)[e] = 1.0;
            extra.row_mut(i)[NUM_EVENT_TYPES] = a;
        }
        let extra = g.input(extra);
        let joined = g.concat_cols(&[rows, extra]);
        let x = self.enc_in.project(g, joined);
        let mut state = self.encoder.zero_state(g);
        for t in 0..item_tokens.len() {
            let row = g.gather_rows(x, &[t]);
            state = self.encoder.step(g, state, row);
        }
        Ok(state)
    }

    fn decoder_rows(&self, g: &mut Graph, f: NodeId, tokens: &[usize], dir: Direction, init: (NodeId, NodeId), dropout: f64) -> NodeId {
        let cell = match dir {
            Direction::Forward => &self.fwd,
            Direction::Backward => &self.bwd,
        };
        let mut state = init;
        let mut rows = vec![state.0];
        if !tokens.is_empty() {
            let gathered = g.gather_rows(f, tokens);
            let projected = self.dec_in.project(g, gathered);
            for t in 0..tokens.len() {
                let x = g.gather_rows(projected, &[t]);
                state = cell.step(g, state, x);
                let h = if dropout > 0.0 { g.dropout(state.0, dropout) } else { state.0 };
                rows.push(h);
            }
        }
        g.concat_rows(&rows)
    }

    /// Bidirectional decoder NLL conditioned on the encoder's final state:
    /// mean forward NLL plus mean backward NLL, each with a stop target.
    pub fn batch_loss<'p>(
        &'p self,
        g: &mut Graph<'p>,
        batch: &[(&[usize], &ContextInput)],
        train_dropout: bool,
        zero_state: bool,
    ) -> Result<NodeId, ModelError> {
        assert!(!batch.is_empty());
        let f = self.features.build_matrix(g);
        let dropout = if train_dropout { self.config.dropout } else { 0.0 };
        let mut loss_terms = Vec::new();
        for dir in [Direction::Forward, Direction::Backward] {
            let mut all_rows = Vec::new();
            let mut targets = Vec::new();
            let mut weights = Vec::new();
            for (tokens, ctx) in batch {
                let init = if zero_state {
                    let cell = match dir {
                        Direction::Forward => &self.fwd,
                        Direction::Backward => &self.bwd,
                    };
                    cell.zero_state(g)
                } else {
                    self.encode(g, f, ctx)?
                };
                let ordered: Vec<usize> = match dir {
                    Direction::Forward => tokens.to_vec(),
                    Direction::Backward => tokens.iter().rev().copied().collect(),
                };
                all_rows.push(self.decoder_rows(g, f, &ordered, dir, init, dropout));
                let steps = ordered.len() + 1;
                let w = 1.0 / (batch.len() * steps) as f64;
                for t in 0..steps {
                    targets.push(if t < ordered.len() { ordered[t] } else { STOP_TOKEN });
                    weights.push(w);
                }
            }
            let stacked = g.concat_rows(&all_rows);
            let readout = match dir {
                Direction::Forward => &self.readout_fwd,
                Direction::Backward => &self.readout_bwd,
            };
            let logits = readout.logits(g, stacked, f);
            loss_terms.push(g.cross_entropy(logits, &targets, &weights)?);
        }
        Ok(g.add(loss_terms[0], loss_terms[1]))
    }

    pub fn loss(&self, tokens: &[usize], ctx: &ContextInput) -> Result<f64, ModelError> {
        let mut g = Graph::new(&self.params, Mode::Eval);
        let loss = self.batch_loss(&mut g, &[(tokens, ctx)], false, false)?;
        Ok(g.value(loss).item())
    }

    /// Loss with the encoder state replaced by zeros (for the paired
    /// conditioning-ablation evaluation).
    pub fn loss_zero_state(&self, tokens: &[usize], ctx: &ContextInput) -> Result<f64, ModelError> {
        let mut g = Graph::new(&self.params, Mode::Eval);
        let loss = self.batch_loss(&mut g, &[(tokens, ctx)], false, true)?;
        Ok(g.value(loss).item())
    }

    pub fn frozen_features(&self) -> Arc<Tensor> {
        Arc::new(self.features.materialize(&self.params))
    }

    /// Frozen forward-decoder scorer conditioned on the user.
    pub fn scorer(&self, ctx: &ContextInput, direction: Direction) -> Result<S2sScorer<'_>, ModelError> {
        self.scorer_with(self.frozen_features(), ctx, direction)
    }

    pub fn scorer_with(&self, features: Arc<Tensor>, ctx: &ContextInput, direction: Direction) -> Result<S2sScorer<'_>, ModelError> {
        let (h, c) = {
            let mut g = Graph::new(&self.params, Mode::Eval);
            let f = g.input_ref(&features);
            let (h, c) = self.encode(&mut g, f, ctx)?;
            (g.value(h).clone(), g.value(c).clone())
        };
        Ok(S2sScorer { model: self, features, init: (h, c), direction, passes: AtomicU64::new(0) })
    }
}

pub struct S2sScorer<'m> {
    model: &'m S2sModel,
    features: Arc<Tensor>,
    init: (Tensor, Tensor),
    direction: Direction,
    passes: AtomicU64,
}

impl NextItemScorer for S2sScorer<'_> {
    fn next_logits(&self, prefix: &[usize]) -> Vec<f64> {
        self.passes.fetch_add(1, Ordering::Relaxed);
        let mut g = Graph::new(&self.model.params, Mode::Eval);
        let f = g.input_ref(&self.features);
        let h = g.input_ref(&self.init.0);
        let c = g.input_ref(&self.init.1);
        let rows = self.model.decoder_rows(&mut g, f, prefix, self.direction, (h, c), 0.0);
        let last = g.gather_rows(rows, &[prefix.len()]);
        let readout = match self.direction {
            Direction::Forward => &self.model.readout_fwd,
            Direction::Backward => &self.model.readout_bwd,
        };
        let logits = readout.logits(&mut g, last, f);
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
    use crate::models::{actions_context, ModelFamily};
    use crate::synthgen::{generate_catalog, generate_click_dataset, StyleWorld};

    fn tiny_model() -> (S2sModel, Vec<(Vec<usize>, ContextInput)>) {
        let world = StyleWorld::default();
        let catalog = generate_catalog(&world, 120, 71).unwrap();
        let records = generate_click_dataset(&world, &catalog, 80, 72);
        assert!(!records.is_empty());
        let outfits: Vec<crate::catalog::Outfit> =
            records.iter().map(|r| crate::catalog::Outfit::new(r.label_outfit.clone(), None)).collect();
        let vocab = Vocabulary::build(&outfits, 1).unwrap();
        let mut config = ModelConfig::desk_default(ModelFamily::S2sLstm);
        config.d_model = 12;
        config.lstm_hidden = 10;
        let rank = crate::catalog::default_category_rank();
        let samples: Vec<(Vec<usize>, ContextInput)> = records
            .iter()
            .map(|r| {
                let tokens = super::super::outfit_tokens(&r.label_outfit, &catalog, &vocab, &rank).unwrap();
                let ctx = actions_context(r.context.actions().unwrap(), &vocab);
                (tokens, ctx)
            })
            .collect();
        let model = S2sModel::new(config, Arc::new(vocab), &catalog, 81).unwrap();
        (model, samples)
    }

    #[test]
    fn uniform_decoders_give_two_log_vocab() {
        let (mut model, samples) = tiny_model();
        for dir in ["fwd", "bwd"] {
            for suffix in ["w", "b", "vocab_bias"] {
                model.params.get_mut(&format!("s2s.{dir}.out.{suffix}")).data.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let v = model.vocab.size() as f64;
        let (tokens, ctx) = &samples[0];
        let loss = model.loss(tokens, ctx).unwrap();
        assert!((loss - 2.0 * v.ln()).abs() < 1e-12);
    }

    #[test]
    fn encoder_state_changes_the_loss() {
        let (model, samples) = tiny_model();
        let (tokens, ctx) = &samples[0];
        let with = model.loss(tokens, ctx).unwrap();
        let zeroed = model.loss_zero_state(tokens, ctx).unwrap();
        assert_ne!(with, zeroed, "encoder conditioning must matter");
    }

    #[test]
    fn gradcheck_full_s2s_loss() {
        use crate::nn::{grad_check, GradCheckOptions};
        let (mut model, samples) = tiny_model();
        let (tokens, ctx) = samples.iter().find(|(t, _)| t.len() >= 3).cloned().unwrap();
        let mut store = std::mem::take(&mut model.params);
        let forward = |params: &ParamStore| {
            let mut g = Graph::new(params, Mode::Eval);
            let loss = model.batch_loss(&mut g, &[(&tokens, &ctx)], false, false).unwrap();
            g.value(loss).item()
        };
        let grads = {
            let mut g = Graph::new(&store, Mode::Eval);
            let loss = model.batch_loss(&mut g, &[(&tokens, &ctx)], false, false).unwrap();
            g.backward(loss).unwrap()
        };
        let mut rng = derive_rng(9, "s2s-gc", &[]);
        grad_check(&mut store, forward, &grads, GradCheckOptions { max_components: Some(6), ..GradCheckOptions::default() }, &mut rng)
            .unwrap();
    }
}
