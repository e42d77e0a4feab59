//! Encoder-decoder transformer for personalized generation: the encoder
//! reads the user's action sequence (item features, event-type one-hot,
//! normalized action age), the causal decoder emits the outfit conditioned
//! on it through cross-attention.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::catalog::{Catalog, Vocabulary, STOP_TOKEN};
use crate::nn::{AttentionConfig, Graph, Mode, NodeId, ParamStore, Tensor, TransformerStack};
use crate::rng::derive_rng;
use crate::scoring::NextItemScorer;

use super::context::ContextInput;
use super::features::{InputEmbed, ItemFeatures, VocabReadout};
use super::{ModelConfig, ModelError, NUM_EVENT_TYPES};

pub struct TransformerModel {
    pub config: ModelConfig,
    pub vocab: Arc<Vocabulary>,
    pub params: ParamStore,
    pub features: ItemFeatures,
    enc_in: InputEmbed,
    encoder: TransformerStack,
    dec_in: InputEmbed,
    decoder: TransformerStack,
    readout: VocabReadout,
}

impl TransformerModel {
    pub fn new(config: ModelConfig, vocab: Arc<Vocabulary>, catalog: &Catalog, init_seed: u64) -> Result<Self, ModelError> {
        let mut rng = derive_rng(init_seed, "init-transformer", &[]);
        let features = ItemFeatures::resolve(catalog, &vocab, &config.feature_spec)?;
        let d_item = config.feature_spec.item_dim();
        let mut params = ParamStore::new();
        features.init_params(&mut params, &mut rng);
        let enc_cfg = AttentionConfig {
            model_dim: config.d_model,
            num_heads: config.num_heads,
            num_layers: config.num_layers,
            dropout_rate: config.dropout,
            causal: false,
            use_positional_encoding: config.encoder_positional,
        };
        let dec_cfg = AttentionConfig { causal: true, use_positional_encoding: false, ..enc_cfg.clone() };
        let enc_in = InputEmbed::init(&mut params, "tfm.enc_in", d_item + NUM_EVENT_TYPES + 1, config.d_model, &mut rng);
        let encoder = TransformerStack::init(&mut params, "tfm.enc", &enc_cfg, false, &mut rng);
        let dec_in = InputEmbed::init(&mut params, "tfm.dec_in", d_item, config.d_model, &mut rng);
        let decoder = TransformerStack::init(&mut params, "tfm.dec", &dec_cfg, true, &mut rng);
        let readout = VocabReadout::init(&mut params, "tfm.out", config.d_model, d_item, vocab.size(), &mut rng);
        params.insert_uniform("tfm.bos", 1, d_item, 0.1, &mut rng);
        Ok(Self { config, vocab, params, features, enc_in, encoder, dec_in, decoder, readout })
    }

    /// Encode an action sequence into memory rows [t x d_model]. Each
    /// position is the item's feature row, the event-type one-hot and the
    /// normalized age, projected into model space.
    fn encode_actions(&self, g: &mut Graph, f: NodeId, ctx: &ContextInput) -> Result<NodeId, ModelError> {
        let ContextInput::Actions { item_tokens, events, ages } = ctx else {
            return Err(ModelError::ConfigMismatch { family: "transformer".into(), requirement: "action-sequence context".into() });
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
        Ok(self.encoder.forward(g, x, None))
    }

    /// Decoder readout rows for [bos | tokens]: one row per prediction
    /// step, [len+1 x d_model].
    fn decode(&self, g: &mut Graph, f: NodeId, tokens: &[usize], memory: NodeId) -> NodeId {
        let bos = g.param("tfm.bos");
        let rows = if tokens.is_empty() {
            bos
        } else {
            let items = g.gather_rows(f, tokens);
            g.concat_rows(&[bos, items])
        };
        let x = self.dec_in.project(g, rows);
        self.decoder.forward(g, x, Some(memory))
    }

    /// Mean NLL of every outfit item (and the stop token) conditioned on
    /// the previous items and the encoded user. With `mask_encoder` the
    /// encoder output is zeroed, severing the conditioning path.
    pub fn batch_loss<'p>(
        &'p self,
        g: &mut Graph<'p>,
        batch: &[(&[usize], &ContextInput)],
        mask_encoder: bool,
    ) -> Result<NodeId, ModelError> {
        assert!(!batch.is_empty());
        let f = self.features.build_matrix(g);
        let mut rows = Vec::new();
        let mut targets = Vec::new();
        let mut weights = Vec::new();
        for (tokens, ctx) in batch {
            let memory = self.encode_actions(g, f, ctx)?;
            let memory = if mask_encoder { g.scale(memory, 0.0) } else { memory };
            let out = self.decode(g, f, tokens, memory);
            rows.push(out);
            let steps = tokens.len() + 1;
            let w = 1.0 / (batch.len() * steps) as f64;
            for t in 0..steps {
                targets.push(if t < tokens.len() { tokens[t] } else { STOP_TOKEN });
                weights.push(w);
            }
        }
        let stacked = g.concat_rows(&rows);
        let logits = self.readout.logits(g, stacked, f);
        Ok(g.cross_entropy(logits, &targets, &weights)?)
    }

    pub fn loss(&self, tokens: &[usize], ctx: &ContextInput, mask_encoder: bool) -> Result<f64, ModelError> {
        let mut g = Graph::new(&self.params, Mode::Eval);
        let loss = self.batch_loss(&mut g, &[(tokens, ctx)], mask_encoder)?;
        Ok(g.value(loss).item())
    }

    /// The unconditional decoder: cross-attention sees a single zero
    /// memory row, exactly what a zeroed encoder output provides.
    pub fn decoder_only_loss(&self, tokens: &[usize]) -> Result<f64, ModelError> {
        let mut g = Graph::new(&self.params, Mode::Eval);
        let f = self.features.build_matrix(&mut g);
        let memory = g.input(Tensor::zeros(1, self.config.d_model));
        let out = self.decode(&mut g, f, tokens, memory);
        let steps = tokens.len() + 1;
        let mut targets: Vec<usize> = tokens.to_vec();
        targets.push(STOP_TOKEN);
        let w = vec![1.0 / steps as f64; steps];
        let logits = self.readout.logits(&mut g, out, f);
        let loss = g.cross_entropy(logits, &targets, &w)?;
        Ok(g.value(loss).item())
    }

    pub fn frozen_features(&self) -> Arc<Tensor> {
        Arc::new(self.features.materialize(&self.params))
    }

    /// Frozen scorer with the user's encoder memory precomputed.
    pub fn scorer(&self, ctx: &ContextInput) -> Result<TransformerScorer<'_>, ModelError> {
        self.scorer_with(self.frozen_features(), ctx)
    }

    pub fn scorer_with(&self, features: Arc<Tensor>, ctx: &ContextInput) -> Result<TransformerScorer<'_>, ModelError> {
        let memory = {
            let mut g = Graph::new(&self.params, Mode::Eval);
            let f = g.input_ref(&features);
            let m = self.encode_actions(&mut g, f, ctx)?;
            g.value(m).clone()
        };
        Ok(TransformerScorer { model: self, features, memory, passes: AtomicU64::new(0) })
    }
}

pub struct TransformerScorer<'m> {
    model: &'m TransformerModel,
    features: Arc<Tensor>,
    memory: Tensor,
    passes: AtomicU64,
}

impl NextItemScorer for TransformerScorer<'_> {
    fn next_logits(&self, prefix: &[usize]) -> Vec<f64> {
        self.passes.fetch_add(1, Ordering::Relaxed);
        let mut g = Graph::new(&self.model.params, Mode::Eval);
        let f = g.input_ref(&self.features);
        let memory = g.input_ref(&self.memory);
        let out = self.model.decode(&mut g, f, prefix, memory);
        let last = g.gather_rows(out, &[prefix.len()]);
        let logits = self.model.readout.logits(&mut g, last, f);
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

    fn tiny_model() -> (TransformerModel, Vec<(Vec<usize>, ContextInput)>) {
        let world = StyleWorld::default();
        let catalog = generate_catalog(&world, 120, 61).unwrap();
        let records = generate_click_dataset(&world, &catalog, 40, 62);
        assert!(!records.is_empty());
        let outfits: Vec<crate::catalog::Outfit> =
            records.iter().map(|r| crate::catalog::Outfit::new(r.label_outfit.clone(), None)).collect();
        let vocab = Vocabulary::build(&outfits, 1).unwrap();
        let mut config = ModelConfig::desk_default(ModelFamily::Transformer);
        config.d_model = 24;
        config.num_heads = 4;
        config.num_layers = 1;
        let rank = crate::catalog::default_category_rank();
        let samples: Vec<(Vec<usize>, ContextInput)> = records
            .iter()
            .map(|r| {
                let tokens = super::super::outfit_tokens(&r.label_outfit, &catalog, &vocab, &rank).unwrap();
                let ctx = actions_context(r.context.actions().unwrap(), &vocab);
                (tokens, ctx)
            })
            .collect();
        let model = TransformerModel::new(config, Arc::new(vocab), &catalog, 80).unwrap();
        (model, samples)
    }

    #[test]
    fn uniform_readout_gives_log_vocab() {
        let (mut model, samples) = tiny_model();
        for name in ["tfm.out.w", "tfm.out.b", "tfm.out.vocab_bias"] {
            model.params.get_mut(name).data.iter_mut().for_each(|v| *v = 0.0);
        }
        let v = model.vocab.size() as f64;
        let (tokens, ctx) = &samples[0];
        let loss = model.loss(tokens, ctx, false).unwrap();
        assert!((loss - v.ln()).abs() < 1e-12);
    }

    #[test]
    fn empty_action_sequence_is_an_error() {
        let (model, samples) = tiny_model();
        let (tokens, _) = &samples[0];
        let empty = ContextInput::Actions { item_tokens: vec![], events: vec![], ages: vec![] };
        assert!(matches!(model.loss(tokens, &empty, false), Err(ModelError::EmptyActions)));
    }

    #[test]
    fn masked_encoder_equals_decoder_only() {
        let (model, samples) = tiny_model();
        for (tokens, ctx) in samples.iter().take(5) {
            let masked = model.loss(tokens, ctx, true).unwrap();
            let dec_only = model.decoder_only_loss(tokens).unwrap();
            let rel = (masked - dec_only).abs() / dec_only.abs().max(1.0);
            assert!(rel < 1e-12, "masked-encoder loss {masked} != decoder-only {dec_only}");
        }
    }

    #[test]
    fn conditioning_changes_the_loss() {
        let (model, samples) = tiny_model();
        let (tokens, ctx) = &samples[0];
        let with = model.loss(tokens, ctx, false).unwrap();
        let without = model.loss(tokens, ctx, true).unwrap();
        assert_ne!(with, without);
    }

    #[test]
    fn gradcheck_full_transformer_loss() {
        use crate::nn::{grad_check, GradCheckOptions};
        let (mut model, samples) = tiny_model();
        let (tokens, ctx) = samples.iter().find(|(t, _)| t.len() >= 4).cloned().unwrap();
        let mut store = std::mem::take(&mut model.params);
        let forward = |params: &ParamStore| {
            let mut g = Graph::new(params, Mode::Eval);
            let loss = model.batch_loss(&mut g, &[(&tokens, &ctx)], false).unwrap();
            g.value(loss).item()
        };
        let grads = {
            let mut g = Graph::new(&store, Mode::Eval);
            let loss = model.batch_loss(&mut g, &[(&tokens, &ctx)], false).unwrap();
            g.backward(loss).unwrap()
        };
        let mut rng = derive_rng(8, "tfm-gc", &[]);
        grad_check(&mut store, forward, &grads, GradCheckOptions { max_components: Some(8), ..GradCheckOptions::default() }, &mut rng)
            .unwrap();
    }
}
