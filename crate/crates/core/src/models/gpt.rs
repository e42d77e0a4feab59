//! Autoregressive transformer over item sets, positional encoding removed.
//!
//! With positions gone, each next-item conditional depends only on the
//! unordered prefix. The decoder therefore encodes the prefix tokens with
//! full self-attention behind a learned start token (the user-context
//! embedding in the contextual variant) and reads the next-item logits at
//! the start slot. One forward pass per prediction step: an outfit of
//! length n is generated in n + 1 passes, the last one emitting stop.
//! Prefix permutations provoke bit-identical distributions.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::catalog::{Catalog, Vocabulary, STOP_TOKEN};
use crate::nn::{AttentionConfig, Graph, Mode, NodeId, ParamStore, Tensor, TransformerStack};
use crate::rng::derive_rng;
use crate::scoring::NextItemScorer;

use super::context::{ContextEncoder, ContextInput};
use super::features::{InputEmbed, ItemFeatures, VocabReadout};
use super::{ContextMode, ModelConfig, ModelError};

pub struct GptModel {
    pub config: ModelConfig,
    pub vocab: Arc<Vocabulary>,
    pub params: ParamStore,
    pub features: ItemFeatures,
    input: InputEmbed,
    encoder: TransformerStack,
    readout: VocabReadout,
    context: Option<ContextEncoder>,
}

impl GptModel {
    pub fn new(config: ModelConfig, vocab: Arc<Vocabulary>, catalog: &Catalog, init_seed: u64) -> Result<Self, ModelError> {
        let mut rng = derive_rng(init_seed, "init-gpt", &[]);
        let features = ItemFeatures::resolve(catalog, &vocab, &config.feature_spec)?;
        let d_item = config.feature_spec.item_dim();
        let mut params = ParamStore::new();
        features.init_params(&mut params, &mut rng);
        let attn = AttentionConfig {
            model_dim: config.d_model,
            num_heads: config.num_heads,
            num_layers: config.num_layers,
            dropout_rate: config.dropout,
            causal: false,
            use_positional_encoding: false,
        };
        let input = InputEmbed::init(&mut params, "gpt.in", d_item, config.d_model, &mut rng);
        let encoder = TransformerStack::init(&mut params, "gpt.enc", &attn, false, &mut rng);
        let readout = VocabReadout::init(&mut params, "gpt.out", config.d_model, d_item, vocab.size(), &mut rng);
        params.insert_uniform("gpt.start", 1, d_item, 0.1, &mut rng);
        let context = (config.context_mode != ContextMode::None)
            .then(|| ContextEncoder::init(&mut params, "gpt.ctx", d_item, &mut rng));
        Ok(Self { config, vocab, params, features, input, encoder, readout, context })
    }

    fn start_row(&self, g: &mut Graph, f: NodeId, ctx: Option<&ContextInput>) -> NodeId {
        match (ctx, &self.context) {
            (Some(input), Some(encoder)) => encoder.encode(g, f, input),
            _ => g.param("gpt.start"),
        }
    }

    /// Encode [start | prefix] and return the readout row at the start
    /// slot, [1 x d_model].
    fn encode_prefix(&self, g: &mut Graph, f: NodeId, start_row: NodeId, prefix: &[usize]) -> NodeId {
        let rows = if prefix.is_empty() {
            start_row
        } else {
            let items = g.gather_rows(f, prefix);
            g.concat_rows(&[start_row, items])
        };
        let x = self.input.project(g, rows);
        let h = self.encoder.forward(g, x, None);
        g.gather_rows(h, &[0])
    }

    /// Batch loss: for every sample, the mean NLL over all next-item steps
    /// including the stop target, averaged over the batch. Token order
    /// within each sample should be shuffled per epoch by the trainer.
    pub fn batch_loss<'p>(&'p self, g: &mut Graph<'p>, batch: &[(&[usize], Option<&ContextInput>)]) -> Result<NodeId, ModelError> {
        assert!(!batch.is_empty());
        let f = self.features.build_matrix(g);
        let mut rows = Vec::new();
        let mut targets = Vec::new();
        let mut weights = Vec::new();
        for (tokens, ctx) in batch {
            let start = self.start_row(g, f, *ctx);
            let steps = tokens.len() + 1;
            let w = 1.0 / (batch.len() * steps) as f64;
            for t in 0..steps {
                rows.push(self.encode_prefix(g, f, start, &tokens[..t]));
                targets.push(if t < tokens.len() { tokens[t] } else { STOP_TOKEN });
                weights.push(w);
            }
        }
        let stacked = g.concat_rows(&rows);
        let logits = self.readout.logits(g, stacked, f);
        Ok(g.cross_entropy(logits, &targets, &weights)?)
    }

    /// Single-outfit loss (evaluation mode): mean next-item NLL over the
    /// sequence plus the stop step. With a context, the conditioning token
    /// occupies the start slot and is never a prediction target.
    pub fn loss(&self, tokens: &[usize], ctx: Option<&ContextInput>) -> Result<f64, ModelError> {
        if tokens.is_empty() {
            return Err(ModelError::SequenceTooShort { min: 1, got: 0 });
        }
        let mut g = Graph::new(&self.params, Mode::Eval);
        let loss = self.batch_loss(&mut g, &[(tokens, ctx)])?;
        Ok(g.value(loss).item())
    }

    /// Materialize the feature matrix once for a batch of scorers.
    pub fn frozen_features(&self) -> Arc<Tensor> {
        Arc::new(self.features.materialize(&self.params))
    }

    /// Frozen scorer with the context (if any) bound.
    pub fn scorer(&self, ctx: Option<&ContextInput>) -> Result<GptScorer<'_>, ModelError> {
        self.scorer_with(self.frozen_features(), ctx)
    }

    pub fn scorer_with(&self, features: Arc<Tensor>, ctx: Option<&ContextInput>) -> Result<GptScorer<'_>, ModelError> {
        if ctx.is_some() && self.context.is_none() {
            return Err(ModelError::ConfigMismatch { family: "gpt".into(), requirement: "a contextual configuration to bind context".into() });
        }
        let start_row = match (ctx, &self.context) {
            (Some(input), Some(encoder)) => encoder.encode_frozen(&self.params, &features, input),
            _ => self.params.get("gpt.start").clone(),
        };
        Ok(GptScorer { model: self, features, start_row, passes: AtomicU64::new(0) })
    }
}

/// Frozen GPT with materialized features; one forward pass per
/// `next_logits` call.
pub struct GptScorer<'m> {
    model: &'m GptModel,
    features: Arc<Tensor>,
    start_row: Tensor,
    passes: AtomicU64,
}

impl NextItemScorer for GptScorer<'_> {
    fn next_logits(&self, prefix: &[usize]) -> Vec<f64> {
        self.passes.fetch_add(1, Ordering::Relaxed);
        let mut g = Graph::new(&self.model.params, Mode::Eval);
        let f = g.input_ref(&self.features);
        let start = g.input_ref(&self.start_row);
        let row = self.model.encode_prefix(&mut g, f, start, prefix);
        let logits = self.model.readout.logits(&mut g, row, f);
        g.value(logits).data.clone()
    }

    fn vocab_size(&self) -> usize {
        self.model.vocab.size()
    }

    fn forward_passes(&self) -> u64 {
        self.passes.load(Ordering::Relaxed)
    }
}
