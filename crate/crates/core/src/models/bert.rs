//! Masked transformer encoder over item sets, positional encoding and the
//! next-sentence task removed.
//!
//! One position per training instance is replaced by the mask token and
//! predicted from all remaining items (and the context token, appended at
//! the end, in the contextual variant). Without positions the encoder is
//! permutation-equivariant, so permuting the unmasked items leaves the
//! masked-slot distribution bit-identical.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::catalog::{Catalog, Vocabulary, MASK_TOKEN};
use crate::nn::{AttentionConfig, Graph, Mode, NodeId, ParamStore, Tensor, TransformerStack};
use crate::rng::derive_rng;
use crate::scoring::MaskedScorer;

use super::context::{ContextEncoder, ContextInput};
use super::features::{InputEmbed, ItemFeatures, VocabReadout};
use super::{ContextMode, ModelConfig, ModelError};

pub struct BertModel {
    pub config: ModelConfig,
    pub vocab: Arc<Vocabulary>,
    pub params: ParamStore,
    pub features: ItemFeatures,
    input: InputEmbed,
    encoder: TransformerStack,
    readout: VocabReadout,
    context: Option<ContextEncoder>,
}

impl BertModel {
    pub fn new(config: ModelConfig, vocab: Arc<Vocabulary>, catalog: &Catalog, init_seed: u64) -> Result<Self, ModelError> {
        let mut rng = derive_rng(init_seed, "init-bert", &[]);
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
        let input = InputEmbed::init(&mut params, "bert.in", d_item, config.d_model, &mut rng);
        let encoder = TransformerStack::init(&mut params, "bert.enc", &attn, false, &mut rng);
        let readout = VocabReadout::init(&mut params, "bert.out", config.d_model, d_item, vocab.size(), &mut rng);
        let context = (config.context_mode != ContextMode::None)
            .then(|| ContextEncoder::init(&mut params, "bert.ctx", d_item, &mut rng));
        Ok(Self { config, vocab, params, features, input, encoder, readout, context })
    }

    /// Encode tokens (with the mask token already in place) and return the
    /// readout row at `mask_pos`. A context row, when present, is appended
    /// after the items.
    fn encode_masked(&self, g: &mut Graph, f: NodeId, tokens: &[usize], mask_pos: usize, ctx: Option<&ContextInput>) -> NodeId {
        let item_rows = g.gather_rows(f, tokens);
        let rows = match (ctx, &self.context) {
            (Some(input), Some(encoder)) => {
                let ctx_row = encoder.encode(g, f, input);
                g.concat_rows(&[item_rows, ctx_row])
            }
            _ => item_rows,
        };
        let x = self.input.project(g, rows);
        let h = self.encoder.forward(g, x, None);
        g.gather_rows(h, &[mask_pos])
    }

    /// Batch loss: mean over samples of the masked-slot NLL. Each sample is
    /// (tokens, masked position, context); the token at the masked position
    /// is replaced by the mask token internally.
    pub fn batch_loss<'p>(&'p self, g: &mut Graph<'p>, batch: &[(&[usize], usize, Option<&ContextInput>)]) -> Result<NodeId, ModelError> {
        assert!(!batch.is_empty());
        let f = self.features.build_matrix(g);
        let mut rows = Vec::with_capacity(batch.len());
        let mut targets = Vec::with_capacity(batch.len());
        for (tokens, mask_pos, ctx) in batch {
            if tokens.len() < 2 {
                return Err(ModelError::SequenceTooShort { min: 2, got: tokens.len() });
            }
            if *mask_pos >= tokens.len() {
                return Err(ModelError::BadMaskPosition { pos: *mask_pos, len: tokens.len() });
            }
            let mut masked = tokens.to_vec();
            masked[*mask_pos] = MASK_TOKEN;
            rows.push(self.encode_masked(g, f, &masked, *mask_pos, *ctx));
            targets.push(tokens[*mask_pos]);
        }
        let stacked = g.concat_rows(&rows);
        let logits = self.readout.logits(g, stacked, f);
        Ok(g.cross_entropy_mean(logits, &targets)?)
    }

    /// NLL of the true item at one masked slot, conditioned on all other
    /// items (and context token if present). Masking the context token is
    /// impossible by construction: `mask_position` indexes outfit items
    /// only, anything past them is an error.
    pub fn loss(&self, tokens: &[usize], mask_position: usize, ctx: Option<&ContextInput>) -> Result<f64, ModelError> {
        let mut g = Graph::new(&self.params, Mode::Eval);
        let loss = self.batch_loss(&mut g, &[(tokens, mask_position, ctx)])?;
        Ok(g.value(loss).item())
    }

    pub fn frozen_features(&self) -> Arc<Tensor> {
        Arc::new(self.features.materialize(&self.params))
    }

    pub fn scorer(&self, ctx: Option<&ContextInput>) -> Result<BertScorer<'_>, ModelError> {
        self.scorer_with(self.frozen_features(), ctx)
    }

    pub fn scorer_with(&self, features: Arc<Tensor>, ctx: Option<&ContextInput>) -> Result<BertScorer<'_>, ModelError> {
        if ctx.is_some() && self.context.is_none() {
            return Err(ModelError::ConfigMismatch { family: "bert".into(), requirement: "a contextual configuration to bind context".into() });
        }
        let ctx_row = match (ctx, &self.context) {
            (Some(input), Some(encoder)) => Some(encoder.encode_frozen(&self.params, &features, input)),
            _ => None,
        };
        Ok(BertScorer { model: self, features, ctx_row, passes: AtomicU64::new(0) })
    }
}

/// Frozen BERT conditional: logits for a masked slot.
pub struct BertScorer<'m> {
    model: &'m BertModel,
    features: Arc<Tensor>,
    ctx_row: Option<Tensor>,
    passes: AtomicU64,
}

impl MaskedScorer for BertScorer<'_> {
    fn masked_logits(&self, tokens: &[usize], mask_pos: usize) -> Vec<f64> {
        assert!(mask_pos < tokens.len(), "mask position out of range");
        assert_eq!(tokens[mask_pos], MASK_TOKEN, "slot must hold the mask token");
        self.passes.fetch_add(1, Ordering::Relaxed);
        let mut g = Graph::new(&self.model.params, Mode::Eval);
        let f = g.input_ref(&self.features);
        let item_rows = g.gather_rows(f, tokens);
        let rows = match &self.ctx_row {
            Some(ctx) => {
                let c = g.input_ref(ctx);
                g.concat_rows(&[item_rows, c])
            }
            None => item_rows,
        };
        let x = self.model.input.project(&mut g, rows);
        let h = self.model.encoder.forward(&mut g, x, None);
        let row = g.gather_rows(h, &[mask_pos]);
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ModelFamily;
    use crate::synthgen::{generate_catalog, generate_outfits, StyleWorld};

    fn tiny_model(contextual: bool) -> (BertModel, Vec<Vec<usize>>) {
        let world = StyleWorld::default();
        let catalog = generate_catalog(&world, 60, 41).unwrap();
        let (outfits, _) = generate_outfits(&world, &catalog, 80, 42, None);
        let vocab = Vocabulary::build(&outfits, 1).unwrap();
        let mut config = ModelConfig::desk_default(if contextual { ModelFamily::CtxBert } else { ModelFamily::Bert });
        config.d_model = 16;
        config.num_layers = 2;
        config.num_heads = 2;
        let rank = crate::catalog::default_category_rank();
        let seqs: Vec<Vec<usize>> = outfits
            .iter()
            .map(|o| super::super::outfit_tokens(&o.items, &catalog, &vocab, &rank).unwrap())
            .collect();
        let model = BertModel::new(config, Arc::new(vocab), &catalog, 78).unwrap();
        (model, seqs)
    }

    #[test]
    fn uniform_readout_gives_log_vocab_loss() {
        let (mut model, seqs) = tiny_model(false);
        for name in ["bert.out.w", "bert.out.b", "bert.out.vocab_bias"] {
            model.params.get_mut(name).data.iter_mut().for_each(|v| *v = 0.0);
        }
        let v = model.vocab.size() as f64;
        let loss = model.loss(&seqs[0], 0, None).unwrap();
        assert!((loss - v.ln()).abs() < 1e-12);
    }

    #[test]
    fn masked_distribution_invariant_under_unmasked_permutation() {
        let (model, seqs) = tiny_model(false);
        let seq = seqs.iter().find(|s| s.len() >= 4).unwrap();
        let scorer = model.scorer(None).unwrap();
        // mask slot 1; permute the other items around it
        let a = {
            let mut t = seq.clone();
            t[1] = MASK_TOKEN;
            scorer.masked_logits(&t, 1)
        };
        let b = {
            // move the unmasked items around, keep the mask at a new slot
            let mut rest: Vec<usize> = seq.iter().enumerate().filter(|(i, _)| *i != 1).map(|(_, &t)| t).collect();
            rest.rotate_left(1);
            let mut t = vec![rest[0], rest[1], MASK_TOKEN];
            t.extend_from_slice(&rest[2..]);
            scorer.masked_logits(&t, 2)
        };
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.to_bits(), y.to_bits(), "masked-slot distribution must ignore item order");
        }
    }

    #[test]
    fn mask_position_out_of_range_is_usage_error() {
        let (model, seqs) = tiny_model(true);
        let seq = &seqs[0];
        // with a context the token after the items is the context slot;
        // masking it (or anything past the items) is rejected
        let err = model.loss(seq, seq.len(), None).unwrap_err();
        assert!(matches!(err, ModelError::BadMaskPosition { .. }));
    }

    #[test]
    fn contextual_bert_attends_to_context() {
        let (model, seqs) = tiny_model(true);
        let q = crate::catalog::Questionnaire {
            favorite_brands: vec!["b02".into()],
            favorite_colors: vec!["blue".into()],
            no_go_categories: vec![],
            gender: "men".into(),
            body_height_band: "average".into(),
            body_weight_band: "light".into(),
            occasion: "office".into(),
            price_band: "premium".into(),
            shoe_size_band: "42-44".into(),
            hair_color: "brown".into(),
            style_archetype: "street".into(),
        };
        let ctx = ContextInput::Questionnaire { field_slots: crate::models::questionnaire_slots(&q) };
        let mut masked = seqs[0].clone();
        masked[0] = MASK_TOKEN;
        let with_ctx = model.scorer(Some(&ctx)).unwrap().masked_logits(&masked, 0);
        let without = model.scorer(None).unwrap().masked_logits(&masked, 0);
        assert_ne!(with_ctx, without);
    }

    #[test]
    fn gradcheck_full_bert_loss() {
        use crate::nn::{grad_check, GradCheckOptions};
        let (mut model, seqs) = tiny_model(false);
        let sample: Vec<usize> = seqs.iter().find(|s| s.len() >= 3).unwrap().clone();
        let mut store = std::mem::take(&mut model.params);
        let forward = |params: &ParamStore| {
            let mut g = Graph::new(params, Mode::Eval);
            let loss = model.batch_loss(&mut g, &[(&sample, 1, None)]).unwrap();
            g.value(loss).item()
        };
        let grads = {
            let mut g = Graph::new(&store, Mode::Eval);
            let loss = model.batch_loss(&mut g, &[(&sample, 1, None)]).unwrap();
            g.backward(loss).unwrap()
        };
        let mut rng = derive_rng(6, "bert-gc", &[]);
        grad_check(&mut store, forward, &grads, GradCheckOptions { max_components: Some(12), ..GradCheckOptions::default() }, &mut rng)
            .unwrap();
    }
}
