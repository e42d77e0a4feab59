//! Scoring interfaces shared by evaluation and generation.
//!
//! Frozen models expose these; toy conditional tables in tests implement
//! them directly, which keeps the metric and sampler code independent of
//! the model stack.

/// Autoregressive conditional: logits over the vocabulary for the token
/// following `prefix`. Any bound user context lives inside the scorer.
pub trait NextItemScorer: Sync {
    fn next_logits(&self, prefix: &[usize]) -> Vec<f64>;
    fn vocab_size(&self) -> usize;
    /// Model forward passes performed so far; used to account generation
    /// cost. Scorers without an underlying network may leave this at zero.
    fn forward_passes(&self) -> u64 {
        0
    }
}

/// Masked conditional: logits for the slot `mask_pos` of `tokens`, where
/// `tokens[mask_pos]` is the mask token.
pub trait MaskedScorer: Sync {
    fn masked_logits(&self, tokens: &[usize], mask_pos: usize) -> Vec<f64>;
    fn vocab_size(&self) -> usize;
    fn forward_passes(&self) -> u64 {
        0
    }
}

/// Uniform scorer over a fixed support; handy as a metric oracle.
pub struct UniformScorer {
    pub vocab: usize,
}

impl NextItemScorer for UniformScorer {
    fn next_logits(&self, _prefix: &[usize]) -> Vec<f64> {
        vec![0.0; self.vocab]
    }

    fn vocab_size(&self) -> usize {
        self.vocab
    }
}

impl MaskedScorer for UniformScorer {
    fn masked_logits(&self, _tokens: &[usize], _mask_pos: usize) -> Vec<f64> {
        vec![0.0; self.vocab]
    }

    fn vocab_size(&self) -> usize {
        self.vocab
    }
}
