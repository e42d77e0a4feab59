//! Layers used by the model families: dense, layer norm, multi-head
//! attention, transformer blocks and the LSTM cell.
//!
//! A layer owns no tensors, only parameter names. `init` registers its
//! parameters in a [`ParamStore`]; `forward` records ops on a [`Graph`].

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::functional::positional_encoding;
use super::graph::{Graph, NodeId};
use super::optim::ParamStore;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("model_dim {model_dim} not divisible by num_heads {num_heads}")]
    HeadsDivideDim { model_dim: usize, num_heads: usize },
    #[error("dropout rate {0} outside [0,1)")]
    DropoutRange(f64),
    #[error("{0}")]
    Invalid(String),
}

/// Hyperparameters of an attention stack.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttentionConfig {
    pub model_dim: usize,
    pub num_heads: usize,
    pub num_layers: usize,
    pub dropout_rate: f64,
    pub causal: bool,
    /// The outfit encoders/decoders are set models and keep this off;
    /// only the action-sequence encoder may switch it on.
    pub use_positional_encoding: bool,
}

impl AttentionConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.model_dim == 0 || self.num_heads == 0 || self.model_dim % self.num_heads != 0 {
            return Err(ConfigError::HeadsDivideDim { model_dim: self.model_dim, num_heads: self.num_heads });
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(ConfigError::DropoutRange(self.dropout_rate));
        }
        Ok(())
    }
}

/// x @ W + b.
#[derive(Debug, Clone)]
pub struct Dense {
    w: String,
    b: String,
}

impl Dense {
    pub fn init(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        store.insert_dense(&format!("{name}.w"), fan_in, fan_out, rng);
        store.insert_zeros(&format!("{name}.b"), 1, fan_out);
        Self { w: format!("{name}.w"), b: format!("{name}.b") }
    }

    pub fn forward(&self, g: &mut Graph, x: NodeId) -> NodeId {
        let w = g.param(&self.w);
        let b = g.param(&self.b);
        let y = g.matmul(x, w);
        g.add_bias(y, b)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNormLayer {
    gain: String,
    bias: String,
}

impl LayerNormLayer {
    pub fn init(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        store.insert(&format!("{name}.gain"), super::tensor::Tensor::new(1, dim, vec![1.0; dim]));
        store.insert_zeros(&format!("{name}.bias"), 1, dim);
        Self { gain: format!("{name}.gain"), bias: format!("{name}.bias") }
    }

    pub fn forward(&self, g: &mut Graph, x: NodeId) -> NodeId {
        let gain = g.param(&self.gain);
        let bias = g.param(&self.bias);
        g.layer_norm(x, gain, bias)
    }
}

/// Multi-head scaled dot-product attention with projections.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    wq: Dense,
    wk: Dense,
    wv: Dense,
    wo: Dense,
    num_heads: usize,
    head_dim: usize,
}

impl MultiHeadAttention {
    pub fn init(store: &mut ParamStore, name: &str, model_dim: usize, num_heads: usize, rng: &mut impl Rng) -> Self {
        assert_eq!(model_dim % num_heads, 0);
        Self {
            wq: Dense::init(store, &format!("{name}.wq"), model_dim, model_dim, rng),
            wk: Dense::init(store, &format!("{name}.wk"), model_dim, model_dim, rng),
            wv: Dense::init(store, &format!("{name}.wv"), model_dim, model_dim, rng),
            wo: Dense::init(store, &format!("{name}.wo"), model_dim, model_dim, rng),
            num_heads,
            head_dim: model_dim / num_heads,
        }
    }

    /// Self- or cross-attention: queries from `x`, keys/values from `kv`.
    pub fn forward(&self, g: &mut Graph, x: NodeId, kv: NodeId, causal: bool) -> NodeId {
        let q = self.wq.forward(g, x);
        let k = self.wk.forward(g, kv);
        let v = self.wv.forward(g, kv);
        let mut heads = Vec::with_capacity(self.num_heads);
        for h in 0..self.num_heads {
            let from = h * self.head_dim;
            let to = from + self.head_dim;
            let qh = g.slice_cols(q, from, to);
            let kh = g.slice_cols(k, from, to);
            let vh = g.slice_cols(v, from, to);
            heads.push(g.attention_pool(qh, kh, vh, causal));
        }
        let cat = g.concat_cols(&heads);
        self.wo.forward(g, cat)
    }
}

/// Pre-norm transformer block with optional cross-attention sublayer.
#[derive(Debug, Clone)]
pub struct TransformerBlock {
    ln1: LayerNormLayer,
    attn: MultiHeadAttention,
    cross: Option<(LayerNormLayer, MultiHeadAttention)>,
    ln2: LayerNormLayer,
    ff1: Dense,
    ff2: Dense,
    dropout: f64,
}

impl TransformerBlock {
    pub fn init(store: &mut ParamStore, name: &str, cfg: &AttentionConfig, with_cross: bool, rng: &mut impl Rng) -> Self {
        let d = cfg.model_dim;
        Self {
            ln1: LayerNormLayer::init(store, &format!("{name}.ln1"), d),
            attn: MultiHeadAttention::init(store, &format!("{name}.attn"), d, cfg.num_heads, rng),
            cross: with_cross.then(|| {
                (
                    LayerNormLayer::init(store, &format!("{name}.lnx"), d),
                    MultiHeadAttention::init(store, &format!("{name}.cross"), d, cfg.num_heads, rng),
                )
            }),
            ln2: LayerNormLayer::init(store, &format!("{name}.ln2"), d),
            ff1: Dense::init(store, &format!("{name}.ff1"), d, 4 * d, rng),
            ff2: Dense::init(store, &format!("{name}.ff2"), 4 * d, d, rng),
            dropout: cfg.dropout_rate,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: NodeId, memory: Option<NodeId>, causal: bool) -> NodeId {
        let normed = self.ln1.forward(g, x);
        let attn = self.attn.forward(g, normed, normed, causal);
        let attn = g.dropout(attn, self.dropout);
        let mut x = g.add(x, attn);
        if let Some((ln, cross)) = &self.cross {
            let memory = memory.expect("decoder block requires encoder memory");
            let normed = ln.forward(g, x);
            let att = cross.forward(g, normed, memory, false);
            let att = g.dropout(att, self.dropout);
            x = g.add(x, att);
        }
        let normed = self.ln2.forward(g, x);
        let h = self.ff1.forward(g, normed);
        let h = g.relu(h);
        let h = self.ff2.forward(g, h);
        let h = g.dropout(h, self.dropout);
        g.add(x, h)
    }
}

/// A stack of transformer blocks with a final layer norm.
#[derive(Debug, Clone)]
pub struct TransformerStack {
    blocks: Vec<TransformerBlock>,
    final_ln: LayerNormLayer,
    cfg: AttentionConfig,
}

impl TransformerStack {
    pub fn init(store: &mut ParamStore, name: &str, cfg: &AttentionConfig, with_cross: bool, rng: &mut impl Rng) -> Self {
        cfg.validate().expect("invalid attention config");
        let blocks = (0..cfg.num_layers)
            .map(|i| TransformerBlock::init(store, &format!("{name}.block{i}"), cfg, with_cross, rng))
            .collect();
        Self { blocks, final_ln: LayerNormLayer::init(store, &format!("{name}.ln_out"), cfg.model_dim), cfg: cfg.clone() }
    }

    pub fn forward(&self, g: &mut Graph, x: NodeId, memory: Option<NodeId>) -> NodeId {
        let mut x = if self.cfg.use_positional_encoding {
            let pe = positional_encoding(g.value(x).rows, self.cfg.model_dim);
            let pe = g.input(pe);
            g.add(x, pe)
        } else {
            x
        };
        for b in &self.blocks {
            x = b.forward(g, x, memory, self.cfg.causal);
        }
        self.final_ln.forward(g, x)
    }
}

/// Standard LSTM cell. Gate layout on the 4H axis: input, forget, output,
/// candidate.
#[derive(Debug, Clone)]
pub struct LstmCell {
    wx: String,
    wh: String,
    b: String,
    pub hidden: usize,
}

impl LstmCell {
    pub fn init(store: &mut ParamStore, name: &str, input_dim: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let limit = 1.0 / (hidden as f64).sqrt();
        store.insert_uniform(&format!("{name}.wx"), input_dim, 4 * hidden, limit, rng);
        store.insert_uniform(&format!("{name}.wh"), hidden, 4 * hidden, limit, rng);
        store.insert_zeros(&format!("{name}.b"), 1, 4 * hidden);
        Self { wx: format!("{name}.wx"), wh: format!("{name}.wh"), b: format!("{name}.b"), hidden }
    }

    pub fn zero_state(&self, g: &mut Graph) -> (NodeId, NodeId) {
        let h = g.input(super::tensor::Tensor::zeros(1, self.hidden));
        let c = g.input(super::tensor::Tensor::zeros(1, self.hidden));
        (h, c)
    }

    /// One step: (h, c), x -> (h', c').
    pub fn step(&self, g: &mut Graph, state: (NodeId, NodeId), x: NodeId) -> (NodeId, NodeId) {
        let (h, c) = state;
        let wx = g.param(&self.wx);
        let wh = g.param(&self.wh);
        let b = g.param(&self.b);
        let zx = g.matmul(x, wx);
        let zh = g.matmul(h, wh);
        let z = g.add(zx, zh);
        let z = g.add_bias(z, b);
        let hsz = self.hidden;
        let i_gate = g.slice_cols(z, 0, hsz);
        let f_gate = g.slice_cols(z, hsz, 2 * hsz);
        let o_gate = g.slice_cols(z, 2 * hsz, 3 * hsz);
        let cand = g.slice_cols(z, 3 * hsz, 4 * hsz);
        let i_gate = g.sigmoid(i_gate);
        let f_gate = g.sigmoid(f_gate);
        let o_gate = g.sigmoid(o_gate);
        let cand = g.tanh(cand);
        let fc = g.mul(f_gate, c);
        let ic = g.mul(i_gate, cand);
        let c_new = g.add(fc, ic);
        let ct = g.tanh(c_new);
        let h_new = g.mul(o_gate, ct);
        (h_new, c_new)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::graph::Mode;
    use crate::nn::tensor::Tensor;
    use crate::rng::derive_rng;

    #[test]
    fn attention_config_validation() {
        let mut cfg = AttentionConfig {
            model_dim: 12,
            num_heads: 4,
            num_layers: 1,
            dropout_rate: 0.1,
            causal: false,
            use_positional_encoding: false,
        };
        assert!(cfg.validate().is_ok());
        cfg.num_heads = 5;
        assert!(cfg.validate().is_err());
        cfg.num_heads = 4;
        cfg.dropout_rate = 1.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn lstm_zero_weights_zero_input_gives_zero_hidden() {
        let mut store = ParamStore::new();
        store.insert_zeros("cell.wx", 2, 12);
        store.insert_zeros("cell.wh", 3, 12);
        store.insert_zeros("cell.b", 1, 12);
        let cell = LstmCell { wx: "cell.wx".into(), wh: "cell.wh".into(), b: "cell.b".into(), hidden: 3 };
        let mut g = Graph::new(&store, Mode::Eval);
        let state = cell.zero_state(&mut g);
        let x = g.input(Tensor::zeros(1, 2));
        let (h, c) = cell.step(&mut g, state, x);
        assert!(g.value(h).data.iter().all(|&v| v == 0.0));
        assert!(g.value(c).data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lstm_single_unit_hand_computed() {
        // one unit, one input; weights set so gates are easy to evaluate by hand
        let mut store = ParamStore::new();
        // wx columns: [i, f, o, g]
        store.insert("cell.wx", Tensor::new(1, 4, vec![1.0, 0.5, -1.0, 2.0]));
        store.insert("cell.wh", Tensor::new(1, 4, vec![0.2, -0.3, 0.4, 0.1]));
        store.insert("cell.b", Tensor::new(1, 4, vec![0.1, 0.2, 0.3, 0.4]));
        let cell = LstmCell { wx: "cell.wx".into(), wh: "cell.wh".into(), b: "cell.b".into(), hidden: 1 };
        let (x, h0, c0) = (0.7, 0.5, -0.25);
        let mut g = Graph::new(&store, Mode::Eval);
        let h = g.input(Tensor::scalar(h0));
        let c = g.input(Tensor::scalar(c0));
        let xin = g.input(Tensor::scalar(x));
        let (h1, c1) = cell.step(&mut g, (h, c), xin);
        // scalar recomputation of the gate formulas
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let zi = 1.0 * x + 0.2 * h0 + 0.1;
        let zf = 0.5 * x + -0.3 * h0 + 0.2;
        let zo = -1.0 * x + 0.4 * h0 + 0.3;
        let zg = 2.0 * x + 0.1 * h0 + 0.4;
        let c_exp = sig(zf) * c0 + sig(zi) * zg.tanh();
        let h_exp = sig(zo) * c_exp.tanh();
        assert!((g.value(c1).item() - c_exp).abs() < 1e-14);
        assert!((g.value(h1).item() - h_exp).abs() < 1e-14);
        // gates stay in (0,1)
        for z in [zi, zf, zo] {
            let v = sig(z);
            assert!(v > 0.0 && v < 1.0);
        }
    }

    #[test]
    fn lstm_repeated_input_converges_for_contractive_weights() {
        let mut rng = derive_rng(11, "lstm-fixed-point", &[]);
        let mut store = ParamStore::new();
        let cell = LstmCell::init(&mut store, "cell", 2, 4, &mut rng);
        // small weights are contractive; iterate and check a Cauchy criterion
        let mut g = Graph::new(&store, Mode::Eval);
        let x = g.input(Tensor::new(1, 2, vec![0.3, -0.2]));
        let mut state = cell.zero_state(&mut g);
        let mut prev: Option<Vec<f64>> = None;
        let mut last_delta = f64::INFINITY;
        for step in 0..100 {
            state = cell.step(&mut g, state, x);
            let h = g.value(state.0).data.clone();
            if let Some(p) = prev {
                last_delta = h.iter().zip(&p).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            }
            let _ = step;
            prev = Some(h);
        }
        assert!(last_delta < 1e-9, "not converged: last delta {last_delta}");
    }

    #[test]
    fn transformer_stack_runs_and_is_finite() {
        let mut rng = derive_rng(3, "stack", &[]);
        let mut store = ParamStore::new();
        let cfg = AttentionConfig {
            model_dim: 8,
            num_heads: 2,
            num_layers: 2,
            dropout_rate: 0.0,
            causal: true,
            use_positional_encoding: false,
        };
        let stack = TransformerStack::init(&mut store, "enc", &cfg, false, &mut rng);
        let mut g = Graph::new(&store, Mode::Eval);
        let x = g.input(Tensor::uniform(5, 8, 1.0, &mut rng));
        let y = stack.forward(&mut g, x, None);
        assert!(g.value(y).is_finite());
        assert_eq!((g.value(y).rows, g.value(y).cols), (5, 8));
    }
}
