//! Category-subnet compatibility network. One feature-extractor subnet per
//! fashion category (weights not shared across categories), a pairwise
//! head over [x y (x-y)^2 x*y], and a whole-outfit head over all category
//! encodings plus their pairwise interaction blocks. Trained with binary
//! cross-entropy against swap-corrupted negatives.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::catalog::{Catalog, Vocabulary};
use crate::nn::{Dense, Graph, Mode, NodeId, ParamStore, Tensor};
use crate::rng::derive_rng;

use super::features::ItemFeatures;
use super::{ModelConfig, ModelError};

struct Subnet {
    l1: Dense,
    l2: Dense,
}

pub struct SiameseModel {
    pub config: ModelConfig,
    pub vocab: Arc<Vocabulary>,
    pub params: ParamStore,
    pub features: ItemFeatures,
    subnets: Vec<Subnet>,
    pair_head: [Dense; 3],
    outfit_head: [Dense; 3],
}

/// A training example: the positive outfit, a corrupted negative, one
/// co-occurring item pair and one corrupted pair.
#[derive(Debug, Clone)]
pub struct SiameseExample {
    pub positive: Vec<usize>,
    pub negative: Vec<usize>,
    pub pair_pos: (usize, usize),
    pub pair_neg: (usize, usize),
}

impl SiameseModel {
    pub fn new(config: ModelConfig, vocab: Arc<Vocabulary>, catalog: &Catalog, init_seed: u64) -> Result<Self, ModelError> {
        let mut rng = derive_rng(init_seed, "init-siamese", &[]);
        let features = ItemFeatures::resolve(catalog, &vocab, &config.feature_spec)?;
        let d_item = config.feature_spec.item_dim();
        let s = config.subnet_dim;
        let mut params = ParamStore::new();
        features.init_params(&mut params, &mut rng);
        let mut subnets = Vec::new();
        for cat in features.category_names().to_vec() {
            subnets.push(Subnet {
                l1: Dense::init(&mut params, &format!("siam.sub.{cat}.l1"), d_item, s, &mut rng),
                l2: Dense::init(&mut params, &format!("siam.sub.{cat}.l2"), s, s, &mut rng),
            });
            params.insert_uniform(&format!("siam.null.{cat}"), 1, d_item, 0.1, &mut rng);
        }
        let c = features.num_categories();
        let outfit_in = c * s + c * (c - 1) / 2 * 2 * s;
        let pair_head = [
            Dense::init(&mut params, "siam.pair.l1", 4 * s, s, &mut rng),
            Dense::init(&mut params, "siam.pair.l2", s, s, &mut rng),
            Dense::init(&mut params, "siam.pair.out", s, 1, &mut rng),
        ];
        let outfit_head = [
            Dense::init(&mut params, "siam.outfit.l1", outfit_in, s, &mut rng),
            Dense::init(&mut params, "siam.outfit.l2", s, s, &mut rng),
            Dense::init(&mut params, "siam.outfit.out", s, 1, &mut rng),
        ];
        Ok(Self { config, vocab, params, features, subnets, pair_head, outfit_head })
    }

    fn encode_category(&self, g: &mut Graph, cat: usize, row: NodeId) -> NodeId {
        let sub = &self.subnets[cat];
        let h = sub.l1.forward(g, row);
        let h = g.relu(h);
        let h = sub.l2.forward(g, h);
        g.relu(h)
    }

    fn head(&self, g: &mut Graph, layers: &[Dense; 3], x: NodeId) -> NodeId {
        let h = layers[0].forward(g, x);
        let h = g.relu(h);
        let h = layers[1].forward(g, h);
        let h = g.relu(h);
        layers[2].forward(g, h)
    }

    fn category_of(&self, token: usize) -> Result<usize, ModelError> {
        self.features.category_code(token).ok_or_else(|| ModelError::MissingSubnet(format!("token {token}")))
    }

    /// The interaction vector [x y (x-y)^2 x*y] for two encodings.
    fn interaction(&self, g: &mut Graph, x: NodeId, y: NodeId) -> NodeId {
        let d = g.sub(x, y);
        let sq = g.mul(d, d);
        let had = g.mul(x, y);
        g.concat_cols(&[x, y, sq, had])
    }

    /// Pairwise compatibility logit for two item tokens, each through its
    /// category's subnet.
    pub fn pair_logit(&self, g: &mut Graph, f: NodeId, a: usize, b: usize) -> Result<NodeId, ModelError> {
        let (ca, cb) = (self.category_of(a)?, self.category_of(b)?);
        let ra = g.gather_rows(f, &[a]);
        let rb = g.gather_rows(f, &[b]);
        let ea = self.encode_category(g, ca, ra);
        let eb = self.encode_category(g, cb, rb);
        let inter = self.interaction(g, ea, eb);
        Ok(self.head(g, &self.pair_head, inter))
    }

    /// Whole-outfit compatibility logit: per-category encodings (learned
    /// null row for absent categories, mean feature row when a category
    /// holds several items) concatenated with all pairwise interaction
    /// blocks.
    pub fn outfit_logit(&self, g: &mut Graph, f: NodeId, tokens: &[usize]) -> Result<NodeId, ModelError> {
        let mut by_cat: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for &t in tokens {
            by_cat.entry(self.category_of(t)?).or_default().push(t);
        }
        let names = self.features.category_names().to_vec();
        let mut encodings = Vec::with_capacity(names.len());
        for (cat, name) in names.iter().enumerate() {
            let row = match by_cat.get(&cat) {
                Some(tokens) => {
                    let rows = g.gather_rows(f, tokens);
                    g.mean_rows(rows)
                }
                None => g.param(&format!("siam.null.{name}")),
            };
            encodings.push(self.encode_category(g, cat, row));
        }
        let mut blocks = encodings.clone();
        for i in 0..encodings.len() {
            for j in (i + 1)..encodings.len() {
                let d = g.sub(encodings[i], encodings[j]);
                let sq = g.mul(d, d);
                let had = g.mul(encodings[i], encodings[j]);
                blocks.push(sq);
                blocks.push(had);
            }
        }
        let x = g.concat_cols(&blocks);
        Ok(self.head(g, &self.outfit_head, x))
    }

    /// Joint BCE over outfit-level and pair-level discrimination.
    pub fn batch_loss<'p>(&'p self, g: &mut Graph<'p>, batch: &[SiameseExample]) -> Result<NodeId, ModelError> {
        assert!(!batch.is_empty());
        let f = self.features.build_matrix(g);
        let mut outfit_logits = Vec::new();
        let mut outfit_labels = Vec::new();
        let mut pair_logits = Vec::new();
        let mut pair_labels = Vec::new();
        for ex in batch {
            outfit_logits.push(self.outfit_logit(g, f, &ex.positive)?);
            outfit_labels.push(1.0);
            outfit_logits.push(self.outfit_logit(g, f, &ex.negative)?);
            outfit_labels.push(0.0);
            pair_logits.push(self.pair_logit(g, f, ex.pair_pos.0, ex.pair_pos.1)?);
            pair_labels.push(1.0);
            pair_logits.push(self.pair_logit(g, f, ex.pair_neg.0, ex.pair_neg.1)?);
            pair_labels.push(0.0);
        }
        let o = g.concat_rows(&outfit_logits);
        let p = g.concat_rows(&pair_logits);
        let lo = g.bce_with_logits(o, &outfit_labels);
        let lp = g.bce_with_logits(p, &pair_labels);
        Ok(g.add(lo, lp))
    }

    pub fn frozen_features(&self) -> Arc<Tensor> {
        Arc::new(self.features.materialize(&self.params))
    }

    pub fn scorer(&self) -> SiameseScorer<'_> {
        SiameseScorer { model: self, features: self.frozen_features() }
    }
}

/// Frozen scorer: probabilities for pairs and whole outfits.
pub struct SiameseScorer<'m> {
    model: &'m SiameseModel,
    features: Arc<Tensor>,
}

impl SiameseScorer<'_> {
    pub fn pair_score(&self, a: usize, b: usize) -> Result<f64, ModelError> {
        let mut g = Graph::new(&self.model.params, Mode::Eval);
        let f = g.input_ref(&self.features);
        let logit = self.model.pair_logit(&mut g, f, a, b)?;
        Ok(sigmoid(g.value(logit).item()))
    }

    pub fn outfit_score(&self, tokens: &[usize]) -> Result<f64, ModelError> {
        let mut g = Graph::new(&self.model.params, Mode::Eval);
        let f = g.input_ref(&self.features);
        let logit = self.model.outfit_logit(&mut g, f, tokens)?;
        Ok(sigmoid(g.value(logit).item()))
    }

    /// FITB scores: the candidate slot is tried with every vocabulary item
    /// in turn, scored in isolation (no shared normalization).
    pub fn blank_scores(&self, others: &[usize]) -> Vec<f64> {
        let vocab = self.model.vocab.size();
        let mut scores = vec![f64::NEG_INFINITY; vocab];
        let mut tokens = others.to_vec();
        tokens.push(0);
        for idx in Vocabulary::FIRST_ITEM..vocab {
            *tokens.last_mut().unwrap() = idx;
            scores[idx] = self.outfit_score(&tokens).unwrap_or(f64::NEG_INFINITY);
        }
        scores
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ModelFamily;
    use crate::synthgen::{generate_catalog, generate_outfits, StyleWorld};

    fn tiny_model() -> (SiameseModel, Vec<Vec<usize>>) {
        let world = StyleWorld::default();
        let catalog = generate_catalog(&world, 80, 91).unwrap();
        let (outfits, _) = generate_outfits(&world, &catalog, 60, 92, None);
        let vocab = Vocabulary::build(&outfits, 1).unwrap();
        let mut config = ModelConfig::desk_default(ModelFamily::Siamese);
        config.subnet_dim = 8;
        let rank = crate::catalog::default_category_rank();
        let seqs: Vec<Vec<usize>> = outfits
            .iter()
            .map(|o| super::super::outfit_tokens(&o.items, &catalog, &vocab, &rank).unwrap())
            .collect();
        let model = SiameseModel::new(config, Arc::new(vocab), &catalog, 82).unwrap();
        (model, seqs)
    }

    #[test]
    fn zero_final_layer_gives_score_half() {
        let (mut model, seqs) = tiny_model();
        for name in ["siam.pair.out.w", "siam.pair.out.b", "siam.outfit.out.w", "siam.outfit.out.b"] {
            model.params.get_mut(name).data.iter_mut().for_each(|v| *v = 0.0);
        }
        let scorer = model.scorer();
        let seq = &seqs[0];
        assert_eq!(scorer.pair_score(seq[0], seq[1]).unwrap(), 0.5);
        assert_eq!(scorer.outfit_score(seq).unwrap(), 0.5);
    }

    #[test]
    fn interaction_vector_dims_and_zero_squared_slice() {
        // two s-dim encodings give a 4s interaction vector, and x = y
        // zeroes the squared-difference slice
        let (model, _) = tiny_model();
        let s = model.config.subnet_dim;
        let mut g = Graph::new(&model.params, Mode::Eval);
        let x = g.input(Tensor::uniform(1, s, 1.0, &mut derive_rng(1, "iv", &[])));
        let inter = model.interaction(&mut g, x, x);
        let v = g.value(inter);
        assert_eq!(v.cols, 4 * s);
        assert!(v.data[2 * s..3 * s].iter().all(|&z| z == 0.0), "(x-y)^2 slice must vanish for x = y");
    }

    #[test]
    fn scores_are_deterministic() {
        let (model, seqs) = tiny_model();
        let scorer = model.scorer();
        let a = scorer.outfit_score(&seqs[0]).unwrap();
        let b = scorer.outfit_score(&seqs[0]).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn special_token_has_no_subnet() {
        let (model, _) = tiny_model();
        let scorer = model.scorer();
        assert!(matches!(scorer.pair_score(crate::catalog::STOP_TOKEN, 3), Err(ModelError::MissingSubnet(_))));
    }

    #[test]
    fn gradcheck_full_siamese_loss() {
        use crate::nn::{grad_check, GradCheckOptions};
        let (mut model, seqs) = tiny_model();
        let positive = seqs.iter().find(|s| s.len() >= 3).unwrap().clone();
        let mut negative = positive.clone();
        negative[0] = *seqs.iter().flat_map(|s| s.iter()).find(|&&t| !positive.contains(&t)).unwrap();
        let example = SiameseExample {
            pair_pos: (positive[0], positive[1]),
            pair_neg: (positive[0], negative[0]),
            positive,
            negative,
        };
        let mut store = std::mem::take(&mut model.params);
        let forward = |params: &ParamStore| {
            let mut g = Graph::new(params, Mode::Eval);
            let loss = model.batch_loss(&mut g, std::slice::from_ref(&example)).unwrap();
            g.value(loss).item()
        };
        let grads = {
            let mut g = Graph::new(&store, Mode::Eval);
            let loss = model.batch_loss(&mut g, std::slice::from_ref(&example)).unwrap();
            g.backward(loss).unwrap()
        };
        let mut rng = derive_rng(10, "siam-gc", &[]);
        grad_check(&mut store, forward, &grads, GradCheckOptions { max_components: Some(8), ..GradCheckOptions::default() }, &mut rng)
            .unwrap();
    }
}
