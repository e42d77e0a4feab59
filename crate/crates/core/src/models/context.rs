//! User-context embedding for the personalized model variants.
//!
//! A questionnaire is folded into a single d_item row via hashed per-field
//! value embeddings; an action history is folded into the mean of the
//! clicked items' feature rows. Either way the result has the same
//! dimensionality as an item embedding and enters the sequence exactly
//! like an item token.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::Questionnaire;
use crate::nn::{Graph, NodeId, ParamStore, Tensor};
use crate::rng::stable_hash;

/// Number of rows in the hashed field-value table.
pub const CONTEXT_HASH_BUCKETS: usize = 256;

/// Pre-resolved context for one user, ready to feed a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ContextInput {
    /// Per questionnaire field: hashed bucket per value.
    Questionnaire { field_slots: Vec<Vec<usize>> },
    /// Action history: vocabulary token (UNK allowed), event-type index and
    /// normalized age per action, parallel arrays.
    Actions { item_tokens: Vec<usize>, events: Vec<usize>, ages: Vec<f64> },
}

impl ContextInput {
    pub fn num_actions(&self) -> usize {
        match self {
            ContextInput::Actions { item_tokens, .. } => item_tokens.len(),
            ContextInput::Questionnaire { .. } => 0,
        }
    }
}

/// Hash a questionnaire into per-field bucket lists. The field name is
/// folded into the hash so equal values in different fields stay distinct.
pub fn questionnaire_slots(q: &Questionnaire) -> Vec<Vec<usize>> {
    let bucket = |field: &str, value: &str| (stable_hash(format!("{field}={value}").as_bytes()) as usize) % CONTEXT_HASH_BUCKETS;
    let list = |field: &str, values: &[String]| -> Vec<usize> {
        if values.is_empty() {
            vec![bucket(field, "<none>")]
        } else {
            values.iter().map(|v| bucket(field, v)).collect()
        }
    };
    vec![
        list("favorite_brands", &q.favorite_brands),
        list("favorite_colors", &q.favorite_colors),
        list("no_go_categories", &q.no_go_categories),
        vec![bucket("gender", &q.gender)],
        vec![bucket("body_height_band", &q.body_height_band)],
        vec![bucket("body_weight_band", &q.body_weight_band)],
        vec![bucket("occasion", &q.occasion)],
        vec![bucket("price_band", &q.price_band)],
        vec![bucket("shoe_size_band", &q.shoe_size_band)],
        vec![bucket("hair_color", &q.hair_color)],
        vec![bucket("style_archetype", &q.style_archetype)],
    ]
}

#[derive(Debug, Clone)]
pub struct ContextEncoder {
    table: String,
    proj_w: String,
    proj_b: String,
}

impl ContextEncoder {
    pub fn init(store: &mut ParamStore, name: &str, d_item: usize, rng: &mut impl Rng) -> Self {
        store.insert_uniform(&format!("{name}.table"), CONTEXT_HASH_BUCKETS, d_item, 0.1, rng);
        store.insert_dense(&format!("{name}.proj.w"), d_item, d_item, rng);
        store.insert_zeros(&format!("{name}.proj.b"), 1, d_item);
        Self { table: format!("{name}.table"), proj_w: format!("{name}.proj.w"), proj_b: format!("{name}.proj.b") }
    }

    /// Encode a context into one d_item row. `feature_matrix` is needed
    /// for the action variant (mean of clicked item rows).
    pub fn encode(&self, g: &mut Graph, feature_matrix: NodeId, input: &ContextInput) -> NodeId {
        let pooled = match input {
            ContextInput::Questionnaire { field_slots } => {
                let table = g.param(&self.table);
                let mut field_means = Vec::with_capacity(field_slots.len());
                for slots in field_slots {
                    let rows = g.gather_rows(table, slots);
                    field_means.push(g.mean_rows(rows));
                }
                let stacked = g.concat_rows(&field_means);
                g.mean_rows(stacked)
            }
            ContextInput::Actions { item_tokens, .. } => {
                let rows = g.gather_rows(feature_matrix, item_tokens);
                g.mean_rows(rows)
            }
        };
        let w = g.param(&self.proj_w);
        let b = g.param(&self.proj_b);
        let y = g.matmul(pooled, w);
        g.add_bias(y, b)
    }

    /// Frozen-path encoding, bit-identical to the graph path.
    pub fn encode_frozen(&self, store: &ParamStore, feature_matrix: &Tensor, input: &ContextInput) -> Tensor {
        let mut g = Graph::new(store, crate::nn::Mode::Eval);
        let f = g.input_ref(feature_matrix);
        let out = self.encode(&mut g, f, input);
        g.value(out).clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn questionnaire() -> Questionnaire {
        Questionnaire {
            favorite_brands: vec!["b01".into(), "b05".into()],
            favorite_colors: vec!["red".into()],
            no_go_categories: vec![],
            gender: "women".into(),
            body_height_band: "tall".into(),
            body_weight_band: "medium".into(),
            occasion: "party".into(),
            price_band: "mid".into(),
            shoe_size_band: "39-41".into(),
            hair_color: "black".into(),
            style_archetype: "boho".into(),
        }
    }

    #[test]
    fn slots_are_deterministic_and_cover_all_fields() {
        let q = questionnaire();
        let a = questionnaire_slots(&q);
        let b = questionnaire_slots(&q);
        assert_eq!(a, b);
        assert_eq!(a.len(), 11);
        assert!(a.iter().all(|f| !f.is_empty()));
        assert!(a.iter().flatten().all(|&s| s < CONTEXT_HASH_BUCKETS));
    }

    #[test]
    fn different_archetypes_give_different_encodings() {
        use crate::nn::Mode;
        use crate::rng::derive_rng;
        let mut store = ParamStore::new();
        let mut rng = derive_rng(7, "ctx", &[]);
        let enc = ContextEncoder::init(&mut store, "ctx", 12, &mut rng);
        let f = Tensor::zeros(4, 12);
        let mut q1 = questionnaire();
        let mut q2 = questionnaire();
        q1.style_archetype = "boho".into();
        q2.style_archetype = "minimal".into();
        let e1 = enc.encode_frozen(&store, &f, &ContextInput::Questionnaire { field_slots: questionnaire_slots(&q1) });
        let e2 = enc.encode_frozen(&store, &f, &ContextInput::Questionnaire { field_slots: questionnaire_slots(&q2) });
        assert_ne!(e1.data, e2.data);
        let _ = Mode::Eval;
    }
}
