//! Vocabulary-aligned item features shared by all model families.
//!
//! Every vocabulary index gets a d_item-dimensional row: the fixed image
//! vector concatenated with learned attribute embeddings. The reserved
//! stop/mask/unk slots get fully learned rows. Both the input embeddings
//! and the output softmax are tied to this matrix, so rare items still
//! generalize through their attributes.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::{Catalog, CatalogError, FeatureSpec, Vocabulary, ATTRIBUTES, IMAGE_DIM};
use crate::nn::{Graph, NodeId, ParamStore, Tensor};

/// Per-vocabulary-index attribute code indices and image rows, resolved
/// once against a catalog.
#[derive(Debug, Clone)]
pub struct ItemFeatures {
    pub spec: FeatureSpec,
    /// [num_items x IMAGE_DIM], aligned with item vocabulary indices.
    image: Tensor,
    /// Per attribute (fixed order): code index per vocabulary item.
    codes: Vec<Vec<usize>>,
    /// Attribute dictionary sizes, for table construction.
    dict_sizes: Vec<usize>,
    /// Category code per vocabulary item (used by the category-subnet
    /// model and generation constraints).
    category_codes: Vec<usize>,
    category_names: Vec<String>,
    vocab_size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpecialRows;

impl ItemFeatures {
    pub fn resolve(catalog: &Catalog, vocab: &Vocabulary, spec: &FeatureSpec) -> Result<Self, CatalogError> {
        let n = vocab.num_items();
        let mut image = Tensor::zeros(n, IMAGE_DIM);
        let mut codes: Vec<Vec<usize>> = ATTRIBUTES.iter().map(|_| Vec::with_capacity(n)).collect();
        for (i, id) in vocab.item_ids().iter().enumerate() {
            let item = catalog.item(id)?;
            image.row_mut(i).copy_from_slice(&item.image_vec);
            for (a, attr) in ATTRIBUTES.iter().enumerate() {
                codes[a].push(catalog.attr_code_index(attr, item.attribute(attr))?);
            }
        }
        let dict_sizes = ATTRIBUTES.iter().map(|a| catalog.dicts[*a].len()).collect();
        let cat_pos = ATTRIBUTES.iter().position(|a| *a == "category").unwrap();
        let category_codes = codes[cat_pos].clone();
        let category_names = catalog.dicts["category"].codes().to_vec();
        Ok(Self {
            spec: spec.clone(),
            image,
            codes,
            dict_sizes,
            category_codes,
            category_names,
            vocab_size: vocab.size(),
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn num_categories(&self) -> usize {
        self.category_names.len()
    }

    pub fn category_names(&self) -> &[String] {
        &self.category_names
    }

    /// Category code of a vocabulary index; None for the reserved tokens.
    pub fn category_code(&self, token: usize) -> Option<usize> {
        token.checked_sub(Vocabulary::FIRST_ITEM).and_then(|i| self.category_codes.get(i)).copied()
    }

    /// Register the embedding tables and special rows.
    pub fn init_params(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        for (a, attr) in ATTRIBUTES.iter().enumerate() {
            store.insert_uniform(&format!("feat.attr.{attr}"), self.dict_sizes[a], self.spec.dim(attr), 0.1, rng);
        }
        store.insert_uniform("feat.specials", Vocabulary::FIRST_ITEM, self.spec.item_dim(), 0.1, rng);
    }

    /// Build the full feature matrix [vocab_size x d_item] inside a graph.
    /// The graph borrows the image block; attribute embeddings and special
    /// rows flow through trainable gathers.
    pub fn build_matrix<'p>(&'p self, g: &mut Graph<'p>) -> NodeId {
        let img = g.input_ref(&self.image);
        let mut cols = vec![img];
        for (a, attr) in ATTRIBUTES.iter().enumerate() {
            let table = g.param(&format!("feat.attr.{attr}"));
            cols.push(g.gather_rows(table, &self.codes[a]));
        }
        let items = g.concat_cols(&cols);
        let specials = g.param("feat.specials");
        g.concat_rows(&[specials, items])
    }

    /// Materialize the feature matrix outside any graph (frozen scoring).
    pub fn materialize(&self, store: &ParamStore) -> Tensor {
        let d = self.spec.item_dim();
        let n_items = self.image.rows;
        let mut out = Tensor::zeros(Vocabulary::FIRST_ITEM + n_items, d);
        let specials = store.get("feat.specials");
        for s in 0..Vocabulary::FIRST_ITEM {
            out.row_mut(s).copy_from_slice(specials.row(s));
        }
        for i in 0..n_items {
            let row = out.row_mut(Vocabulary::FIRST_ITEM + i);
            row[..IMAGE_DIM].copy_from_slice(self.image.row(i));
            let mut at = IMAGE_DIM;
            for (a, attr) in ATTRIBUTES.iter().enumerate() {
                let table = store.get(&format!("feat.attr.{attr}"));
                let w = self.spec.dim(attr);
                row[at..at + w].copy_from_slice(table.row(self.codes[a][i]));
                at += w;
            }
        }
        out
    }
}

/// Token rows -> model space: gather feature rows then a dense projection.
#[derive(Debug, Clone)]
pub struct InputEmbed {
    w: String,
    b: String,
}

impl InputEmbed {
    pub fn init(store: &mut ParamStore, name: &str, d_item: usize, d_model: usize, rng: &mut impl Rng) -> Self {
        store.insert_dense(&format!("{name}.w"), d_item, d_model, rng);
        store.insert_zeros(&format!("{name}.b"), 1, d_model);
        Self { w: format!("{name}.w"), b: format!("{name}.b") }
    }

    /// Project already-gathered feature rows [t x d_item] into model space.
    pub fn project(&self, g: &mut Graph, rows: NodeId) -> NodeId {
        let w = g.param(&self.w);
        let b = g.param(&self.b);
        let y = g.matmul(rows, w);
        g.add_bias(y, b)
    }

    pub fn embed_tokens(&self, g: &mut Graph, feature_matrix: NodeId, tokens: &[usize]) -> NodeId {
        let rows = g.gather_rows(feature_matrix, tokens);
        self.project(g, rows)
    }
}

/// Feature-tied vocabulary logits: h -> W_out -> item space, then an inner
/// product with every feature row plus a per-index bias.
#[derive(Debug, Clone)]
pub struct VocabReadout {
    w: String,
    b: String,
    bias: String,
}

impl VocabReadout {
    pub fn init(store: &mut ParamStore, name: &str, d_model: usize, d_item: usize, vocab_size: usize, rng: &mut impl Rng) -> Self {
        store.insert_dense(&format!("{name}.w"), d_model, d_item, rng);
        store.insert_zeros(&format!("{name}.b"), 1, d_item);
        store.insert_zeros(&format!("{name}.vocab_bias"), 1, vocab_size);
        Self { w: format!("{name}.w"), b: format!("{name}.b"), bias: format!("{name}.vocab_bias") }
    }

    /// Logits [r x vocab_size] for readout rows [r x d_model].
    pub fn logits(&self, g: &mut Graph, readout_rows: NodeId, feature_matrix: NodeId) -> NodeId {
        let w = g.param(&self.w);
        let b = g.param(&self.b);
        let bias = g.param(&self.bias);
        let h = g.matmul(readout_rows, w);
        let h = g.add_bias(h, b);
        let scores = g.matmul_bt(h, feature_matrix);
        g.add_bias(scores, bias)
    }
}
