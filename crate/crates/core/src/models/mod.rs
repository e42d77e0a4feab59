//! The six model families with their losses: category-subnet compatibility
//! net, bidirectional outfit LSTM, position-free GPT decoder, position-free
//! BERT encoder, their contextual variants, encoder-decoder transformer and
//! sequence-to-sequence LSTM.

pub mod bert;
pub mod context;
pub mod features;
pub mod gpt;
pub mod lstm;
pub mod s2s;
pub mod siamese;
pub mod train;
pub mod transformer;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{Action, Catalog, CatalogError, EventType, FeatureSpec, Outfit, UserContext, UserRecord, Vocabulary};
use crate::nn::GraphError;

pub use context::{questionnaire_slots, ContextEncoder, ContextInput};
pub use features::{InputEmbed, ItemFeatures, VocabReadout};

pub use bert::BertModel;
pub use gpt::GptModel;
pub use lstm::LstmModel;
pub use s2s::S2sModel;
pub use siamese::SiameseModel;
pub use transformer::TransformerModel;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("sequence needs at least {min} items, got {got}")]
    SequenceTooShort { min: usize, got: usize },
    #[error("mask position {pos} out of range for {len} outfit items (the context token cannot be masked)")]
    BadMaskPosition { pos: usize, len: usize },
    #[error("family {family} requires {requirement}")]
    ConfigMismatch { family: String, requirement: String },
    #[error("empty action sequence")]
    EmptyActions,
    #[error("category {0} has no subnet")]
    MissingSubnet(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelFamily {
    Siamese,
    Lstm,
    Gpt,
    Bert,
    CtxGpt,
    CtxBert,
    Transformer,
    S2sLstm,
}

impl ModelFamily {
    pub const ALL: [ModelFamily; 8] = [
        ModelFamily::Siamese,
        ModelFamily::Lstm,
        ModelFamily::Gpt,
        ModelFamily::Bert,
        ModelFamily::CtxGpt,
        ModelFamily::CtxBert,
        ModelFamily::Transformer,
        ModelFamily::S2sLstm,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ModelFamily::Siamese => "siamese",
            ModelFamily::Lstm => "lstm",
            ModelFamily::Gpt => "gpt",
            ModelFamily::Bert => "bert",
            ModelFamily::CtxGpt => "ctx_gpt",
            ModelFamily::CtxBert => "ctx_bert",
            ModelFamily::Transformer => "transformer",
            ModelFamily::S2sLstm => "s2s_lstm",
        }
    }

    pub fn parse(s: &str) -> Option<ModelFamily> {
        Self::ALL.into_iter().find(|f| f.as_str() == s)
    }

    pub fn is_contextual(&self) -> bool {
        matches!(self, ModelFamily::CtxGpt | ModelFamily::CtxBert | ModelFamily::Transformer | ModelFamily::S2sLstm)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextMode {
    None,
    Questionnaire,
    ActionSequence,
}

/// Architecture and training hyperparameters for one model instance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    pub family: ModelFamily,
    pub d_model: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub dropout: f64,
    pub lstm_hidden: usize,
    pub subnet_dim: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub context_mode: ContextMode,
    pub feature_spec: FeatureSpec,
    /// Positional encoding for the action-sequence encoder only; outfit
    /// encoders and decoders are position-free.
    pub encoder_positional: bool,
}

impl ModelConfig {
    /// The published per-family settings: GPT/BERT four layers with eight
    /// heads at d=128 (batch 512, dropout 1%); LSTM 512 hidden units with
    /// dropout 0.3 (batch 64); Siamese two 64-unit layers per block (batch
    /// 32); transformer two layers with twelve heads at d=216 (batch 64,
    /// dropout 0.1).
    pub fn paper_default(family: ModelFamily) -> Self {
        let mut cfg = Self {
            family,
            d_model: 128,
            num_layers: 4,
            num_heads: 8,
            dropout: 0.01,
            lstm_hidden: 512,
            subnet_dim: 64,
            batch_size: 512,
            learning_rate: 1e-3,
            context_mode: ContextMode::None,
            feature_spec: FeatureSpec::default(),
            encoder_positional: true,
        };
        match family {
            ModelFamily::Gpt | ModelFamily::Bert => {}
            ModelFamily::CtxGpt | ModelFamily::CtxBert => cfg.context_mode = ContextMode::Questionnaire,
            ModelFamily::Lstm => {
                cfg.dropout = 0.3;
                cfg.batch_size = 64;
            }
            ModelFamily::Siamese => {
                cfg.dropout = 0.0;
                cfg.batch_size = 32;
            }
            ModelFamily::Transformer => {
                cfg.d_model = 216;
                cfg.num_layers = 2;
                cfg.num_heads = 12;
                cfg.dropout = 0.1;
                cfg.batch_size = 64;
                cfg.context_mode = ContextMode::ActionSequence;
            }
            ModelFamily::S2sLstm => {
                cfg.dropout = 0.3;
                cfg.batch_size = 64;
                cfg.context_mode = ContextMode::ActionSequence;
            }
        }
        cfg
    }

    /// Shrunk widths for the desk-scale benchmark profile; same shapes,
    /// small enough that the full suite trains in minutes.
    pub fn desk_default(family: ModelFamily) -> Self {
        let mut cfg = Self::paper_default(family);
        match family {
            ModelFamily::Gpt | ModelFamily::Bert | ModelFamily::CtxGpt | ModelFamily::CtxBert => {
                cfg.d_model = 48;
                cfg.num_layers = 2;
                cfg.num_heads = 4;
                cfg.batch_size = 128;
                cfg.learning_rate = 2e-3;
            }
            ModelFamily::Lstm => {
                cfg.lstm_hidden = 96;
                cfg.d_model = 48;
                cfg.learning_rate = 2e-3;
            }
            ModelFamily::Siamese => {
                cfg.subnet_dim = 32;
                cfg.batch_size = 64;
                cfg.learning_rate = 2e-3;
            }
            ModelFamily::Transformer => {
                cfg.d_model = 72;
                cfg.learning_rate = 2e-3;
            }
            ModelFamily::S2sLstm => {
                cfg.lstm_hidden = 96;
                cfg.d_model = 48;
                cfg.learning_rate = 2e-3;
            }
        }
        cfg
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fam = self.family.as_str().to_string();
        if matches!(self.family, ModelFamily::Gpt | ModelFamily::Bert | ModelFamily::CtxGpt | ModelFamily::CtxBert | ModelFamily::Transformer)
            && (self.num_heads == 0 || self.d_model % self.num_heads != 0)
        {
            return Err(ModelError::ConfigMismatch { family: fam, requirement: "d_model divisible by num_heads".into() });
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::ConfigMismatch { family: fam, requirement: "dropout in [0,1)".into() });
        }
        match self.family {
            ModelFamily::CtxGpt | ModelFamily::CtxBert => {
                if self.context_mode == ContextMode::None {
                    return Err(ModelError::ConfigMismatch { family: fam, requirement: "a context mode".into() });
                }
            }
            ModelFamily::Transformer | ModelFamily::S2sLstm => {
                if self.context_mode != ContextMode::ActionSequence {
                    return Err(ModelError::ConfigMismatch { family: fam, requirement: "context mode action_sequence".into() });
                }
            }
            _ => {}
        }
        Ok(())
    }
}

/// One supervised example: canonically ordered outfit tokens plus the
/// user context when the family is personalized.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSample {
    pub tokens: Vec<usize>,
    pub context: Option<ContextInput>,
}

pub fn event_index(event: EventType) -> usize {
    match event {
        EventType::Click => 0,
        EventType::Wishlist => 1,
        EventType::Cart => 2,
    }
}

pub const NUM_EVENT_TYPES: usize = 3;
pub const ACTION_AGE_SCALE: f64 = 30.0;

/// Canonical-order vocabulary tokens of an outfit (UNK for out-of-vocab
/// items).
pub fn outfit_tokens(items: &[String], catalog: &Catalog, vocab: &Vocabulary, rank: &[String]) -> Result<Vec<usize>, CatalogError> {
    let outfit = Outfit::new(items.to_vec(), None);
    let ordered = crate::catalog::canonical_order(&outfit, catalog, rank)?;
    Ok(ordered.iter().map(|id| vocab.index_or_unk(id)).collect())
}

/// Resolve an action history into the context representation.
pub fn actions_context(actions: &[Action], vocab: &Vocabulary) -> ContextInput {
    ContextInput::Actions {
        item_tokens: actions.iter().map(|a| vocab.index_or_unk(&a.item_id)).collect(),
        events: actions.iter().map(|a| event_index(a.event)).collect(),
        ages: actions.iter().map(|a| a.age_days as f64 / ACTION_AGE_SCALE).collect(),
    }
}

/// Convert a user record into a training sample for the given context
/// mode.
pub fn sample_from_user(
    record: &UserRecord,
    catalog: &Catalog,
    vocab: &Vocabulary,
    rank: &[String],
    mode: ContextMode,
) -> Result<TrainSample, ModelError> {
    let tokens = outfit_tokens(&record.label_outfit, catalog, vocab, rank)?;
    let context = match (mode, &record.context) {
        (ContextMode::None, _) => None,
        (ContextMode::Questionnaire, UserContext::Questionnaire { answers }) => {
            Some(ContextInput::Questionnaire { field_slots: questionnaire_slots(answers) })
        }
        (ContextMode::ActionSequence, UserContext::ActionSequence { actions }) => Some(actions_context(actions, vocab)),
        (mode, _) => {
            return Err(ModelError::ConfigMismatch {
                family: format!("{mode:?}"),
                requirement: "matching user context variant in the dataset".into(),
            })
        }
    };
    Ok(TrainSample { tokens, context })
}

/// A trained (or initialized) model of any family.
pub enum Model {
    Siamese(SiameseModel),
    Lstm(LstmModel),
    Gpt(GptModel),
    Bert(BertModel),
    Transformer(TransformerModel),
    S2s(S2sModel),
}

impl Model {
    pub fn new(config: ModelConfig, vocab: Vocabulary, catalog: &Catalog, init_seed: u64) -> Result<Model, ModelError> {
        config.validate()?;
        let vocab = Arc::new(vocab);
        Ok(match config.family {
            ModelFamily::Siamese => Model::Siamese(SiameseModel::new(config, vocab, catalog, init_seed)?),
            ModelFamily::Lstm => Model::Lstm(LstmModel::new(config, vocab, catalog, init_seed)?),
            ModelFamily::Gpt | ModelFamily::CtxGpt => Model::Gpt(GptModel::new(config, vocab, catalog, init_seed)?),
            ModelFamily::Bert | ModelFamily::CtxBert => Model::Bert(BertModel::new(config, vocab, catalog, init_seed)?),
            ModelFamily::Transformer => Model::Transformer(TransformerModel::new(config, vocab, catalog, init_seed)?),
            ModelFamily::S2sLstm => Model::S2s(S2sModel::new(config, vocab, catalog, init_seed)?),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        match self {
            Model::Siamese(m) => &m.config,
            Model::Lstm(m) => &m.config,
            Model::Gpt(m) => &m.config,
            Model::Bert(m) => &m.config,
            Model::Transformer(m) => &m.config,
            Model::S2s(m) => &m.config,
        }
    }

    pub fn family(&self) -> ModelFamily {
        self.config().family
    }

    pub fn vocab(&self) -> &Arc<Vocabulary> {
        match self {
            Model::Siamese(m) => &m.vocab,
            Model::Lstm(m) => &m.vocab,
            Model::Gpt(m) => &m.vocab,
            Model::Bert(m) => &m.vocab,
            Model::Transformer(m) => &m.vocab,
            Model::S2s(m) => &m.vocab,
        }
    }

    pub fn params(&self) -> &crate::nn::ParamStore {
        match self {
            Model::Siamese(m) => &m.params,
            Model::Lstm(m) => &m.params,
            Model::Gpt(m) => &m.params,
            Model::Bert(m) => &m.params,
            Model::Transformer(m) => &m.params,
            Model::S2s(m) => &m.params,
        }
    }

    pub fn params_mut(&mut self) -> &mut crate::nn::ParamStore {
        match self {
            Model::Siamese(m) => &mut m.params,
            Model::Lstm(m) => &mut m.params,
            Model::Gpt(m) => &mut m.params,
            Model::Bert(m) => &mut m.params,
            Model::Transformer(m) => &mut m.params,
            Model::S2s(m) => &mut m.params,
        }
    }
}
