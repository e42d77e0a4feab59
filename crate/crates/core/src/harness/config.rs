//! Flat key-value experiment configuration with include support.
//!
//! ```text
//! # lines are `key = value`; later keys override earlier ones
//! include base.cfg
//! model.family = gpt
//! seeds.data = 1
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::models::{ContextMode, ModelConfig, ModelFamily};

use super::HarnessError;

pub type KvMap = BTreeMap<String, String>;

/// Parse a config file, resolving `include` directives relative to the
/// file's directory. Cycles are rejected.
pub fn parse_config_file(path: &Path) -> Result<KvMap, HarnessError> {
    let mut seen = Vec::new();
    let mut map = KvMap::new();
    parse_into(path, &mut map, &mut seen)?;
    Ok(map)
}

fn parse_into(path: &Path, map: &mut KvMap, seen: &mut Vec<PathBuf>) -> Result<(), HarnessError> {
    let canonical = path.canonicalize().map_err(|e| HarnessError::Io { path: path.display().to_string(), source: e })?;
    if seen.contains(&canonical) {
        return Err(HarnessError::Config(format!("include cycle at {}", path.display())));
    }
    seen.push(canonical);
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Io { path: path.display().to_string(), source: e })?;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(rest) = line.strip_prefix("include ") {
            let target = path.parent().unwrap_or(Path::new(".")).join(rest.trim());
            parse_into(&target, map, seen)?;
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(HarnessError::Config(format!("{}:{}: expected `key = value`, got {raw:?}", path.display(), lineno + 1)));
        };
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    seen.pop();
    Ok(())
}

pub fn parse_config_str(text: &str) -> Result<KvMap, HarnessError> {
    let mut map = KvMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if line.starts_with("include ") {
            return Err(HarnessError::Config("includes are only valid in file configs".into()));
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(HarnessError::Config(format!("line {}: expected `key = value`", lineno + 1)));
        };
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

pub fn render_kv(map: &KvMap) -> String {
    let mut out = String::new();
    for (k, v) in map {
        out.push_str(k);
        out.push_str(" = ");
        out.push_str(v);
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitPolicy {
    Random9010,
    TimeBased,
}

impl SplitPolicy {
    pub fn as_str(&self) -> &'static str {
        match self {
            SplitPolicy::Random9010 => "random_90_10",
            SplitPolicy::TimeBased => "time_based",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "random_90_10" => Some(SplitPolicy::Random9010),
            "time_based" => Some(SplitPolicy::TimeBased),
            _ => None,
        }
    }
}

/// Evaluation budgets; metrics over the validation split are computed on
/// at most this many samples each.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalBudget {
    pub pp_max_outfits: usize,
    pub fitb_max_outfits: usize,
    pub cp_max_outfits: usize,
    pub ctr_max_users: usize,
    pub generation_samples: usize,
}

impl Default for EvalBudget {
    fn default() -> Self {
        Self { pp_max_outfits: 1000, fitb_max_outfits: 400, cp_max_outfits: 1000, ctr_max_users: 300, generation_samples: 300 }
    }
}

/// Everything one experiment run needs. All randomness flows from the
/// three named seeds; there is no wall-clock seeding anywhere.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub model: ModelConfig,
    pub profile: String,
    pub epochs: usize,
    pub split: SplitPolicy,
    pub vocab_threshold: usize,
    pub data_seed: u64,
    pub init_seed: u64,
    pub eval_seed: u64,
    pub threads: usize,
    pub budget: EvalBudget,
}

impl ExperimentConfig {
    /// Build from parsed key-values. `model.family` and the three seeds are
    /// required; everything else has defaults. The output directory can be
    /// overridden by OUTFIT_BENCH_OUT_DIR, threads by OUTFIT_BENCH_THREADS.
    pub fn from_kv(map: &KvMap) -> Result<Self, HarnessError> {
        let get = |key: &str| map.get(key).map(String::as_str);
        let required = |key: &str| get(key).ok_or_else(|| HarnessError::Config(format!("missing required key {key}")));
        let parse_num = |key: &str, v: &str| -> Result<u64, HarnessError> {
            v.parse().map_err(|_| HarnessError::Config(format!("{key}: expected a number, got {v:?}")))
        };

        let family_str = required("model.family")?;
        let family = ModelFamily::parse(family_str)
            .ok_or_else(|| HarnessError::Config(format!("unknown model.family {family_str:?}")))?;
        let profile = get("model.profile").unwrap_or("desk").to_string();
        let mut model = match profile.as_str() {
            "desk" => ModelConfig::desk_default(family),
            "paper" => ModelConfig::paper_default(family),
            other => return Err(HarnessError::Config(format!("unknown model.profile {other:?}"))),
        };
        if let Some(v) = get("model.d_model") {
            model.d_model = parse_num("model.d_model", v)? as usize;
        }
        if let Some(v) = get("model.num_layers") {
            model.num_layers = parse_num("model.num_layers", v)? as usize;
        }
        if let Some(v) = get("model.num_heads") {
            model.num_heads = parse_num("model.num_heads", v)? as usize;
        }
        if let Some(v) = get("model.lstm_hidden") {
            model.lstm_hidden = parse_num("model.lstm_hidden", v)? as usize;
        }
        if let Some(v) = get("model.subnet_dim") {
            model.subnet_dim = parse_num("model.subnet_dim", v)? as usize;
        }
        if let Some(v) = get("model.dropout") {
            model.dropout = v.parse().map_err(|_| HarnessError::Config(format!("model.dropout: bad float {v:?}")))?;
        }
        if let Some(v) = get("train.batch_size") {
            model.batch_size = parse_num("train.batch_size", v)? as usize;
        }
        if let Some(v) = get("train.learning_rate") {
            model.learning_rate = v.parse().map_err(|_| HarnessError::Config(format!("train.learning_rate: bad float {v:?}")))?;
        }
        if let Some(v) = get("model.context_mode") {
            model.context_mode = match v {
                "none" => ContextMode::None,
                "questionnaire" => ContextMode::Questionnaire,
                "action_sequence" => ContextMode::ActionSequence,
                other => return Err(HarnessError::Config(format!("unknown model.context_mode {other:?}"))),
            };
        }

        let out_dir = std::env::var("OUTFIT_BENCH_OUT_DIR")
            .map(PathBuf::from)
            .ok()
            .or_else(|| get("out.dir").map(PathBuf::from))
            .ok_or_else(|| HarnessError::Config("missing required key out.dir".into()))?;
        let threads = match std::env::var("OUTFIT_BENCH_THREADS") {
            Ok(v) => parse_num("OUTFIT_BENCH_THREADS", &v)? as usize,
            Err(_) => get("threads").map(|v| parse_num("threads", v)).transpose()?.unwrap_or(0) as usize,
        };

        let split = match get("split.policy") {
            None => SplitPolicy::Random9010,
            Some(v) => SplitPolicy::parse(v).ok_or_else(|| HarnessError::Config(format!("unknown split.policy {v:?}")))?,
        };

        let budget = EvalBudget {
            pp_max_outfits: get("eval.pp_max_outfits").map(|v| parse_num("eval.pp_max_outfits", v)).transpose()?.unwrap_or(1000) as usize,
            fitb_max_outfits: get("eval.fitb_max_outfits").map(|v| parse_num("eval.fitb_max_outfits", v)).transpose()?.unwrap_or(400)
                as usize,
            cp_max_outfits: get("eval.cp_max_outfits").map(|v| parse_num("eval.cp_max_outfits", v)).transpose()?.unwrap_or(1000) as usize,
            ctr_max_users: get("eval.ctr_max_users").map(|v| parse_num("eval.ctr_max_users", v)).transpose()?.unwrap_or(300) as usize,
            generation_samples: get("eval.generation_samples").map(|v| parse_num("eval.generation_samples", v)).transpose()?.unwrap_or(300)
                as usize,
        };

        Ok(Self {
            data_dir: PathBuf::from(required("data.dir")?),
            out_dir,
            model,
            profile,
            epochs: get("train.epochs").map(|v| parse_num("train.epochs", v)).transpose()?.unwrap_or(10) as usize,
            split,
            vocab_threshold: get("vocab.threshold").map(|v| parse_num("vocab.threshold", v)).transpose()?.unwrap_or(8) as usize,
            data_seed: parse_num("seeds.data", required("seeds.data")?)?,
            init_seed: parse_num("seeds.init", required("seeds.init")?)?,
            eval_seed: parse_num("seeds.eval", required("seeds.eval")?)?,
            threads,
            budget,
        })
    }

    /// Snapshot for the run manifest, sufficient to reproduce the run.
    pub fn to_kv(&self) -> KvMap {
        let mut map = KvMap::new();
        map.insert("data.dir".into(), self.data_dir.display().to_string());
        map.insert("out.dir".into(), self.out_dir.display().to_string());
        map.insert("model.family".into(), self.model.family.as_str().into());
        map.insert("model.profile".into(), self.profile.clone());
        map.insert("model.d_model".into(), self.model.d_model.to_string());
        map.insert("model.num_layers".into(), self.model.num_layers.to_string());
        map.insert("model.num_heads".into(), self.model.num_heads.to_string());
        map.insert("model.lstm_hidden".into(), self.model.lstm_hidden.to_string());
        map.insert("model.subnet_dim".into(), self.model.subnet_dim.to_string());
        map.insert("model.dropout".into(), format!("{}", self.model.dropout));
        map.insert("train.batch_size".into(), self.model.batch_size.to_string());
        map.insert("train.learning_rate".into(), format!("{}", self.model.learning_rate));
        map.insert("train.epochs".into(), self.epochs.to_string());
        map.insert("split.policy".into(), self.split.as_str().into());
        map.insert("vocab.threshold".into(), self.vocab_threshold.to_string());
        map.insert("seeds.data".into(), self.data_seed.to_string());
        map.insert("seeds.init".into(), self.init_seed.to_string());
        map.insert("seeds.eval".into(), self.eval_seed.to_string());
        map.insert("threads".into(), self.threads.to_string());
        map.insert("eval.pp_max_outfits".into(), self.budget.pp_max_outfits.to_string());
        map.insert("eval.fitb_max_outfits".into(), self.budget.fitb_max_outfits.to_string());
        map.insert("eval.cp_max_outfits".into(), self.budget.cp_max_outfits.to_string());
        map.insert("eval.ctr_max_users".into(), self.budget.ctr_max_users.to_string());
        map.insert("eval.generation_samples".into(), self.budget.generation_samples.to_string());
        map
    }
}
