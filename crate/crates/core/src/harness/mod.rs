//! Experiment orchestration: dataset splits, training with per-epoch
//! checkpoints and resume, evaluation, manifests, and the comparison
//! table with its directional-claims checklist.

pub mod checkpoint;
pub mod config;
pub mod evalrun;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::io::{read_catalog, read_outfits, read_users, DataError};
use crate::catalog::{default_category_rank, Catalog, Outfit, UserRecord, Vocabulary};
use crate::eval::{report::non_personalized_table, report::personalized_table, EvalReport, MetricKey};
use crate::models::{sample_from_user, train, Model, ModelFamily, TrainSample};
use crate::rng::{derive_rng, stable_hash};
use crate::synthgen::DatasetManifest;

pub use config::{parse_config_file, parse_config_str, EvalBudget, ExperimentConfig, KvMap, SplitPolicy};
pub use evalrun::{evaluate_model, EvalData, EvalInputs};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("model: {0}")]
    Model(String),
    #[error("training: {0}")]
    Train(String),
    #[error("evaluation: {0}")]
    Eval(String),
    #[error("cannot split {n} samples with policy {policy}")]
    Unsplittable { n: usize, policy: String },
    #[error("time-based split requires per-sample timestamps")]
    NoTimestamps,
    #[error("another trainer holds the lock on {0}")]
    Locked(String),
    #[error("comparison: {0}")]
    Compare(String),
}

/// Disjoint, exhaustive train/validation indices. The random policy is
/// seed-deterministic with exactly 10% (rounded) held out; the time-based
/// policy cuts between day groups at the quantile closest to 10%, so every
/// validation timestamp is strictly later than every training one.
pub fn split_indices(
    n: usize,
    days: Option<&[u32]>,
    policy: SplitPolicy,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>), HarnessError> {
    if n < 2 {
        return Err(HarnessError::Unsplittable { n, policy: policy.as_str().to_string() });
    }
    match policy {
        SplitPolicy::Random9010 => {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut derive_rng(seed, "split", &[]));
            let n_val = ((n as f64 * 0.1).round() as usize).clamp(1, n - 1);
            let val = order[..n_val].to_vec();
            let train = order[n_val..].to_vec();
            Ok((train, val))
        }
        SplitPolicy::TimeBased => {
            let days = days.ok_or(HarnessError::NoTimestamps)?;
            assert_eq!(days.len(), n);
            let mut distinct: Vec<u32> = days.to_vec();
            distinct.sort_unstable();
            distinct.dedup();
            if distinct.len() < 2 {
                return Err(HarnessError::Unsplittable { n, policy: "time_based (single day)".into() });
            }
            // smallest cutoff day whose tail is closest to 10%
            let target = (n as f64 * 0.1).max(1.0);
            let mut best = (f64::INFINITY, distinct[distinct.len() - 1]);
            for &d in &distinct[1..] {
                let tail = days.iter().filter(|&&x| x >= d).count() as f64;
                let err = (tail - target).abs();
                if err < best.0 && tail > 0.0 && tail < n as f64 {
                    best = (err, d);
                }
            }
            let cutoff = best.1;
            let mut train = Vec::new();
            let mut val = Vec::new();
            for (i, &d) in days.iter().enumerate() {
                if d >= cutoff {
                    val.push(i);
                } else {
                    train.push(i);
                }
            }
            if train.is_empty() || val.is_empty() {
                return Err(HarnessError::Unsplittable { n, policy: "time_based".into() });
            }
            Ok((train, val))
        }
    }
}

/// Everything needed to re-run the experiment bit-identically, plus the
/// wall-clock fields that are allowed to differ.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: KvMap,
    pub dataset_hash: String,
    pub dataset_id: String,
    pub checkpoint_paths: Vec<String>,
    pub report_path: String,
    pub epochs_trained: usize,
    pub train_log: Vec<train::EpochLog>,
    pub wall_clock_seconds: f64,
}

/// Exclusive-training guard: a lock file in the checkpoint directory.
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(dir: &Path) -> Result<Self, HarnessError> {
        let path = dir.join(".lock");
        match std::fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                use std::io::Write;
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(HarnessError::Locked(dir.display().to_string())),
            Err(e) => Err(HarnessError::Io { path: path.display().to_string(), source: e }),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

pub struct LoadedData {
    pub catalog: Catalog,
    pub outfits: Vec<Outfit>,
    pub click_users: Vec<UserRecord>,
    pub questionnaire_users: Vec<UserRecord>,
    pub manifest: Option<DatasetManifest>,
    pub dataset_hash: String,
}

pub const CATALOG_FILE: &str = "catalog.jsonl";
pub const OUTFITS_FILE: &str = "outfits.jsonl";
pub const CLICK_USERS_FILE: &str = "users_actions.jsonl";
pub const QUESTIONNAIRE_USERS_FILE: &str = "users_questionnaire.jsonl";
pub const DATASET_MANIFEST_FILE: &str = "manifest.json";

pub fn load_data_dir(dir: &Path) -> Result<LoadedData, HarnessError> {
    let catalog = read_catalog(&dir.join(CATALOG_FILE))?;
    let outfits = read_outfits(&dir.join(OUTFITS_FILE))?;
    let click_path = dir.join(CLICK_USERS_FILE);
    let click_users = if click_path.exists() { read_users(&click_path)? } else { Vec::new() };
    let q_path = dir.join(QUESTIONNAIRE_USERS_FILE);
    let questionnaire_users = if q_path.exists() { read_users(&q_path)? } else { Vec::new() };
    let manifest_path = dir.join(DATASET_MANIFEST_FILE);
    let manifest = if manifest_path.exists() {
        let text = std::fs::read_to_string(&manifest_path)
            .map_err(|e| HarnessError::Io { path: manifest_path.display().to_string(), source: e })?;
        Some(serde_json::from_str(&text).map_err(|e| HarnessError::Config(format!("manifest.json: {e}")))?)
    } else {
        None
    };
    // content hash over the dataset files, for the run manifest
    let mut h: u64 = 0;
    for name in [CATALOG_FILE, OUTFITS_FILE, CLICK_USERS_FILE, QUESTIONNAIRE_USERS_FILE] {
        let p = dir.join(name);
        if p.exists() {
            let bytes = std::fs::read(&p).map_err(|e| HarnessError::Io { path: p.display().to_string(), source: e })?;
            h ^= stable_hash(&bytes).rotate_left(7);
        }
    }
    Ok(LoadedData {
        catalog,
        outfits,
        click_users,
        questionnaire_users,
        manifest,
        dataset_hash: format!("{h:016x}"),
    })
}

fn family_uses_users(family: ModelFamily) -> bool {
    matches!(family, ModelFamily::CtxGpt | ModelFamily::CtxBert | ModelFamily::Transformer | ModelFamily::S2sLstm)
}

fn user_file_for(family: ModelFamily) -> &'static str {
    match family {
        ModelFamily::Transformer | ModelFamily::S2sLstm => CLICK_USERS_FILE,
        _ => QUESTIONNAIRE_USERS_FILE,
    }
}

/// Train per the config (resuming from the newest epoch checkpoint if one
/// exists), evaluate on the validation split, and write checkpoint,
/// report (canonical JSON line plus aligned table) and run manifest into
/// the output directory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<(RunManifest, EvalReport), HarnessError> {
    let started = Instant::now();
    let data = load_data_dir(&cfg.data_dir)?;
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| HarnessError::Io { path: cfg.out_dir.display().to_string(), source: e })?;
    let _lock = DirLock::acquire(&cfg.out_dir)?;
    let family = cfg.model.family;
    let rank = data.manifest.as_ref().map(|m| m.world.category_rank.clone()).unwrap_or_else(default_category_rank);

    // vocabulary over the full outfit corpus the family trains on
    let (vocab, user_records): (Vocabulary, Option<Vec<UserRecord>>) = if family_uses_users(family) {
        let records = match user_file_for(family) {
            CLICK_USERS_FILE => data.click_users.clone(),
            _ => data.questionnaire_users.clone(),
        };
        if records.is_empty() {
            return Err(HarnessError::Config(format!("family {} needs {}", family.as_str(), user_file_for(family))));
        }
        let outfits: Vec<Outfit> = records.iter().map(|r| Outfit::new(r.label_outfit.clone(), None)).collect();
        (Vocabulary::build(&outfits, cfg.vocab_threshold).map_err(|e| HarnessError::Config(e.to_string()))?, Some(records))
    } else {
        (
            Vocabulary::build(&data.outfits, cfg.vocab_threshold).map_err(|e| HarnessError::Config(e.to_string()))?,
            None,
        )
    };

    // samples + split
    let (train_samples, val_data): (Vec<TrainSample>, OwnedEvalData) = match &user_records {
        Some(records) => {
            let days: Vec<u32> = records.iter().map(|r| r.day).collect();
            let (train_idx, val_idx) = split_indices(records.len(), Some(&days), cfg.split, cfg.data_seed)?;
            let mode = cfg.model.context_mode;
            let train_samples = train_idx
                .iter()
                .filter_map(|&i| sample_from_user(&records[i], &data.catalog, &vocab, &rank, mode).ok())
                .collect();
            let val_users: Vec<UserRecord> = val_idx.iter().map(|&i| records[i].clone()).collect();
            (train_samples, OwnedEvalData::Users(val_users))
        }
        None => {
            if cfg.split == SplitPolicy::TimeBased {
                return Err(HarnessError::NoTimestamps);
            }
            let (train_idx, val_idx) = split_indices(data.outfits.len(), None, cfg.split, cfg.data_seed)?;
            let train_samples = train_idx
                .iter()
                .filter_map(|&i| {
                    crate::models::outfit_tokens(&data.outfits[i].items, &data.catalog, &vocab, &rank)
                        .ok()
                        .map(|tokens| TrainSample { tokens, context: None })
                })
                .collect();
            let val_outfits: Vec<Outfit> = val_idx.iter().map(|&i| data.outfits[i].clone()).collect();
            (train_samples, OwnedEvalData::Outfits(val_outfits))
        }
    };

    // fresh model or resume from the newest epoch checkpoint
    let ckpt_dir = cfg.out_dir.join("checkpoints");
    std::fs::create_dir_all(&ckpt_dir).map_err(|e| HarnessError::Io { path: ckpt_dir.display().to_string(), source: e })?;
    let (mut model, start_epoch) = match latest_checkpoint(&ckpt_dir)? {
        Some((path, _epoch)) => checkpoint::load_checkpoint(&path, &data.catalog)?,
        None => (
            Model::new(cfg.model.clone(), vocab, &data.catalog, cfg.init_seed).map_err(|e| HarnessError::Model(e.to_string()))?,
            0,
        ),
    };

    let opts = train::TrainOptions {
        epochs: cfg.epochs,
        batch_size: cfg.model.batch_size,
        learning_rate: cfg.model.learning_rate,
        data_seed: cfg.data_seed,
        init_seed: cfg.init_seed,
        start_epoch,
    };
    let mut checkpoint_paths = Vec::new();
    let logs = train::train_with_callback(&mut model, &train_samples, &opts, |m, log| {
        let path = ckpt_dir.join(format!("epoch-{:04}.ckpt", log.epoch + 1));
        checkpoint::save_checkpoint(m, log.epoch + 1, &path).map_err(|e| e.to_string())?;
        checkpoint_paths.push(path.display().to_string());
        prune_checkpoints(&ckpt_dir, 2);
        Ok(())
    });
    let logs = match logs {
        Ok(l) => l,
        Err(train::TrainError::NoSamples) if cfg.epochs == 0 => Vec::new(),
        Err(e) => return Err(HarnessError::Train(e.to_string())),
    };
    // make sure an epoch-0 run still leaves a checkpoint behind
    if cfg.epochs == 0 && latest_checkpoint(&ckpt_dir)?.is_none() {
        let path = ckpt_dir.join("epoch-0000.ckpt");
        checkpoint::save_checkpoint(&model, 0, &path)?;
        checkpoint_paths.push(path.display().to_string());
    }

    // evaluate
    let dataset_id = dataset_id_of(&data);
    let inputs = EvalInputs {
        catalog: &data.catalog,
        world: data.manifest.as_ref().map(|m| &m.world),
        dataset_id: dataset_id.clone(),
        eval_seed: cfg.eval_seed,
        budget: &cfg.budget,
        rank: rank.clone(),
    };
    let model_id = format!("{}-seed{}", family.as_str(), cfg.init_seed);
    let eval_data = match &val_data {
        OwnedEvalData::Outfits(o) => EvalData::Outfits(o),
        OwnedEvalData::Users(u) => EvalData::Users(u),
    };
    let mut report = evaluate_model(&model, &eval_data, &inputs, &model_id, cfg.init_seed)?;
    report.runtime_seconds = started.elapsed().as_secs_f64();

    // artifacts
    let report_path = cfg.out_dir.join("report.json");
    std::fs::write(&report_path, report.to_json_line() + "\n")
        .map_err(|e| HarnessError::Io { path: report_path.display().to_string(), source: e })?;
    let table = match family {
        ModelFamily::Transformer | ModelFamily::S2sLstm => personalized_table(std::slice::from_ref(&report)),
        ModelFamily::Siamese if matches!(val_data, OwnedEvalData::Users(_)) => personalized_table(std::slice::from_ref(&report)),
        _ => non_personalized_table(std::slice::from_ref(&report)),
    };
    let table_path = cfg.out_dir.join("report.txt");
    std::fs::write(&table_path, &table).map_err(|e| HarnessError::Io { path: table_path.display().to_string(), source: e })?;

    let manifest = RunManifest {
        config: cfg.to_kv(),
        dataset_hash: data.dataset_hash.clone(),
        dataset_id,
        checkpoint_paths,
        report_path: report_path.display().to_string(),
        epochs_trained: logs.last().map(|l| l.epoch + 1).unwrap_or(start_epoch),
        train_log: logs,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    };
    let manifest_path = cfg.out_dir.join("manifest.json");
    std::fs::write(&manifest_path, serde_json::to_string_pretty(&manifest).expect("manifest json"))
        .map_err(|e| HarnessError::Io { path: manifest_path.display().to_string(), source: e })?;
    Ok((manifest, report))
}

enum OwnedEvalData {
    Outfits(Vec<Outfit>),
    Users(Vec<UserRecord>),
}

pub fn dataset_id_of(data: &LoadedData) -> String {
    match &data.manifest {
        Some(m) => format!("synth-{}-{}x{}", m.seed, m.num_items, m.num_outfits),
        None => format!("data-{}", data.dataset_hash),
    }
}

fn latest_checkpoint(dir: &Path) -> Result<Option<(PathBuf, usize)>, HarnessError> {
    let mut best: Option<(PathBuf, usize)> = None;
    if !dir.exists() {
        return Ok(None);
    }
    for entry in std::fs::read_dir(dir).map_err(|e| HarnessError::Io { path: dir.display().to_string(), source: e })? {
        let entry = entry.map_err(|e| HarnessError::Io { path: dir.display().to_string(), source: e })?;
        let name = entry.file_name().to_string_lossy().to_string();
        if let Some(num) = name.strip_prefix("epoch-").and_then(|s| s.strip_suffix(".ckpt")) {
            if let Ok(epoch) = num.parse::<usize>() {
                if best.as_ref().map(|(_, b)| epoch > *b).unwrap_or(true) {
                    best = Some((entry.path(), epoch));
                }
            }
        }
    }
    Ok(best)
}

fn prune_checkpoints(dir: &Path, keep: usize) {
    let mut ckpts: Vec<(PathBuf, usize)> = Vec::new();
    let Ok(entries) = std::fs::read_dir(dir) else { return };
    for entry in entries.flatten() {
        let name = entry.file_name().to_string_lossy().to_string();
        if let Some(num) = name.strip_prefix("epoch-").and_then(|s| s.strip_suffix(".ckpt")) {
            if let Ok(epoch) = num.parse::<usize>() {
                ckpts.push((entry.path(), epoch));
            }
        }
    }
    ckpts.sort_by_key(|(_, e)| *e);
    while ckpts.len() > keep {
        let (path, _) = ckpts.remove(0);
        let _ = std::fs::remove_file(path);
    }
}

/// One directional claim of the benchmark checklist.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClaimResult {
    pub id: String,
    pub description: String,
    pub votes_for: usize,
    pub votes_total: usize,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompareOutput {
    pub table: String,
    pub checklist: Vec<ClaimResult>,
}

fn metric_by_family<'r>(reports: &'r [EvalReport], family: &str) -> Vec<&'r EvalReport> {
    reports.iter().filter(|r| r.model_family == family).collect()
}

/// Per-seed pairwise comparison with majority voting. Seeds are matched by
/// report order within each family.
fn vote(
    a: &[&EvalReport],
    b: &[&EvalReport],
    key: MetricKey,
    a_better_is_lower: bool,
) -> Option<(usize, usize, String)> {
    let n = a.len().min(b.len());
    if n == 0 {
        return None;
    }
    let mut wins = 0usize;
    let mut detail = Vec::new();
    for i in 0..n {
        let (va, vb) = (a[i].get(key)?, b[i].get(key)?);
        let win = if a_better_is_lower { va < vb } else { va > vb };
        if win {
            wins += 1;
        }
        detail.push(format!("{:.4} vs {:.4}", va, vb));
    }
    Some((wins, n, detail.join("; ")))
}

fn claim(id: &str, description: &str, parts: Option<Vec<(usize, usize, String)>>) -> ClaimResult {
    match parts {
        None => ClaimResult {
            id: id.to_string(),
            description: description.to_string(),
            votes_for: 0,
            votes_total: 0,
            pass: false,
            detail: "missing reports".to_string(),
        },
        Some(parts) => {
            // every sub-comparison must win its majority
            let pass = parts.iter().all(|(w, n, _)| *n > 0 && 2 * *w > *n);
            let (votes_for, votes_total) = parts.iter().fold((0, 0), |(a, b), (w, n, _)| (a + w, b + n));
            let detail = parts.iter().map(|(_, _, d)| d.clone()).collect::<Vec<_>>().join(" | ");
            ClaimResult { id: id.to_string(), description: description.to_string(), votes_for, votes_total, pass, detail }
        }
    }
}

/// Compare reports sharing a dataset: per-metric tables plus the
/// directional-claims checklist (majority vote across seeds).
pub fn compare(reports: &[EvalReport]) -> Result<CompareOutput, HarnessError> {
    if reports.is_empty() {
        return Err(HarnessError::Compare("no reports".into()));
    }
    let dataset = &reports[0].dataset_id;
    if reports.iter().any(|r| &r.dataset_id != dataset) {
        let ids: BTreeMap<&str, usize> = reports.iter().fold(BTreeMap::new(), |mut m, r| {
            *m.entry(r.dataset_id.as_str()).or_default() += 1;
            m
        });
        return Err(HarnessError::Compare(format!("mixed dataset ids: {ids:?}")));
    }

    let non_personalized: Vec<EvalReport> = reports
        .iter()
        .filter(|r| MetricKey::NON_PERSONALIZED.iter().any(|k| r.get(*k).is_some()))
        .cloned()
        .collect();
    let personalized: Vec<EvalReport> = reports
        .iter()
        .filter(|r| MetricKey::PERSONALIZED.iter().any(|k| r.get(*k).is_some()))
        .cloned()
        .collect();
    let mut table = String::new();
    if !non_personalized.is_empty() {
        table.push_str(&non_personalized_table(&non_personalized));
        table.push('\n');
    }
    if !personalized.is_empty() {
        table.push_str(&personalized_table(&personalized));
        table.push('\n');
    }

    let mut checklist = Vec::new();
    if reports.len() > 1 {
        let gpt = metric_by_family(reports, "gpt");
        let bert = metric_by_family(reports, "bert");
        let lstm = metric_by_family(reports, "lstm");
        let siamese = metric_by_family(reports, "siamese");
        let ctx_gpt = metric_by_family(reports, "ctx_gpt");
        let ctx_bert = metric_by_family(reports, "ctx_bert");
        let transformer = metric_by_family(reports, "transformer");
        let s2s = metric_by_family(reports, "s2s_lstm");

        if !gpt.is_empty() || !bert.is_empty() {
            checklist.push(claim(
                "a",
                "masked model beats autoregressive on FITB@1",
                vote(&bert, &gpt, MetricKey::FitbAt1, false).map(|v| vec![v]),
            ));
            checklist.push(claim(
                "b",
                "autoregressive model has lower perplexity than masked",
                vote(&gpt, &bert, MetricKey::Perplexity, true).map(|v| vec![v]),
            ));
            let c_parts = [
                vote(&gpt, &lstm, MetricKey::CpAuc, false),
                vote(&gpt, &siamese, MetricKey::CpAuc, false),
                vote(&bert, &lstm, MetricKey::CpAuc, false),
                vote(&bert, &siamese, MetricKey::CpAuc, false),
            ];
            checklist.push(claim(
                "c",
                "attention set models beat LSTM and compatibility net on CP",
                c_parts.iter().cloned().collect::<Option<Vec<_>>>(),
            ));
        }
        if !ctx_gpt.is_empty() || !ctx_bert.is_empty() {
            let d_parts = [
                vote(&ctx_gpt, &gpt, MetricKey::Perplexity, true),
                vote(&ctx_bert, &bert, MetricKey::FitbAt1, false),
            ];
            checklist.push(claim(
                "d",
                "context lowers autoregressive perplexity and raises masked FITB",
                d_parts.iter().cloned().collect::<Option<Vec<_>>>(),
            ));
        }
        if !transformer.is_empty() {
            let e_parts = [
                vote(&transformer, &siamese, MetricKey::BrandCategoryRate, false),
                vote(&transformer, &s2s, MetricKey::BrandCategoryRate, false),
            ];
            checklist.push(claim(
                "e",
                "encoder-decoder transformer beats the baselines on brand-category rate",
                e_parts.iter().cloned().collect::<Option<Vec<_>>>(),
            ));
        }
        if !gpt.is_empty() {
            // generated outfits pass the planted rule far above chance
            let parts: Option<Vec<(usize, usize, String)>> = gpt
                .iter()
                .map(|r| {
                    let rate = r.get(MetricKey::OracleCompatibleRate)?;
                    let base: f64 = r.notes.get("oracle_base_rate")?.parse().ok()?;
                    let ok = rate >= 5.0 * base;
                    Some((usize::from(ok), 1, format!("rate {rate:.4} vs base {base:.4}")))
                })
                .collect();
            checklist.push(claim("f", "generated outfits beat 5x the random compatibility base rate", parts));
        }
    }

    Ok(CompareOutput { table, checklist })
}

pub fn render_checklist(checklist: &[ClaimResult]) -> String {
    let mut out = String::new();
    for c in checklist {
        out.push_str(&format!(
            "claim ({}) {}: {} [{}/{} seed votes] {}\n",
            c.id,
            c.description,
            if c.pass { "PASS" } else { "FAIL" },
            c.votes_for,
            c.votes_total,
            c.detail
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_split_exact_and_deterministic() {
        let (train, val) = split_indices(100, None, SplitPolicy::Random9010, 7).unwrap();
        assert_eq!(train.len(), 90);
        assert_eq!(val.len(), 10);
        let (t2, v2) = split_indices(100, None, SplitPolicy::Random9010, 7).unwrap();
        assert_eq!(train, t2);
        assert_eq!(val, v2);
        // disjoint and exhaustive
        let mut all: Vec<usize> = train.iter().chain(val.iter()).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn time_split_separates_days_strictly() {
        let days: Vec<u32> = (0..200).map(|i| (i % 20) as u32).collect();
        let (train, val) = split_indices(200, Some(&days), SplitPolicy::TimeBased, 0).unwrap();
        let max_train = train.iter().map(|&i| days[i]).max().unwrap();
        let min_val = val.iter().map(|&i| days[i]).min().unwrap();
        assert!(max_train < min_val, "train days must all precede validation days");
        let frac = val.len() as f64 / 200.0;
        assert!((0.03..0.3).contains(&frac), "validation fraction {frac} too far from 10%");
    }

    #[test]
    fn time_split_requires_timestamps() {
        assert!(matches!(split_indices(10, None, SplitPolicy::TimeBased, 0), Err(HarnessError::NoTimestamps)));
    }

    #[test]
    fn unsplittable_too_few_samples() {
        assert!(matches!(split_indices(1, None, SplitPolicy::Random9010, 0), Err(HarnessError::Unsplittable { .. })));
    }

    #[test]
    fn lock_is_exclusive_and_released() {
        let dir = tempfile::tempdir().unwrap();
        let lock = DirLock::acquire(dir.path()).unwrap();
        assert!(matches!(DirLock::acquire(dir.path()), Err(HarnessError::Locked(_))));
        drop(lock);
        let _again = DirLock::acquire(dir.path()).unwrap();
    }

    #[test]
    fn compare_rejects_mixed_datasets() {
        let a = EvalReport::new("gpt", "gpt", "ds1", 1);
        let b = EvalReport::new("bert", "bert", "ds2", 1);
        assert!(matches!(compare(&[a, b]), Err(HarnessError::Compare(_))));
    }

    #[test]
    fn compare_single_report_skips_checklist() {
        let mut a = EvalReport::new("gpt", "gpt", "ds1", 1);
        a.set(MetricKey::CpAuc, 0.9);
        let out = compare(std::slice::from_ref(&a)).unwrap();
        assert!(out.checklist.is_empty());
        assert!(out.table.contains("gpt"));
    }

    #[test]
    fn compare_checklist_votes() {
        let mk = |fam: &str, seed: u64, pp: f64, fitb: f64, cp: f64| {
            let mut r = EvalReport::new(&format!("{fam}-{seed}"), fam, "ds1", seed);
            r.set(MetricKey::Perplexity, pp);
            r.set(MetricKey::FitbAt1, fitb);
            r.set(MetricKey::CpAuc, cp);
            r
        };
        let reports = vec![
            mk("gpt", 1, 90.0, 0.18, 0.97),
            mk("gpt", 2, 95.0, 0.17, 0.96),
            mk("bert", 1, 180_000.0, 0.49, 0.98),
            mk("bert", 2, 170_000.0, 0.5, 0.97),
            mk("lstm", 1, 34_000.0, 0.02, 0.69),
            mk("lstm", 2, 33_000.0, 0.03, 0.7),
            mk("siamese", 1, f64::NAN, 0.004, 0.74),
            mk("siamese", 2, f64::NAN, 0.005, 0.73),
        ];
        let out = compare(&reports).unwrap();
        let a = out.checklist.iter().find(|c| c.id == "a").unwrap();
        assert!(a.pass, "{a:?}");
        let b = out.checklist.iter().find(|c| c.id == "b").unwrap();
        assert!(b.pass, "{b:?}");
        let c = out.checklist.iter().find(|c| c.id == "c").unwrap();
        assert!(c.pass, "{c:?}");
    }
}
