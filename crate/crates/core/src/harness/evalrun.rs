//! Per-family evaluation: drives the metric suite over a validation split
//! and fills an EvalReport row.

use std::collections::BTreeSet;

use rand::Rng;

use crate::catalog::{Catalog, ItemId, Outfit, UserRecord, Vocabulary, MASK_TOKEN};
use crate::eval::{
    attribute_match_rate, compatibility_auc, fitb, item_diversity, masked_left_to_right_ce, perplexity,
    personalization_rate, sequence_ce, EvalReport, FitbQuery, MatchSchema, MetricKey, RankCutoffs,
};
use crate::generation::{autoregressive_generate, build_candidate_index, gibbs_generate, personalized_recommend, GibbsOptions, SampleOptions};
use crate::models::{actions_context, lstm::Direction, outfit_tokens, questionnaire_slots, ContextInput, Model};
use crate::nn::functional::{logsumexp, nll};
use crate::rng::derive_rng;
use crate::scoring::{MaskedScorer, NextItemScorer};
use crate::synthgen::{oracle_compatible, StyleWorld};

use super::config::EvalBudget;
use super::HarnessError;

pub struct EvalInputs<'a> {
    pub catalog: &'a Catalog,
    pub world: Option<&'a StyleWorld>,
    pub dataset_id: String,
    pub eval_seed: u64,
    pub budget: &'a EvalBudget,
    pub rank: Vec<String>,
}

/// Validation data: plain outfits for the compatibility families, user
/// records for the personalized ones.
pub enum EvalData<'a> {
    Outfits(&'a [Outfit]),
    Users(&'a [UserRecord]),
}

fn tokenize_all(outfits: &[Outfit], inputs: &EvalInputs, vocab: &Vocabulary, cap: usize) -> Vec<Vec<usize>> {
    outfits
        .iter()
        .take(cap)
        .filter_map(|o| outfit_tokens(&o.items, inputs.catalog, vocab, &inputs.rank).ok())
        .collect()
}

fn tokens_to_items(tokens: &[usize], vocab: &Vocabulary) -> Option<Outfit> {
    let ids: Vec<ItemId> = tokens.iter().filter_map(|&t| vocab.item_id(t).map(str::to_string)).collect();
    if ids.len() == tokens.len() && !ids.is_empty() {
        Some(Outfit::new(ids, None))
    } else {
        None
    }
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let lse = logsumexp(logits);
    logits.iter().map(|&v| v - lse).collect()
}

/// Monte-Carlo base rate of oracle compatibility for uniform random item
/// sets matching the size distribution of `sizes`.
fn oracle_base_rate(world: &StyleWorld, catalog: &Catalog, sizes: &[usize], seed: u64, draws: usize) -> f64 {
    let mut rng = derive_rng(seed, "oracle-base-rate", &[]);
    let mut hits = 0usize;
    for d in 0..draws {
        let n = sizes[d % sizes.len()].max(2);
        let mut ids = BTreeSet::new();
        while ids.len() < n {
            ids.insert(catalog.items()[rng.gen_range(0..catalog.len())].item_id.clone());
        }
        let outfit = Outfit::new(ids.into_iter().collect(), None);
        if oracle_compatible(&outfit, catalog, world).unwrap_or(false) {
            hits += 1;
        }
    }
    hits as f64 / draws as f64
}

fn record_oracle_rate(report: &mut EvalReport, generated: &[Outfit], inputs: &EvalInputs) {
    let Some(world) = inputs.world else { return };
    if generated.is_empty() {
        return;
    }
    let ok = generated
        .iter()
        .filter(|o| oracle_compatible(o, inputs.catalog, world).unwrap_or(false))
        .count();
    report.set(MetricKey::OracleCompatibleRate, ok as f64 / generated.len() as f64);
    let sizes: Vec<usize> = generated.iter().map(Outfit::len).collect();
    let base = oracle_base_rate(world, inputs.catalog, &sizes, inputs.eval_seed, 20_000);
    report.notes.insert("oracle_base_rate".to_string(), format!("{base}"));
}

pub fn evaluate_model(
    model: &Model,
    data: &EvalData,
    inputs: &EvalInputs,
    model_id: &str,
    seed_label: u64,
) -> Result<EvalReport, HarnessError> {
    let mut report = EvalReport::new(model_id, model.family().as_str(), &inputs.dataset_id, seed_label);
    match (model, data) {
        (Model::Gpt(m), EvalData::Outfits(outfits)) => {
            let vocab = m.vocab.clone();
            let features = m.frozen_features();
            let scorer = m.scorer_with(features.clone(), None).map_err(model_err)?;
            let seqs = tokenize_all(outfits, inputs, &vocab, inputs.budget.pp_max_outfits);
            let pp = perplexity(&seqs, |t| sequence_ce(&scorer, t));
            report.set(MetricKey::Perplexity, pp.perplexity);
            report.notes.insert("pp_skipped_oov".into(), pp.skipped_oov.to_string());
            fitb_into_report(&mut report, &seqs, inputs, &vocab, |q| {
                // GPT protocol: drop the masked item, read the prediction
                // after the remaining items
                let mut remaining = q.tokens.clone();
                remaining.remove(q.mask_pos);
                scorer.next_logits(&remaining)
            });
            cp_into_report(&mut report, outfits, inputs, &vocab, |tokens| Some((-sequence_ce(&scorer, tokens)).exp()))?;
            let generated = sample_autoregressive(&scorer, &vocab, inputs, &m.features, inputs.budget.generation_samples, 1.0);
            record_oracle_rate(&mut report, &generated, inputs);
        }
        (Model::Gpt(m), EvalData::Users(records)) => {
            // contextual GPT: per-user context, questionnaire datasets
            let vocab = m.vocab.clone();
            let features = m.frozen_features();
            let (seqs, contexts, outfits) = user_sequences(records, inputs, &vocab, inputs.budget.pp_max_outfits);
            let pp = {
                let mut total = 0.0;
                let mut scored = 0usize;
                let mut skipped = 0usize;
                for (tokens, ctx) in seqs.iter().zip(&contexts) {
                    if tokens.iter().any(|&t| t == crate::catalog::UNK_TOKEN) {
                        skipped += 1;
                        continue;
                    }
                    let scorer = m.scorer_with(features.clone(), ctx.as_ref()).map_err(model_err)?;
                    total += sequence_ce(&scorer, tokens).exp();
                    scored += 1;
                }
                report.notes.insert("pp_skipped_oov".into(), skipped.to_string());
                if scored > 0 {
                    total / scored as f64
                } else {
                    f64::INFINITY
                }
            };
            report.set(MetricKey::Perplexity, pp);
            fitb_into_report(&mut report, &seqs, inputs, &vocab, |q| {
                let scorer = m.scorer_with(features.clone(), contexts[q.seq_index].as_ref()).expect("scorer");
                let mut remaining = q.tokens.clone();
                remaining.remove(q.mask_pos);
                scorer.next_logits(&remaining)
            });
            // fixed-length personalized generation for the keep-rate proxies
            let mut recommended = Vec::new();
            let mut references = Vec::new();
            for (i, record) in records.iter().take(inputs.budget.ctr_max_users).enumerate() {
                let ctx = contexts.get(i).and_then(|c| c.clone());
                let scorer = m.scorer_with(features.clone(), ctx.as_ref()).map_err(model_err)?;
                let n = records[i].label_outfit.len().clamp(2, 7);
                let opts = SampleOptions { temperature: 0.0, fixed_length: Some(n), max_len: 7, ..SampleOptions::default() };
                if let Ok((tokens, _)) = autoregressive_generate(&scorer, &[], &opts, Some(&m.features), inputs.eval_seed) {
                    if let Some(outfit) = tokens_to_items(&tokens, &vocab) {
                        recommended.push(outfit);
                        references.push(record.label_outfit.clone());
                    }
                }
            }
            rates_into_report(&mut report, &recommended, &references, inputs);
            let _ = outfits;
        }
        (Model::Bert(m), EvalData::Outfits(outfits)) => {
            let vocab = m.vocab.clone();
            let features = m.frozen_features();
            let scorer = m.scorer_with(features.clone(), None).map_err(model_err)?;
            let seqs = tokenize_all(outfits, inputs, &vocab, inputs.budget.pp_max_outfits);
            let pp = perplexity(&seqs, |t| masked_left_to_right_ce(&scorer, t));
            report.set(MetricKey::Perplexity, pp.perplexity);
            report.notes.insert("pp_skipped_oov".into(), pp.skipped_oov.to_string());
            fitb_into_report(&mut report, &seqs, inputs, &vocab, |q| {
                let mut masked = q.tokens.clone();
                masked[q.mask_pos] = MASK_TOKEN;
                scorer.masked_logits(&masked, q.mask_pos)
            });
            cp_into_report(&mut report, outfits, inputs, &vocab, |tokens| Some((-bert_full_context_ce(&scorer, tokens)).exp()))?;
            let generated = sample_gibbs(&scorer, &vocab, inputs, inputs.budget.generation_samples / 3);
            record_oracle_rate(&mut report, &generated, inputs);
        }
        (Model::Bert(m), EvalData::Users(records)) => {
            let vocab = m.vocab.clone();
            let features = m.frozen_features();
            let (seqs, contexts, _) = user_sequences(records, inputs, &vocab, inputs.budget.pp_max_outfits);
            let pp = {
                let mut total = 0.0;
                let mut scored = 0usize;
                let mut skipped = 0usize;
                for (tokens, ctx) in seqs.iter().zip(&contexts) {
                    if tokens.iter().any(|&t| t == crate::catalog::UNK_TOKEN) {
                        skipped += 1;
                        continue;
                    }
                    let scorer = m.scorer_with(features.clone(), ctx.as_ref()).map_err(model_err)?;
                    total += masked_left_to_right_ce(&scorer, tokens).exp();
                    scored += 1;
                }
                report.notes.insert("pp_skipped_oov".into(), skipped.to_string());
                if scored > 0 {
                    total / scored as f64
                } else {
                    f64::INFINITY
                }
            };
            report.set(MetricKey::Perplexity, pp);
            fitb_into_report(&mut report, &seqs, inputs, &vocab, |q| {
                let scorer = m.scorer_with(features.clone(), contexts[q.seq_index].as_ref()).expect("scorer");
                let mut masked = q.tokens.clone();
                masked[q.mask_pos] = MASK_TOKEN;
                scorer.masked_logits(&masked, q.mask_pos)
            });
            // Gibbs-sampled personalized outfits for the keep-rate proxies
            let mut recommended = Vec::new();
            let mut references = Vec::new();
            for (i, record) in records.iter().take(inputs.budget.ctr_max_users / 2).enumerate() {
                let ctx = contexts.get(i).and_then(|c| c.clone());
                let scorer = m.scorer_with(features.clone(), ctx.as_ref()).map_err(model_err)?;
                let n = record.label_outfit.len().clamp(2, 7);
                let gibbs_opts = GibbsOptions { suppress_duplicates: true };
                if let Ok((tokens, _)) = gibbs_generate(&scorer, n, 10 * n, &gibbs_opts, derive_seed(inputs.eval_seed, i)) {
                    if let Some(outfit) = tokens_to_items(&tokens, &vocab) {
                        recommended.push(outfit);
                        references.push(record.label_outfit.clone());
                    }
                }
            }
            rates_into_report(&mut report, &recommended, &references, inputs);
        }
        (Model::Lstm(m), EvalData::Outfits(outfits)) => {
            let vocab = m.vocab.clone();
            let features = m.frozen_features();
            let fwd = m.scorer_with(features.clone(), Direction::Forward);
            let bwd = m.scorer_with(features.clone(), Direction::Backward);
            let seqs = tokenize_all(outfits, inputs, &vocab, inputs.budget.pp_max_outfits);
            // Eq-1 loss is the model's cross-entropy; its exponential is the
            // perplexity (both directions, stop steps included)
            let pp = perplexity(&seqs, |t| m.loss(t).unwrap_or(f64::INFINITY));
            report.set(MetricKey::Perplexity, pp.perplexity);
            report.notes.insert("pp_skipped_oov".into(), pp.skipped_oov.to_string());
            fitb_into_report(&mut report, &seqs, inputs, &vocab, |q| {
                // bidirectional fusion: forward log-probs from the left
                // prefix plus backward log-probs from the reversed suffix
                let left = &q.tokens[..q.mask_pos];
                let right: Vec<usize> = q.tokens[q.mask_pos + 1..].iter().rev().copied().collect();
                let lf = log_softmax(&fwd.next_logits(left));
                let lb = log_softmax(&bwd.next_logits(&right));
                lf.iter().zip(&lb).map(|(a, b)| a + b).collect()
            });
            cp_into_report(&mut report, outfits, inputs, &vocab, |tokens| m.loss(tokens).ok().map(|l| (-l).exp()))?;
            let generated = sample_autoregressive(&fwd, &vocab, inputs, &m.features, inputs.budget.generation_samples, 1.0);
            record_oracle_rate(&mut report, &generated, inputs);
        }
        (Model::Siamese(m), EvalData::Outfits(outfits)) => {
            let vocab = m.vocab.clone();
            let scorer = m.scorer();
            let seqs = tokenize_all(outfits, inputs, &vocab, inputs.budget.fitb_max_outfits.min(150));
            cp_into_report(&mut report, outfits, inputs, &vocab, |tokens| scorer.outfit_score(tokens).ok())?;
            let fitb_seqs: Vec<Vec<usize>> = seqs.into_iter().take(inputs.budget.fitb_max_outfits.min(150)).collect();
            fitb_into_report(&mut report, &fitb_seqs, inputs, &vocab, |q| {
                let mut others = q.tokens.clone();
                others.remove(q.mask_pos);
                scorer.blank_scores(&others)
            });
        }
        (Model::Siamese(m), EvalData::Users(records)) => {
            // personalized pipeline: precomputed candidates around the
            // anchor, ranked by browsing-history similarity
            let vocab = m.vocab.clone();
            let scorer = m.scorer();
            let Some(world) = inputs.world else {
                return Err(HarnessError::Config("siamese personalized evaluation needs the dataset manifest (world)".into()));
            };
            let users: Vec<&UserRecord> = records.iter().take(inputs.budget.ctr_max_users).collect();
            let mut anchors: Vec<ItemId> = Vec::new();
            for r in &users {
                if let Some(actions) = r.context.actions() {
                    if let Some(last) = actions.last() {
                        if vocab.contains(&last.item_id) && !anchors.contains(&last.item_id) {
                            anchors.push(last.item_id.clone());
                        }
                    }
                }
            }
            let index = build_candidate_index(
                &anchors,
                &world.templates(),
                inputs.catalog,
                &vocab,
                |tokens| scorer.outfit_score(tokens).ok(),
                0.5,
                100,
                200,
                inputs.eval_seed,
            );
            let mut recommended = Vec::new();
            let mut references = Vec::new();
            for r in &users {
                let Some(actions) = r.context.actions() else { continue };
                let Some(anchor) = actions.last().map(|a| a.item_id.clone()) else { continue };
                let history: Vec<&[f64]> = actions
                    .iter()
                    .filter_map(|a| inputs.catalog.item(&a.item_id).ok().map(|it| it.image_vec.as_slice()))
                    .collect();
                if history.is_empty() {
                    continue;
                }
                if let Ok(outfit) = personalized_recommend(&history, &anchor, &index, inputs.catalog) {
                    recommended.push(outfit.clone());
                    references.push(r.label_outfit.iter().filter(|id| **id != anchor).cloned().collect());
                }
            }
            rates_into_report(&mut report, &recommended, &references, inputs);
            record_oracle_rate(&mut report, &recommended, inputs);
        }
        (Model::Transformer(m), EvalData::Users(records)) => {
            let vocab = m.vocab.clone();
            let features = m.frozen_features();
            let mut recommended = Vec::new();
            let mut references = Vec::new();
            for r in records.iter().take(inputs.budget.ctr_max_users) {
                let Some(actions) = r.context.actions() else { continue };
                let Some(anchor) = actions.last() else { continue };
                let Some(anchor_token) = vocab.index_of(&anchor.item_id) else { continue };
                let ctx = actions_context(actions, &vocab);
                let Ok(scorer) = m.scorer_with(features.clone(), &ctx) else { continue };
                let opts = SampleOptions { temperature: 0.0, max_len: 7, ..SampleOptions::default() };
                if let Ok((tokens, _)) = autoregressive_generate(&scorer, &[anchor_token], &opts, Some(&m.features), inputs.eval_seed) {
                    if let Some(outfit) = tokens_to_items(&tokens, &vocab) {
                        recommended.push(outfit);
                        references.push(r.label_outfit.iter().filter(|id| **id != anchor.item_id).cloned().collect());
                    }
                }
            }
            rates_into_report(&mut report, &recommended, &references, inputs);
            record_oracle_rate(&mut report, &recommended, inputs);
        }
        (Model::S2s(m), EvalData::Users(records)) => {
            let vocab = m.vocab.clone();
            let features = m.frozen_features();
            let mut recommended = Vec::new();
            let mut references = Vec::new();
            for r in records.iter().take(inputs.budget.ctr_max_users) {
                let Some(actions) = r.context.actions() else { continue };
                let Some(anchor) = actions.last() else { continue };
                let Some(anchor_token) = vocab.index_of(&anchor.item_id) else { continue };
                let ctx = actions_context(actions, &vocab);
                let Ok(scorer) = m.scorer_with(features.clone(), &ctx, Direction::Forward) else { continue };
                let opts = SampleOptions { temperature: 0.0, max_len: 7, ..SampleOptions::default() };
                if let Ok((tokens, _)) = autoregressive_generate(&scorer, &[anchor_token], &opts, Some(&m.features), inputs.eval_seed) {
                    if let Some(outfit) = tokens_to_items(&tokens, &vocab) {
                        recommended.push(outfit);
                        references.push(r.label_outfit.iter().filter(|id| **id != anchor.item_id).cloned().collect());
                    }
                }
            }
            rates_into_report(&mut report, &recommended, &references, inputs);
            record_oracle_rate(&mut report, &recommended, inputs);
        }
        (_, _) => {
            return Err(HarnessError::Config(format!(
                "family {} cannot be evaluated on this dataset kind",
                model.family().as_str()
            )))
        }
    }
    Ok(report)
}

fn model_err(e: crate::models::ModelError) -> HarnessError {
    HarnessError::Model(e.to_string())
}

fn derive_seed(seed: u64, idx: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(idx as u64)
}

/// Mean masked NLL with full bilateral context (the masked model's own
/// objective), used as its compatibility score.
fn bert_full_context_ce(scorer: &dyn MaskedScorer, tokens: &[usize]) -> f64 {
    let mut total = 0.0;
    for pos in 0..tokens.len() {
        let mut masked = tokens.to_vec();
        masked[pos] = MASK_TOKEN;
        let logits = scorer.masked_logits(&masked, pos);
        total += nll(&logits, tokens[pos]);
    }
    total / tokens.len() as f64
}

fn user_sequences(
    records: &[UserRecord],
    inputs: &EvalInputs,
    vocab: &Vocabulary,
    cap: usize,
) -> (Vec<Vec<usize>>, Vec<Option<ContextInput>>, Vec<Outfit>) {
    let mut seqs = Vec::new();
    let mut contexts = Vec::new();
    let mut outfits = Vec::new();
    for r in records.iter().take(cap) {
        let Ok(tokens) = outfit_tokens(&r.label_outfit, inputs.catalog, vocab, &inputs.rank) else { continue };
        let ctx = match &r.context {
            crate::catalog::UserContext::Questionnaire { answers } => {
                Some(ContextInput::Questionnaire { field_slots: questionnaire_slots(answers) })
            }
            crate::catalog::UserContext::ActionSequence { actions } => Some(actions_context(actions, vocab)),
        };
        seqs.push(tokens);
        contexts.push(ctx);
        outfits.push(Outfit::new(r.label_outfit.clone(), None));
    }
    (seqs, contexts, outfits)
}

fn fitb_into_report(
    report: &mut EvalReport,
    seqs: &[Vec<usize>],
    inputs: &EvalInputs,
    vocab: &Vocabulary,
    scores_fn: impl FnMut(&FitbQuery) -> Vec<f64>,
) {
    let cutoffs = RankCutoffs::standard(vocab.num_items());
    let capped: Vec<Vec<usize>> = seqs.iter().take(inputs.budget.fitb_max_outfits).cloned().collect();
    let result = fitb(&capped, &cutoffs, vocab.size(), inputs.eval_seed, scores_fn);
    for (r, recall) in result.cutoffs.iter().zip(&result.recall) {
        if let Some(key) = MetricKey::fitb(*r) {
            report.set(key, *recall);
        }
    }
    report.notes.insert("fitb_queries".into(), result.queries.to_string());
}

fn cp_into_report(
    report: &mut EvalReport,
    outfits: &[Outfit],
    inputs: &EvalInputs,
    vocab: &Vocabulary,
    score_tokens: impl Fn(&[usize]) -> Option<f64>,
) -> Result<(), HarnessError> {
    let capped: Vec<Outfit> = outfits.iter().take(inputs.budget.cp_max_outfits).cloned().collect();
    let result = compatibility_auc(&capped, vocab, inputs.eval_seed, |outfit| {
        let tokens = outfit_tokens(&outfit.items, inputs.catalog, vocab, &inputs.rank).ok()?;
        score_tokens(&tokens)
    })
    .map_err(|e| HarnessError::Eval(e.to_string()))?;
    report.set(MetricKey::CpAuc, result.auc);
    report.notes.insert("cp_pairs".into(), result.pairs.to_string());
    Ok(())
}

fn rates_into_report(report: &mut EvalReport, recommended: &[Outfit], references: &[Vec<ItemId>], inputs: &EvalInputs) {
    if recommended.is_empty() {
        return;
    }
    for schema in [MatchSchema::BrandCategory, MatchSchema::ColorCategory, MatchSchema::BrandColorCategory] {
        let rate = attribute_match_rate(recommended, references, inputs.catalog, schema);
        let key = match schema {
            MatchSchema::BrandCategory => MetricKey::BrandCategoryRate,
            MatchSchema::ColorCategory => MetricKey::ColorCategoryRate,
            MatchSchema::BrandColorCategory => MetricKey::BrandColorCategoryRate,
        };
        report.set(key, rate);
    }
    if let Ok(p) = personalization_rate(recommended) {
        report.set(MetricKey::PersonalizationRate, p);
    }
    if let Ok(d) = item_diversity(recommended) {
        report.set(MetricKey::ItemDiversity, d);
    }
    report.notes.insert("served_users".into(), recommended.len().to_string());
}

fn sample_autoregressive(
    scorer: &dyn NextItemScorer,
    vocab: &Vocabulary,
    inputs: &EvalInputs,
    features: &crate::models::ItemFeatures,
    count: usize,
    temperature: f64,
) -> Vec<Outfit> {
    let mut out = Vec::new();
    for k in 0..count {
        let opts = SampleOptions { temperature, max_len: 7, ..SampleOptions::default() };
        if let Ok((tokens, _)) = autoregressive_generate(scorer, &[], &opts, Some(features), derive_seed(inputs.eval_seed, k)) {
            if tokens.len() >= 2 {
                if let Some(outfit) = tokens_to_items(&tokens, vocab) {
                    out.push(outfit);
                }
            }
        }
    }
    out
}

fn sample_gibbs(scorer: &dyn MaskedScorer, vocab: &Vocabulary, inputs: &EvalInputs, count: usize) -> Vec<Outfit> {
    let mut out = Vec::new();
    let opts = GibbsOptions { suppress_duplicates: true };
    for k in 0..count {
        let n = 3 + (k % 4); // lengths 3..=6
        if let Ok((tokens, _)) = gibbs_generate(scorer, n, 10 * n, &opts, derive_seed(inputs.eval_seed, k)) {
            if let Some(outfit) = tokens_to_items(&tokens, vocab) {
                out.push(outfit);
            }
        }
    }
    out
}
