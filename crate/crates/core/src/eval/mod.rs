//! Metric suite: perplexity, fill-in-the-blank recall, compatibility AUC,
//! attribute match rates, personalization rate and item diversity.

pub mod report;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{Catalog, ItemId, Outfit, Vocabulary, MASK_TOKEN, UNK_TOKEN};
use crate::rng::derive_rng;
use crate::scoring::{MaskedScorer, NextItemScorer};
use crate::synthgen::corrupt_one_from_pool;

pub use report::{EvalReport, MetricKey};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("need at least two outfits to compute AUC, got {0}")]
    TooFewForAuc(usize),
    #[error("cutoffs must be strictly increasing and at most the vocabulary size {vocab}: {cutoffs:?}")]
    BadCutoffs { cutoffs: Vec<usize>, vocab: usize },
    #[error("no recommendations to evaluate")]
    Empty,
}

/// FITB rank cutoffs, strictly increasing, bounded by the vocabulary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankCutoffs(Vec<usize>);

impl RankCutoffs {
    pub fn new(cutoffs: Vec<usize>, vocab_items: usize) -> Result<Self, EvalError> {
        let increasing = cutoffs.windows(2).all(|w| w[0] < w[1]);
        if cutoffs.is_empty() || !increasing || *cutoffs.last().unwrap() > vocab_items {
            return Err(EvalError::BadCutoffs { cutoffs, vocab: vocab_items });
        }
        Ok(Self(cutoffs))
    }

    /// The paper cutoffs {1, 5, 25, 250}, clipped against small test
    /// vocabularies.
    pub fn standard(vocab_items: usize) -> Self {
        let cutoffs: Vec<usize> = [1usize, 5, 25, 250].iter().copied().filter(|&r| r <= vocab_items).collect();
        Self(cutoffs)
    }

    pub fn values(&self) -> &[usize] {
        &self.0
    }
}

/// Mann-Whitney rank-sum AUC with midranks for ties.
pub fn auc_from_scores(pos: &[f64], neg: &[f64]) -> Option<f64> {
    if pos.is_empty() || neg.is_empty() {
        return None;
    }
    let mut all: Vec<(f64, bool)> = pos.iter().map(|&s| (s, true)).chain(neg.iter().map(|&s| (s, false))).collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        // ranks are 1-based; tied block [i, j) gets the midrank
        let midrank = (i + 1 + j) as f64 / 2.0;
        for item in &all[i..j] {
            if item.1 {
                rank_sum_pos += midrank;
            }
        }
        i = j;
    }
    let (np, nn) = (pos.len() as f64, neg.len() as f64);
    Some((rank_sum_pos - np * (np + 1.0) / 2.0) / (np * nn))
}

/// Left-to-right cross-entropy of an item-token sequence under an
/// autoregressive scorer: mean NLL of each token given its prefix.
pub fn sequence_ce(scorer: &dyn NextItemScorer, tokens: &[usize]) -> f64 {
    assert!(!tokens.is_empty());
    let mut total = 0.0;
    for t in 0..tokens.len() {
        let logits = scorer.next_logits(&tokens[..t]);
        total += crate::nn::functional::nll(&logits, tokens[t]);
    }
    total / tokens.len() as f64
}

/// The comparability protocol for masked models: mask every position once,
/// with everything to its right removed, so each term conditions only on
/// the left context.
pub fn masked_left_to_right_ce(scorer: &dyn MaskedScorer, tokens: &[usize]) -> f64 {
    assert!(!tokens.is_empty());
    let mut total = 0.0;
    for t in 0..tokens.len() {
        let mut input: Vec<usize> = tokens[..t].to_vec();
        input.push(MASK_TOKEN);
        let logits = scorer.masked_logits(&input, t);
        total += crate::nn::functional::nll(&logits, tokens[t]);
    }
    total / tokens.len() as f64
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct PerplexityResult {
    pub perplexity: f64,
    pub scored: usize,
    pub skipped_oov: usize,
}

/// Mean over outfits of exp(mean cross-entropy). Outfits containing an
/// out-of-vocabulary target are skipped and counted.
pub fn perplexity(token_seqs: &[Vec<usize>], ce_fn: impl Fn(&[usize]) -> f64) -> PerplexityResult {
    let mut sum = 0.0;
    let mut scored = 0usize;
    let mut skipped = 0usize;
    for tokens in token_seqs {
        if tokens.is_empty() || tokens.iter().any(|&t| t == UNK_TOKEN) {
            skipped += 1;
            continue;
        }
        sum += ce_fn(tokens).exp();
        scored += 1;
    }
    PerplexityResult {
        perplexity: if scored > 0 { sum / scored as f64 } else { f64::INFINITY },
        scored,
        skipped_oov: skipped,
    }
}

/// A fill-in-the-blank query: the outfit's tokens with one masked slot.
/// `seq_index` refers back into the evaluated sequence list so per-user
/// scorers can be looked up.
#[derive(Debug, Clone)]
pub struct FitbQuery {
    pub seq_index: usize,
    pub tokens: Vec<usize>,
    pub mask_pos: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitbResult {
    pub cutoffs: Vec<usize>,
    pub recall: Vec<f64>,
    pub queries: usize,
    pub skipped_oov: usize,
}

impl FitbResult {
    pub fn recall_at(&self, r: usize) -> Option<f64> {
        self.cutoffs.iter().position(|&c| c == r).map(|i| self.recall[i])
    }
}

/// FITB recall@r: one uniformly chosen masked position per outfit (seeded),
/// scored over item tokens only. `scores_fn` returns a score per vocabulary
/// index; only indices >= [`Vocabulary::FIRST_ITEM`] participate in the
/// ranking.
pub fn fitb(
    token_seqs: &[Vec<usize>],
    cutoffs: &RankCutoffs,
    vocab_size: usize,
    rng_seed: u64,
    mut scores_fn: impl FnMut(&FitbQuery) -> Vec<f64>,
) -> FitbResult {
    use rand::Rng;
    let mut rng = derive_rng(rng_seed, "fitb-mask", &[]);
    let mut hits = vec![0usize; cutoffs.values().len()];
    let mut queries = 0usize;
    let mut skipped = 0usize;
    for (seq_index, tokens) in token_seqs.iter().enumerate() {
        if tokens.len() < 2 || tokens.iter().any(|&t| t == UNK_TOKEN) {
            skipped += 1;
            continue;
        }
        let mask_pos = rng.gen_range(0..tokens.len());
        let target = tokens[mask_pos];
        let scores = scores_fn(&FitbQuery { seq_index, tokens: tokens.clone(), mask_pos });
        assert_eq!(scores.len(), vocab_size, "scorer must cover the vocabulary");
        let target_score = scores[target];
        let mut rank = 1usize;
        for (idx, &s) in scores.iter().enumerate().skip(Vocabulary::FIRST_ITEM) {
            if idx == target {
                continue;
            }
            if s > target_score || (s == target_score && idx < target) {
                rank += 1;
            }
        }
        for (i, &r) in cutoffs.values().iter().enumerate() {
            if rank <= r {
                hits[i] += 1;
            }
        }
        queries += 1;
    }
    let recall = hits.iter().map(|&h| if queries > 0 { h as f64 / queries as f64 } else { 0.0 }).collect();
    FitbResult { cutoffs: cutoffs.values().to_vec(), recall, queries, skipped_oov: skipped }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CpResult {
    pub auc: f64,
    pub pairs: usize,
    pub skipped_oov: usize,
}

/// Compatibility prediction: corrupt one random position per positive with
/// a vocabulary item (seeded), score both sides, rank-sum AUC.
pub fn compatibility_auc(
    positives: &[Outfit],
    vocab: &Vocabulary,
    rng_seed: u64,
    score_fn: impl Fn(&Outfit) -> Option<f64>,
) -> Result<CpResult, EvalError> {
    let mut rng = derive_rng(rng_seed, "cp-negatives", &[]);
    let pool: Vec<ItemId> = vocab.item_ids().to_vec();
    let mut pos_scores = Vec::new();
    let mut neg_scores = Vec::new();
    let mut skipped = 0usize;
    for outfit in positives {
        if outfit.items.iter().any(|id| !vocab.contains(id)) {
            skipped += 1;
            continue;
        }
        let negative = corrupt_one_from_pool(outfit, &pool, &mut rng);
        match (score_fn(outfit), score_fn(&negative)) {
            (Some(p), Some(n)) => {
                pos_scores.push(p);
                neg_scores.push(n);
            }
            _ => skipped += 1,
        }
    }
    if pos_scores.len() < 2 {
        return Err(EvalError::TooFewForAuc(pos_scores.len()));
    }
    let auc = auc_from_scores(&pos_scores, &neg_scores).expect("non-empty score sets");
    Ok(CpResult { auc, pairs: pos_scores.len(), skipped_oov: skipped })
}

/// Attribute conjunction used by the CTR/KR proxy metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MatchSchema {
    BrandCategory,
    ColorCategory,
    BrandColorCategory,
}

impl MatchSchema {
    pub fn matches(&self, catalog: &Catalog, a: &str, b: &str) -> bool {
        let (Ok(ia), Ok(ib)) = (catalog.item(a), catalog.item(b)) else { return false };
        let cat = ia.category == ib.category;
        let brand = ia.brand == ib.brand;
        let color = ia.color == ib.color;
        match self {
            MatchSchema::BrandCategory => brand && cat,
            MatchSchema::ColorCategory => color && cat,
            MatchSchema::BrandColorCategory => brand && color && cat,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            MatchSchema::BrandCategory => "brand-category",
            MatchSchema::ColorCategory => "color-category",
            MatchSchema::BrandColorCategory => "brand-color-category",
        }
    }
}

/// Fraction of (user, reference item) events for which the recommended
/// outfit contains an item matching the reference under the schema.
pub fn attribute_match_rate(
    recommended: &[Outfit],
    references: &[Vec<ItemId>],
    catalog: &Catalog,
    schema: MatchSchema,
) -> f64 {
    assert_eq!(recommended.len(), references.len(), "one reference list per recommendation");
    let mut events = 0usize;
    let mut matched = 0usize;
    for (outfit, refs) in recommended.iter().zip(references) {
        for reference in refs {
            events += 1;
            if outfit.items.iter().any(|id| schema.matches(catalog, id, reference)) {
                matched += 1;
            }
        }
    }
    if events == 0 {
        0.0
    } else {
        matched as f64 / events as f64
    }
}

/// Distinct outfits (set identity) divided by the number of users served.
pub fn personalization_rate(recommendations: &[Outfit]) -> Result<f64, EvalError> {
    if recommendations.is_empty() {
        return Err(EvalError::Empty);
    }
    let distinct: BTreeSet<String> = recommendations.iter().map(Outfit::set_key).collect();
    Ok(distinct.len() as f64 / recommendations.len() as f64)
}

/// Unique items divided by total items across all recommendations.
pub fn item_diversity(recommendations: &[Outfit]) -> Result<f64, EvalError> {
    if recommendations.is_empty() {
        return Err(EvalError::Empty);
    }
    let total: usize = recommendations.iter().map(Outfit::len).sum();
    let unique: BTreeSet<&ItemId> = recommendations.iter().flat_map(|o| o.items.iter()).collect();
    Ok(unique.len() as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn auc_separated_scores() {
        assert_eq!(auc_from_scores(&[0.9, 0.8], &[0.2, 0.1]), Some(1.0));
    }

    #[test]
    fn auc_all_ties_is_half() {
        assert_eq!(auc_from_scores(&[0.5, 0.5], &[0.5, 0.5]), Some(0.5));
    }

    #[test]
    fn auc_brute_force_case() {
        // pos {0.9, 0.3}, neg {0.5, 0.1}: 3 of 4 pairs correctly ordered
        let auc = auc_from_scores(&[0.9, 0.3], &[0.5, 0.1]).unwrap();
        assert!((auc - 0.75).abs() < 1e-12);
    }

    #[test]
    fn auc_invariant_under_monotone_transform() {
        let pos = [0.11, 2.3, 0.42, 1.7];
        let neg = [0.08, 0.5, 1.1];
        let base = auc_from_scores(&pos, &neg).unwrap();
        let pe: Vec<f64> = pos.iter().map(|v| v.exp()).collect();
        let ne: Vec<f64> = neg.iter().map(|v| v.exp()).collect();
        assert_eq!(base, auc_from_scores(&pe, &ne).unwrap());
        let pl: Vec<f64> = pos.iter().map(|v| v.ln()).collect();
        let nl: Vec<f64> = neg.iter().map(|v| v.ln()).collect();
        assert_eq!(base, auc_from_scores(&pl, &nl).unwrap());
    }

    #[test]
    fn cutoffs_validation() {
        assert!(RankCutoffs::new(vec![1, 5, 25, 250], 1000).is_ok());
        assert!(RankCutoffs::new(vec![5, 1], 1000).is_err());
        assert!(RankCutoffs::new(vec![1, 2000], 1000).is_err());
        assert_eq!(RankCutoffs::standard(30).values(), &[1, 5, 25]);
    }

    #[test]
    fn personalization_examples() {
        let o = |ids: &[&str]| Outfit::new(ids.iter().map(|s| s.to_string()).collect(), None);
        // all users get the same outfit
        let same = vec![o(&["a", "b"]); 4];
        assert_eq!(personalization_rate(&same).unwrap(), 0.25);
        // {A,B},{B,A},{A,C}: set equality collapses the first two
        let mixed = vec![o(&["a", "b"]), o(&["b", "a"]), o(&["a", "c"])];
        assert!((personalization_rate(&mixed).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        // all distinct -> 1.0
        let distinct = vec![o(&["a", "b"]), o(&["a", "c"]), o(&["b", "c"])];
        assert_eq!(personalization_rate(&distinct).unwrap(), 1.0);
    }

    #[test]
    fn diversity_examples() {
        let o = |ids: &[&str]| Outfit::new(ids.iter().map(|s| s.to_string()).collect(), None);
        assert_eq!(item_diversity(&[o(&["a", "b", "c", "d"])]).unwrap(), 1.0);
        assert_eq!(item_diversity(&[o(&["a", "b", "c", "d"]), o(&["a", "b", "c", "d"])]).unwrap(), 0.5);
    }

    #[test]
    fn fitb_fixed_rank_three() {
        // scorer always ranks the true item third among items
        let vocab_size = 10usize; // 3 specials + 7 items
        let seqs: Vec<Vec<usize>> = (0..50).map(|i| vec![3 + (i % 7), 3 + ((i + 1) % 7), 3 + ((i + 2) % 7)]).collect();
        let cutoffs = RankCutoffs::new(vec![1, 5], 7).unwrap();
        let result = fitb(&seqs, &cutoffs, vocab_size, 7, |q| {
            let mut scores = vec![0.0; vocab_size];
            // two distinct items strictly above the target
            let target = q.tokens[q.mask_pos];
            scores[target] = 5.0;
            let mut placed = 0;
            for idx in 3..vocab_size {
                if idx != target && placed < 2 {
                    scores[idx] = 10.0 - placed as f64;
                    placed += 1;
                }
            }
            scores
        });
        assert_eq!(result.recall_at(1), Some(0.0));
        assert_eq!(result.recall_at(5), Some(1.0));
    }

    #[test]
    fn fitb_recall_at_full_vocab_is_one() {
        let vocab_size = 8usize;
        let seqs: Vec<Vec<usize>> = (0..30).map(|i| vec![3 + (i % 5), 3 + ((i + 2) % 5)]).collect();
        let cutoffs = RankCutoffs::new(vec![1, 5], 5).unwrap();
        let mut rng = derive_rng(3, "scores", &[]);
        use rand::Rng;
        let result = fitb(&seqs, &cutoffs, vocab_size, 11, |_| (0..vocab_size).map(|_| rng.gen()).collect::<Vec<f64>>());
        // recall at the full item count must be 1
        assert_eq!(result.recall.last().copied(), Some(1.0));
    }

    #[test]
    fn attribute_match_schema_logic() {
        use crate::catalog::{Catalog, Item, IMAGE_DIM};
        let mk = |id: &str, cat: &str, brand: &str, color: &str| Item {
            item_id: id.into(),
            category: cat.into(),
            brand: brand.into(),
            color: color.into(),
            season: "summer".into(),
            gender: "women".into(),
            material: "m".into(),
            pattern: "p".into(),
            image_vec: vec![0.0; IMAGE_DIM],
            style_cluster: 0,
        };
        let catalog = Catalog::new(vec![
            mk("ref", "top", "b1", "red"),
            mk("exact", "top", "b1", "red"),
            mk("same_brand_other_cat", "shoes", "b1", "red"),
            mk("same_cat_other_brand", "top", "b2", "blue"),
        ])
        .unwrap();
        let rec = |ids: &[&str]| vec![Outfit::new(ids.iter().map(|s| s.to_string()).collect(), None)];
        let refs = vec![vec!["ref".to_string()]];
        // the reference item itself matches every schema
        for schema in [MatchSchema::BrandCategory, MatchSchema::ColorCategory, MatchSchema::BrandColorCategory] {
            assert_eq!(attribute_match_rate(&rec(&["ref"]), &refs, &catalog, schema), 1.0);
            assert_eq!(attribute_match_rate(&rec(&["exact"]), &refs, &catalog, schema), 1.0);
        }
        // same brand, different category: no brand-category match
        assert_eq!(attribute_match_rate(&rec(&["same_brand_other_cat"]), &refs, &catalog, MatchSchema::BrandCategory), 0.0);
        assert_eq!(attribute_match_rate(&rec(&["same_cat_other_brand"]), &refs, &catalog, MatchSchema::BrandCategory), 0.0);
    }

    #[test]
    fn rates_match_independent_recount() {
        use rand::Rng;
        let mut rng = derive_rng(5, "rates", &[]);
        let recs: Vec<Outfit> = (0..1000)
            .map(|_| {
                let n = rng.gen_range(2..=5);
                let mut ids = BTreeSet::new();
                while ids.len() < n {
                    ids.insert(format!("i{}", rng.gen_range(0..200)));
                }
                Outfit::new(ids.into_iter().collect(), None)
            })
            .collect();
        // independent hash-set recounts
        let mut sets = std::collections::HashSet::new();
        let mut items = std::collections::HashSet::new();
        let mut total = 0usize;
        for o in &recs {
            let mut k = o.items.clone();
            k.sort();
            sets.insert(k.join("|"));
            for id in &o.items {
                items.insert(id.clone());
            }
            total += o.items.len();
        }
        assert_eq!(personalization_rate(&recs).unwrap(), sets.len() as f64 / recs.len() as f64);
        assert_eq!(item_diversity(&recs).unwrap(), items.len() as f64 / total as f64);
    }

    proptest! {
        #[test]
        fn rates_are_permutation_invariant(perm_seed in 0u64..1000) {
            let mut rng = derive_rng(6, "perm-rates", &[]);
            use rand::Rng;
            use rand::seq::SliceRandom;
            let mut recs: Vec<Outfit> = (0..40)
                .map(|_| {
                    let n = rng.gen_range(2..=4);
                    let mut ids = BTreeSet::new();
                    while ids.len() < n {
                        ids.insert(format!("i{}", rng.gen_range(0..30)));
                    }
                    Outfit::new(ids.into_iter().collect(), None)
                })
                .collect();
            let p = personalization_rate(&recs).unwrap();
            let d = item_diversity(&recs).unwrap();
            let mut shuffle_rng = derive_rng(perm_seed, "shuffle", &[]);
            recs.shuffle(&mut shuffle_rng);
            prop_assert_eq!(p, personalization_rate(&recs).unwrap());
            prop_assert_eq!(d, item_diversity(&recs).unwrap());
        }

        #[test]
        fn fitb_recall_monotone_in_r(seed in 0u64..500) {
            let vocab_size = 23usize;
            let mut rng = derive_rng(seed, "fitb-mono", &[]);
            use rand::Rng;
            let seqs: Vec<Vec<usize>> = (0..40)
                .map(|_| {
                    let n = rng.gen_range(2..=5);
                    (0..n).map(|_| rng.gen_range(3..vocab_size)).collect()
                })
                .collect();
            let cutoffs = RankCutoffs::new(vec![1, 3, 10, 20], 20).unwrap();
            let mut score_rng = derive_rng(seed, "fitb-scores", &[]);
            let result = fitb(&seqs, &cutoffs, vocab_size, seed, move |_| {
                (0..vocab_size).map(|_| score_rng.gen::<f64>()).collect()
            });
            for w in result.recall.windows(2) {
                prop_assert!(w[0] <= w[1], "recall must be monotone in r");
            }
        }
    }
}
