//! Outfit construction: autoregressive sampling, perplexity-ordered beam
//! search, Gibbs sampling for masked models, and the nearest-neighbor
//! personalized ranking baseline over precomputed candidates.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::catalog::{Catalog, ItemId, Outfit, OutfitSource, Vocabulary, MASK_TOKEN, STOP_TOKEN};
use crate::models::ItemFeatures;
use crate::nn::functional::nll;
use crate::rng::derive_rng;
use crate::scoring::{MaskedScorer, NextItemScorer};

#[derive(Debug, Error)]
pub enum GenError {
    #[error("no vocabulary entries remain after filtering")]
    EmptyAfterFiltering,
    #[error("gibbs needs at least 2 positions, got {0}")]
    TooFewPositions(usize),
    #[error("gibbs needs at least {min} iterations for {n} positions, got {got}")]
    TooFewIterations { min: usize, n: usize, got: usize },
    #[error("empty browsing history")]
    EmptyHistory,
    #[error("anchor item {0} not in the candidate index")]
    UnknownAnchor(String),
    #[error("beam width must be at least 1")]
    ZeroWidth,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct GenStats {
    pub forward_passes: u64,
}

#[derive(Debug, Clone)]
pub struct SampleOptions {
    pub max_len: usize,
    /// 0.0 switches to deterministic argmax decoding.
    pub temperature: f64,
    /// Sample exactly this many items: the stop token is masked until the
    /// length is reached (the fixed-length comparison mode).
    pub fixed_length: Option<usize>,
    /// Mask items already present in the partial outfit.
    pub suppress_duplicates: bool,
    /// Allow at most one item per category (requires features).
    pub category_cap: bool,
}

impl Default for SampleOptions {
    fn default() -> Self {
        Self { max_len: 7, temperature: 1.0, fixed_length: None, suppress_duplicates: true, category_cap: false }
    }
}

fn banned_mask(
    vocab_size: usize,
    partial: &[usize],
    opts: &SampleOptions,
    features: Option<&ItemFeatures>,
    allow_stop: bool,
) -> Vec<bool> {
    let mut banned = vec![false; vocab_size];
    for special in 0..Vocabulary::FIRST_ITEM {
        banned[special] = true;
    }
    if allow_stop {
        banned[STOP_TOKEN] = false;
    }
    if opts.suppress_duplicates {
        for &t in partial {
            if t < vocab_size {
                banned[t] = true;
            }
        }
    }
    if opts.category_cap {
        if let Some(f) = features {
            let used: Vec<usize> = partial.iter().filter_map(|&t| f.category_code(t)).collect();
            for token in Vocabulary::FIRST_ITEM..vocab_size {
                if let Some(c) = f.category_code(token) {
                    if used.contains(&c) {
                        banned[token] = true;
                    }
                }
            }
        }
    }
    banned
}

/// Draw a token from temperature-scaled softmax over the allowed entries;
/// temperature zero is argmax with lowest-index tie-breaking.
pub fn sample_token(logits: &[f64], temperature: f64, banned: &[bool], rng: &mut ChaCha8Rng) -> Result<usize, GenError> {
    let allowed: Vec<usize> = (0..logits.len()).filter(|&i| !banned[i]).collect();
    if allowed.is_empty() {
        return Err(GenError::EmptyAfterFiltering);
    }
    if temperature <= 0.0 {
        let mut best = allowed[0];
        for &i in &allowed[1..] {
            if logits[i] > logits[best] {
                best = i;
            }
        }
        return Ok(best);
    }
    let m = allowed.iter().map(|&i| logits[i]).fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = allowed.iter().map(|&i| ((logits[i] - m) / temperature).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (&idx, &w) in allowed.iter().zip(&weights) {
        u -= w;
        if u <= 0.0 {
            return Ok(idx);
        }
    }
    Ok(*allowed.last().unwrap())
}

/// Autoregressive generation: predict, append, repeat until the stop token
/// or `max_len` items. Returns the vocabulary tokens of the full outfit
/// (seed items included) and the number of model forward passes used.
pub fn autoregressive_generate(
    scorer: &dyn NextItemScorer,
    seed_items: &[usize],
    opts: &SampleOptions,
    features: Option<&ItemFeatures>,
    rng_seed: u64,
) -> Result<(Vec<usize>, GenStats), GenError> {
    let mut rng = derive_rng(rng_seed, "autoregressive", &[]);
    let passes_before = scorer.forward_passes();
    let mut tokens: Vec<usize> = seed_items.to_vec();
    while tokens.len() < opts.max_len {
        let allow_stop = match opts.fixed_length {
            Some(n) => tokens.len() >= n,
            None => true,
        };
        if let Some(n) = opts.fixed_length {
            if tokens.len() >= n {
                break;
            }
        }
        let logits = scorer.next_logits(&tokens);
        let banned = banned_mask(scorer.vocab_size(), &tokens, opts, features, allow_stop);
        let choice = sample_token(&logits, opts.temperature, &banned, &mut rng)?;
        if choice == STOP_TOKEN {
            break;
        }
        tokens.push(choice);
    }
    Ok((tokens, GenStats { forward_passes: scorer.forward_passes() - passes_before }))
}

/// One beam hypothesis: the token sequence, the summed NLL of its
/// generated steps and the step count.
#[derive(Debug, Clone)]
pub struct Hypothesis {
    pub tokens: Vec<usize>,
    pub cum_ce: f64,
    pub steps: usize,
    pub finished: bool,
}

impl Hypothesis {
    /// exp(mean cross-entropy) over the generated steps.
    pub fn perplexity(&self) -> f64 {
        if self.steps == 0 {
            1.0
        } else {
            (self.cum_ce / self.steps as f64).exp()
        }
    }
}

/// Beam search ordered by perplexity, lowest first. Width 1 reduces to
/// greedy argmax decoding. With `fixed_length` the stop token is excluded
/// and hypotheses finish at exactly that many items; otherwise a chosen
/// stop token finishes a hypothesis and its NLL counts as a step.
pub fn beam_search(
    scorer: &dyn NextItemScorer,
    seed_items: &[usize],
    width: usize,
    opts: &SampleOptions,
    features: Option<&ItemFeatures>,
) -> Result<Vec<Hypothesis>, GenError> {
    if width == 0 {
        return Err(GenError::ZeroWidth);
    }
    let mut beam = vec![Hypothesis { tokens: seed_items.to_vec(), cum_ce: 0.0, steps: 0, finished: false }];
    loop {
        if beam.iter().all(|h| h.finished) {
            break;
        }
        let mut next: Vec<Hypothesis> = Vec::new();
        for h in &beam {
            if h.finished {
                next.push(h.clone());
                continue;
            }
            let at_capacity = match opts.fixed_length {
                Some(n) => h.tokens.len() >= n,
                None => h.tokens.len() >= opts.max_len,
            };
            if at_capacity {
                next.push(Hypothesis { finished: true, ..h.clone() });
                continue;
            }
            let allow_stop = opts.fixed_length.is_none();
            let logits = scorer.next_logits(&h.tokens);
            let banned = banned_mask(scorer.vocab_size(), &h.tokens, opts, features, allow_stop);
            // expand the top `width` allowed continuations of this beam
            let mut scored: Vec<(usize, f64)> = (0..logits.len())
                .filter(|&i| !banned[i])
                .map(|i| (i, nll(&logits, i)))
                .collect();
            if scored.is_empty() {
                return Err(GenError::EmptyAfterFiltering);
            }
            scored.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            for (token, step_nll) in scored.into_iter().take(width) {
                let mut tokens = h.tokens.clone();
                let finished = if token == STOP_TOKEN {
                    true
                } else {
                    tokens.push(token);
                    match opts.fixed_length {
                        Some(n) => tokens.len() >= n,
                        None => tokens.len() >= opts.max_len,
                    }
                };
                next.push(Hypothesis { tokens, cum_ce: h.cum_ce + step_nll, steps: h.steps + 1, finished });
            }
        }
        next.sort_by(|a, b| a.perplexity().total_cmp(&b.perplexity()));
        next.truncate(width);
        beam = next;
    }
    beam.sort_by(|a, b| a.perplexity().total_cmp(&b.perplexity()));
    Ok(beam)
}

/// Bidirectional completion: the forward model extends toward the stop
/// token, then the backward model extends the best forward hypotheses
/// toward the head. Returned token order is head-to-tail.
pub fn beam_search_bidirectional(
    forward: &dyn NextItemScorer,
    backward: &dyn NextItemScorer,
    seed_items: &[usize],
    width: usize,
    opts: &SampleOptions,
    features: Option<&ItemFeatures>,
) -> Result<Vec<Hypothesis>, GenError> {
    let fwd = beam_search(forward, seed_items, width, opts, features)?;
    let mut out = Vec::new();
    for h in fwd.into_iter().take(width) {
        let reversed: Vec<usize> = h.tokens.iter().rev().copied().collect();
        let extended = beam_search(backward, &reversed, width, opts, features)?;
        for b in extended.into_iter().take(width) {
            let tokens: Vec<usize> = b.tokens.iter().rev().copied().collect();
            out.push(Hypothesis { tokens, cum_ce: h.cum_ce + b.cum_ce, steps: h.steps + b.steps, finished: true });
        }
    }
    out.sort_by(|a, b| a.perplexity().total_cmp(&b.perplexity()));
    out.dedup_by(|a, b| a.tokens == b.tokens);
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct GibbsOptions {
    /// Resample from the exact model conditional (required for the
    /// stationary-distribution checks). Switching suppression on masks
    /// items already present at other positions.
    pub suppress_duplicates: bool,
}

impl Default for GibbsOptions {
    fn default() -> Self {
        Self { suppress_duplicates: false }
    }
}

/// Gibbs sampling from a masked conditional model: start from a uniformly
/// random outfit of length `n`, then repeatedly mask one uniformly chosen
/// position and resample it from the model's conditional. A bound context
/// token lives inside the scorer and is never resampled. Needs at least an
/// order of magnitude more iterations than positions.
pub fn gibbs_generate(
    scorer: &dyn MaskedScorer,
    n: usize,
    num_iters: usize,
    opts: &GibbsOptions,
    rng_seed: u64,
) -> Result<(Vec<usize>, GenStats), GenError> {
    if n < 2 {
        return Err(GenError::TooFewPositions(n));
    }
    if num_iters < 10 * n {
        return Err(GenError::TooFewIterations { min: 10 * n, n, got: num_iters });
    }
    let mut rng = derive_rng(rng_seed, "gibbs", &[]);
    let vocab = scorer.vocab_size();
    let items = vocab - Vocabulary::FIRST_ITEM;
    if items == 0 {
        return Err(GenError::EmptyAfterFiltering);
    }
    let passes_before = scorer.forward_passes();
    let mut tokens: Vec<usize> = (0..n).map(|_| Vocabulary::FIRST_ITEM + rng.gen_range(0..items)).collect();
    for _ in 0..num_iters {
        let pos = rng.gen_range(0..n);
        let previous = tokens[pos];
        tokens[pos] = MASK_TOKEN;
        let logits = scorer.masked_logits(&tokens, pos);
        let mut banned = vec![false; vocab];
        for special in 0..Vocabulary::FIRST_ITEM {
            banned[special] = true;
        }
        if opts.suppress_duplicates {
            for (i, &t) in tokens.iter().enumerate() {
                if i != pos && t < vocab {
                    banned[t] = true;
                }
            }
            banned[previous] = false;
        }
        tokens[pos] = sample_token(&logits, 1.0, &banned, &mut rng)?;
    }
    Ok((tokens, GenStats { forward_passes: scorer.forward_passes() - passes_before }))
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Mean-of-max cosine similarity between an outfit and a browsing history,
/// over image vectors.
pub fn outfit_user_similarity(outfit: &Outfit, history: &[&[f64]], catalog: &Catalog) -> Result<f64, GenError> {
    if history.is_empty() {
        return Err(GenError::EmptyHistory);
    }
    let mut total = 0.0;
    for id in &outfit.items {
        let Ok(item) = catalog.item(id) else { continue };
        let best = history.iter().map(|h| cosine(&item.image_vec, h)).fold(f64::NEG_INFINITY, f64::max);
        total += best;
    }
    Ok(total / outfit.items.len() as f64)
}

/// Rank candidate outfits by mean-of-max similarity to the browsing
/// history, best first. Ties keep the stable input order.
pub fn nn_rank<'c>(
    history: &[&[f64]],
    candidates: &'c [Outfit],
    catalog: &Catalog,
) -> Result<Vec<(&'c Outfit, f64)>, GenError> {
    if history.is_empty() {
        return Err(GenError::EmptyHistory);
    }
    let mut scored: Vec<(&Outfit, f64)> = candidates
        .iter()
        .map(|o| outfit_user_similarity(o, history, catalog).map(|s| (o, s)))
        .collect::<Result<_, _>>()?;
    scored.sort_by(|a, b| b.1.total_cmp(&a.1));
    Ok(scored)
}

/// Anchor item -> precomputed candidate outfits (each containing its
/// anchor), capped per anchor.
#[derive(Debug, Clone, Default)]
pub struct CandidateOutfitIndex {
    pub per_anchor: HashMap<ItemId, Vec<Outfit>>,
    pub cap: usize,
}

impl CandidateOutfitIndex {
    pub fn candidates(&self, anchor: &str) -> Result<&[Outfit], GenError> {
        self.per_anchor
            .get(anchor)
            .map(Vec::as_slice)
            .ok_or_else(|| GenError::UnknownAnchor(anchor.to_string()))
    }
}

/// Build candidate outfits around each anchor: random template completions
/// filtered by a compatibility score. Candidates scoring above `threshold`
/// are kept (up to `cap`); if none pass, the single best try is kept so
/// every anchor stays servable.
#[allow(clippy::too_many_arguments)]
pub fn build_candidate_index(
    anchors: &[ItemId],
    templates: &[Vec<String>],
    catalog: &Catalog,
    vocab: &Vocabulary,
    score_fn: impl Fn(&[usize]) -> Option<f64>,
    threshold: f64,
    cap: usize,
    tries_per_anchor: usize,
    seed: u64,
) -> CandidateOutfitIndex {
    let mut index = CandidateOutfitIndex { per_anchor: HashMap::new(), cap };
    // vocabulary items grouped by category for template fills
    let mut by_category: BTreeMap<&str, Vec<&ItemId>> = BTreeMap::new();
    for id in vocab.item_ids() {
        if let Ok(item) = catalog.item(id) {
            by_category.entry(item.category.as_str()).or_default().push(id);
        }
    }
    for (ai, anchor) in anchors.iter().enumerate() {
        let Ok(anchor_item) = catalog.item(anchor) else { continue };
        let usable: Vec<&Vec<String>> = templates.iter().filter(|t| t.contains(&anchor_item.category)).collect();
        if usable.is_empty() {
            continue;
        }
        let mut rng = derive_rng(seed, "candidates", &[ai as u64]);
        let mut kept: Vec<(Outfit, f64)> = Vec::new();
        let mut best: Option<(Outfit, f64)> = None;
        for _ in 0..tries_per_anchor {
            if kept.len() >= cap {
                break;
            }
            let template = usable[rng.gen_range(0..usable.len())];
            let mut items = vec![anchor.clone()];
            let mut ok = true;
            for cat in template {
                if *cat == anchor_item.category {
                    continue;
                }
                match by_category.get(cat.as_str()) {
                    Some(pool) if !pool.is_empty() => {
                        let choice = pool[rng.gen_range(0..pool.len())].clone();
                        if items.contains(&choice) {
                            ok = false;
                            break;
                        }
                        items.push(choice);
                    }
                    _ => {
                        ok = false;
                        break;
                    }
                }
            }
            if !ok {
                continue;
            }
            let tokens: Vec<usize> = items.iter().map(|id| vocab.index_or_unk(id)).collect();
            let Some(score) = score_fn(&tokens) else { continue };
            let outfit = Outfit::new(items, Some(OutfitSource::Generated));
            if score > threshold {
                kept.push((outfit, score));
            } else if best.as_ref().map(|(_, s)| score > *s).unwrap_or(true) {
                best = Some((outfit, score));
            }
        }
        if kept.is_empty() {
            if let Some(b) = best {
                kept.push(b);
            }
        }
        kept.sort_by(|a, b| b.1.total_cmp(&a.1));
        index.per_anchor.insert(anchor.clone(), kept.into_iter().map(|(o, _)| o).collect());
    }
    index
}

/// The personalized compatibility-net pipeline: rank the anchor's
/// precomputed candidates by the user's browsing history and return the
/// best one.
pub fn personalized_recommend<'c>(
    history: &[&[f64]],
    anchor: &str,
    index: &'c CandidateOutfitIndex,
    catalog: &Catalog,
) -> Result<&'c Outfit, GenError> {
    let candidates = index.candidates(anchor)?;
    if candidates.is_empty() {
        return Err(GenError::UnknownAnchor(anchor.to_string()));
    }
    let ranked = nn_rank(history, candidates, catalog)?;
    Ok(ranked[0].0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::IMAGE_DIM;

    /// Fixed conditional table over a tiny vocabulary, used as a
    /// NextItemScorer oracle.
    struct TableScorer {
        vocab: usize,
        logits_fn: fn(&[usize]) -> Vec<f64>,
    }

    impl NextItemScorer for TableScorer {
        fn next_logits(&self, prefix: &[usize]) -> Vec<f64> {
            (self.logits_fn)(prefix)
        }

        fn vocab_size(&self) -> usize {
            self.vocab
        }
    }

    fn flat_scorer() -> TableScorer {
        TableScorer { vocab: 8, logits_fn: |_| vec![0.0; 8] }
    }

    #[test]
    fn zero_temperature_is_deterministic_argmax() {
        let scorer = TableScorer {
            vocab: 8,
            logits_fn: |p| {
                let mut l = vec![0.0; 8];
                // prefer token 5, then stop
                l[5] = if p.is_empty() { 3.0 } else { -1.0 };
                l[STOP_TOKEN] = 1.0;
                l
            },
        };
        let opts = SampleOptions { temperature: 0.0, ..SampleOptions::default() };
        let (a, _) = autoregressive_generate(&scorer, &[], &opts, None, 1).unwrap();
        let (b, _) = autoregressive_generate(&scorer, &[], &opts, None, 2).unwrap();
        assert_eq!(a, vec![5]);
        assert_eq!(a, b, "argmax decoding must not depend on the seed");
    }

    #[test]
    fn fixed_seed_reproduces_the_outfit() {
        let scorer = flat_scorer();
        let opts = SampleOptions { temperature: 1.0, max_len: 4, ..SampleOptions::default() };
        let (a, _) = autoregressive_generate(&scorer, &[], &opts, None, 77).unwrap();
        let (b, _) = autoregressive_generate(&scorer, &[], &opts, None, 77).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn fixed_length_masks_stop_until_reached() {
        let scorer = TableScorer {
            vocab: 8,
            logits_fn: |_| {
                let mut l = vec![0.0; 8];
                l[STOP_TOKEN] = 50.0; // stop would always win if allowed
                l
            },
        };
        let opts = SampleOptions { temperature: 0.0, fixed_length: Some(3), max_len: 7, ..SampleOptions::default() };
        let (tokens, _) = autoregressive_generate(&scorer, &[], &opts, None, 5).unwrap();
        assert_eq!(tokens.len(), 3);
        assert!(tokens.iter().all(|&t| t >= Vocabulary::FIRST_ITEM));
    }

    #[test]
    fn generated_outfits_never_contain_reserved_tokens() {
        let scorer = TableScorer {
            vocab: 8,
            logits_fn: |_| {
                let mut l = vec![5.0; 8];
                l[STOP_TOKEN] = -100.0;
                l
            },
        };
        let opts = SampleOptions { temperature: 1.0, max_len: 5, ..SampleOptions::default() };
        let (tokens, _) = autoregressive_generate(&scorer, &[], &opts, None, 9).unwrap();
        assert!(tokens.iter().all(|&t| t >= Vocabulary::FIRST_ITEM));
    }

    #[test]
    fn duplicate_suppression_yields_distinct_items() {
        // a scorer that always prefers item 4
        let scorer = TableScorer {
            vocab: 8,
            logits_fn: |_| {
                let mut l = vec![0.0; 8];
                l[4] = 10.0;
                l[STOP_TOKEN] = -100.0;
                l
            },
        };
        let opts = SampleOptions { temperature: 0.0, max_len: 4, suppress_duplicates: true, ..SampleOptions::default() };
        let (tokens, _) = autoregressive_generate(&scorer, &[], &opts, None, 3).unwrap();
        let mut dedup = tokens.clone();
        dedup.sort_unstable();
        dedup.dedup();
        assert_eq!(dedup.len(), tokens.len(), "duplicates must be suppressed");
    }

    #[test]
    fn beam_width_one_equals_greedy() {
        let scorer = TableScorer {
            vocab: 8,
            logits_fn: |p| {
                let mut l = vec![0.0; 8];
                l[3 + (p.len() % 4)] = 2.0 + p.len() as f64;
                l[STOP_TOKEN] = 1.5;
                l
            },
        };
        let opts = SampleOptions { temperature: 0.0, max_len: 4, ..SampleOptions::default() };
        let (greedy, _) = autoregressive_generate(&scorer, &[], &opts, None, 0).unwrap();
        let beams = beam_search(&scorer, &[], 1, &opts, None).unwrap();
        assert_eq!(beams[0].tokens, greedy);
    }

    #[test]
    fn beam_results_sorted_by_perplexity() {
        let scorer = flat_scorer();
        let opts = SampleOptions { temperature: 1.0, max_len: 3, fixed_length: Some(3), ..SampleOptions::default() };
        let beams = beam_search(&scorer, &[], 4, &opts, None).unwrap();
        for w in beams.windows(2) {
            assert!(w[0].perplexity() <= w[1].perplexity());
        }
    }

    #[test]
    fn gibbs_validates_inputs() {
        struct M;
        impl MaskedScorer for M {
            fn masked_logits(&self, _t: &[usize], _p: usize) -> Vec<f64> {
                vec![0.0; 8]
            }
            fn vocab_size(&self) -> usize {
                8
            }
        }
        assert!(matches!(gibbs_generate(&M, 1, 100, &GibbsOptions::default(), 0), Err(GenError::TooFewPositions(1))));
        assert!(matches!(
            gibbs_generate(&M, 3, 20, &GibbsOptions::default(), 0),
            Err(GenError::TooFewIterations { min: 30, .. })
        ));
    }

    #[test]
    fn gibbs_point_mass_absorbs() {
        // conditionals put all mass on item (3 + position) regardless of
        // the other positions: the chain absorbs once every slot is hit
        struct PointMass;
        impl MaskedScorer for PointMass {
            fn masked_logits(&self, tokens: &[usize], pos: usize) -> Vec<f64> {
                let mut l = vec![-1e9; 8];
                l[3 + (pos % 5)] = 0.0;
                let _ = tokens;
                l
            }
            fn vocab_size(&self) -> usize {
                8
            }
        }
        let n = 3;
        let (state, stats) = gibbs_generate(&PointMass, n, 10 * n, &GibbsOptions::default(), 4).unwrap();
        assert_eq!(state, vec![3, 4, 5]);
        assert_eq!(stats.forward_passes, 0); // table scorer, no network passes
    }

    #[test]
    fn gibbs_fixed_seed_reproduces_trajectory() {
        struct M;
        impl MaskedScorer for M {
            fn masked_logits(&self, _t: &[usize], _p: usize) -> Vec<f64> {
                vec![0.3; 9]
            }
            fn vocab_size(&self) -> usize {
                9
            }
        }
        let a = gibbs_generate(&M, 4, 60, &GibbsOptions::default(), 11).unwrap().0;
        let b = gibbs_generate(&M, 4, 60, &GibbsOptions::default(), 11).unwrap().0;
        assert_eq!(a, b);
    }

    fn item_with_vec(id: &str, v: Vec<f64>) -> crate::catalog::Item {
        crate::catalog::Item {
            item_id: id.into(),
            category: "top".into(),
            brand: "b".into(),
            color: "red".into(),
            season: "summer".into(),
            gender: "women".into(),
            material: "m".into(),
            pattern: "p".into(),
            image_vec: v,
            style_cluster: 0,
        }
    }

    #[test]
    fn nn_rank_identical_vectors_score_one_and_rank_first() {
        let mut v1 = vec![0.0; IMAGE_DIM];
        v1[0] = 1.0;
        let mut v2 = vec![0.0; IMAGE_DIM];
        v2[1] = 1.0;
        let catalog = Catalog::new(vec![
            item_with_vec("a", v1.clone()),
            item_with_vec("b", v1.clone()),
            item_with_vec("c", v2.clone()),
        ])
        .unwrap();
        let clicked = [v1.as_slice()];
        let candidates = vec![
            Outfit::new(vec!["c".into()], None),
            Outfit::new(vec!["a".into(), "b".into()], None), // items the user clicked
        ];
        let ranked = nn_rank(&clicked, &candidates, &catalog).unwrap();
        assert_eq!(ranked[0].0.items, vec!["a".to_string(), "b".to_string()]);
        assert!((ranked[0].1 - 1.0).abs() < 1e-12, "identical vectors give cosine 1");
    }

    #[test]
    fn nn_rank_orthogonal_everything_keeps_input_order() {
        let mut v1 = vec![0.0; IMAGE_DIM];
        v1[0] = 1.0;
        let mut v2 = vec![0.0; IMAGE_DIM];
        v2[1] = 1.0;
        let mut v3 = vec![0.0; IMAGE_DIM];
        v3[2] = 1.0;
        let catalog = Catalog::new(vec![item_with_vec("a", v2), item_with_vec("b", v3)]).unwrap();
        let clicked = [v1.as_slice()];
        let candidates = vec![Outfit::new(vec!["a".into()], None), Outfit::new(vec!["b".into()], None)];
        let ranked = nn_rank(&clicked, &candidates, &catalog).unwrap();
        assert_eq!(ranked[0].0.items, vec!["a".to_string()]);
        assert_eq!(ranked[0].1, 0.0);
        assert_eq!(ranked[1].1, 0.0);
    }

    #[test]
    fn nn_rank_matches_hand_computed_scores() {
        // 3 candidates, 2-item history, hand-computed mean-max cosines
        let e = |i: usize| {
            let mut v = vec![0.0; IMAGE_DIM];
            v[i] = 1.0;
            v
        };
        let mix = |i: usize, j: usize| {
            let mut v = vec![0.0; IMAGE_DIM];
            v[i] = 3.0;
            v[j] = 4.0;
            v
        };
        let catalog = Catalog::new(vec![
            item_with_vec("x", e(0)),
            item_with_vec("y", mix(0, 1)), // cos with e0 = 0.6, with e1 = 0.8
            item_with_vec("z", e(2)),
        ])
        .unwrap();
        let h0 = e(0);
        let h1 = e(1);
        let history = [h0.as_slice(), h1.as_slice()];
        let candidates = vec![
            Outfit::new(vec!["x".into(), "y".into()], None), // (1.0 + 0.8)/2 = 0.9
            Outfit::new(vec!["y".into(), "z".into()], None), // (0.8 + 0.0)/2 = 0.4
            Outfit::new(vec!["x".into(), "z".into()], None), // (1.0 + 0.0)/2 = 0.5
        ];
        let ranked = nn_rank(&history, &candidates, &catalog).unwrap();
        let scores: Vec<f64> = ranked.iter().map(|(_, s)| *s).collect();
        assert!((scores[0] - 0.9).abs() < 1e-12);
        assert!((scores[1] - 0.5).abs() < 1e-12);
        assert!((scores[2] - 0.4).abs() < 1e-12);
    }

    #[test]
    fn empty_history_is_an_error() {
        let catalog = Catalog::new(vec![]).unwrap();
        let candidates = vec![Outfit::new(vec!["a".into()], None)];
        assert!(matches!(nn_rank(&[], &candidates, &catalog), Err(GenError::EmptyHistory)));
    }

    #[test]
    fn unknown_anchor_is_a_lookup_error() {
        let index = CandidateOutfitIndex::default();
        assert!(matches!(index.candidates("nope"), Err(GenError::UnknownAnchor(_))));
    }
}
