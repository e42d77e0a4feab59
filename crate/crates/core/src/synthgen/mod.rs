//! Synthetic catalogs, outfits, click histories and questionnaires with a
//! planted compatibility rule.
//!
//! The rule is exactly checkable by [`oracle_compatible`], which makes it a
//! ground-truth stand-in for curated outfit data: generators only ever emit
//! outfits that pass the oracle, and evaluation can label arbitrary item
//! sets.

pub mod lr_floor;

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{
    default_category_rank, Action, Catalog, EventType, Item, ItemId, Outfit, OutfitSource, Questionnaire, UserContext,
    UserRecord, CORE_CATEGORIES, IMAGE_DIM,
};
use crate::rng::{derive_rng, stable_hash};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("unknown item {0}")]
    UnknownItem(String),
    #[error("catalog must have at least {min} items, got {got}")]
    CatalogTooSmall { min: usize, got: usize },
    #[error("catalog smaller than outfit")]
    CatalogSmallerThanOutfit,
}

/// The planted world: style clusters on a cycle, per-cluster color
/// palettes, brand affinities, season groups and outfit templates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StyleWorld {
    pub num_clusters: usize,
    pub colors: Vec<String>,
    /// Per-cluster compatible colors; adjacent clusters overlap.
    pub palettes: Vec<Vec<String>>,
    pub brands: Vec<String>,
    /// Per-cluster brands with affinity to that style.
    pub brand_affinity: Vec<Vec<String>>,
    pub seasons: Vec<String>,
    pub season_groups: Vec<Vec<String>>,
    pub genders: Vec<String>,
    pub materials: Vec<String>,
    pub patterns: Vec<String>,
    pub occasions: Vec<String>,
    pub category_rank: Vec<String>,
    /// Probability of the three-piece base (top/pants/shoes) over the
    /// dress base.
    pub base_weight: f64,
    /// Independent inclusion probability per optional category.
    pub addon_probs: BTreeMap<String, f64>,
    /// Probability that an item's brand is drawn from its cluster's
    /// affinity list.
    pub brand_affinity_prob: f64,
    /// Preference-inconsistency rate for users and generated outfits.
    pub noise: f64,
    /// Stddev of the Gaussian perturbation on image vectors.
    pub image_noise_sigma: f64,
}

impl Default for StyleWorld {
    fn default() -> Self {
        let colors: Vec<String> = [
            "black", "white", "red", "blue", "green", "yellow", "pink", "purple", "orange", "brown", "beige", "grey",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        let num_clusters = 8;
        // palette(c) = 4 consecutive colors starting at 2c; adjacent
        // clusters share two colors so mixed outfits are possible
        let palettes = (0..num_clusters)
            .map(|c| (0..4).map(|k| colors[(2 * c + k) % colors.len()].clone()).collect())
            .collect();
        let brands: Vec<String> = (0..12).map(|i| format!("b{i:02}")).collect();
        let brand_affinity = (0..num_clusters)
            .map(|c| brands.iter().enumerate().filter(|(i, _)| i % num_clusters == c).map(|(_, b)| b.clone()).collect())
            .collect();
        let mut addon_probs = BTreeMap::new();
        // base size expectation 2.8 plus these addons gives mean length 4.7
        addon_probs.insert("jacket".to_string(), 0.6);
        addon_probs.insert("sweater".to_string(), 0.55);
        addon_probs.insert("accessory".to_string(), 0.75);
        Self {
            num_clusters,
            colors,
            palettes,
            brands,
            brand_affinity,
            seasons: ["spring", "summer", "autumn", "winter"].iter().map(|s| s.to_string()).collect(),
            season_groups: vec![
                vec!["spring".to_string(), "summer".to_string()],
                vec!["autumn".to_string(), "winter".to_string()],
            ],
            genders: vec!["women".to_string(), "men".to_string()],
            materials: ["cotton", "wool", "denim", "leather", "linen", "silk"].iter().map(|s| s.to_string()).collect(),
            patterns: ["plain", "striped", "dotted", "floral", "checked", "graphic"].iter().map(|s| s.to_string()).collect(),
            occasions: ["casual", "office", "party", "outdoor"].iter().map(|s| s.to_string()).collect(),
            category_rank: default_category_rank(),
            base_weight: 0.8,
            addon_probs,
            brand_affinity_prob: 0.8,
            noise: 0.1,
            image_noise_sigma: 0.35,
        }
    }
}

impl StyleWorld {
    /// All valid category templates. Every template includes shoes; sizes
    /// stay within 2..=7.
    pub fn templates(&self) -> Vec<Vec<String>> {
        let bases: [Vec<&str>; 2] = [vec!["top", "pants", "shoes"], vec!["dress", "shoes"]];
        let addons: Vec<&String> = self.addon_probs.keys().collect();
        let mut out = Vec::new();
        for base in &bases {
            for mask in 0..(1usize << addons.len()) {
                let mut t: Vec<String> = base.iter().map(|s| s.to_string()).collect();
                for (i, addon) in addons.iter().enumerate() {
                    if mask & (1 << i) != 0 {
                        t.push((*addon).clone());
                    }
                }
                t.sort();
                out.push(t);
            }
        }
        out.sort();
        out.dedup();
        out
    }

    fn sample_template(&self, rng: &mut ChaCha8Rng, min_core_items: usize) -> Vec<String> {
        loop {
            let mut t: Vec<String> = if rng.gen::<f64>() < self.base_weight {
                vec!["top".into(), "pants".into(), "shoes".into()]
            } else {
                vec!["dress".into(), "shoes".into()]
            };
            for (addon, &p) in &self.addon_probs {
                if rng.gen::<f64>() < p {
                    t.push(addon.clone());
                }
            }
            let core = t.iter().filter(|c| CORE_CATEGORIES.contains(&c.as_str())).count();
            if core >= min_core_items {
                t.sort();
                return t;
            }
        }
    }

    pub fn season_group_of(&self, season: &str) -> Option<usize> {
        self.season_groups.iter().position(|g| g.iter().any(|s| s == season))
    }

    pub fn palette_of(&self, cluster: usize) -> &[String] {
        &self.palettes[cluster % self.num_clusters]
    }

    /// Cycle distance between two clusters.
    pub fn cluster_distance(&self, a: usize, b: usize) -> usize {
        let s = self.num_clusters;
        let d = (a as i64 - b as i64).rem_euclid(s as i64) as usize;
        d.min(s - d)
    }
}

/// Deterministic image-space centroid for a (cluster, color, category)
/// combination. Items are placed at this centroid plus Gaussian noise, so
/// cosine similarity in image space correlates with the planted rule.
pub fn image_centroid(cluster: usize, color: &str, category: &str) -> Vec<f64> {
    let mut out = vec![0.0; IMAGE_DIM];
    let parts: [(&str, u64); 3] = [
        ("style", cluster as u64),
        ("color", stable_hash(color.as_bytes())),
        ("category", stable_hash(category.as_bytes())),
    ];
    let scale = 1.0 / (3f64).sqrt();
    for (tag, key) in parts {
        let mut rng = derive_rng(key, tag, &[]);
        for v in out.iter_mut() {
            *v += normal(&mut rng) * scale;
        }
    }
    out
}

/// Standard normal draw via Box-Muller.
fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Generate `num_items` items covering every category. With zero image
/// noise each item sits exactly on its centroid.
pub fn generate_catalog(world: &StyleWorld, num_items: usize, seed: u64) -> Result<Catalog, SynthError> {
    let categories = &world.category_rank;
    if num_items < categories.len() {
        return Err(SynthError::CatalogTooSmall { min: categories.len(), got: num_items });
    }
    let mut rng = derive_rng(seed, "catalog", &[]);
    let mut items = Vec::with_capacity(num_items);
    for i in 0..num_items {
        let category = if i < categories.len() {
            categories[i].clone()
        } else {
            categories[rng.gen_range(0..categories.len())].clone()
        };
        let cluster = rng.gen_range(0..world.num_clusters);
        let palette = world.palette_of(cluster);
        let color = palette[rng.gen_range(0..palette.len())].clone();
        let brand = if rng.gen::<f64>() < world.brand_affinity_prob && !world.brand_affinity[cluster].is_empty() {
            world.brand_affinity[cluster][rng.gen_range(0..world.brand_affinity[cluster].len())].clone()
        } else {
            world.brands[rng.gen_range(0..world.brands.len())].clone()
        };
        let season = world.seasons[rng.gen_range(0..world.seasons.len())].clone();
        let gender = world.genders[rng.gen_range(0..world.genders.len())].clone();
        let material = world.materials[rng.gen_range(0..world.materials.len())].clone();
        let pattern = world.patterns[rng.gen_range(0..world.patterns.len())].clone();
        let mut image_vec = image_centroid(cluster, &color, &category);
        if world.image_noise_sigma > 0.0 {
            for v in image_vec.iter_mut() {
                *v += world.image_noise_sigma * normal(&mut rng);
            }
        }
        items.push(Item {
            item_id: format!("i{i:05}"),
            category,
            brand,
            color,
            season,
            gender,
            material,
            pattern,
            image_vec,
            style_cluster: cluster,
        });
    }
    Catalog::new(items).map_err(|_| SynthError::CatalogTooSmall { min: categories.len(), got: num_items })
}

/// Exact compatibility check for the planted rule: same gender, one season
/// group, style clusters within cycle distance one, all colors inside a
/// single palette, and a category set matching a template.
pub fn oracle_compatible(outfit: &Outfit, catalog: &Catalog, world: &StyleWorld) -> Result<bool, SynthError> {
    let mut items = Vec::with_capacity(outfit.items.len());
    for id in &outfit.items {
        items.push(catalog.item(id).map_err(|_| SynthError::UnknownItem(id.clone()))?);
    }
    if items.is_empty() {
        return Ok(false);
    }
    // gender
    let gender = &items[0].gender;
    if items.iter().any(|it| &it.gender != gender) {
        return Ok(false);
    }
    // season group
    let Some(group) = world.season_group_of(&items[0].season) else { return Ok(false) };
    for it in &items {
        if world.season_group_of(&it.season) != Some(group) {
            return Ok(false);
        }
    }
    // style clusters pairwise within distance 1
    let clusters: BTreeSet<usize> = items.iter().map(|it| it.style_cluster).collect();
    for &a in &clusters {
        for &b in &clusters {
            if world.cluster_distance(a, b) > 1 {
                return Ok(false);
            }
        }
    }
    // all colors inside one palette
    let colors: BTreeSet<&str> = items.iter().map(|it| it.color.as_str()).collect();
    let palette_ok = world
        .palettes
        .iter()
        .any(|p| colors.iter().all(|c| p.iter().any(|pc| pc == c)));
    if !palette_ok {
        return Ok(false);
    }
    // category multiset matches a template
    let mut cats: Vec<String> = items.iter().map(|it| it.category.clone()).collect();
    cats.sort();
    Ok(world.templates().iter().any(|t| *t == cats))
}

/// A synthetic customer with planted preferences.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticUser {
    pub user_id: String,
    pub preferred_cluster: usize,
    pub preferred_brands: Vec<String>,
    pub preferred_colors: Vec<String>,
    pub gender: String,
    pub occasion: String,
}

impl SyntheticUser {
    pub fn sample(world: &StyleWorld, user_id: String, rng: &mut ChaCha8Rng) -> Self {
        let cluster = rng.gen_range(0..world.num_clusters);
        let palette = world.palette_of(cluster).to_vec();
        let mut colors = palette.clone();
        colors.shuffle(rng);
        colors.truncate(2);
        colors.sort();
        let mut brands = world.brand_affinity[cluster].clone();
        if brands.is_empty() {
            brands = world.brands.clone();
        }
        brands.shuffle(rng);
        brands.truncate(2);
        brands.sort();
        Self {
            user_id,
            preferred_cluster: cluster,
            preferred_brands: brands,
            preferred_colors: colors,
            gender: world.genders[rng.gen_range(0..world.genders.len())].clone(),
            occasion: world.occasions[rng.gen_range(0..world.occasions.len())].clone(),
        }
    }

    /// Expand the preference into a questionnaire record; the extra body
    /// and price fields are uninformative filler drawn at random.
    pub fn to_questionnaire(&self, world: &StyleWorld, rng: &mut ChaCha8Rng) -> Questionnaire {
        let style_names = ["classic", "casual", "sporty", "boho", "minimal", "street", "romantic", "edgy"];
        let mut no_go: Vec<String> = world
            .category_rank
            .iter()
            .filter(|c| !CORE_CATEGORIES.contains(&c.as_str()))
            .cloned()
            .collect();
        no_go.truncate(if rng.gen::<f64>() < 0.5 { 1 } else { 0 });
        Questionnaire {
            favorite_brands: self.preferred_brands.clone(),
            favorite_colors: self.preferred_colors.clone(),
            no_go_categories: no_go,
            gender: self.gender.clone(),
            body_height_band: ["petite", "average", "tall"][rng.gen_range(0..3)].to_string(),
            body_weight_band: ["light", "medium", "heavy"][rng.gen_range(0..3)].to_string(),
            occasion: self.occasion.clone(),
            price_band: ["budget", "mid", "premium"][rng.gen_range(0..3)].to_string(),
            shoe_size_band: ["36-38", "39-41", "42-44"][rng.gen_range(0..3)].to_string(),
            hair_color: ["blonde", "brown", "black", "red"][rng.gen_range(0..4)].to_string(),
            style_archetype: style_names[self.preferred_cluster % style_names.len()].to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct GenStats {
    pub emitted: usize,
    pub skipped: usize,
}

/// Pools of candidate item indices for one outfit theme.
struct Theme<'w> {
    gender: String,
    group: usize,
    cluster: usize,
    world: &'w StyleWorld,
}

impl Theme<'_> {
    /// Items of `category` consistent with the theme (and therefore with
    /// the oracle): matching gender and season group, cluster within the
    /// adjacent pair, color inside the theme palette.
    fn pool(&self, catalog: &Catalog, category: &str, prefer: Option<&SyntheticUser>) -> Vec<usize> {
        let palette = self.world.palette_of(self.cluster);
        let next = (self.cluster + 1) % self.world.num_clusters;
        catalog
            .items_in_category(category)
            .iter()
            .copied()
            .filter(|&i| {
                let it = &catalog.items()[i];
                if it.gender != self.gender || self.world.season_group_of(&it.season) != Some(self.group) {
                    return false;
                }
                if it.style_cluster != self.cluster && it.style_cluster != next {
                    return false;
                }
                if !palette.iter().any(|c| *c == it.color) {
                    return false;
                }
                if let Some(user) = prefer {
                    if it.style_cluster != user.preferred_cluster {
                        return false;
                    }
                    if !user.preferred_colors.iter().any(|c| *c == it.color) {
                        return false;
                    }
                }
                true
            })
            .collect()
    }
}

const OUTFIT_RETRY_CAP: usize = 1000;

/// Rejection-sample `num_outfits` oracle-compatible outfits. With a user,
/// each item is drawn from the preference-consistent pool with probability
/// 1 - noise (brands preferred within the pool when available).
pub fn generate_outfits(
    world: &StyleWorld,
    catalog: &Catalog,
    num_outfits: usize,
    seed: u64,
    user: Option<&SyntheticUser>,
) -> (Vec<Outfit>, GenStats) {
    let mut rng = derive_rng(seed, "outfits", &[]);
    generate_outfits_with(world, catalog, num_outfits, &mut rng, user, 0)
}

pub(crate) fn generate_outfits_with(
    world: &StyleWorld,
    catalog: &Catalog,
    num_outfits: usize,
    rng: &mut ChaCha8Rng,
    user: Option<&SyntheticUser>,
    min_core_items: usize,
) -> (Vec<Outfit>, GenStats) {
    let mut outfits = Vec::with_capacity(num_outfits);
    let mut stats = GenStats::default();
    'outer: for _ in 0..num_outfits {
        for _attempt in 0..OUTFIT_RETRY_CAP {
            let theme = Theme {
                gender: user.map(|u| u.gender.clone()).unwrap_or_else(|| world.genders[rng.gen_range(0..world.genders.len())].clone()),
                group: rng.gen_range(0..world.season_groups.len()),
                cluster: user.map(|u| u.preferred_cluster).unwrap_or_else(|| rng.gen_range(0..world.num_clusters)),
                world,
            };
            let template = world.sample_template(rng, min_core_items);
            let mut picked: Vec<ItemId> = Vec::with_capacity(template.len());
            let mut ok = true;
            for category in &template {
                let prefer = match user {
                    Some(u) if rng.gen::<f64>() >= world.noise => Some(u),
                    _ => None,
                };
                let mut pool = theme.pool(catalog, category, prefer);
                pool.retain(|&i| !picked.iter().any(|p| p == &catalog.items()[i].item_id));
                if pool.is_empty() {
                    ok = false;
                    break;
                }
                // soft brand preference: restrict to preferred brands when possible
                let chosen = if let (Some(u), true) = (prefer, !pool.is_empty()) {
                    let branded: Vec<usize> = pool
                        .iter()
                        .copied()
                        .filter(|&i| u.preferred_brands.iter().any(|b| *b == catalog.items()[i].brand))
                        .collect();
                    if branded.is_empty() {
                        pool[rng.gen_range(0..pool.len())]
                    } else {
                        branded[rng.gen_range(0..branded.len())]
                    }
                } else {
                    pool[rng.gen_range(0..pool.len())]
                };
                picked.push(catalog.items()[chosen].item_id.clone());
            }
            if !ok {
                continue;
            }
            let outfit = Outfit::new(picked, Some(OutfitSource::Curated));
            // the oracle is the final gate; the guided proposal should
            // always pass, the check guards against drift
            if oracle_compatible(&outfit, catalog, world).unwrap_or(false) {
                outfits.push(outfit);
                stats.emitted += 1;
                continue 'outer;
            }
        }
        stats.skipped += 1;
        eprintln!("warning: skipped an outfit after {OUTFIT_RETRY_CAP} attempts (infeasible template under constraints)");
    }
    (outfits, stats)
}

/// Swap k ~ Uniform{1..n} distinct positions for random catalog items.
/// The result always differs from the input and keeps distinct items.
pub fn negative_sample(outfit: &Outfit, catalog: &Catalog, rng: &mut ChaCha8Rng) -> Result<Outfit, SynthError> {
    let n = outfit.items.len();
    if catalog.len() <= n {
        return Err(SynthError::CatalogSmallerThanOutfit);
    }
    let k = rng.gen_range(1..=n);
    swap_positions(outfit, catalog, rng, k)
}

/// The compatibility-prediction corruption: replace exactly one item at a
/// random position (Hamming distance one from the source).
pub fn corrupt_one(outfit: &Outfit, catalog: &Catalog, rng: &mut ChaCha8Rng) -> Result<Outfit, SynthError> {
    if catalog.len() <= outfit.items.len() {
        return Err(SynthError::CatalogSmallerThanOutfit);
    }
    swap_positions(outfit, catalog, rng, 1)
}

fn swap_positions(outfit: &Outfit, catalog: &Catalog, rng: &mut ChaCha8Rng, k: usize) -> Result<Outfit, SynthError> {
    let n = outfit.items.len();
    let mut positions: Vec<usize> = (0..n).collect();
    positions.shuffle(rng);
    positions.truncate(k);
    let mut items = outfit.items.clone();
    for &pos in &positions {
        loop {
            let candidate = &catalog.items()[rng.gen_range(0..catalog.len())].item_id;
            if candidate != &outfit.items[pos] && !items.contains(candidate) {
                items[pos] = candidate.clone();
                break;
            }
        }
    }
    Ok(Outfit::new(items, Some(OutfitSource::Generated)))
}

/// Replace one item with a uniform draw from an explicit id pool (the
/// evaluation path corrupts from the model vocabulary).
pub fn corrupt_one_from_pool(outfit: &Outfit, pool: &[ItemId], rng: &mut ChaCha8Rng) -> Outfit {
    let n = outfit.items.len();
    let pos = rng.gen_range(0..n);
    let mut items = outfit.items.clone();
    loop {
        let candidate = &pool[rng.gen_range(0..pool.len())];
        if candidate != &outfit.items[pos] && !items.contains(candidate) {
            items[pos] = candidate.clone();
            break;
        }
    }
    Outfit::new(items, Some(OutfitSource::Generated))
}

/// Click-history samples: an action sequence of at least five events ending
/// with a click on the anchor (an item of the target outfit), plus the
/// target outfit with at least four non-accessory items. Items occurring
/// fewer than three times in the action data are dropped from histories;
/// samples that fall below five actions are discarded.
pub fn generate_click_dataset(world: &StyleWorld, catalog: &Catalog, num_samples: usize, seed: u64) -> Vec<UserRecord> {
    let mut records = Vec::with_capacity(num_samples);
    let mut rng = derive_rng(seed, "clicks", &[]);
    for s in 0..num_samples {
        let user = SyntheticUser::sample(world, format!("u{s:05}"), &mut rng);
        let mut outfit_rng = derive_rng(seed, "click-outfit", &[s as u64]);
        let (outfits, _) = generate_outfits_with(world, catalog, 1, &mut outfit_rng, Some(&user), 4);
        let Some(target) = outfits.into_iter().next() else { continue };
        let core_items: Vec<&ItemId> = target
            .items
            .iter()
            .filter(|id| catalog.item(id).map(|it| CORE_CATEGORIES.contains(&it.category.as_str())).unwrap_or(false))
            .collect();
        if core_items.len() < 4 {
            continue;
        }
        let anchor = core_items[rng.gen_range(0..core_items.len())].clone();
        let len = rng.gen_range(5..=12);
        let mut ages: Vec<u32> = (0..len).map(|_| rng.gen_range(1..30)).collect();
        ages.sort_unstable_by(|a, b| b.cmp(a));
        let mut actions = Vec::with_capacity(len + 1);
        for age in ages {
            let item = sample_preference_item(world, catalog, &user, &mut rng);
            let event = match rng.gen_range(0..10) {
                0..=6 => EventType::Click,
                7 | 8 => EventType::Wishlist,
                _ => EventType::Cart,
            };
            actions.push(Action { item_id: item, event, age_days: age });
        }
        actions.push(Action { item_id: anchor, event: EventType::Click, age_days: 0 });
        records.push(UserRecord {
            user_id: user.user_id.clone(),
            context: UserContext::ActionSequence { actions },
            label_outfit: target.items.clone(),
            day: rng.gen_range(0..30),
        });
    }
    filter_rare_action_items(records)
}

fn sample_preference_item(world: &StyleWorld, catalog: &Catalog, user: &SyntheticUser, rng: &mut ChaCha8Rng) -> ItemId {
    if rng.gen::<f64>() >= world.noise {
        // preference-consistent: preferred cluster, palette color
        let palette = world.palette_of(user.preferred_cluster);
        for _ in 0..200 {
            let it = &catalog.items()[rng.gen_range(0..catalog.len())];
            if it.style_cluster == user.preferred_cluster && palette.iter().any(|c| *c == it.color) && it.gender == user.gender {
                return it.item_id.clone();
            }
        }
    }
    catalog.items()[rng.gen_range(0..catalog.len())].item_id.clone()
}

fn filter_rare_action_items(mut records: Vec<UserRecord>) -> Vec<UserRecord> {
    let mut freq: BTreeMap<ItemId, usize> = BTreeMap::new();
    for r in &records {
        if let Some(actions) = r.context.actions() {
            for a in actions {
                *freq.entry(a.item_id.clone()).or_default() += 1;
            }
        }
    }
    records.retain_mut(|r| {
        let UserContext::ActionSequence { actions } = &mut r.context else { return true };
        let anchor = actions.last().map(|a| a.item_id.clone());
        actions.retain(|a| freq[&a.item_id] >= 3 || Some(&a.item_id) == anchor.as_ref());
        actions.len() >= 5
    });
    records
}

/// Questionnaire samples: the context is a preference questionnaire, the
/// label a preference-consistent outfit.
pub fn generate_questionnaire_dataset(world: &StyleWorld, catalog: &Catalog, num_samples: usize, seed: u64) -> Vec<UserRecord> {
    let mut records = Vec::with_capacity(num_samples);
    let mut rng = derive_rng(seed, "questionnaires", &[]);
    for s in 0..num_samples {
        let user = SyntheticUser::sample(world, format!("q{s:05}"), &mut rng);
        let mut outfit_rng = derive_rng(seed, "questionnaire-outfit", &[s as u64]);
        let (outfits, _) = generate_outfits_with(world, catalog, 1, &mut outfit_rng, Some(&user), 0);
        let Some(target) = outfits.into_iter().next() else { continue };
        let answers = user.to_questionnaire(world, &mut rng);
        records.push(UserRecord {
            user_id: user.user_id.clone(),
            context: UserContext::Questionnaire { answers },
            label_outfit: target.items.clone(),
            day: rng.gen_range(0..30),
        });
    }
    records
}

/// What gen-data writes next to the dataset files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub num_items: usize,
    pub num_outfits: usize,
    pub num_click_users: usize,
    pub num_questionnaire_users: usize,
    pub outfits_skipped: usize,
    pub world: StyleWorld,
}
