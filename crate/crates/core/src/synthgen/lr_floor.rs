//! Logistic-regression sanity floor for compatibility prediction.
//!
//! A linear model over attribute one-hots (unigram value counts plus
//! pairwise value-pair counts) must already separate compatible from
//! corrupted outfits well; the neural results only mean something if they
//! clear this floor.

use rand::seq::SliceRandom;
use std::collections::HashMap;

use crate::catalog::{Catalog, Outfit, ATTRIBUTES};
use crate::rng::derive_rng;

use super::corrupt_one;

struct FeatureMap {
    index: HashMap<String, usize>,
}

impl FeatureMap {
    fn new() -> Self {
        Self { index: HashMap::new() }
    }

    fn intern(&mut self, key: String) -> usize {
        let next = self.index.len();
        *self.index.entry(key).or_insert(next)
    }

    fn get(&self, key: &str) -> Option<usize> {
        self.index.get(key).copied()
    }

    fn len(&self) -> usize {
        self.index.len()
    }
}

fn outfit_keys(outfit: &Outfit, catalog: &Catalog) -> Vec<String> {
    let items: Vec<_> = outfit.items.iter().map(|id| catalog.item(id).unwrap()).collect();
    let mut keys = Vec::new();
    for attr in ATTRIBUTES {
        for it in &items {
            keys.push(format!("u:{attr}:{}", it.attribute(attr)));
        }
        for i in 0..items.len() {
            for j in (i + 1)..items.len() {
                let (a, b) = (items[i].attribute(attr), items[j].attribute(attr));
                let (a, b) = if a <= b { (a, b) } else { (b, a) };
                keys.push(format!("b:{attr}:{a}|{b}"));
            }
        }
    }
    keys
}

fn score(weights: &[f64], bias: f64, features: &[usize]) -> f64 {
    bias + features.iter().map(|&i| weights[i]).sum::<f64>()
}

/// Train a logistic regression on oracle-labelled (positive, corrupted)
/// outfit pairs and return its held-out compatibility AUC.
pub fn lr_compatibility_auc(positives: &[Outfit], catalog: &Catalog, seed: u64) -> f64 {
    let mut rng = derive_rng(seed, "lr-floor", &[]);
    let mut map = FeatureMap::new();
    // featurize positives and matched negatives
    let mut samples: Vec<(Vec<usize>, f64)> = Vec::with_capacity(positives.len() * 2);
    for o in positives {
        let pos_keys = outfit_keys(o, catalog);
        let neg = corrupt_one(o, catalog, &mut rng).expect("corrupt_one");
        let neg_keys = outfit_keys(&neg, catalog);
        samples.push((pos_keys.into_iter().map(|k| map.intern(k)).collect(), 1.0));
        samples.push((neg_keys.into_iter().map(|k| map.intern(k)).collect(), 0.0));
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut rng);
    let split = samples.len() * 9 / 10;
    let (train_ids, test_ids) = order.split_at(split);

    let mut weights = vec![0.0; map.len()];
    let mut bias = 0.0;
    let lr = 0.1;
    for _epoch in 0..5 {
        for &i in train_ids {
            let (feats, label) = &samples[i];
            let z = score(&weights, bias, feats);
            let p = 1.0 / (1.0 + (-z).exp());
            let g = p - label;
            bias -= lr * g;
            for &f in feats {
                weights[f] -= lr * g;
            }
        }
    }
    let _ = map.get("");
    // held-out AUC by midrank
    let scored: Vec<(f64, f64)> = test_ids.iter().map(|&i| (score(&weights, bias, &samples[i].0), samples[i].1)).collect();
    let pos: Vec<f64> = scored.iter().filter(|(_, l)| *l > 0.5).map(|(s, _)| *s).collect();
    let neg: Vec<f64> = scored.iter().filter(|(_, l)| *l <= 0.5).map(|(s, _)| *s).collect();
    crate::eval::auc_from_scores(&pos, &neg).unwrap_or(0.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::{generate_catalog, generate_outfits, StyleWorld};

    #[test]
    fn planted_rule_is_linearly_learnable() {
        let world = StyleWorld::default();
        let catalog = generate_catalog(&world, 2000, 23).unwrap();
        let (outfits, _) = generate_outfits(&world, &catalog, 3000, 24, None);
        let auc = lr_compatibility_auc(&outfits, &catalog, 25);
        assert!(auc >= 0.8, "logistic floor AUC {auc} below 0.8; planted signal too weak");
    }
}
