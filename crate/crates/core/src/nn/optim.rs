//! Named parameter storage and the adaptive-moment optimizer.

use std::collections::BTreeMap;

use rand::Rng;

use super::tensor::Tensor;

/// A named parameter with its gradient accumulator and optimizer moments.
#[derive(Debug, Clone)]
pub struct ParamEntry {
    pub value: Tensor,
    pub grad: Tensor,
    pub m: Tensor,
    pub v: Tensor,
}

/// All trainable state of one model. Entries are kept in a BTreeMap so that
/// iteration, serialization and updates are order-deterministic.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: BTreeMap<String, ParamEntry>,
    step: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor) {
        let (r, c) = (value.rows, value.cols);
        let old = self.entries.insert(
            name.to_string(),
            ParamEntry { value, grad: Tensor::zeros(r, c), m: Tensor::zeros(r, c), v: Tensor::zeros(r, c) },
        );
        assert!(old.is_none(), "duplicate parameter {name}");
    }

    /// Dense weight with fan-in scaled uniform init, U[-1/sqrt(fan_in), ..].
    pub fn insert_dense(&mut self, name: &str, fan_in: usize, fan_out: usize, rng: &mut impl Rng) {
        let limit = 1.0 / (fan_in as f64).sqrt();
        self.insert(name, Tensor::uniform(fan_in, fan_out, limit, rng));
    }

    /// Plain uniform init for recurrent and embedding tables.
    pub fn insert_uniform(&mut self, name: &str, rows: usize, cols: usize, limit: f64, rng: &mut impl Rng) {
        self.insert(name, Tensor::uniform(rows, cols, limit, rng));
    }

    pub fn insert_zeros(&mut self, name: &str, rows: usize, cols: usize) {
        self.insert(name, Tensor::zeros(rows, cols));
    }

    pub fn get(&self, name: &str) -> &Tensor {
        &self.entries.get(name).unwrap_or_else(|| panic!("unknown parameter {name}")).value
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor {
        &mut self.entries.get_mut(name).unwrap_or_else(|| panic!("unknown parameter {name}")).value
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn grad(&self, name: &str) -> &Tensor {
        &self.entries.get(name).unwrap_or_else(|| panic!("unknown parameter {name}")).grad
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &ParamEntry)> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut ParamEntry)> {
        self.entries.iter_mut()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn set_step_count(&mut self, step: u64) {
        self.step = step;
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(|e| e.value.numel()).sum()
    }

    /// Add a gradient batch into the accumulators.
    pub fn accumulate(&mut self, grads: &Gradients) {
        for (name, g) in &grads.by_name {
            let entry = self.entries.get_mut(name).unwrap_or_else(|| panic!("gradient for unknown parameter {name}"));
            entry.grad.add_assign(g);
        }
    }

    pub fn zero_grads(&mut self) {
        for e in self.entries.values_mut() {
            e.grad.data.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn grads_are_finite(&self) -> bool {
        self.entries.values().all(|e| e.grad.is_finite())
    }
}

/// Gradients keyed by parameter name, as returned by a backward pass.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    pub by_name: BTreeMap<String, Tensor>,
}

impl Gradients {
    pub fn add(&mut self, name: &str, grad: Tensor) {
        match self.by_name.get_mut(name) {
            Some(t) => t.add_assign(&grad),
            None => {
                self.by_name.insert(name.to_string(), grad);
            }
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.by_name.get(name)
    }
}

/// Adam update rule.
#[derive(Debug, Clone, Copy)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Self { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl Adam {
    pub fn with_lr(learning_rate: f64) -> Self {
        Self { learning_rate, ..Self::default() }
    }

    /// Apply one update from the accumulated gradients, then clear them.
    /// The step counter increases monotonically.
    pub fn step(&self, params: &mut ParamStore) {
        params.step += 1;
        let t = params.step as f64;
        let bc1 = 1.0 - self.beta1.powf(t);
        let bc2 = 1.0 - self.beta2.powf(t);
        for e in params.entries.values_mut() {
            for i in 0..e.value.data.len() {
                let g = e.grad.data[i];
                e.m.data[i] = self.beta1 * e.m.data[i] + (1.0 - self.beta1) * g;
                e.v.data[i] = self.beta2 * e.v.data[i] + (1.0 - self.beta2) * g * g;
                let mhat = e.m.data[i] / bc1;
                let vhat = e.v.data[i] / bc2;
                e.value.data[i] -= self.learning_rate * mhat / (vhat.sqrt() + self.eps);
                e.grad.data[i] = 0.0;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::new(1, 3, vec![1.0, -2.0, 0.5]));
        let before = store.get("w").clone();
        Adam::default().step(&mut store);
        assert_eq!(store.get("w").data, before.data);
        assert_eq!(store.step_count(), 1);
    }

    #[test]
    fn constant_gradient_moves_against_its_sign() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::scalar(1.0));
        let adam = Adam::with_lr(0.01);
        let mut prev = 1.0;
        for _ in 0..50 {
            let mut g = Gradients::default();
            g.add("w", Tensor::scalar(2.5));
            store.accumulate(&g);
            adam.step(&mut store);
            let now = store.get("w").item();
            assert!(now < prev, "positive gradient must decrease the parameter");
            prev = now;
        }
    }

    #[test]
    fn one_step_reduces_quadratic_loss() {
        // loss(w) = (w - 3)^2, gradient 2(w - 3)
        let mut store = ParamStore::new();
        store.insert("w", Tensor::scalar(0.0));
        let loss = |w: f64| (w - 3.0) * (w - 3.0);
        let before = loss(store.get("w").item());
        let mut g = Gradients::default();
        g.add("w", Tensor::scalar(2.0 * (store.get("w").item() - 3.0)));
        store.accumulate(&g);
        Adam::with_lr(1e-2).step(&mut store);
        let after = loss(store.get("w").item());
        assert!(after < before);
    }

    #[test]
    fn gradients_cleared_after_step() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::scalar(1.0));
        let mut g = Gradients::default();
        g.add("w", Tensor::scalar(4.0));
        store.accumulate(&g);
        Adam::default().step(&mut store);
        assert_eq!(store.grad("w").item(), 0.0);
    }
}
