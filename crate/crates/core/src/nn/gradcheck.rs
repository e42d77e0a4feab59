//! Central finite-difference gradient checking.
//!
//! The numeric side only ever calls the forward pass, so it stays an
//! independent oracle for the analytic backward pass.

use rand::seq::SliceRandom;
use rand::Rng;

use super::optim::{Gradients, ParamStore};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub epsilon: f64,
    /// Allowed relative error; comparison is
    /// |a - n| <= abs_floor + tolerance * max(|a|, |n|).
    pub tolerance: f64,
    pub abs_floor: f64,
    /// Cap on checked components per parameter (None = all).
    pub max_components: Option<usize>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { epsilon: 1e-5, tolerance: 1e-4, abs_floor: 1e-7, max_components: None }
    }
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
}

/// Compare analytic gradients against central finite differences of the
/// forward loss. `forward` must be a pure function of the store.
pub fn grad_check(
    store: &mut ParamStore,
    forward: impl Fn(&ParamStore) -> f64,
    analytic: &Gradients,
    opts: GradCheckOptions,
    rng: &mut impl Rng,
) -> Result<GradCheckReport, String> {
    let names: Vec<String> = store.names().cloned().collect();
    let mut report = GradCheckReport::default();
    for name in names {
        let numel = store.get(&name).numel();
        let mut idxs: Vec<usize> = (0..numel).collect();
        if let Some(cap) = opts.max_components {
            if numel > cap {
                idxs.shuffle(rng);
                idxs.truncate(cap);
                idxs.sort_unstable();
            }
        }
        for i in idxs {
            let orig = store.get(&name).data[i];
            store.get_mut(&name).data[i] = orig + opts.epsilon;
            let plus = forward(store);
            store.get_mut(&name).data[i] = orig - opts.epsilon;
            let minus = forward(store);
            store.get_mut(&name).data[i] = orig;
            let numeric = (plus - minus) / (2.0 * opts.epsilon);
            let a = analytic.get(&name).map(|t| t.data[i]).unwrap_or(0.0);
            let diff = (a - numeric).abs();
            let limit = opts.abs_floor + opts.tolerance * a.abs().max(numeric.abs());
            if diff > limit {
                return Err(format!(
                    "gradient mismatch at {name}[{i}]: analytic {a:.9e}, numeric {numeric:.9e}, |diff| {diff:.3e} > {limit:.3e}"
                ));
            }
            let scale = a.abs().max(numeric.abs()).max(1.0);
            report.max_rel_err = report.max_rel_err.max(diff / scale);
            report.checked += 1;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::graph::{Graph, Mode};
    use crate::nn::tensor::Tensor;
    use crate::rng::derive_rng;

    #[test]
    fn catches_a_wrong_gradient() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::scalar(2.0));
        let forward = |s: &ParamStore| {
            let w = s.get("w").item();
            w * w
        };
        let mut wrong = Gradients::default();
        wrong.add("w", Tensor::scalar(1.0)); // true grad is 4
        let mut rng = derive_rng(0, "gc", &[]);
        assert!(grad_check(&mut store, forward, &wrong, GradCheckOptions::default(), &mut rng).is_err());
    }

    #[test]
    fn passes_a_correct_gradient_through_a_graph() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::new(1, 3, vec![0.4, -1.2, 2.0]));
        store.insert("b", Tensor::new(1, 3, vec![0.1, 0.2, -0.3]));
        let forward = |s: &ParamStore| {
            let mut g = Graph::new(s, Mode::Eval);
            let w = g.param("w");
            let b = g.param("b");
            let wb = g.mul(w, b);
            let t = g.tanh(wb);
            let sq = g.mul(t, t);
            let m = g.mean_rows(sq);
            // reduce [1,3] -> scalar via CE against a fixed target
            let loss = g.cross_entropy_mean(m, &[1]).unwrap();
            g.value(loss).item()
        };
        let (analytic, _) = {
            let mut g = Graph::new(&store, Mode::Eval);
            let w = g.param("w");
            let b = g.param("b");
            let wb = g.mul(w, b);
            let t = g.tanh(wb);
            let sq = g.mul(t, t);
            let m = g.mean_rows(sq);
            let loss = g.cross_entropy_mean(m, &[1]).unwrap();
            (g.backward(loss).unwrap(), g.value(loss).item())
        };
        let mut rng = derive_rng(1, "gc", &[]);
        let report = grad_check(&mut store, forward, &analytic, GradCheckOptions::default(), &mut rng).unwrap();
        assert_eq!(report.checked, 6);
    }
}
