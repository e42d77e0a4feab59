//! Forward kernels shared by the autodiff graph and the frozen-model
//! scoring paths, so both compute bit-identical values.

use super::tensor::{canonical_sum, Tensor};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Row-wise softmax with max subtraction. The denominator is accumulated in
/// canonical order, see [`canonical_sum`].
pub fn softmax_rows(x: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(x.rows, x.cols);
    let mut terms = vec![0.0; x.cols];
    for i in 0..x.rows {
        let row = x.row(i);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let o = out.row_mut(i);
        for (j, &v) in row.iter().enumerate() {
            o[j] = (v - m).exp();
            terms[j] = o[j];
        }
        let z = canonical_sum(&mut terms);
        for v in o.iter_mut() {
            *v /= z;
        }
    }
    out
}

pub fn logsumexp(row: &[f64]) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let mut terms: Vec<f64> = row.iter().map(|&v| (v - m).exp()).collect();
    m + canonical_sum(&mut terms).ln()
}

/// Negative log softmax probability of `target` under `logits`.
pub fn nll(logits: &[f64], target: usize) -> f64 {
    logsumexp(logits) - logits[target]
}

/// Scaled dot-product attention for one head.
///
/// `q`: [tq, dk], `k`: [tk, dk], `v`: [tk, dv]. With `causal` (requires
/// tq == tk) position i only attends to positions <= i. Returns the pooled
/// output [tq, dv] and the attention weights [tq, tk] (zero where masked).
///
/// All sums over key positions use canonical ordering, which makes the op
/// exactly equivariant under permutation of key/value rows.
pub fn attention_pool(q: &Tensor, k: &Tensor, v: &Tensor, causal: bool) -> (Tensor, Tensor) {
    assert_eq!(q.cols, k.cols, "attention q/k dim mismatch");
    assert_eq!(k.rows, v.rows, "attention k/v length mismatch");
    if causal {
        assert_eq!(q.rows, k.rows, "causal attention requires square weights");
    }
    let scale = 1.0 / (q.cols as f64).sqrt();
    let mut weights = Tensor::zeros(q.rows, k.rows);
    let mut out = Tensor::zeros(q.rows, v.cols);
    let mut terms = Vec::with_capacity(k.rows);
    for i in 0..q.rows {
        let limit = if causal { i + 1 } else { k.rows };
        let qi = q.row(i);
        let w = weights.row_mut(i);
        let mut m = f64::NEG_INFINITY;
        for j in 0..limit {
            let kj = k.row(j);
            let mut s = 0.0;
            for (a, b) in qi.iter().zip(kj) {
                s += a * b;
            }
            w[j] = s * scale;
            m = m.max(w[j]);
        }
        terms.clear();
        for wj in w[..limit].iter_mut() {
            *wj = (*wj - m).exp();
            terms.push(*wj);
        }
        let z = canonical_sum(&mut terms);
        for wj in w[..limit].iter_mut() {
            *wj /= z;
        }
        let o = out.row_mut(i);
        for (d, od) in o.iter_mut().enumerate() {
            terms.clear();
            for (j, wj) in w[..limit].iter().enumerate() {
                terms.push(wj * v.data[j * v.cols + d]);
            }
            *od = canonical_sum(&mut terms);
        }
    }
    (out, weights)
}

/// Layer normalization over the last dimension with learned gain/bias.
/// Returns the output and per-row (mean, inverse stddev) for backward.
pub fn layer_norm(x: &Tensor, gain: &Tensor, bias: &Tensor) -> (Tensor, Vec<(f64, f64)>) {
    assert_eq!(gain.cols, x.cols);
    assert_eq!(bias.cols, x.cols);
    let mut out = Tensor::zeros(x.rows, x.cols);
    let mut cache = Vec::with_capacity(x.rows);
    let n = x.cols as f64;
    for i in 0..x.rows {
        let row = x.row(i);
        let mean = row.iter().sum::<f64>() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let rstd = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        let o = out.row_mut(i);
        for j in 0..x.cols {
            o[j] = gain.data[j] * (row[j] - mean) * rstd + bias.data[j];
        }
        cache.push((mean, rstd));
    }
    (out, cache)
}

/// Sinusoidal positional encoding rows, added when a config asks for
/// positional information (the set models never do).
pub fn positional_encoding(positions: usize, dim: usize) -> Tensor {
    let mut out = Tensor::zeros(positions, dim);
    for p in 0..positions {
        let row = out.row_mut(p);
        for j in 0..dim {
            let i = (j / 2) as f64;
            let angle = p as f64 / 10000f64.powf(2.0 * i / dim as f64);
            row[j] = if j % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_rows_sum_to_one() {
        let x = Tensor::new(3, 4, vec![1.0, 2.0, 3.0, 4.0, -10.0, 0.0, 10.0, 5.0, 0.0, 0.0, 0.0, 0.0]);
        let p = softmax_rows(&x);
        for i in 0..3 {
            let s: f64 = p.row(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-9, "row {} sums to {}", i, s);
        }
    }

    #[test]
    fn nll_uniform_logits() {
        let logits = vec![0.0; 4];
        assert!((nll(&logits, 2) - 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn attention_single_position_is_identity_pool() {
        // softmax over one element is 1, so the output is the value row
        let q = Tensor::new(1, 3, vec![0.3, -1.0, 2.0]);
        let k = Tensor::new(1, 3, vec![1.0, 1.0, 1.0]);
        let v = Tensor::new(1, 2, vec![5.0, -7.0]);
        let (out, w) = attention_pool(&q, &k, &v, false);
        assert_eq!(out.data, v.data);
        assert_eq!(w.data, vec![1.0]);
    }

    #[test]
    fn attention_causal_ignores_future() {
        let q = Tensor::new(3, 2, vec![1.0, 0.0, 0.5, 0.5, -1.0, 2.0]);
        let k = q.clone();
        let v = Tensor::new(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let (out_a, _) = attention_pool(&q, &k, &v, true);
        // replace the last key/value pair with noise; rows 0 and 1 must not move
        let mut k2 = k.clone();
        let mut v2 = v.clone();
        k2.row_mut(2).copy_from_slice(&[99.0, -99.0]);
        v2.row_mut(2).copy_from_slice(&[-5.0, 5.0]);
        let (out_b, _) = attention_pool(&q, &k2, &v2, true);
        assert_eq!(out_a.row(0), out_b.row(0));
        assert_eq!(out_a.row(1), out_b.row(1));
    }

    #[test]
    fn attention_permuting_keys_is_bitwise_stable() {
        let q = Tensor::new(2, 3, vec![0.1, 0.7, -0.3, 1.1, 0.2, 0.4]);
        let k = Tensor::new(4, 3, vec![0.5, -0.2, 0.9, 1.5, 0.3, -0.8, -0.4, 0.6, 0.2, 0.0, 1.0, -1.0]);
        let v = Tensor::new(4, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
        let (out_a, _) = attention_pool(&q, &k, &v, false);
        let perm = [2usize, 0, 3, 1];
        let k2 = Tensor::from_rows(&perm.iter().map(|&i| k.row(i).to_vec()).collect::<Vec<_>>());
        let v2 = Tensor::from_rows(&perm.iter().map(|&i| v.row(i).to_vec()).collect::<Vec<_>>());
        let (out_b, _) = attention_pool(&q, &k2, &v2, false);
        for (a, b) in out_a.data.iter().zip(&out_b.data) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn layer_norm_zero_mean_unit_var() {
        let x = Tensor::new(1, 4, vec![1.0, 2.0, 3.0, 4.0]);
        let gain = Tensor::new(1, 4, vec![1.0; 4]);
        let bias = Tensor::zeros(1, 4);
        let (y, _) = layer_norm(&x, &gain, &bias);
        let mean: f64 = y.row(0).iter().sum::<f64>() / 4.0;
        let var: f64 = y.row(0).iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-4);
    }
}
