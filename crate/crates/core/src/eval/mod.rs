//! Linear-probe evaluation, collapse diagnostics and the synthetic dataset.

mod data;
mod probe;

pub use data::{make_synthetic_dataset, Dataset, Split, SyntheticSpec};
pub use probe::{
    extract_features, linear_probe, softmax_cross_entropy, train_linear_classifier, ProbeConfig, ProbeResult,
};

use nalgebra::DMatrix;

use crate::numerics::{dot, Tensor};

/// Population standard deviation of every column (Welford updates, so a
/// constant column gives exactly zero).
pub fn per_dim_std(x: &Tensor) -> Vec<f64> {
    let (n, d) = (x.rows(), x.cols());
    let mut mean = vec![0.0; d];
    let mut m2 = vec![0.0; d];
    for i in 0..n {
        let k = (i + 1) as f64;
        for ((m, s), &v) in mean.iter_mut().zip(m2.iter_mut()).zip(x.row(i)) {
            let delta = v - *m;
            *m += delta / k;
            *s += delta * (v - *m);
        }
    }
    if n == 0 {
        return vec![0.0; d];
    }
    m2.into_iter().map(|s| (s / n as f64).sqrt()).collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CollapseMetrics {
    /// Mean per-dimension std of the L2-normalized features.
    pub per_dim_std_mean: f64,
    /// `exp` of the entropy of the normalized singular-value distribution.
    pub effective_rank: f64,
}

/// Per-dimension std of isotropic unit vectors in `d` dimensions.
pub fn isotropic_reference(d: usize) -> f64 {
    1.0 / (d as f64).sqrt()
}

/// Collapse diagnostics of an `n × d` feature matrix. Zero rows stay zero
/// instead of being normalized.
pub fn collapse_metrics(features: &Tensor) -> CollapseMetrics {
    let (n, d) = (features.rows(), features.cols());
    let mut unit = features.clone();
    for i in 0..n {
        let row = unit.row_mut(i);
        let norm = dot(row, row).sqrt();
        if norm > 1e-12 {
            row.iter_mut().for_each(|v| *v /= norm);
        }
    }
    let std = per_dim_std(&unit);
    let per_dim_std_mean = if d == 0 { 0.0 } else { std.iter().sum::<f64>() / d as f64 };

    let m = DMatrix::from_row_slice(n, d, unit.data());
    let sv = m.singular_values();
    let total: f64 = sv.iter().sum();
    let effective_rank = if total > 0.0 {
        let entropy: f64 = sv
            .iter()
            .map(|s| s / total)
            .filter(|&p| p > 0.0)
            .map(|p| -p * p.ln())
            .sum();
        entropy.exp()
    } else {
        0.0
    };
    CollapseMetrics {
        per_dim_std_mean,
        effective_rank,
    }
}

#[cfg(test)]
mod tests;
