//! Per-layer forward and backward kernels.

use crate::numerics::Tensor;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

/// `y = x Wᵀ + b` with `W` stored as `out×in`.
pub fn linear_forward(x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> crate::Result<Tensor> {
    let mut y = x.matmul_nt(w)?;
    if let Some(b) = b {
        let bias = b.data();
        for i in 0..y.rows() {
            for (v, &bv) in y.row_mut(i).iter_mut().zip(bias) {
                *v += bv;
            }
        }
    }
    Ok(y)
}

/// Returns `(grad_w, grad_b, grad_x)`; `grad_x` is empty unless `need_grad_x`.
pub fn linear_backward(
    x: &Tensor,
    w: &Tensor,
    grad_out: &Tensor,
    need_grad_x: bool,
) -> crate::Result<(Tensor, Tensor, Tensor)> {
    let grad_w = grad_out.matmul_tn(x)?;
    let out = grad_out.cols();
    let mut grad_b = vec![0.0; out];
    for i in 0..grad_out.rows() {
        for (acc, &g) in grad_b.iter_mut().zip(grad_out.row(i)) {
            *acc += g;
        }
    }
    let grad_x = if need_grad_x {
        grad_out.matmul(w)?
    } else {
        Tensor::zeros(&[0, x.cols()])
    };
    Ok((grad_w, Tensor::vector(grad_b), grad_x))
}

pub fn relu_forward(x: &Tensor) -> Tensor {
    x.map(|v| if v > 0.0 { v } else { 0.0 })
}

pub fn relu_backward(out: &Tensor, grad_out: &Tensor) -> crate::Result<Tensor> {
    out.zip_with(grad_out, "relu_backward", |o, g| if o > 0.0 { g } else { 0.0 })
}

/// Training-mode batch statistics for one group of rows.
#[derive(Clone, Debug)]
pub struct BnGroupStats {
    pub rows: Vec<usize>,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub inv_std: Vec<f64>,
}

/// Normalizes `x` with statistics computed separately over each row group.
/// Returns `x̂` (before the affine transform) and the per-group statistics.
pub fn bn_train_normalize(x: &Tensor, groups: &[Vec<usize>]) -> (Tensor, Vec<BnGroupStats>) {
    let d = x.cols();
    let mut xhat = Tensor::zeros(x.shape());
    let mut stats = Vec::with_capacity(groups.len());
    for rows in groups {
        let m = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for &r in rows {
            for (acc, &v) in mean.iter_mut().zip(x.row(r)) {
                *acc += v;
            }
        }
        for v in mean.iter_mut() {
            *v /= m;
        }
        let mut var = vec![0.0; d];
        for &r in rows {
            for ((acc, &v), &mu) in var.iter_mut().zip(x.row(r)).zip(&mean) {
                *acc += (v - mu) * (v - mu);
            }
        }
        for v in var.iter_mut() {
            *v /= m;
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        for &r in rows {
            let src = x.row(r);
            let dst = xhat.row_mut(r);
            for j in 0..d {
                dst[j] = (src[j] - mean[j]) * inv_std[j];
            }
        }
        stats.push(BnGroupStats {
            rows: rows.clone(),
            mean,
            var,
            inv_std,
        });
    }
    (xhat, stats)
}

pub fn bn_eval_normalize(x: &Tensor, running_mean: &[f64], running_var: &[f64]) -> Tensor {
    let mut xhat = x.clone();
    for i in 0..x.rows() {
        for ((v, &mu), &var) in xhat.row_mut(i).iter_mut().zip(running_mean).zip(running_var) {
            *v = (*v - mu) / (var + BN_EPS).sqrt();
        }
    }
    xhat
}

pub fn bn_affine(xhat: &Tensor, gain: &[f64], shift: &[f64]) -> Tensor {
    let mut y = xhat.clone();
    for i in 0..y.rows() {
        for ((v, &g), &b) in y.row_mut(i).iter_mut().zip(gain).zip(shift) {
            *v = *v * g + b;
        }
    }
    y
}

/// Backward through batch normalization in training mode.
///
/// `grad_xhat` is the gradient w.r.t. the normalized activations (i.e. already
/// multiplied by the gain). Returns the gradient w.r.t. the layer input.
pub fn bn_train_backward(xhat: &Tensor, grad_xhat: &Tensor, stats: &[BnGroupStats]) -> Tensor {
    let d = xhat.cols();
    let mut grad_x = Tensor::zeros(xhat.shape());
    for g in stats {
        let m = g.rows.len() as f64;
        let mut sum_g = vec![0.0; d];
        let mut sum_gx = vec![0.0; d];
        for &r in &g.rows {
            let gr = grad_xhat.row(r);
            let xr = xhat.row(r);
            for j in 0..d {
                sum_g[j] += gr[j];
                sum_gx[j] += gr[j] * xr[j];
            }
        }
        for &r in &g.rows {
            let gr = grad_xhat.row(r);
            let xr = xhat.row(r);
            let out = grad_x.row_mut(r);
            for j in 0..d {
                out[j] = g.inv_std[j] / m * (m * gr[j] - sum_g[j] - xr[j] * sum_gx[j]);
            }
        }
    }
    grad_x
}
