//! Weight-norm surgery on trained parameters and linear CKA similarity.

use std::collections::BTreeSet;

use crate::encoder::{Encoder, EncoderParams, Role};
use crate::error::{Error, Result};
use crate::numerics::{dot, Tensor};

/// What the rescaled norms are taken from.
#[derive(Clone, Debug)]
pub enum Anchor<'a> {
    /// Match each tensor's norm to the same-named tensor of another checkpoint.
    Checkpoint(&'a EncoderParams),
    /// Multiply every touched tensor by a constant.
    Constant(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct RescaleOptions {
    /// Roles eligible for rescaling.
    pub roles: BTreeSet<Role>,
    /// Also rescale batch-norm running statistics (off by default: they are
    /// statistics, not weights).
    pub running_stats: bool,
}

impl Default for RescaleOptions {
    fn default() -> Self {
        Self {
            roles: [Role::Weight, Role::NormGain, Role::NormBias, Role::Bias].into(),
            running_stats: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Touched {
    pub name: String,
    pub role: Role,
    pub before: f64,
    pub after: f64,
}

/// What a rescale did, tensor by tensor.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RescaleReport {
    pub touched: Vec<Touched>,
    /// Zero-norm tensors whose direction is undefined.
    pub skipped_zero: Vec<String>,
    /// Eligible tensors with no counterpart (or a mismatched shape) in the anchor.
    pub unmatched: Vec<String>,
    /// Tensors left alone because of their role.
    pub untouched: Vec<String>,
}

/// `w* = target·w/‖w‖`, or `None` when `w` has zero norm.
pub fn rescale_to_norm(w: &Tensor, target: f64) -> Option<Tensor> {
    let n = w.norm();
    if n == 0.0 {
        return None;
    }
    Some(w.map(|v| v / n * target))
}

fn rescale_one(
    name: &str,
    role: Role,
    value: &mut Tensor,
    anchor_value: Option<&Tensor>,
    anchor: &Anchor<'_>,
    report: &mut RescaleReport,
) {
    let before = value.norm();
    let new = match anchor {
        Anchor::Constant(c) => Some(value.scale(*c)),
        Anchor::Checkpoint(_) => match anchor_value {
            Some(a) if a.shape() == value.shape() => {
                if before == 0.0 {
                    log::warn!("skipping `{name}`: zero norm, direction undefined");
                    report.skipped_zero.push(name.to_string());
                    return;
                }
                rescale_to_norm(value, a.norm())
            }
            _ => {
                report.unmatched.push(name.to_string());
                return;
            }
        },
    };
    if let Some(w) = new {
        *value = w;
        report.touched.push(Touched {
            name: name.to_string(),
            role,
            before,
            after: value.norm(),
        });
    }
}

/// Applies NormRescale to every eligible tensor of `params`.
pub fn norm_rescale(params: &EncoderParams, anchor: &Anchor<'_>, opts: &RescaleOptions) -> Result<(EncoderParams, RescaleReport)> {
    if let Anchor::Constant(c) = anchor {
        if !c.is_finite() || *c <= 0.0 {
            return Err(Error::Config(format!("rescale factor must be positive, got {c}")));
        }
    }
    let mut out = params.clone();
    let mut report = RescaleReport::default();
    for (name, p) in out.iter_mut() {
        if !opts.roles.contains(&p.role) {
            report.untouched.push(name.to_string());
            continue;
        }
        let anchor_value = match anchor {
            Anchor::Checkpoint(a) => a.get(name).filter(|q| q.role == p.role).map(|q| &q.value),
            Anchor::Constant(_) => None,
        };
        rescale_one(name, p.role, &mut p.value, anchor_value, anchor, &mut report);
    }
    if opts.running_stats {
        for (name, buf) in out.buffers_mut() {
            let anchor_value = match anchor {
                Anchor::Checkpoint(a) => a.buffer(name).ok(),
                Anchor::Constant(_) => None,
            };
            rescale_one(name, Role::RunningStat, buf, anchor_value, anchor, &mut report);
        }
    }
    Ok((out, report))
}

fn center_columns(x: &Tensor) -> Tensor {
    let (n, d) = (x.rows(), x.cols());
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for (m, &v) in mean.iter_mut().zip(x.row(i)) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut out = x.clone();
    for i in 0..n {
        for (v, m) in out.row_mut(i).iter_mut().zip(&mean) {
            *v -= m;
        }
    }
    out
}

fn frobenius_sq(t: &Tensor) -> f64 {
    dot(t.data(), t.data())
}

/// Linear CKA `‖YᵀX‖²_F / (‖XᵀX‖_F ‖YᵀY‖_F)` on column-centered inputs.
pub fn linear_cka(x: &Tensor, y: &Tensor) -> Result<f64> {
    if x.rank() != 2 || y.rank() != 2 || x.rows() != y.rows() {
        return Err(Error::Dimension {
            op: "linear cka",
            left: x.shape().to_vec(),
            right: y.shape().to_vec(),
        });
    }
    if x.rows() < 2 {
        return Err(Error::DegenerateRepresentation("CKA needs at least two samples".into()));
    }
    let xc = center_columns(x);
    let yc = center_columns(y);
    for (label, t) in [("first", &xc), ("second", &yc)] {
        if t.norm() <= 1e-12 * (1.0 + x.norm().max(y.norm())) {
            return Err(Error::DegenerateRepresentation(format!(
                "{label} representation has zero variance"
            )));
        }
    }
    let cross = frobenius_sq(&yc.matmul_tn(&xc)?);
    let xx = frobenius_sq(&xc.matmul_tn(&xc)?).sqrt();
    let yy = frobenius_sq(&yc.matmul_tn(&yc)?).sqrt();
    Ok(cross / (xx * yy))
}

/// Linear CKA between the two encoders' activations after every stage on the
/// same probe batch (eval mode).
pub fn stagewise_cka(
    enc_a: &Encoder,
    params_a: &EncoderParams,
    enc_b: &Encoder,
    params_b: &EncoderParams,
    probe: &Tensor,
) -> Result<Vec<(String, f64)>> {
    if enc_a != enc_b {
        return Err(Error::Architecture("CKA needs two models of the same architecture".into()));
    }
    let acts_a = enc_a.stage_activations(params_a, probe)?;
    let acts_b = enc_b.stage_activations(params_b, probe)?;
    acts_a
        .into_iter()
        .zip(acts_b)
        .map(|((name, a), (_, b))| Ok((name, linear_cka(&a, &b)?)))
        .collect()
}

#[cfg(test)]
mod tests;
