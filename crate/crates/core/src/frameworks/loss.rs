use crate::error::{Error, Result};
use crate::numerics::{dot, Tensor};

/// Loss value together with gradients for the query rows and the positive keys.
#[derive(Clone, Debug)]
pub struct PairLoss {
    pub loss: f64,
    pub grad_q: Tensor,
    /// Only consumed when keys are not detached (tied-weight ablation).
    pub grad_k: Tensor,
}

fn check_pair(op: &'static str, q: &Tensor, k: &Tensor) -> Result<()> {
    if q.rank() != 2 || q.shape() != k.shape() {
        return Err(Error::Dimension {
            op,
            left: q.shape().to_vec(),
            right: k.shape().to_vec(),
        });
    }
    Ok(())
}

/// InfoNCE over one positive per row and a shared set of negatives, averaged
/// over rows. Returns gradients w.r.t. `q` and `k_pos`; negatives are constants.
pub fn contrastive_loss_pair(q: &Tensor, k_pos: &Tensor, negatives: &Tensor, tau: f64) -> Result<PairLoss> {
    if tau.is_nan() || tau <= 0.0 {
        return Err(Error::Config(format!("temperature must be positive, got {tau}")));
    }
    check_pair("contrastive loss", q, k_pos)?;
    let (n, d) = (q.rows(), q.cols());
    let k_neg = if negatives.rank() == 2 { negatives.rows() } else { 0 };
    if k_neg > 0 && negatives.cols() != d {
        return Err(Error::Dimension {
            op: "contrastive loss negatives",
            left: q.shape().to_vec(),
            right: negatives.shape().to_vec(),
        });
    }
    let mut grad_q = Tensor::zeros(&[n, d]);
    let mut grad_k = Tensor::zeros(&[n, d]);
    if n == 0 {
        return Ok(PairLoss { loss: 0.0, grad_q, grad_k });
    }
    let scale = 1.0 / (tau * n as f64);
    let mut total = 0.0;
    let mut logits = vec![0.0; k_neg + 1];
    for i in 0..n {
        let qi = q.row(i);
        logits[0] = dot(qi, k_pos.row(i)) / tau;
        for j in 0..k_neg {
            logits[j + 1] = dot(qi, negatives.row(j)) / tau;
        }
        if logits.iter().any(|l| !l.is_finite()) {
            return Err(Error::NonFinite(format!("contrastive logits of row {i}")));
        }
        let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
        total += m + z.ln() - logits[0];

        let p_pos = (logits[0] - m).exp() / z;
        let gq = grad_q.row_mut(i);
        for (g, &kv) in gq.iter_mut().zip(k_pos.row(i)) {
            *g = (p_pos - 1.0) * kv * scale;
        }
        for j in 0..k_neg {
            let p = (logits[j + 1] - m).exp() / z;
            for (g, &nv) in gq.iter_mut().zip(negatives.row(j)) {
                *g += p * nv * scale;
            }
        }
        for (g, &qv) in grad_k.row_mut(i).iter_mut().zip(qi) {
            *g = (p_pos - 1.0) * qv * scale;
        }
    }
    Ok(PairLoss {
        loss: total / n as f64,
        grad_q,
        grad_k,
    })
}

/// Mean-over-rows contrastive loss with its gradient w.r.t. `q`.
pub fn contrastive_loss(q: &Tensor, k_pos: &Tensor, negatives: &Tensor, tau: f64) -> Result<(f64, Tensor)> {
    contrastive_loss_pair(q, k_pos, negatives, tau).map(|p| (p.loss, p.grad_q))
}

/// `mean_i ‖q_i − k_i‖²` with gradients w.r.t. both arguments.
pub fn byol_loss_pair(q: &Tensor, k: &Tensor) -> Result<PairLoss> {
    check_pair("byol loss", q, k)?;
    let n = q.rows();
    let diff = q.sub(k)?;
    if n == 0 {
        return Ok(PairLoss {
            loss: 0.0,
            grad_q: diff.clone(),
            grad_k: diff,
        });
    }
    let loss = diff.data().iter().map(|v| v * v).sum::<f64>() / n as f64;
    let grad_q = diff.scale(2.0 / n as f64);
    let grad_k = grad_q.scale(-1.0);
    Ok(PairLoss { loss, grad_q, grad_k })
}

pub fn byol_loss(q: &Tensor, k: &Tensor) -> Result<(f64, Tensor)> {
    byol_loss_pair(q, k).map(|p| (p.loss, p.grad_q))
}
