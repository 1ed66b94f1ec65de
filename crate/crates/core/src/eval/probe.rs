use crate::augment::Image;
use crate::encoder::{Encoder, EncoderParams, Grads, Role};
use crate::error::{Error, Result};
use crate::numerics::{Rng, Tensor};
use crate::optim::{lr_at, sgd_step, LrSchedule, MomentumState, SgdConfig};

use super::{per_dim_std, Dataset, Split};

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub schedule: LrSchedule,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Re-estimate batch-norm statistics on the training split before
    /// extracting features.
    pub recalibrate_bn: bool,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 64,
            schedule: LrSchedule::step_decay(0.3, vec![0.6, 0.8]),
            momentum: 0.9,
            weight_decay: 0.0,
            seed: 0,
            recalibrate_bn: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeResult {
    pub top1: f64,
    pub train_top1: f64,
    /// `classes × d`.
    pub weight: Tensor,
    pub bias: Tensor,
}

fn logits(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    crate::encoder::linear_forward(x, w, Some(b))
}

fn accuracy(x: &Tensor, y: &[usize], w: &Tensor, b: &Tensor) -> Result<f64> {
    if y.is_empty() {
        return Ok(0.0);
    }
    let z = logits(x, w, b)?;
    let correct = (0..z.rows())
        .filter(|&i| {
            let row = z.row(i);
            let best = (0..row.len()).fold(0, |best, j| if row[j] > row[best] { j } else { best });
            best == y[i]
        })
        .count();
    Ok(correct as f64 / y.len() as f64)
}

/// Mean softmax cross-entropy of a batch and its gradient w.r.t. the logits.
pub fn softmax_cross_entropy(z: &Tensor, y: &[usize]) -> (f64, Tensor) {
    let n = z.rows();
    let mut grad = Tensor::zeros(z.shape());
    let mut loss = 0.0;
    for i in 0..n {
        let row = z.row(i);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = row.iter().map(|v| (v - m).exp()).sum();
        loss += m + s.ln() - row[y[i]];
        for (j, g) in grad.row_mut(i).iter_mut().enumerate() {
            *g = ((row[j] - m).exp() / s - f64::from(j == y[i])) / n as f64;
        }
    }
    (loss / n as f64, grad)
}

/// Trains a softmax linear classifier with SGD on fixed features.
pub fn train_linear_classifier(
    train_x: &Tensor,
    train_y: &[usize],
    val_x: &Tensor,
    val_y: &[usize],
    classes: usize,
    cfg: &ProbeConfig,
) -> Result<ProbeResult> {
    if train_x.rows() != train_y.len() || val_x.rows() != val_y.len() {
        return Err(Error::Dimension {
            op: "linear probe labels",
            left: vec![train_x.rows(), val_x.rows()],
            right: vec![train_y.len(), val_y.len()],
        });
    }
    if let Some(&bad) = train_y.iter().chain(val_y).find(|&&l| l >= classes) {
        return Err(Error::Config(format!("label {bad} out of range for {classes} classes")));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("probe batch size must be positive".into()));
    }
    let d = train_x.cols();
    let mut params = EncoderParams::new();
    params.insert("probe.weight", Role::Weight, Tensor::zeros(&[classes, d]));
    params.insert("probe.bias", Role::Bias, Tensor::zeros(&[classes]));
    let sgd = SgdConfig {
        momentum: cfg.momentum,
        weight_decay: cfg.weight_decay,
        nesterov: false,
    };
    let mut state = MomentumState::new();
    let mut rng = Rng::new(cfg.seed, 0x9e0b);
    let n = train_x.rows();
    let batches = n.div_ceil(cfg.batch_size);
    let total = (cfg.epochs * batches).max(1);
    let mut step = 0;
    for _ in 0..cfg.epochs {
        let order = rng.permutation(n);
        for chunk in order.chunks(cfg.batch_size) {
            let xb = train_x.select_rows(chunk);
            let yb: Vec<usize> = chunk.iter().map(|&i| train_y[i]).collect();
            let w = params.tensor("probe.weight")?;
            let b = params.tensor("probe.bias")?;
            let (_, gz) = softmax_cross_entropy(&logits(&xb, w, b)?, &yb);
            let mut grads = Grads::new();
            grads.insert("probe.weight", gz.matmul_tn(&xb)?);
            let mut gb = vec![0.0; classes];
            for i in 0..gz.rows() {
                for (acc, &g) in gb.iter_mut().zip(gz.row(i)) {
                    *acc += g;
                }
            }
            grads.insert("probe.bias", Tensor::vector(gb));
            let lr = lr_at(step as f64 / total as f64, &cfg.schedule);
            sgd_step(&mut params, &grads, &mut state, &sgd, lr)?;
            step += 1;
        }
    }
    let w = params.tensor("probe.weight")?.clone();
    let b = params.tensor("probe.bias")?.clone();
    if !w.is_finite() || !b.is_finite() {
        return Err(Error::NonFinite("linear probe weights".into()));
    }
    Ok(ProbeResult {
        top1: accuracy(val_x, val_y, &w, &b)?,
        train_top1: accuracy(train_x, train_y, &w, &b)?,
        weight: w,
        bias: b,
    })
}

/// Eval-mode features of `backbone` for a list of images.
pub fn extract_features(backbone: &Encoder, params: &EncoderParams, images: &[Image]) -> Result<Tensor> {
    let x = Image::batch_to_tensor(images)?;
    let (y, _) = backbone.forward_grouped(params, &x, None)?;
    Ok(y)
}

/// Linear evaluation of a frozen backbone. The encoder parameters are only read.
pub fn linear_probe(backbone: &Encoder, params: &EncoderParams, data: &Dataset, cfg: &ProbeConfig) -> Result<ProbeResult> {
    let train_imgs = data.images_of(Split::Train);
    let val_imgs = data.images_of(Split::Val);
    let calibrated;
    let params = if cfg.recalibrate_bn {
        let mut p = params.clone();
        backbone.recalibrate_bn(&mut p, &Image::batch_to_tensor(&train_imgs)?)?;
        calibrated = p;
        &calibrated
    } else {
        params
    };
    let train_x = extract_features(backbone, params, &train_imgs)?;
    let val_x = extract_features(backbone, params, &val_imgs)?;
    let std = per_dim_std(&train_x).iter().sum::<f64>() / train_x.cols().max(1) as f64;
    if std.is_nan() || std < 1e-6 {
        return Err(Error::FeatureCollapse(std));
    }
    train_linear_classifier(
        &train_x,
        &data.labels_of(Split::Train),
        &val_x,
        &data.labels_of(Split::Val),
        data.classes,
        cfg,
    )
}
