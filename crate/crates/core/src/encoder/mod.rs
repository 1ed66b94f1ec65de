//! Siamese branch network: MLP backbone, projector and optional predictor,
//! with a hand-derived backward pass and the batch-norm variants used by the
//! configuration ladder.

mod layers;
mod params;

pub use layers::{linear_forward, BN_EPS, BN_MOMENTUM};
pub use params::{EncoderParams, Grads, Param, Role};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Rng, Tensor};
use layers::BnGroupStats;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Linear { bias: bool },
    BatchNorm { affine: bool },
    Relu,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl LayerSpec {
    pub fn linear(name: impl Into<String>, in_dim: usize, out_dim: usize, bias: bool) -> Self {
        Self {
            name: name.into(),
            kind: LayerKind::Linear { bias },
            in_dim,
            out_dim,
        }
    }

    pub fn batch_norm(name: impl Into<String>, dim: usize) -> Self {
        Self {
            name: name.into(),
            kind: LayerKind::BatchNorm { affine: true },
            in_dim: dim,
            out_dim: dim,
        }
    }

    pub fn relu(name: impl Into<String>, dim: usize) -> Self {
        Self {
            name: name.into(),
            kind: LayerKind::Relu,
            in_dim: dim,
            out_dim: dim,
        }
    }

    fn param(&self, suffix: &str) -> String {
        format!("{}.{suffix}", self.name)
    }
}

/// Batch-norm statistics mode for a training-mode forward pass.
///
/// `Shuffled` emulates MoCo's shuffling BN in one process: rows are permuted
/// by a random permutation, split into `groups` virtual devices, and each
/// group normalizes with its own statistics. Outputs stay in input order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BnMode {
    Global,
    Shuffled { groups: usize },
}

/// A named point in the network whose activations are reported (for CKA).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Stage {
    pub name: String,
    /// Number of layers up to and including this stage's last layer.
    pub end: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Encoder {
    layers: Vec<LayerSpec>,
    stages: Vec<Stage>,
    input_dim: usize,
}

#[derive(Clone, Debug)]
enum LayerCache {
    Linear,
    BatchNorm {
        xhat: Tensor,
        stats: Vec<BnGroupStats>,
    },
    BatchNormEval,
    Relu,
}

/// Intermediates of a forward pass needed by [`Encoder::backward`].
#[derive(Clone, Debug)]
pub struct ForwardCache {
    /// `acts[0]` is the input, `acts[i + 1]` the output of layer `i`.
    acts: Vec<Tensor>,
    layers: Vec<LayerCache>,
    training: bool,
}

impl ForwardCache {
    pub fn output(&self) -> &Tensor {
        self.acts.last().expect("cache always holds the input")
    }

    /// Output of the first `end` layers.
    pub fn activation(&self, end: usize) -> &Tensor {
        &self.acts[end]
    }

    pub fn is_training(&self) -> bool {
        self.training
    }
}

impl Encoder {
    pub fn new(input_dim: usize, layers: Vec<LayerSpec>, stages: Vec<Stage>) -> Result<Self> {
        let mut dim = input_dim;
        for l in &layers {
            if l.in_dim != dim {
                return Err(Error::Architecture(format!(
                    "layer `{}` expects input dim {} but receives {dim}",
                    l.name, l.in_dim
                )));
            }
            if !matches!(l.kind, LayerKind::Linear { .. }) && l.in_dim != l.out_dim {
                return Err(Error::Architecture(format!(
                    "layer `{}` must preserve its dimension",
                    l.name
                )));
            }
            if l.in_dim == 0 || l.out_dim == 0 {
                return Err(Error::Architecture(format!("layer `{}` has a zero dimension", l.name)));
            }
            dim = l.out_dim;
        }
        for s in &stages {
            if s.end > layers.len() {
                return Err(Error::Architecture(format!("stage `{}` is past the last layer", s.name)));
            }
        }
        Ok(Self {
            layers,
            stages,
            input_dim,
        })
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn stages(&self) -> &[Stage] {
        &self.stages
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(self.input_dim, |l| l.out_dim)
    }

    pub fn has_batch_norm(&self) -> bool {
        self.layers
            .iter()
            .any(|l| matches!(l.kind, LayerKind::BatchNorm { .. }))
    }

    /// The sub-network made of the first `end` layers.
    pub fn prefix(&self, end: usize) -> Encoder {
        Encoder {
            layers: self.layers[..end].to_vec(),
            stages: self.stages.iter().filter(|s| s.end <= end).cloned().collect(),
            input_dim: self.input_dim,
        }
    }

    /// Fresh parameters: weights and biases uniform in `±1/√fan_in`,
    /// batch-norm gain 1, shift 0, running mean 0, running variance 1.
    pub fn init_params(&self, rng: &mut Rng) -> EncoderParams {
        let mut p = EncoderParams::new();
        for l in &self.layers {
            match l.kind {
                LayerKind::Linear { bias } => {
                    let bound = 1.0 / (l.in_dim as f64).sqrt();
                    let w: Vec<f64> = (0..l.in_dim * l.out_dim)
                        .map(|_| rng.uniform_range(-bound, bound))
                        .collect();
                    p.insert(
                        l.param("weight"),
                        Role::Weight,
                        Tensor::new(vec![l.out_dim, l.in_dim], w).expect("sized"),
                    );
                    if bias {
                        let b = (0..l.out_dim).map(|_| rng.uniform_range(-bound, bound)).collect();
                        p.insert(l.param("bias"), Role::Bias, Tensor::vector(b));
                    }
                }
                LayerKind::BatchNorm { affine } => {
                    if affine {
                        p.insert(l.param("gain"), Role::NormGain, Tensor::full(&[l.out_dim], 1.0));
                        p.insert(l.param("shift"), Role::NormBias, Tensor::zeros(&[l.out_dim]));
                    }
                    p.insert_buffer(l.param("running_mean"), Tensor::zeros(&[l.out_dim]));
                    p.insert_buffer(l.param("running_var"), Tensor::full(&[l.out_dim], 1.0));
                }
                LayerKind::Relu => {}
            }
        }
        p
    }

    /// Checks that `params` holds exactly the tensors this architecture needs.
    pub fn check_params(&self, params: &EncoderParams) -> Result<()> {
        let fresh = self.init_params(&mut Rng::new(0, 0));
        for (name, p) in fresh.iter() {
            let got = params.get(name).ok_or_else(|| {
                Error::Architecture(format!("missing parameter `{name}`"))
            })?;
            if got.value.shape() != p.value.shape() || got.role != p.role {
                return Err(Error::Architecture(format!(
                    "parameter `{name}` has shape {:?}/{:?}, expected {:?}/{:?}",
                    got.value.shape(),
                    got.role,
                    p.value.shape(),
                    p.role
                )));
            }
        }
        for (name, b) in fresh.buffers() {
            let got = params.buffer(name)?;
            if got.shape() != b.shape() {
                return Err(Error::Architecture(format!("buffer `{name}` has wrong shape")));
            }
        }
        Ok(())
    }

    /// Forward pass. In training mode batch norm uses batch statistics (per
    /// virtual device in shuffled mode, with the permutation drawn from `rng`);
    /// in eval mode it uses the running statistics and `rng` is not touched.
    pub fn forward(
        &self,
        params: &EncoderParams,
        x: &Tensor,
        training: bool,
        bn_mode: BnMode,
        rng: &mut Rng,
    ) -> Result<(Tensor, ForwardCache)> {
        let groups = if training && self.has_batch_norm() {
            Some(bn_groups(x.rows(), bn_mode, rng)?)
        } else {
            None
        };
        self.forward_grouped(params, x, groups.as_deref())
    }

    /// Forward pass with explicit batch-norm row groups (`None` = eval mode).
    pub fn forward_grouped(
        &self,
        params: &EncoderParams,
        x: &Tensor,
        groups: Option<&[Vec<usize>]>,
    ) -> Result<(Tensor, ForwardCache)> {
        if x.rank() != 2 || x.cols() != self.input_dim {
            return Err(Error::Dimension {
                op: "encoder forward",
                left: x.shape().to_vec(),
                right: vec![x.rows(), self.input_dim],
            });
        }
        if let Some(gs) = groups {
            if self.has_batch_norm() {
                let smallest = gs.iter().map(Vec::len).min().unwrap_or(0);
                if smallest < 2 {
                    return Err(Error::BatchTooSmall(if gs.len() == 1 { x.rows() } else { smallest }));
                }
            }
        }
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        let mut caches = Vec::with_capacity(self.layers.len());
        acts.push(x.clone());
        for l in &self.layers {
            let input = acts.last().expect("non-empty");
            let (out, cache) = match l.kind {
                LayerKind::Linear { bias } => {
                    let w = params.tensor(&l.param("weight"))?;
                    let b = if bias {
                        Some(params.tensor(&l.param("bias"))?)
                    } else {
                        None
                    };
                    (layers::linear_forward(input, w, b)?, LayerCache::Linear)
                }
                LayerKind::BatchNorm { affine } => {
                    let (xhat, cache) = match groups {
                        Some(gs) => {
                            let (xhat, stats) = layers::bn_train_normalize(input, gs);
                            (xhat.clone(), LayerCache::BatchNorm { xhat, stats })
                        }
                        None => {
                            let mean = params.buffer(&l.param("running_mean"))?;
                            let var = params.buffer(&l.param("running_var"))?;
                            (
                                layers::bn_eval_normalize(input, mean.data(), var.data()),
                                LayerCache::BatchNormEval,
                            )
                        }
                    };
                    let out = if affine {
                        let gain = params.tensor(&l.param("gain"))?;
                        let shift = params.tensor(&l.param("shift"))?;
                        layers::bn_affine(&xhat, gain.data(), shift.data())
                    } else {
                        xhat
                    };
                    (out, cache)
                }
                LayerKind::Relu => (layers::relu_forward(input), LayerCache::Relu),
            };
            if !out.is_finite() {
                return Err(Error::NumericOverflow(l.name.clone()));
            }
            acts.push(out);
            caches.push(cache);
        }
        let out = acts.last().expect("non-empty").clone();
        Ok((
            out,
            ForwardCache {
                acts,
                layers: caches,
                training: groups.is_some(),
            },
        ))
    }

    /// Exact gradients of the forward computation recorded in `cache`.
    /// Returns the parameter gradients and the gradient w.r.t. the input.
    pub fn backward(
        &self,
        params: &EncoderParams,
        cache: &ForwardCache,
        grad_out: &Tensor,
    ) -> Result<(Grads, Tensor)> {
        self.backward_impl(params, cache, grad_out, true)
    }

    /// Parameter gradients only; skips the (wide) gradient w.r.t. the input.
    pub fn param_grads(&self, params: &EncoderParams, cache: &ForwardCache, grad_out: &Tensor) -> Result<Grads> {
        Ok(self.backward_impl(params, cache, grad_out, false)?.0)
    }

    fn backward_impl(
        &self,
        params: &EncoderParams,
        cache: &ForwardCache,
        grad_out: &Tensor,
        input_grad: bool,
    ) -> Result<(Grads, Tensor)> {
        if cache.layers.len() != self.layers.len() {
            return Err(Error::Architecture("forward cache does not match encoder".into()));
        }
        if grad_out.shape() != cache.output().shape() {
            return Err(Error::Dimension {
                op: "encoder backward",
                left: grad_out.shape().to_vec(),
                right: cache.output().shape().to_vec(),
            });
        }
        let mut grads = Grads::new();
        let mut g = grad_out.clone();
        for (i, l) in self.layers.iter().enumerate().rev() {
            let input = &cache.acts[i];
            g = match (&l.kind, &cache.layers[i]) {
                (LayerKind::Linear { bias }, LayerCache::Linear) => {
                    let w = params.tensor(&l.param("weight"))?;
                    let (gw, gb, gx) = layers::linear_backward(input, w, &g, input_grad || i > 0)?;
                    grads.insert(l.param("weight"), gw);
                    if *bias {
                        grads.insert(l.param("bias"), gb);
                    }
                    gx
                }
                (LayerKind::BatchNorm { affine }, LayerCache::BatchNorm { xhat, stats }) => {
                    let grad_xhat = if *affine {
                        let gain = params.tensor(&l.param("gain"))?;
                        let d = g.cols();
                        let mut ggain = vec![0.0; d];
                        let mut gshift = vec![0.0; d];
                        let mut gx = g.clone();
                        for r in 0..g.rows() {
                            let gr = g.row(r);
                            let xr = xhat.row(r);
                            for j in 0..d {
                                ggain[j] += gr[j] * xr[j];
                                gshift[j] += gr[j];
                            }
                            for (v, &gv) in gx.row_mut(r).iter_mut().zip(gain.data()) {
                                *v *= gv;
                            }
                        }
                        grads.insert(l.param("gain"), Tensor::vector(ggain));
                        grads.insert(l.param("shift"), Tensor::vector(gshift));
                        gx
                    } else {
                        g
                    };
                    layers::bn_train_backward(xhat, &grad_xhat, stats)
                }
                (LayerKind::BatchNorm { .. }, _) => {
                    return Err(Error::Config(
                        "backward requires a training-mode forward cache".into(),
                    ))
                }
                (LayerKind::Relu, LayerCache::Relu) => {
                    layers::relu_backward(&cache.acts[i + 1], &g)?
                }
                _ => return Err(Error::Architecture("forward cache does not match encoder".into())),
            };
        }
        Ok((grads, g))
    }

    /// Folds the batch statistics of a training-mode forward into the running
    /// statistics (`running ← 0.9·running + 0.1·batch`).
    pub fn absorb_batch_stats(&self, params: &mut EncoderParams, cache: &ForwardCache) -> Result<()> {
        self.fold_stats(params, cache, BN_MOMENTUM)
    }

    /// Replaces running statistics with the exact statistics of `x`
    /// (one training-mode pass with a single global group).
    pub fn recalibrate_bn(&self, params: &mut EncoderParams, x: &Tensor) -> Result<()> {
        if !self.has_batch_norm() {
            return Ok(());
        }
        let all: Vec<usize> = (0..x.rows()).collect();
        let (_, cache) = self.forward_grouped(params, x, Some(&[all]))?;
        self.fold_stats(params, &cache, 0.0)
    }

    fn fold_stats(&self, params: &mut EncoderParams, cache: &ForwardCache, momentum: f64) -> Result<()> {
        for (l, c) in self.layers.iter().zip(&cache.layers) {
            if let LayerCache::BatchNorm { stats, .. } = c {
                let d = l.out_dim;
                let k = stats.len() as f64;
                let mut mean = vec![0.0; d];
                let mut var = vec![0.0; d];
                for s in stats {
                    for j in 0..d {
                        mean[j] += s.mean[j] / k;
                        var[j] += s.var[j] / k;
                    }
                }
                for (suffix, batch) in [("running_mean", mean), ("running_var", var)] {
                    let name = l.param(suffix);
                    let buf = params
                        .buffer_mut(&name)
                        .ok_or_else(|| Error::Architecture(format!("missing buffer `{name}`")))?;
                    for (r, b) in buf.data_mut().iter_mut().zip(batch) {
                        *r = momentum * *r + (1.0 - momentum) * b;
                    }
                }
            }
        }
        Ok(())
    }

    /// Eval-mode activations after every stage.
    pub fn stage_activations(&self, params: &EncoderParams, x: &Tensor) -> Result<Vec<(String, Tensor)>> {
        let (_, cache) = self.forward_grouped(params, x, None)?;
        Ok(self
            .stages
            .iter()
            .map(|s| (s.name.clone(), cache.acts[s.end].clone()))
            .collect())
    }
}

/// Row groups for batch-norm statistics under `mode`.
pub fn bn_groups(n: usize, mode: BnMode, rng: &mut Rng) -> Result<Vec<Vec<usize>>> {
    match mode {
        BnMode::Global => Ok(vec![(0..n).collect()]),
        BnMode::Shuffled { groups } => {
            if groups == 0 {
                return Err(Error::Config("shuffled BN needs at least one group".into()));
            }
            let perm = rng.permutation(n);
            Ok(split_groups(&perm, groups))
        }
    }
}

/// Splits `order` into `groups` contiguous chunks whose sizes differ by at most one.
pub fn split_groups(order: &[usize], groups: usize) -> Vec<Vec<usize>> {
    let n = order.len();
    let base = n / groups;
    let extra = n % groups;
    let mut out = Vec::with_capacity(groups);
    let mut start = 0;
    for g in 0..groups {
        let len = base + usize::from(g < extra);
        out.push(order[start..start + len].to_vec());
        start += len;
    }
    out
}

/// Where the predictor head lives.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorPlacement {
    None,
    StudentOnly,
    Both,
}

impl PredictorPlacement {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "none" => Self::None,
            "student_only" => Self::StudentOnly,
            "both" => Self::Both,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::StudentOnly => "student_only",
            Self::Both => "both",
        }
    }
}

/// Layer widths and head options of one siamese branch.
#[derive(Clone, Debug, PartialEq)]
pub struct BranchConfig {
    pub input_dim: usize,
    pub backbone_widths: Vec<usize>,
    pub projector_hidden: usize,
    pub projector_out: usize,
    pub projector_hidden_bn: bool,
    pub predictor: bool,
}

impl Default for BranchConfig {
    fn default() -> Self {
        Self {
            input_dim: 3 * 16 * 16,
            backbone_widths: vec![128, 128],
            projector_hidden: 64,
            projector_out: 32,
            projector_hidden_bn: true,
            predictor: true,
        }
    }
}

/// A branch architecture with the boundaries of its three parts.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Branch {
    pub encoder: Encoder,
    pub backbone_end: usize,
    pub projector_end: usize,
}

impl Branch {
    pub fn backbone(&self) -> Encoder {
        self.encoder.prefix(self.backbone_end)
    }

    /// Backbone and projector, without any predictor.
    pub fn without_predictor(&self) -> Encoder {
        self.encoder.prefix(self.projector_end)
    }

    pub fn has_predictor(&self) -> bool {
        self.encoder.layers().len() > self.projector_end
    }

    /// Width of the backbone output (the linear-probe feature dimension).
    pub fn feature_dim(&self) -> usize {
        self.backbone().output_dim()
    }
}

fn mlp_head(layers: &mut Vec<LayerSpec>, prefix: &str, input: usize, hidden: usize, out: usize, hidden_bn: bool) {
    layers.push(LayerSpec::linear(format!("{prefix}.0"), input, hidden, !hidden_bn));
    if hidden_bn {
        layers.push(LayerSpec::batch_norm(format!("{prefix}.1"), hidden));
    }
    layers.push(LayerSpec::relu(format!("{prefix}.2"), hidden));
    layers.push(LayerSpec::linear(format!("{prefix}.3"), hidden, out, true));
}

/// Builds the student branch: backbone blocks (linear → BN → ReLU), projector
/// (linear → [BN] → ReLU → linear) and, if configured, a predictor shaped like
/// the projector. Parameters are drawn from `rng`.
pub fn build_branch(cfg: &BranchConfig, rng: &mut Rng) -> Result<(Branch, EncoderParams)> {
    if cfg.input_dim == 0 || cfg.projector_hidden == 0 || cfg.projector_out == 0 {
        return Err(Error::Config("branch dimensions must be positive".into()));
    }
    let mut layers = Vec::new();
    let mut stages = Vec::new();
    let mut dim = cfg.input_dim;
    for (b, &w) in cfg.backbone_widths.iter().enumerate() {
        if w == 0 {
            return Err(Error::Config("backbone widths must be positive".into()));
        }
        let base = 3 * b;
        layers.push(LayerSpec::linear(format!("backbone.{base}"), dim, w, false));
        layers.push(LayerSpec::batch_norm(format!("backbone.{}", base + 1), w));
        layers.push(LayerSpec::relu(format!("backbone.{}", base + 2), w));
        stages.push(Stage {
            name: format!("block{}", b + 1),
            end: layers.len(),
        });
        dim = w;
    }
    let backbone_end = layers.len();
    mlp_head(&mut layers, "projector", dim, cfg.projector_hidden, cfg.projector_out, cfg.projector_hidden_bn);
    stages.push(Stage {
        name: "projector".into(),
        end: layers.len(),
    });
    let projector_end = layers.len();
    if cfg.predictor {
        mlp_head(
            &mut layers,
            "predictor",
            cfg.projector_out,
            cfg.projector_hidden,
            cfg.projector_out,
            cfg.projector_hidden_bn,
        );
        stages.push(Stage {
            name: "predictor".into(),
            end: layers.len(),
        });
    }
    let encoder = Encoder::new(cfg.input_dim, layers, stages)?;
    let params = encoder.init_params(rng);
    Ok((
        Branch {
            encoder,
            backbone_end,
            projector_end,
        },
        params,
    ))
}
