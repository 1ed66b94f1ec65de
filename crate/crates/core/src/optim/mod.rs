//! SGD with momentum, LARS, learning-rate schedules and weight-norm reports.

mod schedule;

pub use schedule::{lr_at, LrSchedule, ScheduleKind};

use std::collections::BTreeSet;

use indexmap::IndexMap;

use crate::encoder::{EncoderParams, Grads, Role};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct SgdConfig {
    pub momentum: f64,
    pub weight_decay: f64,
    pub nesterov: bool,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            momentum: 0.9,
            weight_decay: 1e-4,
            nesterov: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LarsConfig {
    pub momentum: f64,
    pub weight_decay: f64,
    pub trust_coefficient: f64,
    pub eps: f64,
    /// Roles that skip both weight decay and trust-ratio adaptation.
    pub exclude_roles: BTreeSet<Role>,
}

impl LarsConfig {
    pub fn excludes(&self, role: Role) -> bool {
        self.exclude_roles.contains(&role)
    }
}

impl Default for LarsConfig {
    fn default() -> Self {
        Self {
            momentum: 0.9,
            weight_decay: 1.5e-6,
            trust_coefficient: 1e-3,
            eps: 1e-9,
            exclude_roles: [Role::NormGain, Role::NormBias, Role::Bias].into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum OptimizerConfig {
    Sgd(SgdConfig),
    Lars(LarsConfig),
}

impl OptimizerConfig {
    pub fn name(&self) -> &'static str {
        match self {
            OptimizerConfig::Sgd(_) => "sgd",
            OptimizerConfig::Lars(_) => "lars",
        }
    }
}

/// Momentum buffers keyed by parameter name; zero-initialized on first use.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MomentumState {
    velocity: IndexMap<String, Tensor>,
}

impl MomentumState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.velocity.get(name)
    }

    pub fn insert(&mut self, name: impl Into<String>, v: Tensor) {
        self.velocity.insert(name.into(), v);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.velocity.iter().map(|(k, v)| (k.as_str(), v))
    }

    fn slot(&mut self, name: &str, shape: &[usize]) -> &mut Tensor {
        self.velocity
            .entry(name.to_string())
            .or_insert_with(|| Tensor::zeros(shape))
    }
}

fn matching_grad<'a>(grads: &'a Grads, name: &str, w: &Tensor) -> Result<&'a Tensor> {
    let g = grads
        .get(name)
        .ok_or_else(|| Error::Config(format!("no gradient for parameter `{name}`")))?;
    if g.shape() != w.shape() {
        return Err(Error::Dimension {
            op: "optimizer step",
            left: w.shape().to_vec(),
            right: g.shape().to_vec(),
        });
    }
    if !g.is_finite() {
        return Err(Error::NonFinite(format!("gradient of `{name}`")));
    }
    Ok(g)
}

/// `g ← grad + λw; v ← μv + g; w ← w − lr·v` (Nesterov: `w ← w − lr·(g + μv)`).
pub fn sgd_step(
    params: &mut EncoderParams,
    grads: &Grads,
    state: &mut MomentumState,
    cfg: &SgdConfig,
    lr: f64,
) -> Result<()> {
    for (name, p) in params.iter_mut() {
        if !p.role.is_trainable() {
            continue;
        }
        let g = matching_grad(grads, name, &p.value)?;
        let v = state.slot(name, p.value.shape());
        let w = p.value.data_mut();
        for ((wi, vi), &gi) in w.iter_mut().zip(v.data_mut()).zip(g.data()) {
            let d = gi + cfg.weight_decay * *wi;
            *vi = cfg.momentum * *vi + d;
            let step = if cfg.nesterov {
                d + cfg.momentum * *vi
            } else {
                *vi
            };
            *wi -= lr * step;
        }
    }
    Ok(())
}

/// Layer-wise trust ratio `η‖w‖/(‖g‖+ε)` with `g = grad + λw`, or 1 when either
/// norm is zero.
pub fn trust_ratio(w_norm: f64, g_norm: f64, eta: f64, eps: f64) -> f64 {
    if w_norm > 0.0 && g_norm > 0.0 {
        eta * w_norm / (g_norm + eps)
    } else {
        1.0
    }
}

/// LARS update: `v ← μv + lr·local·g; w ← w − v`, with decay and adaptation
/// skipped for excluded roles.
pub fn lars_step(
    params: &mut EncoderParams,
    grads: &Grads,
    state: &mut MomentumState,
    cfg: &LarsConfig,
    lr: f64,
) -> Result<()> {
    for (name, p) in params.iter_mut() {
        if !p.role.is_trainable() {
            continue;
        }
        let g = matching_grad(grads, name, &p.value)?;
        let excluded = cfg.excludes(p.role);
        let decay = if excluded { 0.0 } else { cfg.weight_decay };
        let d: Vec<f64> = g
            .data()
            .iter()
            .zip(p.value.data())
            .map(|(&gi, &wi)| gi + decay * wi)
            .collect();
        let local = if excluded {
            1.0
        } else {
            let g_norm = crate::numerics::dot(&d, &d).sqrt();
            trust_ratio(p.value.norm(), g_norm, cfg.trust_coefficient, cfg.eps)
        };
        let v = state.slot(name, p.value.shape());
        for ((wi, vi), di) in p.value.data_mut().iter_mut().zip(v.data_mut()).zip(d) {
            *vi = cfg.momentum * *vi + lr * local * di;
            *wi -= *vi;
        }
    }
    Ok(())
}

/// An optimizer together with its momentum buffers.
#[derive(Clone, Debug)]
pub struct Optimizer {
    pub config: OptimizerConfig,
    pub state: MomentumState,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig) -> Self {
        Self {
            config,
            state: MomentumState::new(),
        }
    }

    pub fn step(&mut self, params: &mut EncoderParams, grads: &Grads, lr: f64) -> Result<()> {
        match &self.config {
            OptimizerConfig::Sgd(c) => sgd_step(params, grads, &mut self.state, c, lr),
            OptimizerConfig::Lars(c) => lars_step(params, grads, &mut self.state, c, lr),
        }
    }
}

/// 2-norm of every weight-role tensor, in depth order.
pub fn weight_norm_report(params: &EncoderParams) -> Vec<(String, f64)> {
    params
        .iter()
        .filter(|(_, p)| p.role == Role::Weight)
        .map(|(n, p)| (n.to_string(), p.value.norm()))
        .collect()
}

/// Sum of the 2-norms of all batch-norm gain vectors.
pub fn summed_norm_gain(params: &EncoderParams) -> f64 {
    params
        .iter()
        .filter(|(_, p)| p.role == Role::NormGain)
        .map(|(_, p)| p.value.norm())
        .sum()
}
