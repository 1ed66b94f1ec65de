use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// What a stored tensor is. Optimizer exclusions and weight-norm surgery key off this.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Weight,
    NormGain,
    NormBias,
    Bias,
    /// Batch-norm running mean/variance.
    RunningStat,
    /// Anything else persisted alongside parameters (queue contents, optimizer buffers).
    State,
}

impl Role {
    pub fn tag(self) -> u8 {
        match self {
            Role::Weight => 0,
            Role::NormGain => 1,
            Role::NormBias => 2,
            Role::Bias => 3,
            Role::RunningStat => 4,
            Role::State => 5,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Role> {
        Some(match tag {
            0 => Role::Weight,
            1 => Role::NormGain,
            2 => Role::NormBias,
            3 => Role::Bias,
            4 => Role::RunningStat,
            5 => Role::State,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Role::Weight => "weight",
            Role::NormGain => "norm_gain",
            Role::NormBias => "norm_bias",
            Role::Bias => "bias",
            Role::RunningStat => "running_stat",
            Role::State => "state",
        }
    }

    pub fn parse(s: &str) -> Option<Role> {
        Some(match s {
            "weight" => Role::Weight,
            "norm_gain" => Role::NormGain,
            "norm_bias" => Role::NormBias,
            "bias" => Role::Bias,
            "running_stat" => Role::RunningStat,
            "state" => Role::State,
            _ => return None,
        })
    }

    /// Trainable roles, i.e. everything an optimizer touches.
    pub fn is_trainable(self) -> bool {
        matches!(
            self,
            Role::Weight | Role::NormGain | Role::NormBias | Role::Bias
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub role: Role,
    pub value: Tensor,
}

/// Named parameters of one branch (in depth order) plus batch-norm running statistics.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EncoderParams {
    params: IndexMap<String, Param>,
    buffers: IndexMap<String, Tensor>,
}

impl EncoderParams {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, role: Role, value: Tensor) {
        self.params.insert(name.into(), Param { role, value });
    }

    pub fn insert_buffer(&mut self, name: impl Into<String>, value: Tensor) {
        self.buffers.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.params.get_mut(name)
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .map(|p| &p.value)
            .ok_or_else(|| Error::Architecture(format!("missing parameter `{name}`")))
    }

    pub fn buffer(&self, name: &str) -> Result<&Tensor> {
        self.buffers
            .get(name)
            .ok_or_else(|| Error::Architecture(format!("missing buffer `{name}`")))
    }

    pub fn buffer_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.buffers.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn buffers(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.buffers.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn buffers_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.buffers.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Keeps only parameters and buffers whose name starts with one of `prefixes`.
    pub fn subset(&self, prefixes: &[&str]) -> EncoderParams {
        let keep = |name: &str| prefixes.iter().any(|p| name.starts_with(p));
        EncoderParams {
            params: self
                .params
                .iter()
                .filter(|(k, _)| keep(k))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
            buffers: self
                .buffers
                .iter()
                .filter(|(k, _)| keep(k))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    /// Total number of scalar parameters (buffers excluded).
    pub fn num_scalars(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }
}

/// Gradients keyed by parameter name, mirroring the trainable part of [`EncoderParams`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Grads {
    map: IndexMap<String, Tensor>,
}

impl Grads {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn zeros_like(params: &EncoderParams) -> Self {
        Self {
            map: params
                .iter()
                .map(|(k, p)| (k.to_string(), Tensor::zeros(p.value.shape())))
                .collect(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.map.get(name)
    }

    pub fn insert(&mut self, name: impl Into<String>, g: Tensor) {
        self.map.insert(name.into(), g);
    }

    /// Adds `alpha * g` into the entry for `name`, creating it if absent.
    pub fn accumulate(&mut self, name: &str, alpha: f64, g: &Tensor) -> Result<()> {
        match self.map.get_mut(name) {
            Some(acc) => acc.axpy(alpha, g),
            None => {
                self.map.insert(name.to_string(), g.scale(alpha));
                Ok(())
            }
        }
    }

    /// `self += alpha * other` over every entry of `other`.
    pub fn add_scaled(&mut self, alpha: f64, other: &Grads) -> Result<()> {
        for (k, g) in &other.map {
            self.accumulate(k, alpha, g)?;
        }
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.map.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}
