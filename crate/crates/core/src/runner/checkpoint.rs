use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::{EncoderParams, Role};
use crate::error::{Error, Result};
use crate::frameworks::{MemoryQueue, Siamese, SiameseState};
use crate::numerics::Tensor;
use crate::optim::MomentumState;

use super::config::ExperimentConfig;

pub const MAGIC: &[u8; 4] = b"AIRL";
pub const FORMAT_VERSION: u32 = 1;

const TEACHER: &str = "teacher.";
const OPTIM: &str = "optim.";
const QUEUE: &str = "queue.slots";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config_hash: String,
    pub config_text: String,
    pub step: usize,
    pub total_steps: usize,
    pub framework: String,
    pub optimizer: String,
    pub queue_cursor: usize,
    pub queue_len: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub name: String,
    pub role: Role,
    pub value: Tensor,
}

/// A serialized training state: student, teacher (prefixed `teacher.`), queue
/// contents and optimizer velocity (prefixed `optim.`).
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub records: Vec<Record>,
}

fn push_params(records: &mut Vec<Record>, prefix: &str, params: &EncoderParams) {
    for (name, p) in params.iter() {
        records.push(Record {
            name: format!("{prefix}{name}"),
            role: p.role,
            value: p.value.clone(),
        });
    }
    for (name, b) in params.buffers() {
        records.push(Record {
            name: format!("{prefix}{name}"),
            role: Role::RunningStat,
            value: b.clone(),
        });
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn utf8(&mut self, n: usize) -> Result<&'a str> {
        std::str::from_utf8(self.take(n)?).map_err(|e| Error::Checkpoint(format!("invalid UTF-8: {e}")))
    }
}

impl Checkpoint {
    pub fn from_state(cfg: &ExperimentConfig, state: &SiameseState, optim: &MomentumState) -> Self {
        let mut records = Vec::new();
        push_params(&mut records, "", &state.student);
        push_params(&mut records, TEACHER, &state.teacher);
        records.push(Record {
            name: QUEUE.into(),
            role: Role::State,
            value: state.queue.slots().clone(),
        });
        for (name, v) in optim.iter() {
            records.push(Record {
                name: format!("{OPTIM}{name}"),
                role: Role::State,
                value: v.clone(),
            });
        }
        Self {
            meta: CheckpointMeta {
                config_hash: cfg.hash(),
                config_text: cfg.to_text(),
                step: state.step,
                total_steps: state.total_steps,
                framework: cfg.framework.kind.name().into(),
                optimizer: cfg.optimizer.name().into(),
                queue_cursor: state.queue.cursor(),
                queue_len: state.queue.len(),
            },
            records,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = serde_json::to_vec(&self.meta)?;
        let mut out = Vec::with_capacity(16 + meta.len() + self.records.iter().map(|r| 8 * r.value.len() + 64).sum::<usize>());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
        for r in &self.records {
            out.extend_from_slice(&(r.name.len() as u32).to_le_bytes());
            out.extend_from_slice(r.name.as_bytes());
            out.push(r.role.tag());
            out.push(r.value.rank() as u8);
            for &d in r.value.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in r.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut rd = Reader { bytes, pos: 0 };
        if rd.take(4).ok() != Some(MAGIC.as_slice()) {
            return Err(Error::Checkpoint("bad magic: not an AIRL checkpoint".into()));
        }
        let version = rd.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {version} (expected {FORMAT_VERSION})"
            )));
        }
        let meta_len = rd.u32()? as usize;
        let meta: CheckpointMeta = serde_json::from_str(rd.utf8(meta_len)?)?;
        let mut records = Vec::new();
        while rd.pos < bytes.len() {
            let name_len = rd.u32()? as usize;
            let name = rd.utf8(name_len)?.to_string();
            let tag = rd.u8()?;
            let role = Role::from_tag(tag).ok_or_else(|| Error::Checkpoint(format!("`{name}`: unknown role tag {tag}")))?;
            let rank = rd.u8()? as usize;
            let shape = (0..rank).map(|_| rd.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let count = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .filter(|&c| c <= (bytes.len() - rd.pos) / 8)
                .ok_or_else(|| Error::Checkpoint(format!("`{name}`: payload exceeds file size")))?;
            let data = rd
                .take(8 * count)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            records.push(Record {
                name,
                role,
                value: Tensor::new(shape, data)?,
            });
        }
        Ok(Self { meta, records })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Parses the embedded config and checks it against the stored hash.
    pub fn config(&self) -> Result<ExperimentConfig> {
        let cfg = ExperimentConfig::parse(&self.meta.config_text)?;
        if cfg.hash() != self.meta.config_hash {
            return Err(Error::Checkpoint("config hash does not match the embedded config".into()));
        }
        Ok(cfg)
    }

    fn params_with_prefix(&self, prefix: &str) -> EncoderParams {
        let mut p = EncoderParams::new();
        for r in &self.records {
            let Some(name) = r.name.strip_prefix(prefix) else {
                continue;
            };
            if prefix.is_empty() && (r.name.starts_with(TEACHER) || r.role == Role::State) {
                continue;
            }
            match r.role {
                Role::RunningStat => p.insert_buffer(name, r.value.clone()),
                Role::State => {}
                role => p.insert(name, role, r.value.clone()),
            }
        }
        p
    }

    pub fn student(&self) -> EncoderParams {
        self.params_with_prefix("")
    }

    pub fn teacher(&self) -> EncoderParams {
        self.params_with_prefix(TEACHER)
    }

    /// Replaces the student and teacher records, keeping queue and optimizer state.
    pub fn with_params(&self, student: &EncoderParams, teacher: &EncoderParams) -> Self {
        let mut records = Vec::new();
        push_params(&mut records, "", student);
        push_params(&mut records, TEACHER, teacher);
        records.extend(self.records.iter().filter(|r| r.role == Role::State).cloned());
        Self {
            meta: self.meta.clone(),
            records,
        }
    }

    /// Rebuilds the model and its full training state, validated against the architecture.
    pub fn restore(&self) -> Result<(ExperimentConfig, Siamese, SiameseState, MomentumState)> {
        let cfg = self.config()?;
        let (model, mut state) = super::train::build_model(&cfg, self.meta.total_steps)?;
        state.student = self.student();
        state.teacher = self.teacher();
        state.step = self.meta.step;
        let slots = self
            .records
            .iter()
            .find(|r| r.name == QUEUE)
            .ok_or_else(|| Error::Checkpoint("missing queue record".into()))?;
        state.queue = MemoryQueue::from_parts(slots.value.clone(), self.meta.queue_cursor, self.meta.queue_len)?;
        if state.queue.capacity() > 0 && state.queue.dim() != model.teacher.output_dim() {
            return Err(Error::Checkpoint("queue width does not match the teacher".into()));
        }
        model.check_state(&state)?;
        let mut optim = MomentumState::new();
        for r in &self.records {
            if let Some(name) = r.name.strip_prefix(OPTIM) {
                optim.insert(name, r.value.clone());
            }
        }
        Ok((cfg, model, state, optim))
    }
}
