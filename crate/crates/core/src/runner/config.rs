use std::collections::HashMap;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::augment::{AugPipeline, Augmentation};
use crate::encoder::{BnMode, BranchConfig, PredictorPlacement, Role};
use crate::error::{Error, Result};
use crate::eval::{ProbeConfig, SyntheticSpec};
use crate::frameworks::{FrameworkConfig, FrameworkKind, MomentumSchedule};
use crate::optim::{LarsConfig, LrSchedule, OptimizerConfig, ScheduleKind, SgdConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub backbone_widths: Vec<usize>,
    pub projector_hidden: usize,
    pub projector_out: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentConfig {
    pub pipeline: Vec<String>,
    pub removal_rung: usize,
    pub out_side: usize,
    /// Area fraction range of the random resized crop.
    pub crop_scale: (f64, f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub seed: u64,
    pub spec: SyntheticSpec,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Write a checkpoint every this many epochs (0: final only).
    pub checkpoint_every: usize,
    pub log_every: usize,
}

/// Everything a run depends on. Parsed from `section.key = value` lines.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub framework: FrameworkConfig,
    pub model: ModelConfig,
    pub optimizer: OptimizerConfig,
    pub schedule: LrSchedule,
    pub augment: AugmentConfig,
    pub data: DataConfig,
    pub run: RunConfig,
    pub probe: ProbeConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::for_kind(FrameworkKind::MocoV2Plus)
    }
}

/// Every key in canonical order. Keys are applied in this order regardless of
/// their order in the file, so selectors (`kind`, `name`) come first.
const KEYS: &[&str] = &[
    "framework.kind",
    "framework.temperature",
    "framework.queue_size",
    "framework.symmetric_loss",
    "framework.symmetric_sum",
    "framework.predictor_placement",
    "framework.momentum_base",
    "framework.momentum_schedule",
    "framework.projector_hidden_bn",
    "framework.bn_mode",
    "framework.bn_groups",
    "framework.stop_gradient",
    "model.backbone_widths",
    "model.projector_hidden",
    "model.projector_out",
    "optimizer.name",
    "optimizer.momentum",
    "optimizer.weight_decay",
    "optimizer.nesterov",
    "optimizer.trust_coefficient",
    "optimizer.eps",
    "optimizer.exclude",
    "schedule.kind",
    "schedule.base_lr",
    "schedule.warmup",
    "schedule.milestones",
    "schedule.factor",
    "augment.pipeline",
    "augment.removal_rung",
    "augment.out_side",
    "augment.crop_scale",
    "data.seed",
    "data.classes",
    "data.train_per_class",
    "data.val_per_class",
    "data.side",
    "data.noise",
    "run.epochs",
    "run.batch_size",
    "run.seed",
    "run.output_dir",
    "run.checkpoint_every",
    "run.log_every",
    "probe.epochs",
    "probe.batch_size",
    "probe.base_lr",
    "probe.milestones",
    "probe.momentum",
    "probe.weight_decay",
    "probe.recalibrate_bn",
];

fn parse_num<T: std::str::FromStr>(v: &str) -> std::result::Result<T, String> {
    v.parse().map_err(|_| format!("cannot parse `{v}` as a number"))
}

fn parse_bool(v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("expected true or false, got `{v}`")),
    }
}

fn parse_list<T: std::str::FromStr>(v: &str) -> std::result::Result<Vec<T>, String> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|s| parse_num(s.trim())).collect()
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    pub fn for_kind(kind: FrameworkKind) -> Self {
        Self {
            framework: FrameworkConfig::preset(kind),
            model: ModelConfig {
                backbone_widths: vec![128, 128],
                projector_hidden: 64,
                projector_out: 32,
            },
            optimizer: OptimizerConfig::Sgd(SgdConfig::default()),
            schedule: LrSchedule::cosine(0.06, 0.1),
            augment: AugmentConfig {
                pipeline: AugPipeline::standard(16).names().iter().map(|s| s.to_string()).collect(),
                removal_rung: 0,
                out_side: 16,
                crop_scale: (0.08, 1.0),
            },
            data: DataConfig {
                seed: 0,
                spec: SyntheticSpec::default(),
            },
            run: RunConfig {
                epochs: 20,
                batch_size: 64,
                seed: 0,
                output_dir: PathBuf::from("runs/default"),
                checkpoint_every: 0,
                log_every: 1,
            },
            probe: ProbeConfig::default(),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: Vec<(usize, usize, String)> = Vec::new();
        let mut seen: HashMap<&str, usize> = HashMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| Error::ConfigParse {
                line,
                msg: format!("expected `section.key = value`, got `{content}`"),
            })?;
            let key = key.trim();
            let idx = KEYS.iter().position(|k| *k == key).ok_or_else(|| Error::ConfigParse {
                line,
                msg: format!("unknown key `{key}`"),
            })?;
            if let Some(prev) = seen.insert(KEYS[idx], line) {
                return Err(Error::ConfigParse {
                    line,
                    msg: format!("duplicate key `{key}` (first set on line {prev})"),
                });
            }
            entries.push((idx, line, value.trim().to_string()));
        }
        entries.sort_by_key(|e| e.0);

        let mut cfg = ExperimentConfig::default();
        for (idx, line, value) in entries {
            cfg.set(KEYS[idx], &value)
                .map_err(|msg| Error::ConfigParse { line, msg: format!("{}: {msg}", KEYS[idx]) })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    fn set(&mut self, key: &str, v: &str) -> std::result::Result<(), String> {
        let fw = &mut self.framework;
        match key {
            "framework.kind" => {
                let kind = FrameworkKind::parse(v).ok_or_else(|| format!("unknown framework `{v}`"))?;
                *fw = FrameworkConfig::preset(kind);
            }
            "framework.temperature" => fw.temperature = parse_num(v)?,
            "framework.queue_size" => fw.queue_size = parse_num(v)?,
            "framework.symmetric_loss" => fw.symmetric_loss = parse_bool(v)?,
            "framework.symmetric_sum" => fw.symmetric_sum = parse_bool(v)?,
            "framework.predictor_placement" => {
                fw.predictor_placement =
                    PredictorPlacement::parse(v).ok_or_else(|| format!("unknown placement `{v}`"))?
            }
            "framework.momentum_base" => fw.momentum_base = parse_num(v)?,
            "framework.momentum_schedule" => {
                fw.momentum_schedule =
                    MomentumSchedule::parse(v).ok_or_else(|| format!("unknown momentum schedule `{v}`"))?
            }
            "framework.projector_hidden_bn" => fw.projector_hidden_bn = parse_bool(v)?,
            "framework.bn_mode" => {
                fw.bn_mode = match (v, fw.bn_mode) {
                    ("global", _) => BnMode::Global,
                    ("shuffled", BnMode::Shuffled { groups }) => BnMode::Shuffled { groups },
                    ("shuffled", BnMode::Global) => BnMode::Shuffled { groups: 2 },
                    _ => return Err(format!("expected global or shuffled, got `{v}`")),
                }
            }
            "framework.bn_groups" => match fw.bn_mode {
                BnMode::Shuffled { .. } => fw.bn_mode = BnMode::Shuffled { groups: parse_num(v)? },
                BnMode::Global => return Err("bn_groups requires bn_mode = shuffled".into()),
            },
            "framework.stop_gradient" => fw.stop_gradient = parse_bool(v)?,
            "model.backbone_widths" => self.model.backbone_widths = parse_list(v)?,
            "model.projector_hidden" => self.model.projector_hidden = parse_num(v)?,
            "model.projector_out" => self.model.projector_out = parse_num(v)?,
            "optimizer.name" => {
                self.optimizer = match v {
                    "sgd" => OptimizerConfig::Sgd(SgdConfig::default()),
                    "lars" => OptimizerConfig::Lars(LarsConfig::default()),
                    _ => return Err(format!("unknown optimizer `{v}`")),
                }
            }
            "optimizer.momentum" => match &mut self.optimizer {
                OptimizerConfig::Sgd(c) => c.momentum = parse_num(v)?,
                OptimizerConfig::Lars(c) => c.momentum = parse_num(v)?,
            },
            "optimizer.weight_decay" => match &mut self.optimizer {
                OptimizerConfig::Sgd(c) => c.weight_decay = parse_num(v)?,
                OptimizerConfig::Lars(c) => c.weight_decay = parse_num(v)?,
            },
            "optimizer.nesterov" => match &mut self.optimizer {
                OptimizerConfig::Sgd(c) => c.nesterov = parse_bool(v)?,
                OptimizerConfig::Lars(_) => return Err("only valid for sgd".into()),
            },
            "optimizer.trust_coefficient" | "optimizer.eps" | "optimizer.exclude" => {
                let OptimizerConfig::Lars(c) = &mut self.optimizer else {
                    return Err("only valid for lars".into());
                };
                match key {
                    "optimizer.trust_coefficient" => c.trust_coefficient = parse_num(v)?,
                    "optimizer.eps" => c.eps = parse_num(v)?,
                    _ => {
                        c.exclude_roles = v
                            .split(',')
                            .map(str::trim)
                            .filter(|s| !s.is_empty())
                            .map(|s| Role::parse(s).ok_or_else(|| format!("unknown role `{s}`")))
                            .collect::<std::result::Result<_, _>>()?
                    }
                }
            }
            "schedule.kind" => {
                self.schedule.kind = match v {
                    "cosine" => ScheduleKind::Cosine,
                    "step" => ScheduleKind::StepDecay {
                        milestones: vec![0.6, 0.8],
                        factor: 0.1,
                    },
                    _ => return Err(format!("expected cosine or step, got `{v}`")),
                }
            }
            "schedule.base_lr" => self.schedule.base_lr = parse_num(v)?,
            "schedule.warmup" => self.schedule.warmup = parse_num(v)?,
            "schedule.milestones" | "schedule.factor" => {
                let ScheduleKind::StepDecay { milestones, factor } = &mut self.schedule.kind else {
                    return Err("only valid for schedule.kind = step".into());
                };
                if key == "schedule.factor" {
                    *factor = parse_num(v)?;
                } else {
                    *milestones = parse_list(v)?;
                }
            }
            "augment.pipeline" => {
                self.augment.pipeline = v
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(String::from)
                    .collect()
            }
            "augment.removal_rung" => self.augment.removal_rung = parse_num(v)?,
            "augment.out_side" => self.augment.out_side = parse_num(v)?,
            "augment.crop_scale" => match parse_list::<f64>(v)?[..] {
                [lo, hi] if 0.0 < lo && lo <= hi && hi <= 1.0 => self.augment.crop_scale = (lo, hi),
                _ => return Err(format!("expected `lo,hi` with 0 < lo <= hi <= 1, got `{v}`")),
            },
            "data.seed" => self.data.seed = parse_num(v)?,
            "data.classes" => self.data.spec.classes = parse_num(v)?,
            "data.train_per_class" => self.data.spec.train_per_class = parse_num(v)?,
            "data.val_per_class" => self.data.spec.val_per_class = parse_num(v)?,
            "data.side" => self.data.spec.side = parse_num(v)?,
            "data.noise" => self.data.spec.noise = parse_num(v)?,
            "run.epochs" => self.run.epochs = parse_num(v)?,
            "run.batch_size" => self.run.batch_size = parse_num(v)?,
            "run.seed" => self.run.seed = parse_num(v)?,
            "run.output_dir" => self.run.output_dir = PathBuf::from(v),
            "run.checkpoint_every" => self.run.checkpoint_every = parse_num(v)?,
            "run.log_every" => self.run.log_every = parse_num(v)?,
            "probe.epochs" => self.probe.epochs = parse_num(v)?,
            "probe.batch_size" => self.probe.batch_size = parse_num(v)?,
            "probe.base_lr" => self.probe.schedule.base_lr = parse_num(v)?,
            "probe.milestones" => self.probe.schedule.kind = ScheduleKind::StepDecay {
                milestones: parse_list(v)?,
                factor: 0.1,
            },
            "probe.momentum" => self.probe.momentum = parse_num(v)?,
            "probe.weight_decay" => self.probe.weight_decay = parse_num(v)?,
            "probe.recalibrate_bn" => self.probe.recalibrate_bn = parse_bool(v)?,
            _ => return Err("unknown key".into()),
        }
        Ok(())
    }

    fn get(&self, key: &str) -> Option<String> {
        let fw = &self.framework;
        Some(match key {
            "framework.kind" => fw.kind.name().into(),
            "framework.temperature" => fw.temperature.to_string(),
            "framework.queue_size" => fw.queue_size.to_string(),
            "framework.symmetric_loss" => fw.symmetric_loss.to_string(),
            "framework.symmetric_sum" => fw.symmetric_sum.to_string(),
            "framework.predictor_placement" => fw.predictor_placement.name().into(),
            "framework.momentum_base" => fw.momentum_base.to_string(),
            "framework.momentum_schedule" => fw.momentum_schedule.name().into(),
            "framework.projector_hidden_bn" => fw.projector_hidden_bn.to_string(),
            "framework.bn_mode" => match fw.bn_mode {
                BnMode::Global => "global".into(),
                BnMode::Shuffled { .. } => "shuffled".into(),
            },
            "framework.bn_groups" => match fw.bn_mode {
                BnMode::Global => return None,
                BnMode::Shuffled { groups } => groups.to_string(),
            },
            "framework.stop_gradient" => fw.stop_gradient.to_string(),
            "model.backbone_widths" => join(&self.model.backbone_widths),
            "model.projector_hidden" => self.model.projector_hidden.to_string(),
            "model.projector_out" => self.model.projector_out.to_string(),
            "optimizer.name" => self.optimizer.name().into(),
            "optimizer.momentum" => match &self.optimizer {
                OptimizerConfig::Sgd(c) => c.momentum.to_string(),
                OptimizerConfig::Lars(c) => c.momentum.to_string(),
            },
            "optimizer.weight_decay" => match &self.optimizer {
                OptimizerConfig::Sgd(c) => c.weight_decay.to_string(),
                OptimizerConfig::Lars(c) => c.weight_decay.to_string(),
            },
            "optimizer.nesterov" => match &self.optimizer {
                OptimizerConfig::Sgd(c) => c.nesterov.to_string(),
                OptimizerConfig::Lars(_) => return None,
            },
            "optimizer.trust_coefficient" | "optimizer.eps" | "optimizer.exclude" => {
                let OptimizerConfig::Lars(c) = &self.optimizer else {
                    return None;
                };
                match key {
                    "optimizer.trust_coefficient" => c.trust_coefficient.to_string(),
                    "optimizer.eps" => c.eps.to_string(),
                    _ => c.exclude_roles.iter().map(|r| r.name()).collect::<Vec<_>>().join(","),
                }
            }
            "schedule.kind" => match self.schedule.kind {
                ScheduleKind::Cosine => "cosine".into(),
                ScheduleKind::StepDecay { .. } => "step".into(),
            },
            "schedule.base_lr" => self.schedule.base_lr.to_string(),
            "schedule.warmup" => self.schedule.warmup.to_string(),
            "schedule.milestones" | "schedule.factor" => {
                let ScheduleKind::StepDecay { milestones, factor } = &self.schedule.kind else {
                    return None;
                };
                if key == "schedule.factor" {
                    factor.to_string()
                } else {
                    join(milestones)
                }
            }
            "augment.pipeline" => self.augment.pipeline.join(","),
            "augment.removal_rung" => self.augment.removal_rung.to_string(),
            "augment.out_side" => self.augment.out_side.to_string(),
            "augment.crop_scale" => format!("{},{}", self.augment.crop_scale.0, self.augment.crop_scale.1),
            "data.seed" => self.data.seed.to_string(),
            "data.classes" => self.data.spec.classes.to_string(),
            "data.train_per_class" => self.data.spec.train_per_class.to_string(),
            "data.val_per_class" => self.data.spec.val_per_class.to_string(),
            "data.side" => self.data.spec.side.to_string(),
            "data.noise" => self.data.spec.noise.to_string(),
            "run.epochs" => self.run.epochs.to_string(),
            "run.batch_size" => self.run.batch_size.to_string(),
            "run.seed" => self.run.seed.to_string(),
            "run.output_dir" => self.run.output_dir.display().to_string(),
            "run.checkpoint_every" => self.run.checkpoint_every.to_string(),
            "run.log_every" => self.run.log_every.to_string(),
            "probe.epochs" => self.probe.epochs.to_string(),
            "probe.batch_size" => self.probe.batch_size.to_string(),
            "probe.base_lr" => self.probe.schedule.base_lr.to_string(),
            "probe.milestones" => match &self.probe.schedule.kind {
                ScheduleKind::StepDecay { milestones, .. } => join(milestones),
                ScheduleKind::Cosine => return None,
            },
            "probe.momentum" => self.probe.momentum.to_string(),
            "probe.weight_decay" => self.probe.weight_decay.to_string(),
            "probe.recalibrate_bn" => self.probe.recalibrate_bn.to_string(),
            _ => return None,
        })
    }

    /// Every applicable key with its resolved value, one per line, in canonical order.
    pub fn to_text(&self) -> String {
        KEYS.iter()
            .filter_map(|k| self.get(k).map(|v| format!("{k} = {v}\n")))
            .collect()
    }

    /// SHA-256 of the canonical text, hex-encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }

    /// Keys whose values differ from `base`, as `key = value` strings.
    pub fn diff(&self, base: &ExperimentConfig) -> Vec<String> {
        KEYS.iter()
            .filter_map(|k| {
                let mine = self.get(k);
                (mine != base.get(k)).then(|| format!("{k} = {}", mine.unwrap_or_else(|| "-".into())))
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.framework.validate()?;
        self.pipeline()?;
        if self.run.batch_size < 2 {
            return Err(Error::Config("run.batch_size must be at least 2 for batch norm".into()));
        }
        if self.augment.out_side == 0 || self.augment.out_side != self.data.spec.side {
            return Err(Error::Config(format!(
                "augment.out_side ({}) must equal data.side ({}) so probe images match the encoder",
                self.augment.out_side, self.data.spec.side
            )));
        }
        if self.run.log_every == 0 {
            return Err(Error::Config("run.log_every must be positive".into()));
        }
        Ok(())
    }

    /// The augmentation pipeline at the configured removal rung.
    pub fn pipeline(&self) -> Result<AugPipeline> {
        let names: Vec<&str> = self.augment.pipeline.iter().map(String::as_str).collect();
        let mut p = AugPipeline::from_names(&names, self.augment.out_side)?.removal_rung(self.augment.removal_rung)?;
        for step in &mut p.steps {
            if let Augmentation::RandomResizedCrop { scale, .. } = &mut step.aug {
                *scale = self.augment.crop_scale;
            }
        }
        Ok(p)
    }

    pub fn branch_config(&self) -> BranchConfig {
        BranchConfig {
            input_dim: 3 * self.augment.out_side * self.augment.out_side,
            backbone_widths: self.model.backbone_widths.clone(),
            projector_hidden: self.model.projector_hidden,
            projector_out: self.model.projector_out,
            projector_hidden_bn: self.framework.projector_hidden_bn,
            predictor: self.framework.predictor_placement != PredictorPlacement::None,
        }
    }
}
