//! MoCo v2, MoCo v2+, S-MoCo v2+ and BYOL as one configurable siamese trainer.

mod loss;
mod queue;

pub use loss::{byol_loss, byol_loss_pair, contrastive_loss, contrastive_loss_pair, PairLoss};
pub use queue::MemoryQueue;

use crate::encoder::{
    build_branch, split_groups, BnMode, Branch, BranchConfig, Encoder, EncoderParams, ForwardCache, Grads,
    PredictorPlacement,
};
use crate::error::{Error, Result};
use crate::numerics::{l2_normalize_rows_backward, Rng, Tensor};
use crate::optim::Optimizer;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FrameworkKind {
    MocoV2,
    MocoV2Plus,
    SMocoV2Plus,
    Byol,
}

impl FrameworkKind {
    pub const ALL: [FrameworkKind; 4] = [Self::MocoV2, Self::MocoV2Plus, Self::SMocoV2Plus, Self::Byol];

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "moco_v2" => Self::MocoV2,
            "moco_v2_plus" => Self::MocoV2Plus,
            "s_moco_v2_plus" => Self::SMocoV2Plus,
            "byol" => Self::Byol,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::MocoV2 => "moco_v2",
            Self::MocoV2Plus => "moco_v2_plus",
            Self::SMocoV2Plus => "s_moco_v2_plus",
            Self::Byol => "byol",
        }
    }

    /// Contrastive kinds use the InfoNCE loss and a memory queue.
    pub fn is_contrastive(self) -> bool {
        self != Self::Byol
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MomentumSchedule {
    Constant,
    CosineAscend,
}

impl MomentumSchedule {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "constant" => Some(Self::Constant),
            "cosine_ascend" => Some(Self::CosineAscend),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Constant => "constant",
            Self::CosineAscend => "cosine_ascend",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameworkConfig {
    pub kind: FrameworkKind,
    pub temperature: f64,
    pub queue_size: usize,
    pub symmetric_loss: bool,
    /// Sum the two directional losses instead of averaging them.
    pub symmetric_sum: bool,
    pub predictor_placement: PredictorPlacement,
    pub momentum_base: f64,
    pub momentum_schedule: MomentumSchedule,
    pub projector_hidden_bn: bool,
    pub bn_mode: BnMode,
    /// `false` ties the teacher to the student and lets gradients flow through
    /// both branches.
    pub stop_gradient: bool,
}

impl FrameworkConfig {
    pub fn preset(kind: FrameworkKind) -> Self {
        let plus = Self {
            kind,
            temperature: 0.2,
            queue_size: 256,
            symmetric_loss: true,
            symmetric_sum: false,
            predictor_placement: PredictorPlacement::StudentOnly,
            momentum_base: 0.99,
            momentum_schedule: MomentumSchedule::CosineAscend,
            projector_hidden_bn: true,
            bn_mode: BnMode::Global,
            stop_gradient: true,
        };
        match kind {
            FrameworkKind::MocoV2 => Self {
                symmetric_loss: false,
                predictor_placement: PredictorPlacement::None,
                momentum_base: 0.999,
                momentum_schedule: MomentumSchedule::Constant,
                projector_hidden_bn: false,
                bn_mode: BnMode::Shuffled { groups: 2 },
                ..plus
            },
            FrameworkKind::MocoV2Plus | FrameworkKind::Byol => plus,
            FrameworkKind::SMocoV2Plus => Self {
                predictor_placement: PredictorPlacement::Both,
                ..plus
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.temperature.is_nan() || self.temperature <= 0.0 {
            return Err(Error::Config(format!("temperature must be positive, got {}", self.temperature)));
        }
        if !(0.0..=1.0).contains(&self.momentum_base) {
            return Err(Error::Config(format!("momentum base must lie in [0, 1], got {}", self.momentum_base)));
        }
        if let BnMode::Shuffled { groups: 0 } = self.bn_mode {
            return Err(Error::Config("shuffled BN needs at least one group".into()));
        }
        Ok(())
    }

    pub fn teacher_has_predictor(&self) -> bool {
        self.predictor_placement == PredictorPlacement::Both
    }
}

/// EMA coefficient at step `t` of `total`.
pub fn momentum_at(t: usize, total: usize, m0: f64, schedule: MomentumSchedule) -> Result<f64> {
    if total == 0 {
        return Err(Error::Config("momentum schedule needs at least one step".into()));
    }
    if t > total {
        return Err(Error::Config(format!("step {t} is past the schedule end {total}")));
    }
    Ok(match schedule {
        MomentumSchedule::Constant => m0,
        MomentumSchedule::CosineAscend => {
            let c = (std::f64::consts::PI * t as f64 / total as f64).cos();
            1.0 - (1.0 - m0) * (c + 1.0) / 2.0
        }
    })
}

/// `teacher ← m·teacher + (1−m)·student` over the teacher's trainable parameters.
pub fn ema_update(teacher: &mut EncoderParams, student: &EncoderParams, m: f64) -> Result<()> {
    for (name, t) in teacher.iter_mut() {
        if !t.role.is_trainable() {
            continue;
        }
        let s = student.tensor(name)?;
        if s.shape() != t.value.shape() {
            return Err(Error::Dimension {
                op: "ema update",
                left: t.value.shape().to_vec(),
                right: s.shape().to_vec(),
            });
        }
        for (tv, &sv) in t.value.data_mut().iter_mut().zip(s.data()) {
            *tv = m * *tv + (1.0 - m) * sv;
        }
    }
    Ok(())
}

/// The fixed architecture of a siamese pair.
#[derive(Clone, Debug)]
pub struct Siamese {
    pub config: FrameworkConfig,
    pub student: Branch,
    pub teacher: Encoder,
}

/// Everything that changes during training.
#[derive(Clone, Debug, PartialEq)]
pub struct SiameseState {
    pub student: EncoderParams,
    pub teacher: EncoderParams,
    pub queue: MemoryQueue,
    pub step: usize,
    pub total_steps: usize,
}

/// Batch-norm row groups for every forward of one step, one entry per loss direction.
#[derive(Clone, Debug, PartialEq)]
pub struct BnPlan {
    pub student: Vec<Vec<Vec<usize>>>,
    pub teacher: Vec<Vec<Vec<usize>>>,
}

/// Loss, student gradients and detached keys of one step.
#[derive(Clone, Debug)]
pub struct StepLoss {
    pub loss: f64,
    pub directional: Vec<f64>,
    pub grads: Grads,
    /// Normalized teacher features of every direction, stacked.
    pub keys: Tensor,
    student_caches: Vec<ForwardCache>,
    teacher_caches: Vec<ForwardCache>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepMetrics {
    pub loss: f64,
    pub directional: Vec<f64>,
    pub momentum: f64,
    pub queue_len: usize,
    /// This step's normalized teacher features, stacked over directions.
    pub keys: Tensor,
}

impl Siamese {
    /// Builds the architecture from `arch` (its head flags are overridden by the
    /// framework config) and initializes the teacher as a copy of the student.
    pub fn init(config: FrameworkConfig, arch: &BranchConfig, total_steps: usize, rng: &mut Rng) -> Result<(Self, SiameseState)> {
        config.validate()?;
        let arch = BranchConfig {
            projector_hidden_bn: config.projector_hidden_bn,
            predictor: config.predictor_placement != PredictorPlacement::None,
            ..arch.clone()
        };
        let (student, params) = build_branch(&arch, rng)?;
        let teacher = if config.teacher_has_predictor() {
            student.encoder.clone()
        } else {
            student.without_predictor()
        };
        let model = Self { config, student, teacher };
        let teacher_params = model.teacher_view(&params);
        let capacity = if model.config.kind.is_contrastive() {
            model.config.queue_size
        } else {
            0
        };
        let queue = MemoryQueue::new(capacity, model.teacher.output_dim());
        let state = SiameseState {
            student: params,
            teacher: teacher_params,
            queue,
            step: 0,
            total_steps,
        };
        Ok((model, state))
    }

    /// The student parameters the teacher mirrors.
    pub fn teacher_view(&self, student: &EncoderParams) -> EncoderParams {
        if self.config.teacher_has_predictor() {
            student.clone()
        } else {
            student.subset(&["backbone.", "projector."])
        }
    }

    pub fn check_state(&self, state: &SiameseState) -> Result<()> {
        self.student.encoder.check_params(&state.student)?;
        self.teacher.check_params(&state.teacher)?;
        if self.config.kind.is_contrastive() && state.queue.capacity() > 0 && state.queue.dim() != self.teacher.output_dim() {
            return Err(Error::Dimension {
                op: "queue feature width",
                left: vec![state.queue.dim()],
                right: vec![self.teacher.output_dim()],
            });
        }
        Ok(())
    }

    pub fn directions(&self) -> usize {
        if self.config.symmetric_loss {
            2
        } else {
            1
        }
    }

    /// Draws batch-norm groups for a batch of `n` rows. The student always
    /// normalizes globally; the teacher follows the configured mode.
    pub fn draw_bn_plan(&self, n: usize, rng: &mut Rng) -> BnPlan {
        let identity: Vec<usize> = (0..n).collect();
        let mut plan = BnPlan {
            student: Vec::new(),
            teacher: Vec::new(),
        };
        for _ in 0..self.directions() {
            plan.student.push(vec![identity.clone()]);
            plan.teacher.push(match self.config.bn_mode {
                BnMode::Global => vec![identity.clone()],
                BnMode::Shuffled { groups } => split_groups(&rng.permutation(n), groups),
            });
        }
        plan
    }

    /// Full loss of one step and its exact gradient w.r.t. the student parameters.
    /// With stop-gradient the teacher is a constant; without it the teacher runs
    /// on the student parameters and contributes gradient.
    pub fn step_loss(
        &self,
        student: &EncoderParams,
        teacher: &EncoderParams,
        negatives: &Tensor,
        a: &Tensor,
        b: &Tensor,
        plan: &BnPlan,
    ) -> Result<StepLoss> {
        if a.shape() != b.shape() {
            return Err(Error::Dimension {
                op: "view pair",
                left: a.shape().to_vec(),
                right: b.shape().to_vec(),
            });
        }
        let dirs = self.directions();
        if plan.student.len() != dirs || plan.teacher.len() != dirs {
            return Err(Error::Config("batch-norm plan does not match loss directions".into()));
        }
        let weight = if dirs == 2 && !self.config.symmetric_sum {
            0.5
        } else {
            1.0
        };
        let teacher_params = if self.config.stop_gradient { teacher } else { student };
        let mut grads = Grads::zeros_like(student);
        let mut out = StepLoss {
            loss: 0.0,
            directional: Vec::with_capacity(dirs),
            grads: Grads::new(),
            keys: Tensor::zeros(&[0, self.teacher.output_dim()]),
            student_caches: Vec::with_capacity(dirs),
            teacher_caches: Vec::with_capacity(dirs),
        };
        let mut keys = Vec::with_capacity(dirs);
        for d in 0..dirs {
            let (xs, xt) = if d == 0 { (a, b) } else { (b, a) };
            let (ys, cs) = self.student.encoder.forward_grouped(student, xs, Some(&plan.student[d]))?;
            let (yt, ct) = self.teacher.forward_grouped(teacher_params, xt, Some(&plan.teacher[d]))?;
            let (q, q_norms) = ys.l2_normalize_rows_with_norms()?;
            let (k, k_norms) = yt.l2_normalize_rows_with_norms()?;
            let pair = if self.config.kind.is_contrastive() {
                contrastive_loss_pair(&q, &k, negatives, self.config.temperature)?
            } else {
                byol_loss_pair(&q, &k)?
            };
            out.loss += weight * pair.loss;
            out.directional.push(pair.loss);

            let gq = l2_normalize_rows_backward(&q, &q_norms, &pair.grad_q).scale(weight);
            let g = self.student.encoder.param_grads(student, &cs, &gq)?;
            grads.add_scaled(1.0, &g)?;
            if !self.config.stop_gradient {
                let gk = l2_normalize_rows_backward(&k, &k_norms, &pair.grad_k).scale(weight);
                let g = self.teacher.param_grads(student, &ct, &gk)?;
                grads.add_scaled(1.0, &g)?;
            }
            keys.push(k);
            out.student_caches.push(cs);
            out.teacher_caches.push(ct);
        }
        out.keys = Tensor::vstack(&keys.iter().collect::<Vec<_>>())?;
        out.grads = grads;
        Ok(out)
    }

    /// One optimization step on the view pair `(a, b)`: loss and backprop, optimizer
    /// update, running-statistics update, teacher EMA, then enqueue of this step's keys.
    pub fn training_step(
        &self,
        state: &mut SiameseState,
        opt: &mut Optimizer,
        a: &Tensor,
        b: &Tensor,
        lr: f64,
        rng: &mut Rng,
    ) -> Result<StepMetrics> {
        if a.rows() < 2 {
            return Err(Error::BatchTooSmall(a.rows()));
        }
        let m = momentum_at(
            state.step,
            state.total_steps,
            self.config.momentum_base,
            self.config.momentum_schedule,
        )?;
        let plan = self.draw_bn_plan(a.rows(), rng);
        let negatives = state.queue.contents();
        let out = self.step_loss(&state.student, &state.teacher, &negatives, a, b, &plan)?;
        if !out.loss.is_finite() {
            return Err(Error::NonFinite(format!("loss at step {}", state.step)));
        }
        opt.step(&mut state.student, &out.grads, lr)?;
        for c in &out.student_caches {
            self.student.encoder.absorb_batch_stats(&mut state.student, c)?;
        }
        if self.config.stop_gradient {
            for c in &out.teacher_caches {
                self.teacher.absorb_batch_stats(&mut state.teacher, c)?;
            }
            ema_update(&mut state.teacher, &state.student, m)?;
        } else {
            state.teacher = self.teacher_view(&state.student);
        }
        if self.config.kind.is_contrastive() && state.queue.capacity() > 0 {
            state.queue.enqueue(&out.keys)?;
        }
        state.step += 1;
        Ok(StepMetrics {
            loss: out.loss,
            directional: out.directional,
            momentum: m,
            queue_len: state.queue.len(),
            keys: out.keys,
        })
    }

    /// Eval-mode teacher embeddings (the collapse signal).
    pub fn teacher_embed(&self, state: &SiameseState, x: &Tensor) -> Result<Tensor> {
        let (y, _) = self.teacher.forward_grouped(&state.teacher, x, None)?;
        Ok(y)
    }
}
