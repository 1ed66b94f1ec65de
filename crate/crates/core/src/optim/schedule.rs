#[derive(Clone, Debug, PartialEq)]
pub enum ScheduleKind {
    /// Multiply by `factor` at each milestone (fractions of training).
    StepDecay { milestones: Vec<f64>, factor: f64 },
    /// Cosine decay to zero over the post-warmup span.
    Cosine,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LrSchedule {
    pub kind: ScheduleKind,
    pub base_lr: f64,
    /// Linear warmup span as a fraction of training.
    pub warmup: f64,
}

impl LrSchedule {
    pub fn cosine(base_lr: f64, warmup: f64) -> Self {
        Self {
            kind: ScheduleKind::Cosine,
            base_lr,
            warmup,
        }
    }

    pub fn step_decay(base_lr: f64, milestones: Vec<f64>) -> Self {
        Self {
            kind: ScheduleKind::StepDecay {
                milestones,
                factor: 0.1,
            },
            base_lr,
            warmup: 0.0,
        }
    }
}

/// Learning rate at training progress `p ∈ [0, 1]`: linear warmup from 0,
/// then step or cosine decay.
pub fn lr_at(p: f64, sched: &LrSchedule) -> f64 {
    let p = p.clamp(0.0, 1.0);
    if sched.warmup > 0.0 && p < sched.warmup {
        return sched.base_lr * p / sched.warmup;
    }
    match &sched.kind {
        ScheduleKind::StepDecay { milestones, factor } => {
            let passed = milestones.iter().filter(|&&m| p >= m).count();
            sched.base_lr * factor.powi(passed as i32)
        }
        ScheduleKind::Cosine => {
            let span = 1.0 - sched.warmup;
            let q = if span > 0.0 { (p - sched.warmup) / span } else { 1.0 };
            sched.base_lr * ((std::f64::consts::PI * q).cos() + 1.0) / 2.0
        }
    }
}
