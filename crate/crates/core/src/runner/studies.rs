//! Pre-canned experiment matrices behind `airl reproduce`.

use std::fmt::Write as _;

use crate::augment::{Image, REMOVAL_ORDER};
use crate::encoder::{BnMode, PredictorPlacement};
use crate::error::{Error, Result};
use crate::eval::{collapse_metrics, isotropic_reference, Dataset, Split};
use crate::frameworks::{FrameworkKind, MomentumSchedule};
use crate::optim::{summed_norm_gain, LarsConfig, LrSchedule, OptimizerConfig};
use crate::surgery::{norm_rescale, Anchor, RescaleOptions};

use super::config::ExperimentConfig;
use super::train::{make_dataset, train, Trained};

pub const STUDIES: &[&str] = &["ladder", "crossover", "aug-ablation", "collapse", "norm-divergence"];

/// Frameworks compared under an aligned configuration.
pub const PARITY_KINDS: [FrameworkKind; 3] = [FrameworkKind::MocoV2Plus, FrameworkKind::SMocoV2Plus, FrameworkKind::Byol];

/// Run length and data size of the studies.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StudyScale {
    /// The scale the reported comparisons are made at (minutes per study).
    Desk,
    /// A few steps on a handful of images; checks the plumbing only.
    Smoke,
}

impl StudyScale {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "desk" => Some(Self::Desk),
            "smoke" => Some(Self::Smoke),
            _ => None,
        }
    }

    /// Shared starting point of every study run: MoCo v2+ with SGD.
    pub fn base(self) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.model.backbone_widths = vec![64, 64];
        // crops below half the area of a 16-pixel image no longer hold a full grating period
        cfg.augment.crop_scale = (0.5, 1.0);
        cfg.data.spec.noise = 0.5;
        match self {
            Self::Desk => {
                cfg.data.spec.train_per_class = 128;
                cfg.data.spec.val_per_class = 512;
                cfg.run.epochs = 50;
            }
            Self::Smoke => {
                cfg.data.spec.train_per_class = 4;
                cfg.data.spec.val_per_class = 2;
                cfg.run.epochs = 2;
                cfg.run.batch_size = 16;
                cfg.probe.epochs = 5;
            }
        }
        cfg
    }

    pub fn seeds(self) -> Vec<u64> {
        match self {
            Self::Desk => vec![0, 1, 2],
            Self::Smoke => vec![0],
        }
    }
}

/// LARS recipe used wherever LARS is compared with SGD.
pub fn lars_recipe(cfg: &mut ExperimentConfig) {
    cfg.optimizer = OptimizerConfig::Lars(LarsConfig::default());
    cfg.schedule = LrSchedule::cosine(LARS_LR, 0.1);
}

pub const LARS_LR: f64 = 8.0;

/// A comparison table with one row per configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub study: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Report {
    fn new(study: &str, columns: &[&str]) -> Self {
        Self {
            study: study.into(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    /// Fixed-width text rendering.
    pub fn render(&self) -> String {
        let widths: Vec<usize> = (0..self.columns.len())
            .map(|j| {
                self.rows
                    .iter()
                    .map(|r| r[j].len())
                    .chain([self.columns[j].len()])
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let mut out = format!("== {} ==\n", self.study);
        for row in std::iter::once(&self.columns).chain(&self.rows) {
            let cells: Vec<String> = row.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
            let _ = writeln!(out, "{}", cells.join("  ").trim_end());
        }
        out
    }
}

fn pct(x: f64) -> String {
    format!("{:.2}", 100.0 * x)
}

fn diff_text(cfg: &ExperimentConfig, base: &ExperimentConfig) -> String {
    let d = cfg.diff(base);
    if d.is_empty() {
        "(base)".into()
    } else {
        d.join("; ")
    }
}

fn val_images(data: &Dataset) -> Result<crate::numerics::Tensor> {
    Image::batch_to_tensor(&data.images_of(Split::Val))
}

/// Runs a named study and returns its table.
pub fn run_study(name: &str, scale: StudyScale) -> Result<Report> {
    match name {
        "ladder" => ladder_report(scale),
        "crossover" => crossover_report(scale),
        "aug-ablation" => aug_ablation_report(scale),
        "collapse" => collapse_report(scale),
        "norm-divergence" => norm_divergence_report(scale),
        _ => Err(Error::UnknownStudy {
            name: name.into(),
            available: STUDIES.join(", "),
        }),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LadderRow {
    pub label: &'static str,
    pub config: ExperimentConfig,
    pub top1: f64,
}

pub const LADDER_LABELS: [&str; 6] = [
    "MoCo v2",
    "+SyncBN",
    "+Asymmetric Predictor",
    "+Momentum Ascending",
    "+Symmetric Loss (MoCo v2+)",
    "+More Complex Augmentations",
];

/// The cumulative configurations from MoCo v2 to MoCo v2+ with solarization.
pub fn ladder_configs(scale: StudyScale) -> Vec<(&'static str, ExperimentConfig)> {
    let mut cfg = scale.base();
    cfg.framework = crate::frameworks::FrameworkConfig::preset(FrameworkKind::MocoV2);
    cfg.augment.pipeline.retain(|n| n != "solarize");
    let mut out = vec![(LADDER_LABELS[0], cfg.clone())];
    cfg.framework.bn_mode = BnMode::Global;
    cfg.framework.projector_hidden_bn = true;
    out.push((LADDER_LABELS[1], cfg.clone()));
    cfg.framework.predictor_placement = PredictorPlacement::StudentOnly;
    out.push((LADDER_LABELS[2], cfg.clone()));
    cfg.framework.momentum_base = 0.99;
    cfg.framework.momentum_schedule = MomentumSchedule::CosineAscend;
    out.push((LADDER_LABELS[3], cfg.clone()));
    cfg.framework.symmetric_loss = true;
    cfg.framework.kind = FrameworkKind::MocoV2Plus;
    out.push((LADDER_LABELS[4], cfg.clone()));
    cfg.augment.pipeline = scale.base().augment.pipeline;
    out.push((LADDER_LABELS[5], cfg));
    out
}

pub fn ladder(scale: StudyScale) -> Result<Vec<LadderRow>> {
    let configs = ladder_configs(scale);
    let data = make_dataset(&configs[0].1)?;
    configs
        .into_iter()
        .map(|(label, config)| {
            let top1 = train(&config, &data, None)?.probe(&data)?.top1;
            log::info!("ladder {label}: {:.2}", 100.0 * top1);
            Ok(LadderRow { label, config, top1 })
        })
        .collect()
}

fn ladder_report(scale: StudyScale) -> Result<Report> {
    let base = scale.base();
    let rows = ladder(scale)?;
    let mut r = Report::new("ladder", &["step", "config_diff", "top1"]);
    for (i, row) in rows.iter().enumerate() {
        // first row against the study base, later rows against their predecessor
        let prev = if i == 0 { &base } else { &rows[i - 1].config };
        r.rows.push(vec![row.label.into(), diff_text(&row.config, prev), pct(row.top1)]);
    }
    Ok(r)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CrossoverCell {
    pub framework: FrameworkKind,
    pub optimizer: &'static str,
    pub top1: f64,
    /// LARS cells only: accuracy after NormRescale to the SGD checkpoint.
    pub rescued_top1: Option<f64>,
    pub summed_gain: f64,
}

fn crossover_config(scale: StudyScale, kind: FrameworkKind, lars: bool) -> ExperimentConfig {
    let mut cfg = scale.base();
    cfg.framework = crate::frameworks::FrameworkConfig::preset(kind);
    if lars {
        lars_recipe(&mut cfg);
    }
    cfg
}

/// Rescales every trainable student tensor of `run` to the norms of `anchor`'s student.
pub fn rescue(run: &Trained, anchor: &Trained) -> Result<Trained> {
    let (student, _) = norm_rescale(
        &run.state.student,
        &Anchor::Checkpoint(&anchor.state.student),
        &RescaleOptions::default(),
    )?;
    let (teacher, _) = norm_rescale(
        &run.state.teacher,
        &Anchor::Checkpoint(&anchor.state.teacher),
        &RescaleOptions::default(),
    )?;
    let mut state = run.state.clone();
    state.student = student;
    state.teacher = teacher;
    Ok(Trained {
        config: run.config.clone(),
        model: run.model.clone(),
        state,
        optimizer: run.optimizer.clone(),
        metrics: Vec::new(),
    })
}

/// {MoCo v2+, BYOL} × {SGD, LARS}, each probed with the SGD-tuned linear
/// recipe; LARS checkpoints are probed again after NormRescale.
pub fn crossover(scale: StudyScale) -> Result<Vec<CrossoverCell>> {
    let data = make_dataset(&scale.base())?;
    let mut cells = Vec::new();
    for kind in [FrameworkKind::MocoV2Plus, FrameworkKind::Byol] {
        let sgd = train(&crossover_config(scale, kind, false), &data, None)?;
        let lars = train(&crossover_config(scale, kind, true), &data, None)?;
        let sgd_top1 = sgd.probe(&data)?.top1;
        let lars_top1 = lars.probe(&data)?.top1;
        let rescued = rescue(&lars, &sgd)?.probe(&data)?.top1;
        log::info!(
            "crossover {}: sgd {:.2} lars {:.2} rescued {:.2}",
            kind.name(),
            100.0 * sgd_top1,
            100.0 * lars_top1,
            100.0 * rescued
        );
        cells.push(CrossoverCell {
            framework: kind,
            optimizer: "sgd",
            top1: sgd_top1,
            rescued_top1: None,
            summed_gain: summed_norm_gain(&sgd.state.student),
        });
        cells.push(CrossoverCell {
            framework: kind,
            optimizer: "lars",
            top1: lars_top1,
            rescued_top1: Some(rescued),
            summed_gain: summed_norm_gain(&lars.state.student),
        });
    }
    Ok(cells)
}

fn crossover_report(scale: StudyScale) -> Result<Report> {
    let base = scale.base();
    let cells = crossover(scale)?;
    let mut r = Report::new(
        "crossover",
        &["framework", "optimizer", "config_diff", "top1", "normrescale_top1", "summed_norm_gain"],
    );
    for c in &cells {
        let cfg = crossover_config(scale, c.framework, c.optimizer == "lars");
        r.rows.push(vec![
            c.framework.name().into(),
            c.optimizer.into(),
            diff_text(&cfg, &base),
            pct(c.top1),
            c.rescued_top1.map_or_else(|| "-".into(), pct),
            format!("{:.4}", c.summed_gain),
        ]);
    }
    Ok(r)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationCell {
    pub framework: FrameworkKind,
    pub rung: usize,
    pub top1: Vec<f64>,
}

impl AblationCell {
    pub fn mean(&self) -> f64 {
        self.top1.iter().sum::<f64>() / self.top1.len() as f64
    }
}

pub fn ablation_config(scale: StudyScale, kind: FrameworkKind, rung: usize, seed: u64) -> ExperimentConfig {
    let mut cfg = scale.base();
    cfg.framework = crate::frameworks::FrameworkConfig::preset(kind);
    cfg.augment.removal_rung = rung;
    cfg.run.seed = seed;
    cfg
}

/// Every parity framework at every rung of the removal ladder, over the scale's seeds.
/// Rung 0 is the aligned configuration used for the parity comparison.
pub fn aug_ablation(scale: StudyScale, kinds: &[FrameworkKind], rungs: &[usize]) -> Result<Vec<AblationCell>> {
    let data = make_dataset(&scale.base())?;
    let mut cells = Vec::new();
    for &kind in kinds {
        for &rung in rungs {
            let top1 = scale
                .seeds()
                .into_iter()
                .map(|seed| train(&ablation_config(scale, kind, rung, seed), &data, None)?.probe(&data).map(|p| p.top1))
                .collect::<Result<Vec<_>>>()?;
            let cell = AblationCell { framework: kind, rung, top1 };
            log::info!("aug-ablation {} rung {rung}: {:.2}", kind.name(), 100.0 * cell.mean());
            cells.push(cell);
        }
    }
    Ok(cells)
}

fn rung_label(rung: usize) -> String {
    if rung == 0 {
        "full".into()
    } else {
        format!("-{}", REMOVAL_ORDER[..rung].join(" -"))
    }
}

fn aug_ablation_report(scale: StudyScale) -> Result<Report> {
    let rungs: Vec<usize> = (0..=REMOVAL_ORDER.len()).collect();
    let cells = aug_ablation(scale, &PARITY_KINDS, &rungs)?;
    let mut r = Report::new("aug-ablation", &["framework", "rung", "removed", "config_diff", "mean_top1", "per_seed_top1"]);
    for c in &cells {
        let cfg = ablation_config(scale, c.framework, c.rung, 0);
        let base = ablation_config(scale, c.framework, 0, 0);
        r.rows.push(vec![
            c.framework.name().into(),
            c.rung.to_string(),
            rung_label(c.rung),
            diff_text(&cfg, &base),
            pct(c.mean()),
            c.top1.iter().map(|&t| pct(t)).collect::<Vec<_>>().join(" "),
        ]);
    }
    Ok(r)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CollapseRow {
    pub label: &'static str,
    pub config: ExperimentConfig,
    pub per_dim_std_mean: f64,
    /// `per_dim_std_mean` over the isotropic reference `1/√d`.
    pub reference_ratio: f64,
    pub effective_rank: f64,
    /// Smallest per-dimension std over the logged training steps, relative to the reference.
    pub min_logged_ratio: f64,
}

pub fn collapse_configs(scale: StudyScale) -> Vec<(&'static str, ExperimentConfig)> {
    let mut byol = scale.base();
    byol.framework = crate::frameworks::FrameworkConfig::preset(FrameworkKind::Byol);
    let mut ablation = byol.clone();
    ablation.framework.predictor_placement = PredictorPlacement::None;
    ablation.framework.stop_gradient = false;
    let moco_global = scale.base();
    let mut moco_shuffled = moco_global.clone();
    moco_shuffled.framework.bn_mode = BnMode::Shuffled { groups: 2 };
    vec![
        ("BYOL", byol),
        ("BYOL -predictor -stop-gradient", ablation),
        ("MoCo v2+ (global BN)", moco_global),
        ("MoCo v2+ (shuffled BN)", moco_shuffled),
    ]
}

/// Collapse diagnostics of the teacher's eval-mode embeddings of the validation images.
pub fn collapse(scale: StudyScale) -> Result<Vec<CollapseRow>> {
    let configs = collapse_configs(scale);
    let data = make_dataset(&configs[0].1)?;
    let x = val_images(&data)?;
    configs
        .into_iter()
        .map(|(label, config)| {
            let run = train(&config, &data, None)?;
            let z = run.model.teacher_embed(&run.state, &x)?;
            let m = collapse_metrics(&z);
            let reference = isotropic_reference(z.cols());
            let reference_ratio = m.per_dim_std_mean / reference;
            let min_logged_ratio = run.metrics.iter().map(|r| r.feat_std / reference).fold(f64::INFINITY, f64::min);
            log::info!("collapse {label}: std/ref {reference_ratio:.3}, min during training {min_logged_ratio:.3}");
            Ok(CollapseRow {
                label,
                config,
                per_dim_std_mean: m.per_dim_std_mean,
                reference_ratio,
                effective_rank: m.effective_rank,
                min_logged_ratio,
            })
        })
        .collect()
}

fn collapse_report(scale: StudyScale) -> Result<Report> {
    let base = scale.base();
    let rows = collapse(scale)?;
    let mut r = Report::new(
        "collapse",
        &["config", "config_diff", "per_dim_std_mean", "ratio_to_isotropic", "effective_rank", "min_training_ratio"],
    );
    for row in &rows {
        r.rows.push(vec![
            row.label.into(),
            diff_text(&row.config, &base),
            format!("{:.5}", row.per_dim_std_mean),
            format!("{:.4}", row.reference_ratio),
            format!("{:.3}", row.effective_rank),
            format!("{:.4}", row.min_logged_ratio),
        ]);
    }
    Ok(r)
}

#[derive(Clone, Debug, PartialEq)]
pub struct NormDivergenceRow {
    pub optimizer: &'static str,
    pub config: ExperimentConfig,
    pub init_gain: f64,
    pub summed_gain: f64,
    pub gains: Vec<(String, f64)>,
}

/// MoCo v2+ trained from the same initialization on the same data order with
/// SGD (weight decay everywhere) and with LARS (no decay on norms and biases).
pub fn norm_divergence(scale: StudyScale) -> Result<Vec<NormDivergenceRow>> {
    let base = scale.base();
    let data = make_dataset(&base)?;
    let (_, init) = super::train::build_model(&base, 1)?;
    let init_gain = summed_norm_gain(&init.student);
    let mut lars = base.clone();
    lars_recipe(&mut lars);
    [("sgd", base), ("lars", lars)]
        .into_iter()
        .map(|(optimizer, config)| {
            let run = train(&config, &data, None)?;
            let gains = run
                .state
                .student
                .iter()
                .filter(|(_, p)| p.role == crate::encoder::Role::NormGain)
                .map(|(n, p)| (n.to_string(), p.value.norm()))
                .collect();
            Ok(NormDivergenceRow {
                optimizer,
                config,
                init_gain,
                summed_gain: summed_norm_gain(&run.state.student),
                gains,
            })
        })
        .collect()
}

fn norm_divergence_report(scale: StudyScale) -> Result<Report> {
    let base = scale.base();
    let rows = norm_divergence(scale)?;
    let mut columns = vec!["optimizer".to_string(), "config_diff".into(), "summed_norm_gain".into(), "init_summed_norm_gain".into()];
    columns.extend(rows[0].gains.iter().map(|(n, _)| n.clone()));
    let mut r = Report {
        study: "norm-divergence".into(),
        columns,
        rows: Vec::new(),
    };
    for row in &rows {
        let mut cells = vec![
            row.optimizer.to_string(),
            diff_text(&row.config, &base),
            format!("{:.4}", row.summed_gain),
            format!("{:.4}", row.init_gain),
        ];
        cells.extend(row.gains.iter().map(|(_, g)| format!("{g:.4}")));
        r.rows.push(cells);
    }
    Ok(r)
}
