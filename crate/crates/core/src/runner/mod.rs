//! Experiment configuration, checkpoints, the training loop and the command
//! implementations behind the `airl` binary.

mod checkpoint;
mod config;
mod studies;
mod train;

pub use checkpoint::{Checkpoint, CheckpointMeta, Record, FORMAT_VERSION, MAGIC};
pub use config::{AugmentConfig, DataConfig, ExperimentConfig, ModelConfig, RunConfig};
pub use studies::{
    ablation_config, aug_ablation, collapse, collapse_configs, crossover, ladder, ladder_configs, lars_recipe,
    norm_divergence, rescue, run_study, AblationCell, CollapseRow, CrossoverCell, LadderRow, NormDivergenceRow,
    Report, StudyScale, LADDER_LABELS, LARS_LR, PARITY_KINDS, STUDIES,
};
pub use train::{
    build_model, make_dataset, read_metrics, resolve_output, steps_per_epoch, train, MetricsRow, Trained,
    OUTPUT_ROOT_ENV,
};

use std::path::{Path, PathBuf};

use crate::augment::Image;
use crate::error::{Error, Result};
use crate::eval::{linear_probe, ProbeResult, Split};
use crate::surgery::{norm_rescale, stagewise_cka, Anchor, RescaleOptions, RescaleReport};

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// `airl pretrain`: trains from a config file and returns the output directory.
pub fn cmd_pretrain(config_path: &Path) -> Result<PathBuf> {
    let cfg = ExperimentConfig::load(config_path)?;
    let out = resolve_output(&cfg.run.output_dir);
    let data = make_dataset(&cfg)?;
    train(&cfg, &data, Some(&out))?;
    Ok(out)
}

/// `airl eval linear`: linear probe of a checkpoint's student backbone. The
/// dataset comes from `data_config` when given, else from the checkpoint's own config.
pub fn cmd_eval_linear(ckpt: &Path, data_config: Option<&Path>, out: &Path) -> Result<ProbeResult> {
    let (cfg, model, state, _) = Checkpoint::load(ckpt)?.restore()?;
    let data_cfg = match data_config {
        Some(p) => ExperimentConfig::load(p)?,
        None => cfg.clone(),
    };
    let data = make_dataset(&data_cfg)?;
    let result = linear_probe(&model.student.backbone(), &state.student, &data, &cfg.probe)?;
    write_csv(
        out,
        &["checkpoint", "top1", "train_top1"],
        &[vec![ckpt.display().to_string(), result.top1.to_string(), result.train_top1.to_string()]],
    )?;
    Ok(result)
}

/// `airl surgery rescale`: NormRescale of student and teacher, either to a
/// same-architecture anchor checkpoint or by a constant factor.
pub fn cmd_surgery_rescale(
    input: &Path,
    anchor: Option<&Path>,
    factor: Option<f64>,
    output: &Path,
) -> Result<(RescaleReport, RescaleReport)> {
    let ckpt = Checkpoint::load(input)?;
    let opts = RescaleOptions::default();
    let (student, teacher, reports) = match (anchor, factor) {
        (Some(path), None) => {
            let a = Checkpoint::load(path)?;
            let (sa, ta) = (a.student(), a.teacher());
            let (s, rs) = norm_rescale(&ckpt.student(), &Anchor::Checkpoint(&sa), &opts)?;
            let (t, rt) = norm_rescale(&ckpt.teacher(), &Anchor::Checkpoint(&ta), &opts)?;
            (s, t, (rs, rt))
        }
        (None, Some(c)) => {
            let (s, rs) = norm_rescale(&ckpt.student(), &Anchor::Constant(c), &opts)?;
            let (t, rt) = norm_rescale(&ckpt.teacher(), &Anchor::Constant(c), &opts)?;
            (s, t, (rs, rt))
        }
        _ => return Err(Error::Config("give exactly one of an anchor checkpoint or a factor".into())),
    };
    for name in reports.0.unmatched.iter().chain(&reports.1.unmatched) {
        log::warn!("`{name}` has no counterpart in the anchor; left unchanged");
    }
    ckpt.with_params(&student, &teacher).save(output)?;
    Ok(reports)
}

/// One line of `analyze norms`.
#[derive(Clone, Debug, PartialEq)]
pub struct NormRow {
    pub name: String,
    pub role: String,
    pub norm: f64,
}

/// `airl analyze norms`: every trainable tensor of student and teacher (the
/// latter prefixed `teacher.`) with its L2 norm.
pub fn cmd_analyze_norms(ckpt: &Path, out: Option<&Path>) -> Result<Vec<NormRow>> {
    let c = Checkpoint::load(ckpt)?;
    let rows: Vec<NormRow> = c
        .records
        .iter()
        .filter(|r| r.role.is_trainable())
        .map(|r| NormRow {
            name: r.name.clone(),
            role: r.role.name().into(),
            norm: r.value.norm(),
        })
        .collect();
    if let Some(path) = out {
        let table: Vec<Vec<String>> = rows
            .iter()
            .map(|r| vec![r.name.clone(), r.role.clone(), r.norm.to_string()])
            .collect();
        write_csv(path, &["name", "role", "norm"], &table)?;
    }
    Ok(rows)
}

/// `airl analyze cka`: stagewise linear CKA between the student encoders of
/// two checkpoints on the validation images, each with batch-norm statistics
/// recalibrated on the training images first. The probe data comes from
/// `data_config` when given, else from the first checkpoint's config.
pub fn cmd_analyze_cka(a: &Path, b: &Path, data_config: Option<&Path>, out: Option<&Path>) -> Result<Vec<(String, f64)>> {
    let (cfg, model_a, state_a, _) = Checkpoint::load(a)?.restore()?;
    let (_, model_b, state_b, _) = Checkpoint::load(b)?.restore()?;
    let data = match data_config {
        Some(p) => make_dataset(&ExperimentConfig::load(p)?)?,
        None => make_dataset(&cfg)?,
    };
    let train_x = Image::batch_to_tensor(&data.images_of(Split::Train))?;
    let probe = Image::batch_to_tensor(&data.images_of(Split::Val))?;
    let mut pa = state_a.student;
    let mut pb = state_b.student;
    model_a.student.encoder.recalibrate_bn(&mut pa, &train_x)?;
    model_b.student.encoder.recalibrate_bn(&mut pb, &train_x)?;
    let stages = stagewise_cka(&model_a.student.encoder, &pa, &model_b.student.encoder, &pb, &probe)?;
    if let Some(path) = out {
        let table: Vec<Vec<String>> = stages.iter().map(|(s, v)| vec![s.clone(), v.to_string()]).collect();
        write_csv(path, &["stage", "cka"], &table)?;
    }
    Ok(stages)
}

/// `airl reproduce`: runs a study and writes its table to `<output root>/reproduce/<study>.csv`.
pub fn cmd_reproduce(study: &str, scale: StudyScale) -> Result<(Report, PathBuf)> {
    let report = run_study(study, scale)?;
    let path = resolve_output(Path::new("reproduce")).join(format!("{study}.csv"));
    let header: Vec<&str> = report.columns.iter().map(String::as_str).collect();
    write_csv(&path, &header, &report.rows)?;
    Ok((report, path))
}
