use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::Image;
use crate::error::{Error, Result};
use crate::eval::{collapse_metrics, linear_probe, make_synthetic_dataset, Dataset, ProbeResult, Split};
use crate::frameworks::{Siamese, SiameseState};
use crate::numerics::Rng;
use crate::optim::{lr_at, Optimizer};

use super::checkpoint::Checkpoint;
use super::config::ExperimentConfig;

// Independent random streams derived from the run seed.
const STREAM_INIT: u64 = 1;
const STREAM_ORDER: u64 = 2;
const STREAM_AUG: u64 = 3;
const STREAM_BN: u64 = 4;
const STREAM_DATA: u64 = 5;

pub const OUTPUT_ROOT_ENV: &str = "AIRL_OUTPUT_ROOT";

/// One row of `metrics.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
    pub momentum_m: f64,
    pub queue_fill: usize,
    pub feat_std: f64,
    pub eff_rank: f64,
}

pub struct Trained {
    pub config: ExperimentConfig,
    pub model: Siamese,
    pub state: SiameseState,
    pub optimizer: Optimizer,
    pub metrics: Vec<MetricsRow>,
}

impl Trained {
    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::from_state(&self.config, &self.state, &self.optimizer.state)
    }

    /// Linear probe on the student backbone.
    pub fn probe(&self, data: &Dataset) -> Result<ProbeResult> {
        linear_probe(&self.model.student.backbone(), &self.state.student, data, &self.config.probe)
    }
}

pub fn make_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    make_synthetic_dataset(&cfg.data.spec, &mut Rng::new(cfg.data.seed, STREAM_DATA))
}

pub fn steps_per_epoch(cfg: &ExperimentConfig, n_train: usize) -> usize {
    n_train / cfg.run.batch_size
}

/// Model and initial state; initialization depends only on the run seed.
pub fn build_model(cfg: &ExperimentConfig, total_steps: usize) -> Result<(Siamese, SiameseState)> {
    Siamese::init(
        cfg.framework.clone(),
        &cfg.branch_config(),
        total_steps,
        &mut Rng::new(cfg.run.seed, STREAM_INIT),
    )
}

/// `$AIRL_OUTPUT_ROOT/<dir>` for relative output directories.
pub fn resolve_output(dir: &Path) -> PathBuf {
    match std::env::var_os(OUTPUT_ROOT_ENV) {
        Some(root) if dir.is_relative() => PathBuf::from(root).join(dir),
        _ => dir.to_path_buf(),
    }
}

/// Pretrains on `data`. With `out` set, writes `metrics.csv`, `config.txt`,
/// periodic `epoch_NNNN.ckpt` files and `final.ckpt` there. A non-finite loss
/// aborts the run after dumping `diagnostic.ckpt` with the last good state.
pub fn train(cfg: &ExperimentConfig, data: &Dataset, out: Option<&Path>) -> Result<Trained> {
    cfg.validate()?;
    let train_idx = data.indices(Split::Train);
    let per_epoch = steps_per_epoch(cfg, train_idx.len());
    if cfg.run.epochs > 0 && per_epoch == 0 {
        return Err(Error::Config(format!(
            "batch size {} exceeds the {} training images",
            cfg.run.batch_size,
            train_idx.len()
        )));
    }
    let total = cfg.run.epochs * per_epoch;
    let (model, state) = build_model(cfg, total)?;
    let mut run = Trained {
        config: cfg.clone(),
        model,
        state,
        optimizer: Optimizer::new(cfg.optimizer.clone()),
        metrics: Vec::new(),
    };

    let mut csv = match out {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let cfg_path = dir.join("config.txt");
            std::fs::write(&cfg_path, cfg.to_text()).map_err(|e| Error::io(&cfg_path, e))?;
            Some(csv::Writer::from_path(dir.join("metrics.csv"))?)
        }
        None => None,
    };

    let pipeline = cfg.pipeline()?;
    let order_rng = Rng::new(cfg.run.seed, STREAM_ORDER);
    let aug_rng = Rng::new(cfg.run.seed, STREAM_AUG);
    let bn_rng = Rng::new(cfg.run.seed, STREAM_BN);
    for epoch in 0..cfg.run.epochs {
        let order = order_rng.substream(&[epoch as u64]).permutation(train_idx.len());
        let epoch_aug = aug_rng.substream(&[epoch as u64]);
        for batch in order.chunks_exact(cfg.run.batch_size) {
            let (va, vb): (Vec<Image>, Vec<Image>) = batch
                .iter()
                .map(|&i| {
                    let id = train_idx[i];
                    pipeline.two_views(&data.images[id], &epoch_aug, id as u64)
                })
                .unzip();
            let a = Image::batch_to_tensor(&va)?;
            let b = Image::batch_to_tensor(&vb)?;
            let step = run.state.step;
            let lr = lr_at(step as f64 / total as f64, &cfg.schedule);
            let mut rng = bn_rng.substream(&[step as u64]);
            let m = match run.model.training_step(&mut run.state, &mut run.optimizer, &a, &b, lr, &mut rng) {
                Ok(m) => m,
                Err(e) => {
                    if let (Some(dir), Error::NonFinite(_)) = (out, &e) {
                        log::error!("aborting at step {step}: {e}");
                        run.checkpoint().save(&dir.join("diagnostic.ckpt"))?;
                    }
                    return Err(e);
                }
            };
            if step.is_multiple_of(cfg.run.log_every) || step + 1 == total {
                let c = collapse_metrics(&m.keys);
                let row = MetricsRow {
                    step,
                    loss: m.loss,
                    lr,
                    momentum_m: m.momentum,
                    queue_fill: m.queue_len,
                    feat_std: c.per_dim_std_mean,
                    eff_rank: c.effective_rank,
                };
                log::debug!("step {step}: loss {:.5} lr {:.4} m {:.5}", row.loss, lr, row.momentum_m);
                if let Some(w) = csv.as_mut() {
                    w.serialize(&row)?;
                    w.flush().map_err(|e| Error::io("metrics.csv", e))?;
                }
                run.metrics.push(row);
            }
        }
        if let Some(dir) = out {
            if cfg.run.checkpoint_every > 0 && (epoch + 1) % cfg.run.checkpoint_every == 0 {
                run.checkpoint().save(&dir.join(format!("epoch_{:04}.ckpt", epoch + 1)))?;
            }
        }
        log::info!(
            "epoch {}/{}: loss {:.5}",
            epoch + 1,
            cfg.run.epochs,
            run.metrics.last().map_or(f64::NAN, |r| r.loss)
        );
    }
    if let Some(dir) = out {
        run.checkpoint().save(&dir.join("final.ckpt"))?;
    }
    Ok(run)
}

/// Reads back a `metrics.csv`.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut rd = csv::Reader::from_path(path)?;
    Ok(rd.deserialize().collect::<std::result::Result<_, _>>()?)
}
