//! Staged training: plans, the epoch loop, JSON-lines logs and checkpoints.

mod checkpoint;
mod log;
mod plan;

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use thiserror::Error;

pub use checkpoint::{
    checkpoint_hash, decode_checkpoint, encode_checkpoint, load_checkpoint, load_checkpoint_for, save_checkpoint,
    Checkpoint, CheckpointError, CheckpointHeader, TensorInfo, FORMAT_VERSION, MAGIC,
};
pub use log::{EpochRecord, LogEntry, StageRecord, TrainingLog};
pub use plan::{baseline_plan, transfer_plan, DatasetKind, Initialization, StageConfig, TrainingPlan};

use crate::dataset::Sample;
use crate::model::{standard_normal, Batch, ModelError, Params};
use crate::optim::Adam;
use crate::seed::derive_rng;
use crate::types::NUM_TYPES;

#[derive(Debug, Error)]
pub enum TrainingError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("no {0} samples to train on")]
    EmptyData(&'static str),
    #[error("image side {actual} does not match the model ({expected})")]
    ImageSize { expected: usize, actual: usize },
    #[error(
        "loss diverged in stage {stage}, epoch {epoch}, step {step}; last good checkpoint: {}",
        last_good.as_deref().unwrap_or("none")
    )]
    Diverged {
        stage: usize,
        epoch: u32,
        step: usize,
        last_good: Option<String>,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn stage_label(stage: usize) -> [u8; 8] {
    (stage as u64).to_le_bytes()
}

/// Sample order for one epoch, seeded by (seed, stage, epoch).
pub fn epoch_order(n: usize, seed: u64, stage: usize, epoch: u32) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = derive_rng(seed, &[b"shuffle", &stage_label(stage), &epoch.to_le_bytes()]);
    order.shuffle(&mut rng);
    order
}

/// Runs `config.epochs` epochs of `ceil(N / batch)` Adam steps each over a
/// fresh shuffle. Returns one record per epoch (sample-weighted mean loss).
/// On divergence the parameters are left as they were at the failing step.
pub fn train_stage(
    params: &mut Params<f32>,
    data: &[Sample],
    config: &StageConfig,
    stage_index: usize,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<Vec<EpochRecord>, TrainingError> {
    config.validate()?;
    if data.is_empty() {
        return Err(TrainingError::EmptyData(config.dataset.name()));
    }
    let side = params.config.image_side;
    if let Some(bad) = data.iter().find(|s| s.image.side() != side) {
        return Err(TrainingError::ImageSize {
            expected: side,
            actual: bad.image.side(),
        });
    }
    let arch = params.config.clone();
    let mut adam = Adam::new(&arch, config.optimizer)?;
    let mut records = Vec::with_capacity(config.epochs as usize);
    let image_len = arch.image_len();

    for epoch in 1..=config.epochs {
        let order = epoch_order(data.len(), config.seed, stage_index, epoch);
        let mut sums = [0.0f64; 4];
        let mut steps = 0;
        for (step, chunk) in order.chunks(config.batch_size).enumerate() {
            let mut images = Vec::with_capacity(chunk.len() * image_len);
            let mut types = Vec::with_capacity(chunk.len() * NUM_TYPES);
            for &i in chunk {
                images.extend_from_slice(data[i].image.data());
                types.extend_from_slice(data[i].type_vector.values());
            }
            let batch = Batch::new(&arch, &images, &types)?;
            let mut rng = derive_rng(
                config.seed,
                &[b"noise", &stage_label(stage_index), &epoch.to_le_bytes(), &(step as u64).to_le_bytes()],
            );
            let noise: Vec<f32> = standard_normal(&mut rng, chunk.len() * arch.latent_dim);
            let diverged = || TrainingError::Diverged {
                stage: stage_index,
                epoch,
                step,
                last_good: None,
            };
            let pass = match params.forward(&batch, &noise) {
                Ok(pass) => pass,
                Err(ModelError::NonFinite(_)) => return Err(diverged()),
                Err(e) => return Err(e.into()),
            };
            let loss = params.loss(&batch, &pass);
            if !loss.total.is_finite() {
                return Err(diverged());
            }
            let grads = params.backward(&batch, &pass);
            adam.update(params, &grads, config.learning_rate);
            let w = chunk.len() as f64;
            sums[0] += loss.total * w;
            sums[1] += loss.reconstruction * w;
            sums[2] += loss.type_reconstruction * w;
            sums[3] += loss.kl * w;
            steps += 1;
        }
        let n = data.len() as f64;
        let record = EpochRecord {
            stage: stage_index,
            dataset: config.dataset,
            epoch,
            steps,
            mean_loss: sums[0] / n,
            reconstruction: sums[1] / n,
            type_reconstruction: sums[2] / n,
            kl: sums[3] / n,
        };
        on_epoch(&record);
        records.push(record);
    }
    Ok(records)
}

/// Training data for every dataset a plan may reference.
pub struct PlanData<'a> {
    pub faces: &'a [Sample],
    pub pokemon: &'a [Sample],
}

pub struct PlanOutcome {
    pub params: Params<f32>,
    pub log: TrainingLog,
    pub checkpoints: Vec<PathBuf>,
}

/// Runs every stage in order, checkpointing after each into `out_dir` and
/// appending to `out_dir/training_log.jsonl`.
pub fn run_plan(
    plan: &TrainingPlan,
    mut params: Params<f32>,
    data: &PlanData<'_>,
    out_dir: &Path,
    on_event: &mut dyn FnMut(&LogEntry),
) -> Result<PlanOutcome, TrainingError> {
    plan.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|source| TrainingError::Io {
        path: out_dir.display().to_string(),
        source,
    })?;
    let log_path = out_dir.join("training_log.jsonl");
    let mut log = TrainingLog::create(&log_path)?;
    let mut checkpoints: Vec<PathBuf> = Vec::new();

    let header = LogEntry::Run {
        plan: plan.name.clone(),
        initialization: plan.initialization,
        seeds: plan.stages.iter().map(|s| s.seed).collect(),
        stages: plan.stages.len(),
    };
    log.append(&header)?;
    on_event(&header);

    for (index, stage) in plan.stages.iter().enumerate() {
        let samples = match stage.dataset {
            DatasetKind::Faces => data.faces,
            DatasetKind::Pokemon => data.pokemon,
        };
        let started = Instant::now();
        let mut pending = Vec::new();
        let result = train_stage(&mut params, samples, stage, index, &mut |r| pending.push(r.clone()));
        for r in pending {
            let entry = LogEntry::Epoch(r);
            log.append(&entry)?;
            on_event(&entry);
        }
        if let Err(mut e) = result {
            if let TrainingError::Diverged { last_good, .. } = &mut e {
                *last_good = checkpoints.last().map(|p| p.display().to_string());
            }
            return Err(e);
        }
        let path = out_dir.join(format!("stage{:02}_{}.ckpt", index + 1, stage.dataset.name()));
        let provenance = format!(
            "{} plan, stage {}/{}: {} x{} epochs, lr {}, batch {}, seed {}",
            plan.name,
            index + 1,
            plan.stages.len(),
            stage.dataset.name(),
            stage.epochs,
            stage.learning_rate,
            stage.batch_size,
            stage.seed
        );
        save_checkpoint(&params, &provenance, &path)?;
        let entry = LogEntry::Stage(StageRecord {
            stage: index,
            dataset: stage.dataset,
            epochs: stage.epochs,
            wall_seconds: started.elapsed().as_secs_f64(),
            checkpoint: path.display().to_string(),
        });
        log.append(&entry)?;
        on_event(&entry);
        checkpoints.push(path);
    }
    Ok(PlanOutcome {
        params,
        log: TrainingLog::read(&log_path)?,
        checkpoints,
    })
}
