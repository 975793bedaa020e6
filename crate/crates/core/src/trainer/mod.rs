//! Training and evaluation of MAD models, the learning-rate by weight-decay
//! sweep, and MAD scores.

pub mod optim;
pub mod sweep;

use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::primitives::model::{Batch, Model, Stats};
use crate::primitives::spec::ArchitectureSpec;
use crate::rng;
use crate::tasks::{Dataset, Split, TaskConfig, TaskKind};
use optim::{AdamW, Schedule};

pub use sweep::{mad_score, sweep, Ledger, MadScore, SweepGrid};

pub const RECORD_SCHEMA: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub warmup_frac: f64,
    /// Final learning rate as a fraction of the peak.
    pub min_lr_frac: f64,
    pub seed: u64,
    /// Sequences per forward/backward chunk; gradients are summed over chunks
    /// in a fixed order so the result does not depend on it.
    pub micro_batch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 5e-4,
            weight_decay: 0.0,
            betas: (0.9, 0.98),
            eps: 1e-8,
            batch_size: 128,
            epochs: 200,
            warmup_frac: 0.01,
            min_lr_frac: 0.1,
            seed: 0,
            micro_batch: 32,
        }
    }
}

impl TrainConfig {
    /// The reduced desk setting: 50 epochs, otherwise unchanged.
    pub fn desk() -> Self {
        TrainConfig { epochs: 50, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.micro_batch == 0 {
            return Err(Error::config("batch sizes must be positive"));
        }
        if !(self.lr >= 0.0 && self.weight_decay >= 0.0) {
            return Err(Error::config("learning rate and weight decay must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    Failed { reason: String },
}

/// Outcome of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub schema: u32,
    pub arch: String,
    pub arch_id: String,
    pub task: TaskConfig,
    pub task_hash: String,
    pub train: TrainConfig,
    pub seed: u64,
    /// Model parameter count.
    #[serde(default)]
    pub params: u64,
    /// Training tokens processed.
    #[serde(default)]
    pub tokens: u64,
    /// Mean masked training loss of every epoch.
    pub train_loss: Vec<f64>,
    pub eval_accuracy: f64,
    pub eval_loss: Option<f64>,
    pub status: RunStatus,
    pub elapsed_secs: f64,
}

impl RunRecord {
    pub fn ok(&self) -> bool {
        self.status == RunStatus::Ok
    }

    /// Resume key: architecture, task setting, learning rate, weight decay, seed.
    pub fn key(&self) -> String {
        cell_key(&self.arch_id, &self.task_hash, self.train.lr, self.train.weight_decay, self.seed)
    }
}

pub fn cell_key(arch_id: &str, task_hash: &str, lr: f64, wd: f64, seed: u64) -> String {
    format!("{arch_id}:{task_hash}:{lr:e}:{wd:e}:{seed}")
}

/// Builds the model for `arch` (with the reconstruction head when the task
/// needs it) and its seeded initial parameters.
pub fn init_model(arch: &ArchitectureSpec, task: TaskKind, seed: u64) -> Result<(Model, Vec<f64>)> {
    let model = Model::new(arch, task == TaskKind::Compression)?;
    let p = model.init(seed);
    Ok((model, p))
}

/// Summed masked statistics and, optionally, the summed gradient over `idx`.
fn batch_stats(model: &Model, p: &[f64], ds: &Dataset, idx: &[usize], micro: usize, grad: bool) -> Result<(Stats, Vec<f64>)> {
    let parts: Vec<Result<(Stats, Vec<f64>)>> = idx
        .par_chunks(micro)
        .map(|chunk| {
            let refs: Vec<_> = chunk.iter().map(|&i| &ds.samples[i]).collect();
            let batch = Batch::from_samples(&refs)?;
            let mut g = if grad { vec![0.0; p.len()] } else { Vec::new() };
            let s = model.run(p, &batch, grad.then_some(&mut g[..]))?;
            Ok((s, g))
        })
        .collect();
    let mut total = Stats::default();
    let mut gsum = if grad { vec![0.0; p.len()] } else { Vec::new() };
    for part in parts {
        let (s, g) = part?;
        total.add(s);
        gsum.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
    }
    Ok((total, gsum))
}

/// Token-level accuracy and mean cross-entropy over masked positions.
pub fn evaluate(model: &Model, p: &[f64], eval: &Dataset) -> Result<(f64, f64)> {
    let idx: Vec<usize> = (0..eval.len()).collect();
    let (s, _) = batch_stats(model, p, eval, &idx, 64, false)?;
    Ok((s.accuracy(), s.mean_loss()))
}

/// Trains `params` in place on `train` and scores the result on `eval`.
/// A non-finite loss stops the run and is reported in the record.
pub fn train_run(model: &Model, params: &mut [f64], train: &Dataset, eval: &Dataset, cfg: &TrainConfig) -> Result<RunRecord> {
    cfg.validate()?;
    if train.split != Split::Train || eval.split != Split::Eval {
        return Err(Error::config("train_run needs a train split and an eval split"));
    }
    let start = Instant::now();
    let n = train.len();
    let steps_per_epoch = n.div_ceil(cfg.batch_size);
    let schedule = Schedule::new(cfg.lr, steps_per_epoch * cfg.epochs, cfg.warmup_frac, cfg.min_lr_frac);
    let mut opt = AdamW::new(params.len(), cfg.betas, cfg.eps, cfg.weight_decay);
    let decay = model.decay_mask();
    let mut order: Vec<usize> = (0..n).collect();
    let mut losses = Vec::with_capacity(cfg.epochs);
    let mut status = RunStatus::Ok;
    let mut step = 0;
    let mut tokens = 0u64;
    'epochs: for epoch in 0..cfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut rng::stream("train/shuffle", cfg.seed, epoch as u64));
        let mut epoch_stats = Stats::default();
        for idx in order.chunks(cfg.batch_size) {
            let (s, mut g) = match batch_stats(model, params, train, idx, cfg.micro_batch, true) {
                Err(Error::NonFinite(_)) => (Stats { loss_sum: f64::NAN, ..Stats::default() }, Vec::new()),
                r => r?,
            };
            if !s.loss_sum.is_finite() || g.iter().any(|v| !v.is_finite()) {
                status = RunStatus::Failed { reason: format!("non-finite loss at epoch {epoch}, step {step}") };
                break 'epochs;
            }
            if s.count > 0 {
                let inv = 1.0 / s.count as f64;
                g.iter_mut().for_each(|v| *v *= inv);
                opt.step(params, &g, &decay, schedule.lr(step));
            }
            epoch_stats.add(s);
            step += 1;
            tokens += idx.iter().map(|&i| train.samples[i].len() as u64).sum::<u64>();
        }
        losses.push(epoch_stats.mean_loss());
    }
    let (eval_accuracy, eval_loss) = match status {
        RunStatus::Ok => {
            let (a, l) = evaluate(model, params, eval)?;
            (a, Some(l))
        }
        RunStatus::Failed { .. } => (0.0, None),
    };
    Ok(RunRecord {
        schema: RECORD_SCHEMA,
        arch: model.arch.name.clone(),
        arch_id: model.arch.id(),
        task: train.config.clone(),
        task_hash: train.config.hash(),
        train: cfg.clone(),
        seed: cfg.seed,
        params: params.len() as u64,
        tokens,
        train_loss: losses,
        eval_accuracy,
        eval_loss,
        status,
        elapsed_secs: start.elapsed().as_secs_f64(),
    })
}
