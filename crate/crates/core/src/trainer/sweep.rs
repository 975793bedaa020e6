//! Learning-rate by weight-decay sweeps, the append-only results ledger, and
//! MAD scores.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{cell_key, init_model, train_run, RunRecord, TrainConfig};
use crate::error::{Error, Result};
use crate::primitives::spec::ArchitectureSpec;
use crate::tasks::{generate_pair, TaskConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub lrs: Vec<f64>,
    pub wds: Vec<f64>,
}

impl Default for SweepGrid {
    fn default() -> Self {
        SweepGrid { lrs: vec![1e-4, 5e-4, 1e-3], wds: vec![0.0, 0.1] }
    }
}

impl SweepGrid {
    pub fn cells(&self) -> Vec<(f64, f64)> {
        self.lrs.iter().flat_map(|&lr| self.wds.iter().map(move |&wd| (lr, wd))).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.lrs.is_empty() || self.wds.is_empty() {
            return Err(Error::config("sweep grids must be nonempty"));
        }
        Ok(())
    }
}

/// Append-only JSONL file of run records with single-writer appends.
pub struct Ledger {
    path: PathBuf,
    file: Mutex<File>,
    done: Mutex<HashMap<String, RunRecord>>,
}

/// Reads every complete record of a JSONL ledger. A final line without a
/// newline is an interrupted write and is ignored.
pub fn read_records(path: &Path) -> Result<Vec<RunRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let complete = match text.rfind('\n') {
        Some(i) => &text[..=i],
        None => "",
    };
    complete
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

impl Ledger {
    pub fn open(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let mut done = HashMap::new();
        if path.exists() {
            // Drop a torn trailing line so new appends start on a fresh line.
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            let keep = text.rfind('\n').map_or(0, |i| i + 1);
            if keep != text.len() {
                let f = OpenOptions::new().write(true).open(&path).map_err(|e| Error::io(&path, e))?;
                f.set_len(keep as u64).map_err(|e| Error::io(&path, e))?;
            }
            for r in read_records(&path)? {
                done.insert(r.key(), r);
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Ledger { path, file: Mutex::new(file), done: Mutex::new(done) })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn get(&self, key: &str) -> Option<RunRecord> {
        self.done.lock().unwrap().get(key).cloned()
    }

    pub fn len(&self) -> usize {
        self.done.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn append(&self, r: &RunRecord) -> Result<()> {
        let mut line = serde_json::to_string(r)?;
        line.push('\n');
        let mut f = self.file.lock().unwrap();
        f.write_all(line.as_bytes()).map_err(|e| Error::io(&self.path, e))?;
        f.flush().map_err(|e| Error::io(&self.path, e))?;
        self.done.lock().unwrap().insert(r.key(), r.clone());
        Ok(())
    }

    /// All records, sorted by key.
    pub fn records(&self) -> Vec<RunRecord> {
        let mut v: Vec<_> = self.done.lock().unwrap().values().cloned().collect();
        v.sort_by_key(|r| r.key());
        v
    }
}

/// Best successful run: highest eval accuracy, ties to the lower learning
/// rate, then the lower weight decay.
pub fn select_best<'a>(runs: impl IntoIterator<Item = &'a RunRecord>) -> Option<&'a RunRecord> {
    runs.into_iter().filter(|r| r.ok()).min_by(|a, b| {
        b.eval_accuracy
            .total_cmp(&a.eval_accuracy)
            .then(a.train.lr.total_cmp(&b.train.lr))
            .then(a.train.weight_decay.total_cmp(&b.train.weight_decay))
    })
}

/// Trains every (config, lr, wd) cell for `arch` and returns the best run of
/// each config, in config order. Cells already in `ledger` are not retrained.
pub fn sweep(
    arch: &ArchitectureSpec,
    configs: &[TaskConfig],
    grid: &SweepGrid,
    base: &TrainConfig,
    seed: u64,
    ledger: Option<&Ledger>,
) -> Result<Vec<Result<RunRecord>>> {
    grid.validate()?;
    let mut out = Vec::with_capacity(configs.len());
    for cfg in configs {
        let arch = arch.clone().with_vocab(cfg.vocab.model_vocab_size() as usize);
        let (arch_id, task_hash) = (arch.id(), cfg.hash());
        let cells = grid.cells();
        let pending: Vec<_> = cells
            .iter()
            .filter(|&&(lr, wd)| ledger.is_none_or(|l| l.get(&cell_key(&arch_id, &task_hash, lr, wd, seed)).is_none()))
            .copied()
            .collect();
        if !pending.is_empty() {
            let (train, eval) = generate_pair(cfg, seed)?;
            let fresh: Vec<Result<RunRecord>> = pending
                .par_iter()
                .map(|&(lr, wd)| {
                    let (model, mut p) = init_model(&arch, cfg.kind, seed)?;
                    let tc = TrainConfig { lr, weight_decay: wd, seed, ..base.clone() };
                    let rec = train_run(&model, &mut p, &train, &eval, &tc)?;
                    if let Some(l) = ledger {
                        l.append(&rec)?;
                    }
                    Ok(rec)
                })
                .collect();
            let mut runs = Vec::new();
            for r in fresh {
                runs.push(r?);
            }
            if ledger.is_none() {
                out.push(select_best(&runs).cloned().ok_or_else(|| all_failed(cfg)));
                continue;
            }
        }
        let l = ledger.expect("ledger present when no cell was pending");
        let runs: Vec<RunRecord> = cells
            .iter()
            .filter_map(|&(lr, wd)| l.get(&cell_key(&arch_id, &task_hash, lr, wd, seed)))
            .collect();
        out.push(select_best(&runs).cloned().ok_or_else(|| all_failed(cfg)));
    }
    Ok(out)
}

fn all_failed(cfg: &TaskConfig) -> Error {
    Error::Diverged(format!("every sweep cell failed for {}", cfg.label()))
}

/// Mean best-run eval accuracy (and eval loss) over a set of task settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MadScore {
    pub score: f64,
    pub eval_loss: f64,
    /// `(task label, best eval accuracy)` in the order of the expected configs.
    pub per_config: Vec<(String, f64)>,
}

/// Scores an architecture from its run records: the best run of every
/// expected task setting, averaged with equal weight.
pub fn mad_score(records: &[RunRecord], expected: &[TaskConfig]) -> Result<MadScore> {
    let mut missing = Vec::new();
    let mut per_config = Vec::new();
    let mut losses = Vec::new();
    for cfg in expected {
        let h = cfg.hash();
        match select_best(records.iter().filter(|r| r.task_hash == h)) {
            Some(best) => {
                per_config.push((cfg.label(), best.eval_accuracy));
                losses.push(best.eval_loss.unwrap_or(f64::NAN));
            }
            None => missing.push(cfg.label()),
        }
    }
    if !missing.is_empty() {
        return Err(Error::Missing(missing));
    }
    if per_config.is_empty() {
        return Err(Error::Missing(vec!["no task settings given".into()]));
    }
    let n = per_config.len() as f64;
    Ok(MadScore {
        score: per_config.iter().map(|(_, a)| a).sum::<f64>() / n,
        eval_loss: losses.iter().sum::<f64>() / n,
        per_config,
    })
}
