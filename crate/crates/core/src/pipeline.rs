//! End-to-end runs: datasets, sweeps, scores, state and FLOP tables, and the
//! report files, all resumable from the results ledger.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flops::{flops_model, param_count};
use crate::primitives::presets::{preset, DESK_WIDTH, MAD_WIDTH};
use crate::report::{emit_report, ReportInputs};
use crate::state::fixed_state_profile;
use crate::tasks::format::serialize_dataset;
use crate::tasks::{desk_grid, difficulty_grid, generate_pair, TaskConfig, TaskKind};
use crate::trainer::{sweep, Ledger, SweepGrid, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Full,
    Desk,
}

impl Preset {
    pub fn width(self) -> usize {
        match self {
            Preset::Full => MAD_WIDTH,
            Preset::Desk => DESK_WIDTH,
        }
    }

    pub fn train_config(self) -> TrainConfig {
        match self {
            Preset::Full => TrainConfig::default(),
            Preset::Desk => TrainConfig::desk(),
        }
    }

    pub fn grid(self, kind: TaskKind) -> Vec<TaskConfig> {
        match self {
            Preset::Full => difficulty_grid(kind),
            Preset::Desk => desk_grid(kind),
        }
    }
}

fn default_tasks() -> Vec<TaskKind> {
    TaskKind::ALL.to_vec()
}

fn default_concurrency() -> usize {
    1
}

fn default_true() -> bool {
    true
}

/// Optional overrides of the preset's training settings.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainOverrides {
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub micro_batch: Option<usize>,
    /// Caps on the per-setting dataset sizes.
    pub train_samples: Option<u32>,
    pub eval_samples: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub architectures: Vec<String>,
    #[serde(default = "default_tasks")]
    pub tasks: Vec<TaskKind>,
    pub preset: Preset,
    #[serde(default)]
    pub grid: SweepGrid,
    #[serde(default)]
    pub seed: u64,
    /// Extra seeds; scores are averaged over `seed` and these.
    #[serde(default)]
    pub extra_seeds: Vec<u64>,
    pub output: PathBuf,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    #[serde(default)]
    pub train: TrainOverrides,
    /// Write the generated datasets next to the results.
    #[serde(default = "default_true")]
    pub save_datasets: bool,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    /// Every name resolves and every knob is usable; runs before any work.
    pub fn validate(&self) -> Result<()> {
        if self.architectures.is_empty() || self.tasks.is_empty() {
            return Err(Error::config("at least one architecture and one task are required"));
        }
        for name in &self.architectures {
            preset(name, self.preset.width(), 16)?;
        }
        self.grid.validate()?;
        if self.concurrency == 0 {
            return Err(Error::config("concurrency must be at least 1"));
        }
        self.train_config().validate()
    }

    pub fn seeds(&self) -> Vec<u64> {
        let mut s = vec![self.seed];
        s.extend(self.extra_seeds.iter().filter(|&&x| x != self.seed));
        s
    }

    pub fn train_config(&self) -> TrainConfig {
        let mut t = self.preset.train_config();
        if let Some(e) = self.train.epochs {
            t.epochs = e;
        }
        if let Some(b) = self.train.batch_size {
            t.batch_size = b;
        }
        if let Some(m) = self.train.micro_batch {
            t.micro_batch = m;
        }
        t
    }

    /// Hash of everything that affects results (not the output location or
    /// the degree of parallelism).
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut c = self.clone();
        c.output = PathBuf::new();
        c.concurrency = 0;
        c.save_datasets = false;
        let json = serde_json::to_string(&c).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))[..16].to_string()
    }

    pub fn task_configs(&self) -> Vec<(TaskKind, Vec<TaskConfig>)> {
        let cap = |c: TaskConfig| {
            let c = match self.train.train_samples {
                Some(n) if n < c.train_samples => c.with_train_samples(n),
                _ => c,
            };
            match self.train.eval_samples {
                Some(n) if n < c.eval_samples => c.with_eval_samples(n),
                _ => c,
            }
        };
        self.tasks.iter().map(|&k| (k, self.preset.grid(k).into_iter().map(cap).collect())).collect()
    }
}

/// The resolved run description saved next to the results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub config: PipelineConfig,
    pub width: usize,
    pub train: TrainConfig,
    pub tasks: Vec<(TaskKind, Vec<TaskConfig>)>,
}

pub const MANIFEST: &str = "manifest.json";
pub const LEDGER: &str = "runs.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub arch: String,
    pub task: String,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug)]
pub struct PipelineOutcome {
    pub failures: Vec<CellFailure>,
    pub artifacts: Vec<PathBuf>,
}

impl PipelineOutcome {
    /// 0 when every cell trained, 2 when some failed.
    pub fn exit_code(&self) -> i32 {
        if self.failures.is_empty() {
            0
        } else {
            2
        }
    }
}

/// Exit code of an error: 1 for configuration problems, 3 for I/O and
/// missing files, 2 otherwise.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 1,
        Error::Io { .. } | Error::Missing(_) => 3,
        _ => 2,
    }
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineOutcome> {
    cfg.validate()?;
    let out = &cfg.output;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let manifest = RunManifest {
        config_hash: cfg.hash(),
        config: cfg.clone(),
        width: cfg.preset.width(),
        train: cfg.train_config(),
        tasks: cfg.task_configs(),
    };
    write(&out.join(MANIFEST), serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    let ledger = Ledger::open(out.join(LEDGER))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.concurrency)
        .build()
        .map_err(|e| Error::config(e.to_string()))?;
    let mut failures = Vec::new();
    if cfg.save_datasets {
        let dir = out.join("data");
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for (_, configs) in &manifest.tasks {
            for tc in configs {
                for &seed in &cfg.seeds() {
                    let (tr, ev) = generate_pair(tc, seed)?;
                    for ds in [tr, ev] {
                        let name = format!("{}-{}-s{seed}-{:?}.mad", tc.kind, tc.hash(), ds.split).to_lowercase();
                        let path = dir.join(name);
                        if !path.exists() {
                            serialize_dataset(&ds, &path)?;
                        }
                    }
                }
            }
        }
    }
    for name in &cfg.architectures {
        let arch = preset(name, manifest.width, 16)?;
        for (_, configs) in &manifest.tasks {
            for &seed in &cfg.seeds() {
                let results = pool.install(|| sweep(&arch, configs, &cfg.grid, &manifest.train, seed, Some(&ledger)))?;
                for (tc, r) in configs.iter().zip(results) {
                    if let Err(e) = r {
                        failures.push(CellFailure { arch: name.clone(), task: tc.label(), seed, error: e.to_string() });
                    }
                }
            }
        }
    }
    let mut artifacts = write_tables(cfg, &manifest)?;
    artifacts.extend(emit_report(out, &ReportInputs::default())?);
    let failures_path = out.join("failures.json");
    let doc = serde_json::json!({ "config_hash": manifest.config_hash, "failures": failures });
    write(&failures_path, serde_json::to_string_pretty(&doc)?.as_bytes())?;
    artifacts.push(failures_path);
    Ok(PipelineOutcome { failures, artifacts })
}

/// Per-architecture state and FLOP tables at the preset width.
fn write_tables(cfg: &PipelineConfig, m: &RunManifest) -> Result<Vec<PathBuf>> {
    let mut state = csv::Writer::from_writer(Vec::new());
    state.write_record(["arch", "fixed_state", "dynamic_per_token", "config_hash"])?;
    let mut flops = csv::Writer::from_writer(Vec::new());
    flops.write_record(["arch", "seq_len", "vocab", "params", "flops", "config_hash"])?;
    let mut per_arch = BTreeMap::new();
    per_arch.insert("config_hash".to_string(), serde_json::Value::String(m.config_hash.clone()));
    for name in &cfg.architectures {
        let arch = preset(name, m.width, 16)?;
        let p = fixed_state_profile(&arch);
        state.write_record([name, &p.total_fixed.to_string(), &p.dynamic_per_token.to_string(), &m.config_hash])?;
        let l = 128;
        let f = match flops_model(&arch, l, 2) {
            Ok(e) => e.total.to_string(),
            Err(e @ Error::NoCalculator(_)) => format!("n/a ({e})"),
            Err(e) => return Err(e),
        };
        flops.write_record([name, &l.to_string(), "16", &param_count(&arch)?.to_string(), &f, &m.config_hash])?;
        per_arch.insert(name.clone(), serde_json::to_value(&p)?);
    }
    let out = &cfg.output;
    let (sp, fp, pp) = (out.join("state.csv"), out.join("flops.csv"), out.join("state_profiles.json"));
    write(&sp, &state.into_inner().map_err(|e| Error::Csv(e.into_error().into()))?)?;
    write(&fp, &flops.into_inner().map_err(|e| Error::Csv(e.into_error().into()))?)?;
    write(&pp, serde_json::to_string_pretty(&per_arch)?.as_bytes())?;
    Ok(vec![sp, fp, pp])
}
