//! `mad`: generate tasks, train and sweep models, account for state and
//! FLOPs, fit scaling laws and emit reports.
//!
//! Exit codes: 0 success, 1 configuration error, 2 failed runs, 3 I/O error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use mad_core::checkpoint;
use mad_core::flops::{flops_model, flops_training, param_count, TRAIN_MULTIPLIER};
use mad_core::pipeline::{exit_code, run_pipeline, PipelineConfig, Preset};
use mad_core::primitives::presets::{preset, MAD_WIDTH};
use mad_core::report::{emit_report, ReportInputs};
use mad_core::scaling::{
    correlate, fit_allocation_exponents, fit_isoflop_group, group_by_budget, read_points_csv, suboptimality_gap, Metric,
};
use mad_core::state::{dynamic_state_profile, normalize_iso_state};
use mad_core::tasks::format::serialize_dataset;
use mad_core::tasks::{generate_pair, TaskConfig, TaskKind};
use mad_core::trainer::{init_model, mad_score, sweep, train_run, Ledger, SweepGrid, TrainConfig};
use mad_core::{Error, Result};

#[derive(Parser)]
#[command(name = "mad", version, about = "Synthetic-task architecture prototyping")]
struct Cli {
    /// Root seed; every random draw derives from it.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetArg {
    Full,
    Desk,
}

impl From<PresetArg> for Preset {
    fn from(p: PresetArg) -> Self {
        match p {
            PresetArg::Full => Preset::Full,
            PresetArg::Desk => Preset::Desk,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Loss,
    Perplexity,
}

impl From<MetricArg> for Metric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Loss => Metric::Loss,
            MetricArg::Perplexity => Metric::Perplexity,
        }
    }
}

#[derive(clap::Args)]
struct TaskArgs {
    /// recall, fuzzy_recall, noisy_recall, selective_copy, compression or memorization.
    #[arg(long)]
    task: String,
    #[arg(long, value_enum, default_value = "full")]
    preset: PresetArg,
    /// Index into the preset's difficulty grid (0 is the baseline setting).
    #[arg(long, default_value_t = 0)]
    setting: usize,
}

impl TaskArgs {
    fn kind(&self) -> Result<TaskKind> {
        self.task.parse()
    }

    fn configs(&self) -> Result<Vec<TaskConfig>> {
        Ok(Preset::from(self.preset).grid(self.kind()?))
    }

    fn config(&self) -> Result<TaskConfig> {
        let grid = self.configs()?;
        let n = grid.len();
        grid.into_iter()
            .nth(self.setting)
            .ok_or_else(|| Error::config(format!("setting {} out of range (grid has {n})", self.setting)))
    }
}

#[derive(clap::Args)]
struct ArchArgs {
    /// Architecture name, e.g. transformer, hyena, striped_mamba.
    #[arg(long)]
    arch: String,
    /// Model width; defaults to the preset's (128 full, 64 desk).
    #[arg(long)]
    width: Option<usize>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the train and eval splits of one task setting.
    Gen {
        #[command(flatten)]
        task: TaskArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model on one task setting.
    Train {
        #[command(flatten)]
        task: TaskArgs,
        #[command(flatten)]
        arch: ArchArgs,
        #[arg(long, default_value_t = 5e-4)]
        lr: f64,
        #[arg(long, default_value_t = 0.0)]
        wd: f64,
        /// Defaults to the preset's epoch count (200 full, 50 desk).
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long, default_value_t = 128)]
        batch_size: usize,
        /// Append the record to this JSONL ledger.
        #[arg(long)]
        ledger: Option<PathBuf>,
        /// Save the trained parameters.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Learning-rate by weight-decay sweep over a task's difficulty grid.
    Sweep {
        #[command(flatten)]
        arch: ArchArgs,
        #[arg(long)]
        task: String,
        #[arg(long, value_enum, default_value = "full")]
        preset: PresetArg,
        #[arg(long, value_delimiter = ',', default_values_t = [1e-4, 5e-4, 1e-3])]
        lrs: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.1])]
        wds: Vec<f64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        ledger: PathBuf,
    },
    /// MAD score of one architecture from a ledger.
    Score {
        #[arg(long)]
        ledger: PathBuf,
        #[arg(long)]
        arch: String,
        /// Tasks to score; all six when omitted.
        #[arg(long, value_delimiter = ',')]
        tasks: Vec<String>,
        #[arg(long, value_enum, default_value = "full")]
        preset: PresetArg,
    },
    /// Fixed and dynamic state of an architecture.
    State {
        #[command(flatten)]
        arch: ArchArgs,
        #[arg(long, default_value_t = 128)]
        seq_len: u64,
        /// Rescale state knobs to reach this total fixed state and print the
        /// resulting architecture.
        #[arg(long)]
        target: Option<u64>,
    },
    /// Forward FLOPs per component and training FLOPs.
    Flops {
        #[command(flatten)]
        arch: ArchArgs,
        #[arg(long, default_value_t = 2048)]
        seq_len: u64,
        #[arg(long, default_value_t = 50277)]
        vocab: usize,
        /// Training tokens for the total training cost.
        #[arg(long)]
        tokens: Option<u64>,
        #[arg(long, default_value_t = 2)]
        scan_constant: u64,
        /// Write the estimate as JSON here as well.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// IsoFLOP fits and allocation exponents for `arch, N, tokens, flops, loss` rows.
    Fit {
        #[arg(long)]
        points: PathBuf,
        #[arg(long, value_enum, default_value = "loss")]
        metric: MetricArg,
        /// Report the loss gap of a model `delta` away from the optimal size.
        #[arg(long)]
        delta: Option<f64>,
    },
    /// Pearson and Spearman correlation of two CSV columns.
    Correlate {
        #[arg(long)]
        file: PathBuf,
        #[arg(long)]
        x: String,
        #[arg(long)]
        y: String,
    },
    /// Regenerate the report files of a results directory.
    Report {
        #[arg(long)]
        dir: PathBuf,
        /// CSV with columns `arch, perplexity`.
        #[arg(long)]
        perplexity: Option<PathBuf>,
        /// CSV with columns `arch, N, tokens, flops, loss`.
        #[arg(long)]
        points: Option<PathBuf>,
        /// CSV with columns `class, M, P`.
        #[arg(long)]
        state_points: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "loss")]
        metric: MetricArg,
        /// Also fit frontiers to the directory's own run records.
        #[arg(long)]
        from_ledger: bool,
    },
    /// Run a whole pipeline from a TOML config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's output directory.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn width(a: &ArchArgs, preset: Option<PresetArg>) -> usize {
    a.width.unwrap_or_else(|| preset.map_or(MAD_WIDTH, |p| Preset::from(p).width()))
}

fn print_json<T: serde::Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn run(cli: Cli) -> Result<i32> {
    let seed = cli.seed;
    match cli.cmd {
        Cmd::Gen { task, out } => {
            let cfg = task.config()?;
            std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            let (train, eval) = generate_pair(&cfg, seed)?;
            for ds in [&train, &eval] {
                let name = format!("{}-s{seed}-{:?}.mad", cfg.kind, ds.split).to_lowercase();
                let path = out.join(name);
                serialize_dataset(ds, &path)?;
                println!("{}  {} samples  {}", path.display(), ds.len(), cfg.label());
            }
        }
        Cmd::Train { task, arch, lr, wd, epochs, batch_size, ledger, checkpoint: ckpt } => {
            let cfg = task.config()?;
            let spec = preset(&arch.arch, width(&arch, Some(task.preset)), cfg.vocab.model_vocab_size() as usize)?;
            let base = Preset::from(task.preset).train_config();
            let tc = TrainConfig {
                lr,
                weight_decay: wd,
                epochs: epochs.unwrap_or(base.epochs),
                batch_size,
                micro_batch: base.micro_batch.min(batch_size),
                seed,
                ..base
            };
            let (train, eval) = generate_pair(&cfg, seed)?;
            let (model, mut p) = init_model(&spec, cfg.kind, seed)?;
            let rec = train_run(&model, &mut p, &train, &eval, &tc)?;
            if let Some(path) = ledger {
                Ledger::open(path)?.append(&rec)?;
            }
            if let Some(path) = ckpt {
                checkpoint::save(&model, &p, path)?;
            }
            print_json(&rec)?;
            return Ok(if rec.ok() { 0 } else { 2 });
        }
        Cmd::Sweep { arch, task, preset: pr, lrs, wds, epochs, ledger } => {
            let kind: TaskKind = task.parse()?;
            let configs = Preset::from(pr).grid(kind);
            let spec = preset(&arch.arch, width(&arch, Some(pr)), 16)?;
            let mut base = Preset::from(pr).train_config();
            if let Some(e) = epochs {
                base.epochs = e;
            }
            let grid = SweepGrid { lrs, wds };
            let ledger = Ledger::open(ledger)?;
            let best = sweep(&spec, &configs, &grid, &base, seed, Some(&ledger))?;
            let mut failed = false;
            for (c, r) in configs.iter().zip(best) {
                match r {
                    Ok(r) => println!("{}  lr={:e} wd={}  acc={:.4}", c.label(), r.train.lr, r.train.weight_decay, r.eval_accuracy),
                    Err(e) => {
                        failed = true;
                        println!("{}  failed: {e}", c.label());
                    }
                }
            }
            return Ok(if failed { 2 } else { 0 });
        }
        Cmd::Score { ledger, arch, tasks, preset: pr } => {
            let kinds: Vec<TaskKind> = if tasks.is_empty() {
                TaskKind::ALL.to_vec()
            } else {
                tasks.iter().map(|t| t.parse()).collect::<Result<_>>()?
            };
            let records: Vec<_> =
                Ledger::open(ledger)?.records().into_iter().filter(|r| r.arch == arch && r.seed == seed).collect();
            let mut per_task = serde_json::Map::new();
            let mut total = 0.0;
            for k in &kinds {
                let s = mad_score(&records, &Preset::from(pr).grid(*k))?;
                total += s.score;
                per_task.insert(k.to_string(), serde_json::to_value(&s)?);
            }
            print_json(&serde_json::json!({
                "arch": arch,
                "seed": seed,
                "mad_score": total / kinds.len() as f64,
                "tasks": per_task,
            }))?;
        }
        Cmd::State { arch, seq_len, target } => {
            let spec = preset(&arch.arch, width(&arch, None), 16)?;
            let spec = match target {
                Some(t) => normalize_iso_state(&spec, t)?,
                None => spec,
            };
            let (profile, dynamic) = dynamic_state_profile(&spec, seq_len)?;
            print!("{}", profile.to_csv()?);
            println!("# total fixed state {}, dynamic state at T={seq_len}: {dynamic}", profile.total_fixed);
            if target.is_some() {
                print_json(&spec)?;
            }
        }
        Cmd::Flops { arch, seq_len, vocab, tokens, scan_constant, json } => {
            let spec = preset(&arch.arch, width(&arch, None), vocab)?;
            let est = flops_model(&spec, seq_len, scan_constant)?;
            print!("{}", est.table());
            let mut doc = serde_json::json!({
                "arch": arch.arch,
                "seq_len": seq_len,
                "params": param_count(&spec)?,
                "forward": est,
            });
            if let Some(t) = tokens {
                let c = flops_training(&spec, seq_len, t, TRAIN_MULTIPLIER)?;
                println!("training FLOPs for {t} tokens: {c}");
                doc["training_flops"] = c.to_string().into();
            }
            let text = serde_json::to_string_pretty(&doc)?;
            match json {
                Some(path) => std::fs::write(&path, text + "\n").map_err(|e| Error::io(path, e))?,
                None => println!("{text}"),
            }
        }
        Cmd::Fit { points, metric, delta } => {
            let pts = read_points_csv(&points, metric.into())?;
            let mut archs: Vec<String> = pts.iter().map(|p| p.arch.clone()).collect();
            archs.sort();
            archs.dedup();
            let mut out = serde_json::Map::new();
            for a in archs {
                let mine: Vec<_> = pts.iter().filter(|p| p.arch == a).cloned().collect();
                let mut groups = Vec::new();
                let mut fits = Vec::new();
                for g in group_by_budget(&mine) {
                    match fit_isoflop_group(&g) {
                        Ok(f) => {
                            let gap = delta.map(|d| suboptimality_gap(&f, d)).transpose()?;
                            groups.push(serde_json::json!({ "fit": f, "gap": gap }));
                            fits.push(f);
                        }
                        Err(e) => groups.push(serde_json::json!({ "budget": g[0].c, "error": e.to_string() })),
                    }
                }
                let alloc = match fit_allocation_exponents(&fits) {
                    Ok(f) => serde_json::to_value(f)?,
                    Err(e) => e.to_string().into(),
                };
                out.insert(a, serde_json::json!({ "groups": groups, "allocation": alloc }));
            }
            print_json(&out)?;
        }
        Cmd::Correlate { file, x, y } => {
            let (xs, ys) = read_columns(&file, &x, &y)?;
            print_json(&correlate(&xs, &ys)?)?;
        }
        Cmd::Report { dir, perplexity, points, state_points, metric, from_ledger } => {
            let inputs = ReportInputs {
                perplexities: perplexity,
                points,
                points_metric: Some(metric.into()),
                state_points,
                points_from_ledger: from_ledger,
            };
            for p in emit_report(&dir, &inputs)? {
                println!("{}", p.display());
            }
        }
        Cmd::Run { config, output } => {
            let mut cfg = PipelineConfig::load(&config)?;
            if let Some(o) = output {
                cfg.output = o;
            }
            let out = run_pipeline(&cfg)?;
            for p in &out.artifacts {
                println!("{}", p.display());
            }
            for f in &out.failures {
                eprintln!("failed: {} {} seed {}: {}", f.arch, f.task, f.seed, f.error);
            }
            return Ok(out.exit_code());
        }
    }
    Ok(0)
}

fn read_columns(path: &Path, x: &str, y: &str) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))?;
    let headers = r.headers()?.clone();
    let col = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::config(format!("no column `{name}` in {}", path.display())))
    };
    let (ix, iy) = (col(x)?, col(y)?);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for row in r.records() {
        let row = row?;
        let num = |i: usize| {
            row[i].trim().parse::<f64>().map_err(|e| Error::config(format!("bad number `{}`: {e}", &row[i])))
        };
        xs.push(num(ix)?);
        ys.push(num(iy)?);
    }
    Ok((xs, ys))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
