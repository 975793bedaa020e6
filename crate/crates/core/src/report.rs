//! Report files computed purely from a results directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::{RunManifest, LEDGER, MANIFEST};
use crate::scaling::{
    correlate, fit_allocation_exponents, fit_isoflop_group, fit_state_exponent, group_by_budget, points_from_records, read_points_csv,
    Metric, StatePoint, TrainPoint,
};
use crate::trainer::sweep::{read_records, select_best};
use crate::trainer::{mad_score, RunRecord};

/// Optional external inputs.
#[derive(Debug, Clone, Default)]
pub struct ReportInputs {
    /// CSV with columns `arch, perplexity`.
    pub perplexities: Option<PathBuf>,
    /// CSV with columns `arch, N, tokens, flops, loss`.
    pub points: Option<PathBuf>,
    pub points_metric: Option<Metric>,
    /// CSV with columns `class, M, P`.
    pub state_points: Option<PathBuf>,
    /// Fit frontiers to the results ledger itself.
    pub points_from_ledger: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskScore {
    pub score: Option<f64>,
    pub eval_loss: Option<f64>,
    /// Best accuracy per difficulty setting, averaged over seeds.
    pub per_config: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchScore {
    pub mad_score: Option<f64>,
    pub tasks: BTreeMap<String, TaskScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub architectures: BTreeMap<String, ArchScore>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// MAD scores of every architecture and task in the manifest.
pub fn compute_scores(m: &RunManifest, records: &[RunRecord]) -> Scores {
    let seeds = m.config.seeds();
    let mut architectures = BTreeMap::new();
    for arch in &m.config.architectures {
        let mine: Vec<&RunRecord> = records.iter().filter(|r| &r.arch == arch).collect();
        let mut tasks = BTreeMap::new();
        for (kind, configs) in &m.tasks {
            let mut scores = Vec::new();
            let mut losses = Vec::new();
            let mut per_config: BTreeMap<String, Vec<f64>> = BTreeMap::new();
            for &seed in &seeds {
                let rs: Vec<RunRecord> = mine.iter().filter(|r| r.seed == seed).map(|r| (*r).clone()).collect();
                if let Ok(s) = mad_score(&rs, configs) {
                    scores.push(s.score);
                    losses.push(s.eval_loss);
                    for (label, acc) in s.per_config {
                        per_config.entry(label).or_default().push(acc);
                    }
                }
            }
            let complete = scores.len() == seeds.len();
            tasks.insert(
                kind.to_string(),
                TaskScore {
                    score: complete.then(|| mean(&scores)),
                    eval_loss: complete.then(|| mean(&losses)),
                    per_config: per_config.into_iter().map(|(k, v)| (k, mean(&v))).collect(),
                },
            );
        }
        let all: Option<Vec<f64>> = tasks.values().map(|t| t.score).collect();
        architectures.insert(arch.clone(), ArchScore { mad_score: all.map(|v| mean(&v)), tasks });
    }
    Scores { config_hash: m.config_hash.clone(), seeds, architectures }
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn csv_bytes(w: csv::Writer<Vec<u8>>) -> Result<Vec<u8>> {
    w.into_inner().map_err(|e| Error::Csv(e.into_error().into()))
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

/// Loads the manifest and records of a results directory.
pub fn load_results(dir: &Path) -> Result<(RunManifest, Vec<RunRecord>)> {
    let missing: Vec<String> = [MANIFEST, LEDGER]
        .iter()
        .filter(|f| !dir.join(f).exists())
        .map(|f| dir.join(f).display().to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Missing(missing));
    }
    let text = std::fs::read_to_string(dir.join(MANIFEST)).map_err(|e| Error::io(dir.join(MANIFEST), e))?;
    let manifest: RunManifest = serde_json::from_str(&text)?;
    let mut records = read_records(&dir.join(LEDGER))?;
    records.sort_by_key(|r| r.key());
    Ok((manifest, records))
}

#[derive(Deserialize)]
struct PplRow {
    arch: String,
    perplexity: f64,
}

#[derive(Deserialize)]
struct StateRow {
    class: String,
    #[serde(rename = "M")]
    m: f64,
    #[serde(rename = "P")]
    p: f64,
}

/// Writes the score matrix, long-format runs, `scores.json`, and the optional
/// correlation and fit tables. Returns the written paths.
pub fn emit_report(dir: &Path, inputs: &ReportInputs) -> Result<Vec<PathBuf>> {
    let mut missing = Vec::new();
    for p in [&inputs.perplexities, &inputs.points, &inputs.state_points].into_iter().flatten() {
        if !p.exists() {
            missing.push(p.display().to_string());
        }
    }
    let (m, records) = match load_results(dir) {
        Ok(x) => x,
        Err(Error::Missing(mut v)) => {
            v.extend(missing);
            return Err(Error::Missing(v));
        }
        Err(e) => return Err(e),
    };
    if !missing.is_empty() {
        return Err(Error::Missing(missing));
    }
    let hash = &m.config_hash;
    let scores = compute_scores(&m, &records);
    let mut out = Vec::new();

    let path = dir.join("scores.json");
    let mut json = serde_json::to_string_pretty(&scores)?;
    json.push('\n');
    write(&path, json.as_bytes())?;
    out.push(path);

    let task_names: Vec<String> = m.tasks.iter().map(|(k, _)| k.to_string()).collect();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["arch".to_string()];
    header.extend(task_names.iter().cloned());
    header.extend(["mad_score".to_string(), "config_hash".to_string()]);
    w.write_record(&header)?;
    for (arch, s) in &scores.architectures {
        let mut row = vec![arch.clone()];
        row.extend(task_names.iter().map(|t| opt(s.tasks[t].score)));
        row.extend([opt(s.mad_score), hash.clone()]);
        w.write_record(&row)?;
    }
    let path = dir.join("score_matrix.csv");
    write(&path, &csv_bytes(w)?)?;
    out.push(path);

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["arch", "task", "setting", "seed", "lr", "weight_decay", "status", "eval_accuracy", "eval_loss", "best", "config_hash"])?;
    let mut groups: BTreeMap<(String, String, u64), Vec<&RunRecord>> = BTreeMap::new();
    for r in &records {
        groups.entry((r.arch.clone(), r.task_hash.clone(), r.seed)).or_default().push(r);
    }
    for runs in groups.values() {
        let best = select_best(runs.iter().copied()).map(|b| b.key());
        for r in runs {
            let status = if r.ok() { "ok" } else { "failed" };
            w.write_record([
                r.arch.clone(),
                r.task.kind.to_string(),
                r.task.label(),
                r.seed.to_string(),
                r.train.lr.to_string(),
                r.train.weight_decay.to_string(),
                status.to_string(),
                r.eval_accuracy.to_string(),
                opt(r.eval_loss),
                (Some(r.key()) == best).to_string(),
                hash.clone(),
            ])?;
        }
    }
    let path = dir.join("runs_long.csv");
    write(&path, &csv_bytes(w)?)?;
    out.push(path);

    if let Some(p) = &inputs.perplexities {
        out.push(correlation_table(dir, p, &scores, &task_names, hash)?);
    }
    let metric = inputs.points_metric.unwrap_or(Metric::Loss);
    let mut points = Vec::new();
    if let Some(p) = &inputs.points {
        points.extend(read_points_csv(p, metric)?);
    }
    if inputs.points_from_ledger {
        points.extend(points_from_records(&records).into_iter().map(|p| p.to_metric(metric)));
    }
    if inputs.points.is_some() || inputs.points_from_ledger {
        out.extend(frontier_tables(dir, points, metric, hash)?);
    }
    if let Some(p) = &inputs.state_points {
        out.push(state_fit_table(dir, p, hash)?);
    }
    Ok(out)
}

fn correlation_table(dir: &Path, ppl_path: &Path, scores: &Scores, tasks: &[String], hash: &str) -> Result<PathBuf> {
    let mut r = csv::Reader::from_path(ppl_path)?;
    let mut ppl = BTreeMap::new();
    for row in r.deserialize() {
        let row: PplRow = row?;
        ppl.insert(row.arch, row.perplexity);
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["scope", "n", "pearson", "spearman", "config_hash"])?;
    type Pick = Box<dyn Fn(&ArchScore) -> Option<f64>>;
    let mut scopes: Vec<(String, Pick)> =
        vec![("mad_score".to_string(), Box::new(|a: &ArchScore| a.mad_score))];
    for t in tasks {
        let t2 = t.clone();
        scopes.push((t.clone(), Box::new(move |a: &ArchScore| a.tasks.get(&t2).and_then(|s| s.score))));
    }
    for (scope, get) in scopes {
        let (xs, ys): (Vec<f64>, Vec<f64>) = scores
            .architectures
            .iter()
            .filter_map(|(name, a)| Some((get(a)?, *ppl.get(name)?)))
            .unzip();
        let row = match correlate(&xs, &ys) {
            Ok(c) => [scope, c.n.to_string(), c.pearson.to_string(), c.spearman.to_string(), hash.to_string()],
            Err(e) => [scope, xs.len().to_string(), format!("undefined: {e}"), "undefined".into(), hash.to_string()],
        };
        w.write_record(&row)?;
    }
    let path = dir.join("correlation.csv");
    write(&path, &csv_bytes(w)?)?;
    Ok(path)
}

fn frontier_tables(dir: &Path, pts: Vec<TrainPoint>, metric: Metric, hash: &str) -> Result<Vec<PathBuf>> {
    let mut by_arch: BTreeMap<String, Vec<_>> = BTreeMap::new();
    for p in pts {
        by_arch.entry(p.arch.clone()).or_default().push(p);
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["arch", "budget", "points", "n_star", "d_star", "value_star", "curvature", "extrapolated", "error", "config_hash"])?;
    let mut alloc = BTreeMap::new();
    for (arch, pts) in &by_arch {
        let mut optima = Vec::new();
        for g in group_by_budget(pts) {
            match fit_isoflop_group(&g) {
                Ok(f) => {
                    w.write_record([
                        arch.clone(),
                        f.c.to_string(),
                        g.len().to_string(),
                        f.n_star.to_string(),
                        f.d_star.to_string(),
                        f.value_star.to_string(),
                        f.curvature.to_string(),
                        f.extrapolated.to_string(),
                        String::new(),
                        hash.to_string(),
                    ])?;
                    optima.push(f);
                }
                Err(e) => w.write_record([
                    arch.clone(),
                    g[0].c.to_string(),
                    g.len().to_string(),
                    "NA".into(),
                    "NA".into(),
                    "NA".into(),
                    "NA".into(),
                    "NA".into(),
                    e.to_string(),
                    hash.to_string(),
                ])?,
            }
        }
        let v = match fit_allocation_exponents(&optima) {
            Ok(f) => serde_json::to_value(f)?,
            Err(e) => serde_json::Value::String(e.to_string()),
        };
        alloc.insert(arch.clone(), v);
    }
    let fp = dir.join("frontier.csv");
    write(&fp, &csv_bytes(w)?)?;
    let ap = dir.join("allocation.json");
    let doc = serde_json::json!({ "config_hash": hash, "metric": metric, "architectures": alloc });
    write(&ap, (serde_json::to_string_pretty(&doc)? + "\n").as_bytes())?;
    Ok(vec![fp, ap])
}

fn state_fit_table(dir: &Path, path: &Path, hash: &str) -> Result<PathBuf> {
    let mut r = csv::Reader::from_path(path)?;
    let mut pts = Vec::new();
    for row in r.deserialize() {
        let row: StateRow = row?;
        pts.push(StatePoint { class: row.class, m: row.m, p: row.p });
    }
    let shared = fit_state_exponent(&pts, false)?;
    let per_class = fit_state_exponent(&pts, true)?;
    let doc = serde_json::json!({ "config_hash": hash, "single": shared, "per_class": per_class });
    let out = dir.join("state_fit.json");
    write(&out, (serde_json::to_string_pretty(&doc)? + "\n").as_bytes())?;
    Ok(out)
}
