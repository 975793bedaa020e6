//! IsoFLOP fits, allocation and state exponents, suboptimality gaps, and
//! rank/linear correlation.
//!
//! Every fit works in natural-log space. Losses and perplexities are never
//! converted implicitly: a [`Metric`] tag travels with each point.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trainer::RunRecord;

/// Points whose budgets differ by at most this relative amount share a group.
pub const BUDGET_TOLERANCE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Loss,
    Perplexity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainPoint {
    pub arch: String,
    /// Parameter count.
    pub n: f64,
    pub tokens: f64,
    /// Training FLOPs.
    pub c: f64,
    pub value: f64,
    pub metric: Metric,
}

impl TrainPoint {
    pub fn to_metric(&self, m: Metric) -> TrainPoint {
        let value = match (self.metric, m) {
            (Metric::Loss, Metric::Perplexity) => self.value.exp(),
            (Metric::Perplexity, Metric::Loss) => self.value.ln(),
            _ => self.value,
        };
        TrainPoint { value, metric: m, ..self.clone() }
    }
}

#[derive(Deserialize)]
struct CsvRow {
    arch: String,
    #[serde(rename = "N")]
    n: f64,
    tokens: f64,
    flops: f64,
    loss: f64,
}

/// Reads `arch, N, tokens, flops, loss` rows; `metric` says what `loss` holds.
pub fn read_points_csv(path: &Path, metric: Metric) -> Result<Vec<TrainPoint>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| match e.kind() {
        csv::ErrorKind::Io(_) => Error::io(path, std::io::Error::other(e.to_string())),
        _ => Error::Csv(e),
    })?;
    let mut out = Vec::new();
    for row in r.deserialize() {
        let row: CsvRow = row?;
        let p = TrainPoint { arch: row.arch, n: row.n, tokens: row.tokens, c: row.flops, value: row.loss, metric };
        if !(p.n > 0.0 && p.tokens > 0.0 && p.c > 0.0 && p.value.is_finite()) {
            return Err(Error::Fit(format!("non-positive or non-finite entry for `{}`", p.arch)));
        }
        out.push(p);
    }
    Ok(out)
}

/// Points from training records: `N` the parameter count, `D` the tokens
/// processed, `C = 6 N D`, and the final epoch's training loss. Failed or
/// empty runs are skipped.
pub fn points_from_records(records: &[RunRecord]) -> Vec<TrainPoint> {
    records
        .iter()
        .filter(|r| r.ok() && r.params > 0 && r.tokens > 0)
        .filter_map(|r| {
            let value = *r.train_loss.last()?;
            let (n, tokens) = (r.params as f64, r.tokens as f64);
            Some(TrainPoint { arch: r.arch.clone(), n, tokens, c: 6.0 * n * tokens, value, metric: Metric::Loss })
        })
        .collect()
}

/// Splits points into budget groups (sorted by budget); a point joins the
/// current group when within [`BUDGET_TOLERANCE`] of its smallest budget.
pub fn group_by_budget(points: &[TrainPoint]) -> Vec<Vec<TrainPoint>> {
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| a.c.total_cmp(&b.c).then(a.n.total_cmp(&b.n)));
    let mut groups: Vec<Vec<TrainPoint>> = Vec::new();
    for p in sorted {
        match groups.last_mut() {
            Some(g) if (p.c - g[0].c) / g[0].c <= BUDGET_TOLERANCE => g.push(p),
            _ => groups.push(vec![p]),
        }
    }
    groups
}

/// Ordinary least squares `y ~ X beta` via SVD.
fn lstsq(x: DMatrix<f64>, y: DVector<f64>) -> Result<DVector<f64>> {
    let svd = x.svd(true, true);
    let smax = svd.singular_values.max();
    if svd.singular_values.min() <= smax * 1e-12 {
        return Err(Error::Fit("design matrix is rank deficient".into()));
    }
    svd.solve(&y, 0.0).map_err(|e| Error::Fit(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupFit {
    pub c: f64,
    /// `value = curvature * (ln N - ln N*)^2 + value*`.
    pub curvature: f64,
    pub log_n_star: f64,
    pub n_star: f64,
    pub value_star: f64,
    pub d_star: f64,
    pub metric: Metric,
    /// The vertex lies outside the sampled model sizes.
    pub extrapolated: bool,
    pub residuals: Vec<f64>,
}

/// Quadratic fit of `value` against `ln N` within one budget group.
pub fn fit_isoflop_group(group: &[TrainPoint]) -> Result<GroupFit> {
    if group.len() < 3 {
        return Err(Error::Fit(format!("need at least 3 points per group, got {}", group.len())));
    }
    let c0 = group[0].c;
    if group.iter().any(|p| (p.c - c0).abs() / c0 > BUDGET_TOLERANCE) {
        return Err(Error::Fit("group budgets differ by more than 1%".into()));
    }
    if group.iter().any(|p| p.metric != group[0].metric) {
        return Err(Error::Fit("group mixes losses and perplexities".into()));
    }
    let xs: Vec<f64> = group.iter().map(|p| p.n.ln()).collect();
    let mut distinct = xs.clone();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(Error::Fit("need at least 3 distinct model sizes".into()));
    }
    // Center for conditioning.
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    let x = DMatrix::from_fn(xs.len(), 3, |i, j| (xs[i] - mean).powi(j as i32));
    let y = DVector::from_iterator(group.len(), group.iter().map(|p| p.value));
    let beta = lstsq(x.clone(), y.clone())?;
    let (b0, b1, b2) = (beta[0], beta[1], beta[2]);
    if b2 <= 0.0 {
        return Err(Error::Fit(format!("non-positive curvature {b2:e}: no minimum")));
    }
    let u = -b1 / (2.0 * b2);
    let log_n_star = u + mean;
    let value_star = b0 - b1 * b1 / (4.0 * b2);
    let residuals = (&x * &beta - y).iter().copied().collect();
    // Per-token cost as a log-linear function of N, evaluated at N*.
    let lc: Vec<f64> = group.iter().map(|p| (p.c / p.tokens).ln()).collect();
    let per_token = {
        let xm = DMatrix::from_fn(xs.len(), 2, |i, j| if j == 0 { 1.0 } else { xs[i] - mean });
        match lstsq(xm, DVector::from_vec(lc.clone())) {
            Ok(b) => (b[0] + b[1] * u).exp(),
            Err(_) => (lc.iter().sum::<f64>() / lc.len() as f64).exp(),
        }
    };
    Ok(GroupFit {
        c: c0,
        curvature: b2,
        log_n_star,
        n_star: log_n_star.exp(),
        value_star,
        d_star: c0 / per_token,
        metric: group[0].metric,
        extrapolated: log_n_star < distinct[0] || log_n_star > distinct[distinct.len() - 1],
        residuals,
    })
}

/// Extra loss from training `N* (1 + delta)` instead of `N*` at the same budget.
pub fn suboptimality_gap(fit: &GroupFit, delta: f64) -> Result<f64> {
    if delta <= -1.0 {
        return Err(Error::Fit(format!("offset {delta} must exceed -1")));
    }
    if fit.curvature <= 0.0 {
        return Err(Error::Fit("degenerate fit".into()));
    }
    Ok(fit.curvature * (1.0 + delta).ln().powi(2))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

fn line(xs: &[f64], ys: &[f64]) -> Result<LineFit> {
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Fit("all abscissae are equal".into()));
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs.iter().zip(ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let r2 = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Ok(LineFit { slope, intercept, r2 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationFit {
    /// `ln N* = a ln C + intercept`.
    pub n: LineFit,
    /// `ln D* = b ln C + intercept`.
    pub d: LineFit,
}

/// Log-log lines of the optimal size and token count against budget.
pub fn fit_allocation_exponents(optima: &[GroupFit]) -> Result<AllocationFit> {
    if optima.len() < 2 {
        return Err(Error::Fit("need at least 2 budget groups".into()));
    }
    let lc: Vec<f64> = optima.iter().map(|g| g.c.ln()).collect();
    let ln: Vec<f64> = optima.iter().map(|g| g.log_n_star).collect();
    let ld: Vec<f64> = optima.iter().map(|g| g.d_star.ln()).collect();
    Ok(AllocationFit { n: line(&lc, &ln)?, d: line(&lc, &ld)? })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatePoint {
    pub class: String,
    pub m: f64,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateScalingFit {
    pub c: f64,
    /// `ln P = c ln M + intercept[class]`; a single `"all"` entry without classes.
    pub intercepts: BTreeMap<String, f64>,
    pub residuals: Vec<f64>,
}

/// Power law `P ~ M^c`, with one intercept per class when `per_class`.
pub fn fit_state_exponent(points: &[StatePoint], per_class: bool) -> Result<StateScalingFit> {
    if points.len() < 2 {
        return Err(Error::Fit("need at least 2 points".into()));
    }
    if points.iter().any(|p| !(p.m > 0.0 && p.p > 0.0)) {
        return Err(Error::Fit("state sizes and perplexities must be positive".into()));
    }
    let class = |p: &StatePoint| if per_class { p.class.clone() } else { "all".to_string() };
    let mut groups: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for p in points {
        groups.entry(class(p)).or_default().push((p.m.ln(), p.p.ln()));
    }
    // Shared slope from within-class deviations.
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut means = BTreeMap::new();
    for (k, g) in &groups {
        let n = g.len() as f64;
        let mx = g.iter().map(|v| v.0).sum::<f64>() / n;
        let my = g.iter().map(|v| v.1).sum::<f64>() / n;
        sxy += g.iter().map(|(x, y)| (x - mx) * (y - my)).sum::<f64>();
        sxx += g.iter().map(|(x, _)| (x - mx).powi(2)).sum::<f64>();
        means.insert(k.clone(), (mx, my));
    }
    if sxx == 0.0 {
        return Err(Error::Fit("state sizes do not vary within any class".into()));
    }
    let c = sxy / sxx;
    let intercepts: BTreeMap<String, f64> = means.iter().map(|(k, (mx, my))| (k.clone(), my - c * mx)).collect();
    let residuals = points.iter().map(|p| p.p.ln() - c * p.m.ln() - intercepts[&class(p)]).collect();
    Ok(StateScalingFit { c, intercepts, residuals })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub pearson: f64,
    pub spearman: f64,
    pub n: usize,
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Undefined(format!("need two paired series of length >= 2, got {} and {}", x.len(), y.len())));
    }
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Undefined("a series has zero variance".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// 1-based ranks; tied values share the mean of their ranks.
pub fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

pub fn correlate(x: &[f64], y: &[f64]) -> Result<Correlation> {
    let pearson_r = pearson(x, y)?;
    let spearman = pearson(&ranks(x), &ranks(y))?;
    Ok(Correlation { pearson: pearson_r, spearman, n: x.len() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(n: f64, c: f64, v: f64) -> TrainPoint {
        TrainPoint { arch: "a".into(), n, tokens: c / (6.0 * n), c, value: v, metric: Metric::Loss }
    }

    #[test]
    fn exact_parabola_vertex() {
        let e = std::f64::consts::E;
        let g = [pt(1.0, 1e6, 1.0), pt(e, 1e6, 0.0), pt(e * e, 1e6, 1.0)];
        let f = fit_isoflop_group(&g).unwrap();
        assert!((f.log_n_star - 1.0).abs() < 1e-12);
        assert!(f.value_star.abs() < 1e-12);
        assert!((f.curvature - 1.0).abs() < 1e-12);
        assert!(!f.extrapolated);
        // D* from the per-token cost 6N at N*.
        assert!((f.d_star - 1e6 / (6.0 * e)).abs() < 1e-6);
    }

    #[test]
    fn bad_groups_are_rejected() {
        assert!(fit_isoflop_group(&[pt(1.0, 1.0, 1.0), pt(2.0, 1.0, 0.5)]).is_err());
        let concave = [pt(1.0, 1.0, 0.0), pt(2.0, 1.0, 1.0), pt(4.0, 1.0, 0.0)];
        assert!(matches!(fit_isoflop_group(&concave), Err(Error::Fit(_))));
        let mixed = [pt(1.0, 1.0, 1.0), pt(2.0, 1.5, 0.5), pt(4.0, 1.0, 1.0)];
        assert!(fit_isoflop_group(&mixed).is_err());
        let repeated = [pt(1.0, 1.0, 1.0), pt(1.0, 1.0, 0.5), pt(4.0, 1.0, 1.0)];
        assert!(fit_isoflop_group(&repeated).is_err());
    }

    #[test]
    fn vertex_outside_the_samples_is_flagged() {
        let g: Vec<_> = [1.0f64, 2.0, 3.0].iter().map(|&x| pt(x.exp(), 1.0, (x - 5.0).powi(2))).collect();
        assert!(fit_isoflop_group(&g).unwrap().extrapolated);
    }

    #[test]
    fn gap_follows_the_curvature() {
        let e = std::f64::consts::E;
        let f = fit_isoflop_group(&[pt(1.0, 1.0, 1.0), pt(e, 1.0, 0.0), pt(e * e, 1.0, 1.0)]).unwrap();
        assert_eq!(suboptimality_gap(&f, 0.0).unwrap(), 0.0);
        assert!((suboptimality_gap(&f, e - 1.0).unwrap() - 1.0).abs() < 1e-9);
        let up = suboptimality_gap(&f, 1.0).unwrap();
        let down = suboptimality_gap(&f, -0.5).unwrap();
        assert!((up - down).abs() < 1e-12);
        assert!(suboptimality_gap(&f, -1.0).is_err());
    }

    fn optimum(c: f64, n: f64, d: f64) -> GroupFit {
        GroupFit {
            c,
            curvature: 1.0,
            log_n_star: n.ln(),
            n_star: n,
            value_star: 0.0,
            d_star: d,
            metric: Metric::Loss,
            extrapolated: false,
            residuals: vec![],
        }
    }

    #[test]
    fn allocation_exponents() {
        let o = [optimum(1.0, 2.0, 5.0), optimum(10.0, 20.0, 5.0), optimum(100.0, 200.0, 5.0)];
        let f = fit_allocation_exponents(&o).unwrap();
        assert!((f.n.slope - 1.0).abs() < 1e-12);
        assert!((f.n.intercept - 2f64.ln()).abs() < 1e-12);
        assert!(f.d.slope.abs() < 1e-12);
        let two = fit_allocation_exponents(&o[..2]).unwrap();
        assert!((two.n.slope - 1.0).abs() < 1e-12);
        assert!(fit_allocation_exponents(&o[..1]).is_err());
    }

    #[test]
    fn state_exponent_recovery() {
        let ms = [64.0, 128.0, 256.0, 512.0, 1024.0, 2048.0, 4096.0];
        let mut pts: Vec<StatePoint> = ms.iter().map(|&m| StatePoint { class: "x".into(), m, p: 100.0 * m.powf(-0.28) }).collect();
        let f = fit_state_exponent(&pts, false).unwrap();
        assert!((f.c + 0.28).abs() < 1e-12);
        assert!((f.intercepts["all"] - 100f64.ln()).abs() < 1e-9);
        pts.extend(ms.iter().map(|&m| StatePoint { class: "y".into(), m, p: 80.0 * m.powf(-0.28) }));
        let f = fit_state_exponent(&pts, true).unwrap();
        assert!((f.c + 0.28).abs() < 1e-12);
        assert!((f.intercepts["y"] - 80f64.ln()).abs() < 1e-9);
        let flat: Vec<_> = ms.iter().map(|&m| StatePoint { class: "x".into(), m, p: 3.0 }).collect();
        assert!(fit_state_exponent(&flat, false).unwrap().c.abs() < 1e-15);
        let p = StatePoint { class: "x".into(), m: 0.0, p: 1.0 };
        assert!(fit_state_exponent(&[p.clone(), p], false).is_err());
    }

    #[test]
    fn correlation_examples() {
        let c = correlate(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap();
        assert_eq!(c.spearman, -1.0);
        let s = [0.3, 0.9, 0.1, 0.5];
        let c = correlate(&s, &s).unwrap();
        assert_eq!((c.pearson, c.spearman), (1.0, 1.0));
        let c = correlate(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap();
        assert!((c.pearson - 1.0).abs() < 1e-15 && c.spearman == 1.0);
        assert!(matches!(correlate(&[1.0, 1.0], &[1.0, 2.0]), Err(Error::Undefined(_))));
        assert_eq!(ranks(&[5.0, 1.0, 5.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn grouping_and_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        std::fs::write(&path, "arch,N,tokens,flops,loss\na,1,10,100,3.0\nb,2,5,100.5,2.5\nc,4,2,250,2.0\n").unwrap();
        let pts = read_points_csv(&path, Metric::Loss).unwrap();
        let groups = group_by_budget(&pts);
        assert_eq!(groups.iter().map(Vec::len).collect::<Vec<_>>(), vec![2, 1]);
        let ppl = pts[0].to_metric(Metric::Perplexity);
        assert!((ppl.value - 3f64.exp()).abs() < 1e-12);
        assert!((ppl.to_metric(Metric::Loss).value - 3.0).abs() < 1e-12);
    }
}
