//! Risk metrics for any confidence score where higher means more confident.
//!
//! Every ranking sorts by descending score and breaks ties by ascending
//! `sample_id`, so all metrics are deterministic.

use std::collections::HashSet;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredPrediction {
    pub sample_id: usize,
    pub score: f64,
    pub correct: bool,
}

impl ScoredPrediction {
    pub fn new(sample_id: usize, score: f64, correct: bool) -> Self {
        ScoredPrediction { sample_id, score, correct }
    }
}

/// `(coverage, risk)` after keeping the `m` most confident samples, `m = 1..=n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskCoverageCurve {
    pub points: Vec<(f64, f64)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparsificationPoint {
    pub removed_fraction: f64,
    pub method_error: f64,
    pub oracle_error: f64,
}

fn validate(preds: &[ScoredPrediction]) -> Result<()> {
    if preds.is_empty() {
        return Err(Error::Empty("no scored predictions".into()));
    }
    if let Some(p) = preds.iter().find(|p| p.score.is_nan()) {
        return Err(Error::Domain(format!("sample {} has a NaN score", p.sample_id)));
    }
    let mut seen = HashSet::with_capacity(preds.len());
    if let Some(p) = preds.iter().find(|p| !seen.insert(p.sample_id)) {
        return Err(Error::Domain(format!("duplicate sample_id {}", p.sample_id)));
    }
    Ok(())
}

/// Most confident first.
pub fn ranked(preds: &[ScoredPrediction]) -> Result<Vec<ScoredPrediction>> {
    validate(preds)?;
    let mut sorted = preds.to_vec();
    sorted.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.sample_id.cmp(&b.sample_id)));
    Ok(sorted)
}

/// `⌈fraction·n⌉`, treating products within rounding of an integer as that integer.
fn top_count(fraction: f64, n: usize) -> usize {
    let x = fraction * n as f64;
    let nearest = x.round();
    // 0.3 * 10 evaluates to 3.0000000000000004
    let k = if (x - nearest).abs() <= 1e-9 * x.max(1.0) { nearest } else { x.ceil() };
    (k as usize).clamp(1, n)
}

/// Accuracy over the `⌈fraction·n⌉` most confident samples.
pub fn accuracy_at_top(preds: &[ScoredPrediction], fraction: f64) -> Result<f64> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Domain(format!("fraction must lie in (0, 1], got {fraction}")));
    }
    let sorted = ranked(preds)?;
    let k = top_count(fraction, sorted.len());
    let hits = sorted[..k].iter().filter(|p| p.correct).count();
    Ok(hits as f64 / k as f64)
}

/// Accuracy at the top `p`% for every `p` in `percents`.
pub fn stratification(preds: &[ScoredPrediction], percents: &[u32]) -> Result<Vec<(u32, f64)>> {
    percents
        .iter()
        .map(|&p| Ok((p, accuracy_at_top(preds, f64::from(p) / 100.0)?)))
        .collect()
}

pub fn risk_coverage_curve(preds: &[ScoredPrediction]) -> Result<RiskCoverageCurve> {
    let sorted = ranked(preds)?;
    let n = sorted.len() as f64;
    let mut errors = 0usize;
    let points = sorted
        .iter()
        .enumerate()
        .map(|(i, p)| {
            errors += usize::from(!p.correct);
            let m = i + 1;
            (m as f64 / n, errors as f64 / m as f64)
        })
        .collect();
    Ok(RiskCoverageCurve { points })
}

/// Mean selective risk over all coverage prefixes.
pub fn aurc(preds: &[ScoredPrediction]) -> Result<f64> {
    let curve = risk_coverage_curve(preds)?;
    let total: f64 = curve.points.iter().map(|(_, r)| r).sum();
    Ok(total / curve.points.len() as f64)
}

/// Error rates after removing the `⌊i·n/steps⌋` least confident samples
/// (method) or that many incorrect samples first (oracle), `i = 0..steps`.
pub fn sparsification_curve(preds: &[ScoredPrediction], steps: usize) -> Result<Vec<SparsificationPoint>> {
    if steps < 2 {
        return Err(Error::Domain(format!("steps must be >= 2, got {steps}")));
    }
    let sorted = ranked(preds)?;
    let n = sorted.len();
    let total_errors = sorted.iter().filter(|p| !p.correct).count();
    // errors_in_prefix[m] = incorrect among the m most confident
    let mut errors_in_prefix = vec![0usize; n + 1];
    for (i, p) in sorted.iter().enumerate() {
        errors_in_prefix[i + 1] = errors_in_prefix[i] + usize::from(!p.correct);
    }
    Ok((0..steps)
        .map(|i| {
            let removed = i * n / steps;
            let kept = n - removed;
            SparsificationPoint {
                removed_fraction: i as f64 / steps as f64,
                method_error: errors_in_prefix[kept] as f64 / kept as f64,
                oracle_error: total_errors.saturating_sub(removed) as f64 / kept as f64,
            }
        })
        .collect())
}

/// Trapezoidal area between the method and oracle sparsification curves,
/// divided by the integration range `(steps − 1)/steps`.
pub fn ause(preds: &[ScoredPrediction], steps: usize) -> Result<f64> {
    let curve = sparsification_curve(preds, steps)?;
    let gaps: Vec<f64> = curve.iter().map(|p| p.method_error - p.oracle_error).collect();
    let area: f64 = gaps.windows(2).map(|w| (w[0] + w[1]) / 2.0).sum();
    Ok(area / (steps - 1) as f64)
}

pub const DEFAULT_AUSE_STEPS: usize = 100;

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let rank = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

/// Pearson correlation.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("correlation of lengths {} and {}", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(Error::Empty("correlation needs at least two pairs".into()));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return Err(Error::Degenerate("correlation with a constant sequence".into()));
    }
    Ok((cov / (va * vb).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman rank correlation (average ranks for ties).
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return Err(Error::Domain("NaN in rank correlation input".into()));
    }
    if a.len() != b.len() {
        return Err(Error::Shape(format!("correlation of lengths {} and {}", a.len(), b.len())));
    }
    pearson(&average_ranks(a), &average_ranks(b))
}

fn median(values: &mut [f64]) -> f64 {
    let n = values.len();
    let mid = n / 2;
    let (_, upper, _) = values.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    if n % 2 == 1 {
        upper
    } else {
        let lower = values[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lower + upper) / 2.0
    }
}

/// Bandwidth of [`mmd`]: the median pairwise absolute difference of the pooled
/// sample (average of the two middle values when their count is even), at least 1e-9.
pub fn median_bandwidth(a: &[f64], b: &[f64]) -> f64 {
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let mut diffs = Vec::with_capacity(pooled.len() * pooled.len().saturating_sub(1) / 2);
    for (i, u) in pooled.iter().enumerate() {
        for v in &pooled[i + 1..] {
            diffs.push((u - v).abs());
        }
    }
    if diffs.is_empty() {
        return 1e-9;
    }
    median(&mut diffs).max(1e-9)
}

/// Square root of the unbiased squared MMD with a Gaussian kernel of median bandwidth.
pub fn mmd(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Empty(format!(
            "mmd needs at least two values per sample, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite value in mmd input".into()));
    }
    let h = median_bandwidth(a, b);
    let kernel = |u: f64, v: f64| (-(u - v) * (u - v) / (2.0 * h * h)).exp();
    let within = |s: &[f64]| {
        let mut total = 0.0;
        for (i, u) in s.iter().enumerate() {
            for (j, v) in s.iter().enumerate() {
                if i != j {
                    total += kernel(*u, *v);
                }
            }
        }
        total / (s.len() * (s.len() - 1)) as f64
    };
    let mut cross = 0.0;
    for u in a {
        for v in b {
            cross += kernel(*u, *v);
        }
    }
    cross /= (a.len() * b.len()) as f64;
    let mmd2 = within(a) + within(b) - 2.0 * cross;
    Ok(mmd2.max(0.0).sqrt())
}

/// Equal-width histogram over `[lo, hi]` as `(bin_center, mass)` with masses summing to 1.
/// Values outside the range land in the edge bins.
pub fn histogram(values: &[f64], bins: usize, range: (f64, f64)) -> Result<Vec<(f64, f64)>> {
    let (lo, hi) = range;
    if bins == 0 || !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::Domain(format!("invalid histogram: {bins} bins over [{lo}, {hi}]")));
    }
    if values.is_empty() {
        return Err(Error::Empty("histogram of no values".into()));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::Domain("NaN in histogram input".into()));
    }
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for v in values {
        let pos = ((v - lo) / width).floor();
        let bin = if pos < 0.0 { 0 } else { (pos as usize).min(bins - 1) };
        counts[bin] += 1;
    }
    let n = values.len() as f64;
    Ok(counts
        .iter()
        .enumerate()
        .map(|(i, &c)| (lo + (i as f64 + 0.5) * width, c as f64 / n))
        .collect())
}

/// Flat summary written next to stratification tables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub n: usize,
    pub accuracy: f64,
    pub aurc: f64,
    pub ause: f64,
    pub ause_steps: usize,
}

pub fn summarize(preds: &[ScoredPrediction], ause_steps: usize) -> Result<MetricsSummary> {
    Ok(MetricsSummary {
        n: preds.len(),
        accuracy: accuracy_at_top(preds, 1.0)?,
        aurc: aurc(preds)?,
        ause: ause(preds, ause_steps)?,
        ause_steps,
    })
}

pub fn write_stratification_csv<W: Write>(mut out: W, table: &[(u32, f64)]) -> Result<()> {
    writeln!(out, "top_percent,accuracy")?;
    for (p, acc) in table {
        writeln!(out, "{p},{acc}")?;
    }
    Ok(())
}

pub fn write_risk_coverage_csv<W: Write>(mut out: W, curve: &RiskCoverageCurve) -> Result<()> {
    writeln!(out, "coverage,risk")?;
    for (c, r) in &curve.points {
        writeln!(out, "{c},{r}")?;
    }
    Ok(())
}

pub fn write_sparsification_csv<W: Write>(mut out: W, curve: &[SparsificationPoint]) -> Result<()> {
    writeln!(out, "removed_fraction,method_error,oracle_error")?;
    for p in curve {
        writeln!(out, "{},{},{}", p.removed_fraction, p.method_error, p.oracle_error)?;
    }
    Ok(())
}

pub fn write_histogram_csv<W: Write>(mut out: W, hist: &[(f64, f64)]) -> Result<()> {
    writeln!(out, "bin_center,mass")?;
    for (c, m) in hist {
        writeln!(out, "{c},{m}")?;
    }
    Ok(())
}

/// One row of a per-sample score file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub sample_id: usize,
    pub true_label: usize,
    pub predicted_label: usize,
    pub score: f64,
}

impl ScoreRow {
    pub fn prediction(&self) -> ScoredPrediction {
        ScoredPrediction::new(self.sample_id, self.score, self.predicted_label == self.true_label)
    }
}

/// Parse a score CSV. The score column may be called `trust_score` or `score`;
/// other columns are ignored.
pub fn read_scores_csv<R: Read>(input: R) -> Result<Vec<ScoreRow>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = reader.headers().map_err(csv_error)?.clone();
    let column = |names: &[&str]| {
        headers
            .iter()
            .position(|h| names.contains(&h))
            .ok_or_else(|| Error::Format(format!("score file lacks a column named {}", names.join(" or "))))
    };
    let id_col = column(&["sample_id"])?;
    let true_col = column(&["true_label"])?;
    let pred_col = column(&["predicted_label"])?;
    let score_col = column(&["trust_score", "score"])?;

    let mut rows = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(csv_error)?;
        let field = |col: usize| record.get(col).unwrap_or("");
        let bad = |col: usize| Error::Format(format!("row {}: bad value {:?} in column {col}", line + 1, field(col)));
        rows.push(ScoreRow {
            sample_id: field(id_col).parse().map_err(|_| bad(id_col))?,
            true_label: field(true_col).parse().map_err(|_| bad(true_col))?,
            predicted_label: field(pred_col).parse().map_err(|_| bad(pred_col))?,
            score: field(score_col).parse().map_err(|_| bad(score_col))?,
        });
    }
    Ok(rows)
}

fn csv_error(e: csv::Error) -> Error {
    Error::Format(format!("score csv: {e}"))
}
