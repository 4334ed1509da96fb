//! Success rate, SPL, answer-weighted SPL and report rows.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tasks::{EpisodeResult, TaskKind};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("empty result set")]
    Empty,
    #[error("episode {id}: negative path length")]
    NegativeLength { id: u64 },
    #[error("episode {id}: answer score {sigma} outside 1..=5")]
    SigmaOutOfRange { id: u64, sigma: u8 },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn nonempty(results: &[EpisodeResult]) -> Result<(), MetricsError> {
    if results.is_empty() {
        Err(MetricsError::Empty)
    } else {
        Ok(())
    }
}

/// `L* / max(L, L*)`, with 1 when both are zero.
fn efficiency(r: &EpisodeResult) -> Result<f64, MetricsError> {
    if r.path_length_m < 0.0 || r.shortest_m < 0.0 {
        return Err(MetricsError::NegativeLength { id: r.id });
    }
    let denom = r.path_length_m.max(r.shortest_m);
    Ok(if denom == 0.0 { 1.0 } else { r.shortest_m / denom })
}

fn sigma(r: &EpisodeResult) -> Result<Option<u8>, MetricsError> {
    match r.answer_score {
        Some(s) if !(1..=5).contains(&s) => Err(MetricsError::SigmaOutOfRange { id: r.id, sigma: s }),
        s => Ok(s),
    }
}

/// Percentage of successful episodes.
pub fn success_rate(results: &[EpisodeResult]) -> Result<f64, MetricsError> {
    nonempty(results)?;
    Ok(100.0 * results.iter().filter(|r| r.success).count() as f64 / results.len() as f64)
}

/// `100/N · Σ S_i · L*_i / max(L_i, L*_i)`.
pub fn spl(results: &[EpisodeResult]) -> Result<f64, MetricsError> {
    nonempty(results)?;
    let mut total = 0.0;
    for r in results {
        let e = efficiency(r)?;
        if r.success {
            total += e;
        }
    }
    Ok(100.0 * total / results.len() as f64)
}

/// `100/N · Σ (σ_i − 1)/4 · L*_i / max(L_i, L*_i)`; results without σ
/// contribute 0.
pub fn spl_aeqa(results: &[EpisodeResult]) -> Result<f64, MetricsError> {
    nonempty(results)?;
    let mut total = 0.0;
    for r in results {
        let e = efficiency(r)?;
        if let Some(s) = sigma(r)? {
            total += (s as f64 - 1.0) / 4.0 * e;
        }
    }
    Ok(100.0 * total / results.len() as f64)
}

/// Mean σ mapped linearly from [1, 5] to [0, 100]; missing σ counts as 1.
pub fn answering_score(results: &[EpisodeResult]) -> Result<f64, MetricsError> {
    nonempty(results)?;
    let mut total = 0.0;
    for r in results {
        total += sigma(r)?.unwrap_or(1) as f64;
    }
    let mean = total / results.len() as f64;
    Ok((mean - 1.0) / 4.0 * 100.0)
}

/// Mean executed actions (AR, ImageNav) or meters travelled (InfoSeek).
pub fn mean_trajectory(results: &[EpisodeResult]) -> Result<f64, MetricsError> {
    nonempty(results)?;
    let total: f64 = results
        .iter()
        .map(|r| match r.task {
            TaskKind::InfoSeek => r.path_length_m,
            _ => r.steps_executed as f64,
        })
        .sum();
    Ok(total / results.len() as f64)
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            r[idx[k]] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties. `None` for
/// mismatched lengths, fewer than two points or a constant input.
pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        return None;
    }
    Some(cov / (va * vb).sqrt())
}

/// One line of `report.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub task: String,
    pub model: String,
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "SR")]
    pub sr: f64,
    #[serde(rename = "SPL")]
    pub spl: f64,
    pub mean_traj: f64,
    pub ans_score: f64,
    pub spl_aeqa: f64,
    pub wm_inferences_mean: f64,
    pub seed: u64,
    pub episodes: usize,
    pub fallbacks: usize,
}

impl ReportRow {
    pub fn from_results(results: &[EpisodeResult]) -> Result<Self, MetricsError> {
        nonempty(results)?;
        let first = &results[0];
        let n = results.len() as f64;
        Ok(ReportRow {
            task: first.task.label().to_string(),
            model: first.model.clone(),
            m: first.m,
            sr: success_rate(results)?,
            spl: spl(results)?,
            mean_traj: mean_trajectory(results)?,
            ans_score: answering_score(results)?,
            spl_aeqa: spl_aeqa(results)?,
            wm_inferences_mean: results.iter().map(|r| r.wm_inferences as f64).sum::<f64>() / n,
            seed: first.seed,
            episodes: results.len(),
            fallbacks: results.iter().map(|r| r.fallbacks).sum(),
        })
    }
}

/// Groups results by (task, model, M, seed) and aggregates each group.
pub fn report_rows(results: &[EpisodeResult]) -> Result<Vec<ReportRow>, MetricsError> {
    let mut groups: BTreeMap<(TaskKind, String, usize, u64), Vec<EpisodeResult>> = BTreeMap::new();
    for r in results {
        groups.entry((r.task, r.model.clone(), r.m, r.seed)).or_default().push(r.clone());
    }
    groups.values().map(|g| ReportRow::from_results(g)).collect()
}

/// Writes any serializable rows as CSV with a header.
pub fn write_csv<T: Serialize, W: Write>(rows: &[T], out: W) -> Result<(), MetricsError> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Human-readable table.
pub fn format_table(rows: &[ReportRow]) -> String {
    let mut s = format!(
        "{:<9} {:<28} {:>3} {:>7} {:>7} {:>9} {:>7} {:>8} {:>7} {:>5}\n",
        "task", "model", "M", "SR", "SPL", "mean_traj", "ans", "spl_aeqa", "wm_inf", "seed"
    );
    for r in rows {
        s.push_str(&format!(
            "{:<9} {:<28} {:>3} {:>7.2} {:>7.2} {:>9.2} {:>7.2} {:>8.2} {:>7.2} {:>5}\n",
            r.task, r.model, r.m, r.sr, r.spl, r.mean_traj, r.ans_score, r.spl_aeqa, r.wm_inferences_mean, r.seed
        ));
    }
    s
}
