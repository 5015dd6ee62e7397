//! Sampled top-K ranking metrics, per-seed aggregation, and the
//! separability-accuracy correlation.
//!
//! Each held-out positive is ranked inside its 100-candidate set with
//! pessimistic tie handling (the positive loses every tie), HR@5 and NDCG@5
//! are averaged over users and reported as percentages, and per-seed results
//! aggregate to mean plus sample standard deviation. Spearman correlation
//! with average-rank ties supports the silhouette-versus-accuracy analysis.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::mean_std;
use crate::models::{forward, Arch, ModelError, ModelState};
use crate::splits::{CandidateSet, Protocol, CANDIDATE_SET_SIZE};

/// Ranking cutoff used throughout the reported metrics.
pub const TOP_K: usize = 5;

/// Report-table row order: each baseline directly above its PL variant.
pub const TABLE_ORDER: [Arch; 6] = [
    Arch::Mf,
    Arch::MfPl,
    Arch::Mlp,
    Arch::MlpPl,
    Arch::NeuMf,
    Arch::NeuMfPl,
];

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("cannot aggregate an empty result list")]
    EmptyResults,
    #[error("need at least {needed} seeds per cell, have {got}")]
    TooFewSeeds { needed: usize, got: usize },
    #[error("length mismatch: {xs} xs vs {ys} ys")]
    LengthMismatch { xs: usize, ys: usize },
    #[error("need at least {needed} points, have {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("rank correlation undefined: an input has zero rank variance")]
    ZeroVariance,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("report schema violation: {0}")]
    Schema(String),
}

/// Position of one user's held-out positive among its 100 candidates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankResult {
    pub user_id: usize,
    /// 1 is best; 100 means every negative scored at least as high.
    pub rank: usize,
}

/// Ranking metrics for one (model, protocol, seed) run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: Arch,
    pub protocol: Protocol,
    pub seed: u64,
    /// Percent of users whose positive landed in the top 5.
    pub hr_at_5: f64,
    /// Mean per-user `1/log2(rank+1)` truncated at 5, as a percent.
    pub ndcg_at_5: f64,
    pub per_user: Vec<RankResult>,
}

/// Rank the held-out positive among its candidates under pessimistic ties:
/// `rank = 1 + |{negatives scoring >= the positive}|`, so 100 identical
/// scores put the positive last.
pub fn rank_positive(
    state: &ModelState,
    candidates: &CandidateSet,
    x_u: &[f64],
) -> Result<RankResult, EvalError> {
    assert_eq!(
        candidates.negatives.len() + 1,
        CANDIDATE_SET_SIZE,
        "candidate set must hold {CANDIDATE_SET_SIZE} entries"
    );
    let u = candidates.user_id;
    let pos = forward(state, u, candidates.positive_group, x_u)?.score;
    let mut beaten = 0usize;
    for &g in &candidates.negatives {
        if forward(state, u, g, x_u)?.score >= pos {
            beaten += 1;
        }
    }
    Ok(RankResult {
        user_id: u,
        rank: 1 + beaten,
    })
}

/// Rank every candidate set with the same model. `user_features[u]` is user
/// `u`'s 16-d survey vector.
pub fn rank_all(
    state: &ModelState,
    sets: &[CandidateSet],
    user_features: &[Vec<f64>],
) -> Result<Vec<RankResult>, EvalError> {
    sets.iter()
        .map(|cs| rank_positive(state, cs, &user_features[cs.user_id]))
        .collect()
}

/// Hit ratio at `k` as a percentage.
pub fn hr_at_k(results: &[RankResult], k: usize) -> Result<f64, EvalError> {
    if results.is_empty() {
        return Err(EvalError::EmptyResults);
    }
    let hits = results.iter().filter(|r| r.rank <= k).count();
    Ok(100.0 * hits as f64 / results.len() as f64)
}

/// NDCG at `k` as a percentage: the single relevant item contributes
/// `1/log2(rank+1)` when ranked within `k`, zero otherwise (ideal DCG is 1).
pub fn ndcg_at_k(results: &[RankResult], k: usize) -> Result<f64, EvalError> {
    if results.is_empty() {
        return Err(EvalError::EmptyResults);
    }
    let total: f64 = results
        .iter()
        .map(|r| {
            if r.rank <= k {
                1.0 / ((r.rank + 1) as f64).log2()
            } else {
                0.0
            }
        })
        .sum();
    Ok(100.0 * total / results.len() as f64)
}

/// Assemble a full report for one run.
pub fn build_report(
    model: Arch,
    protocol: Protocol,
    seed: u64,
    per_user: Vec<RankResult>,
) -> Result<EvalReport, EvalError> {
    let hr = hr_at_k(&per_user, TOP_K)?;
    let ndcg = ndcg_at_k(&per_user, TOP_K)?;
    Ok(EvalReport {
        model,
        protocol,
        seed,
        hr_at_5: hr,
        ndcg_at_5: ndcg,
        per_user,
    })
}

/// Mean and sample standard deviation (n-1) over per-seed metric values.
pub fn aggregate_seeds(values: &[f64]) -> Result<(f64, f64), EvalError> {
    if values.len() < 2 {
        return Err(EvalError::TooFewSeeds {
            needed: 2,
            got: values.len(),
        });
    }
    Ok(mean_std(values))
}

/// Average ranks (1-based) with ties receiving the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("finite values"));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // Positions i..=j (0-based) share the average of ranks i+1..=j+1.
        let avg = (i + j + 2) as f64 / 2.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation: Pearson correlation of average ranks.
pub fn spearman_rho(xs: &[f64], ys: &[f64]) -> Result<f64, EvalError> {
    if xs.len() != ys.len() {
        return Err(EvalError::LengthMismatch {
            xs: xs.len(),
            ys: ys.len(),
        });
    }
    if xs.len() < 3 {
        return Err(EvalError::TooFewPoints {
            needed: 3,
            got: xs.len(),
        });
    }
    let rx = average_ranks(xs);
    let ry = average_ranks(ys);
    let n = rx.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (x, y) in rx.iter().zip(&ry) {
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
        sxy += (x - mx) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(EvalError::ZeroVariance);
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// The separability-accuracy trade-off statistic: Spearman correlation of
/// (silhouette at fixed k=5, HR@5) pairs, one point per model-seed run.
pub fn separability_accuracy_analysis(pairs: &[(f64, f64)]) -> Result<f64, EvalError> {
    let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    spearman_rho(&xs, &ys)
}

/// Persist one run's report as pretty JSON.
pub fn save_eval_report(report: &EvalReport, path: &Path) -> Result<(), EvalError> {
    let text =
        serde_json::to_string_pretty(report).map_err(|e| EvalError::Schema(e.to_string()))?;
    std::fs::write(path, text)?;
    Ok(())
}

/// Load a report written by [`save_eval_report`].
pub fn load_eval_report(path: &Path) -> Result<EvalReport, EvalError> {
    let text = std::fs::read_to_string(path)?;
    let report: EvalReport =
        serde_json::from_str(&text).map_err(|e| EvalError::Schema(e.to_string()))?;
    if report.hr_at_5 < report.ndcg_at_5 {
        return Err(EvalError::Schema(format!(
            "NDCG@5 {} exceeds HR@5 {}",
            report.ndcg_at_5, report.hr_at_5
        )));
    }
    Ok(report)
}

/// One `mean ± std` cell of a report table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricCell {
    pub mean: f64,
    pub std: f64,
}

/// Build the ranking-metrics table (HR@5 and NDCG@5 cells per model) from
/// per-seed reports, rows ordered as in [`TABLE_ORDER`].
pub fn build_metric_table(
    reports: &[EvalReport],
) -> Result<Vec<(Arch, MetricCell, MetricCell)>, EvalError> {
    let mut rows = Vec::with_capacity(TABLE_ORDER.len());
    for arch in TABLE_ORDER {
        let hrs: Vec<f64> = reports
            .iter()
            .filter(|r| r.model == arch)
            .map(|r| r.hr_at_5)
            .collect();
        let ndcgs: Vec<f64> = reports
            .iter()
            .filter(|r| r.model == arch)
            .map(|r| r.ndcg_at_5)
            .collect();
        let (hm, hs) = aggregate_seeds(&hrs)?;
        let (nm, ns) = aggregate_seeds(&ndcgs)?;
        rows.push((
            arch,
            MetricCell { mean: hm, std: hs },
            MetricCell { mean: nm, std: ns },
        ));
    }
    Ok(rows)
}

/// Write a ranking-metrics table as CSV: one row per model, two decimal
/// places, matching the published table layout.
pub fn write_metric_table(
    rows: &[(Arch, MetricCell, MetricCell)],
    path: &Path,
) -> Result<(), EvalError> {
    let mut out = String::from("model,hr5_mean,hr5_std,ndcg5_mean,ndcg5_std\n");
    for (arch, hr, ndcg) in rows {
        out.push_str(&format!(
            "{},{:.2},{:.2},{:.2},{:.2}\n",
            arch.display_name(),
            hr.mean,
            hr.std,
            ndcg.mean,
            ndcg.std
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}
