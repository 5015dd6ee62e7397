//! Embedding-geometry analysis: spherical k-means on ℓ2-normalized vectors,
//! cosine silhouette in the original space, optimal-k selection over the
//! published grid, and the silhouette summary table.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::TABLE_ORDER;
use crate::linalg::{cosine, mean_std, normalized, NORM_FLOOR};
use crate::models::{Arch, ModelState};
use crate::rng::{derive_seed, seeded_rng};
use crate::splits::Protocol;

/// Cluster counts scanned per embedding space.
pub const K_GRID: [usize; 7] = [3, 4, 5, 6, 7, 8, 10];
/// Seeded initializations per k; best kept by inertia.
pub const KMEANS_RESTARTS: usize = 10;
pub const KMEANS_MAX_ITERS: usize = 300;
/// The fixed cluster count used by the separability-accuracy correlation.
pub const SPEARMAN_K: usize = 5;

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("{n} points cannot support {k} clusters")]
    TooFewPoints { n: usize, k: usize },
    #[error("row {index} has near-zero norm; cosine geometry undefined")]
    ZeroVector { index: usize },
    #[error("silhouette needs at least two clusters")]
    SingleCluster,
    #[error("{labels} labels for {points} points")]
    LengthMismatch { labels: usize, points: usize },
    #[error("PL representation requested from non-PL architecture {0}")]
    InvalidRepresentation(Arch),
    #[error("missing table cell: {0}")]
    MissingCell(String),
    #[error("invalid k grid: {0}")]
    InvalidGrid(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("report schema violation: {0}")]
    Schema(String),
}

/// Which population of embeddings is clustered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Entity {
    User,
    Group,
}

impl Entity {
    pub const ALL: [Entity; 2] = [Entity::User, Entity::Group];

    pub fn tag(self) -> &'static str {
        match self {
            Entity::User => "user",
            Entity::Group => "group",
        }
    }
}

impl std::fmt::Display for Entity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Entity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "user" => Ok(Entity::User),
            "group" => Ok(Entity::Group),
            other => Err(format!("unknown entity {other:?}")),
        }
    }
}

/// Which embedding space of the model is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Representation {
    Main,
    Pl,
}

impl Representation {
    pub fn tag(self) -> &'static str {
        match self {
            Representation::Main => "main",
            Representation::Pl => "pl",
        }
    }
}

impl std::fmt::Display for Representation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Representation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "main" => Ok(Representation::Main),
            "pl" => Ok(Representation::Pl),
            other => Err(format!("unknown representation {other:?}")),
        }
    }
}

/// Output of one spherical k-means fit.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    pub labels: Vec<usize>,
    /// k unit-norm rows.
    pub centroids: Vec<Vec<f64>>,
    /// Sum of cosine distances from each point to its centroid.
    pub inertia: f64,
}

/// Per-k silhouette scores plus the winning k and its labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SilhouetteGrid {
    pub scores: Vec<GridEntry>,
    pub chosen_k: usize,
    pub chosen_score: f64,
    /// Cluster labels at `chosen_k`, kept so downstream overlays reuse them
    /// instead of re-clustering.
    pub labels: Vec<usize>,
    /// Cluster labels at the fixed correlation k
    /// ([`SPEARMAN_K`]), likewise reused downstream.
    pub fixed_k_labels: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridEntry {
    pub k: usize,
    pub score: f64,
}

impl SilhouetteGrid {
    /// Silhouette at a specific grid k.
    pub fn score_at(&self, k: usize) -> Option<f64> {
        self.scores.iter().find(|e| e.k == k).map(|e| e.score)
    }
}

/// One clustering analysis cell: a model's embedding space under one
/// protocol and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub model: Arch,
    pub protocol: Protocol,
    pub seed: u64,
    pub entity: Entity,
    pub representation: Representation,
    pub grid: SilhouetteGrid,
}

impl ClusterReport {
    pub fn new(
        model: Arch,
        protocol: Protocol,
        seed: u64,
        entity: Entity,
        representation: Representation,
        grid: SilhouetteGrid,
    ) -> Result<Self, ClusterError> {
        if representation == Representation::Pl && !model.is_pl() {
            return Err(ClusterError::InvalidRepresentation(model));
        }
        Ok(ClusterReport {
            model,
            protocol,
            seed,
            entity,
            representation,
            grid,
        })
    }
}

/// Pull one embedding population out of a trained model. The main space of
/// the two-branch architecture is the concatenation of its element-wise and
/// concatenation branches; every other space is a single table.
pub fn embedding_matrix(
    state: &ModelState,
    entity: Entity,
    representation: Representation,
) -> Result<Vec<Vec<f64>>, ClusterError> {
    let (main, mlp, pl) = match entity {
        Entity::User => (&state.user_main, &state.user_mlp, &state.user_pl),
        Entity::Group => (&state.group_main, &state.group_mlp, &state.group_pl),
    };
    match representation {
        Representation::Main => {
            let rows = (0..main.rows).map(|i| main.row(i).to_vec());
            match mlp {
                Some(side) => Ok(rows
                    .enumerate()
                    .map(|(i, mut row)| {
                        row.extend_from_slice(side.row(i));
                        row
                    })
                    .collect()),
                None => Ok(rows.collect()),
            }
        }
        Representation::Pl => match pl {
            Some(table) => Ok((0..table.rows).map(|i| table.row(i).to_vec()).collect()),
            None => Err(ClusterError::InvalidRepresentation(state.arch)),
        },
    }
}

/// Spherical k-means: ℓ2-normalize the rows, then alternate max-cosine
/// assignment with normalized-mean centroid updates until labels stabilize
/// (at most [`KMEANS_MAX_ITERS`] iterations), over `restarts` seeded
/// initializations; the restart with the lowest inertia wins. Empty clusters
/// are reseeded to the point farthest from its current centroid.
pub fn spherical_kmeans(
    embeddings: &[Vec<f64>],
    k: usize,
    rng_seed: u64,
    restarts: usize,
) -> Result<ClusterAssignment, ClusterError> {
    let n = embeddings.len();
    if k == 0 || n < k {
        return Err(ClusterError::TooFewPoints { n, k });
    }
    assert!(restarts > 0, "need at least one restart");
    let unit = normalized_rows(embeddings)?;

    let mut rng = seeded_rng(rng_seed);
    let mut best: Option<ClusterAssignment> = None;
    for _ in 0..restarts {
        let (labels, centroids, inertia, _) = lloyd_run(&unit, k, &mut rng);
        if best.as_ref().map_or(true, |b| inertia < b.inertia) {
            best = Some(ClusterAssignment {
                labels,
                centroids,
                inertia,
            });
        }
    }
    Ok(best.expect("at least one restart ran"))
}

fn normalized_rows(embeddings: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, ClusterError> {
    embeddings
        .iter()
        .enumerate()
        .map(|(index, row)| {
            let unit = normalized(row);
            if unit.iter().all(|v| *v == 0.0) {
                Err(ClusterError::ZeroVector { index })
            } else {
                Ok(unit)
            }
        })
        .collect()
}

/// One seeded Lloyd run on unit rows. Returns labels, centroids, final
/// inertia, and the per-iteration inertia trace (used by monotonicity
/// checks).
pub(crate) fn lloyd_run(
    unit: &[Vec<f64>],
    k: usize,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> (Vec<usize>, Vec<Vec<f64>>, f64, Vec<f64>) {
    let n = unit.len();
    let mut centroids = kmeanspp_init(unit, k, rng);
    let mut labels = vec![usize::MAX; n];
    let mut trace = Vec::new();
    let mut inertia = f64::INFINITY;

    for _ in 0..KMEANS_MAX_ITERS {
        // Assignment: highest cosine, first index on ties.
        let mut changed = false;
        inertia = 0.0;
        for (i, row) in unit.iter().enumerate() {
            let mut best_c = 0;
            let mut best_cos = f64::NEG_INFINITY;
            for (c, centroid) in centroids.iter().enumerate() {
                let cs = dot(row, centroid);
                if cs > best_cos {
                    best_cos = cs;
                    best_c = c;
                }
            }
            if labels[i] != best_c {
                labels[i] = best_c;
                changed = true;
            }
            inertia += 1.0 - best_cos;
        }
        trace.push(inertia);
        if !changed {
            break;
        }

        // Update: normalized mean per cluster; empty clusters steal the
        // globally farthest point.
        let dim = unit[0].len();
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (row, &label) in unit.iter().zip(&labels) {
            counts[label] += 1;
            for (s, v) in sums[label].iter_mut().zip(row) {
                *s += *v;
            }
        }
        let mut stolen: Vec<usize> = Vec::new();
        for c in 0..k {
            if counts[c] == 0 {
                let far = farthest_point(unit, &labels, &centroids, &stolen);
                stolen.push(far);
                centroids[c] = unit[far].clone();
                continue;
            }
            let mean_norm: f64 = sums[c].iter().map(|v| v * v).sum::<f64>().sqrt();
            if mean_norm > NORM_FLOOR {
                for v in sums[c].iter_mut() {
                    *v /= mean_norm;
                }
                centroids[c] = std::mem::take(&mut sums[c]);
            }
            // A cancelled-out mean keeps the previous centroid.
        }
    }
    (labels, centroids, inertia, trace)
}

/// k-means++ seeding under cosine distance: first centroid uniform, later
/// ones drawn with probability proportional to squared distance from the
/// nearest chosen centroid.
fn kmeanspp_init(unit: &[Vec<f64>], k: usize, rng: &mut rand_chacha::ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = unit.len();
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    let first = rng.gen_range(0..n);
    centroids.push(unit[first].clone());
    let mut nearest: Vec<f64> = unit.iter().map(|row| 1.0 - dot(row, &unit[first])).collect();
    while centroids.len() < k {
        let weights: Vec<f64> = nearest.iter().map(|d| (d.max(0.0)).powi(2)).collect();
        let total: f64 = weights.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.gen_range(0.0..total);
            let mut chosen = n - 1;
            for (i, w) in weights.iter().enumerate() {
                if target < *w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            // Degenerate geometry (all remaining points coincide with a
            // centroid); fall back to a uniform draw.
            rng.gen_range(0..n)
        };
        centroids.push(unit[pick].clone());
        for (d, row) in nearest.iter_mut().zip(unit) {
            let cand = 1.0 - dot(row, &unit[pick]);
            if cand < *d {
                *d = cand;
            }
        }
    }
    centroids
}

fn farthest_point(
    unit: &[Vec<f64>],
    labels: &[usize],
    centroids: &[Vec<f64>],
    taken: &[usize],
) -> usize {
    let mut best = 0;
    let mut best_d = f64::NEG_INFINITY;
    for (i, row) in unit.iter().enumerate() {
        if taken.contains(&i) {
            continue;
        }
        let d = 1.0 - dot(row, &centroids[labels[i]]);
        if d > best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Mean silhouette with cosine distance `1 - cos` measured in the original
/// space. Points in singleton clusters contribute zero.
pub fn cosine_silhouette(embeddings: &[Vec<f64>], labels: &[usize]) -> Result<f64, ClusterError> {
    let n = embeddings.len();
    if labels.len() != n {
        return Err(ClusterError::LengthMismatch {
            labels: labels.len(),
            points: n,
        });
    }
    let clusters: BTreeSet<usize> = labels.iter().copied().collect();
    if clusters.len() < 2 {
        return Err(ClusterError::SingleCluster);
    }
    for (index, row) in embeddings.iter().enumerate() {
        if crate::linalg::norm(row) <= NORM_FLOOR {
            return Err(ClusterError::ZeroVector { index });
        }
    }

    let cluster_ids: Vec<usize> = clusters.into_iter().collect();
    let cluster_index: Vec<usize> = labels
        .iter()
        .map(|l| cluster_ids.iter().position(|c| c == l).expect("member"))
        .collect();
    let sizes: Vec<usize> = cluster_ids
        .iter()
        .enumerate()
        .map(|(ci, _)| cluster_index.iter().filter(|&&x| x == ci).count())
        .collect();

    // Sum of distances from each point to each cluster, O(N^2) once.
    let mut dist_to_cluster = vec![vec![0.0; cluster_ids.len()]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = 1.0 - cosine(&embeddings[i], &embeddings[j]);
            dist_to_cluster[i][cluster_index[j]] += d;
            dist_to_cluster[j][cluster_index[i]] += d;
        }
    }

    let mut total = 0.0;
    for i in 0..n {
        let own = cluster_index[i];
        if sizes[own] == 1 {
            continue; // contributes 0
        }
        let a = dist_to_cluster[i][own] / (sizes[own] - 1) as f64;
        let mut b = f64::INFINITY;
        for (ci, &size) in sizes.iter().enumerate() {
            if ci != own && size > 0 {
                b = b.min(dist_to_cluster[i][ci] / size as f64);
            }
        }
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    Ok(total / n as f64)
}

/// Fit every k in [`K_GRID`] and keep the silhouette-maximizing one,
/// breaking ties toward the smallest k.
pub fn optimal_k_scan(embeddings: &[Vec<f64>], rng_seed: u64) -> Result<SilhouetteGrid, ClusterError> {
    optimal_k_scan_over(embeddings, rng_seed, &K_GRID, SPEARMAN_K)
}

/// [`optimal_k_scan`] over a caller-supplied grid. `fixed_k` is the k whose
/// labels are kept for the fixed-k correlation series; it must be on the
/// grid.
pub fn optimal_k_scan_over(
    embeddings: &[Vec<f64>],
    rng_seed: u64,
    grid: &[usize],
    fixed_k: usize,
) -> Result<SilhouetteGrid, ClusterError> {
    let Some(&max_k) = grid.iter().max() else {
        return Err(ClusterError::InvalidGrid("empty k grid".into()));
    };
    if grid.iter().any(|&k| k < 2) {
        return Err(ClusterError::InvalidGrid("grid contains k < 2".into()));
    }
    let Some(fixed_idx) = grid.iter().position(|&k| k == fixed_k) else {
        return Err(ClusterError::InvalidGrid(format!(
            "fixed correlation k={fixed_k} is not on the grid {grid:?}"
        )));
    };
    if embeddings.len() <= max_k {
        return Err(ClusterError::TooFewPoints {
            n: embeddings.len(),
            k: max_k,
        });
    }
    let mut scores = Vec::with_capacity(grid.len());
    let mut labelled: Vec<Vec<usize>> = Vec::with_capacity(grid.len());
    for &k in grid {
        let fit = spherical_kmeans(
            embeddings,
            k,
            derive_seed(rng_seed, &format!("k{k}")),
            KMEANS_RESTARTS,
        )?;
        let score = cosine_silhouette(embeddings, &fit.labels)?;
        scores.push(GridEntry { k, score });
        labelled.push(fit.labels);
    }
    let chosen = select_chosen(&scores);
    Ok(SilhouetteGrid {
        chosen_k: scores[chosen].k,
        chosen_score: scores[chosen].score,
        labels: labelled[chosen].clone(),
        fixed_k_labels: labelled[fixed_idx].clone(),
        scores,
    })
}

/// Index of the best grid entry: maximum score, smallest k on ties.
pub(crate) fn select_chosen(scores: &[GridEntry]) -> usize {
    let mut best = 0;
    for (i, entry) in scores.iter().enumerate().skip(1) {
        if entry.score > scores[best].score {
            best = i;
        }
    }
    best
}

pub fn save_cluster_report(report: &ClusterReport, path: &Path) -> Result<(), ClusterError> {
    let text =
        serde_json::to_string_pretty(report).map_err(|e| ClusterError::Schema(e.to_string()))?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn load_cluster_report(path: &Path) -> Result<ClusterReport, ClusterError> {
    let text = std::fs::read_to_string(path)?;
    let report: ClusterReport =
        serde_json::from_str(&text).map_err(|e| ClusterError::Schema(e.to_string()))?;
    if report.representation == Representation::Pl && !report.model.is_pl() {
        return Err(ClusterError::Schema(format!(
            "PL representation stored for non-PL model {}",
            report.model
        )));
    }
    Ok(report)
}

/// One row of the silhouette table: `mean ± std` of the chosen-k score per
/// embedding space, with PL columns absent for the plain models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SilhouetteRow {
    pub model: Arch,
    pub user_main: (f64, f64),
    pub user_pl: Option<(f64, f64)>,
    pub group_main: (f64, f64),
    pub group_pl: Option<(f64, f64)>,
}

/// Aggregate leave-one-out cluster reports into the published table shape:
/// six rows, four `mean ± std` columns. Every (model, entity,
/// representation, seed) cell must be present.
pub fn build_silhouette_table(
    reports: &[ClusterReport],
    seeds: &[u64],
) -> Result<Vec<SilhouetteRow>, ClusterError> {
    let cell = |model: Arch, entity: Entity, representation: Representation| {
        let mut values = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let found = reports.iter().find(|r| {
                r.model == model
                    && r.protocol == Protocol::LeaveOneOut
                    && r.seed == seed
                    && r.entity == entity
                    && r.representation == representation
            });
            match found {
                Some(r) => values.push(r.grid.chosen_score),
                None => {
                    return Err(ClusterError::MissingCell(format!(
                        "{model} {entity} {representation} seed {seed}"
                    )))
                }
            }
        }
        Ok(mean_std(&values))
    };

    let mut rows = Vec::with_capacity(TABLE_ORDER.len());
    for model in TABLE_ORDER {
        let pl = |entity| -> Result<Option<(f64, f64)>, ClusterError> {
            if model.is_pl() {
                Ok(Some(cell(model, entity, Representation::Pl)?))
            } else {
                Ok(None)
            }
        };
        rows.push(SilhouetteRow {
            model,
            user_main: cell(model, Entity::User, Representation::Main)?,
            user_pl: pl(Entity::User)?,
            group_main: cell(model, Entity::Group, Representation::Main)?,
            group_pl: pl(Entity::Group)?,
        });
    }
    Ok(rows)
}

/// CSV emitter for the silhouette table, four decimals per statistic and
/// `--` for the plain models' PL columns.
pub fn write_silhouette_table(rows: &[SilhouetteRow], path: &Path) -> Result<(), ClusterError> {
    let mut out = String::from(
        "model,user_main_mean,user_main_std,user_pl_mean,user_pl_std,\
         group_main_mean,group_main_std,group_pl_mean,group_pl_std\n",
    );
    let fmt_pair = |pair: Option<(f64, f64)>| match pair {
        Some((mean, std)) => format!("{mean:.4},{std:.4}"),
        None => "--,--".to_string(),
    };
    for row in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            row.model.display_name(),
            fmt_pair(Some(row.user_main)),
            fmt_pair(row.user_pl),
            fmt_pair(Some(row.group_main)),
            fmt_pair(row.group_pl),
        );
    }
    std::fs::write(path, out)?;
    Ok(())
}
