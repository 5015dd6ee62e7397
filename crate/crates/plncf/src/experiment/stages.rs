//! The six pipeline stages. Each stage reads its inputs from earlier stage
//! directories, writes into `out/{stage}/...`, and replaces its record in the
//! run manifest with fresh digests and wall-clock time.

use std::path::PathBuf;
use std::time::Instant;

use rayon::prelude::*;

use crate::clustering::{
    build_silhouette_table, embedding_matrix, load_cluster_report, optimal_k_scan_over,
    save_cluster_report, write_silhouette_table, ClusterReport, Entity, Representation,
};
use crate::dataset::{generate_synthetic_dataset, load_bundle, write_csv_exports, DatasetBundle};
use crate::eval::{
    build_metric_table, build_report, load_eval_report, rank_all, save_eval_report,
    separability_accuracy_analysis, write_metric_table, EvalReport,
};
use crate::figures::{
    emit_panel_grid, overlay_stem, write_coords_csv, FigurePanel, Projection2D,
};
use crate::models::Arch;
use crate::rng::{derive_seed, seeded_rng};
use crate::splits::{
    build_candidate_set, leave_one_out_split, load_split, ratio_split, save_split, Protocol,
    SplitPlan,
};
use crate::training::{
    load_checkpoint, save_checkpoint, train, write_trainlog_csv, Checkpoint, CheckpointMeta,
};
use crate::tsne::tsne_project;

use super::manifest::RunManifest;
use super::{ExperimentContext, ExperimentError, RunKey};

/// What a stage did: how many runs executed, how many were already complete,
/// and every file now covered by the manifest record.
#[derive(Debug, Clone, PartialEq)]
pub struct StageOutcome {
    pub stage: &'static str,
    pub ran: usize,
    pub skipped: usize,
    pub files: Vec<PathBuf>,
}

fn finalize(
    ctx: &ExperimentContext,
    stage: &'static str,
    started: Instant,
    ran: usize,
    skipped: usize,
    mut files: Vec<PathBuf>,
) -> Result<StageOutcome, ExperimentError> {
    files.sort();
    let mut manifest = RunManifest::load_or_init(&ctx.out_root, &ctx.config.config_hash())?;
    manifest.record_stage(stage, started.elapsed().as_secs_f64(), &files, &ctx.out_root)?;
    manifest.save(&ctx.out_root)?;
    Ok(StageOutcome {
        stage,
        ran,
        skipped,
        files,
    })
}

fn load_dataset(ctx: &ExperimentContext) -> Result<DatasetBundle, ExperimentError> {
    let path = ctx.dataset_path();
    if !path.exists() {
        return Err(ExperimentError::MissingDataset(path));
    }
    Ok(load_bundle(&path)?)
}

/// Embedding spaces a model exposes for clustering and overlays.
fn spaces(arch: Arch) -> Vec<(Entity, Representation)> {
    let mut out = vec![
        (Entity::User, Representation::Main),
        (Entity::Group, Representation::Main),
    ];
    if arch.is_pl() {
        out.push((Entity::User, Representation::Pl));
        out.push((Entity::Group, Representation::Pl));
    }
    out
}

fn cluster_report_path(ctx: &ExperimentContext, key: &RunKey, entity: Entity, repr: Representation) -> PathBuf {
    ctx.run_dir("cluster", key)
        .join(format!("{}_{}.json", entity.tag(), repr.tag()))
}

/// Generate the shared synthetic cohort and its CSV exports.
pub fn run_generate(ctx: &ExperimentContext) -> Result<StageOutcome, ExperimentError> {
    let started = Instant::now();
    let dir = ctx.stage_dir("generate");
    std::fs::create_dir_all(&dir)?;
    let bundle = generate_synthetic_dataset(&ctx.config.dataset.generator_config())?;
    let dataset_path = ctx.dataset_path();
    crate::dataset::save_bundle(&bundle, &dataset_path)?;
    write_csv_exports(&bundle, &dir)?;
    let files = vec![
        dataset_path,
        dir.join("users.csv"),
        dir.join("groups.csv"),
        dir.join("interactions.csv"),
    ];
    finalize(ctx, "generate", started, 1, 0, files)
}

/// Train every requested matrix cell; completed runs (checkpoint digest and
/// epoch count both matching) are skipped.
pub fn run_train(
    ctx: &ExperimentContext,
    keys: &[RunKey],
) -> Result<StageOutcome, ExperimentError> {
    let started = Instant::now();
    let bundle = load_dataset(ctx)?;
    let results: Vec<(Vec<PathBuf>, bool)> = ctx.pool()?.install(|| {
        keys.par_iter()
            .map(|key| train_one(ctx, &bundle, key))
            .collect::<Result<_, ExperimentError>>()
    })?;
    let skipped = results.iter().filter(|(_, s)| *s).count();
    let files = results.into_iter().flat_map(|(f, _)| f).collect();
    finalize(ctx, "train", started, keys.len() - skipped, skipped, files)
}

fn train_one(
    ctx: &ExperimentContext,
    bundle: &DatasetBundle,
    key: &RunKey,
) -> Result<(Vec<PathBuf>, bool), ExperimentError> {
    let dir = ctx.run_dir("train", key);
    std::fs::create_dir_all(&dir)?;
    let lambda = ctx.config.lambda.value(key.arch, key.protocol);
    let train_config = ctx
        .config
        .train
        .train_config(key.seed, key.protocol, lambda);
    let digest = train_config.digest(key.arch);

    let checkpoint_path = dir.join("checkpoint.bin");
    let trainlog_path = dir.join("trainlog.csv");
    let split_path = dir.join("split.json");
    let files = vec![
        checkpoint_path.clone(),
        trainlog_path.clone(),
        split_path.clone(),
    ];

    if checkpoint_path.exists() && trainlog_path.exists() && split_path.exists() {
        if let Ok(existing) = load_checkpoint(&checkpoint_path) {
            if existing.meta.config_digest == digest
                && existing.meta.epoch == train_config.epochs
                && existing.meta.n_users == bundle.n_users()
                && existing.meta.n_groups == bundle.n_groups()
            {
                return Ok((files, true));
            }
        }
    }

    let plan = build_split(bundle, key)?;
    save_split(&plan, &split_path)?;
    let outcome = train(bundle, &plan, key.arch, &train_config)?;
    let checkpoint = Checkpoint {
        meta: CheckpointMeta {
            arch: key.arch,
            protocol: key.protocol,
            seed: key.seed,
            n_users: bundle.n_users(),
            n_groups: bundle.n_groups(),
            epoch: train_config.epochs,
            config_digest: digest,
        },
        params: outcome.state,
        opt: outcome.opt,
        rng: outcome.rng,
    };
    save_checkpoint(&checkpoint, &checkpoint_path)?;
    write_trainlog_csv(&outcome.log, &trainlog_path)?;
    Ok((files, false))
}

fn build_split(bundle: &DatasetBundle, key: &RunKey) -> Result<SplitPlan, ExperimentError> {
    let seed = derive_seed(key.seed, "split");
    let plan = match key.protocol {
        Protocol::LeaveOneOut => leave_one_out_split(bundle, seed)?,
        Protocol::Ratio70_15_15 => ratio_split(bundle, seed)?,
    };
    Ok(plan)
}

fn require_runs(missing: Vec<String>) -> Result<(), ExperimentError> {
    if missing.is_empty() {
        Ok(())
    } else {
        Err(ExperimentError::MissingRuns(missing))
    }
}

/// Rank every test positive against its sampled candidates and store one
/// report per run.
pub fn run_evaluate(
    ctx: &ExperimentContext,
    keys: &[RunKey],
) -> Result<StageOutcome, ExperimentError> {
    let started = Instant::now();
    let bundle = load_dataset(ctx)?;
    require_runs(
        keys.iter()
            .filter(|key| {
                !ctx.run_dir("train", key).join("checkpoint.bin").exists()
                    || !ctx.run_dir("train", key).join("split.json").exists()
            })
            .map(|key| format!("train/{key}"))
            .collect(),
    )?;
    let features: Vec<Vec<f64>> = bundle.users.iter().map(|u| u.features()).collect();
    let files: Vec<PathBuf> = ctx.pool()?.install(|| {
        keys.par_iter()
            .map(|key| evaluate_one(ctx, &bundle, &features, key))
            .collect::<Result<_, ExperimentError>>()
    })?;
    finalize(ctx, "evaluate", started, keys.len(), 0, files)
}

fn evaluate_one(
    ctx: &ExperimentContext,
    bundle: &DatasetBundle,
    features: &[Vec<f64>],
    key: &RunKey,
) -> Result<PathBuf, ExperimentError> {
    let train_dir = ctx.run_dir("train", key);
    let checkpoint = load_checkpoint(&train_dir.join("checkpoint.bin"))?;
    let plan = load_split(&train_dir.join("split.json"))?;
    let positives = plan.train_positives_by_user(bundle.n_users());

    // The test candidate draw has its own stream so evaluation never
    // perturbs (and is never perturbed by) training-side sampling.
    let mut rng = seeded_rng(derive_seed(key.seed, "test"));
    let mut sets = Vec::with_capacity(plan.test.len());
    for held in &plan.test {
        sets.push(build_candidate_set(
            held,
            &positives[held.user_id],
            bundle.n_groups(),
            &mut rng,
        )?);
    }
    let ranks = rank_all(&checkpoint.params, &sets, features)?;
    let report = build_report(key.arch, key.protocol, key.seed, ranks)?;
    let dir = ctx.run_dir("evaluate", key);
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("eval.json");
    save_eval_report(&report, &path)?;
    Ok(path)
}

/// Scan the k grid over every embedding space of every run.
pub fn run_cluster(
    ctx: &ExperimentContext,
    keys: &[RunKey],
) -> Result<StageOutcome, ExperimentError> {
    let started = Instant::now();
    require_runs(
        keys.iter()
            .filter(|key| !ctx.run_dir("train", key).join("checkpoint.bin").exists())
            .map(|key| format!("train/{key}"))
            .collect(),
    )?;
    let files: Vec<PathBuf> = ctx.pool()?.install(|| {
        keys.par_iter()
            .map(|key| cluster_one(ctx, key))
            .collect::<Result<Vec<Vec<PathBuf>>, ExperimentError>>()
    })?
    .into_iter()
    .flatten()
    .collect();
    finalize(ctx, "cluster", started, keys.len(), 0, files)
}

fn cluster_one(ctx: &ExperimentContext, key: &RunKey) -> Result<Vec<PathBuf>, ExperimentError> {
    let checkpoint = load_checkpoint(&ctx.run_dir("train", key).join("checkpoint.bin"))?;
    let dir = ctx.run_dir("cluster", key);
    std::fs::create_dir_all(&dir)?;
    let mut files = Vec::new();
    for (entity, repr) in spaces(key.arch) {
        let embeddings = embedding_matrix(&checkpoint.params, entity, repr)?;
        let grid = optimal_k_scan_over(
            &embeddings,
            derive_seed(
                key.seed,
                &format!("cluster-{}-{}", entity.tag(), repr.tag()),
            ),
            &ctx.config.clustering.k_grid,
            ctx.config.clustering.spearman_k,
        )?;
        let report = ClusterReport::new(key.arch, key.protocol, key.seed, entity, repr, grid)?;
        let path = cluster_report_path(ctx, key, entity, repr);
        save_cluster_report(&report, &path)?;
        files.push(path);
    }
    Ok(files)
}

/// Project every clustered embedding space to 2-d and emit the overlay SVG
/// plus its coordinate dump.
pub fn run_visualize(
    ctx: &ExperimentContext,
    keys: &[RunKey],
) -> Result<StageOutcome, ExperimentError> {
    let started = Instant::now();
    let mut missing = Vec::new();
    for key in keys {
        if !ctx.run_dir("train", key).join("checkpoint.bin").exists() {
            missing.push(format!("train/{key}"));
        }
        for (entity, repr) in spaces(key.arch) {
            if !cluster_report_path(ctx, key, entity, repr).exists() {
                missing.push(format!("cluster/{key}/{}_{}", entity.tag(), repr.tag()));
            }
        }
    }
    require_runs(missing)?;
    let files: Vec<PathBuf> = ctx.pool()?.install(|| {
        keys.par_iter()
            .map(|key| visualize_one(ctx, key))
            .collect::<Result<Vec<Vec<PathBuf>>, ExperimentError>>()
    })?
    .into_iter()
    .flatten()
    .collect();
    finalize(ctx, "visualize", started, keys.len(), 0, files)
}

fn repr_label(repr: Representation) -> &'static str {
    match repr {
        Representation::Main => "main",
        Representation::Pl => "pseudo-label",
    }
}

fn visualize_one(ctx: &ExperimentContext, key: &RunKey) -> Result<Vec<PathBuf>, ExperimentError> {
    let checkpoint = load_checkpoint(&ctx.run_dir("train", key).join("checkpoint.bin"))?;
    let dir = ctx.run_dir("visualize", key);
    std::fs::create_dir_all(&dir)?;
    let mut files = Vec::new();
    for (entity, repr) in spaces(key.arch) {
        let report = load_cluster_report(&cluster_report_path(ctx, key, entity, repr))?;
        let projection = project_space(ctx, key, &checkpoint, entity, repr, &report)?;
        let stem = overlay_stem(key.arch, entity, repr, key.seed);
        let title = format!(
            "{} {} {} embeddings ({}, seed {})",
            key.arch.display_name(),
            entity.tag(),
            repr_label(repr),
            key.protocol.tag(),
            key.seed
        );
        let svg_path = dir.join(format!("{stem}.svg"));
        crate::figures::emit_overlay_figure(&projection, &title, &svg_path)?;
        let csv_path = dir.join(format!("tsne_coords_{}_{}.csv", entity.tag(), repr.tag()));
        write_coords_csv(&projection, &csv_path)?;
        files.push(svg_path);
        files.push(csv_path);
    }
    Ok(files)
}

/// t-SNE of one checkpointed space, overlaid with the clustering stage's
/// chosen-k labels. The projection seed depends only on the run seed and the
/// space, so the report stage reproduces identical coordinates.
fn project_space(
    ctx: &ExperimentContext,
    key: &RunKey,
    checkpoint: &Checkpoint,
    entity: Entity,
    repr: Representation,
    report: &ClusterReport,
) -> Result<Projection2D, ExperimentError> {
    let embeddings = embedding_matrix(&checkpoint.params, entity, repr)?;
    let tsne_seed = derive_seed(key.seed, &format!("tsne-{}-{}", entity.tag(), repr.tag()));
    let embedding = tsne_project(&embeddings, &ctx.config.tsne.tsne_config(tsne_seed))?;
    Ok(Projection2D::from_embedding(
        &embedding,
        report.grid.labels.clone(),
    )?)
}

/// The published-figure cells: baseline-vs-variant user panels under
/// leave-one-out. The first pair renders side by side; the remaining four
/// render as a 2x2 grid.
const FIGURE_PAIR: [(Arch, Representation); 2] = [
    (Arch::NeuMf, Representation::Main),
    (Arch::NeuMfPl, Representation::Pl),
];
const FIGURE_QUAD: [(Arch, Representation); 4] = [
    (Arch::Mf, Representation::Main),
    (Arch::MfPl, Representation::Pl),
    (Arch::Mlp, Representation::Main),
    (Arch::MlpPl, Representation::Pl),
];

/// Aggregate the full matrix into the published tables, the per-protocol
/// separability-accuracy correlations, and the overlay figures.
pub fn run_report(ctx: &ExperimentContext) -> Result<StageOutcome, ExperimentError> {
    let started = Instant::now();
    let config = &ctx.config;
    for arch in Arch::ALL {
        if !config.models.contains(&arch) {
            return Err(ExperimentError::Config(format!(
                "the report stage needs all six models; {arch} is missing from the config"
            )));
        }
    }
    for protocol in Protocol::ALL {
        if !config.protocols.contains(&protocol) {
            return Err(ExperimentError::Config(format!(
                "the report stage needs both protocols; {protocol} is missing from the config"
            )));
        }
    }
    if config.seeds.len() < 2 {
        return Err(ExperimentError::Config(
            "the report stage needs at least two seeds for mean/std aggregation".into(),
        ));
    }

    let matrix = ctx.matrix();
    let figure_seed = config.seeds[0];
    let mut missing = Vec::new();
    for key in &matrix {
        if !ctx.run_dir("evaluate", key).join("eval.json").exists() {
            missing.push(format!("evaluate/{key}"));
        }
        let mut needed = vec![(Entity::User, Representation::Main)];
        if key.protocol == Protocol::LeaveOneOut {
            needed.push((Entity::Group, Representation::Main));
            if key.arch.is_pl() {
                needed.push((Entity::User, Representation::Pl));
                needed.push((Entity::Group, Representation::Pl));
            }
        }
        for (entity, repr) in needed {
            if !cluster_report_path(ctx, key, entity, repr).exists() {
                missing.push(format!("cluster/{key}/{}_{}", entity.tag(), repr.tag()));
            }
        }
    }
    for (arch, repr) in FIGURE_PAIR.iter().chain(&FIGURE_QUAD) {
        let key = RunKey {
            arch: *arch,
            protocol: Protocol::LeaveOneOut,
            seed: figure_seed,
        };
        if !ctx.run_dir("train", &key).join("checkpoint.bin").exists() {
            missing.push(format!("train/{key}"));
        }
        if !cluster_report_path(ctx, &key, Entity::User, *repr).exists() {
            missing.push(format!("cluster/{key}/user_{}", repr.tag()));
        }
    }
    missing.sort();
    missing.dedup();
    require_runs(missing)?;

    let report_dir = ctx.stage_dir("report");
    let figures_dir = report_dir.join("figures");
    std::fs::create_dir_all(&figures_dir)?;
    let mut files = Vec::new();

    // Ranking tables, one per protocol.
    let mut by_protocol: std::collections::HashMap<Protocol, Vec<EvalReport>> =
        std::collections::HashMap::new();
    for key in &matrix {
        let report = load_eval_report(&ctx.run_dir("evaluate", key).join("eval.json"))?;
        by_protocol.entry(key.protocol).or_default().push(report);
    }
    for (protocol, table_name) in [
        (Protocol::LeaveOneOut, "table1.csv"),
        (Protocol::Ratio70_15_15, "table2.csv"),
    ] {
        let rows = build_metric_table(&by_protocol[&protocol])?;
        let path = report_dir.join(table_name);
        write_metric_table(&rows, &path)?;
        files.push(path);
    }

    // Silhouette table over the leave-one-out cluster reports.
    let mut cluster_reports = Vec::new();
    for key in matrix
        .iter()
        .filter(|k| k.protocol == Protocol::LeaveOneOut)
    {
        for (entity, repr) in spaces(key.arch) {
            cluster_reports.push(load_cluster_report(&cluster_report_path(
                ctx, key, entity, repr,
            ))?);
        }
    }
    let rows = build_silhouette_table(&cluster_reports, &config.seeds)?;
    let table3_path = report_dir.join("table3.csv");
    write_silhouette_table(&rows, &table3_path)?;
    files.push(table3_path);

    // Fixed-k user-main separability against HR@5, one rho per protocol.
    let mut spearman = std::collections::BTreeMap::new();
    for &protocol in &Protocol::ALL {
        let mut points = Vec::new();
        for key in matrix.iter().filter(|k| k.protocol == protocol) {
            let cluster = load_cluster_report(&cluster_report_path(
                ctx,
                key,
                Entity::User,
                Representation::Main,
            ))?;
            let silhouette =
                cluster
                    .grid
                    .score_at(config.clustering.spearman_k)
                    .ok_or_else(|| {
                        ExperimentError::Schema(format!(
                            "cluster report for {key} lacks k={}",
                            config.clustering.spearman_k
                        ))
                    })?;
            let eval = load_eval_report(&ctx.run_dir("evaluate", key).join("eval.json"))?;
            points.push((silhouette, eval.hr_at_5));
        }
        spearman.insert(protocol.tag().to_string(), separability_accuracy_analysis(&points)?);
    }
    let spearman_path = report_dir.join("spearman.json");
    let text = serde_json::to_string_pretty(&spearman)
        .map_err(|e| ExperimentError::Schema(e.to_string()))?;
    std::fs::write(&spearman_path, text)?;
    files.push(spearman_path);

    // Overlay figures for the first seed under leave-one-out.
    let build_panel = |arch: Arch,
                           repr: Representation|
     -> Result<(Projection2D, String, PathBuf), ExperimentError> {
        let key = RunKey {
            arch,
            protocol: Protocol::LeaveOneOut,
            seed: figure_seed,
        };
        let checkpoint = load_checkpoint(&ctx.run_dir("train", &key).join("checkpoint.bin"))?;
        let report = load_cluster_report(&cluster_report_path(ctx, &key, Entity::User, repr))?;
        let projection = project_space(ctx, &key, &checkpoint, Entity::User, repr, &report)?;
        let title = format!("{} {} embeddings", arch.display_name(), repr_label(repr));
        let coords_path = figures_dir.join(format!(
            "tsne_coords_{}.csv",
            overlay_stem(arch, Entity::User, repr, figure_seed)
        ));
        write_coords_csv(&projection, &coords_path)?;
        Ok((projection, title, coords_path))
    };

    let emit_grid = |cells: &[(Arch, Representation)],
                         rows: usize,
                         cols: usize,
                         name: &str,
                         files: &mut Vec<PathBuf>|
     -> Result<(), ExperimentError> {
        let mut built = Vec::with_capacity(cells.len());
        for (arch, repr) in cells {
            let (projection, title, coords_path) = build_panel(*arch, *repr)?;
            files.push(coords_path);
            built.push((projection, title));
        }
        let panels: Vec<FigurePanel<'_>> = built
            .iter()
            .map(|(projection, title)| FigurePanel {
                title: title.clone(),
                projection,
            })
            .collect();
        let path = figures_dir.join(name);
        emit_panel_grid(&panels, rows, cols, &path)?;
        files.push(path);
        Ok(())
    };

    emit_grid(&FIGURE_PAIR, 1, 2, "fig_user_pair.svg", &mut files)?;
    emit_grid(&FIGURE_QUAD, 2, 2, "fig_user_quad.svg", &mut files)?;

    finalize(ctx, "report", started, 1, 0, files)
}
