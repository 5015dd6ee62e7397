//! Experiment orchestration: one TOML config drives dataset generation, the
//! full training matrix, evaluation, clustering, visualization, and the
//! final report, with deterministic artifacts and a digest manifest.

mod config;
mod manifest;
mod stages;

pub use config::{
    load_experiment_config, ClusteringSettings, DatasetSettings, ExperimentConfig, LambdaRow,
    LambdaSettings, TrainSettings, TsneSettings, DEFAULT_DATASET_SEED, DEFAULT_SEEDS,
};
pub use manifest::{sha256_file, RunManifest, StageRecord, MANIFEST_FILE};
pub use stages::{
    run_cluster, run_evaluate, run_generate, run_report, run_train, run_visualize, StageOutcome,
};

use std::path::PathBuf;

use thiserror::Error;

use crate::clustering::ClusterError;
use crate::dataset::DatasetError;
use crate::eval::EvalError;
use crate::figures::FigureError;
use crate::models::{Arch, ModelError};
use crate::splits::{Protocol, SplitError};
use crate::training::TrainError;
use crate::tsne::TsneError;

/// Environment variable overriding the output root (the CLI flag wins over
/// both this and the config file).
pub const OUTPUT_ENV: &str = "PLNCF_OUT";

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error(
        "output tree belongs to config {existing}, current config is {current}; \
         use a fresh output root"
    )]
    ManifestMismatch { existing: String, current: String },
    #[error("dataset not found at {0}; run the generate stage first")]
    MissingDataset(PathBuf),
    #[error("missing artifacts for {} run(s): {}", .0.len(), .0.join(", "))]
    MissingRuns(Vec<String>),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Split(#[from] SplitError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Tsne(#[from] TsneError),
    #[error(transparent)]
    Figure(#[from] FigureError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("artifact schema violation: {0}")]
    Schema(String),
}

/// One cell of the experiment matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RunKey {
    pub arch: Arch,
    pub protocol: Protocol,
    pub seed: u64,
}

impl RunKey {
    /// Directory name under each per-run stage.
    pub fn dir_name(&self) -> String {
        format!("{}_{}_{}", self.arch.tag(), self.protocol.tag(), self.seed)
    }
}

impl std::fmt::Display for RunKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.dir_name())
    }
}

/// A validated config bound to an output root and a parallelism budget.
#[derive(Debug, Clone)]
pub struct ExperimentContext {
    pub config: ExperimentConfig,
    pub out_root: PathBuf,
    /// Worker threads for per-run stages; 0 means the runtime default.
    pub jobs: usize,
}

impl ExperimentContext {
    /// Resolve the output root: explicit override, then [`OUTPUT_ENV`], then
    /// the config's `output_dir`.
    pub fn new(
        config: ExperimentConfig,
        out_override: Option<PathBuf>,
        jobs: usize,
    ) -> Result<Self, ExperimentError> {
        config.validate()?;
        let out_root = match out_override {
            Some(path) => path,
            None => match std::env::var_os(OUTPUT_ENV) {
                Some(v) if !v.is_empty() => PathBuf::from(v),
                _ => PathBuf::from(&config.output_dir),
            },
        };
        Ok(ExperimentContext {
            config,
            out_root,
            jobs,
        })
    }

    /// The full configured matrix, model-major then protocol then seed.
    pub fn matrix(&self) -> Vec<RunKey> {
        let mut keys = Vec::new();
        for &arch in &self.config.models {
            for &protocol in &self.config.protocols {
                for &seed in &self.config.seeds {
                    keys.push(RunKey {
                        arch,
                        protocol,
                        seed,
                    });
                }
            }
        }
        keys
    }

    /// The matrix narrowed by CLI filters; an empty filter keeps every value.
    pub fn filtered_matrix(
        &self,
        models: &[Arch],
        protocols: &[Protocol],
        seeds: &[u64],
    ) -> Vec<RunKey> {
        self.matrix()
            .into_iter()
            .filter(|key| models.is_empty() || models.contains(&key.arch))
            .filter(|key| protocols.is_empty() || protocols.contains(&key.protocol))
            .filter(|key| seeds.is_empty() || seeds.contains(&key.seed))
            .collect()
    }

    pub fn stage_dir(&self, stage: &str) -> PathBuf {
        self.out_root.join(stage)
    }

    pub fn run_dir(&self, stage: &str, key: &RunKey) -> PathBuf {
        self.stage_dir(stage).join(key.dir_name())
    }

    pub fn dataset_path(&self) -> PathBuf {
        self.stage_dir("generate").join("dataset.json")
    }

    pub(crate) fn pool(&self) -> Result<rayon::ThreadPool, ExperimentError> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.jobs)
            .build()
            .map_err(|e| ExperimentError::Config(format!("worker pool: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn context() -> ExperimentContext {
        ExperimentContext::new(
            ExperimentConfig::default(),
            Some(PathBuf::from("/tmp/plncf-test-out")),
            1,
        )
        .unwrap()
    }

    #[test]
    fn matrix_covers_the_published_grid() {
        let ctx = context();
        let keys = ctx.matrix();
        assert_eq!(keys.len(), 60);
        let unique: std::collections::HashSet<String> =
            keys.iter().map(|k| k.dir_name()).collect();
        assert_eq!(unique.len(), 60);
        assert_eq!(keys[0].dir_name(), "mf_loo_42");
    }

    #[test]
    fn filters_narrow_the_matrix() {
        let ctx = context();
        let narrowed = ctx.filtered_matrix(&[Arch::Mf], &[], &[42]);
        assert_eq!(narrowed.len(), 2);
        assert!(narrowed
            .iter()
            .all(|k| k.arch == Arch::Mf && k.seed == 42));
        assert_eq!(ctx.filtered_matrix(&[], &[], &[]).len(), 60);
        assert_eq!(
            ctx.filtered_matrix(&[], &[Protocol::LeaveOneOut], &[]).len(),
            30
        );
    }

    #[test]
    fn run_paths_are_predictable() {
        let ctx = context();
        let key = RunKey {
            arch: Arch::NeuMfPl,
            protocol: Protocol::Ratio70_15_15,
            seed: 122,
        };
        assert_eq!(
            ctx.run_dir("train", &key),
            PathBuf::from("/tmp/plncf-test-out/train/neumf_pl_ratio_122")
        );
        assert_eq!(
            ctx.dataset_path(),
            PathBuf::from("/tmp/plncf-test-out/generate/dataset.json")
        );
    }

    #[test]
    fn explicit_root_beats_config() {
        let config = ExperimentConfig::default();
        let ctx =
            ExperimentContext::new(config.clone(), Some(PathBuf::from("/x/y")), 0).unwrap();
        assert_eq!(ctx.out_root, PathBuf::from("/x/y"));
        // Without an override the config's own directory is used (the env
        // var cannot be asserted here without mutating process state).
        if std::env::var_os(OUTPUT_ENV).is_none() {
            let ctx = ExperimentContext::new(config, None, 0).unwrap();
            assert_eq!(ctx.out_root, PathBuf::from("out"));
        }
    }

    #[test]
    fn invalid_config_is_rejected_at_construction() {
        let mut config = ExperimentConfig::default();
        config.seeds.clear();
        assert!(ExperimentContext::new(config, None, 1).is_err());
    }
}
