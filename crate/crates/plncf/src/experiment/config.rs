//! Experiment configuration: a single TOML file with every knob defaulted to
//! the canonical recipe, so an empty file reproduces the published matrix and
//! any field can be overridden on its own.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::clustering::{K_GRID, SPEARMAN_K};
use crate::models::Arch;
use crate::splits::Protocol;
use crate::training::{Reduction, TrainConfig};
use crate::tsne::TsneConfig;

use super::ExperimentError;

/// Canonical run seeds.
pub const DEFAULT_SEEDS: [u64; 5] = [42, 52, 62, 122, 232];

/// Seed of the shared synthetic cohort (one dataset serves every run).
pub const DEFAULT_DATASET_SEED: u64 = 7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Output root; overridable by the CLI flag or the environment variable.
    pub output_dir: String,
    pub models: Vec<Arch>,
    pub protocols: Vec<Protocol>,
    pub seeds: Vec<u64>,
    pub dataset: DatasetSettings,
    pub train: TrainSettings,
    pub lambda: LambdaSettings,
    pub clustering: ClusteringSettings,
    pub tsne: TsneSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            output_dir: "out".into(),
            models: Arch::ALL.to_vec(),
            protocols: Protocol::ALL.to_vec(),
            seeds: DEFAULT_SEEDS.to_vec(),
            dataset: DatasetSettings::default(),
            train: TrainSettings::default(),
            lambda: LambdaSettings::default(),
            clustering: ClusteringSettings::default(),
            tsne: TsneSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSettings {
    pub n: usize,
    pub reps: usize,
    pub k: usize,
    pub alpha: f64,
    pub extra_groups: usize,
    pub seed: u64,
}

impl Default for DatasetSettings {
    fn default() -> Self {
        DatasetSettings {
            n: 165,
            reps: 3,
            k: 6,
            alpha: 1.0,
            extra_groups: 3,
            seed: DEFAULT_DATASET_SEED,
        }
    }
}

impl DatasetSettings {
    pub fn generator_config(&self) -> crate::dataset::GeneratorConfig {
        crate::dataset::GeneratorConfig {
            n: self.n,
            reps: self.reps,
            k: self.k,
            rng_seed: self.seed,
            alpha: self.alpha,
            extra_groups: self.extra_groups,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub reduction: Reduction,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let canon = TrainConfig::new(0, Protocol::LeaveOneOut, 0.0);
        TrainSettings {
            epochs: canon.epochs,
            lr: canon.lr,
            weight_decay: canon.weight_decay,
            beta1: canon.betas.0,
            beta2: canon.betas.1,
            eps: canon.eps,
            batch_size: canon.batch_size,
            reduction: canon.reduction,
        }
    }
}

impl TrainSettings {
    /// Materialize the per-run training recipe.
    pub fn train_config(&self, seed: u64, protocol: Protocol, lambda_pl: f64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            lr: self.lr,
            weight_decay: self.weight_decay,
            betas: (self.beta1, self.beta2),
            eps: self.eps,
            lambda_pl,
            batch_size: self.batch_size,
            seed,
            protocol,
            reduction: self.reduction,
            freeze_fusion: false,
        }
    }
}

/// Pseudo-label supervision strengths, one row per protocol. Baselines
/// always use zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LambdaSettings {
    pub loo: LambdaRow,
    pub ratio: LambdaRow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LambdaRow {
    pub mf_pl: f64,
    pub mlp_pl: f64,
    pub neumf_pl: f64,
}

impl Default for LambdaSettings {
    fn default() -> Self {
        LambdaSettings {
            loo: LambdaRow {
                mf_pl: 0.03,
                mlp_pl: 0.25,
                neumf_pl: 0.35,
            },
            ratio: LambdaRow {
                mf_pl: 0.40,
                mlp_pl: 0.20,
                neumf_pl: 0.50,
            },
        }
    }
}

impl Default for LambdaRow {
    fn default() -> Self {
        LambdaRow {
            mf_pl: 0.0,
            mlp_pl: 0.0,
            neumf_pl: 0.0,
        }
    }
}

impl LambdaSettings {
    pub fn value(&self, arch: Arch, protocol: Protocol) -> f64 {
        let row = match protocol {
            Protocol::LeaveOneOut => &self.loo,
            Protocol::Ratio70_15_15 => &self.ratio,
        };
        match arch {
            Arch::MfPl => row.mf_pl,
            Arch::MlpPl => row.mlp_pl,
            Arch::NeuMfPl => row.neumf_pl,
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusteringSettings {
    pub k_grid: Vec<usize>,
    /// Fixed k whose silhouettes feed the separability-accuracy correlation.
    pub spearman_k: usize,
}

impl Default for ClusteringSettings {
    fn default() -> Self {
        ClusteringSettings {
            k_grid: K_GRID.to_vec(),
            spearman_k: SPEARMAN_K,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TsneSettings {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub early_exaggeration: f64,
    pub exaggeration_iters: usize,
    pub momentum_switch_iter: usize,
    pub initial_momentum: f64,
    pub final_momentum: f64,
}

impl Default for TsneSettings {
    fn default() -> Self {
        let canon = TsneConfig::new(0);
        TsneSettings {
            perplexity: canon.perplexity,
            iterations: canon.iterations,
            learning_rate: canon.learning_rate,
            early_exaggeration: canon.early_exaggeration,
            exaggeration_iters: canon.exaggeration_iters,
            momentum_switch_iter: canon.momentum_switch_iter,
            initial_momentum: canon.initial_momentum,
            final_momentum: canon.final_momentum,
        }
    }
}

impl TsneSettings {
    pub fn tsne_config(&self, rng_seed: u64) -> TsneConfig {
        TsneConfig {
            perplexity: self.perplexity,
            iterations: self.iterations,
            learning_rate: self.learning_rate,
            early_exaggeration: self.early_exaggeration,
            exaggeration_iters: self.exaggeration_iters,
            momentum_switch_iter: self.momentum_switch_iter,
            initial_momentum: self.initial_momentum,
            final_momentum: self.final_momentum,
            rng_seed,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        fn distinct<T: PartialEq + std::fmt::Debug>(
            what: &str,
            xs: &[T],
        ) -> Result<(), ExperimentError> {
            if xs.is_empty() {
                return Err(ExperimentError::Config(format!("{what} list is empty")));
            }
            for (i, x) in xs.iter().enumerate() {
                if xs[..i].contains(x) {
                    return Err(ExperimentError::Config(format!(
                        "{what} list repeats {x:?}"
                    )));
                }
            }
            Ok(())
        }
        distinct("models", &self.models)?;
        distinct("protocols", &self.protocols)?;
        distinct("seeds", &self.seeds)?;
        if self.output_dir.is_empty() {
            return Err(ExperimentError::Config("output_dir is empty".into()));
        }
        if self.dataset.n == 0 || self.dataset.reps == 0 || self.dataset.k == 0 {
            return Err(ExperimentError::Config(
                "dataset n, reps, and k must be positive".into(),
            ));
        }
        if !self.clustering.k_grid.contains(&self.clustering.spearman_k) {
            return Err(ExperimentError::Config(format!(
                "spearman_k {} is not on the k grid {:?}",
                self.clustering.spearman_k, self.clustering.k_grid
            )));
        }
        // Reuse the per-run validators on probe instances so every recipe
        // error surfaces before any work starts. The t-SNE probe checks
        // internal consistency only; whether the perplexity fits a specific
        // embedding space depends on which spaces get projected, so that
        // check stays with the projection itself.
        self.train
            .train_config(0, Protocol::LeaveOneOut, 0.0)
            .validate()?;
        self.tsne
            .tsne_config(0)
            .validate(usize::MAX)
            .map_err(|e| ExperimentError::Config(e.to_string()))?;
        Ok(())
    }

    /// Hash of the fully resolved configuration; artifacts from different
    /// recipes never share an output tree.
    pub fn config_hash(&self) -> String {
        let text = toml::to_string(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(text.as_bytes());
        hex::encode(hasher.finalize())
    }
}

/// Parse a TOML config file; missing fields fall back to the canonical
/// defaults, unknown fields are rejected.
pub fn load_experiment_config(path: &Path) -> Result<ExperimentConfig, ExperimentError> {
    let text = std::fs::read_to_string(path)?;
    let config: ExperimentConfig =
        toml::from_str(&text).map_err(|e| ExperimentError::Config(e.to_string()))?;
    config.validate()?;
    Ok(config)
}
