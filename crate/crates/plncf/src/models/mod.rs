//! The six model architectures as explicit parameter bundles.
//!
//! Baselines: matrix factorization (dot product of 64-d embeddings), an MLP
//! scorer (32-d embeddings, one hidden layer of 32), and NeuMF (a 32-d GMF
//! branch and a 64-d embedding MLP tower {128, 64, 32} joined by a linear
//! head). Each has a pseudo-label (PL) variant that adds a second, PL-specific
//! 32-d embedding space per user and group; its cosine — and, for the MF and
//! NeuMF variants, the cosine between a projected 16-d survey vector and the
//! group's PL embedding — is fused additively into the main logit through
//! learnable scalar weights.
//!
//! Forward passes are pure functions of a [`ModelState`]; gradients are
//! analytic and checked against finite differences.

mod backward;
mod forward;

pub use backward::{backward, BackwardExample};
pub use forward::{feature_cosine, forward, forward_mf, forward_mlp, forward_neumf, pl_cosine};

use rand::distributions::{Distribution, Uniform};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

use crate::dataset::FEATURE_LEN;
use crate::rng::seeded_rng;

/// Dimension of every PL-specific embedding space.
pub const D_PL: usize = 32;
/// Standard deviation of the Normal embedding initialization.
pub const EMBED_INIT_STD: f64 = 0.01;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("{kind} index {index} out of range (limit {limit})")]
    IndexOutOfRange {
        kind: &'static str,
        index: usize,
        limit: usize,
    },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

/// The six architectures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Arch {
    #[serde(rename = "mf")]
    Mf,
    #[serde(rename = "mlp")]
    Mlp,
    #[serde(rename = "neumf")]
    NeuMf,
    #[serde(rename = "mf_pl")]
    MfPl,
    #[serde(rename = "mlp_pl")]
    MlpPl,
    #[serde(rename = "neumf_pl")]
    NeuMfPl,
}

impl Arch {
    /// Baselines first, then PL variants, matching the reported table order.
    pub const ALL: [Arch; 6] = [
        Arch::Mf,
        Arch::Mlp,
        Arch::NeuMf,
        Arch::MfPl,
        Arch::MlpPl,
        Arch::NeuMfPl,
    ];

    /// Short lowercase tag for file and directory names.
    pub fn tag(self) -> &'static str {
        match self {
            Arch::Mf => "mf",
            Arch::Mlp => "mlp",
            Arch::NeuMf => "neumf",
            Arch::MfPl => "mf_pl",
            Arch::MlpPl => "mlp_pl",
            Arch::NeuMfPl => "neumf_pl",
        }
    }

    /// Human-facing name used in report tables.
    pub fn display_name(self) -> &'static str {
        match self {
            Arch::Mf => "MF",
            Arch::Mlp => "MLP",
            Arch::NeuMf => "NeuMF",
            Arch::MfPl => "MF-PL",
            Arch::MlpPl => "MLP-PL",
            Arch::NeuMfPl => "NeuMF-PL",
        }
    }

    pub fn is_pl(self) -> bool {
        matches!(self, Arch::MfPl | Arch::MlpPl | Arch::NeuMfPl)
    }

    /// Whether the survey-projection cosine participates in fusion.
    /// The MLP variant fuses only the PL-embedding cosine.
    pub fn has_feature_path(self) -> bool {
        matches!(self, Arch::MfPl | Arch::NeuMfPl)
    }

    /// The non-PL architecture sharing this one's main pathway shape.
    pub fn baseline(self) -> Arch {
        match self {
            Arch::Mf | Arch::MfPl => Arch::Mf,
            Arch::Mlp | Arch::MlpPl => Arch::Mlp,
            Arch::NeuMf | Arch::NeuMfPl => Arch::NeuMf,
        }
    }

    /// Main (for NeuMF: GMF) embedding dimension.
    pub fn main_dim(self) -> usize {
        match self {
            Arch::Mf => 64,
            Arch::MfPl => 96,
            Arch::Mlp | Arch::MlpPl => 32,
            Arch::NeuMf | Arch::NeuMfPl => 32,
        }
    }

    /// Dimension of the separate MLP-branch embeddings (NeuMF family only).
    pub fn mlp_branch_dim(self) -> Option<usize> {
        match self {
            Arch::NeuMf | Arch::NeuMfPl => Some(64),
            _ => None,
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.display_name())
    }
}

impl FromStr for Arch {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "mf" => Ok(Arch::Mf),
            "mlp" => Ok(Arch::Mlp),
            "neumf" => Ok(Arch::NeuMf),
            "mf_pl" => Ok(Arch::MfPl),
            "mlp_pl" => Ok(Arch::MlpPl),
            "neumf_pl" => Ok(Arch::NeuMfPl),
            other => Err(format!(
                "unknown model '{other}', expected one of mf|mlp|neumf|mf_pl|mlp_pl|neumf_pl"
            )),
        }
    }
}

/// A rows x dim embedding matrix, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub rows: usize,
    pub dim: usize,
    pub values: Vec<f64>,
}

impl EmbeddingTable {
    pub fn zeros(rows: usize, dim: usize) -> Self {
        assert!(dim > 0, "embedding dim must be positive");
        Self {
            rows,
            dim,
            values: vec![0.0; rows * dim],
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.values[i * self.dim..(i + 1) * self.dim]
    }
}

/// Activation applied elementwise after a dense layer's affine map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    ReLU,
    Identity,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::ReLU => x.max(0.0),
            Activation::Identity => x,
            Activation::Sigmoid => crate::linalg::sigmoid(x),
        }
    }

    /// Derivative expressed in terms of the pre-activation value.
    pub fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::ReLU => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
            Activation::Sigmoid => {
                let s = crate::linalg::sigmoid(pre);
                s * (1.0 - s)
            }
        }
    }
}

/// A fully connected layer: out x in weight (row-major), bias, activation.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn zeros(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Self {
            in_dim,
            out_dim,
            weight: vec![0.0; out_dim * in_dim],
            bias: vec![0.0; out_dim],
            activation,
        }
    }

    /// Affine map plus activation; also returns the pre-activation vector,
    /// which the backward pass needs.
    pub fn forward_cached(&self, input: &[f64]) -> (Vec<f64>, Vec<f64>) {
        assert_eq!(
            input.len(),
            self.in_dim,
            "dense layer fed {} values, expects {}",
            input.len(),
            self.in_dim
        );
        let mut pre = self.bias.clone();
        for (o, p) in pre.iter_mut().enumerate() {
            let row = &self.weight[o * self.in_dim..(o + 1) * self.in_dim];
            *p += crate::linalg::dot(row, input);
        }
        let out = pre.iter().map(|&v| self.activation.apply(v)).collect();
        (pre, out)
    }

    pub fn apply(&self, input: &[f64]) -> Vec<f64> {
        self.forward_cached(input).1
    }
}

/// One scored (user, group) pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    /// Fused pre-sigmoid score.
    pub logit: f64,
    /// `sigmoid(logit)`, always in (0, 1).
    pub score: f64,
    /// Cosine between the PL embeddings (PL variants only).
    pub pl_cosine: Option<f64>,
    /// Cosine between the projected survey vector and the group PL embedding
    /// (MF-PL and NeuMF-PL only).
    pub feature_cosine: Option<f64>,
}

/// Full parameter bundle for one model instance.
///
/// Optional fields are present exactly when the architecture uses them; see
/// [`init_model`] for the per-architecture layout and dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub arch: Arch,
    pub n_users: usize,
    pub n_groups: usize,
    /// MF embeddings, MLP embeddings, or the NeuMF GMF branch.
    pub user_main: EmbeddingTable,
    pub group_main: EmbeddingTable,
    /// NeuMF's separate MLP-branch embeddings.
    pub user_mlp: Option<EmbeddingTable>,
    pub group_mlp: Option<EmbeddingTable>,
    /// Hidden dense stack: `[64 -> 32]` for MLP, `[128 -> 64, 64 -> 32]` for
    /// the NeuMF tower, empty for MF.
    pub hidden: Vec<DenseLayer>,
    /// Scalar head over the last hidden output (absent for MF, whose logit is
    /// the raw dot product).
    pub output: Option<DenseLayer>,
    /// PL-specific embedding spaces (PL variants only).
    pub user_pl: Option<EmbeddingTable>,
    pub group_pl: Option<EmbeddingTable>,
    /// Linear survey projection 16 -> 32 (MF-PL and NeuMF-PL only).
    pub feature_proj: Option<DenseLayer>,
    /// Fusion weight on the PL-embedding cosine (PL variants only).
    pub w_align: Option<f64>,
    /// Fusion weight on the survey-projection cosine (feature-path archs).
    pub w_feat: Option<f64>,
}

impl ModelState {
    /// Same-architecture bundle with every parameter set to zero. Used for
    /// gradient accumulators and optimizer moments.
    pub fn zeros_like(&self) -> ModelState {
        let mut out = self.clone();
        for (_, t) in out.tensors_mut() {
            t.fill(0.0);
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Named views of every parameter tensor, in a fixed order shared with
    /// [`ModelState::tensors_mut`]. The order is part of the checkpoint
    /// format.
    pub fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut out: Vec<(String, &[f64])> = vec![
            ("user_main".into(), &self.user_main.values),
            ("group_main".into(), &self.group_main.values),
        ];
        if let Some(t) = &self.user_mlp {
            out.push(("user_mlp".into(), &t.values));
        }
        if let Some(t) = &self.group_mlp {
            out.push(("group_mlp".into(), &t.values));
        }
        for (i, layer) in self.hidden.iter().enumerate() {
            out.push((format!("hidden{i}.weight"), &layer.weight));
            out.push((format!("hidden{i}.bias"), &layer.bias));
        }
        if let Some(layer) = &self.output {
            out.push(("output.weight".into(), &layer.weight));
            out.push(("output.bias".into(), &layer.bias));
        }
        if let Some(t) = &self.user_pl {
            out.push(("user_pl".into(), &t.values));
        }
        if let Some(t) = &self.group_pl {
            out.push(("group_pl".into(), &t.values));
        }
        if let Some(layer) = &self.feature_proj {
            out.push(("feature_proj.weight".into(), &layer.weight));
            out.push(("feature_proj.bias".into(), &layer.bias));
        }
        if let Some(w) = &self.w_align {
            out.push(("w_align".into(), std::slice::from_ref(w)));
        }
        if let Some(w) = &self.w_feat {
            out.push(("w_feat".into(), std::slice::from_ref(w)));
        }
        out
    }

    /// Mutable counterpart of [`ModelState::tensors`], same names and order.
    pub fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out: Vec<(String, &mut [f64])> = vec![
            ("user_main".into(), self.user_main.values.as_mut_slice()),
            ("group_main".into(), self.group_main.values.as_mut_slice()),
        ];
        if let Some(t) = self.user_mlp.as_mut() {
            out.push(("user_mlp".into(), t.values.as_mut_slice()));
        }
        if let Some(t) = self.group_mlp.as_mut() {
            out.push(("group_mlp".into(), t.values.as_mut_slice()));
        }
        for (i, layer) in self.hidden.iter_mut().enumerate() {
            out.push((format!("hidden{i}.weight"), layer.weight.as_mut_slice()));
            out.push((format!("hidden{i}.bias"), layer.bias.as_mut_slice()));
        }
        if let Some(layer) = self.output.as_mut() {
            out.push(("output.weight".into(), layer.weight.as_mut_slice()));
            out.push(("output.bias".into(), layer.bias.as_mut_slice()));
        }
        if let Some(t) = self.user_pl.as_mut() {
            out.push(("user_pl".into(), t.values.as_mut_slice()));
        }
        if let Some(t) = self.group_pl.as_mut() {
            out.push(("group_pl".into(), t.values.as_mut_slice()));
        }
        if let Some(layer) = self.feature_proj.as_mut() {
            out.push(("feature_proj.weight".into(), layer.weight.as_mut_slice()));
            out.push(("feature_proj.bias".into(), layer.bias.as_mut_slice()));
        }
        if let Some(w) = self.w_align.as_mut() {
            out.push(("w_align".into(), std::slice::from_mut(w)));
        }
        if let Some(w) = self.w_feat.as_mut() {
            out.push(("w_feat".into(), std::slice::from_mut(w)));
        }
        out
    }

    pub(crate) fn check_indices(&self, u: usize, g: usize) -> Result<(), ModelError> {
        if u >= self.n_users {
            return Err(ModelError::IndexOutOfRange {
                kind: "user",
                index: u,
                limit: self.n_users,
            });
        }
        if g >= self.n_groups {
            return Err(ModelError::IndexOutOfRange {
                kind: "group",
                index: g,
                limit: self.n_groups,
            });
        }
        Ok(())
    }
}

/// Initialize a model: embeddings from Normal(0, 0.01^2), dense weights
/// Kaiming-uniform over fan-in, biases zero, fusion weights 1.0.
///
/// Draw order is fixed — main embeddings, NeuMF branch embeddings, hidden
/// stack, output head, then the PL-specific parameters — so architectures
/// sharing a main-pathway shape consume identical draws for it under the same
/// seed. Deterministic per seed.
pub fn init_model(arch: Arch, n_users: usize, n_groups: usize, rng_seed: u64) -> ModelState {
    assert!(n_users > 0 && n_groups > 0, "need at least one user and group");
    let mut rng = seeded_rng(rng_seed);
    let d = arch.main_dim();

    let user_main = init_embedding(n_users, d, &mut rng);
    let group_main = init_embedding(n_groups, d, &mut rng);
    let (user_mlp, group_mlp) = match arch.mlp_branch_dim() {
        Some(dm) => (
            Some(init_embedding(n_users, dm, &mut rng)),
            Some(init_embedding(n_groups, dm, &mut rng)),
        ),
        None => (None, None),
    };
    let (hidden, output) = match arch.baseline() {
        Arch::Mf => (Vec::new(), None),
        Arch::Mlp => (
            vec![init_dense(2 * d, 32, Activation::ReLU, &mut rng)],
            Some(init_dense(32, 1, Activation::Identity, &mut rng)),
        ),
        Arch::NeuMf => (
            vec![
                init_dense(128, 64, Activation::ReLU, &mut rng),
                init_dense(64, 32, Activation::ReLU, &mut rng),
            ],
            Some(init_dense(64, 1, Activation::Identity, &mut rng)),
        ),
        _ => unreachable!("baseline() returns a baseline arch"),
    };
    let (user_pl, group_pl) = if arch.is_pl() {
        (
            Some(init_embedding(n_users, D_PL, &mut rng)),
            Some(init_embedding(n_groups, D_PL, &mut rng)),
        )
    } else {
        (None, None)
    };
    let feature_proj = arch
        .has_feature_path()
        .then(|| init_dense(FEATURE_LEN, D_PL, Activation::Identity, &mut rng));

    ModelState {
        arch,
        n_users,
        n_groups,
        user_main,
        group_main,
        user_mlp,
        group_mlp,
        hidden,
        output,
        user_pl,
        group_pl,
        feature_proj,
        w_align: arch.is_pl().then_some(1.0),
        w_feat: arch.has_feature_path().then_some(1.0),
    }
}

fn init_embedding(rows: usize, dim: usize, rng: &mut ChaCha8Rng) -> EmbeddingTable {
    let normal = Normal::new(0.0, EMBED_INIT_STD).expect("valid normal");
    EmbeddingTable {
        rows,
        dim,
        values: (0..rows * dim).map(|_| normal.sample(rng)).collect(),
    }
}

fn init_dense(
    in_dim: usize,
    out_dim: usize,
    activation: Activation,
    rng: &mut ChaCha8Rng,
) -> DenseLayer {
    // Kaiming-uniform over fan-in: U(-sqrt(6/fan_in), sqrt(6/fan_in)).
    let bound = (6.0 / in_dim as f64).sqrt();
    let uniform = Uniform::new(-bound, bound);
    DenseLayer {
        in_dim,
        out_dim,
        weight: (0..out_dim * in_dim).map(|_| uniform.sample(rng)).collect(),
        bias: vec![0.0; out_dim],
        activation,
    }
}
