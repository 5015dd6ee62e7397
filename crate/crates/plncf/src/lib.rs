//! Survey-driven pseudo-label collaborative filtering.
//!
//! This crate builds the full experiment pipeline around PL-NCF: a family of
//! neural collaborative filtering models (MF, MLP, NeuMF) extended with an
//! auxiliary pseudo-label objective derived from survey/group feature
//! alignment. It covers:
//!
//! * synthetic dataset generation from simplex-valued intake surveys
//!   ([`dataset`]),
//! * leave-one-out and 70/15/15 evaluation splits with seeded negative
//!   sampling ([`splits`]),
//! * six model variants with dual embedding spaces, analytic gradients, and
//!   AdamW training ([`models`], [`training`]),
//! * sampled top-K ranking metrics and Spearman trade-off analysis
//!   ([`eval`]),
//! * spherical k-means, cosine silhouette, and optimal-k scans
//!   ([`clustering`]),
//! * exact t-SNE projection with cluster-label overlays ([`tsne`],
//!   [`figures`]),
//! * a reproducible experiment driver that emits every table, correlation,
//!   and figure from a single config ([`experiment`]).
//!
//! Everything is deterministic given the config seeds: two runs of the same
//! config produce byte-identical artifacts.

pub mod clustering;
pub mod dataset;
pub mod eval;
pub mod experiment;
pub mod figures;
pub mod linalg;
pub mod models;
pub mod rng;
pub mod splits;
pub mod training;
pub mod tsne;
pub mod verify;
// TODO(build order): clustering, eval, experiment, figures, training, tsne,
// verify land next.

pub use dataset::{DatasetBundle, GroupProfile, Interaction, SurveyVector};
pub use models::{Arch, ModelState, Prediction};
pub use splits::{Protocol, SplitPlan};
