//! Evaluation protocols and negative/candidate samplers.
//!
//! Two split protocols are supported: a per-user leave-one-out split (one test
//! and one validation membership per user) and a global 70/15/15 random split
//! over all memberships. Training negatives are drawn uniformly on the fly
//! against a user's full observed-positive set; evaluation candidate sets pit
//! each held-out positive against 99 sampled negatives that were unobserved in
//! training for that user.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{DatasetBundle, Interaction};
use crate::rng::seeded_rng;

/// Negatives per evaluation candidate set.
pub const NUM_EVAL_NEGATIVES: usize = 99;
/// Total candidate set size (positive + negatives).
pub const CANDIDATE_SET_SIZE: usize = NUM_EVAL_NEGATIVES + 1;

#[derive(Debug, Error)]
pub enum SplitError {
    #[error("user {0} has fewer than 3 interactions; cannot hold out validation and test")]
    TooFewInteractions(usize),
    #[error("ratio split needs at least {min} interactions, have {n}")]
    TooFewForRatio { n: usize, min: usize },
    #[error("user {user_id} has no eligible negative group")]
    NoNegativesAvailable { user_id: usize },
    #[error("user {user_id} has only {available} eligible negatives, need {needed}")]
    InsufficientCandidates {
        user_id: usize,
        available: usize,
        needed: usize,
    },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("split schema violation: {0}")]
    Schema(String),
}

/// Which held-out protocol produced a plan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Protocol {
    /// One validation and one test membership per user.
    #[serde(rename = "loo")]
    LeaveOneOut,
    /// Global 70/15/15 random partition over memberships.
    #[serde(rename = "ratio")]
    Ratio70_15_15,
}

impl Protocol {
    /// Short tag used in file and directory names.
    pub fn tag(self) -> &'static str {
        match self {
            Protocol::LeaveOneOut => "loo",
            Protocol::Ratio70_15_15 => "ratio",
        }
    }

    pub const ALL: [Protocol; 2] = [Protocol::LeaveOneOut, Protocol::Ratio70_15_15];
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Protocol {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "loo" => Ok(Protocol::LeaveOneOut),
            "ratio" => Ok(Protocol::Ratio70_15_15),
            other => Err(format!("unknown protocol '{other}', expected loo|ratio")),
        }
    }
}

/// A full train/validation/test partition of a bundle's interactions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub protocol: Protocol,
    pub rng_seed: u64,
    pub train: Vec<Interaction>,
    pub validation: Vec<Interaction>,
    pub test: Vec<Interaction>,
}

impl SplitPlan {
    /// Group ids each user holds in the training partition.
    pub fn train_positives_by_user(&self, n_users: usize) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); n_users];
        for it in &self.train {
            out[it.user_id].push(it.group_id);
        }
        out
    }

    /// Confirm the plan is a disjoint cover of the bundle's interactions.
    pub fn validate_against(&self, bundle: &DatasetBundle) -> Result<(), SplitError> {
        let mut seen = HashSet::new();
        for it in self
            .train
            .iter()
            .chain(&self.validation)
            .chain(&self.test)
        {
            if !seen.insert((it.user_id, it.group_id)) {
                return Err(SplitError::Schema(format!(
                    "interaction ({}, {}) appears in more than one partition",
                    it.user_id, it.group_id
                )));
            }
        }
        if seen.len() != bundle.interactions.len() {
            return Err(SplitError::Schema(format!(
                "plan covers {} interactions, bundle has {}",
                seen.len(),
                bundle.interactions.len()
            )));
        }
        for it in &bundle.interactions {
            if !seen.contains(&(it.user_id, it.group_id)) {
                return Err(SplitError::Schema(format!(
                    "interaction ({}, {}) missing from plan",
                    it.user_id, it.group_id
                )));
            }
        }
        Ok(())
    }
}

/// Per-user leave-one-out split: each user's memberships are uniformly
/// permuted, the first goes to test, the second to validation, and the rest
/// (one for most users) stay in train.
pub fn leave_one_out_split(bundle: &DatasetBundle, rng_seed: u64) -> Result<SplitPlan, SplitError> {
    let per_user = bundle.positives_by_user();
    if let Some(short) = per_user.iter().position(|p| p.len() < 3) {
        return Err(SplitError::TooFewInteractions(short));
    }
    let by_key: std::collections::HashMap<(usize, usize), Interaction> = bundle
        .interactions
        .iter()
        .map(|it| ((it.user_id, it.group_id), *it))
        .collect();
    let mut rng = seeded_rng(rng_seed);
    let mut train = Vec::new();
    let mut validation = Vec::with_capacity(per_user.len());
    let mut test = Vec::with_capacity(per_user.len());
    for (user_id, groups) in per_user.iter().enumerate() {
        let mut shuffled = groups.clone();
        shuffled.shuffle(&mut rng);
        test.push(by_key[&(user_id, shuffled[0])]);
        validation.push(by_key[&(user_id, shuffled[1])]);
        for &g in &shuffled[2..] {
            train.push(by_key[&(user_id, g)]);
        }
    }
    Ok(SplitPlan {
        protocol: Protocol::LeaveOneOut,
        rng_seed,
        train,
        validation,
        test,
    })
}

/// Global random 70/15/15 split over all memberships. Validation and test
/// each take round-half-to-even(0.15 N) interactions; the remainder trains.
/// Users may be absent from train (cold users keep their initialized
/// embeddings at evaluation time).
pub fn ratio_split(bundle: &DatasetBundle, rng_seed: u64) -> Result<SplitPlan, SplitError> {
    let n = bundle.interactions.len();
    if n < 10 {
        return Err(SplitError::TooFewForRatio { n, min: 10 });
    }
    let hold = round_half_even_15pct(n);
    let mut shuffled = bundle.interactions.clone();
    let mut rng = seeded_rng(rng_seed);
    shuffled.shuffle(&mut rng);
    let test = shuffled[..hold].to_vec();
    let validation = shuffled[hold..2 * hold].to_vec();
    let train = shuffled[2 * hold..].to_vec();
    Ok(SplitPlan {
        protocol: Protocol::Ratio70_15_15,
        rng_seed,
        train,
        validation,
        test,
    })
}

/// Round-half-to-even of 0.15 n, computed exactly as 3n/20 in integers so no
/// floating-point representation error can flip a tie.
pub fn round_half_even_15pct(n: usize) -> usize {
    let (q, r) = (3 * n / 20, 3 * n % 20);
    match r.cmp(&10) {
        std::cmp::Ordering::Less => q,
        std::cmp::Ordering::Greater => q + 1,
        std::cmp::Ordering::Equal => q + q % 2,
    }
}

/// Draw one training negative: uniform over groups outside the user's full
/// observed-positive set. Exact-uniform rejection sampling; the candidate
/// space is all `m` groups and positives are rare, so this terminates fast.
pub fn sample_training_negative(
    user_id: usize,
    positives: &[usize],
    m: usize,
    rng: &mut ChaCha8Rng,
) -> Result<usize, SplitError> {
    if positives.len() >= m {
        return Err(SplitError::NoNegativesAvailable { user_id });
    }
    loop {
        let g = rand::Rng::gen_range(rng, 0..m);
        if !positives.contains(&g) {
            return Ok(g);
        }
    }
}

/// One held-out positive and its sampled negatives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub user_id: usize,
    pub positive_group: usize,
    pub negatives: Vec<usize>,
}

/// Build the 100-candidate evaluation set for one held-out interaction:
/// 99 distinct negatives drawn uniformly without replacement from groups that
/// are neither the positive nor among the user's training positives.
pub fn build_candidate_set(
    held_out: &Interaction,
    train_positives: &[usize],
    m: usize,
    rng: &mut ChaCha8Rng,
) -> Result<CandidateSet, SplitError> {
    let eligible: Vec<usize> = (0..m)
        .filter(|g| *g != held_out.group_id && !train_positives.contains(g))
        .collect();
    if eligible.len() < NUM_EVAL_NEGATIVES {
        return Err(SplitError::InsufficientCandidates {
            user_id: held_out.user_id,
            available: eligible.len(),
            needed: NUM_EVAL_NEGATIVES,
        });
    }
    let negatives = rand::seq::index::sample(rng, eligible.len(), NUM_EVAL_NEGATIVES)
        .into_iter()
        .map(|i| eligible[i])
        .collect();
    Ok(CandidateSet {
        user_id: held_out.user_id,
        positive_group: held_out.group_id,
        negatives,
    })
}

/// Persist a plan (with its seed) for audit.
pub fn save_split(plan: &SplitPlan, path: &Path) -> Result<(), SplitError> {
    let text =
        serde_json::to_string_pretty(plan).map_err(|e| SplitError::Schema(e.to_string()))?;
    std::fs::write(path, text)?;
    Ok(())
}

/// Load a plan persisted by [`save_split`].
pub fn load_split(path: &Path) -> Result<SplitPlan, SplitError> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| SplitError::Schema(e.to_string()))
}
