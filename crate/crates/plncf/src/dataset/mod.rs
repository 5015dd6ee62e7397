//! Survey-driven dataset: users, group profiles, memberships, and
//! feature-alignment pseudo-labels.
//!
//! A user is a 16-d intake vector made of two independently simplex-normalized
//! blocks (6 support-preference weights, 10 demographic/condition weights). A
//! group profile is the mean of a k-nearest-neighbor set of user vectors. Each
//! observed membership carries an alignment score in `[0, 1]` derived from the
//! cosine between the user vector and the group profile; that score is the
//! fixed soft target used by the pseudo-label training objective.

mod generate;
mod io;

pub use generate::{generate_synthetic_dataset, GeneratorConfig};
pub use io::{canonical_real, load_bundle, save_bundle, write_csv_exports};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg;

/// Length of the support-preference block.
pub const Q33_LEN: usize = 6;
/// Length of the demographic/condition block.
pub const Q26_LEN: usize = 10;
/// Full feature dimensionality (both blocks concatenated).
pub const FEATURE_LEN: usize = Q33_LEN + Q26_LEN;

/// Tolerance for the per-block sum-to-one invariant.
pub const SIMPLEX_TOL: f64 = 1e-9;
/// Tolerance when re-checking stored alignment scores against recomputation.
pub const ALIGN_RECHECK_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("survey block {block} sums to zero and cannot be normalized")]
    AllZeroBlock { block: &'static str },
    #[error("survey block {block} contains a negative entry at index {index}: {value}")]
    NegativeEntry {
        block: &'static str,
        index: usize,
        value: f64,
    },
    #[error("cannot compute alignment against a zero vector")]
    ZeroVector,
    #[error("need at least {k} users for a k={k} neighborhood, have {n}")]
    InsufficientUsers { n: usize, k: usize },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bundle schema violation: {0}")]
    Schema(String),
}

/// A user's normalized intake survey: two simplex blocks plus an index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyVector {
    pub user_id: usize,
    /// Six support-preference weights, summing to 1.
    pub q33: Vec<f64>,
    /// Ten demographic/health-condition weights, summing to 1.
    pub q26: Vec<f64>,
}

impl SurveyVector {
    /// The concatenated 16-d feature vector.
    pub fn features(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(FEATURE_LEN);
        v.extend_from_slice(&self.q33);
        v.extend_from_slice(&self.q26);
        v
    }
}

/// Aggregated 16-d profile of one support group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupProfile {
    pub group_id: usize,
    pub features: Vec<f64>,
    /// The user whose neighborhood seeded this group.
    pub source_user: usize,
}

/// One observed user-group membership with its alignment pseudo-label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub user_id: usize,
    pub group_id: usize,
    /// `(cos(x_u, z_g) + 1) / 2`, recomputable from the stored features.
    pub align: f64,
}

/// Generation parameters recorded alongside the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleMeta {
    pub n: usize,
    pub m: usize,
    pub k: usize,
    pub reps: usize,
    pub rng_seed: u64,
    pub generator_version: u32,
}

/// The full dataset: users, groups, memberships, and generation metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    pub users: Vec<SurveyVector>,
    pub groups: Vec<GroupProfile>,
    pub interactions: Vec<Interaction>,
    pub meta: BundleMeta,
}

impl DatasetBundle {
    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    /// Group ids observed for each user, in interaction order.
    pub fn positives_by_user(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.users.len()];
        for it in &self.interactions {
            out[it.user_id].push(it.group_id);
        }
        out
    }

    /// Check every structural invariant; used after generation and after load.
    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.meta.n != self.users.len() {
            return Err(DatasetError::Schema(format!(
                "meta.n = {} but {} users present",
                self.meta.n,
                self.users.len()
            )));
        }
        if self.meta.m != self.groups.len() {
            return Err(DatasetError::Schema(format!(
                "meta.m = {} but {} groups present",
                self.meta.m,
                self.groups.len()
            )));
        }
        for (i, u) in self.users.iter().enumerate() {
            if u.user_id != i {
                return Err(DatasetError::Schema(format!(
                    "user at position {i} has id {}",
                    u.user_id
                )));
            }
            check_simplex_block("q33", &u.q33, Q33_LEN)?;
            check_simplex_block("q26", &u.q26, Q26_LEN)?;
        }
        for (g, p) in self.groups.iter().enumerate() {
            if p.group_id != g {
                return Err(DatasetError::Schema(format!(
                    "group at position {g} has id {}",
                    p.group_id
                )));
            }
            if p.features.len() != FEATURE_LEN {
                return Err(DatasetError::Schema(format!(
                    "group {g} has {} features, expected {FEATURE_LEN}",
                    p.features.len()
                )));
            }
            if p.source_user >= self.users.len() {
                return Err(DatasetError::Schema(format!(
                    "group {g} references unknown source user {}",
                    p.source_user
                )));
            }
            check_simplex_block("group q33 block", &p.features[..Q33_LEN], Q33_LEN)?;
            check_simplex_block("group q26 block", &p.features[Q33_LEN..], Q26_LEN)?;
        }
        let mut seen = std::collections::HashSet::new();
        for it in &self.interactions {
            if it.user_id >= self.users.len() || it.group_id >= self.groups.len() {
                return Err(DatasetError::Schema(format!(
                    "interaction ({}, {}) out of range",
                    it.user_id, it.group_id
                )));
            }
            if !seen.insert((it.user_id, it.group_id)) {
                return Err(DatasetError::Schema(format!(
                    "duplicate interaction ({}, {})",
                    it.user_id, it.group_id
                )));
            }
            let expect = align_features(
                &self.users[it.user_id].features(),
                &self.groups[it.group_id].features,
            )
            .map_err(|_| DatasetError::Schema("zero-norm features in interaction".into()))?;
            if (expect - it.align).abs() > ALIGN_RECHECK_TOL {
                return Err(DatasetError::Schema(format!(
                    "interaction ({}, {}) stores align {} but recomputation gives {}",
                    it.user_id, it.group_id, it.align, expect
                )));
            }
        }
        Ok(())
    }
}

fn check_simplex_block(name: &'static str, block: &[f64], len: usize) -> Result<(), DatasetError> {
    if block.len() != len {
        return Err(DatasetError::Schema(format!(
            "{name} has length {}, expected {len}",
            block.len()
        )));
    }
    if let Some((i, &v)) = block.iter().enumerate().find(|(_, &v)| v < 0.0) {
        return Err(DatasetError::NegativeEntry {
            block: name,
            index: i,
            value: v,
        });
    }
    let sum: f64 = block.iter().sum();
    if (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(DatasetError::Schema(format!(
            "{name} sums to {sum}, expected 1"
        )));
    }
    Ok(())
}

/// Normalize raw survey responses into a [`SurveyVector`].
///
/// Each block is divided by its own sum, so the two blocks are independent
/// simplex points.
pub fn normalize_survey(
    user_id: usize,
    raw_q33: &[f64],
    raw_q26: &[f64],
) -> Result<SurveyVector, DatasetError> {
    let q33 = normalize_block("q33", raw_q33, Q33_LEN)?;
    let q26 = normalize_block("q26", raw_q26, Q26_LEN)?;
    Ok(SurveyVector { user_id, q33, q26 })
}

fn normalize_block(name: &'static str, raw: &[f64], len: usize) -> Result<Vec<f64>, DatasetError> {
    assert_eq!(raw.len(), len, "{name} must have {len} entries");
    if let Some((i, &v)) = raw.iter().enumerate().find(|(_, &v)| v < 0.0) {
        return Err(DatasetError::NegativeEntry {
            block: name,
            index: i,
            value: v,
        });
    }
    let sum: f64 = raw.iter().sum();
    if sum == 0.0 {
        return Err(DatasetError::AllZeroBlock { block: name });
    }
    Ok(raw.iter().map(|v| v / sum).collect())
}

/// Feature-alignment score: cosine similarity mapped to the unit interval,
/// `(cos(x, z) + 1) / 2`. The cosine is clamped to `[-1, 1]` first so
/// rounding on near-parallel vectors cannot push the score outside `[0, 1]`.
pub fn align_features(x: &[f64], z: &[f64]) -> Result<f64, DatasetError> {
    if linalg::norm(x) == 0.0 || linalg::norm(z) == 0.0 {
        return Err(DatasetError::ZeroVector);
    }
    Ok((linalg::cosine(x, z).clamp(-1.0, 1.0) + 1.0) / 2.0)
}

/// Build one group profile as the mean of the `k` users nearest to
/// `seed_user` under cosine distance. The seed user counts as its own
/// nearest neighbor.
///
/// `excluded` removes specific non-seed users from the candidate pool before
/// selection; the dataset generator uses it to vary repeated groups for the
/// same seed user.
pub fn build_group_profile(
    group_id: usize,
    seed_user: usize,
    users: &[SurveyVector],
    k: usize,
    excluded: &[usize],
) -> Result<GroupProfile, DatasetError> {
    let eligible = users.len() - excluded.iter().filter(|&&e| e != seed_user).count();
    if eligible < k {
        return Err(DatasetError::InsufficientUsers {
            n: eligible,
            k,
        });
    }
    let seed_feats = users[seed_user].features();
    // Sort by (distance, id) so equidistant users resolve deterministically.
    // The seed user is at distance 0 from itself and is always selected.
    let mut ranked: Vec<(f64, usize)> = users
        .iter()
        .filter(|u| u.user_id == seed_user || !excluded.contains(&u.user_id))
        .map(|u| {
            let d = if u.user_id == seed_user {
                0.0
            } else {
                linalg::cosine_distance(&seed_feats, &u.features())
            };
            (d, u.user_id)
        })
        .collect();
    ranked.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));

    let mut features = vec![0.0; FEATURE_LEN];
    for &(_, uid) in ranked.iter().take(k) {
        for (acc, v) in features.iter_mut().zip(users[uid].features()) {
            *acc += v;
        }
    }
    for v in features.iter_mut() {
        *v /= k as f64;
    }
    Ok(GroupProfile {
        group_id,
        features,
        source_user: seed_user,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn normalize_uniform_block() {
        let sv = normalize_survey(0, &[1.0; 6], &[1.0; 10]).unwrap();
        for v in &sv.q33 {
            assert!((v - 1.0 / 6.0).abs() < 1e-15);
        }
        for v in &sv.q26 {
            assert!((v - 0.1).abs() < 1e-15);
        }
    }

    #[test]
    fn normalize_simplex_vertex() {
        let mut raw = [0.0; 10];
        raw[0] = 10.0;
        let sv = normalize_survey(0, &[1.0; 6], &raw).unwrap();
        assert_eq!(sv.q26[0], 1.0);
        assert!(sv.q26[1..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn normalize_hand_computed() {
        let sv = normalize_survey(0, &[2.0, 1.0, 1.0, 0.0, 0.0, 0.0], &[1.0; 10]).unwrap();
        assert_eq!(sv.q33, vec![0.5, 0.25, 0.25, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn normalize_rejects_all_zero_block() {
        let err = normalize_survey(0, &[0.0; 6], &[1.0; 10]).unwrap_err();
        assert!(matches!(err, DatasetError::AllZeroBlock { block: "q33" }));
    }

    #[test]
    fn normalize_rejects_negative_entry() {
        let err = normalize_survey(0, &[1.0, -0.5, 1.0, 1.0, 1.0, 1.0], &[1.0; 10]).unwrap_err();
        assert!(matches!(
            err,
            DatasetError::NegativeEntry {
                block: "q33",
                index: 1,
                ..
            }
        ));
    }

    #[test]
    fn align_identical_vectors() {
        let x = vec![0.2; 16];
        assert!((align_features(&x, &x).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn align_orthogonal_vectors() {
        let mut x = vec![0.0; 16];
        let mut z = vec![0.0; 16];
        x[0] = 1.0;
        z[1] = 1.0;
        assert!((align_features(&x, &z).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn align_antiparallel_vectors() {
        let x = vec![1.0; 16];
        let z: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!(align_features(&x, &z).unwrap().abs() < 1e-12);
    }

    #[test]
    fn align_rejects_zero_vector() {
        let z = vec![0.0; 16];
        let x = vec![1.0; 16];
        assert!(matches!(
            align_features(&x, &z),
            Err(DatasetError::ZeroVector)
        ));
    }

    #[test]
    fn align_matches_direct_oracle() {
        let mut rng = crate::rng::seeded_rng(99);
        for _ in 0..200 {
            let x: Vec<f64> = (0..16).map(|_| rng.gen_range(0.01..1.0)).collect();
            let z: Vec<f64> = (0..16).map(|_| rng.gen_range(0.01..1.0)).collect();
            let dot: f64 = x.iter().zip(&z).map(|(a, b)| a * b).sum();
            let nx: f64 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            let nz: f64 = z.iter().map(|v| v * v).sum::<f64>().sqrt();
            let expect = (dot / (nx * nz) + 1.0) / 2.0;
            assert!((align_features(&x, &z).unwrap() - expect).abs() < 1e-12);
        }
    }

    fn uniform_user(id: usize) -> SurveyVector {
        normalize_survey(id, &[1.0; 6], &[1.0; 10]).unwrap()
    }

    #[test]
    fn group_profile_of_identical_users() {
        let users: Vec<_> = (0..8).map(uniform_user).collect();
        let g = build_group_profile(0, 3, &users, 6, &[]).unwrap();
        for (a, b) in g.features.iter().zip(users[3].features()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn group_profile_k1_is_seed_user() {
        let mut rng = crate::rng::seeded_rng(5);
        let users: Vec<_> = (0..5)
            .map(|i| {
                let q33: Vec<f64> = (0..6).map(|_| rng.gen_range(0.1..1.0)).collect();
                let q26: Vec<f64> = (0..10).map(|_| rng.gen_range(0.1..1.0)).collect();
                normalize_survey(i, &q33, &q26).unwrap()
            })
            .collect();
        let g = build_group_profile(0, 2, &users, 1, &[]).unwrap();
        for (a, b) in g.features.iter().zip(users[2].features()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn group_profile_matches_sort_oracle() {
        let mut rng = crate::rng::seeded_rng(17);
        let users: Vec<_> = (0..10)
            .map(|i| {
                let q33: Vec<f64> = (0..6).map(|_| rng.gen_range(0.05..1.0)).collect();
                let q26: Vec<f64> = (0..10).map(|_| rng.gen_range(0.05..1.0)).collect();
                normalize_survey(i, &q33, &q26).unwrap()
            })
            .collect();
        for seed in 0..10 {
            let g = build_group_profile(0, seed, &users, 6, &[]).unwrap();
            // Exhaustive oracle: full sort of all users by cosine distance.
            let sf = users[seed].features();
            let mut order: Vec<(f64, usize)> = users
                .iter()
                .map(|u| {
                    let d = if u.user_id == seed {
                        0.0
                    } else {
                        crate::linalg::cosine_distance(&sf, &u.features())
                    };
                    (d, u.user_id)
                })
                .collect();
            order.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let mut expect = vec![0.0; FEATURE_LEN];
            for &(_, uid) in order.iter().take(6) {
                for (acc, v) in expect.iter_mut().zip(users[uid].features()) {
                    *acc += v;
                }
            }
            for v in expect.iter_mut() {
                *v /= 6.0;
            }
            for (a, b) in g.features.iter().zip(&expect) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn group_profile_insufficient_users() {
        let users: Vec<_> = (0..4).map(uniform_user).collect();
        assert!(matches!(
            build_group_profile(0, 0, &users, 6, &[]),
            Err(DatasetError::InsufficientUsers { n: 4, k: 6 })
        ));
    }

    #[test]
    fn group_blocks_stay_on_simplex() {
        let mut rng = crate::rng::seeded_rng(23);
        let users: Vec<_> = (0..12)
            .map(|i| {
                let q33: Vec<f64> = (0..6).map(|_| rng.gen_range(0.0..1.0) + 1e-3).collect();
                let q26: Vec<f64> = (0..10).map(|_| rng.gen_range(0.0..1.0) + 1e-3).collect();
                normalize_survey(i, &q33, &q26).unwrap()
            })
            .collect();
        let g = build_group_profile(0, 4, &users, 6, &[]).unwrap();
        let s33: f64 = g.features[..Q33_LEN].iter().sum();
        let s26: f64 = g.features[Q33_LEN..].iter().sum();
        assert!((s33 - 1.0).abs() < SIMPLEX_TOL);
        assert!((s26 - 1.0).abs() < SIMPLEX_TOL);
    }
}
