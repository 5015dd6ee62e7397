//! Synthetic dataset generator.
//!
//! Users are drawn blockwise from a symmetric Dirichlet, so each survey block
//! is uniform over its simplex at the default concentration. Groups are built
//! by k-nearest-neighbor aggregation around each user, repeated `reps` times
//! with a widening neighbor exclusion so the repetitions differ. Every group
//! yields one observed membership for its seed user.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

use super::{
    align_features, build_group_profile, BundleMeta, DatasetBundle, DatasetError, GroupProfile,
    Interaction, SurveyVector, Q26_LEN, Q33_LEN,
};
use crate::linalg;
use crate::rng::seeded_rng;

/// Bumped whenever generation order or semantics change.
pub const GENERATOR_VERSION: u32 = 1;

/// Parameters for [`generate_synthetic_dataset`].
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    /// Number of users.
    pub n: usize,
    /// Group repetitions per user.
    pub reps: usize,
    /// Neighborhood size for group aggregation.
    pub k: usize,
    /// Seed for the whole generation stream.
    pub rng_seed: u64,
    /// Dirichlet concentration for both survey blocks.
    pub alpha: f64,
    /// Extra groups seeded by the lowest-variance users, one each, appended
    /// after the regular `n * reps` groups. The canonical configuration uses 3
    /// so the published group and membership counts are matched exactly; the
    /// base generator leaves it 0 and yields exactly `n * reps`.
    pub extra_groups: usize,
}

impl GeneratorConfig {
    /// Plain configuration: `n * reps` groups, uniform Dirichlet blocks.
    pub fn new(n: usize, reps: usize, k: usize, rng_seed: u64) -> Self {
        Self {
            n,
            reps,
            k,
            rng_seed,
            alpha: 1.0,
            extra_groups: 0,
        }
    }

    /// The published-cohort configuration: 165 users, 3 repetitions, k=6,
    /// padded by 3 extra groups to reach 498 groups / 498 memberships.
    pub fn canonical(rng_seed: u64) -> Self {
        Self {
            n: 165,
            reps: 3,
            k: 6,
            rng_seed,
            alpha: 1.0,
            extra_groups: 3,
        }
    }
}

/// Generate a complete [`DatasetBundle`] from `config`.
///
/// Deterministic: the same config (including seed) reproduces the bundle
/// byte-for-byte. Repetition `r` for a user excludes that user's `r - 1`
/// nearest non-self neighbors before selecting the k-neighborhood, so each
/// repetition aggregates a different user set. When `extra_groups > 0`, the
/// users whose 16-d vectors have the lowest variance each seed one additional
/// group (at the next exclusion depth) and keep its membership, so those users
/// end up with `reps + 1` observed memberships.
pub fn generate_synthetic_dataset(config: &GeneratorConfig) -> Result<DatasetBundle, DatasetError> {
    assert!(config.reps >= 1, "need at least one repetition per user");
    assert!(config.n >= config.k, "need n >= k users");
    assert!(
        config.extra_groups <= config.n,
        "cannot seed more extra groups than users"
    );
    let mut rng = seeded_rng(config.rng_seed);

    let users: Vec<SurveyVector> = (0..config.n)
        .map(|user_id| sample_user(user_id, config.alpha, &mut rng))
        .collect();

    // Each user's non-self neighbors ranked by (cosine distance, id); the
    // prefix of this list is what widening repetitions exclude.
    let neighbor_order: Vec<Vec<usize>> = (0..config.n)
        .map(|u| ranked_neighbors(u, &users))
        .collect();

    let mut groups: Vec<GroupProfile> = Vec::with_capacity(config.n * config.reps);
    let mut interactions: Vec<Interaction> = Vec::with_capacity(groups.capacity());
    let push_group = |seed_user: usize,
                          rep: usize,
                          groups: &mut Vec<GroupProfile>,
                          interactions: &mut Vec<Interaction>|
     -> Result<(), DatasetError> {
        let group_id = groups.len();
        let excluded = &neighbor_order[seed_user][..rep - 1];
        let profile = build_group_profile(group_id, seed_user, &users, config.k, excluded)?;
        let align = align_features(&users[seed_user].features(), &profile.features)?;
        interactions.push(Interaction {
            user_id: seed_user,
            group_id,
            align,
        });
        groups.push(profile);
        Ok(())
    };

    for user_id in 0..config.n {
        for rep in 1..=config.reps {
            push_group(user_id, rep, &mut groups, &mut interactions)?;
        }
    }
    for &user_id in &lowest_variance_users(&users, config.extra_groups) {
        push_group(user_id, config.reps + 1, &mut groups, &mut interactions)?;
    }

    let bundle = DatasetBundle {
        meta: BundleMeta {
            n: config.n,
            m: groups.len(),
            k: config.k,
            reps: config.reps,
            rng_seed: config.rng_seed,
            generator_version: GENERATOR_VERSION,
        },
        users,
        groups,
        interactions,
    };
    bundle.validate()?;
    Ok(bundle)
}

fn sample_user(user_id: usize, alpha: f64, rng: &mut ChaCha8Rng) -> SurveyVector {
    SurveyVector {
        user_id,
        q33: sample_simplex(Q33_LEN, alpha, rng),
        q26: sample_simplex(Q26_LEN, alpha, rng),
    }
}

/// Symmetric Dirichlet via normalized Gamma(alpha, 1) draws.
fn sample_simplex(len: usize, alpha: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("valid Dirichlet concentration");
    loop {
        let draws: Vec<f64> = (0..len).map(|_| gamma.sample(rng)).collect();
        let sum: f64 = draws.iter().sum();
        // Underflow to an all-zero block is astronomically unlikely but would
        // break the simplex invariant, so redraw rather than divide by zero.
        if sum > 0.0 {
            return draws.iter().map(|v| v / sum).collect();
        }
    }
}

/// All users except `user`, sorted by (cosine distance to `user`, user id).
fn ranked_neighbors(user: usize, users: &[SurveyVector]) -> Vec<usize> {
    let feats = users[user].features();
    let mut ranked: Vec<(f64, usize)> = users
        .iter()
        .filter(|u| u.user_id != user)
        .map(|u| (linalg::cosine_distance(&feats, &u.features()), u.user_id))
        .collect();
    ranked.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
    ranked.into_iter().map(|(_, id)| id).collect()
}

/// The `count` users whose feature vectors have the smallest variance,
/// in ascending (variance, user id) order.
fn lowest_variance_users(users: &[SurveyVector], count: usize) -> Vec<usize> {
    let mut ranked: Vec<(f64, usize)> = users
        .iter()
        .map(|u| (feature_variance(&u.features()), u.user_id))
        .collect();
    ranked.sort_by(|a, b| a.partial_cmp(b).expect("finite variances"));
    ranked.into_iter().take(count).map(|(_, id)| id).collect()
}

fn feature_variance(feats: &[f64]) -> f64 {
    let mean = feats.iter().sum::<f64>() / feats.len() as f64;
    feats.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / feats.len() as f64
}

impl DatasetBundle {
    /// Convenience constructor for tiny deterministic bundles in tests and
    /// examples: `n` users, one group per user over the whole population.
    pub fn small_example(n: usize, rng_seed: u64) -> Self {
        generate_synthetic_dataset(&GeneratorConfig::new(n, 1, n.min(6), rng_seed))
            .expect("small example generation cannot fail")
    }
}
