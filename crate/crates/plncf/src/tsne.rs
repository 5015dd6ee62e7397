//! Exact t-SNE to 2D over cosine distances: conditional-Gaussian affinities
//! with per-row bandwidths found by binary search to the target perplexity,
//! Student-t low-dimensional kernel, early exaggeration, and the standard
//! momentum-plus-gains descent. Inputs are ℓ2-normalized first; every run is
//! deterministic in its seed.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{cosine_distance, normalized};
use crate::rng::{derive_seed, seeded_rng};

/// Entropy match tolerance for the bandwidth search, in bits.
pub const ENTROPY_TOL: f64 = 1e-5;
/// Probability floor used inside logarithms.
const Q_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum TsneError {
    #[error("{n} points are too few for a projection (need at least 4)")]
    TooFewPoints { n: usize },
    #[error("perplexity {perplexity} too high for {n} points (needs < (n-1)/3)")]
    PerplexityTooHigh { perplexity: f64, n: usize },
    #[error("invalid t-SNE config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub early_exaggeration: f64,
    /// Iterations that keep the exaggerated affinities.
    pub exaggeration_iters: usize,
    /// Iteration at which momentum switches from initial to final.
    pub momentum_switch_iter: usize,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    pub rng_seed: u64,
}

impl TsneConfig {
    /// Reference settings: perplexity 15, 1000 iterations, learning rate
    /// 200, exaggeration 12 for 100 iterations, momentum 0.5 then 0.8 from
    /// iteration 250.
    pub fn new(rng_seed: u64) -> Self {
        TsneConfig {
            perplexity: 15.0,
            iterations: 1000,
            learning_rate: 200.0,
            early_exaggeration: 12.0,
            exaggeration_iters: 100,
            momentum_switch_iter: 250,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            rng_seed,
        }
    }

    pub fn validate(&self, n: usize) -> Result<(), TsneError> {
        if n < 4 {
            return Err(TsneError::TooFewPoints { n });
        }
        if !(self.perplexity > 1.0) || self.perplexity >= (n - 1) as f64 / 3.0 {
            return Err(TsneError::PerplexityTooHigh {
                perplexity: self.perplexity,
                n,
            });
        }
        if self.iterations == 0 {
            return Err(TsneError::InvalidConfig("iterations must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(TsneError::InvalidConfig(
                "learning rate must be positive".into(),
            ));
        }
        if !(self.early_exaggeration >= 1.0) {
            return Err(TsneError::InvalidConfig(
                "early exaggeration must be at least 1".into(),
            ));
        }
        for m in [self.initial_momentum, self.final_momentum] {
            if !(0.0..1.0).contains(&m) {
                return Err(TsneError::InvalidConfig(format!(
                    "momentum {m} must lie in [0, 1)"
                )));
            }
        }
        Ok(())
    }
}

/// The 2D layout plus the per-iteration KL(P‖Q) trace (always computed on
/// the un-exaggerated affinities).
#[derive(Debug, Clone, PartialEq)]
pub struct TsneEmbedding {
    pub coords: Vec<[f64; 2]>,
    pub kl_trace: Vec<f64>,
}

/// Row-conditional affinities over cosine distances, before symmetrization.
/// Each row is a probability distribution whose Shannon entropy hits
/// log2(perplexity) within [`ENTROPY_TOL`] bits (geometry permitting; a
/// perfectly equidistant row is uniform at any bandwidth). Exposed so
/// external checks can measure the achieved per-row perplexity directly.
pub fn conditional_affinities(
    embeddings: &[Vec<f64>],
    perplexity: f64,
) -> Result<Vec<Vec<f64>>, TsneError> {
    let n = embeddings.len();
    if n < 4 {
        return Err(TsneError::TooFewPoints { n });
    }
    if !(perplexity > 1.0) || perplexity >= (n - 1) as f64 / 3.0 {
        return Err(TsneError::PerplexityTooHigh { perplexity, n });
    }

    let unit: Vec<Vec<f64>> = embeddings.iter().map(|r| normalized(r)).collect();
    let mut dist = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = cosine_distance(&unit[i], &unit[j]);
            dist[i][j] = d;
            dist[j][i] = d;
        }
    }

    let target = perplexity.log2();
    let mut cond = vec![vec![0.0; n]; n];
    for i in 0..n {
        let row = conditional_row(&dist[i], i, target);
        cond[i] = row;
    }
    Ok(cond)
}

/// Symmetrized, sum-to-one affinities: the conditional rows averaged with
/// their transposes and scaled so the whole matrix sums to one.
pub fn pairwise_affinities(
    embeddings: &[Vec<f64>],
    perplexity: f64,
) -> Result<Vec<Vec<f64>>, TsneError> {
    let n = embeddings.len();
    let cond = conditional_affinities(embeddings, perplexity)?;

    // Symmetrize; each conditional row sums to 1, so dividing by 2n makes
    // the whole matrix sum to 1.
    let mut p = vec![vec![0.0; n]; n];
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            p[i][j] = (cond[i][j] + cond[j][i]) / (2.0 * n as f64);
            total += p[i][j];
        }
    }
    // Guard against accumulated rounding.
    for row in p.iter_mut() {
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    Ok(p)
}

/// One row's conditional distribution with its bandwidth found by bisection
/// on the precision `beta` in `exp(-beta * d)`.
fn conditional_row(dist: &[f64], i: usize, target_bits: f64) -> Vec<f64> {
    let n = dist.len();
    let mut beta = 1.0f64;
    let mut lo = 0.0f64;
    let mut hi = f64::INFINITY;
    let mut row = vec![0.0; n];
    for _ in 0..100 {
        // Shift by the row minimum before exponentiating; the shift cancels
        // in the normalization.
        let min_d = dist
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(_, d)| *d)
            .fold(f64::INFINITY, f64::min);
        let mut sum = 0.0;
        for j in 0..n {
            row[j] = if j == i {
                0.0
            } else {
                (-beta * (dist[j] - min_d)).exp()
            };
            sum += row[j];
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
        let entropy_bits: f64 = row
            .iter()
            .filter(|v| **v > 0.0)
            .map(|v| -v * v.log2())
            .sum();
        if (entropy_bits - target_bits).abs() < ENTROPY_TOL {
            break;
        }
        if entropy_bits > target_bits {
            // Too flat: sharpen.
            lo = beta;
            beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
        } else {
            hi = beta;
            beta = (beta + lo) / 2.0;
        }
    }
    row
}

/// Student-t kernel weights and their total mass for the current layout.
fn t_kernel(coords: &[[f64; 2]]) -> (Vec<Vec<f64>>, f64) {
    let n = coords.len();
    let mut w = vec![vec![0.0; n]; n];
    let mut total = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let dx = coords[i][0] - coords[j][0];
            let dy = coords[i][1] - coords[j][1];
            let v = 1.0 / (1.0 + dx * dx + dy * dy);
            w[i][j] = v;
            w[j][i] = v;
            total += 2.0 * v;
        }
    }
    (w, total)
}

/// KL(P‖Q) for the current layout.
pub(crate) fn kl_divergence(p: &[Vec<f64>], coords: &[[f64; 2]]) -> f64 {
    let (w, total) = t_kernel(coords);
    let n = coords.len();
    let mut kl = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j && p[i][j] > 0.0 {
                let q = (w[i][j] / total).max(Q_FLOOR);
                kl += p[i][j] * (p[i][j] / q).ln();
            }
        }
    }
    kl
}

/// Gradient of KL(P_eff‖Q) with respect to the layout:
/// `4 * sum_j (p_ij - q_ij) * w_ij * (y_i - y_j)`.
pub(crate) fn kl_gradient(p_eff: &[Vec<f64>], coords: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let (w, total) = t_kernel(coords);
    let n = coords.len();
    let mut grad = vec![[0.0; 2]; n];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let q = w[i][j] / total;
            let mult = 4.0 * (p_eff[i][j] - q) * w[i][j];
            grad[i][0] += mult * (coords[i][0] - coords[j][0]);
            grad[i][1] += mult * (coords[i][1] - coords[j][1]);
        }
    }
    grad
}

/// Run the full projection. ℓ2 normalization, affinity construction, and the
/// descent are all internal; the result depends only on the inputs and the
/// config.
pub fn tsne_project(
    embeddings: &[Vec<f64>],
    config: &TsneConfig,
) -> Result<TsneEmbedding, TsneError> {
    let n = embeddings.len();
    config.validate(n)?;
    let p = pairwise_affinities(embeddings, config.perplexity)?;

    let mut rng = seeded_rng(derive_seed(config.rng_seed, "tsne-init"));
    let init = Normal::new(0.0, 1e-4).expect("valid init distribution");
    let mut coords: Vec<[f64; 2]> = (0..n)
        .map(|_| [init.sample(&mut rng), init.sample(&mut rng)])
        .collect();
    let mut velocity = vec![[0.0f64; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    let mut kl_trace = Vec::with_capacity(config.iterations);

    let exaggerated: Vec<Vec<f64>> = p
        .iter()
        .map(|row| row.iter().map(|v| v * config.early_exaggeration).collect())
        .collect();

    for iter in 0..config.iterations {
        if iter == config.exaggeration_iters {
            // Fresh optimizer state for the second phase: velocity built
            // against the exaggerated affinities overshoots once the
            // gradient shrinks back to its plain magnitude.
            velocity = vec![[0.0f64; 2]; n];
            gains = vec![[1.0f64; 2]; n];
        }
        let p_eff = if iter < config.exaggeration_iters {
            &exaggerated
        } else {
            &p
        };
        let momentum = if iter < config.momentum_switch_iter {
            config.initial_momentum
        } else {
            config.final_momentum
        };
        let grad = kl_gradient(p_eff, &coords);
        for i in 0..n {
            for d in 0..2 {
                let same_direction = grad[i][d].signum() == velocity[i][d].signum();
                gains[i][d] = if same_direction {
                    (gains[i][d] * 0.8).max(0.01)
                } else {
                    gains[i][d] + 0.2
                };
                velocity[i][d] =
                    momentum * velocity[i][d] - config.learning_rate * gains[i][d] * grad[i][d];
                coords[i][d] += velocity[i][d];
            }
        }
        // Keep the layout centered.
        let mut mean = [0.0; 2];
        for c in &coords {
            mean[0] += c[0];
            mean[1] += c[1];
        }
        mean[0] /= n as f64;
        mean[1] /= n as f64;
        for c in coords.iter_mut() {
            c[0] -= mean[0];
            c[1] -= mean[1];
        }
        kl_trace.push(kl_divergence(&p, &coords));
    }

    Ok(TsneEmbedding { coords, kl_trace })
}
