//! Binary and soft-label cross-entropy with a numerical clamp, and the
//! combined objective that couples them through the pseudo-label weight.
//!
//! The clamp guards only the logarithms: scores are confined to
//! `[1e-7, 1 - 1e-7]` before `ln`, while the gradient path keeps the smooth
//! sigmoid identity `dL/dlogit = score - label` on the unclamped score (the
//! clamp never binds at the moderate logits seen in training, and the smooth
//! form avoids a dead zone at saturation).

use serde::{Deserialize, Serialize};

use super::TrainError;

/// Lower clamp applied to scores before taking logarithms.
pub const SCORE_CLAMP_MIN: f64 = 1e-7;
/// Upper clamp applied to scores before taking logarithms.
pub const SCORE_CLAMP_MAX: f64 = 1.0 - 1e-7;

/// Batch reduction. Sums match the objective as published; means are offered
/// for experimentation and scale each term by its own pair count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    #[default]
    Sum,
    Mean,
}

/// One scored user-group pair in a training batch. `align` carries the
/// pseudo-label for observed memberships; sampled negatives leave it unset
/// and therefore contribute no pseudo-label term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainExample {
    pub user_id: usize,
    pub group_id: usize,
    /// Hard interaction label: 1.0 observed, 0.0 sampled negative.
    pub label: f64,
    /// Soft pseudo-label in `[0, 1]`, present only for positives.
    pub align: Option<f64>,
}

pub fn clamp_score(score: f64) -> f64 {
    score.clamp(SCORE_CLAMP_MIN, SCORE_CLAMP_MAX)
}

/// Binary cross-entropy `-[y ln s + (1-y) ln(1-s)]` with the score clamped
/// away from 0 and 1.
pub fn bce_loss(score: f64, label: f64) -> f64 {
    debug_assert!(label == 0.0 || label == 1.0, "hard label must be 0 or 1");
    let s = clamp_score(score);
    -(label * s.ln() + (1.0 - label) * (1.0 - s).ln())
}

/// Soft-label cross-entropy against a pseudo-label in `[0, 1]`. Minimized
/// over the score exactly at `score = soft_label`.
pub fn pl_loss(score: f64, soft_label: f64) -> Result<f64, TrainError> {
    if !(0.0..=1.0).contains(&soft_label) {
        return Err(TrainError::InvalidSoftLabel(soft_label));
    }
    let s = clamp_score(score);
    Ok(-(soft_label * s.ln() + (1.0 - soft_label) * (1.0 - s).ln()))
}

/// The combined objective split into its two terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchLoss {
    /// `bce + lambda_pl * pl` (after reduction).
    pub total: f64,
    pub bce: f64,
    pub pl: f64,
}

/// Reduced interaction loss plus `lambda_pl` times the reduced pseudo-label
/// loss over the examples that carry a soft label. A zero `lambda_pl` skips
/// the pseudo-label pass outright, so the total is bitwise the reduced
/// interaction loss.
pub fn combined_loss(
    scores: &[f64],
    examples: &[TrainExample],
    lambda_pl: f64,
    reduction: Reduction,
) -> Result<BatchLoss, TrainError> {
    check_batch(scores, examples, lambda_pl)?;
    let mut bce_sum = 0.0;
    for (s, ex) in scores.iter().zip(examples) {
        bce_sum += bce_loss(*s, ex.label);
    }
    let mut pl_sum = 0.0;
    let mut n_pl = 0usize;
    if lambda_pl > 0.0 {
        for (s, ex) in scores.iter().zip(examples) {
            if let Some(soft) = ex.align {
                pl_sum += pl_loss(*s, soft)?;
                n_pl += 1;
            }
        }
    }
    let (bce, pl) = match reduction {
        Reduction::Sum => (bce_sum, pl_sum),
        Reduction::Mean => (
            bce_sum / scores.len() as f64,
            if n_pl > 0 { pl_sum / n_pl as f64 } else { 0.0 },
        ),
    };
    let total = if lambda_pl > 0.0 {
        bce + lambda_pl * pl
    } else {
        bce
    };
    Ok(BatchLoss { total, bce, pl })
}

/// Gradient of [`combined_loss`] with respect to each example's logit,
/// using the sigmoid identity on the unclamped score.
pub fn combined_loss_dlogits(
    scores: &[f64],
    examples: &[TrainExample],
    lambda_pl: f64,
    reduction: Reduction,
) -> Result<Vec<f64>, TrainError> {
    check_batch(scores, examples, lambda_pl)?;
    let n_pl = examples.iter().filter(|e| e.align.is_some()).count();
    let (bce_scale, pl_scale) = match reduction {
        Reduction::Sum => (1.0, 1.0),
        Reduction::Mean => (
            1.0 / scores.len() as f64,
            if n_pl > 0 { 1.0 / n_pl as f64 } else { 0.0 },
        ),
    };
    let mut out = Vec::with_capacity(scores.len());
    for (s, ex) in scores.iter().zip(examples) {
        let mut d = bce_scale * (s - ex.label);
        if lambda_pl > 0.0 {
            if let Some(soft) = ex.align {
                d += lambda_pl * pl_scale * (s - soft);
            }
        }
        out.push(d);
    }
    Ok(out)
}

fn check_batch(
    scores: &[f64],
    examples: &[TrainExample],
    lambda_pl: f64,
) -> Result<(), TrainError> {
    if scores.len() != examples.len() {
        return Err(TrainError::ShapeMismatch(format!(
            "{} scores for {} examples",
            scores.len(),
            examples.len()
        )));
    }
    if scores.is_empty() {
        return Err(TrainError::ShapeMismatch("empty batch".into()));
    }
    if lambda_pl > 0.0 {
        for ex in examples {
            if let Some(soft) = ex.align {
                if !(0.0..=1.0).contains(&soft) {
                    return Err(TrainError::InvalidSoftLabel(soft));
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::sigmoid;

    fn ex(label: f64, align: Option<f64>) -> TrainExample {
        TrainExample {
            user_id: 0,
            group_id: 0,
            label,
            align,
        }
    }

    #[test]
    fn bce_known_values() {
        assert!((bce_loss(0.5, 1.0) - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((bce_loss(0.5, 0.0) - std::f64::consts::LN_2).abs() < 1e-12);
        // -ln 0.2 = ln 5
        assert!((bce_loss(0.8, 0.0) - 5f64.ln()).abs() < 1e-12);
        assert!((bce_loss(0.8, 0.0) - 1.609438).abs() < 1e-6);
    }

    #[test]
    fn bce_confident_correct_is_near_zero() {
        let l = bce_loss(1.0, 1.0); // clamp keeps the log finite
        assert!(l >= 0.0 && l < 1e-6, "got {l}");
        let l = bce_loss(0.0, 0.0);
        assert!(l >= 0.0 && l < 1e-6, "got {l}");
    }

    #[test]
    fn bce_clamp_bounds_extreme_scores() {
        let worst = bce_loss(0.0, 1.0);
        assert!((worst - (-SCORE_CLAMP_MIN.ln())).abs() < 1e-9);
        assert!(worst.is_finite());
    }

    #[test]
    fn pl_hard_one_reduces_to_bce() {
        for &s in &[0.02, 0.3, 0.5, 0.77, 0.999] {
            assert_eq!(pl_loss(s, 1.0).unwrap(), bce_loss(s, 1.0));
            assert_eq!(pl_loss(s, 0.0).unwrap(), bce_loss(s, 0.0));
        }
    }

    #[test]
    fn pl_minimum_sits_at_soft_label() {
        // Grid search: the minimizing score matches the soft label.
        for &soft in &[0.5, 0.7, 0.25] {
            let mut best = (f64::INFINITY, 0.0);
            for i in 1..1000 {
                let s = i as f64 / 1000.0;
                let l = pl_loss(s, soft).unwrap();
                if l < best.0 {
                    best = (l, s);
                }
            }
            assert!(
                (best.1 - soft).abs() < 1e-9,
                "minimum for soft {soft} found at {}",
                best.1
            );
        }
        // At the minimum for soft 0.5 the value is ln 2.
        assert!((pl_loss(0.5, 0.5).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn pl_rejects_bad_soft_labels() {
        for bad in [-0.1, 1.1, f64::NAN] {
            assert!(matches!(
                pl_loss(0.5, bad),
                Err(TrainError::InvalidSoftLabel(_))
            ));
        }
    }

    #[test]
    fn combined_lambda_zero_is_bitwise_bce_sum() {
        let scores = [0.81, 0.13, 0.5, 0.99];
        let examples = [
            ex(1.0, Some(0.9)),
            ex(0.0, None),
            ex(1.0, Some(0.4)),
            ex(0.0, None),
        ];
        let got = combined_loss(&scores, &examples, 0.0, Reduction::Sum).unwrap();
        let oracle: f64 = scores
            .iter()
            .zip(&examples)
            .map(|(s, e)| bce_loss(*s, e.label))
            .sum();
        assert_eq!(got.total, oracle);
        assert_eq!(got.pl, 0.0);
    }

    #[test]
    fn combined_confident_aligned_positive_is_tiny() {
        let got = combined_loss(&[1.0], &[ex(1.0, Some(1.0))], 0.35, Reduction::Sum).unwrap();
        assert!(got.total >= 0.0 && got.total < 1e-5, "got {}", got.total);
    }

    #[test]
    fn combined_matches_hand_summed_micro_batch() {
        // Two positives (aligns 0.9 and 0.55) and two negatives, lambda 0.35.
        let scores = [0.8, 0.3, 0.6, 0.2];
        let examples = [
            ex(1.0, Some(0.9)),
            ex(0.0, None),
            ex(1.0, Some(0.55)),
            ex(0.0, None),
        ];
        let bce = -(0.8f64.ln()) - (0.7f64.ln()) - (0.6f64.ln()) - (0.8f64.ln());
        let pl = -(0.9 * 0.8f64.ln() + 0.1 * 0.2f64.ln())
            - (0.55 * 0.6f64.ln() + 0.45 * 0.4f64.ln());
        let oracle = bce + 0.35 * pl;
        let got = combined_loss(&scores, &examples, 0.35, Reduction::Sum).unwrap();
        assert!((got.total - oracle).abs() < 1e-10, "got {}", got.total);
        assert!((got.bce - bce).abs() < 1e-12);
        assert!((got.pl - pl).abs() < 1e-12);
    }

    #[test]
    fn mean_reduction_scales_each_term_by_its_count() {
        let scores = [0.8, 0.3, 0.6, 0.2];
        let examples = [
            ex(1.0, Some(0.9)),
            ex(0.0, None),
            ex(1.0, Some(0.55)),
            ex(0.0, None),
        ];
        let sum = combined_loss(&scores, &examples, 0.35, Reduction::Sum).unwrap();
        let mean = combined_loss(&scores, &examples, 0.35, Reduction::Mean).unwrap();
        assert!((mean.bce - sum.bce / 4.0).abs() < 1e-15);
        assert!((mean.pl - sum.pl / 2.0).abs() < 1e-15);
    }

    #[test]
    fn batch_shape_errors() {
        assert!(matches!(
            combined_loss(&[0.5], &[], 0.0, Reduction::Sum),
            Err(TrainError::ShapeMismatch(_))
        ));
        assert!(matches!(
            combined_loss(&[], &[], 0.0, Reduction::Sum),
            Err(TrainError::ShapeMismatch(_))
        ));
        assert!(matches!(
            combined_loss(&[0.5], &[ex(1.0, Some(1.5))], 0.2, Reduction::Sum),
            Err(TrainError::InvalidSoftLabel(_))
        ));
    }

    #[test]
    fn dlogits_match_finite_differences_of_the_loss() {
        let logits = [0.7, -1.3, 0.2, 2.1];
        let examples = [
            ex(1.0, Some(0.9)),
            ex(0.0, None),
            ex(1.0, Some(0.55)),
            ex(0.0, None),
        ];
        for reduction in [Reduction::Sum, Reduction::Mean] {
            for lambda in [0.0, 0.35] {
                let scores: Vec<f64> = logits.iter().map(|&l| sigmoid(l)).collect();
                let grads =
                    combined_loss_dlogits(&scores, &examples, lambda, reduction).unwrap();
                for i in 0..logits.len() {
                    let h = 1e-6;
                    let eval = |delta: f64| {
                        let mut ls = logits;
                        ls[i] += delta;
                        let ss: Vec<f64> = ls.iter().map(|&l| sigmoid(l)).collect();
                        combined_loss(&ss, &examples, lambda, reduction)
                            .unwrap()
                            .total
                    };
                    let fd = (eval(h) - eval(-h)) / (2.0 * h);
                    assert!(
                        (grads[i] - fd).abs() < 1e-8,
                        "component {i}: analytic {} vs fd {fd}",
                        grads[i]
                    );
                }
            }
        }
    }
}
