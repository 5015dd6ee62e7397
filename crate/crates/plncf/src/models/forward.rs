//! Pure forward passes for all six architectures plus the fusion dispatch.

use super::{Arch, ModelError, ModelState, Prediction};
use crate::linalg::{cosine, dot, sigmoid};

fn prediction(logit: f64, pl: Option<f64>, feat: Option<f64>) -> Prediction {
    Prediction {
        logit,
        score: sigmoid(logit),
        pl_cosine: pl,
        feature_cosine: feat,
    }
}

/// Matrix-factorization pathway: the logit is the raw embedding dot product.
pub fn forward_mf(state: &ModelState, u: usize, g: usize) -> Result<Prediction, ModelError> {
    state.check_indices(u, g)?;
    let logit = dot(state.user_main.row(u), state.group_main.row(g));
    Ok(prediction(logit, None, None))
}

/// MLP pathway: concatenated embeddings through the hidden stack and scalar
/// head.
pub fn forward_mlp(state: &ModelState, u: usize, g: usize) -> Result<Prediction, ModelError> {
    state.check_indices(u, g)?;
    let mut x: Vec<f64> = state.user_main.row(u).to_vec();
    x.extend_from_slice(state.group_main.row(g));
    for layer in &state.hidden {
        x = layer.apply(&x);
    }
    let out = state
        .output
        .as_ref()
        .expect("MLP arch carries an output head")
        .apply(&x);
    Ok(prediction(out[0], None, None))
}

/// NeuMF pathway: elementwise GMF product concatenated with the MLP tower
/// output, then a linear head.
pub fn forward_neumf(state: &ModelState, u: usize, g: usize) -> Result<Prediction, ModelError> {
    state.check_indices(u, g)?;
    let gmf: Vec<f64> = state
        .user_main
        .row(u)
        .iter()
        .zip(state.group_main.row(g))
        .map(|(p, q)| p * q)
        .collect();
    let user_mlp = state.user_mlp.as_ref().expect("NeuMF carries MLP tables");
    let group_mlp = state.group_mlp.as_ref().expect("NeuMF carries MLP tables");
    let mut tower: Vec<f64> = user_mlp.row(u).to_vec();
    tower.extend_from_slice(group_mlp.row(g));
    if state.hidden[0].in_dim != tower.len() {
        return Err(ModelError::ShapeMismatch(format!(
            "NeuMF tower expects input width {}, got {}",
            state.hidden[0].in_dim,
            tower.len()
        )));
    }
    for layer in &state.hidden {
        tower = layer.apply(&tower);
    }
    let mut head_in = gmf;
    head_in.extend_from_slice(&tower);
    let out = state
        .output
        .as_ref()
        .expect("NeuMF carries an output head")
        .apply(&head_in);
    Ok(prediction(out[0], None, None))
}

/// Cosine between the user's and group's PL embeddings (norms floored).
pub fn pl_cosine(state: &ModelState, u: usize, g: usize) -> Result<f64, ModelError> {
    state.check_indices(u, g)?;
    let up = state
        .user_pl
        .as_ref()
        .ok_or_else(|| ModelError::ShapeMismatch(format!("{} has no PL tables", state.arch)))?;
    let gp = state
        .group_pl
        .as_ref()
        .ok_or_else(|| ModelError::ShapeMismatch(format!("{} has no PL tables", state.arch)))?;
    Ok(cosine(up.row(u), gp.row(g)))
}

/// Cosine between the projected 16-d survey vector and the group's PL
/// embedding. A zero projection output floors to cosine 0 by convention.
pub fn feature_cosine(state: &ModelState, x_u: &[f64], g: usize) -> Result<f64, ModelError> {
    let proj = state.feature_proj.as_ref().ok_or_else(|| {
        ModelError::ShapeMismatch(format!("{} has no survey projection", state.arch))
    })?;
    if x_u.len() != proj.in_dim {
        return Err(ModelError::ShapeMismatch(format!(
            "survey vector has {} entries, projection expects {}",
            x_u.len(),
            proj.in_dim
        )));
    }
    let gp = state
        .group_pl
        .as_ref()
        .expect("feature path implies PL tables");
    if g >= gp.rows {
        return Err(ModelError::IndexOutOfRange {
            kind: "group",
            index: g,
            limit: gp.rows,
        });
    }
    let v = proj.apply(x_u);
    Ok(cosine(&v, gp.row(g)))
}

/// Architecture dispatch with additive fusion.
///
/// Baselines pass the main logit through untouched and ignore `x_u`. PL
/// variants add `w_align * pl_cosine` and, when the survey path exists,
/// `w_feat * feature_cosine` before the sigmoid.
pub fn forward(
    state: &ModelState,
    u: usize,
    g: usize,
    x_u: &[f64],
) -> Result<Prediction, ModelError> {
    let main = match state.arch.baseline() {
        Arch::Mf => forward_mf(state, u, g)?,
        Arch::Mlp => forward_mlp(state, u, g)?,
        Arch::NeuMf => forward_neumf(state, u, g)?,
        _ => unreachable!("baseline() returns a baseline arch"),
    };
    if !state.arch.is_pl() {
        return Ok(main);
    }
    let a_pl = pl_cosine(state, u, g)?;
    let mut logit = main.logit + state.w_align.expect("PL arch has w_align") * a_pl;
    let a_feat = if state.arch.has_feature_path() {
        let a = feature_cosine(state, x_u, g)?;
        logit += state.w_feat.expect("feature path has w_feat") * a;
        Some(a)
    } else {
        None
    };
    Ok(prediction(logit, Some(a_pl), a_feat))
}

#[cfg(test)]
mod tests {
    use super::super::{init_model, Activation, DenseLayer};
    use super::*;
    use rand::Rng;

    #[test]
    fn mf_zero_user_embedding_scores_half() {
        let mut state = init_model(Arch::Mf, 3, 4, 1);
        state.user_main.row_mut(1).fill(0.0);
        let p = forward_mf(&state, 1, 2).unwrap();
        assert_eq!(p.logit, 0.0);
        assert_eq!(p.score, 0.5);
    }

    #[test]
    fn mf_unit_dot_hits_sigmoid_table() {
        let mut state = init_model(Arch::Mf, 2, 2, 1);
        state.user_main.row_mut(0).fill(0.0);
        state.group_main.row_mut(0).fill(0.0);
        state.user_main.row_mut(0)[0] = 1.0;
        state.group_main.row_mut(0)[0] = 1.0;
        let p = forward_mf(&state, 0, 0).unwrap();
        assert!((p.logit - 1.0).abs() < 1e-15);
        assert!((p.score - 0.731_058_578_6).abs() < 1e-9);
    }

    #[test]
    fn mf_logit_is_bilinear_in_user() {
        let state = init_model(Arch::Mf, 3, 4, 5);
        let base = forward_mf(&state, 2, 3).unwrap().logit;
        let mut doubled = state.clone();
        for v in doubled.user_main.row_mut(2) {
            *v *= 2.0;
        }
        let twice = forward_mf(&doubled, 2, 3).unwrap().logit;
        assert!((twice - 2.0 * base).abs() < 1e-12);
    }

    #[test]
    fn mf_rejects_out_of_range() {
        let state = init_model(Arch::Mf, 3, 4, 1);
        assert!(matches!(
            forward_mf(&state, 3, 0),
            Err(ModelError::IndexOutOfRange { kind: "user", .. })
        ));
        assert!(matches!(
            forward_mf(&state, 0, 4),
            Err(ModelError::IndexOutOfRange { kind: "group", .. })
        ));
    }

    #[test]
    fn mlp_all_zero_weights_score_half() {
        let mut state = init_model(Arch::Mlp, 3, 3, 1);
        for layer in state.hidden.iter_mut().chain(state.output.as_mut()) {
            layer.weight.fill(0.0);
            layer.bias.fill(0.0);
        }
        let p = forward_mlp(&state, 0, 0).unwrap();
        assert_eq!(p.score, 0.5);
    }

    #[test]
    fn mlp_single_unit_hand_trace() {
        // One active hidden unit: pre = 3*0.5 + (-1)*0.25 = 1.25, ReLU keeps
        // it, head doubles it and adds 0.1 -> logit 2.6.
        let mut state = init_model(Arch::Mlp, 1, 1, 1);
        state.user_main.row_mut(0).fill(0.0);
        state.group_main.row_mut(0).fill(0.0);
        state.user_main.row_mut(0)[0] = 0.5;
        state.group_main.row_mut(0)[0] = 0.25;
        let hidden = &mut state.hidden[0];
        hidden.weight.fill(0.0);
        hidden.bias.fill(0.0);
        hidden.weight[0] = 3.0; // unit 0, input 0 (user dim 0)
        hidden.weight[32] = -1.0; // unit 0, input 32 (group dim 0)
        let out = state.output.as_mut().unwrap();
        out.weight.fill(0.0);
        out.weight[0] = 2.0;
        out.bias[0] = 0.1;
        let p = forward_mlp(&state, 0, 0).unwrap();
        assert!((p.logit - 2.6).abs() < 1e-12);
    }

    #[test]
    fn mlp_finite_for_extreme_embeddings() {
        let mut state = init_model(Arch::Mlp, 2, 2, 1);
        state.user_main.row_mut(0).fill(1e3);
        state.group_main.row_mut(0).fill(-1e3);
        let p = forward_mlp(&state, 0, 0).unwrap();
        assert!(p.logit.is_finite());
        // The sigmoid saturates to the interval ends in f64 at such logits;
        // finiteness and consistency are what matter here.
        assert!((0.0..=1.0).contains(&p.score));
        assert_eq!(p.score, crate::linalg::sigmoid(p.logit));
    }

    #[test]
    fn neumf_all_zero_scores_half() {
        let mut state = init_model(Arch::NeuMf, 2, 2, 1);
        for (_, t) in state.tensors_mut() {
            t.fill(0.0);
        }
        let p = forward_neumf(&state, 0, 0).unwrap();
        assert_eq!(p.score, 0.5);
    }

    #[test]
    fn neumf_gmf_only_hand_dot() {
        let mut state = init_model(Arch::NeuMf, 2, 2, 1);
        for (_, t) in state.tensors_mut() {
            t.fill(0.0);
        }
        // Two active GMF coordinates: p = (2, 3), q = (0.5, -1).
        state.user_main.row_mut(0)[0] = 2.0;
        state.user_main.row_mut(0)[1] = 3.0;
        state.group_main.row_mut(0)[0] = 0.5;
        state.group_main.row_mut(0)[1] = -1.0;
        let out = state.output.as_mut().unwrap();
        out.weight[0] = 1.0;
        out.weight[1] = 0.5;
        // logit = 1.0 * (2 * 0.5) + 0.5 * (3 * -1) = 1 - 1.5 = -0.5
        let p = forward_neumf(&state, 0, 0).unwrap();
        assert!((p.logit + 0.5).abs() < 1e-12);
    }

    #[test]
    fn neumf_tower_input_width_is_128() {
        let state = init_model(Arch::NeuMf, 2, 2, 1);
        assert_eq!(state.hidden[0].in_dim, 128);
        assert_eq!(
            state.user_mlp.as_ref().unwrap().dim + state.group_mlp.as_ref().unwrap().dim,
            128
        );
    }

    #[test]
    fn neumf_shape_mismatch_reported() {
        let mut state = init_model(Arch::NeuMf, 2, 2, 1);
        state.hidden[0] = DenseLayer::zeros(100, 64, Activation::ReLU);
        assert!(matches!(
            forward_neumf(&state, 0, 0),
            Err(ModelError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn pl_cosine_identical_rows() {
        let mut state = init_model(Arch::MlpPl, 2, 2, 1);
        let row: Vec<f64> = (0..32).map(|i| (i as f64) - 8.0).collect();
        state.user_pl.as_mut().unwrap().row_mut(0).copy_from_slice(&row);
        state.group_pl.as_mut().unwrap().row_mut(1).copy_from_slice(&row);
        assert!((pl_cosine(&state, 0, 1).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pl_cosine_orthogonal_rows() {
        let mut state = init_model(Arch::MlpPl, 2, 2, 1);
        state.user_pl.as_mut().unwrap().row_mut(0).fill(0.0);
        state.group_pl.as_mut().unwrap().row_mut(0).fill(0.0);
        state.user_pl.as_mut().unwrap().row_mut(0)[0] = 2.0;
        state.group_pl.as_mut().unwrap().row_mut(0)[1] = 5.0;
        assert!(pl_cosine(&state, 0, 0).unwrap().abs() < 1e-12);
    }

    #[test]
    fn pl_cosine_matches_oracle() {
        let mut rng = crate::rng::seeded_rng(9);
        let mut state = init_model(Arch::MfPl, 1, 1, 1);
        for _ in 0..100 {
            let a: Vec<f64> = (0..32).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..32).map(|_| rng.gen_range(-1.0..1.0)).collect();
            state.user_pl.as_mut().unwrap().row_mut(0).copy_from_slice(&a);
            state.group_pl.as_mut().unwrap().row_mut(0).copy_from_slice(&b);
            let nx: f64 = a.iter().map(|v| v * v).sum::<f64>().sqrt();
            let nz: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
            let expect = a.iter().zip(&b).map(|(x, y)| x * y).sum::<f64>() / (nx * nz);
            assert!((pl_cosine(&state, 0, 0).unwrap() - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn pl_cosine_requires_pl_arch() {
        let state = init_model(Arch::Mf, 2, 2, 1);
        assert!(matches!(
            pl_cosine(&state, 0, 0),
            Err(ModelError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn feature_cosine_identity_like_projection() {
        let mut state = init_model(Arch::MfPl, 1, 1, 1);
        // Projection copies the 16 survey entries into the first 16 PL dims.
        let proj = state.feature_proj.as_mut().unwrap();
        proj.weight.fill(0.0);
        proj.bias.fill(0.0);
        for i in 0..16 {
            proj.weight[i * 16 + i] = 1.0;
        }
        let x: Vec<f64> = (1..=16).map(|v| v as f64 / 16.0).collect();
        let mut q = vec![0.0; 32];
        q[..16].copy_from_slice(&x);
        state.group_pl.as_mut().unwrap().row_mut(0).copy_from_slice(&q);
        assert!((feature_cosine(&state, &x, 0).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn feature_cosine_zero_projection_is_zero() {
        let mut state = init_model(Arch::MfPl, 1, 1, 1);
        let proj = state.feature_proj.as_mut().unwrap();
        proj.weight.fill(0.0);
        proj.bias.fill(0.0);
        let x = vec![1.0 / 16.0; 16];
        assert_eq!(feature_cosine(&state, &x, 0).unwrap(), 0.0);
    }

    #[test]
    fn feature_cosine_rejects_wrong_length() {
        let state = init_model(Arch::MfPl, 1, 1, 1);
        assert!(matches!(
            feature_cosine(&state, &[0.5; 12], 0),
            Err(ModelError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn fusion_off_matches_baseline_pathway() {
        let x = vec![1.0 / 16.0; 16];
        for (base, pl) in [
            (Arch::Mf, Arch::MfPl),
            (Arch::Mlp, Arch::MlpPl),
            (Arch::NeuMf, Arch::NeuMfPl),
        ] {
            let mut variant = init_model(pl, 4, 5, 7);
            variant.w_align = Some(0.0);
            if variant.w_feat.is_some() {
                variant.w_feat = Some(0.0);
            }
            // Share the main pathway parameters exactly.
            let mut baseline = init_model(base, 4, 5, 7);
            baseline.user_main = crate::models::EmbeddingTable {
                rows: 4,
                dim: variant.user_main.dim,
                values: variant.user_main.values.clone(),
            };
            baseline.group_main = crate::models::EmbeddingTable {
                rows: 5,
                dim: variant.group_main.dim,
                values: variant.group_main.values.clone(),
            };
            baseline.user_mlp = variant.user_mlp.clone();
            baseline.group_mlp = variant.group_mlp.clone();
            baseline.hidden = variant.hidden.clone();
            baseline.output = variant.output.clone();
            for u in 0..4 {
                for g in 0..5 {
                    let a = forward(&variant, u, g, &x).unwrap();
                    let b = forward(&baseline, u, g, &x).unwrap();
                    assert!(
                        (a.score - b.score).abs() < 1e-12,
                        "{base}/{pl} differ at ({u},{g})"
                    );
                }
            }
        }
    }

    #[test]
    fn fusion_unit_alignment_gives_sigmoid_one() {
        let mut state = init_model(Arch::MlpPl, 1, 1, 1);
        // Kill the main pathway.
        for layer in state.hidden.iter_mut().chain(state.output.as_mut()) {
            layer.weight.fill(0.0);
            layer.bias.fill(0.0);
        }
        // Identical PL rows -> cosine exactly 1; w_align stays at init 1.0.
        let row = vec![0.5; 32];
        state.user_pl.as_mut().unwrap().row_mut(0).copy_from_slice(&row);
        state.group_pl.as_mut().unwrap().row_mut(0).copy_from_slice(&row);
        let p = forward(&state, 0, 0, &[0.0; 16]).unwrap();
        assert!((p.logit - 1.0).abs() < 1e-12);
        assert!((p.score - 0.731_058_578_6).abs() < 1e-9);
        assert!((p.pl_cosine.unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(p.feature_cosine, None);
    }

    #[test]
    fn baselines_ignore_survey_vector() {
        let state = init_model(Arch::NeuMf, 3, 3, 2);
        let a = forward(&state, 1, 1, &[0.0; 16]).unwrap();
        let b = forward(&state, 1, 1, &[123.0; 16]).unwrap();
        assert_eq!(a, b);
        assert!(a.pl_cosine.is_none());
    }

    #[test]
    fn score_strictly_inside_unit_interval_for_moderate_logits() {
        let mut state = init_model(Arch::MfPl, 2, 2, 3);
        state.user_main.row_mut(0).fill(0.1);
        state.group_main.row_mut(0).fill(0.1);
        let p = forward(&state, 0, 0, &[1.0 / 16.0; 16]).unwrap();
        assert!(p.logit.is_finite());
        assert!(p.score > 0.0 && p.score < 1.0);
        assert!((p.score - crate::linalg::sigmoid(p.logit)).abs() < 1e-12);
    }
}
