//! Analytic gradients for all six architectures.
//!
//! The training losses all reach the parameters through the fused logit, so
//! the interface takes one upstream value per example: `dlogit = dL/dlogit`.
//! Gradients accumulate into a [`ModelState`]-shaped bundle (see
//! [`ModelState::zeros_like`]); embedding rows not touched by the batch keep
//! exactly zero gradient.

use super::{Arch, DenseLayer, ModelError, ModelState};
use crate::linalg::cosine_with_grads;

/// One example's contribution to a backward pass.
#[derive(Debug, Clone)]
pub struct BackwardExample<'a> {
    pub user: usize,
    pub group: usize,
    /// The user's 16-d survey vector; only read by feature-path archs.
    pub features: &'a [f64],
    /// Upstream loss gradient with respect to this example's fused logit.
    pub dlogit: f64,
}

/// Accumulate analytic gradients for `batch` against `state`.
///
/// The result has the same tensor layout as `state` (names, shapes, order),
/// holding `dL/dtheta` summed over the batch.
pub fn backward(
    state: &ModelState,
    batch: &[BackwardExample<'_>],
) -> Result<ModelState, ModelError> {
    let mut grads = state.zeros_like();
    for ex in batch {
        state.check_indices(ex.user, ex.group)?;
        accumulate_main(state, &mut grads, ex)?;
        if state.arch.is_pl() {
            accumulate_pl(state, &mut grads, ex)?;
        }
    }
    Ok(grads)
}

fn accumulate_main(
    state: &ModelState,
    grads: &mut ModelState,
    ex: &BackwardExample<'_>,
) -> Result<(), ModelError> {
    let (u, g, dlogit) = (ex.user, ex.group, ex.dlogit);
    match state.arch.baseline() {
        Arch::Mf => {
            let p = state.user_main.row(u);
            let q = state.group_main.row(g);
            for (gp, &qv) in grads.user_main.row_mut(u).iter_mut().zip(q) {
                *gp += dlogit * qv;
            }
            for (gq, &pv) in grads.group_main.row_mut(g).iter_mut().zip(p) {
                *gq += dlogit * pv;
            }
        }
        Arch::Mlp => {
            let mut input: Vec<f64> = state.user_main.row(u).to_vec();
            input.extend_from_slice(state.group_main.row(g));
            let (pre, h) = state.hidden[0].forward_cached(&input);
            let out = state.output.as_ref().expect("MLP head");
            let (out_pre, _) = out.forward_cached(&h);
            let gout = grads.output.as_mut().expect("MLP head grads");
            let dh = dense_backward(out, &h, &out_pre, &[dlogit], gout);
            let dinput = dense_backward(&state.hidden[0], &input, &pre, &dh, &mut grads.hidden[0]);
            let d = state.user_main.dim;
            for (gp, &dv) in grads.user_main.row_mut(u).iter_mut().zip(&dinput[..d]) {
                *gp += dv;
            }
            for (gq, &dv) in grads.group_main.row_mut(g).iter_mut().zip(&dinput[d..]) {
                *gq += dv;
            }
        }
        Arch::NeuMf => {
            let p_gmf = state.user_main.row(u);
            let q_gmf = state.group_main.row(g);
            let gmf: Vec<f64> = p_gmf.iter().zip(q_gmf).map(|(a, b)| a * b).collect();
            let user_mlp = state.user_mlp.as_ref().expect("NeuMF tables");
            let group_mlp = state.group_mlp.as_ref().expect("NeuMF tables");
            let mut tower_in: Vec<f64> = user_mlp.row(u).to_vec();
            tower_in.extend_from_slice(group_mlp.row(g));
            if state.hidden[0].in_dim != tower_in.len() {
                return Err(ModelError::ShapeMismatch(format!(
                    "NeuMF tower expects input width {}, got {}",
                    state.hidden[0].in_dim,
                    tower_in.len()
                )));
            }
            let (pre1, t1) = state.hidden[0].forward_cached(&tower_in);
            let (pre2, t2) = state.hidden[1].forward_cached(&t1);
            let mut head_in = gmf.clone();
            head_in.extend_from_slice(&t2);
            let out = state.output.as_ref().expect("NeuMF head");
            let (out_pre, _) = out.forward_cached(&head_in);

            let gout = grads.output.as_mut().expect("NeuMF head grads");
            let dhead_in = dense_backward(out, &head_in, &out_pre, &[dlogit], gout);
            let dim_gmf = gmf.len();
            for i in 0..dim_gmf {
                grads.user_main.row_mut(u)[i] += dhead_in[i] * q_gmf[i];
                grads.group_main.row_mut(g)[i] += dhead_in[i] * p_gmf[i];
            }
            let dt2 = &dhead_in[dim_gmf..];
            let dt1 = dense_backward(&state.hidden[1], &t1, &pre2, dt2, &mut grads.hidden[1]);
            let dtower_in =
                dense_backward(&state.hidden[0], &tower_in, &pre1, &dt1, &mut grads.hidden[0]);
            let dm = user_mlp.dim;
            let gu = grads.user_mlp.as_mut().expect("NeuMF table grads");
            for (gp, &dv) in gu.row_mut(u).iter_mut().zip(&dtower_in[..dm]) {
                *gp += dv;
            }
            let gg = grads.group_mlp.as_mut().expect("NeuMF table grads");
            for (gq, &dv) in gg.row_mut(g).iter_mut().zip(&dtower_in[dm..]) {
                *gq += dv;
            }
        }
        _ => unreachable!("baseline() returns a baseline arch"),
    }
    Ok(())
}

fn accumulate_pl(
    state: &ModelState,
    grads: &mut ModelState,
    ex: &BackwardExample<'_>,
) -> Result<(), ModelError> {
    let (u, g, dlogit) = (ex.user, ex.group, ex.dlogit);
    let user_pl = state.user_pl.as_ref().expect("PL tables");
    let group_pl = state.group_pl.as_ref().expect("PL tables");
    let w_align = state.w_align.expect("PL arch has w_align");

    let (a_pl, dp, dq) = cosine_with_grads(user_pl.row(u), group_pl.row(g));
    *grads.w_align.as_mut().expect("w_align grad") += dlogit * a_pl;
    let gu = grads.user_pl.as_mut().expect("PL table grads");
    for (gp, dv) in gu.row_mut(u).iter_mut().zip(dp) {
        *gp += dlogit * w_align * dv;
    }
    let gg = grads.group_pl.as_mut().expect("PL table grads");
    for (gq, dv) in gg.row_mut(g).iter_mut().zip(dq) {
        *gq += dlogit * w_align * dv;
    }

    if state.arch.has_feature_path() {
        let proj = state.feature_proj.as_ref().expect("feature projection");
        if ex.features.len() != proj.in_dim {
            return Err(ModelError::ShapeMismatch(format!(
                "survey vector has {} entries, projection expects {}",
                ex.features.len(),
                proj.in_dim
            )));
        }
        let w_feat = state.w_feat.expect("feature path has w_feat");
        let (proj_pre, v) = proj.forward_cached(ex.features);
        let (a_feat, dv, dq2) = cosine_with_grads(&v, group_pl.row(g));
        *grads.w_feat.as_mut().expect("w_feat grad") += dlogit * a_feat;
        let gg = grads.group_pl.as_mut().expect("PL table grads");
        for (gq, dv2) in gg.row_mut(g).iter_mut().zip(dq2) {
            *gq += dlogit * w_feat * dv2;
        }
        let dv_scaled: Vec<f64> = dv.iter().map(|d| dlogit * w_feat * d).collect();
        let gproj = grads.feature_proj.as_mut().expect("projection grads");
        dense_backward(proj, ex.features, &proj_pre, &dv_scaled, gproj);
    }
    Ok(())
}

/// Standard dense-layer backward: given the layer input, cached
/// pre-activations, and `dL/doutput`, accumulate weight/bias gradients into
/// `grad_layer` and return `dL/dinput`.
fn dense_backward(
    layer: &DenseLayer,
    input: &[f64],
    pre: &[f64],
    dout: &[f64],
    grad_layer: &mut DenseLayer,
) -> Vec<f64> {
    let mut dinput = vec![0.0; layer.in_dim];
    for o in 0..layer.out_dim {
        let dpre = dout[o] * layer.activation.derivative(pre[o]);
        if dpre == 0.0 {
            continue;
        }
        grad_layer.bias[o] += dpre;
        let w_row = &layer.weight[o * layer.in_dim..(o + 1) * layer.in_dim];
        let gw_row = &mut grad_layer.weight[o * layer.in_dim..(o + 1) * layer.in_dim];
        for i in 0..layer.in_dim {
            gw_row[i] += dpre * input[i];
            dinput[i] += dpre * w_row[i];
        }
    }
    dinput
}
