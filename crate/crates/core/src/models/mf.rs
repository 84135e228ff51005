//! Latent-factor models without bias terms: SVD-style factorization trained
//! with squared loss on binary labels, and BPR trained on (u, i, j) triples.

use super::{dot, softplus, Init, LayoutBuilder, ModelDims, ModelState};
use crate::dpsgd::SparseGradient;

pub(super) fn layout(dims: &ModelDims) -> LayoutBuilder {
    let mut b = LayoutBuilder::new();
    b.add("user_factors", &[dims.num_users, dims.latent_dim], Init::Embedding);
    b.add("item_factors", &[dims.num_items, dims.latent_dim], Init::Embedding);
    b
}

fn user_offset(state: &ModelState, user: usize) -> usize {
    user * state.dims.latent_dim
}

fn item_offset(state: &ModelState, item: usize) -> usize {
    (state.dims.num_users + item) * state.dims.latent_dim
}

fn row(state: &ModelState, offset: usize) -> &[f64] {
    &state.params()[offset..offset + state.dims.latent_dim]
}

pub(super) fn score_all(state: &ModelState, user: usize) -> Vec<f64> {
    let p = row(state, user_offset(state, user));
    (0..state.dims.num_items)
        .map(|i| dot(p, row(state, item_offset(state, i))))
        .collect()
}

/// `(p_u·q_i − y)²`.
pub(super) fn squared_loss(state: &ModelState, user: usize, item: usize, label: f64) -> (f64, SparseGradient) {
    let (uo, io) = (user_offset(state, user), item_offset(state, item));
    let p = row(state, uo);
    let q = row(state, io);
    let err = dot(p, q) - label;
    let d = 2.0 * err;
    let mut grad = SparseGradient::default();
    grad.push(uo, q.iter().map(|x| d * x).collect());
    grad.push(io, p.iter().map(|x| d * x).collect());
    (err * err, grad)
}

/// `−ln σ(p_u·q_i − p_u·q_j)`.
pub(super) fn bpr_loss(state: &ModelState, user: usize, pos: usize, neg: usize) -> (f64, SparseGradient) {
    let (uo, io, jo) = (
        user_offset(state, user),
        item_offset(state, pos),
        item_offset(state, neg),
    );
    let p = row(state, uo);
    let qi = row(state, io);
    let qj = row(state, jo);
    let x = dot(p, qi) - dot(p, qj);
    let loss = softplus(-x);
    // d/dx −ln σ(x) = σ(x) − 1 = −σ(−x)
    let d = -super::sigmoid(-x);
    let mut grad = SparseGradient::default();
    grad.push(uo, qi.iter().zip(qj).map(|(a, b)| d * (a - b)).collect());
    grad.push(io, p.iter().map(|x| d * x).collect());
    grad.push(jo, p.iter().map(|x| -d * x).collect());
    (loss, grad)
}
