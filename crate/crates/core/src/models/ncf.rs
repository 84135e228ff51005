//! Neural collaborative filtering: a GMF branch (element-wise product of
//! user and item embeddings) fused with a ReLU MLP tower over concatenated
//! user and item embeddings, followed by one linear unit and a sigmoid.
//! Inverted dropout is applied after every hidden ReLU during training.

use rand::Rng;

use super::{sigmoid, softplus, Init, LayoutBuilder, ModelDims, ModelState};
use crate::dpsgd::SparseGradient;
use crate::rng;

struct Offsets {
    user_gmf: usize,
    item_gmf: usize,
    user_mlp: usize,
    item_mlp: usize,
    /// (weight, bias, in, out) per hidden layer
    layers: Vec<(usize, usize, usize, usize)>,
    out_w: usize,
    out_b: usize,
}

pub(super) fn layout(dims: &ModelDims) -> LayoutBuilder {
    let mut b = LayoutBuilder::new();
    let half = dims.mlp_layers[0] / 2;
    b.add("user_gmf", &[dims.num_users, dims.gmf_dim], Init::Embedding);
    b.add("item_gmf", &[dims.num_items, dims.gmf_dim], Init::Embedding);
    b.add("user_mlp", &[dims.num_users, half], Init::Embedding);
    b.add("item_mlp", &[dims.num_items, half], Init::Embedding);
    for (l, w) in dims.mlp_layers.windows(2).enumerate() {
        b.add(&format!("mlp_w{l}"), &[w[1], w[0]], Init::FanIn(w[0]));
        b.add(&format!("mlp_b{l}"), &[w[1]], Init::Zero);
    }
    let fused = dims.gmf_dim + dims.mlp_layers.last().copied().unwrap_or(0);
    b.add("out_w", &[fused], Init::FanIn(fused));
    b.add("out_b", &[1], Init::Zero);
    b
}

fn offsets(dims: &ModelDims) -> Offsets {
    let half = dims.mlp_layers[0] / 2;
    let g = dims.gmf_dim;
    let user_gmf = 0;
    let item_gmf = user_gmf + dims.num_users * g;
    let user_mlp = item_gmf + dims.num_items * g;
    let item_mlp = user_mlp + dims.num_users * half;
    let mut next = item_mlp + dims.num_items * half;
    let mut layers = Vec::new();
    for w in dims.mlp_layers.windows(2) {
        let weight = next;
        let bias = weight + w[0] * w[1];
        next = bias + w[1];
        layers.push((weight, bias, w[0], w[1]));
    }
    let out_w = next;
    let out_b = out_w + g + dims.mlp_layers.last().copied().unwrap_or(0);
    Offsets {
        user_gmf,
        item_gmf,
        user_mlp,
        item_mlp,
        layers,
        out_w,
        out_b,
    }
}

struct Forward {
    gmf: Vec<f64>,
    /// Activations entering each hidden layer, then the tower output.
    acts: Vec<Vec<f64>>,
    /// Pre-activations of each hidden layer.
    pre: Vec<Vec<f64>>,
    masks: Vec<Vec<f64>>,
    logit: f64,
}

fn forward(state: &ModelState, o: &Offsets, user: usize, item: usize, draw: Option<u64>) -> Forward {
    let p = state.params();
    let dims = &state.dims;
    let g = dims.gmf_dim;
    let half = dims.mlp_layers[0] / 2;

    let ug = &p[o.user_gmf + user * g..][..g];
    let ig = &p[o.item_gmf + item * g..][..g];
    let gmf: Vec<f64> = ug.iter().zip(ig).map(|(a, b)| a * b).collect();

    let mut input = Vec::with_capacity(2 * half);
    input.extend_from_slice(&p[o.user_mlp + user * half..][..half]);
    input.extend_from_slice(&p[o.item_mlp + item * half..][..half]);

    let keep = 1.0 - dims.dropout;
    let mut mask_rng = draw.map(|s| rng::stream(s, rng::tag::EXAMPLE));
    let mut acts = vec![input];
    let mut pre = Vec::new();
    let mut masks = Vec::new();
    for &(w, b, n_in, n_out) in &o.layers {
        let x = acts.last().expect("input present");
        let a: Vec<f64> = (0..n_out)
            .map(|r| {
                let wr = &p[w + r * n_in..][..n_in];
                p[b + r] + wr.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect();
        let mask: Vec<f64> = match mask_rng.as_mut() {
            Some(rng) if dims.dropout > 0.0 => (0..n_out)
                .map(|_| if rng.random_bool(keep) { 1.0 / keep } else { 0.0 })
                .collect(),
            _ => vec![1.0; n_out],
        };
        let h: Vec<f64> = a.iter().zip(&mask).map(|(v, m)| v.max(0.0) * m).collect();
        pre.push(a);
        masks.push(mask);
        acts.push(h);
    }

    let tower = acts.last().expect("tower output");
    let ow = &p[o.out_w..o.out_b];
    let logit = p[o.out_b]
        + ow[..g].iter().zip(&gmf).map(|(a, b)| a * b).sum::<f64>()
        + ow[g..].iter().zip(tower).map(|(a, b)| a * b).sum::<f64>();
    Forward {
        gmf,
        acts,
        pre,
        masks,
        logit,
    }
}

pub(super) fn score_all(state: &ModelState, user: usize) -> Vec<f64> {
    let o = offsets(&state.dims);
    (0..state.dims.num_items)
        .map(|i| sigmoid(forward(state, &o, user, i, None).logit))
        .collect()
}

/// Binary cross-entropy of `sigmoid(logit)` against `label`.
pub(super) fn bce_loss(
    state: &ModelState,
    user: usize,
    item: usize,
    label: f64,
    draw: Option<u64>,
) -> (f64, SparseGradient) {
    let o = offsets(&state.dims);
    let f = forward(state, &o, user, item, draw);
    let p = state.params();
    let g = state.dims.gmf_dim;
    let half = state.dims.mlp_layers[0] / 2;

    let loss = softplus(f.logit) - label * f.logit;
    let dz = sigmoid(f.logit) - label;

    let ow = &p[o.out_w..o.out_b];
    let tower = f.acts.last().expect("tower output");
    let mut d_out_w: Vec<f64> = f.gmf.iter().map(|x| dz * x).collect();
    d_out_w.extend(tower.iter().map(|x| dz * x));

    let d_gmf: Vec<f64> = ow[..g].iter().map(|w| dz * w).collect();
    let ug = &p[o.user_gmf + user * g..][..g];
    let ig = &p[o.item_gmf + item * g..][..g];
    let d_ug: Vec<f64> = d_gmf.iter().zip(ig).map(|(d, v)| d * v).collect();
    let d_ig: Vec<f64> = d_gmf.iter().zip(ug).map(|(d, v)| d * v).collect();

    let mut grad = SparseGradient::default();
    let mut layer_grads = Vec::with_capacity(o.layers.len());
    let mut dh: Vec<f64> = ow[g..].iter().map(|w| dz * w).collect();
    for (l, &(w, _, n_in, n_out)) in o.layers.iter().enumerate().rev() {
        let da: Vec<f64> = (0..n_out)
            .map(|r| if f.pre[l][r] > 0.0 { dh[r] * f.masks[l][r] } else { 0.0 })
            .collect();
        let x = &f.acts[l];
        let mut dw = Vec::with_capacity(n_in * n_out);
        for r in 0..n_out {
            dw.extend(x.iter().map(|v| da[r] * v));
        }
        let mut dx = vec![0.0; n_in];
        for r in 0..n_out {
            let wr = &p[w + r * n_in..][..n_in];
            for (d, wv) in dx.iter_mut().zip(wr) {
                *d += da[r] * wv;
            }
        }
        layer_grads.push((w, dw, da));
        dh = dx;
    }

    grad.push(o.user_gmf + user * g, d_ug);
    grad.push(o.item_gmf + item * g, d_ig);
    grad.push(o.user_mlp + user * half, dh[..half].to_vec());
    grad.push(o.item_mlp + item * half, dh[half..].to_vec());
    for (w, dw, db) in layer_grads.into_iter().rev() {
        let bias = w + dw.len();
        grad.push(w, dw);
        grad.push(bias, db);
    }
    grad.push(o.out_w, d_out_w);
    grad.push(o.out_b, vec![dz]);
    (loss, grad)
}
