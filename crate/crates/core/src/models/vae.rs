//! Multinomial VAE: one tanh hidden layer in the encoder and the decoder,
//! Gaussian latent with the reparameterization trick, and a multinomial
//! likelihood over items through a softmax of the decoder logits.
//!
//! The objective per user is the negative ELBO
//! `−Σ_i x_i·log softmax(f(z))_i + β·KL(N(μ, diag e^lv) ‖ N(0, I))`.

use rand_distr::{Distribution, StandardNormal};

use super::{Init, LayoutBuilder, ModelDims, ModelState};
use crate::dpsgd::SparseGradient;
use crate::rng;

struct Offsets {
    enc_w1: usize,
    enc_b1: usize,
    enc_wmu: usize,
    enc_bmu: usize,
    enc_wlv: usize,
    enc_blv: usize,
    dec_w1: usize,
    dec_b1: usize,
    dec_w2: usize,
    dec_b2: usize,
}

pub(super) fn layout(dims: &ModelDims) -> LayoutBuilder {
    let (n, h, l) = (dims.num_items, dims.vae_hidden, dims.vae_latent);
    let mut b = LayoutBuilder::new();
    // item-major so that a sparse input row touches contiguous rows
    b.add("enc_w1", &[n, h], Init::FanIn(n));
    b.add("enc_b1", &[h], Init::Zero);
    b.add("enc_wmu", &[l, h], Init::FanIn(h));
    b.add("enc_bmu", &[l], Init::Zero);
    b.add("enc_wlv", &[l, h], Init::FanIn(h));
    b.add("enc_blv", &[l], Init::Zero);
    b.add("dec_w1", &[h, l], Init::FanIn(l));
    b.add("dec_b1", &[h], Init::Zero);
    b.add("dec_w2", &[n, h], Init::FanIn(h));
    b.add("dec_b2", &[n], Init::Zero);
    b
}

fn offsets(dims: &ModelDims) -> Offsets {
    let (n, h, l) = (dims.num_items, dims.vae_hidden, dims.vae_latent);
    let enc_w1 = 0;
    let enc_b1 = enc_w1 + n * h;
    let enc_wmu = enc_b1 + h;
    let enc_bmu = enc_wmu + l * h;
    let enc_wlv = enc_bmu + l;
    let enc_blv = enc_wlv + l * h;
    let dec_w1 = enc_blv + l;
    let dec_b1 = dec_w1 + h * l;
    let dec_w2 = dec_b1 + h;
    let dec_b2 = dec_w2 + n * h;
    Offsets {
        enc_w1,
        enc_b1,
        enc_wmu,
        enc_bmu,
        enc_wlv,
        enc_blv,
        dec_w1,
        dec_b1,
        dec_w2,
        dec_b2,
    }
}

/// `W x + b` for a row-major `[rows, cols]` matrix.
fn affine(p: &[f64], w: usize, b: usize, rows: usize, cols: usize, x: &[f64]) -> Vec<f64> {
    (0..rows)
        .map(|r| p[b + r] + p[w + r * cols..][..cols].iter().zip(x).map(|(a, v)| a * v).sum::<f64>())
        .collect()
}

/// `Wᵀ d` for a row-major `[rows, cols]` matrix.
fn affine_t(p: &[f64], w: usize, rows: usize, cols: usize, d: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; cols];
    for (r, &dr) in d.iter().enumerate().take(rows) {
        if dr == 0.0 {
            continue;
        }
        for (o, wv) in out.iter_mut().zip(&p[w + r * cols..][..cols]) {
            *o += dr * wv;
        }
    }
    out
}

fn outer(d: &[f64], x: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(d.len() * x.len());
    for &dr in d {
        out.extend(x.iter().map(|v| dr * v));
    }
    out
}

struct Encoded {
    hidden: Vec<f64>,
    mu: Vec<f64>,
    logvar: Vec<f64>,
}

fn encode(state: &ModelState, o: &Offsets, items: &[usize]) -> Encoded {
    let p = state.params();
    let (h, l) = (state.dims.vae_hidden, state.dims.vae_latent);
    let mut pre = p[o.enc_b1..o.enc_b1 + h].to_vec();
    for &i in items {
        for (a, w) in pre.iter_mut().zip(&p[o.enc_w1 + i * h..][..h]) {
            *a += w;
        }
    }
    let hidden: Vec<f64> = pre.iter().map(|a| a.tanh()).collect();
    let mu = affine(p, o.enc_wmu, o.enc_bmu, l, h, &hidden);
    let logvar = affine(p, o.enc_wlv, o.enc_blv, l, h, &hidden);
    Encoded { hidden, mu, logvar }
}

fn decode(state: &ModelState, o: &Offsets, z: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let p = state.params();
    let (n, h, l) = (state.dims.num_items, state.dims.vae_hidden, state.dims.vae_latent);
    let dh: Vec<f64> = affine(p, o.dec_w1, o.dec_b1, h, l, z).into_iter().map(f64::tanh).collect();
    let logits = affine(p, o.dec_w2, o.dec_b2, n, h, &dh);
    (dh, logits)
}

/// Decoder logits at the encoder mean.
pub(super) fn logits(state: &ModelState, items: &[usize]) -> Vec<f64> {
    let o = offsets(&state.dims);
    let enc = encode(state, &o, items);
    decode(state, &o, &enc.mu).1
}

pub(super) struct NegElbo {
    pub reconstruction: f64,
    pub kl: f64,
    pub total: f64,
    pub grad: SparseGradient,
}

pub(super) fn neg_elbo(state: &ModelState, items: &[usize], draw: Option<u64>) -> NegElbo {
    let o = offsets(&state.dims);
    let p = state.params();
    let (n, h, l) = (state.dims.num_items, state.dims.vae_hidden, state.dims.vae_latent);
    let beta = state.dims.vae_beta;

    let enc = encode(state, &o, items);
    let eps: Vec<f64> = match draw {
        Some(seed) => {
            let mut rng = rng::stream(seed, rng::tag::EXAMPLE);
            (0..l).map(|_| StandardNormal.sample(&mut rng)).collect()
        }
        None => vec![0.0; l],
    };
    let std: Vec<f64> = enc.logvar.iter().map(|lv| (0.5 * lv).exp()).collect();
    let z: Vec<f64> = (0..l).map(|k| enc.mu[k] + std[k] * eps[k]).collect();
    let (dh, logits) = decode(state, &o, &z);

    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_z = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    let reconstruction: f64 = items.iter().map(|&i| log_z - logits[i]).sum();
    let kl: f64 = 0.5
        * (0..l)
            .map(|k| enc.logvar[k].exp() + enc.mu[k] * enc.mu[k] - 1.0 - enc.logvar[k])
            .sum::<f64>();
    let total = reconstruction + beta * kl;

    // d rec / d logits = N·softmax − x
    let count = items.len() as f64;
    let mut d_logits: Vec<f64> = logits.iter().map(|v| count * (v - log_z).exp()).collect();
    for &i in items {
        d_logits[i] -= 1.0;
    }
    let d_dec_w2 = outer(&d_logits, &dh);
    let d_dh = affine_t(p, o.dec_w2, n, h, &d_logits);
    let d_dpre: Vec<f64> = d_dh.iter().zip(&dh).map(|(d, a)| d * (1.0 - a * a)).collect();
    let d_dec_w1 = outer(&d_dpre, &z);
    let d_z = affine_t(p, o.dec_w1, h, l, &d_dpre);

    let d_mu: Vec<f64> = (0..l).map(|k| d_z[k] + beta * enc.mu[k]).collect();
    let d_lv: Vec<f64> = (0..l)
        .map(|k| d_z[k] * eps[k] * 0.5 * std[k] + beta * 0.5 * (enc.logvar[k].exp() - 1.0))
        .collect();
    let d_enc_wmu = outer(&d_mu, &enc.hidden);
    let d_enc_wlv = outer(&d_lv, &enc.hidden);
    let mut d_hidden = affine_t(p, o.enc_wmu, l, h, &d_mu);
    for (d, v) in d_hidden.iter_mut().zip(affine_t(p, o.enc_wlv, l, h, &d_lv)) {
        *d += v;
    }
    let d_epre: Vec<f64> = d_hidden.iter().zip(&enc.hidden).map(|(d, a)| d * (1.0 - a * a)).collect();

    let mut grad = SparseGradient::default();
    for &i in items {
        grad.push(o.enc_w1 + i * h, d_epre.clone());
    }
    grad.push(o.enc_b1, d_epre);
    grad.push(o.enc_wmu, d_enc_wmu);
    grad.push(o.enc_bmu, d_mu);
    grad.push(o.enc_wlv, d_enc_wlv);
    grad.push(o.enc_blv, d_lv);
    grad.push(o.dec_w1, d_dec_w1);
    grad.push(o.dec_b1, d_dpre);
    grad.push(o.dec_w2, d_dec_w2);
    grad.push(o.dec_b2, d_logits);

    NegElbo {
        reconstruction,
        kl,
        total,
        grad,
    }
}

/// `−Σ_{i∈heldout} log softmax(f(μ))_i + β·KL` with the encoder fed `items`.
pub(super) fn heldout_loss(state: &ModelState, items: &[usize], heldout: &[usize]) -> f64 {
    let o = offsets(&state.dims);
    let enc = encode(state, &o, items);
    let (_, logits) = decode(state, &o, &enc.mu);
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_z = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    let kl: f64 = 0.5
        * enc
            .mu
            .iter()
            .zip(&enc.logvar)
            .map(|(m, lv)| lv.exp() + m * m - 1.0 - lv)
            .sum::<f64>();
    heldout.iter().map(|&i| log_z - logits[i]).sum::<f64>() + state.dims.vae_beta * kl
}
