//! Recommender models with exact per-example gradients over a flat
//! parameter vector, so that every model can be trained by plain SGD or by
//! DPSGD through the same code path.

mod checkpoint;
mod mf;
mod ncf;
mod topk;
mod train;
mod vae;

use std::fmt;
use std::ops::Range;

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::dpsgd::SparseGradient;
use crate::error::{Error, Result};
use crate::rng;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, NamedTensor, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use topk::{recommend_topk, top_k_indices, RecommendationList};
pub use train::{
    build_epoch_examples, sample_negative, train, EpochLog, LrSchedule, PrivacyRegime, TrainConfig, TrainData,
    TrainOutcome,
};

/// Standard deviation of the Gaussian used for embedding tables.
pub const EMBEDDING_INIT_STD: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "SVD")]
    Svd,
    #[serde(rename = "BPR")]
    Bpr,
    #[serde(rename = "NCF")]
    Ncf,
    #[serde(rename = "VAE")]
    Vae,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [ModelKind::Svd, ModelKind::Bpr, ModelKind::Ncf, ModelKind::Vae];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Svd => "SVD",
            ModelKind::Bpr => "BPR",
            ModelKind::Ncf => "NCF",
            ModelKind::Vae => "VAE",
        }
    }

    /// What a single DPSGD example is for this model.
    pub fn example_unit(self) -> &'static str {
        match self {
            ModelKind::Svd | ModelKind::Ncf => "interaction",
            ModelKind::Bpr => "triple",
            ModelKind::Vae => "user",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "SVD" => Ok(ModelKind::Svd),
            "BPR" => Ok(ModelKind::Bpr),
            "NCF" => Ok(ModelKind::Ncf),
            "VAE" => Ok(ModelKind::Vae),
            _ => Err(Error::invalid(format!("unknown model kind {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDims {
    pub num_users: usize,
    pub num_items: usize,
    /// Embedding width for SVD and BPR.
    pub latent_dim: usize,
    /// Width of the NCF generalized-matrix-factorization embeddings.
    pub gmf_dim: usize,
    /// NCF MLP tower widths; the first entry is the concatenated user/item
    /// MLP embedding width and must be even.
    pub mlp_layers: Vec<usize>,
    pub dropout: f64,
    pub vae_hidden: usize,
    pub vae_latent: usize,
    /// Weight of the KL term in the VAE objective.
    pub vae_beta: f64,
}

impl ModelDims {
    pub fn new(num_users: usize, num_items: usize) -> Self {
        Self {
            num_users,
            num_items,
            latent_dim: 5,
            gmf_dim: 8,
            mlp_layers: vec![16, 8, 4],
            dropout: 0.5,
            vae_hidden: 100,
            vae_latent: 50,
            vae_beta: 1.0,
        }
    }

    pub(crate) fn validate(&self, kind: ModelKind) -> Result<()> {
        if self.num_users == 0 || self.num_items == 0 {
            return Err(Error::invalid("model needs at least one user and one item"));
        }
        match kind {
            ModelKind::Svd | ModelKind::Bpr if self.latent_dim == 0 => {
                Err(Error::invalid("latent_dim must be positive"))
            }
            ModelKind::Ncf => {
                if self.gmf_dim == 0 {
                    return Err(Error::invalid("gmf_dim must be positive"));
                }
                if self.mlp_layers.len() < 2 || self.mlp_layers.contains(&0) {
                    return Err(Error::invalid("mlp_layers needs at least two positive widths"));
                }
                if !self.mlp_layers[0].is_multiple_of(2) {
                    return Err(Error::invalid("first MLP width must be even (user half + item half)"));
                }
                if !(0.0..1.0).contains(&self.dropout) {
                    return Err(Error::invalid("dropout must lie in [0, 1)"));
                }
                Ok(())
            }
            ModelKind::Vae if self.vae_hidden == 0 || self.vae_latent == 0 => {
                Err(Error::invalid("VAE hidden and latent sizes must be positive"))
            }
            ModelKind::Vae if !(self.vae_beta >= 0.0) => Err(Error::invalid("vae_beta must be nonnegative")),
            _ => Ok(()),
        }
    }
}

/// One named tensor inside the flat parameter vector, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Init {
    Embedding,
    FanIn(usize),
    Zero,
}

pub(crate) struct LayoutBuilder {
    tensors: Vec<TensorSpec>,
    inits: Vec<Init>,
    next: usize,
}

impl LayoutBuilder {
    pub(crate) fn new() -> Self {
        Self {
            tensors: Vec::new(),
            inits: Vec::new(),
            next: 0,
        }
    }

    pub(crate) fn add(&mut self, name: &str, shape: &[usize], init: Init) -> usize {
        let offset = self.next;
        let spec = TensorSpec {
            name: name.to_owned(),
            offset,
            shape: shape.to_vec(),
        };
        self.next += spec.len();
        self.tensors.push(spec);
        self.inits.push(init);
        offset
    }
}

/// Which example shape a model consumes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TrainExample {
    /// SVD and NCF: one (user, item) pair with a binary label.
    Pointwise { user: usize, item: usize, label: f64 },
    /// BPR: user prefers `pos` over `neg`.
    Triple { user: usize, pos: usize, neg: usize },
    /// VAE: a user's full training row, as sorted item indices.
    Row { user: usize, items: Vec<usize> },
}

impl TrainExample {
    pub fn user(&self) -> usize {
        match self {
            TrainExample::Pointwise { user, .. } | TrainExample::Triple { user, .. } | TrainExample::Row { user, .. } => {
                *user
            }
        }
    }
}

/// Parameters of one model plus everything needed to interpret them.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub kind: ModelKind,
    pub dims: ModelDims,
    pub seed: u64,
    params: Vec<f64>,
    layout: Vec<TensorSpec>,
}

impl ModelState {
    /// Embeddings ~ N(0, 0.01²); dense layer weights ~ U(−1/√fan_in, 1/√fan_in);
    /// biases zero.
    pub fn init(kind: ModelKind, dims: ModelDims, seed: u64) -> Result<Self> {
        dims.validate(kind)?;
        let builder = match kind {
            ModelKind::Svd | ModelKind::Bpr => mf::layout(&dims),
            ModelKind::Ncf => ncf::layout(&dims),
            ModelKind::Vae => vae::layout(&dims),
        };
        let mut rng = rng::stream(seed, rng::tag::INIT);
        let mut params = vec![0.0; builder.next];
        let embed = Normal::new(0.0, EMBEDDING_INIT_STD).expect("valid std");
        for (spec, init) in builder.tensors.iter().zip(&builder.inits) {
            let slot = &mut params[spec.range()];
            match *init {
                Init::Embedding => slot.iter_mut().for_each(|p| *p = embed.sample(&mut rng)),
                Init::FanIn(fan_in) => {
                    let bound = 1.0 / (fan_in as f64).sqrt();
                    let dist = Uniform::new_inclusive(-bound, bound).expect("valid bound");
                    slot.iter_mut().for_each(|p| *p = rng.sample(dist));
                }
                Init::Zero => {}
            }
        }
        Ok(Self {
            kind,
            dims,
            seed,
            params,
            layout: builder.tensors,
        })
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.params.len() {
            return Err(Error::invalid(format!(
                "expected {} parameters, got {}",
                self.params.len(),
                flat.len()
            )));
        }
        self.params.copy_from_slice(flat);
        Ok(())
    }

    pub fn layout(&self) -> &[TensorSpec] {
        &self.layout
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        self.layout
            .iter()
            .find(|t| t.name == name)
            .map(|t| &self.params[t.range()])
    }

    pub fn tensor_spec(&self, name: &str) -> Option<&TensorSpec> {
        self.layout.iter().find(|t| t.name == name)
    }

    /// Ranges of the user and item embedding tables. Each example touches
    /// one row of these, so a batch-mean update moves them far less than the
    /// dense layers.
    pub fn embedding_ranges(&self) -> Vec<Range<usize>> {
        self.layout
            .iter()
            .filter(|t| t.name.starts_with("user_") || t.name.starts_with("item_"))
            .map(TensorSpec::range)
            .collect()
    }

    pub fn param_norm(&self) -> f64 {
        self.params.iter().map(|p| p * p).sum::<f64>().sqrt()
    }

    fn check_user(&self, user: usize) -> Result<()> {
        if user >= self.dims.num_users {
            return Err(Error::invalid(format!("user {user} out of range ({})", self.dims.num_users)));
        }
        Ok(())
    }

    fn check_item(&self, item: usize) -> Result<()> {
        if item >= self.dims.num_items {
            return Err(Error::invalid(format!("item {item} out of range ({})", self.dims.num_items)));
        }
        Ok(())
    }

    /// Scores for `items`. `history` is the user's training row and is only
    /// read by the VAE, whose encoder needs it.
    pub fn score(&self, user: usize, items: &[usize], history: &[usize]) -> Result<Vec<f64>> {
        self.check_user(user)?;
        for &i in items {
            self.check_item(i)?;
        }
        let all = self.score_all(user, history)?;
        Ok(items.iter().map(|&i| all[i]).collect())
    }

    /// Scores for every item.
    pub fn score_all(&self, user: usize, history: &[usize]) -> Result<Vec<f64>> {
        self.check_user(user)?;
        Ok(match self.kind {
            ModelKind::Svd | ModelKind::Bpr => mf::score_all(self, user),
            ModelKind::Ncf => ncf::score_all(self, user),
            ModelKind::Vae => {
                for &i in history {
                    self.check_item(i)?;
                }
                vae::logits(self, history)
            }
        })
    }

    /// Softmax of the VAE decoder at the encoder mean.
    pub fn vae_probabilities(&self, history: &[usize]) -> Result<Vec<f64>> {
        if self.kind != ModelKind::Vae {
            return Err(Error::invalid("vae_probabilities needs a VAE"));
        }
        let logits = vae::logits(self, history);
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exp: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = exp.iter().sum();
        Ok(exp.into_iter().map(|e| e / z).collect())
    }

    pub(crate) fn validate_example(&self, example: &TrainExample) -> Result<()> {
        match (self.kind, example) {
            (ModelKind::Svd | ModelKind::Ncf, TrainExample::Pointwise { user, item, label }) => {
                self.check_user(*user)?;
                self.check_item(*item)?;
                if !(0.0..=1.0).contains(label) {
                    return Err(Error::invalid(format!("label {label} outside [0, 1]")));
                }
            }
            (ModelKind::Bpr, TrainExample::Triple { user, pos, neg }) => {
                self.check_user(*user)?;
                self.check_item(*pos)?;
                self.check_item(*neg)?;
                if pos == neg {
                    return Err(Error::invalid("BPR triple needs distinct items"));
                }
            }
            (ModelKind::Vae, TrainExample::Row { user, items }) => {
                self.check_user(*user)?;
                if items.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::invalid("VAE row must be sorted and duplicate-free"));
                }
                if let Some(&last) = items.last() {
                    self.check_item(last)?;
                }
            }
            (kind, ex) => {
                return Err(Error::invalid(format!("{kind} cannot train on {ex:?}")));
            }
        }
        Ok(())
    }

    /// Per-example loss and its exact gradient.
    ///
    /// `draw` seeds the example's stochastic parts (NCF dropout masks, the
    /// VAE reparameterization noise). `None` evaluates deterministically:
    /// no dropout, and the VAE latent at its mean.
    pub fn loss_and_grad(&self, example: &TrainExample, draw: Option<u64>) -> Result<(f64, SparseGradient)> {
        self.validate_example(example)?;
        let (loss, grad) = match example {
            TrainExample::Pointwise { user, item, label } => match self.kind {
                ModelKind::Svd => mf::squared_loss(self, *user, *item, *label),
                _ => ncf::bce_loss(self, *user, *item, *label, draw),
            },
            TrainExample::Triple { user, pos, neg } => mf::bpr_loss(self, *user, *pos, *neg),
            TrainExample::Row { items, .. } => {
                let parts = vae::neg_elbo(self, items, draw);
                (parts.total, parts.grad)
            }
        };
        if !loss.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite {} loss {loss} (parameter norm {:.4e})",
                self.kind,
                self.param_norm()
            )));
        }
        Ok((loss, grad))
    }

    /// Loss only, for validation.
    pub fn loss(&self, example: &TrainExample) -> Result<f64> {
        self.loss_and_grad(example, None).map(|(l, _)| l)
    }
}

/// Reconstruction and KL parts of the VAE objective at one example.
#[derive(Debug, Clone)]
pub struct ElboParts {
    pub reconstruction: f64,
    pub kl: f64,
    pub total: f64,
}

impl ModelState {
    pub fn vae_elbo_parts(&self, items: &[usize], draw: Option<u64>) -> Result<ElboParts> {
        if self.kind != ModelKind::Vae {
            return Err(Error::invalid("vae_elbo_parts needs a VAE"));
        }
        let p = vae::neg_elbo(self, items, draw);
        Ok(ElboParts {
            reconstruction: p.reconstruction,
            kl: p.kl,
            total: p.total,
        })
    }
}

impl ModelState {
    /// VAE loss of predicting `heldout` from the row `items`, at the encoder
    /// mean.
    pub fn vae_heldout_loss(&self, items: &[usize], heldout: &[usize]) -> Result<f64> {
        if self.kind != ModelKind::Vae {
            return Err(Error::invalid("vae_heldout_loss needs a VAE"));
        }
        Ok(vae::heldout_loss(self, items, heldout))
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
