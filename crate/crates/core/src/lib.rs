//! Benchmark framework for measuring how differential privacy affects the
//! utility and popularity bias of top-k recommender models.
//!
//! The crate trains four recommenders (matrix factorisation with squared
//! loss, BPR, NCF and a multinomial VAE) either without privacy, with
//! DPSGD, or on training data perturbed by a local-DP randomized-response
//! mechanism, and then scores the resulting top-k lists with NDCG plus five
//! bias metrics broken down by user type and item popularity group.

// `!(x > 0.0)` is how NaN gets rejected alongside bad values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod dpsgd;
pub mod error;
pub mod experiment;
pub mod ldp;
pub mod metrics;
pub mod models;
pub mod rng;

pub use error::{Error, Result};
