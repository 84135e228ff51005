//! DPSGD building blocks: per-example clipping, noisy aggregation, the SGD
//! step and a Rényi-DP accountant for the subsampled Gaussian mechanism.

mod accountant;
mod gradient;

pub use accountant::{
    default_orders, ledger_epsilon, noise_multiplier_for, rdp_subsampled_gaussian, PrivacyLedger,
    DEFAULT_DELTA,
};
pub use gradient::{
    aggregate_and_noise, apply_update_raw, clip, clip_divisor, sgd_update, ClipNoiseSpec, FlatGradient, NoisyAggregator,
    SparseGradient,
};
