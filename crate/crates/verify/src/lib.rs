//! Property suites run by `privrec verify` and by the acceptance target.
//!
//! Every suite checks the core crate against an oracle that does not share
//! its code path: finite differences for gradients, closed forms for the
//! accountant, binomial confidence bounds for randomized response and a
//! straight-line reimplementation for the metrics.

pub mod oracle;
pub mod suites;
pub mod trend;

use std::path::PathBuf;
use std::time::{Duration, Instant};

/// A violated invariant, named so a failing run says what broke.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{invariant}: {detail}")]
pub struct Violation {
    pub invariant: String,
    pub detail: String,
}

impl Violation {
    pub fn new(invariant: impl Into<String>, detail: impl Into<String>) -> Self {
        Self {
            invariant: invariant.into(),
            detail: detail.into(),
        }
    }
}

pub type SuiteResult = Result<String, Violation>;

#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub name: &'static str,
    pub elapsed: Duration,
    pub result: SuiteResult,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.result.is_ok()
    }
}

pub fn timed(name: &'static str, f: impl FnOnce() -> SuiteResult) -> SuiteReport {
    let start = Instant::now();
    let result = f();
    SuiteReport {
        name,
        elapsed: start.elapsed(),
        result,
    }
}

/// The built-in suites, on synthetic fixtures only.
pub fn run_all() -> Vec<SuiteReport> {
    run_all_with(suites::reference_clip)
}

/// As [`run_all`], with the gradient suite checking `clip` instead of the
/// core clipping routine. Used to show the suite catches a broken clip.
pub fn run_all_with(clip: suites::ClipFn) -> Vec<SuiteReport> {
    vec![
        timed("ldp-rates", suites::ldp_rates),
        timed("gradients", || suites::gradients(suites::GRADIENT_DRAWS, clip)),
        timed("accountant", suites::accountant),
        timed("metric-oracles", || suites::metric_oracles(suites::METRIC_INSTANCES)),
        timed("noiseless-equivalence", suites::noiseless_equivalence),
        timed("pipeline", suites::pipeline),
    ]
}

/// Where the MovieLens-1M files live: `PRIVREC_ML1M_DIR`, else
/// `data/ml-1m` under the workspace root.
pub fn ml1m_dir() -> Option<PathBuf> {
    let dir = std::env::var_os("PRIVREC_ML1M_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/ml-1m"));
    dir.join("ratings.dat").exists().then_some(dir)
}
