//! Configuration, single runs, resumable sweeps and reports.

mod config;
mod report;
mod run;

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub use config::{
    ConfigKey, DatasetConfig, DatasetKind, ExperimentConfig, ModelConfig, PrivacyConfig, Regime, TrainSection,
};
pub use report::{aggregate, report, write_reports, AggregateRow, ReportFiles};
pub use run::{
    config_fingerprint, load_records, load_store, prepare, run_fingerprint, run_one, sweep, sweep_with_store, BudgetPoint, Epsilon, Prepared, RunRecord, RunStatus,
    SweepOutcome,
};

/// Writes `bytes` to a temporary sibling and renames it over `path`, so
/// readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = std::path::PathBuf::from(tmp);
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
