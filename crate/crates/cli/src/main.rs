//! `privrec`: ingest datasets, train single runs, sweep privacy budgets,
//! build reports and run the built-in verification suites.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use privrec_core::experiment::{
    load_records, load_store, run_one, sweep, write_reports, BudgetPoint, ExperimentConfig, Regime, RunRecord, RunStatus,
};
use privrec_core::models::save_checkpoint;
use privrec_verify::suites;

#[derive(Debug, thiserror::Error)]
enum CliError {
    /// Bad flags, bad config or missing inputs. Exit code 2.
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] privrec_core::Error),
    /// Something ran and did not succeed. Exit code 1.
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        use privrec_core::Error as E;
        match self {
            CliError::Usage(_) => 2,
            CliError::Failed(_) => 1,
            CliError::Core(E::InvalidArgument(_) | E::Parse { .. }) => 2,
            CliError::Core(E::Io { source, .. }) if source.kind() == std::io::ErrorKind::NotFound => 2,
            CliError::Core(_) => 1,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "privrec", version, about = "Privacy, utility and popularity bias of DP-trained recommenders")]
#[command(after_help = key_help())]
struct Cli {
    /// JSON experiment config; absent keys take their defaults.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,

    /// Set one config key, e.g. `model.kind=BPR`. Repeatable.
    #[arg(long = "override", short = 'o', value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,

    /// Output directory (overrides `output_dir`).
    #[arg(long, env = "PRIVREC_OUTPUT_DIR", global = true)]
    output_dir: Option<PathBuf>,

    /// Parallel runs in a sweep (overrides `workers`).
    #[arg(long, env = "PRIVREC_WORKERS", global = true)]
    workers: Option<usize>,

    /// More diagnostics on stderr (-v info, -vv debug).
    #[arg(long, short, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    /// Only errors on stderr.
    #[arg(long, short, global = true, conflicts_with = "verbose")]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse and preprocess the configured dataset, print its statistics and
    /// write the store cache.
    Ingest,
    /// Train and evaluate one (regime, budget, seed) and save a checkpoint.
    Train(TrainArgs),
    /// Run every budget of the config for every seed, then write reports.
    /// Existing records are reused.
    Sweep,
    /// Rebuild CSV and SVG reports from the records in the output directory.
    Report,
    /// Run the built-in property suites on synthetic fixtures.
    Verify(VerifyArgs),
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Privacy regime; defaults to `privacy.regime`.
    #[arg(long, value_enum)]
    regime: Option<RegimeArg>,
    /// Noise multiplier (dpsgd) or epsilon (ldp); defaults to the first of
    /// `privacy.budgets`.
    #[arg(long)]
    budget: Option<f64>,
    /// Seed; defaults to the first of `seeds`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    /// Deliberately break one component to show the suites notice.
    #[arg(long, value_enum, hide = true)]
    mutation: Option<Mutation>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum RegimeArg {
    None,
    Dpsgd,
    Ldp,
}

impl From<RegimeArg> for Regime {
    fn from(r: RegimeArg) -> Self {
        match r {
            RegimeArg::None => Regime::None,
            RegimeArg::Dpsgd => Regime::Dpsgd,
            RegimeArg::Ldp => Regime::Ldp,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Mutation {
    /// Clipping rescales every gradient to norm C.
    BrokenClip,
}

fn key_help() -> String {
    let keys = ExperimentConfig::keys();
    let width = keys.iter().map(|k| k.key.len()).max().unwrap_or(0);
    let dwidth = keys.iter().map(|k| k.default.len()).max().unwrap_or(0).min(28);
    let mut out = String::from("Config keys (set in --config JSON or with --override KEY=VALUE):\n");
    for k in &keys {
        out.push_str(&format!("  {:<width$}  {:<dwidth$}  {}\n", k.key, k.default, k.doc));
    }
    out.push_str("\nEnvironment: PRIVREC_OUTPUT_DIR, PRIVREC_WORKERS.\n");
    out.push_str("Exit codes: 0 success, 1 run or suite failure, 2 usage error.");
    out
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match (cli.quiet, cli.verbose) {
        (true, _) => log::LevelFilter::Error,
        (_, 0) => log::LevelFilter::Warn,
        (_, 1) => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Command::Verify(args) = &cli.command {
        return verify(args);
    }
    let cfg = load_config(&cli)?;
    match cli.command {
        Command::Ingest => ingest(&cfg),
        Command::Train(args) => train(&cfg, &args),
        Command::Sweep => run_sweep(&cfg),
        Command::Report => report(&cfg.output_dir),
        Command::Verify(_) => unreachable!(),
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let base = match &cli.config {
        Some(path) => {
            if !path.exists() {
                return Err(CliError::Usage(format!("config file {} not found", path.display())));
            }
            ExperimentConfig::load(path)?
        }
        None => ExperimentConfig::default(),
    };
    let mut cfg = base.with_overrides(&cli.overrides)?;
    if let Some(dir) = &cli.output_dir {
        cfg.output_dir = dir.clone();
    }
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn require_raw_files(cfg: &ExperimentConfig) -> Result<()> {
    use privrec_core::experiment::DatasetKind;
    let d = &cfg.dataset;
    if d.cache.as_deref().is_some_and(Path::exists) {
        return Ok(());
    }
    let needed: Vec<PathBuf> = match d.kind {
        DatasetKind::Movielens => vec![d.path.join("ratings.dat"), d.path.join("movies.dat")],
        DatasetKind::Yelp => ["review", "business"]
            .iter()
            .map(|s| {
                let plain = d.path.join(format!("{s}.json"));
                if plain.exists() {
                    plain
                } else {
                    d.path.join(format!("yelp_academic_dataset_{s}.json"))
                }
            })
            .collect(),
        DatasetKind::Synthetic => vec![],
    };
    match needed.iter().find(|p| !p.exists()) {
        Some(p) => Err(CliError::Usage(format!("raw data file {} not found", p.display()))),
        None => Ok(()),
    }
}

fn ingest(cfg: &ExperimentConfig) -> Result<()> {
    require_raw_files(cfg)?;
    let mut dataset = cfg.dataset.clone();
    let cache = dataset
        .cache
        .clone()
        .unwrap_or_else(|| cfg.output_dir.join("cache").join(format!("{}.store", dataset.name())));
    // always rebuild from the raw files; the cache is the output here
    dataset.cache = None;
    let (store, stats) = load_store(&dataset)?;
    privrec_core::dataset::write_cache(&store, &cache)?;
    println!("{}", dataset.name());
    println!("{}", store.stats());
    if let Some(s) = stats {
        println!();
        println!("{:<28}{:>12}", "Input ratings", s.input_ratings);
        println!("{:<28}{:>12}", "Without categories", s.without_categories);
        println!("{:<28}{:>12}", "Duplicates collapsed", s.duplicates);
        println!("{:<28}{:>12}", "Below rating threshold", s.below_threshold);
        println!("{:<28}{:>12}", "Removed by count filters", s.removed_by_count_filters);
        println!("{:<28}{:>12}", "Filter rounds", s.fixpoint_rounds);
    }
    println!();
    println!("cache written to {}", cache.display());
    Ok(())
}

fn train(cfg: &ExperimentConfig, args: &TrainArgs) -> Result<()> {
    require_raw_files(cfg)?;
    let regime = args.regime.map(Regime::from).unwrap_or(cfg.privacy.regime);
    let point = match regime {
        Regime::None => BudgetPoint::BASELINE,
        r => {
            let budget = args
                .budget
                .or_else(|| cfg.privacy.budgets.first().copied())
                .ok_or_else(|| CliError::Usage("no budget given and privacy.budgets is empty".into()))?;
            BudgetPoint::new(r, budget)
        }
    };
    let seed = args.seed.or_else(|| cfg.seeds.first().copied()).unwrap_or(0);
    let (store, _) = load_store(&cfg.dataset)?;
    let (record, state) = run_one(cfg, &store, point, seed)?;
    if let Some(state) = state {
        let path = cfg.output_dir.join("checkpoints").join(format!("{}.json", record.fingerprint));
        save_checkpoint(&state, None, &path)?;
        println!("checkpoint {}", path.display());
    }
    print_record(&record);
    match record.status {
        RunStatus::Ok => Ok(()),
        RunStatus::Failed => Err(CliError::Failed(format!(
            "run failed: {}",
            record.error.as_deref().unwrap_or("unknown error")
        ))),
    }
}

fn print_record(r: &RunRecord) {
    let budget = r.budget.map_or("-".to_string(), |b| b.to_string());
    println!(
        "{} {} {} budget {} seed {}: epsilon {} after {} epochs (best {})",
        r.dataset,
        r.model,
        r.regime.as_str(),
        budget,
        r.seed,
        fmt_eps(r.realized_epsilon.0),
        r.epochs_trained,
        r.best_epoch
    );
    if let Some(m) = &r.metrics {
        println!(
            "  ndcg {:.4}  kld {:.4}  pl {:.4}  novelty {:.4}  coverage {:.4}  dpf {:.4}",
            m.ndcg, m.kld, m.popularity_lift, m.novelty, m.coverage, m.dpf
        );
    }
}

fn fmt_eps(e: f64) -> String {
    if e.is_finite() {
        format!("{e:.3}")
    } else {
        "inf".into()
    }
}

fn run_sweep(cfg: &ExperimentConfig) -> Result<()> {
    require_raw_files(cfg)?;
    let outcome = sweep(cfg)?;
    for r in &outcome.records {
        print_record(r);
    }
    let failed = outcome.records.iter().filter(|r| r.status == RunStatus::Failed).count();
    println!(
        "{} runs ({} reused, {} failed) in {}",
        outcome.records.len(),
        outcome.reused,
        failed,
        cfg.output_dir.join("records").display()
    );
    if failed < outcome.records.len() {
        report(&cfg.output_dir)?;
    }
    if failed > 0 {
        return Err(CliError::Failed(format!("{failed} run(s) failed")));
    }
    Ok(())
}

fn report(output: &Path) -> Result<()> {
    let records = load_records(output)?;
    if records.is_empty() {
        return Err(CliError::Usage(format!(
            "no run records under {}",
            output.join("records").display()
        )));
    }
    let written = write_reports(output, &records)?;
    println!("{} reports from {} records in {}", written.len(), records.len(), output.join("reports").display());
    Ok(())
}

fn verify(args: &VerifyArgs) -> Result<()> {
    let clip: suites::ClipFn = match args.mutation {
        None => suites::reference_clip,
        Some(Mutation::BrokenClip) => suites::broken_clip,
    };
    let reports = privrec_verify::run_all_with(clip);
    let mut failed = Vec::new();
    for r in &reports {
        let secs = r.elapsed.as_secs_f64();
        match &r.result {
            Ok(detail) => println!("{:<24} PASS {secs:>7.2}s  {detail}", r.name),
            Err(v) => {
                println!("{:<24} FAIL {secs:>7.2}s  {v}", r.name);
                failed.push(format!("{} ({})", r.name, v.invariant));
            }
        }
    }
    let total: f64 = reports.iter().map(|r| r.elapsed.as_secs_f64()).sum();
    println!("{} of {} suites passed in {total:.1}s", reports.len() - failed.len(), reports.len());
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Failed(format!("failing suites: {}", failed.join(", "))))
    }
}
