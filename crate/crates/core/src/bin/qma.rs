//! Command-line front end: run the simulated tomography and decay studies,
//! score candidate models with information criteria, and reduce record files
//! to quartile summaries.

use std::fs::File;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use qma::harness::criteria;
use qma::harness::{
    read_jsonl, resolve_config, run_experiment, summarize, write_jsonl, write_summary_csv,
    ConfigPatch, ExperimentKind, HarnessError, RbTrueModel,
};
use qma::rb::{PriorScaleConvention, RbPriorSet};

#[derive(Parser)]
#[command(
    name = "qma",
    version,
    about = "Simulated Bayesian model selection for quantum characterization"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the rank-selection tomography study and write JSON-lines records
    Tomography(RunArgs),
    /// Run the decay-model study (zeroth vs first order) and write records
    Rb(RunArgs),
    /// Score candidate models with AIC/BIC on one simulated dataset
    Criteria(CriteriaArgs),
    /// Reduce a records file to per-step quartile summaries (CSV)
    Summarize(SummarizeArgs),
}

/// Flags mirroring the config file keys; unset flags fall back to the file,
/// then to per-experiment defaults.
#[derive(Args, Debug, Default)]
struct RunArgs {
    /// TOML config file with the same keys as these flags
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long)]
    qubits: Option<usize>,
    /// Comma-separated candidate ranks, e.g. 1,2,3,4
    #[arg(long, value_delimiter = ',')]
    candidate_ranks: Option<Vec<usize>>,
    #[arg(long)]
    true_rank: Option<usize>,
    #[arg(long, value_enum)]
    rb_true_model: Option<RbTrueModel>,
    #[arg(long, value_enum)]
    rb_prior_set: Option<RbPriorSet>,
    #[arg(long, value_enum)]
    prior_scale: Option<PriorScaleConvention>,
    #[arg(long)]
    particles_per_model: Option<usize>,
    /// Tomography: measurement batches per trial; rb: sweeps per trial
    #[arg(long)]
    batches: Option<usize>,
    #[arg(long)]
    shots_per_batch: Option<u64>,
    /// Comma-separated sequence lengths, e.g. 10,30,50
    #[arg(long, value_delimiter = ',')]
    sequence_lengths: Option<Vec<u32>>,
    #[arg(long)]
    repetitions_per_length: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    resample_threshold: Option<f64>,
    #[arg(long)]
    liu_west_a: Option<f64>,
    #[arg(long)]
    prune_threshold: Option<f64>,
    /// Where the JSON-lines records go
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    per_shot_updates: Option<bool>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    include_identity_pauli: Option<bool>,
    /// Emit per-step wall times (breaks byte-identical reruns)
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    record_timing: Option<bool>,
    /// Embed the model-average state estimate in tomography records
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    record_estimates: Option<bool>,
    /// Worker threads (default: one per core); results do not depend on this
    #[arg(long)]
    workers: Option<usize>,
}

impl RunArgs {
    fn patch(&self) -> ConfigPatch {
        ConfigPatch {
            experiment: None,
            qubits: self.qubits,
            candidate_ranks: self.candidate_ranks.clone(),
            true_rank: self.true_rank,
            rb_true_model: self.rb_true_model,
            rb_prior_set: self.rb_prior_set,
            prior_scale: self.prior_scale,
            particles_per_model: self.particles_per_model,
            batches: self.batches,
            shots_per_batch: self.shots_per_batch,
            sequence_lengths: self.sequence_lengths.clone(),
            repetitions_per_length: self.repetitions_per_length,
            trials: self.trials,
            seed: self.seed,
            resample_threshold: self.resample_threshold,
            liu_west_a: self.liu_west_a,
            prune_threshold: self.prune_threshold,
            output_path: self.out.clone(),
            per_shot_updates: self.per_shot_updates,
            include_identity_pauli: self.include_identity_pauli,
            record_timing: self.record_timing,
            record_estimates: self.record_estimates,
        }
    }
}

#[derive(Args, Debug)]
struct CriteriaArgs {
    /// Which experiment supplies the simulated dataset and candidate models
    #[arg(long, value_enum, default_value = "tomography")]
    experiment: ExperimentKind,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Args, Debug)]
struct SummarizeArgs {
    /// JSON-lines records file produced by `tomography` or `rb`
    records: PathBuf,
    /// CSV output path (default: records path with .csv extension)
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Tomography(args) => run_study(ExperimentKind::Tomography, &args),
        Command::Rb(args) => run_study(ExperimentKind::Rb, &args),
        Command::Criteria(args) => run_criteria(&args),
        Command::Summarize(args) => run_summarize(&args),
    }
}

fn init_workers(workers: Option<usize>) -> Result<(), HarnessError> {
    let Some(n) = workers else { return Ok(()) };
    if n == 0 {
        return Err(HarnessError::InvalidConfig("workers must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| HarnessError::InvalidConfig(format!("worker pool: {e}")))
}

fn run_study(kind: ExperimentKind, args: &RunArgs) -> Result<(), HarnessError> {
    init_workers(args.workers)?;
    let config = resolve_config(kind, args.config.as_deref(), &args.patch())?;
    let records = run_experiment(&config)?;
    write_jsonl(&config.output_path, &records)?;
    println!("wrote {} records to {}", records.len(), config.output_path.display());
    Ok(())
}

fn run_criteria(args: &CriteriaArgs) -> Result<(), HarnessError> {
    init_workers(args.run.workers)?;
    let config = resolve_config(args.experiment, args.run.config.as_deref(), &args.run.patch())?;
    let scores = criteria::run(&config)?;
    print!("{}", criteria::render_table(&scores));
    if let Some(path) = &args.run.out {
        serde_json::to_writer_pretty(File::create(path)?, &scores)?;
        println!("wrote scores to {}", path.display());
    }
    Ok(())
}

fn run_summarize(args: &SummarizeArgs) -> Result<(), HarnessError> {
    let records = read_jsonl(&args.records)?;
    let rows = summarize(&records)?;
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| args.records.with_extension("csv"));
    write_summary_csv(&rows, File::create(&out)?)?;
    println!("wrote summary of {} records to {}", records.len(), out.display());
    Ok(())
}
