use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use lps_cli::config::{DatasetKind, JobConfig, DEFAULT_TASK_PROMPT};
use lps_cli::dataset::load_rows;
use lps_cli::report::{load_vocabulary, metric_from_trace, render_human, to_json};
use lps_cli::runner::{build_provider_set, run_job, RunError};
use lps_cli::trace::{
    read_trace, verify_trace, TraceLine, TraceRecord, TraceWriter, TRACE_SCHEMA_VERSION,
};

use lps_core::providers::mock::builtin_mock_set;
use lps_core::{acquire_prior, decode_with_mode, DecodeMode, ImageRef, ProviderSet, SearchConfig};

#[derive(Parser)]
#[command(
    name = "lps",
    version,
    about = "Sentence-level candidate search guided by a local perception prior"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ask the model for its region-by-region object inventory of an image
    Prior(PriorArgs),
    /// Decode text for one image
    Decode(DecodeArgs),
    /// Run a dataset job described by a config file
    Run(RunArgs),
    /// Re-check search invariants over a trace file, offline
    Verify(VerifyArgs),
    /// Compute a metric report from a trace plus its dataset
    Report(ReportArgs),
}

#[derive(Args)]
struct PriorArgs {
    /// Image file
    #[arg(long)]
    image: PathBuf,
    /// Replace the built-in perception prompt
    #[arg(long)]
    prompt: Option<String>,
    /// Job config supplying providers (built-in mocks when omitted)
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct DecodeArgs {
    /// Image file
    #[arg(long)]
    image: PathBuf,
    /// Task prompt
    #[arg(long, default_value = DEFAULT_TASK_PROMPT)]
    prompt: String,
    /// Job config supplying providers and search defaults (built-in mocks
    /// when omitted)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Score by image-text alignment alone (clip-prm) or sample one
    /// candidate per step (greedy)
    #[arg(long, value_parser = parse_baseline)]
    baseline: Option<DecodeMode>,
    /// Candidates per step
    #[arg(long)]
    k: Option<usize>,
    /// Step budget
    #[arg(long)]
    max_steps: Option<usize>,
    /// Weight on prior similarity
    #[arg(long)]
    alpha: Option<f64>,
    /// Weight on image-text alignment
    #[arg(long)]
    beta: Option<f64>,
    /// Sentence delimiter
    #[arg(long)]
    delimiter: Option<String>,
    /// Sampling temperature
    #[arg(long)]
    temperature: Option<f64>,
    /// Nucleus sampling mass
    #[arg(long)]
    top_p: Option<f64>,
    /// Sampling seed forwarded to the generator
    #[arg(long)]
    seed: Option<u64>,
    /// Append the full decode record to this trace file
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Print the full decode result as JSON instead of the text
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct RunArgs {
    /// Job config file
    #[arg(long)]
    config: PathBuf,
    /// Skip items already present in the trace file
    #[arg(long)]
    resume: bool,
}

#[derive(Args)]
struct VerifyArgs {
    /// Trace file to audit
    #[arg(long)]
    trace: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Trace file with the decode records
    #[arg(long)]
    trace: PathBuf,
    /// Metric to compute: chair, pope, multitrust, or bleu
    #[arg(long, value_parser = parse_metric)]
    metric: DatasetKind,
    /// JSONL dataset the trace was produced from
    #[arg(long)]
    dataset: PathBuf,
    /// Object vocabulary JSON (built-in COCO set when omitted)
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Also write the JSON report here
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print JSON instead of the table
    #[arg(long)]
    json: bool,
}

fn parse_baseline(s: &str) -> Result<DecodeMode, String> {
    match s {
        "clip-prm" => Ok(DecodeMode::ClipPrm),
        "greedy" => Ok(DecodeMode::Greedy),
        other => Err(format!(
            "unknown baseline {other:?}; expected clip-prm or greedy"
        )),
    }
}

fn parse_metric(s: &str) -> Result<DatasetKind, String> {
    s.parse()
}

/// A command failure carrying its exit code: 1 for config/dataset/usage
/// problems, 2 for provider or run failures.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl Failure {
    fn usage(error: impl Into<anyhow::Error>) -> Self {
        Self {
            code: 1,
            error: error.into(),
        }
    }

    fn runtime(error: impl Into<anyhow::Error>) -> Self {
        Self {
            code: 2,
            error: error.into(),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap would exit with 2, which this tool reserves for provider
            // failures; fold usage errors into exit code 1.
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Prior(args) => cmd_prior(args),
        Command::Decode(args) => cmd_decode(args),
        Command::Run(args) => cmd_run(args),
        Command::Verify(args) => cmd_verify(args),
        Command::Report(args) => cmd_report(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {:#}", failure.error);
            ExitCode::from(failure.code)
        }
    }
}

fn require_image(path: &Path) -> Result<ImageRef, Failure> {
    if !path.is_file() {
        return Err(Failure::usage(anyhow!(
            "image {} does not exist",
            path.display()
        )));
    }
    Ok(ImageRef::from_path(path))
}

/// Search settings and providers for the single-image commands: a job
/// config when given, built-in mocks otherwise.
fn standalone_setup(
    config: Option<&Path>,
    search_override: impl FnOnce(&mut SearchConfig),
) -> Result<(SearchConfig, ProviderSet), Failure> {
    let (mut search, providers_config) = match config {
        Some(path) => {
            let job = JobConfig::load(path).map_err(Failure::usage)?;
            (job.search, Some(job.providers))
        }
        None => (SearchConfig::default(), None),
    };
    search_override(&mut search);
    search
        .validate()
        .context("invalid search settings")
        .map_err(Failure::usage)?;
    let providers = match providers_config {
        Some(cfg) => build_provider_set(&cfg, &search.delimiter).map_err(Failure::usage)?,
        None => builtin_mock_set(&search.delimiter),
    };
    Ok((search, providers))
}

fn cmd_prior(args: PriorArgs) -> Result<(), Failure> {
    let image = require_image(&args.image)?;
    let (search, providers) = standalone_setup(args.config.as_deref(), |_| {})?;
    let prompt_override = args
        .prompt
        .as_deref()
        .or(search.prior_prompt.as_deref())
        .map(str::to_string);
    let prior = acquire_prior(
        &image,
        providers.generator.as_ref(),
        providers.embedder.as_ref(),
        prompt_override.as_deref(),
    )
    .map_err(Failure::runtime)?;
    let shown = json!({
        "image_id": prior.image_id,
        "prompt_used": prior.prompt_used,
        "text": prior.text,
    });
    println!(
        "{}",
        serde_json::to_string_pretty(&shown).expect("static shape")
    );
    Ok(())
}

fn cmd_decode(args: DecodeArgs) -> Result<(), Failure> {
    let image = require_image(&args.image)?;
    let (search, providers) = standalone_setup(args.config.as_deref(), |search| {
        if let Some(k) = args.k {
            search.k = k;
        }
        if let Some(max_steps) = args.max_steps {
            search.max_steps = max_steps;
        }
        if let Some(alpha) = args.alpha {
            search.weights.alpha = alpha;
        }
        if let Some(beta) = args.beta {
            search.weights.beta = beta;
        }
        if let Some(delimiter) = &args.delimiter {
            search.delimiter = delimiter.clone();
        }
        if let Some(temperature) = args.temperature {
            search.sampling.temperature = temperature;
        }
        if let Some(top_p) = args.top_p {
            search.sampling.top_p = top_p;
        }
        if args.seed.is_some() {
            search.sampling.seed = args.seed;
        }
    })?;

    let mode = args.baseline.unwrap_or(DecodeMode::Lps);
    let result = decode_with_mode(mode, &image, &args.prompt, &search, &providers, None)
        .map_err(Failure::runtime)?;

    if let Some(trace_path) = &args.trace {
        let record = TraceRecord {
            schema_version: TRACE_SCHEMA_VERSION,
            job_id: format!("adhoc-{}", uuid::Uuid::new_v4()),
            image_id: result.prior.image_id.clone(),
            mode,
            result: result.clone(),
        };
        let mut writer = TraceWriter::append(trace_path).map_err(Failure::runtime)?;
        writer
            .write(&TraceLine::Record(record))
            .map_err(Failure::runtime)?;
        eprintln!("trace appended to {}", trace_path.display());
    }

    if args.json {
        println!(
            "{}",
            serde_json::to_string_pretty(&result)
                .context("serializing decode result")
                .map_err(Failure::runtime)?
        );
    } else {
        println!("{}", result.final_text);
    }
    Ok(())
}

fn cmd_run(args: RunArgs) -> Result<(), Failure> {
    let config = JobConfig::load(&args.config).map_err(Failure::usage)?;
    let summary = run_job(&config, args.resume).map_err(|e| match e {
        RunError::Setup(inner) => Failure::usage(inner),
        RunError::Execution(inner) => Failure::runtime(inner),
    })?;
    println!(
        "job {}: {} done, {} failed, {} skipped of {} item(s)",
        summary.job_id,
        summary.items_done,
        summary.items_failed,
        summary.skipped,
        summary.total_items
    );
    if let Some(report) = &summary.report {
        print!("{}", render_human(report));
        if let Some(path) = &config.output.report_path {
            println!("report written to {}", path.display());
        }
    }
    if summary.budget_exceeded {
        return Err(Failure::runtime(anyhow!(
            "{} of {} item(s) failed, exceeding the allowed fraction {}",
            summary.failed_in_trace,
            summary.total_items,
            config.max_failure_fraction
        )));
    }
    Ok(())
}

fn cmd_verify(args: VerifyArgs) -> Result<(), Failure> {
    let lines = read_trace(&args.trace).map_err(Failure::usage)?;
    let report = verify_trace(&lines);
    if report.records == 0 && report.failures == 0 {
        println!(
            "warning: trace {} is empty; nothing to verify",
            args.trace.display()
        );
        return Ok(());
    }
    for violation in &report.violations {
        println!("violation: {violation}");
    }
    println!(
        "verified {} record(s) and {} failure line(s): {}",
        report.records,
        report.failures,
        if report.is_clean() {
            "clean".to_string()
        } else {
            format!("{} violation(s)", report.violations.len())
        }
    );
    if report.is_clean() {
        Ok(())
    } else {
        Err(Failure::usage(anyhow!(
            "trace verification failed with {} violation(s)",
            report.violations.len()
        )))
    }
}

fn cmd_report(args: ReportArgs) -> Result<(), Failure> {
    let rows = load_rows(&args.dataset, args.metric).map_err(Failure::usage)?;
    let lines = read_trace(&args.trace).map_err(Failure::usage)?;
    let vocab = load_vocabulary(args.vocab.as_deref()).map_err(Failure::usage)?;
    let report = metric_from_trace(args.metric, &rows, &lines, &vocab).map_err(Failure::usage)?;
    let json = to_json(&report).map_err(Failure::runtime)?;
    if let Some(out) = &args.out {
        std::fs::write(out, json.clone() + "\n")
            .with_context(|| format!("writing report {}", out.display()))
            .map_err(Failure::runtime)?;
    }
    if args.json {
        println!("{json}");
    } else {
        print!("{}", render_human(&report));
    }
    Ok(())
}
