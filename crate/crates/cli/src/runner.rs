//! The job loop: resolve providers, fan decode work out across worker
//! threads, funnel every outcome through one writer that owns the trace
//! file, then score the full trace.

use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{mpsc, Arc};

use anyhow::{bail, Context, Result};

use lps_core::metrics::ObjectVocabulary;
use lps_core::providers::http::{HttpEmbedder, HttpGenerator, HttpScorer};
use lps_core::providers::mock::{
    builtin_vocab, BagOfWordsEmbedder, BuiltinMockGenerator, BuiltinMockScorer,
};
use lps_core::{
    decode_with_mode, CandidateGenerator, ImageTextScorer, PriorCache, ProviderSet, RequestLimiter,
    TextEmbedder,
};

use crate::config::{DatasetKind, JobConfig, ProvidersConfig, DEFAULT_TASK_PROMPT};
use crate::dataset::{load_dataset, DatasetItem, LoadedItem};
use crate::report::{load_vocabulary, metric_from_trace, to_json, MetricReport};
use crate::trace::{
    read_trace, traced_ids, TraceFailure, TraceLine, TraceRecord, TraceWriter, TRACE_SCHEMA_VERSION,
};

/// What one `run` invocation did. Failure accounting spans the whole trace
/// (including lines from earlier, resumed invocations) because the failure
/// budget applies to the job, not the process.
#[derive(Debug)]
pub struct RunSummary {
    pub job_id: String,
    pub total_items: usize,
    /// Items skipped because the trace already covers them.
    pub skipped: usize,
    /// Successful decodes this invocation.
    pub items_done: usize,
    /// Failed decodes this invocation.
    pub items_failed: usize,
    /// Failure lines across the whole trace.
    pub failed_in_trace: usize,
    pub failure_fraction: f64,
    pub budget_exceeded: bool,
    /// Metric over all successful records; absent when there are none.
    pub report: Option<MetricReport>,
}

/// A run failure, split by phase so callers can map it to the documented
/// exit codes: setup problems (dataset, trace state, providers, vocabulary)
/// are the user's to fix, execution problems are environmental.
#[derive(Debug)]
pub enum RunError {
    Setup(anyhow::Error),
    Execution(anyhow::Error),
}

impl fmt::Display for RunError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RunError::Setup(e) | RunError::Execution(e) => write!(f, "{e:#}"),
        }
    }
}

/// Builds the three providers per descriptor. `endpoint = "mock"` selects
/// the built-in deterministic backend for that slot; HTTP slots share one
/// in-flight request limiter.
pub fn build_provider_set(providers: &ProvidersConfig, delimiter: &str) -> Result<ProviderSet> {
    let limiter = Arc::new(RequestLimiter::default());
    let generator: Arc<dyn CandidateGenerator> = if providers.generator.is_mock() {
        Arc::new(BuiltinMockGenerator::new(delimiter))
    } else {
        Arc::new(
            HttpGenerator::with_limiter(&providers.generator, Arc::clone(&limiter))
                .context("building generator provider")?,
        )
    };
    let embedder: Arc<dyn TextEmbedder> = if providers.embedder.is_mock() {
        Arc::new(BagOfWordsEmbedder::new(builtin_vocab()))
    } else {
        Arc::new(
            HttpEmbedder::with_limiter(&providers.embedder, Arc::clone(&limiter))
                .context("building embedder provider")?,
        )
    };
    let scorer: Arc<dyn ImageTextScorer> = if providers.scorer.is_mock() {
        Arc::new(BuiltinMockScorer)
    } else {
        Arc::new(
            HttpScorer::with_limiter(&providers.scorer, limiter)
                .context("building scorer provider")?,
        )
    };
    Ok(ProviderSet {
        generator,
        embedder,
        scorer,
    })
}

fn task_prompt_for(config: &JobConfig, item: &DatasetItem) -> String {
    match config.dataset.kind {
        DatasetKind::Pope => item.question.clone().unwrap_or_default(),
        _ => config
            .dataset
            .task_prompt
            .clone()
            .unwrap_or_else(|| DEFAULT_TASK_PROMPT.to_string()),
    }
}

pub fn run_job(config: &JobConfig, resume: bool) -> Result<RunSummary, RunError> {
    let prepared = prepare(config, resume).map_err(RunError::Setup)?;
    execute(config, prepared).map_err(RunError::Execution)
}

/// Everything resolved before the first provider call, so a bad dataset,
/// trace, or vocabulary fails fast instead of after a long run.
struct Prepared {
    items: Vec<LoadedItem>,
    /// Indices into `items` still missing from the trace.
    pending: Vec<usize>,
    providers: ProviderSet,
    vocab: ObjectVocabulary,
}

fn prepare(config: &JobConfig, resume: bool) -> Result<Prepared> {
    let items = load_dataset(&config.dataset)?;

    let trace_path = &config.output.trace_path;
    let mut prior_lines = Vec::new();
    if trace_path.is_file() && std::fs::metadata(trace_path)?.len() > 0 {
        if !resume {
            bail!(
                "trace {} already has content; pass --resume to continue it or remove it first",
                trace_path.display()
            );
        }
        prior_lines = read_trace(trace_path)?;
    }
    let done = traced_ids(&prior_lines);
    let pending = items
        .iter()
        .enumerate()
        .filter(|(_, it)| !done.contains(&it.row.item_id))
        .map(|(i, _)| i)
        .collect();

    let providers = build_provider_set(&config.providers, &config.search.delimiter)?;
    let vocab = load_vocabulary(config.dataset.vocab_path.as_deref())?;
    Ok(Prepared {
        items,
        pending,
        providers,
        vocab,
    })
}

fn execute(config: &JobConfig, prepared: Prepared) -> Result<RunSummary> {
    let Prepared {
        items,
        pending,
        providers,
        vocab,
    } = prepared;
    let total_items = items.len();
    let pending: Vec<&LoadedItem> = pending.iter().map(|&i| &items[i]).collect();
    let skipped = total_items - pending.len();

    let trace_path = &config.output.trace_path;
    let job_id = uuid::Uuid::new_v4().to_string();
    let cache = PriorCache::new();
    let mut writer = TraceWriter::append(trace_path)?;

    let cursor = AtomicUsize::new(0);
    let workers = config.parallelism.min(pending.len()).max(1);
    let (tx, rx) = mpsc::channel::<TraceLine>();

    let mut items_done = 0;
    let mut items_failed = 0;

    std::thread::scope(|scope| -> Result<()> {
        for _ in 0..workers {
            let tx = tx.clone();
            let providers = providers.clone();
            let cache = &cache;
            let cursor = &cursor;
            let pending = &pending;
            let job_id = &job_id;
            scope.spawn(move || loop {
                let index = cursor.fetch_add(1, Ordering::Relaxed);
                let Some(item) = pending.get(index) else {
                    break;
                };
                let prompt = task_prompt_for(config, &item.row.item);
                let line = match decode_with_mode(
                    config.mode,
                    &item.image,
                    &prompt,
                    &config.search,
                    &providers,
                    Some(cache),
                ) {
                    Ok(result) => TraceLine::Record(TraceRecord {
                        schema_version: TRACE_SCHEMA_VERSION,
                        job_id: job_id.clone(),
                        image_id: item.row.item_id.clone(),
                        mode: config.mode,
                        result,
                    }),
                    Err(e) => TraceLine::Failure(TraceFailure {
                        schema_version: TRACE_SCHEMA_VERSION,
                        job_id: job_id.clone(),
                        image_id: item.row.item_id.clone(),
                        mode: config.mode,
                        error: format!("{:#}", anyhow::Error::new(e)),
                    }),
                };
                if tx.send(line).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        // Only this loop touches the file; workers just send.
        for line in rx {
            match &line {
                TraceLine::Record(_) => items_done += 1,
                TraceLine::Failure(_) => items_failed += 1,
            }
            writer.write(&line)?;
        }
        Ok(())
    })?;

    let all_lines = read_trace(trace_path)?;
    let failed_in_trace = all_lines
        .iter()
        .filter(|l| matches!(l, TraceLine::Failure(_)))
        .count();
    let failure_fraction = if total_items == 0 {
        0.0
    } else {
        failed_in_trace as f64 / total_items as f64
    };

    let report = if all_lines.iter().any(|l| matches!(l, TraceLine::Record(_))) {
        let rows: Vec<_> = items.into_iter().map(|it| it.row).collect();
        let report = metric_from_trace(config.dataset.kind, &rows, &all_lines, &vocab)?;
        if let Some(path) = &config.output.report_path {
            std::fs::write(path, to_json(&report)? + "\n")
                .with_context(|| format!("writing report {}", path.display()))?;
        }
        Some(report)
    } else {
        None
    };

    Ok(RunSummary {
        job_id,
        total_items,
        skipped,
        items_done,
        items_failed,
        failed_in_trace,
        failure_fraction,
        budget_exceeded: failure_fraction > config.max_failure_fraction,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{DatasetConfig, OutputConfig};
    use lps_core::{DecodeMode, ProviderDescriptor, SearchConfig};
    use std::fs;
    use std::path::Path;

    fn mock_descriptor() -> ProviderDescriptor {
        ProviderDescriptor {
            kind: None,
            endpoint: "mock".into(),
            model_id: "demo".into(),
            auth_env: None,
            timeout_secs: 30,
            max_retries: 2,
        }
    }

    fn dead_descriptor() -> ProviderDescriptor {
        // Bind-and-drop so the port is known to refuse connections.
        let port = {
            let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
            listener.local_addr().unwrap().port()
        };
        ProviderDescriptor {
            kind: None,
            endpoint: format!("http://127.0.0.1:{port}"),
            model_id: "dead".into(),
            auth_env: None,
            timeout_secs: 1,
            max_retries: 0,
        }
    }

    fn write_fixture_dataset(dir: &Path, n: usize) -> DatasetConfig {
        let mut lines = String::new();
        for i in 0..n {
            fs::write(dir.join(format!("img_{i:02}.png")), format!("image-{i}")).unwrap();
            lines.push_str(&format!(
                "{{\"image_id\": \"img_{i:02}\", \"objects\": [\"dog\"]}}\n"
            ));
        }
        let path = dir.join("items.jsonl");
        fs::write(&path, lines).unwrap();
        DatasetConfig {
            kind: DatasetKind::Chair,
            path,
            image_root: None,
            task_prompt: None,
            vocab_path: None,
        }
    }

    fn job(dir: &Path, n: usize, parallelism: usize, trace_name: &str) -> JobConfig {
        JobConfig {
            schema_version: 1,
            providers: ProvidersConfig {
                generator: mock_descriptor(),
                embedder: mock_descriptor(),
                scorer: mock_descriptor(),
            },
            search: SearchConfig::default(),
            dataset: write_fixture_dataset(dir, n),
            output: OutputConfig {
                trace_path: dir.join(trace_name),
                report_path: Some(dir.join(format!("{trace_name}.report.json"))),
            },
            parallelism,
            mode: DecodeMode::Lps,
            max_failure_fraction: 0.1,
        }
    }

    #[test]
    fn mock_job_traces_every_item_and_reports() {
        let dir = tempfile::tempdir().unwrap();
        let config = job(dir.path(), 4, 1, "trace.jsonl");
        let summary = run_job(&config, false).unwrap();
        assert_eq!(summary.items_done, 4);
        assert_eq!(summary.items_failed, 0);
        assert!(!summary.budget_exceeded);
        assert!(matches!(summary.report, Some(MetricReport::Chair(_))));

        let lines = read_trace(&config.output.trace_path).unwrap();
        assert_eq!(lines.len(), 4);
        assert!(config.output.report_path.as_ref().unwrap().is_file());
    }

    #[test]
    fn rerun_without_resume_refuses_and_resume_skips() {
        let dir = tempfile::tempdir().unwrap();
        let config = job(dir.path(), 3, 1, "trace.jsonl");
        run_job(&config, false).unwrap();

        let err = run_job(&config, false).unwrap_err();
        assert!(err.to_string().contains("--resume"));

        let summary = run_job(&config, true).unwrap();
        assert_eq!(summary.skipped, 3);
        assert_eq!(summary.items_done, 0);
        // No duplicate ids were appended.
        let lines = read_trace(&config.output.trace_path).unwrap();
        assert_eq!(lines.len(), 3);
        assert_eq!(traced_ids(&lines).len(), 3);
        // The report is still produced from the existing records.
        assert!(summary.report.is_some());
    }

    #[test]
    fn failure_budget_trips_when_providers_are_down() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = job(dir.path(), 3, 2, "trace.jsonl");
        config.providers.generator = dead_descriptor();
        let summary = run_job(&config, false).unwrap();
        assert_eq!(summary.items_failed, 3);
        assert_eq!(summary.failure_fraction, 1.0);
        assert!(summary.budget_exceeded);
        assert!(summary.report.is_none());

        // Failures are traced with their error text.
        let lines = read_trace(&config.output.trace_path).unwrap();
        assert!(lines.iter().all(|l| matches!(l, TraceLine::Failure(_))));
    }

    #[test]
    fn parallel_and_serial_runs_agree() {
        let dir = tempfile::tempdir().unwrap();
        let serial = job(dir.path(), 8, 1, "serial.jsonl");
        let parallel = JobConfig {
            output: OutputConfig {
                trace_path: dir.path().join("parallel.jsonl"),
                report_path: None,
            },
            parallelism: 4,
            ..serial.clone()
        };
        let one = run_job(&serial, false).unwrap();
        let four = run_job(&parallel, false).unwrap();
        assert_eq!(one.report, four.report);
    }

    #[test]
    fn pope_jobs_ask_the_item_question() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("img.png"), b"image").unwrap();
        let dataset_path = dir.path().join("pope.jsonl");
        fs::write(
            &dataset_path,
            concat!(
                "{\"image_id\": \"img\", \"question\": \"Is there a dog?\", \"label\": \"yes\", \"split\": \"random\"}\n",
                "{\"image_id\": \"img\", \"question\": \"Is there a cat?\", \"label\": \"no\", \"split\": \"popular\"}\n",
            ),
        )
        .unwrap();
        let mut config = job(dir.path(), 1, 1, "pope-trace.jsonl");
        config.dataset = DatasetConfig {
            kind: DatasetKind::Pope,
            path: dataset_path,
            image_root: None,
            task_prompt: None,
            vocab_path: None,
        };
        let summary = run_job(&config, false).unwrap();
        assert_eq!(summary.items_done, 2);
        match summary.report {
            Some(MetricReport::Pope(r)) => assert_eq!(r.overall.total, 2),
            other => panic!("expected a pope report, got {other:?}"),
        }
        // The mock generator answers questions with a terminal one-word step.
        let lines = read_trace(&config.output.trace_path).unwrap();
        for line in &lines {
            match line {
                TraceLine::Record(rec) => {
                    assert!(rec.result.final_text == "Yes" || rec.result.final_text == "No");
                    assert_eq!(rec.result.steps.len(), 1);
                }
                TraceLine::Failure(f) => panic!("unexpected failure: {}", f.error),
            }
        }
    }
}
