//! Append-only JSONL decode traces and their offline verifier.
//!
//! Every line is self-describing: a full [`TraceRecord`] (the decode result
//! with all candidates and reward breakdowns) or a [`TraceFailure`]. The
//! verifier re-checks the search invariants from trace contents alone; it
//! never needs live providers.

use std::collections::HashSet;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use lps_core::{join_steps, DecodeMode, DecodeResult, StepRecord, Termination, TieBreak};

pub const TRACE_SCHEMA_VERSION: u32 = 1;

/// One successful decode, fully serialized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceRecord {
    pub schema_version: u32,
    pub job_id: String,
    /// Dataset item id, or the image identity hash for ad-hoc decodes.
    pub image_id: String,
    pub mode: DecodeMode,
    pub result: DecodeResult,
}

/// A decode that failed. Kept in the trace so resumed runs skip the item
/// instead of silently retrying it; retrying means removing the line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceFailure {
    pub schema_version: u32,
    pub job_id: String,
    pub image_id: String,
    pub mode: DecodeMode,
    pub error: String,
}

/// One trace line. Discrimination is structural: records carry `result`,
/// failures carry `error`.
// Records dwarf failures by design; lines are streamed one at a time, so the
// size skew never multiplies across a hot collection.
#[allow(clippy::large_enum_variant)]
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TraceLine {
    Record(TraceRecord),
    Failure(TraceFailure),
}

impl TraceLine {
    pub fn image_id(&self) -> &str {
        match self {
            TraceLine::Record(r) => &r.image_id,
            TraceLine::Failure(f) => &f.image_id,
        }
    }

    pub fn schema_version(&self) -> u32 {
        match self {
            TraceLine::Record(r) => r.schema_version,
            TraceLine::Failure(f) => f.schema_version,
        }
    }
}

/// Append-only writer: one JSON document per line, flushed per line, so a
/// crash loses at most the line in progress.
pub struct TraceWriter {
    out: BufWriter<File>,
}

impl TraceWriter {
    pub fn append(path: &Path) -> Result<Self> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)
                    .with_context(|| format!("creating {}", parent.display()))?;
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .with_context(|| format!("opening trace {}", path.display()))?;
        Ok(Self {
            out: BufWriter::new(file),
        })
    }

    pub fn write(&mut self, line: &TraceLine) -> Result<()> {
        serde_json::to_writer(&mut self.out, line).context("serializing trace line")?;
        self.out.write_all(b"\n")?;
        self.out.flush()?;
        Ok(())
    }
}

/// Reads a whole trace; blank lines are skipped, anything else that fails
/// to parse is an error naming the line.
pub fn read_trace(path: &Path) -> Result<Vec<TraceLine>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading trace {}", path.display()))?;
    let mut lines = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let line: TraceLine = serde_json::from_str(raw)
            .with_context(|| format!("trace line {} is corrupt", idx + 1))?;
        lines.push(line);
    }
    Ok(lines)
}

/// Item ids present in the trace, successes and failures alike. Resume
/// skips all of them, which is what keeps ids unique across reruns.
pub fn traced_ids(lines: &[TraceLine]) -> HashSet<String> {
    lines.iter().map(|l| l.image_id().to_string()).collect()
}

/// Outcome of an offline trace audit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub records: usize,
    pub failures: usize,
    pub violations: Vec<String>,
}

impl VerifyReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Re-checks every record against the search invariants: reward
/// recombination from its parts, an independent winner scan, step
/// bookkeeping, termination consistency, and final-text reassembly.
pub fn verify_trace(lines: &[TraceLine]) -> VerifyReport {
    let mut records = 0;
    let mut failures = 0;
    let mut violations = Vec::new();
    for (idx, line) in lines.iter().enumerate() {
        let line_no = idx + 1;
        if line.schema_version() != TRACE_SCHEMA_VERSION {
            violations.push(format!(
                "line {line_no} ({}): schema_version {} is not {TRACE_SCHEMA_VERSION}",
                line.image_id(),
                line.schema_version()
            ));
        }
        match line {
            TraceLine::Failure(_) => failures += 1,
            TraceLine::Record(record) => {
                records += 1;
                for what in check_record(record) {
                    violations.push(format!("line {line_no} ({}): {what}", record.image_id));
                }
            }
        }
    }
    VerifyReport {
        records,
        failures,
        violations,
    }
}

fn check_record(record: &TraceRecord) -> Vec<String> {
    let mut out = Vec::new();
    let result = &record.result;
    let config = &result.config_snapshot;

    if result.steps.len() > config.max_steps {
        out.push(format!(
            "{} steps exceed the budget of {}",
            result.steps.len(),
            config.max_steps
        ));
    }

    for (i, step) in result.steps.iter().enumerate() {
        let label = format!("step {}", i + 1);
        if step.step_index != i + 1 {
            out.push(format!("{label}: step_index is {}", step.step_index));
        }
        if step.candidates.is_empty() {
            out.push(format!("{label}: no candidates recorded"));
            continue;
        }
        if step.candidates.len() > config.k {
            out.push(format!(
                "{label}: {} candidates exceed k = {}",
                step.candidates.len(),
                config.k
            ));
        }
        if step.selected >= step.candidates.len() {
            out.push(format!(
                "{label}: selected index {} out of range",
                step.selected
            ));
            continue;
        }
        for (j, candidate) in step.candidates.iter().enumerate() {
            check_candidate(&label, j, candidate, config, &mut out);
        }
        if let Some(expected) = independent_winner(step, config.tie_break) {
            if expected != step.selected {
                out.push(format!(
                    "{label}: selected {} but rewards favor {expected}",
                    step.selected
                ));
            }
        }
        let is_last = i + 1 == result.steps.len();
        if !is_last && step.selected_candidate().text.terminal {
            out.push(format!("{label}: terminal winner has following steps"));
        }
    }

    // Reassembly and termination both read the winners; skip them if any
    // selected index is unusable, which was already reported above.
    let indices_ok = result.steps.iter().all(|s| s.selected < s.candidates.len());
    if indices_ok {
        check_termination(result, &mut out);
        let reassembled = join_steps(&result.selected_steps().cloned().collect::<Vec<_>>());
        if result.final_text != reassembled {
            out.push(format!(
                "final_text {:?} does not reassemble from its steps ({reassembled:?})",
                result.final_text
            ));
        }
    }
    out
}

fn check_candidate(
    label: &str,
    index: usize,
    candidate: &lps_core::ScoredCandidate,
    config: &lps_core::SearchConfig,
    out: &mut Vec<String>,
) {
    let reward = &candidate.reward;
    if candidate.text.text.is_empty() {
        out.push(format!("{label}, candidate {index}: empty text"));
    }
    for (name, value) in [("r_lps", reward.r_lps), ("r_clip", reward.r_clip)] {
        if !(value.is_finite() && (-1.0..=1.0).contains(&value)) {
            out.push(format!(
                "{label}, candidate {index}: {name} = {value} outside [-1, 1]"
            ));
            return;
        }
    }
    let expected = config.weights.alpha * reward.r_lps + config.weights.beta * reward.r_clip;
    if reward.combined != expected {
        out.push(format!(
            "{label}, candidate {index}: combined {} != {} recombined from parts",
            reward.combined, expected
        ));
    }
}

/// Brute-force winner scan, written out independently of the search's own
/// selection code.
fn independent_winner(step: &StepRecord, tie_break: TieBreak) -> Option<usize> {
    let mut best = 0;
    for (j, candidate) in step.candidates.iter().enumerate().skip(1) {
        let current = step.candidates[best].reward.combined;
        let better = match tie_break {
            TieBreak::LowestIndex => candidate.reward.combined > current,
            TieBreak::HighestIndex => candidate.reward.combined >= current,
        };
        if better {
            best = j;
        }
    }
    (!step.candidates.is_empty()).then_some(best)
}

fn check_termination(result: &DecodeResult, out: &mut Vec<String>) {
    let last_terminal = result
        .steps
        .last()
        .map(|s| s.selected_candidate().text.terminal);
    match result.terminated_by {
        Termination::Eos => {
            if last_terminal != Some(true) {
                out.push("terminated by eos without a terminal final step".into());
            }
        }
        Termination::MaxSteps => {
            if result.steps.len() != result.config_snapshot.max_steps {
                out.push(format!(
                    "terminated by max_steps after {} of {} steps",
                    result.steps.len(),
                    result.config_snapshot.max_steps
                ));
            }
            if last_terminal == Some(true) {
                out.push("terminated by max_steps but the final step is terminal".into());
            }
        }
        Termination::ProviderExhausted => {
            if last_terminal == Some(true) {
                out.push("terminated by exhaustion after a terminal step".into());
            }
        }
    }
}
