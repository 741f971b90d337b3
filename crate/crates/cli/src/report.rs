//! Metric computation from a trace joined with its dataset, plus rendering
//! in both machine-readable (JSON) and human-readable (aligned table) form.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use lps_core::metrics::{
    chair_scores, multitrust_accuracy, pope_score, BleuReport, ChairItem, ChairReport, CorpusBleu,
    MultitrustItem, MultitrustReport, ObjectVocabulary, PopeItem, PopePrediction, PopeReport,
    PopeSplit, PopeSplitReport,
};

use crate::config::DatasetKind;
use crate::dataset::DatasetRow;
use crate::trace::{TraceLine, TraceRecord};

/// A metric report tagged with the metric it came from.
// One report exists per run; the size spread between variants is irrelevant.
#[allow(clippy::large_enum_variant)]
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "metric", rename_all = "kebab-case")]
pub enum MetricReport {
    Chair(ChairReport),
    Pope(PopeReport),
    Multitrust(MultitrustReport),
    Bleu(BleuReport),
}

/// Loads an object vocabulary, defaulting to the built-in COCO set.
pub fn load_vocabulary(path: Option<&Path>) -> Result<ObjectVocabulary> {
    match path {
        Some(p) => {
            ObjectVocabulary::load(p).with_context(|| format!("loading vocab {}", p.display()))
        }
        None => Ok(ObjectVocabulary::builtin()),
    }
}

/// Joins successful trace records with their dataset rows by item id and
/// computes the metric for `kind`. Records are sorted by item id first, so
/// the result is independent of trace order and parallelism. The join is
/// strict: a record whose id is missing from the dataset is an error.
/// Failure lines never contribute; they are excluded by construction.
pub fn metric_from_trace(
    kind: DatasetKind,
    rows: &[DatasetRow],
    lines: &[TraceLine],
    vocab: &ObjectVocabulary,
) -> Result<MetricReport> {
    let by_id: BTreeMap<&str, &DatasetRow> = rows.iter().map(|r| (r.item_id.as_str(), r)).collect();
    let mut records: Vec<&TraceRecord> = lines
        .iter()
        .filter_map(|l| match l {
            TraceLine::Record(r) => Some(r),
            TraceLine::Failure(_) => None,
        })
        .collect();
    records.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    if records.is_empty() {
        bail!("trace contains no successful records to score");
    }

    match kind {
        DatasetKind::Chair => {
            let items = records
                .iter()
                .map(|rec| {
                    let row = lookup(&by_id, rec)?;
                    Ok(ChairItem {
                        caption: rec.result.final_text.clone(),
                        ground_truth: row.item.objects.clone(),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(MetricReport::Chair(chair_scores(&items, vocab)?))
        }
        DatasetKind::Multitrust => {
            let items = records
                .iter()
                .map(|rec| {
                    let row = lookup(&by_id, rec)?;
                    Ok(MultitrustItem {
                        response: rec.result.final_text.clone(),
                        ground_truth: row.item.objects.clone(),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(MetricReport::Multitrust(multitrust_accuracy(
                &items, vocab,
            )?))
        }
        DatasetKind::Pope => {
            let predictions = records
                .iter()
                .map(|rec| {
                    let row = lookup(&by_id, rec)?;
                    let item = &row.item;
                    Ok(PopePrediction {
                        item: PopeItem {
                            image_id: item.image_id.clone(),
                            question: item.question.clone().unwrap_or_default(),
                            label: item.label.context("pope item lost its label")?,
                            split: item.split.context("pope item lost its split")?,
                        },
                        answer: rec.result.final_text.clone(),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(MetricReport::Pope(pope_score(&predictions)?))
        }
        DatasetKind::Captions => {
            let mut corpus = CorpusBleu::new();
            for rec in &records {
                let row = lookup(&by_id, rec)?;
                if rec.result.final_text.split_whitespace().next().is_none() {
                    bail!(
                        "item {}: decoded text is empty; BLEU is undefined for it",
                        rec.image_id
                    );
                }
                corpus
                    .add(&rec.result.final_text, &row.item.references)
                    .with_context(|| format!("item {}", rec.image_id))?;
            }
            Ok(MetricReport::Bleu(corpus.report()?))
        }
    }
}

fn lookup<'a>(by_id: &BTreeMap<&str, &'a DatasetRow>, rec: &TraceRecord) -> Result<&'a DatasetRow> {
    by_id
        .get(rec.image_id.as_str())
        .copied()
        .with_context(|| format!("trace item {:?} is not in the dataset", rec.image_id))
}

pub fn to_json(report: &MetricReport) -> Result<String> {
    serde_json::to_string_pretty(report).context("serializing report")
}

/// Renders the report as an aligned plain-text table.
pub fn render_human(report: &MetricReport) -> String {
    let mut s = String::new();
    match report {
        MetricReport::Chair(r) => {
            let _ = writeln!(s, "CHAIR over {} response(s)", r.total_responses);
            let _ = writeln!(
                s,
                "  chair_i  {:.4}   {}/{} mentioned objects hallucinated",
                r.chair_i, r.hallucinated_mentions, r.total_mentions
            );
            let _ = writeln!(
                s,
                "  chair_s  {:.4}   {}/{} responses hallucinate",
                r.chair_s, r.hallucinated_responses, r.total_responses
            );
        }
        MetricReport::Pope(r) => {
            let _ = writeln!(s, "POPE over {} question(s)", r.overall.total);
            let _ = writeln!(
                s,
                "  {:<12} {:>5} {:>7} {:>7} {:>7} {:>7} {:>6}",
                "split", "n", "acc", "prec", "rec", "f1", "unpars"
            );
            let mut row = |name: &str, split: &PopeSplitReport| {
                let _ = writeln!(
                    s,
                    "  {:<12} {:>5} {:>7.4} {:>7.4} {:>7.4} {:>7.4} {:>6}",
                    name,
                    split.total,
                    split.accuracy,
                    split.precision,
                    split.recall,
                    split.f1,
                    split.unparseable
                );
            };
            for split in PopeSplit::ALL {
                let name = match split {
                    PopeSplit::Adversarial => "adversarial",
                    PopeSplit::Popular => "popular",
                    PopeSplit::Random => "random",
                };
                row(name, r.split(split));
            }
            row("overall", &r.overall);
        }
        MetricReport::Multitrust(r) => {
            let _ = writeln!(s, "Multitrust untargeted accuracy");
            let _ = writeln!(
                s,
                "  accuracy {:.4}   {}/{} responses mention a true object",
                r.accuracy, r.accurate, r.total
            );
        }
        MetricReport::Bleu(r) => {
            let _ = writeln!(s, "Corpus BLEU over {} sentence(s)", r.sentences);
            let _ = writeln!(s, "  bleu_1   {:.4}", r.bleu_1);
            let _ = writeln!(s, "  bleu_4   {:.4}", r.bleu_4);
            let _ = writeln!(
                s,
                "  lengths  {} candidate / {} reference tokens",
                r.candidate_tokens, r.reference_tokens
            );
        }
    }
    s
}
