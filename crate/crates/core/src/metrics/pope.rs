//! POPE: polling-based object probing.
//!
//! The model is asked yes/no questions about object presence under three
//! sampling regimes (adversarial, popular, random). Answers are parsed
//! leniently, unparseable answers count as "no" (the benchmark convention:
//! refusing to answer is not credited), and standard binary classification
//! rates are reported per split plus pooled over everything.

use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::segment::tokenize;

/// Parsed polarity of a free-form answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PopeAnswer {
    Yes,
    No,
    Unparseable,
}

/// Extracts yes/no polarity from a free-form answer.
///
/// The first alphabetic token decides when it is literally "yes" or "no"
/// (case-insensitive). Otherwise the whole answer is scanned: containing
/// exactly one of the two words decides, containing both or neither is
/// unparseable.
pub fn parse_yes_no(answer: &str) -> PopeAnswer {
    let tokens = tokenize(answer);
    let first_alpha = tokens.iter().find(|t| t.chars().all(|c| c.is_alphabetic()));
    match first_alpha.map(String::as_str) {
        Some("yes") => return PopeAnswer::Yes,
        Some("no") => return PopeAnswer::No,
        _ => {}
    }
    let has_yes = tokens.iter().any(|t| t == "yes");
    let has_no = tokens.iter().any(|t| t == "no");
    match (has_yes, has_no) {
        (true, false) => PopeAnswer::Yes,
        (false, true) => PopeAnswer::No,
        _ => PopeAnswer::Unparseable,
    }
}

/// Gold label for a POPE question.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PopeLabel {
    Yes,
    No,
}

/// Question sampling regime.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PopeSplit {
    Adversarial,
    Popular,
    Random,
}

impl PopeSplit {
    pub const ALL: [PopeSplit; 3] = [
        PopeSplit::Adversarial,
        PopeSplit::Popular,
        PopeSplit::Random,
    ];
}

/// One benchmark question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PopeItem {
    pub image_id: String,
    pub question: String,
    pub label: PopeLabel,
    pub split: PopeSplit,
}

/// A model's answer to one question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PopePrediction {
    pub item: PopeItem,
    pub answer: String,
}

/// Binary classification rates for one split (or the pooled total).
///
/// "Yes" is the positive class. Degenerate denominators yield 0 by
/// convention: a split with no positive predictions has precision 0, one
/// with no positive labels has recall 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PopeSplitReport {
    pub true_positive: u64,
    pub false_positive: u64,
    pub true_negative: u64,
    pub false_negative: u64,
    pub unparseable: u64,
    pub total: u64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl PopeSplitReport {
    fn from_counts(tp: u64, fp: u64, tn: u64, fn_: u64, unparseable: u64) -> Self {
        let total = tp + fp + tn + fn_;
        let ratio = |num: u64, den: u64| {
            if den == 0 {
                0.0
            } else {
                num as f64 / den as f64
            }
        };
        let accuracy = ratio(tp + tn, total);
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self {
            true_positive: tp,
            false_positive: fp,
            true_negative: tn,
            false_negative: fn_,
            unparseable,
            total,
            accuracy,
            precision,
            recall,
            f1,
        }
    }
}

/// Per-split and pooled POPE rates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PopeReport {
    pub adversarial: PopeSplitReport,
    pub popular: PopeSplitReport,
    pub random: PopeSplitReport,
    /// Micro-average: one confusion matrix pooled over all splits.
    pub overall: PopeSplitReport,
}

impl PopeReport {
    pub fn split(&self, split: PopeSplit) -> &PopeSplitReport {
        match split {
            PopeSplit::Adversarial => &self.adversarial,
            PopeSplit::Popular => &self.popular,
            PopeSplit::Random => &self.random,
        }
    }
}

#[derive(Default, Clone, Copy)]
struct Counts {
    tp: u64,
    fp: u64,
    tn: u64,
    fn_: u64,
    unparseable: u64,
}

impl Counts {
    fn record(&mut self, gold_yes: bool, answer: PopeAnswer) {
        let predicted_yes = match answer {
            PopeAnswer::Yes => true,
            PopeAnswer::No => false,
            PopeAnswer::Unparseable => {
                self.unparseable += 1;
                false
            }
        };
        match (gold_yes, predicted_yes) {
            (true, true) => self.tp += 1,
            (true, false) => self.fn_ += 1,
            (false, true) => self.fp += 1,
            (false, false) => self.tn += 1,
        }
    }

    fn report(self) -> PopeSplitReport {
        PopeSplitReport::from_counts(self.tp, self.fp, self.tn, self.fn_, self.unparseable)
    }
}

/// Scores a non-empty set of predictions.
pub fn pope_score(predictions: &[PopePrediction]) -> Result<PopeReport, MetricsError> {
    if predictions.is_empty() {
        return Err(MetricsError::EmptyItemSet);
    }
    let mut adversarial = Counts::default();
    let mut popular = Counts::default();
    let mut random = Counts::default();
    let mut overall = Counts::default();

    for prediction in predictions {
        let gold_yes = prediction.item.label == PopeLabel::Yes;
        let answer = parse_yes_no(&prediction.answer);
        let split_counts = match prediction.item.split {
            PopeSplit::Adversarial => &mut adversarial,
            PopeSplit::Popular => &mut popular,
            PopeSplit::Random => &mut random,
        };
        split_counts.record(gold_yes, answer);
        overall.record(gold_yes, answer);
    }

    Ok(PopeReport {
        adversarial: adversarial.report(),
        popular: popular.report(),
        random: random.report(),
        overall: overall.report(),
    })
}
