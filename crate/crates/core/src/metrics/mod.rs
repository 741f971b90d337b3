//! Hallucination and quality metrics for captioning output.
//!
//! - [`vocab`]: object vocabulary with synonym folding and extraction of
//!   mentioned objects from captions.
//! - [`chair`]: CHAIR instance- and sentence-level hallucination rates.
//! - [`pope`]: yes/no object-presence polling with per-split
//!   accuracy/precision/recall/F1.
//! - [`multitrust`]: ground-truth object overlap accuracy.
//! - [`bleu`]: n-gram precision with brevity penalty, sentence and corpus
//!   level.
//!
//! Every report keeps its raw counts next to the derived rates so results
//! can be audited without recomputing anything.

pub mod bleu;
pub mod chair;
pub mod multitrust;
pub mod pope;
pub mod vocab;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("metric input contains no items")]
    EmptyItemSet,
    #[error("candidate and references must contain at least one token")]
    EmptyText,
    #[error("bleu order must lie in 1..=4, got {got}")]
    InvalidBleuOrder { got: usize },
    #[error("invalid vocabulary: {0}")]
    InvalidVocabulary(String),
}

pub use bleu::{bleu, BleuReport, CorpusBleu};
pub use chair::{chair_scores, ChairItem, ChairItemBreakdown, ChairReport};
pub use multitrust::{multitrust_accuracy, MultitrustItem, MultitrustReport};
pub use pope::{
    parse_yes_no, pope_score, PopeAnswer, PopeItem, PopeLabel, PopePrediction, PopeReport,
    PopeSplit, PopeSplitReport,
};
pub use vocab::{extract_objects, ObjectVocabulary};
