//! Human annotation: naturalness ratings of noised sentences and
//! adequacy / fluency / image-need judgments of translations.
//!
//! State lives in an append-only JSONL event log ([`Store`]); [`service`]
//! exposes it over HTTP and [`client`] drives the noise-tuning loop through
//! that API.

pub mod client;
pub mod service;
mod store;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use store::*;

use crate::probing::Subset;

#[derive(Debug, Error)]
pub enum AnnotateError {
    #[error("batch has no items")]
    EmptyBatch,
    #[error("item {index} is not a {kind} item: {message}")]
    BadItem { index: usize, kind: TaskKind, message: String },
    #[error("unknown task `{0}`")]
    UnknownTask(String),
    #[error("unknown batch `{0}`")]
    UnknownBatch(String),
    #[error("batch key `{0}` already used for different items")]
    BatchConflict(String),
    #[error("invalid verdict: {0}")]
    InvalidVerdict(String),
    #[error("batch `{batch}` is not a naturalness batch")]
    WrongKind { batch: String },
    #[error("batch `{batch}` has {} unanswered tasks", unanswered.len())]
    Incomplete { batch: String, unanswered: Vec<String> },
    #[error("no quality verdicts match the filter")]
    EmptyFilter,
    #[error("event log line {line} is corrupt: {message}")]
    CorruptLog { line: usize, message: String },
    #[error("storage error: {0}")]
    Io(#[from] std::io::Error),
}

impl AnnotateError {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            AnnotateError::EmptyBatch => "empty_batch",
            AnnotateError::BadItem { .. } => "bad_item",
            AnnotateError::UnknownTask(_) => "unknown_task",
            AnnotateError::UnknownBatch(_) => "unknown_batch",
            AnnotateError::BatchConflict(_) => "batch_conflict",
            AnnotateError::InvalidVerdict(_) => "invalid_verdict",
            AnnotateError::WrongKind { .. } => "wrong_kind",
            AnnotateError::Incomplete { .. } => "incomplete_batch",
            AnnotateError::EmptyFilter => "empty_filter",
            AnnotateError::CorruptLog { .. } => "corrupt_log",
            AnnotateError::Io(_) => "storage",
        }
    }
}

pub type Result<T> = std::result::Result<T, AnnotateError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Naturalness,
    Quality,
}

impl FromStr for TaskKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "naturalness" => Ok(Self::Naturalness),
            "quality" => Ok(Self::Quality),
            other => Err(format!("unknown task kind `{other}`")),
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Naturalness => "naturalness",
            Self::Quality => "quality",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TaskPayload {
    Naturalness {
        original: String,
        corrupted: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        record_id: Option<u64>,
    },
    Quality {
        source: String,
        target: String,
        /// URL or media-relative image reference.
        image: String,
        subset: Subset,
        language: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        record_id: Option<u64>,
    },
}

impl TaskPayload {
    pub fn kind(&self) -> TaskKind {
        match self {
            TaskPayload::Naturalness { .. } => TaskKind::Naturalness,
            TaskPayload::Quality { .. } => TaskKind::Quality,
        }
    }

    pub fn naturalness(original: impl Into<String>, corrupted: impl Into<String>) -> Self {
        TaskPayload::Naturalness {
            original: original.into(),
            corrupted: corrupted.into(),
            record_id: None,
        }
    }

    pub fn quality(
        source: impl Into<String>,
        target: impl Into<String>,
        image: impl Into<String>,
        subset: Subset,
        language: impl Into<String>,
    ) -> Self {
        TaskPayload::Quality {
            source: source.into(),
            target: target.into(),
            image: image.into(),
            subset,
            language: language.into(),
            record_id: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskStatus {
    Open,
    /// The batch was closed; no longer handed out.
    Done,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationTask {
    pub task_id: String,
    pub kind: TaskKind,
    pub batch: String,
    pub payload: TaskPayload,
    pub status: TaskStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Good,
    Medium,
    Bad,
}

impl Scale {
    pub const ALL: [Scale; 3] = [Scale::Good, Scale::Medium, Scale::Bad];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageNeed {
    Yes,
    Maybe,
    No,
    NotReflected,
}

impl ImageNeed {
    pub const ALL: [ImageNeed; 4] = [ImageNeed::Yes, ImageNeed::Maybe, ImageNeed::No, ImageNeed::NotReflected];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Answer {
    Naturalness { rating: u8 },
    Quality { adequacy: Scale, fluency: Scale, image_need: ImageNeed },
}

impl Answer {
    pub fn kind(&self) -> TaskKind {
        match self {
            Answer::Naturalness { .. } => TaskKind::Naturalness,
            Answer::Quality { .. } => TaskKind::Quality,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationVerdict {
    pub task_id: String,
    pub annotator_id: String,
    #[serde(flatten)]
    pub answer: Answer,
    /// UTC seconds.
    pub timestamp: i64,
}

/// A verdict as submitted: the answer fields are checked against the task kind.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerdictRequest {
    pub task_id: String,
    pub annotator_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rating: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adequacy: Option<Scale>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fluency: Option<Scale>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_need: Option<ImageNeed>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<i64>,
}

impl VerdictRequest {
    pub fn naturalness(task_id: &str, annotator_id: &str, rating: i64) -> Self {
        Self {
            task_id: task_id.into(),
            annotator_id: annotator_id.into(),
            rating: Some(rating),
            ..Self::default()
        }
    }

    pub fn quality(task_id: &str, annotator_id: &str, adequacy: Scale, fluency: Scale, image_need: ImageNeed) -> Self {
        Self {
            task_id: task_id.into(),
            annotator_id: annotator_id.into(),
            adequacy: Some(adequacy),
            fluency: Some(fluency),
            image_need: Some(image_need),
            ..Self::default()
        }
    }

    /// The answer this request carries for a task of `kind`.
    pub fn answer(&self, kind: TaskKind) -> Result<Answer> {
        let bad = |m: &str| Err(AnnotateError::InvalidVerdict(m.to_string()));
        if self.annotator_id.trim().is_empty() {
            return bad("annotator_id is empty");
        }
        let quality_fields = self.adequacy.is_some() || self.fluency.is_some() || self.image_need.is_some();
        match kind {
            TaskKind::Naturalness => {
                if quality_fields {
                    return bad("quality fields on a naturalness task");
                }
                match self.rating {
                    None => bad("rating is required"),
                    Some(r) if (1..=5).contains(&r) => Ok(Answer::Naturalness { rating: r as u8 }),
                    Some(r) => Err(AnnotateError::InvalidVerdict(format!("rating {r} is outside 1..5"))),
                }
            }
            TaskKind::Quality => {
                if self.rating.is_some() {
                    return bad("rating on a quality task");
                }
                match (self.adequacy, self.fluency, self.image_need) {
                    (Some(adequacy), Some(fluency), Some(image_need)) => Ok(Answer::Quality {
                        adequacy,
                        fluency,
                        image_need,
                    }),
                    _ => bad("adequacy, fluency and image_need are all required"),
                }
            }
        }
    }
}

/// Percentages per rating for one attribute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeBreakdown<K: Ord> {
    pub total: usize,
    pub counts: std::collections::BTreeMap<K, usize>,
    pub percent: std::collections::BTreeMap<K, f64>,
}

impl<K: Ord + Copy> AttributeBreakdown<K> {
    pub fn from_values(all: &[K], values: impl IntoIterator<Item = K>) -> Self {
        let mut counts: std::collections::BTreeMap<K, usize> = all.iter().map(|k| (*k, 0)).collect();
        let mut total = 0;
        for v in values {
            *counts.entry(v).or_default() += 1;
            total += 1;
        }
        let percent = counts
            .iter()
            .map(|(k, c)| (*k, if total == 0 { 0.0 } else { *c as f64 * 100.0 / total as f64 }))
            .collect();
        Self { total, counts, percent }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub subset: Option<Subset>,
    pub language: Option<String>,
    /// Filtered by subset and language.
    pub adequacy: AttributeBreakdown<Scale>,
    pub fluency: AttributeBreakdown<Scale>,
    /// Filtered by subset only, pooled across languages.
    pub image_need: AttributeBreakdown<ImageNeed>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NaturalnessReport {
    pub batch: String,
    pub tasks: usize,
    /// Current rating of every (task, annotator) pair, in task order.
    pub ratings: Vec<u8>,
    pub mean: f64,
}
