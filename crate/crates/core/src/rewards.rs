//! Rule-based verifiable rewards for the grounding tasks.
//!
//! A candidate's reward is the sum of a binary format reward (did the
//! response follow the think/answer structure?) and the IoU between the
//! answered box or interval and the ground truth.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{BBox, QARecord, Split, TimeInterval};
use crate::structured_output::{parse_response, ParseOutcome, PayloadKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroundingTask {
    /// Hand-object (spatial) grounding.
    Og,
    /// Temporal grounding.
    Tg,
}

impl GroundingTask {
    pub fn split(self) -> Split {
        match self {
            GroundingTask::Og => Split::FgSpatial,
            GroundingTask::Tg => Split::FgTemporal,
        }
    }

    pub fn payload_kind(self) -> PayloadKind {
        match self {
            GroundingTask::Og => PayloadKind::Box,
            GroundingTask::Tg => PayloadKind::Interval,
        }
    }

    pub fn for_split(split: Split) -> Option<Self> {
        match split {
            Split::FgSpatial => Some(GroundingTask::Og),
            Split::FgTemporal => Some(GroundingTask::Tg),
            _ => None,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RewardError {
    #[error("qa record {0} is not a grounding record")]
    NotGrounding(String),
    #[error("qa record {qa_id} lacks {field}")]
    MissingGroundTruth { qa_id: String, field: &'static str },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_format: f64,
    pub r_iou: f64,
    pub total: f64,
    pub task: GroundingTask,
    /// Set when the candidate could not be scored and was given zero reward.
    pub note: Option<String>,
}

impl RewardBreakdown {
    fn new(task: GroundingTask, r_format: f64, r_iou: f64) -> Self {
        Self { r_format, r_iou, total: r_format + r_iou, task, note: None }
    }

    fn zero(task: GroundingTask, note: String) -> Self {
        Self { note: Some(note), ..Self::new(task, 0.0, 0.0) }
    }
}

/// 1 when the think/answer structure matched, whatever the payload.
pub fn format_reward(outcome: &ParseOutcome) -> f64 {
    if outcome.format_matched() {
        1.0
    } else {
        0.0
    }
}

pub fn box_iou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let ih = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

pub fn interval_iou(a: &TimeInterval, b: &TimeInterval) -> f64 {
    let inter = (a.end_s.min(b.end_s) - a.start_s.max(b.start_s)).max(0.0);
    let union = a.duration().max(0.0) + b.duration().max(0.0) - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// Scores one response against a grounding QA record.
pub fn score_candidate(response_text: &str, gt: &QARecord) -> Result<RewardBreakdown, RewardError> {
    let task = GroundingTask::for_split(gt.split).ok_or_else(|| RewardError::NotGrounding(gt.qa_id.clone()))?;
    let missing = |field| RewardError::MissingGroundTruth { qa_id: gt.qa_id.clone(), field };
    let outcome = parse_response(response_text, task.payload_kind());
    let r_format = format_reward(&outcome);
    let r_iou = match task {
        GroundingTask::Og => {
            let target = gt.gt_box.ok_or_else(|| missing("gt_box"))?;
            outcome.bbox().map_or(0.0, |b| box_iou(&b, &target))
        }
        GroundingTask::Tg => {
            let target = gt.gt_interval.ok_or_else(|| missing("gt_interval"))?;
            outcome.interval().map_or(0.0, |iv| interval_iou(&iv, &target))
        }
    };
    Ok(RewardBreakdown::new(task, r_format, r_iou))
}

/// Scores a group of candidates for one prompt, keeping order. A candidate
/// that cannot be scored gets zero reward and a note.
pub fn score_group<S: AsRef<str> + Sync>(responses: &[S], gt: &QARecord) -> Vec<RewardBreakdown> {
    let task = GroundingTask::for_split(gt.split).unwrap_or(GroundingTask::Og);
    responses
        .par_iter()
        .map(|r| score_candidate(r.as_ref(), gt).unwrap_or_else(|e| RewardBreakdown::zero(task, e.to_string())))
        .collect()
}

/// One line of a rewards file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardLine {
    pub qa_id: String,
    #[serde(flatten)]
    pub breakdown: RewardBreakdown,
}
