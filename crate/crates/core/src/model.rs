//! Domain types shared by every stage of the toolkit, plus structural
//! validation for clip and QA records.
//!
//! Types are plain serde records. Deserialization never rejects a record on
//! semantic grounds (an inverted interval still loads); [`validate_clip`] and
//! [`validate_qa_record`] report every violated invariant instead.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Axis-aligned box in normalized image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    /// Checked constructor: coordinates must lie in `[0, 1]` and be ordered.
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self, Violation> {
        let b = Self { x_min, y_min, x_max, y_max };
        match b.violations().into_iter().next() {
            Some(v) => Err(v),
            None => Ok(b),
        }
    }

    /// Converts a pixel-space box to normalized coordinates.
    pub fn from_pixels(
        x_min: f64,
        y_min: f64,
        x_max: f64,
        y_max: f64,
        image_w: u32,
        image_h: u32,
    ) -> Result<Self, Violation> {
        if image_w == 0 || image_h == 0 {
            return Err(Violation::ImageSizeNotPositive);
        }
        let (w, h) = (f64::from(image_w), f64::from(image_h));
        Self::new(x_min / w, y_min / h, x_max / w, y_max / h)
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x_min + self.x_max) / 2.0, (self.y_min + self.y_max) / 2.0)
    }

    /// Closed-set membership.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }

    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let coords = [self.x_min, self.y_min, self.x_max, self.y_max];
        if coords.iter().any(|c| !c.is_finite() || !(0.0..=1.0).contains(c)) {
            out.push(Violation::BoxOutOfRange);
        }
        if self.x_min > self.x_max || self.y_min > self.y_max {
            out.push(Violation::BoxInverted);
        }
        out
    }
}

/// Closed time interval in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeInterval {
    pub start_s: f64,
    pub end_s: f64,
}

impl TimeInterval {
    pub fn new(start_s: f64, end_s: f64) -> Result<Self, Violation> {
        let iv = Self { start_s, end_s };
        match iv.violations().into_iter().next() {
            Some(v) => Err(v),
            None => Ok(iv),
        }
    }

    pub fn duration(&self) -> f64 {
        self.end_s - self.start_s
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.start_s && t <= self.end_s
    }

    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if !self.start_s.is_finite() || !self.end_s.is_finite() || self.start_s < 0.0 || self.end_s < 0.0 {
            out.push(Violation::NegativeTime);
        }
        if self.start_s > self.end_s {
            out.push(Violation::IntervalInverted);
        }
        out
    }
}

/// Detector output for a single sampled frame. Boxes are normalized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameDetections {
    pub frame_index: u64,
    pub timestamp_s: f64,
    pub hand_boxes: Vec<BBox>,
    pub object_boxes: Vec<BBox>,
    pub image_w: u32,
    pub image_h: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipRecord {
    pub clip_id: String,
    pub video_id: String,
    pub interval: TimeInterval,
    pub frames: Vec<FrameDetections>,
    pub ego_score: Option<f64>,
    pub caption: Option<String>,
    pub narration: Option<String>,
}

impl ClipRecord {
    pub fn duration(&self) -> f64 {
        self.interval.duration()
    }
}

/// A long-term segment: consecutive clips of one video merged into one span.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRecord {
    pub segment_id: String,
    pub video_id: String,
    pub clip_ids: Vec<String>,
    pub interval: TimeInterval,
    pub caption: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Short,
    Long,
    Cot,
    FgSpatial,
    FgTemporal,
}

impl Split {
    pub const ALL: [Split; 5] = [Split::Short, Split::Long, Split::Cot, Split::FgSpatial, Split::FgTemporal];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Short => "short",
            Split::Long => "long",
            Split::Cot => "cot",
            Split::FgSpatial => "fg_spatial",
            Split::FgTemporal => "fg_temporal",
        }
    }

    pub fn question_types(self) -> impl Iterator<Item = QuestionType> {
        QuestionType::ALL.into_iter().filter(move |q| q.split() == self)
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The sixteen question types of the QA corpus. Types whose display names
/// repeat across splits (object count, action reasoning, temporal grounding)
/// get split-qualified variants so that each type belongs to exactly one split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionType {
    ObjectExistence,
    ObjectAttribute,
    ObjectCount,
    ObjectInteraction,
    ActionDescription,
    ActionReasoning,
    BackgroundAttribute,
    ActionSequence,
    TemporalGrounding,
    LongObjectCount,
    ActionPrediction,
    ActionSummary,
    LongActionReasoning,
    ChainOfThoughtReasoning,
    FineGrainedTemporalGrounding,
    HandObjectGrounding,
}

impl QuestionType {
    pub const ALL: [QuestionType; 16] = [
        QuestionType::ObjectExistence,
        QuestionType::ObjectAttribute,
        QuestionType::ObjectCount,
        QuestionType::ObjectInteraction,
        QuestionType::ActionDescription,
        QuestionType::ActionReasoning,
        QuestionType::BackgroundAttribute,
        QuestionType::ActionSequence,
        QuestionType::TemporalGrounding,
        QuestionType::LongObjectCount,
        QuestionType::ActionPrediction,
        QuestionType::ActionSummary,
        QuestionType::LongActionReasoning,
        QuestionType::ChainOfThoughtReasoning,
        QuestionType::FineGrainedTemporalGrounding,
        QuestionType::HandObjectGrounding,
    ];

    pub fn split(self) -> Split {
        use QuestionType::*;
        match self {
            ObjectExistence | ObjectAttribute | ObjectCount | ObjectInteraction | ActionDescription
            | ActionReasoning | BackgroundAttribute => Split::Short,
            ActionSequence | TemporalGrounding | LongObjectCount | ActionPrediction | ActionSummary
            | LongActionReasoning => Split::Long,
            ChainOfThoughtReasoning => Split::Cot,
            FineGrainedTemporalGrounding => Split::FgTemporal,
            HandObjectGrounding => Split::FgSpatial,
        }
    }

    /// Snake-case identifier, identical to the serialized form.
    pub fn as_str(self) -> &'static str {
        use QuestionType::*;
        match self {
            ObjectExistence => "object_existence",
            ObjectAttribute => "object_attribute",
            ObjectCount => "object_count",
            ObjectInteraction => "object_interaction",
            ActionDescription => "action_description",
            ActionReasoning => "action_reasoning",
            BackgroundAttribute => "background_attribute",
            ActionSequence => "action_sequence",
            TemporalGrounding => "temporal_grounding",
            LongObjectCount => "long_object_count",
            ActionPrediction => "action_prediction",
            ActionSummary => "action_summary",
            LongActionReasoning => "long_action_reasoning",
            ChainOfThoughtReasoning => "chain_of_thought_reasoning",
            FineGrainedTemporalGrounding => "fine_grained_temporal_grounding",
            HandObjectGrounding => "hand_object_grounding",
        }
    }

    /// Human-readable name as used in prompts.
    pub fn display_name(self) -> &'static str {
        use QuestionType::*;
        match self {
            ObjectExistence => "object existence",
            ObjectAttribute => "object attribute",
            ObjectCount | LongObjectCount => "object count",
            ObjectInteraction => "object interaction",
            ActionDescription => "action description",
            ActionReasoning | LongActionReasoning => "action reasoning",
            BackgroundAttribute => "background attribute",
            ActionSequence => "action sequence",
            TemporalGrounding | FineGrainedTemporalGrounding => "temporal grounding",
            ActionPrediction => "action prediction",
            ActionSummary => "action summary",
            ChainOfThoughtReasoning => "chain-of-thought reasoning",
            HandObjectGrounding => "hand-object grounding",
        }
    }
}

impl fmt::Display for QuestionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QARecord {
    pub qa_id: String,
    pub clip_ids: Vec<String>,
    pub split: Split,
    pub question_type: QuestionType,
    pub question: String,
    pub answer: String,
    pub rationale: Option<String>,
    pub gt_box: Option<BBox>,
    pub gt_interval: Option<TimeInterval>,
}

/// One line of a predictions file: a model response for one QA item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub qa_id: String,
    pub response_text: String,
}

/// A single broken invariant.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Violation {
    IntervalInverted,
    NegativeTime,
    FrameOutsideInterval { frame_index: u64 },
    TimestampsNotIncreasing { frame_index: u64 },
    ImageSizeNotPositive,
    BoxOutOfRange,
    BoxInverted,
    EgoScoreOutOfRange,
    EmptyId(&'static str),
    MissingGroundTruth(&'static str),
    QuestionTypeSplitMismatch { question_type: QuestionType, split: Split },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::IntervalInverted => f.write_str("interval inverted"),
            Violation::NegativeTime => f.write_str("negative or non-finite time"),
            Violation::FrameOutsideInterval { frame_index } => {
                write!(f, "frame outside interval (frame {frame_index})")
            }
            Violation::TimestampsNotIncreasing { frame_index } => {
                write!(f, "timestamps not strictly increasing (frame {frame_index})")
            }
            Violation::ImageSizeNotPositive => f.write_str("image size not positive"),
            Violation::BoxOutOfRange => f.write_str("box coordinate outside [0,1]"),
            Violation::BoxInverted => f.write_str("box inverted"),
            Violation::EgoScoreOutOfRange => f.write_str("ego score outside [0,1]"),
            Violation::EmptyId(field) => write!(f, "empty {field}"),
            Violation::MissingGroundTruth(field) => write!(f, "missing {field}"),
            Violation::QuestionTypeSplitMismatch { question_type, split } => {
                write!(f, "question type {question_type} not valid for split {split}")
            }
        }
    }
}

impl std::error::Error for Violation {}

/// Every invariant a record violates; empty iff the record is well-formed.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    /// Human-readable entries, one per violation.
    pub fn messages(&self) -> Vec<String> {
        self.violations.iter().map(ToString::to_string).collect()
    }

    pub fn contains(&self, needle: &str) -> bool {
        self.violations.iter().any(|v| v.to_string().contains(needle))
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.messages().join("; "))
    }
}

pub fn validate_clip(record: &ClipRecord) -> ValidationReport {
    let mut violations = Vec::new();
    if record.clip_id.is_empty() {
        violations.push(Violation::EmptyId("clip_id"));
    }
    violations.extend(record.interval.violations());
    if let Some(score) = record.ego_score {
        if !(0.0..=1.0).contains(&score) {
            violations.push(Violation::EgoScoreOutOfRange);
        }
    }

    let mut prev_ts: Option<f64> = None;
    for frame in &record.frames {
        if let Some(prev) = prev_ts {
            if frame.timestamp_s.partial_cmp(&prev) != Some(std::cmp::Ordering::Greater) {
                violations.push(Violation::TimestampsNotIncreasing { frame_index: frame.frame_index });
            }
        }
        prev_ts = Some(frame.timestamp_s);
        if !record.interval.contains(frame.timestamp_s) {
            violations.push(Violation::FrameOutsideInterval { frame_index: frame.frame_index });
        }
        if frame.image_w == 0 || frame.image_h == 0 {
            violations.push(Violation::ImageSizeNotPositive);
        }
        for b in frame.hand_boxes.iter().chain(&frame.object_boxes) {
            violations.extend(b.violations());
        }
    }
    violations.dedup();
    ValidationReport { violations }
}

pub fn validate_qa_record(record: &QARecord) -> ValidationReport {
    let mut violations = Vec::new();
    if record.qa_id.is_empty() {
        violations.push(Violation::EmptyId("qa_id"));
    }
    if record.question_type.split() != record.split {
        violations
            .push(Violation::QuestionTypeSplitMismatch { question_type: record.question_type, split: record.split });
    }
    match (record.split, &record.gt_box, &record.gt_interval) {
        (Split::FgSpatial, None, _) => violations.push(Violation::MissingGroundTruth("gt_box")),
        (Split::FgTemporal, _, None) => violations.push(Violation::MissingGroundTruth("gt_interval")),
        _ => {}
    }
    if let Some(b) = &record.gt_box {
        violations.extend(b.violations());
    }
    if let Some(iv) = &record.gt_interval {
        violations.extend(iv.violations());
    }
    ValidationReport { violations }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(idx: u64, t: f64) -> FrameDetections {
        FrameDetections {
            frame_index: idx,
            timestamp_s: t,
            hand_boxes: vec![BBox::new(0.1, 0.1, 0.2, 0.2).unwrap()],
            object_boxes: vec![],
            image_w: 640,
            image_h: 480,
        }
    }

    fn clip() -> ClipRecord {
        ClipRecord {
            clip_id: "c0".into(),
            video_id: "v0".into(),
            interval: TimeInterval::new(10.0, 14.0).unwrap(),
            frames: vec![frame(0, 10.0), frame(1, 11.0), frame(2, 12.0)],
            ego_score: Some(0.8),
            caption: Some("a person slices garlic".into()),
            narration: None,
        }
    }

    #[test]
    fn well_formed_clip_has_empty_report() {
        assert!(validate_clip(&clip()).is_empty());
    }

    #[test]
    fn inverted_interval_is_reported() {
        let mut c = clip();
        c.interval = TimeInterval { start_s: 14.0, end_s: 10.0 };
        c.frames.clear();
        let report = validate_clip(&c);
        assert!(report.contains("interval inverted"), "{report}");
    }

    #[test]
    fn frame_past_end_is_reported() {
        let mut c = clip();
        c.frames.push(frame(3, 14.5));
        let report = validate_clip(&c);
        assert_eq!(report.violations, vec![Violation::FrameOutsideInterval { frame_index: 3 }]);
        assert!(report.contains("frame outside interval"));
    }

    #[test]
    fn non_increasing_timestamps_and_bad_boxes() {
        let mut c = clip();
        c.frames[2].timestamp_s = 11.0;
        c.frames[0].object_boxes.push(BBox { x_min: 0.5, y_min: 0.2, x_max: 0.4, y_max: 1.2 });
        let report = validate_clip(&c);
        assert!(report.contains("not strictly increasing"));
        assert!(report.contains("outside [0,1]"));
        assert!(report.contains("box inverted"));
    }

    #[test]
    fn validation_is_pure() {
        let mut c = clip();
        c.interval.end_s = 1.0;
        assert_eq!(validate_clip(&c), validate_clip(&c));
    }

    #[test]
    fn pixel_boxes_are_normalized() {
        let b = BBox::from_pixels(64.0, 48.0, 320.0, 480.0, 640, 480).unwrap();
        assert_eq!(b, BBox { x_min: 0.1, y_min: 0.1, x_max: 0.5, y_max: 1.0 });
        assert_eq!(BBox::from_pixels(0.0, 0.0, 1.0, 1.0, 0, 10), Err(Violation::ImageSizeNotPositive));
        assert!(BBox::from_pixels(0.0, 0.0, 700.0, 10.0, 640, 480).is_err());
    }

    #[test]
    fn sixteen_question_types_partition_the_splits() {
        let counts: Vec<usize> = Split::ALL.iter().map(|s| s.question_types().count()).collect();
        assert_eq!(counts, vec![7, 6, 1, 1, 1]);
        assert_eq!(counts.iter().sum::<usize>(), 16);
    }

    #[test]
    fn qa_record_ground_truth_and_split_checks() {
        let rec = QARecord {
            qa_id: "q".into(),
            clip_ids: vec!["c".into()],
            split: Split::FgSpatial,
            question_type: QuestionType::FineGrainedTemporalGrounding,
            question: "?".into(),
            answer: "a".into(),
            rationale: None,
            gt_box: None,
            gt_interval: None,
        };
        let report = validate_qa_record(&rec);
        assert!(report.contains("missing gt_box"));
        assert!(report.contains("not valid for split fg_spatial"));
    }
}
