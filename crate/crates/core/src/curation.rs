//! Clip curation: the ego-score gate, the minimum-duration gate, the three
//! hand-object interaction rules, and greedy long-term segment aggregation.
//!
//! Rules are evaluated in a fixed order and the first failing rule is the one
//! recorded on the [`FilterDecision`]:
//!
//! 1. `ego_score`: the upstream ego/exo classifier score must reach
//!    `ego_threshold` (inclusive).
//! 2. `duration`: clip length must be at least `min_duration_s`.
//! 3. `hand_count`: no frame may carry more than `max_hands` hand boxes.
//! 4. `object_coverage`: the clip's total object-box count must reach
//!    `alpha * N` for `N` frames.
//! 5. `displacement`: the largest distance between per-frame hand centers,
//!    in pixels, must strictly exceed `disp_fraction * min(H, W)`.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{validate_clip, ClipRecord, SegmentRecord, TimeInterval};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CurationError {
    #[error("ego score absent")]
    EgoScoreAbsent,
    #[error("empty clip")]
    EmptyClip,
    #[error("invalid filter config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub ego_threshold: f64,
    pub max_hands: usize,
    pub alpha: f64,
    pub disp_fraction: f64,
    pub min_duration_s: f64,
    pub frame_stride: usize,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self { ego_threshold: 0.5, max_hands: 2, alpha: 0.7, disp_fraction: 0.1, min_duration_s: 2.0, frame_stride: 1 }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<(), CurationError> {
        let bad = |msg: &str| Err(CurationError::InvalidConfig(msg.to_owned()));
        if !(0.0..=1.0).contains(&self.ego_threshold) {
            return bad("ego_threshold must lie in [0,1]");
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return bad("alpha must lie in (0,1]");
        }
        if !(self.disp_fraction > 0.0 && self.disp_fraction <= 1.0) {
            return bad("disp_fraction must lie in (0,1]");
        }
        if !(self.min_duration_s > 0.0 && self.min_duration_s.is_finite()) {
            return bad("min_duration_s must be positive");
        }
        if self.frame_stride == 0 {
            return bad("frame_stride must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailedRule {
    None,
    /// The record broke a structural invariant and no rule could be applied.
    Invalid,
    EgoScore,
    Duration,
    HandCount,
    ObjectCoverage,
    Displacement,
}

/// A metric recorded while evaluating a rule, or an error note.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MetricValue {
    Number(f64),
    Note(String),
}

impl MetricValue {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            MetricValue::Number(v) => Some(*v),
            MetricValue::Note(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterDecision {
    pub clip_id: String,
    pub kept: bool,
    pub failed_rule: FailedRule,
    pub metrics: BTreeMap<String, MetricValue>,
}

pub fn ego_gate(clip: &ClipRecord, cfg: &FilterConfig) -> Result<bool, CurationError> {
    let score = clip.ego_score.ok_or(CurationError::EgoScoreAbsent)?;
    Ok(score >= cfg.ego_threshold)
}

pub fn duration_rule(clip: &ClipRecord, cfg: &FilterConfig) -> bool {
    clip.duration() >= cfg.min_duration_s
}

/// Largest hand-box count found in any single frame.
pub fn max_hands_per_frame(clip: &ClipRecord) -> usize {
    clip.frames.iter().map(|f| f.hand_boxes.len()).max().unwrap_or(0)
}

pub fn hand_count_rule(clip: &ClipRecord, cfg: &FilterConfig) -> bool {
    max_hands_per_frame(clip) <= cfg.max_hands
}

pub fn total_object_boxes(clip: &ClipRecord) -> usize {
    clip.frames.iter().map(|f| f.object_boxes.len()).sum()
}

pub fn object_coverage_rule(clip: &ClipRecord, cfg: &FilterConfig) -> Result<bool, CurationError> {
    if clip.frames.is_empty() {
        return Err(CurationError::EmptyClip);
    }
    let required = cfg.alpha * clip.frames.len() as f64;
    Ok(total_object_boxes(clip) as f64 >= required)
}

/// Per-frame hand centers in pixels, taken over every `stride`-th frame and
/// skipping frames without hands. A frame with several hands contributes the
/// centroid of its hand-box centers.
pub fn hand_centers_px(clip: &ClipRecord, stride: usize) -> Vec<(f64, f64)> {
    clip.frames
        .iter()
        .step_by(stride.max(1))
        .filter(|f| !f.hand_boxes.is_empty())
        .map(|f| {
            let n = f.hand_boxes.len() as f64;
            let (sx, sy) =
                f.hand_boxes.iter().map(|b| b.center()).fold((0.0, 0.0), |(ax, ay), (x, y)| (ax + x, ay + y));
            (sx / n * f64::from(f.image_w), sy / n * f64::from(f.image_h))
        })
        .collect()
}

/// Maximum pairwise distance between per-frame hand centers, in pixels.
/// `None` when no sampled frame has a hand.
pub fn max_hand_displacement_px(clip: &ClipRecord, stride: usize) -> Option<f64> {
    let centers = hand_centers_px(clip, stride);
    if centers.is_empty() {
        return None;
    }
    let mut best = 0.0f64;
    for (i, &(x1, y1)) in centers.iter().enumerate() {
        for &(x2, y2) in &centers[i + 1..] {
            best = best.max((x1 - x2).hypot(y1 - y2));
        }
    }
    Some(best)
}

/// `disp_fraction * min(H, W)` for the clip's frame resolution.
pub fn displacement_threshold_px(clip: &ClipRecord, cfg: &FilterConfig) -> f64 {
    let side = clip.frames.iter().map(|f| f.image_w.min(f.image_h)).min().unwrap_or(0);
    cfg.disp_fraction * f64::from(side)
}

pub fn displacement_rule(clip: &ClipRecord, cfg: &FilterConfig) -> bool {
    match max_hand_displacement_px(clip, cfg.frame_stride) {
        Some(d) => d > displacement_threshold_px(clip, cfg),
        None => false,
    }
}

/// Applies every rule to one clip and records the first failure.
pub fn decide(clip: &ClipRecord, cfg: &FilterConfig) -> FilterDecision {
    let mut metrics = BTreeMap::new();
    let failed = evaluate(clip, cfg, &mut metrics);
    FilterDecision { clip_id: clip.clip_id.clone(), kept: failed == FailedRule::None, failed_rule: failed, metrics }
}

fn evaluate(clip: &ClipRecord, cfg: &FilterConfig, metrics: &mut BTreeMap<String, MetricValue>) -> FailedRule {
    let num = |v: f64| MetricValue::Number(v);
    let note = |s: String| MetricValue::Note(s);

    let report = validate_clip(clip);
    if !report.is_empty() {
        metrics.insert("error".into(), note(report.to_string()));
        return FailedRule::Invalid;
    }

    match clip.ego_score {
        Some(score) => {
            metrics.insert("ego_score".into(), num(score));
        }
        None => {
            metrics.insert("error".into(), note(CurationError::EgoScoreAbsent.to_string()));
            return FailedRule::EgoScore;
        }
    }
    if !matches!(ego_gate(clip, cfg), Ok(true)) {
        return FailedRule::EgoScore;
    }

    metrics.insert("duration_s".into(), num(clip.duration()));
    if !duration_rule(clip, cfg) {
        return FailedRule::Duration;
    }

    metrics.insert("max_hands".into(), num(max_hands_per_frame(clip) as f64));
    if !hand_count_rule(clip, cfg) {
        return FailedRule::HandCount;
    }

    metrics.insert("object_boxes".into(), num(total_object_boxes(clip) as f64));
    match object_coverage_rule(clip, cfg) {
        Ok(true) => {}
        Ok(false) => return FailedRule::ObjectCoverage,
        Err(e) => {
            metrics.insert("error".into(), note(e.to_string()));
            return FailedRule::ObjectCoverage;
        }
    }

    let disp = max_hand_displacement_px(clip, cfg.frame_stride);
    metrics.insert("displacement_px".into(), num(disp.unwrap_or(0.0)));
    metrics.insert("displacement_threshold_px".into(), num(displacement_threshold_px(clip, cfg)));
    if !displacement_rule(clip, cfg) {
        if disp.is_none() {
            metrics.insert("error".into(), note("no hand detected in any frame".into()));
        }
        return FailedRule::Displacement;
    }
    FailedRule::None
}

/// Filters a batch of clips. Clips are evaluated in parallel; decisions come
/// back in input order.
pub fn run_pipeline(clips: &[ClipRecord], cfg: &FilterConfig) -> Result<Vec<FilterDecision>, CurationError> {
    cfg.validate()?;
    Ok(clips.par_iter().map(|c| decide(c, cfg)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentConfig {
    pub min_len_s: f64,
    pub max_len_s: f64,
    /// Largest tolerated silence between consecutive clips of one segment.
    pub max_gap_s: f64,
    pub delimiter: String,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        Self { min_len_s: 15.0, max_len_s: 120.0, max_gap_s: 1.0, delimiter: " ".into() }
    }
}

/// Greedy left-to-right aggregation of consecutive clips into long-term
/// segments.
///
/// Clips are grouped by `video_id` (groups keep first-appearance order) and
/// sorted by start time within a group. A segment is closed when the next
/// clip would push it past `max_len_s` or starts more than `max_gap_s` after
/// the segment's end. Closed segments shorter than `min_len_s` (or longer than
/// `max_len_s`, which only happens for a single over-long clip) are dropped.
pub fn segment_long_term(clips: &[ClipRecord], cfg: &SegmentConfig) -> Vec<SegmentRecord> {
    let mut order: Vec<&str> = Vec::new();
    let mut groups: BTreeMap<&str, Vec<&ClipRecord>> = BTreeMap::new();
    for c in clips {
        let entry = groups.entry(c.video_id.as_str()).or_default();
        if entry.is_empty() {
            order.push(c.video_id.as_str());
        }
        entry.push(c);
    }

    let mut out = Vec::new();
    for video in order {
        let mut group = groups.remove(video).unwrap_or_default();
        group.sort_by(|a, b| a.interval.start_s.total_cmp(&b.interval.start_s));
        let mut builder = SegmentBuilder::new(video, cfg);
        for clip in group {
            builder.push(clip, &mut out);
        }
        builder.flush(&mut out);
    }
    out
}

struct SegmentBuilder<'a> {
    video_id: &'a str,
    cfg: &'a SegmentConfig,
    members: Vec<&'a ClipRecord>,
    start: f64,
    end: f64,
    emitted: usize,
}

impl<'a> SegmentBuilder<'a> {
    fn new(video_id: &'a str, cfg: &'a SegmentConfig) -> Self {
        Self { video_id, cfg, members: Vec::new(), start: 0.0, end: 0.0, emitted: 0 }
    }

    fn push(&mut self, clip: &'a ClipRecord, out: &mut Vec<SegmentRecord>) {
        if !self.members.is_empty() {
            let gap = clip.interval.start_s - self.end;
            let new_end = self.end.max(clip.interval.end_s);
            if gap > self.cfg.max_gap_s || new_end - self.start > self.cfg.max_len_s {
                self.flush(out);
            }
        }
        if self.members.is_empty() {
            self.start = clip.interval.start_s;
            self.end = clip.interval.end_s;
        } else {
            self.end = self.end.max(clip.interval.end_s);
        }
        self.members.push(clip);
    }

    fn flush(&mut self, out: &mut Vec<SegmentRecord>) {
        if self.members.is_empty() {
            return;
        }
        let members = std::mem::take(&mut self.members);
        let duration = self.end - self.start;
        if duration < self.cfg.min_len_s || duration > self.cfg.max_len_s {
            return;
        }
        let caption = members
            .iter()
            .filter_map(|c| c.caption.as_deref().or(c.narration.as_deref()))
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .collect::<Vec<_>>()
            .join(&self.cfg.delimiter);
        out.push(SegmentRecord {
            segment_id: format!("{}_seg{:03}", self.video_id, self.emitted),
            video_id: self.video_id.to_owned(),
            clip_ids: members.iter().map(|c| c.clip_id.clone()).collect(),
            interval: TimeInterval { start_s: self.start, end_s: self.end },
            caption,
        });
        self.emitted += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BBox, FrameDetections};

    fn bx(x0: f64, y0: f64, x1: f64, y1: f64) -> BBox {
        BBox::new(x0, y0, x1, y1).unwrap()
    }

    fn frame(i: u64, hands: Vec<BBox>, objects: usize) -> FrameDetections {
        FrameDetections {
            frame_index: i,
            timestamp_s: i as f64 * 0.5,
            hand_boxes: hands,
            object_boxes: vec![bx(0.4, 0.4, 0.6, 0.6); objects],
            image_w: 1000,
            image_h: 500,
        }
    }

    fn clip(frames: Vec<FrameDetections>) -> ClipRecord {
        ClipRecord {
            clip_id: "c".into(),
            video_id: "v".into(),
            interval: TimeInterval { start_s: 0.0, end_s: 10.0 },
            frames,
            ego_score: Some(0.9),
            caption: None,
            narration: None,
        }
    }

    fn hand_at(cx: f64, cy: f64) -> BBox {
        bx(cx - 0.01, cy - 0.01, cx + 0.01, cy + 0.01)
    }

    #[test]
    fn ego_gate_threshold_is_inclusive() {
        let cfg = FilterConfig::default();
        let mut c = clip(vec![]);
        assert_eq!(ego_gate(&c, &cfg), Ok(true));
        c.ego_score = Some(0.5);
        assert_eq!(ego_gate(&c, &cfg), Ok(true));
        c.ego_score = Some(0.4999);
        assert_eq!(ego_gate(&c, &cfg), Ok(false));
        c.ego_score = None;
        let err = ego_gate(&c, &cfg).unwrap_err();
        assert_eq!(err.to_string(), "ego score absent");
    }

    #[test]
    fn hand_count_rule_cases() {
        let cfg = FilterConfig::default();
        let h = hand_at(0.5, 0.5);
        assert!(!hand_count_rule(&clip(vec![frame(0, vec![h; 2], 0), frame(1, vec![h; 3], 0)]), &cfg));
        assert!(hand_count_rule(&clip(vec![frame(0, vec![h; 2], 0), frame(1, vec![h], 0)]), &cfg));
        assert!(hand_count_rule(&clip(vec![]), &cfg));
    }

    #[test]
    fn object_coverage_boundary() {
        let cfg = FilterConfig::default();
        let with_total =
            |total: usize| clip((0..10).map(|i| frame(i, vec![], usize::from((i as usize) < total))).collect());
        // 6 < 0.7 * 10
        assert_eq!(object_coverage_rule(&with_total(6), &cfg), Ok(false));
        // 7 >= 0.7 * 10
        assert_eq!(object_coverage_rule(&with_total(7), &cfg), Ok(true));
        assert_eq!(object_coverage_rule(&with_total(10), &FilterConfig { alpha: 1.0, ..cfg.clone() }), Ok(true));
        assert_eq!(object_coverage_rule(&clip(vec![]), &cfg), Err(CurationError::EmptyClip));
    }

    #[test]
    fn displacement_rule_cases() {
        let cfg = FilterConfig::default();
        // min(H, W) = 500 px; a 0.2 * 500 = 100 px move along x is 0.1 of the
        // 1000 px width.
        let moving = clip(vec![frame(0, vec![hand_at(0.2, 0.5)], 1), frame(1, vec![hand_at(0.3, 0.5)], 1)]);
        let d = max_hand_displacement_px(&moving, 1).unwrap();
        assert!((d - 100.0).abs() < 1e-9);
        assert!(displacement_rule(&moving, &cfg));

        let still = clip(vec![frame(0, vec![hand_at(0.2, 0.5)], 1), frame(1, vec![hand_at(0.2, 0.5)], 1)]);
        assert!(!displacement_rule(&still, &cfg));

        let single = clip(vec![frame(0, vec![hand_at(0.2, 0.5)], 1), frame(1, vec![], 1)]);
        assert_eq!(max_hand_displacement_px(&single, 1), Some(0.0));
        assert!(!displacement_rule(&single, &cfg));

        // exactly at the threshold is not enough: 0.0625 * 1000 == 0.125 * 500
        let pt = |x: f64| bx(x, 0.5, x, 0.5);
        let edge = clip(vec![frame(0, vec![pt(0.25)], 1), frame(1, vec![pt(0.3125)], 1)]);
        let cfg_edge = FilterConfig { disp_fraction: 0.125, ..cfg };
        assert_eq!(max_hand_displacement_px(&edge, 1), Some(62.5));
        assert!(!displacement_rule(&edge, &cfg_edge));
    }

    #[test]
    fn two_hands_use_their_centroid() {
        let c =
            clip(vec![frame(0, vec![hand_at(0.1, 0.5), hand_at(0.3, 0.5)], 1), frame(1, vec![hand_at(0.2, 0.5)], 1)]);
        assert!(max_hand_displacement_px(&c, 1).unwrap() < 1e-9);
    }

    #[test]
    fn stride_subsamples_frames() {
        let c = clip(vec![
            frame(0, vec![hand_at(0.2, 0.5)], 1),
            frame(1, vec![hand_at(0.9, 0.5)], 1),
            frame(2, vec![hand_at(0.2, 0.5)], 1),
        ]);
        assert!(max_hand_displacement_px(&c, 1).unwrap() > 600.0);
        assert!(max_hand_displacement_px(&c, 2).unwrap() < 1e-9);
    }

    #[test]
    fn no_hands_fails_displacement_with_zero_metric() {
        let c = clip(vec![frame(0, vec![], 1), frame(1, vec![], 1)]);
        let d = decide(&c, &FilterConfig::default());
        assert_eq!(d.failed_rule, FailedRule::Displacement);
        assert_eq!(d.metrics["displacement_px"], MetricValue::Number(0.0));
    }

    #[test]
    fn first_failure_wins() {
        // too many hands and static
        let h = hand_at(0.5, 0.5);
        let c = clip(vec![frame(0, vec![h; 3], 1), frame(1, vec![h; 3], 1)]);
        let d = decide(&c, &FilterConfig::default());
        assert!(!d.kept);
        assert_eq!(d.failed_rule, FailedRule::HandCount);
    }

    #[test]
    fn short_clip_fails_duration() {
        let mut c = clip(vec![frame(0, vec![hand_at(0.1, 0.5)], 1), frame(1, vec![hand_at(0.9, 0.5)], 1)]);
        c.interval.end_s = 1.5;
        assert_eq!(decide(&c, &FilterConfig::default()).failed_rule, FailedRule::Duration);
        c.interval.end_s = 2.0;
        assert_eq!(decide(&c, &FilterConfig::default()).failed_rule, FailedRule::None);
    }

    #[test]
    fn missing_ego_score_and_invalid_records() {
        let mut c = clip(vec![]);
        c.ego_score = None;
        let d = decide(&c, &FilterConfig::default());
        assert_eq!(d.failed_rule, FailedRule::EgoScore);
        assert_eq!(d.metrics["error"], MetricValue::Note("ego score absent".into()));

        let mut c = clip(vec![]);
        c.interval = TimeInterval { start_s: 5.0, end_s: 1.0 };
        let d = decide(&c, &FilterConfig::default());
        assert_eq!(d.failed_rule, FailedRule::Invalid);

        let d = decide(&clip(vec![]), &FilterConfig::default());
        assert_eq!(d.failed_rule, FailedRule::ObjectCoverage);
        assert_eq!(d.metrics["error"], MetricValue::Note("empty clip".into()));
    }

    #[test]
    fn invalid_config_is_rejected() {
        let cfg = FilterConfig { alpha: 0.0, ..FilterConfig::default() };
        assert!(run_pipeline(&[], &cfg).is_err());
        let cfg = FilterConfig { frame_stride: 0, ..FilterConfig::default() };
        assert!(run_pipeline(&[], &cfg).is_err());
    }

    fn timed(id: &str, video: &str, start: f64, end: f64) -> ClipRecord {
        ClipRecord {
            clip_id: id.into(),
            video_id: video.into(),
            interval: TimeInterval { start_s: start, end_s: end },
            frames: vec![],
            ego_score: None,
            caption: Some(format!("cap {id}")),
            narration: None,
        }
    }

    #[test]
    fn four_back_to_back_clips_make_one_segment() {
        let clips: Vec<_> =
            (0..4).map(|i| timed(&format!("c{i}"), "v", i as f64 * 10.0, (i + 1) as f64 * 10.0)).collect();
        let segs = segment_long_term(&clips, &SegmentConfig::default());
        assert_eq!(segs.len(), 1);
        assert_eq!(segs[0].interval.duration(), 40.0);
        assert_eq!(segs[0].caption, "cap c0 cap c1 cap c2 cap c3");
        assert_eq!(segs[0].clip_ids.len(), 4);
    }

    #[test]
    fn isolated_short_clip_is_dropped() {
        assert!(segment_long_term(&[timed("a", "v", 0.0, 10.0)], &SegmentConfig::default()).is_empty());
    }

    #[test]
    fn thirteen_clips_cut_at_max_length() {
        let clips: Vec<_> =
            (0..13).map(|i| timed(&format!("c{i}"), "v", i as f64 * 10.0, (i + 1) as f64 * 10.0)).collect();
        let segs = segment_long_term(&clips, &SegmentConfig::default());
        assert_eq!(segs.len(), 1);
        assert_eq!(segs[0].interval.duration(), 120.0);
        assert_eq!(segs[0].clip_ids.len(), 12);
    }

    #[test]
    fn gaps_and_videos_break_segments() {
        let clips = vec![
            timed("a", "v1", 0.0, 10.0),
            timed("b", "v1", 10.5, 20.0),
            timed("c", "v1", 30.0, 40.0),
            timed("d", "v2", 40.0, 50.0),
            timed("e", "v2", 50.0, 60.0),
        ];
        let cfg = SegmentConfig { delimiter: " | ".into(), ..SegmentConfig::default() };
        let segs = segment_long_term(&clips, &cfg);
        assert_eq!(segs.len(), 2);
        assert_eq!(segs[0].clip_ids, vec!["a", "b"]);
        assert_eq!(segs[0].caption, "cap a | cap b");
        assert_eq!(segs[1].clip_ids, vec!["d", "e"]);
        assert_eq!(segs[1].segment_id, "v2_seg000");
    }
}
