//! Grounding and multiple-choice evaluation: mIoU, Loc-Acc, R1@tau and
//! option-letter accuracy.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{BBox, Prediction, QARecord, Split, TimeInterval};
use crate::rewards::{box_iou, interval_iou};
use crate::structured_output::{parse_box, parse_interval};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("prediction and ground-truth lists differ in length ({preds} vs {gts})")]
    LengthMismatch { preds: usize, gts: usize },
    #[error("prediction for unknown qa_id {0}")]
    UnknownQaId(String),
    #[error("duplicate prediction for qa_id {0}")]
    DuplicatePrediction(String),
    #[error("ground truth {0} lacks the field needed for this evaluation")]
    MissingGroundTruth(String),
}

/// Whether the predicted box's center lies inside the closed ground-truth box.
pub fn loc_acc(pred: &BBox, gt: &BBox) -> bool {
    let (cx, cy) = pred.center();
    gt.contains(cx, cy)
}

pub fn r1_at(preds: &[TimeInterval], gts: &[TimeInterval], tau: f64) -> Result<f64, MetricsError> {
    if preds.len() != gts.len() {
        return Err(MetricsError::LengthMismatch { preds: preds.len(), gts: gts.len() });
    }
    if preds.is_empty() {
        return Ok(0.0);
    }
    let hits = preds.iter().zip(gts).filter(|(p, g)| interval_iou(p, g) >= tau).count();
    Ok(hits as f64 / preds.len() as f64)
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalKind {
    Spatial,
    Temporal,
    Mc,
}

impl EvalKind {
    fn selects(self, split: Split) -> bool {
        match self {
            EvalKind::Spatial => split == Split::FgSpatial,
            EvalKind::Temporal => split == Split::FgTemporal,
            EvalKind::Mc => !matches!(split, Split::FgSpatial | Split::FgTemporal),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemScore {
    pub qa_id: String,
    /// `None` for multiple-choice items.
    pub iou: Option<f64>,
    /// Loc-Acc hit (spatial), IoU >= first tau (temporal) or option match (mc).
    pub correct: bool,
    pub missing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub kind: EvalKind,
    pub n: usize,
    pub miou: Option<f64>,
    pub loc_acc: Option<f64>,
    /// Keyed by the threshold as written on the command line.
    pub r1_at: BTreeMap<String, f64>,
    pub mc_accuracy: Option<f64>,
    pub per_item: Vec<ItemScore>,
    pub missing: Vec<String>,
}

static ANSWER_BLOCK: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?s)<answer>(.*?)</answer>").unwrap());

/// The answer block's contents if there is one, else the whole response.
/// Evaluation reads payloads leniently; the format check belongs to the
/// reward.
pub fn extract_answer(response: &str) -> &str {
    ANSWER_BLOCK.captures(response).and_then(|c| c.get(1)).map_or(response, |m| m.as_str()).trim()
}

/// Normalized option letter: `"b"`, `" (B) "`, `"B. Cut the onion"` all read as `'B'`.
pub fn option_letter(text: &str) -> Option<char> {
    let t = extract_answer(text).trim_start_matches(['(', '[', ' ']);
    let mut chars = t.chars();
    let first = chars.next()?.to_ascii_uppercase();
    if !first.is_ascii_uppercase() {
        return None;
    }
    match chars.next() {
        None => Some(first),
        Some(c) if !c.is_alphanumeric() => Some(first),
        _ => None,
    }
}

fn mc_correct(pred: &str, gt: &str) -> bool {
    match (option_letter(pred), option_letter(gt)) {
        (Some(a), Some(b)) => a == b,
        _ => extract_answer(pred).eq_ignore_ascii_case(extract_answer(gt)),
    }
}

/// Format a threshold the way it would be typed: `0.05`, `0.5`, `1`.
pub fn tau_key(tau: f64) -> String {
    format!("{tau}")
}

/// Joins predictions to ground truth on `qa_id` and scores every ground-truth
/// item of the requested kind. Items without a prediction score zero and are
/// listed in `missing`.
pub fn evaluate(
    preds: &[Prediction],
    gts: &[QARecord],
    kind: EvalKind,
    taus: &[f64],
) -> Result<EvalReport, MetricsError> {
    let known: HashSet<&str> = gts.iter().map(|g| g.qa_id.as_str()).collect();
    let mut by_id: HashMap<&str, &str> = HashMap::new();
    for p in preds {
        if !known.contains(p.qa_id.as_str()) {
            return Err(MetricsError::UnknownQaId(p.qa_id.clone()));
        }
        if by_id.insert(&p.qa_id, &p.response_text).is_some() {
            return Err(MetricsError::DuplicatePrediction(p.qa_id.clone()));
        }
    }

    let first_tau = taus.first().copied().unwrap_or(0.05);
    let mut per_item = Vec::new();
    let mut missing = Vec::new();
    for gt in gts.iter().filter(|g| kind.selects(g.split)) {
        let response = by_id.get(gt.qa_id.as_str()).copied();
        if response.is_none() {
            missing.push(gt.qa_id.clone());
        }
        let no_gt = || MetricsError::MissingGroundTruth(gt.qa_id.clone());
        let (iou, correct) = match kind {
            EvalKind::Spatial => {
                let target = gt.gt_box.ok_or_else(no_gt)?;
                match response.and_then(|r| parse_box(extract_answer(r))) {
                    Some(b) => (Some(box_iou(&b, &target)), loc_acc(&b, &target)),
                    None => (Some(0.0), false),
                }
            }
            EvalKind::Temporal => {
                let target = gt.gt_interval.ok_or_else(no_gt)?;
                let iou = response
                    .and_then(|r| parse_interval(extract_answer(r)))
                    .map_or(0.0, |iv| interval_iou(&iv, &target));
                (Some(iou), response.is_some() && iou >= first_tau)
            }
            EvalKind::Mc => (None, response.is_some_and(|r| mc_correct(r, &gt.answer))),
        };
        per_item.push(ItemScore { qa_id: gt.qa_id.clone(), iou, correct, missing: response.is_none() });
    }

    let ious: Vec<f64> = per_item.iter().filter_map(|i| i.iou).collect();
    let hits: Vec<f64> = per_item.iter().map(|i| if i.correct { 1.0 } else { 0.0 }).collect();
    let mut report = EvalReport {
        kind,
        n: per_item.len(),
        miou: None,
        loc_acc: None,
        r1_at: BTreeMap::new(),
        mc_accuracy: None,
        per_item: Vec::new(),
        missing,
    };
    match kind {
        EvalKind::Spatial => {
            report.miou = Some(mean(&ious));
            report.loc_acc = Some(mean(&hits));
        }
        EvalKind::Temporal => {
            report.miou = Some(mean(&ious));
            for &tau in taus {
                let rate = per_item.iter().filter(|i| !i.missing && i.iou.unwrap_or(0.0) >= tau).count();
                let r = if per_item.is_empty() { 0.0 } else { rate as f64 / per_item.len() as f64 };
                report.r1_at.insert(tau_key(tau), r);
            }
        }
        EvalKind::Mc => report.mc_accuracy = Some(mean(&hits)),
    }
    report.per_item = per_item;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::QuestionType;
    use proptest::prelude::*;

    fn bx(a: f64, b: f64, c: f64, d: f64) -> BBox {
        BBox { x_min: a, y_min: b, x_max: c, y_max: d }
    }

    fn iv(s: f64, e: f64) -> TimeInterval {
        TimeInterval { start_s: s, end_s: e }
    }

    #[test]
    fn loc_acc_cases() {
        let gt = bx(0.2, 0.2, 0.4, 0.4);
        assert!(loc_acc(&gt, &gt));
        assert!(loc_acc(&bx(0.25, 0.25, 0.35, 0.35), &gt));
        // center (0.4, 0.3) sits on the right edge
        assert!(loc_acc(&bx(0.3, 0.2, 0.5, 0.4), &gt));
        assert!(!loc_acc(&bx(0.5, 0.5, 0.7, 0.7), &gt));
    }

    #[test]
    fn r1_examples() {
        let g = vec![iv(0.0, 10.0), iv(5.0, 7.0)];
        assert_eq!(r1_at(&g, &g, 1.0).unwrap(), 1.0);
        // IoUs 0.06 and 0.04
        let p = vec![iv(0.0, 0.6), iv(5.0, 5.08)];
        assert!((interval_iou(&p[0], &g[0]) - 0.06).abs() < 1e-12);
        assert!((interval_iou(&p[1], &g[1]) - 0.04).abs() < 1e-12);
        assert_eq!(r1_at(&p, &g, 0.05).unwrap(), 0.5);
        assert!(r1_at(&p, &g[..1], 0.05).is_err());
    }

    #[test]
    fn option_letters() {
        assert_eq!(option_letter("b"), Some('B'));
        assert_eq!(option_letter(" (C) "), Some('C'));
        assert_eq!(option_letter("D. cut the onion"), Some('D'));
        assert_eq!(option_letter("<think>x</think><answer>A</answer>"), Some('A'));
        assert_eq!(option_letter("Apple"), None);
        assert!(mc_correct("B", "b"));
        assert!(!mc_correct("A", "B"));
    }

    fn gt(id: &str, split: Split) -> QARecord {
        let (qt, gt_box, gt_interval) = match split {
            Split::FgSpatial => (QuestionType::HandObjectGrounding, Some(bx(0.1, 0.1, 0.5, 0.5)), None),
            Split::FgTemporal => (QuestionType::FineGrainedTemporalGrounding, None, Some(iv(2.0, 6.0))),
            _ => (QuestionType::ObjectCount, None, None),
        };
        QARecord {
            qa_id: id.into(),
            clip_ids: vec![],
            split,
            question_type: qt,
            question: "q".into(),
            answer: "B".into(),
            rationale: None,
            gt_box,
            gt_interval,
        }
    }

    fn pred(id: &str, text: &str) -> Prediction {
        Prediction { qa_id: id.into(), response_text: text.into() }
    }

    #[test]
    fn single_perfect_spatial_item() {
        let r = evaluate(
            &[pred("a", "<think>.</think><answer>(0.1,0.1),(0.5,0.5)</answer>")],
            &[gt("a", Split::FgSpatial)],
            EvalKind::Spatial,
            &[0.05],
        )
        .unwrap();
        assert_eq!((r.n, r.miou, r.loc_acc), (1, Some(1.0), Some(1.0)));
    }

    #[test]
    fn missing_predictions_score_zero() {
        let gts = vec![gt("a", Split::FgTemporal), gt("b", Split::FgTemporal), gt("c", Split::FgSpatial)];
        let r = evaluate(&[pred("a", "(2.00,6.00)")], &gts, EvalKind::Temporal, &[0.05, 0.5]).unwrap();
        assert_eq!(r.n, 2);
        assert_eq!(r.missing, vec!["b".to_string()]);
        assert_eq!(r.miou, Some(0.5));
        assert_eq!(r.r1_at["0.05"], 0.5);
        assert_eq!(r.r1_at["0.5"], 0.5);
        assert!(r.per_item[1].missing && !r.per_item[1].correct);
    }

    #[test]
    fn unknown_prediction_id_is_an_error() {
        let err = evaluate(&[pred("zzz", "")], &[gt("a", Split::Short)], EvalKind::Mc, &[]).unwrap_err();
        assert_eq!(err, MetricsError::UnknownQaId("zzz".into()));
        assert!(err.to_string().contains("zzz"));
    }

    #[test]
    fn mc_accuracy() {
        let gts = vec![gt("a", Split::Short), gt("b", Split::Long)];
        let r = evaluate(&[pred("a", "B"), pred("b", "c")], &gts, EvalKind::Mc, &[]).unwrap();
        assert_eq!(r.mc_accuracy, Some(0.5));
        assert!(r.per_item[0].correct);
    }

    proptest! {
        #[test]
        fn r1_is_monotone_in_tau(
            pairs in prop::collection::vec((0.0..50.0f64, 0.0..20.0f64, 0.0..50.0f64, 0.0..20.0f64), 1..30),
            t1 in 0.0..1.0f64, t2 in 0.0..1.0f64,
        ) {
            let preds: Vec<_> = pairs.iter().map(|p| iv(p.0, p.0 + p.1)).collect();
            let gts: Vec<_> = pairs.iter().map(|p| iv(p.2, p.2 + p.3)).collect();
            let (lo, hi) = (t1.min(t2), t1.max(t2));
            prop_assert!(r1_at(&preds, &gts, lo).unwrap() >= r1_at(&preds, &gts, hi).unwrap());
        }

        #[test]
        fn perfect_iou_implies_loc_acc(a in 0.0..0.5f64, b in 0.0..0.5f64, w in 0.01..0.5f64, h in 0.01..0.5f64) {
            let p = bx(a, b, a + w, b + h);
            prop_assert_eq!(box_iou(&p, &p), 1.0);
            prop_assert!(loc_acc(&p, &p));
        }
    }
}
