//! The `<think>…</think><answer>…</answer>` response protocol and the box
//! and interval answer payloads.
//!
//! Parsing is strict: exactly one think block followed by exactly one answer
//! block, with only whitespace around and between them. Payload numbers are
//! plain decimals (no exponents), never clamped.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::model::{BBox, TimeInterval};

static ENVELOPE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?s)\A\s*<think>(.*?)</think>\s*<answer>(.*?)</answer>\s*\z").unwrap());

const NUM: &str = r"([+-]?(?:\d+(?:\.\d+)?|\.\d+))";

static BOX_PAYLOAD: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(&format!(r"\A\s*\(\s*{NUM}\s*,\s*{NUM}\s*\)\s*,\s*\(\s*{NUM}\s*,\s*{NUM}\s*\)\s*\z")).unwrap()
});

static INTERVAL_PAYLOAD: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(&format!(r"\A\s*\(\s*{NUM}\s*,\s*{NUM}\s*\)\s*\z")).unwrap());

const TAGS: [&str; 4] = ["<think>", "</think>", "<answer>", "</answer>"];

/// Which payload an answer block is expected to carry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PayloadKind {
    Box,
    Interval,
    Free,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Payload {
    Box(BBox),
    Interval(TimeInterval),
    FreeText,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundedAnswer {
    pub think_text: String,
    pub answer_text: String,
    /// `None` when the answer block could not be read as the expected payload.
    pub payload: Option<Payload>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseStatus {
    Ok,
    FormatMismatch,
    PayloadMalformed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParseOutcome {
    pub status: ParseStatus,
    pub answer: Option<GroundedAnswer>,
}

impl ParseOutcome {
    pub fn format_matched(&self) -> bool {
        self.status != ParseStatus::FormatMismatch
    }

    pub fn payload(&self) -> Option<&Payload> {
        self.answer.as_ref().and_then(|a| a.payload.as_ref())
    }

    pub fn bbox(&self) -> Option<BBox> {
        match self.payload() {
            Some(Payload::Box(b)) => Some(*b),
            _ => None,
        }
    }

    pub fn interval(&self) -> Option<TimeInterval> {
        match self.payload() {
            Some(Payload::Interval(iv)) => Some(*iv),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ParseOptions {
    /// Trim whitespace from the captured think/answer texts.
    pub trim_inner: bool,
}

pub fn parse_response(text: &str, expected: PayloadKind) -> ParseOutcome {
    parse_response_with(text, expected, ParseOptions::default())
}

pub fn parse_response_with(text: &str, expected: PayloadKind, opts: ParseOptions) -> ParseOutcome {
    let mismatch = ParseOutcome { status: ParseStatus::FormatMismatch, answer: None };
    let Some(caps) = ENVELOPE.captures(text) else {
        return mismatch;
    };
    let think = caps.get(1).map_or("", |m| m.as_str());
    let answer = caps.get(2).map_or("", |m| m.as_str());
    if TAGS.iter().any(|t| think.contains(t) || answer.contains(t)) {
        return mismatch;
    }

    let payload = parse_payload(answer, expected);
    let status = if payload.is_some() { ParseStatus::Ok } else { ParseStatus::PayloadMalformed };
    let (think_text, answer_text) = if opts.trim_inner {
        (think.trim().to_owned(), answer.trim().to_owned())
    } else {
        (think.to_owned(), answer.to_owned())
    };
    ParseOutcome { status, answer: Some(GroundedAnswer { think_text, answer_text, payload }) }
}

/// Reads a bare payload (the contents of an answer block).
pub fn parse_payload(text: &str, expected: PayloadKind) -> Option<Payload> {
    match expected {
        PayloadKind::Box => parse_box(text).map(Payload::Box),
        PayloadKind::Interval => parse_interval(text).map(Payload::Interval),
        PayloadKind::Free => Some(Payload::FreeText),
    }
}

fn numbers<const N: usize>(re: &Regex, text: &str) -> Option<[f64; N]> {
    let caps = re.captures(text)?;
    let mut out = [0.0; N];
    for (i, slot) in out.iter_mut().enumerate() {
        *slot = caps.get(i + 1)?.as_str().parse().ok()?;
    }
    Some(out)
}

pub fn parse_box(text: &str) -> Option<BBox> {
    let [x0, y0, x1, y1] = numbers::<4>(&BOX_PAYLOAD, text)?;
    BBox::new(x0, y0, x1, y1).ok()
}

pub fn parse_interval(text: &str) -> Option<TimeInterval> {
    let [start, end] = numbers::<2>(&INTERVAL_PAYLOAD, text)?;
    TimeInterval::new(start, end).ok()
}

/// Fixed-point rendering with ties broken to even on the exact binary value.
fn fixed(v: f64, decimals: usize) -> String {
    // `+ 0.0` folds -0.0 into 0.0
    format!("{:.*}", decimals, v + 0.0)
}

/// `(start,end)` in seconds, two decimals.
pub fn render_interval(iv: &TimeInterval) -> String {
    format!("({},{})", fixed(iv.start_s, 2), fixed(iv.end_s, 2))
}

/// `(x_min,y_min),(x_max,y_max)`, three decimals.
pub fn render_box(b: &BBox) -> String {
    format!("({},{}),({},{})", fixed(b.x_min, 3), fixed(b.y_min, 3), fixed(b.x_max, 3), fixed(b.y_max, 3))
}

pub fn render_response(think: &str, answer: &str) -> String {
    format!("<think>{think}</think><answer>{answer}</answer>")
}
