//! QA-generation scaffolding: question templates, prompt construction for an
//! external annotator model, response validation and the split runner.
//!
//! The annotator sits behind the [`Annotator`] trait. [`MockAnnotator`]
//! replays canned responses keyed by the SHA-256 of the user prompt;
//! [`HttpAnnotator`] posts requests to an HTTP endpoint.
//!
//! Annotators must answer with a JSON envelope
//! `{"question": ..., "answer": ..., "rationale": ...}`. For the chain-of-thought
//! split they may instead decline with `{"skip": true}` (or the bare word
//! `SKIP`). For the fine-grained splits `answer` carries the box or interval
//! payload, and the stored question is the fixed grounding prompt with the
//! clip narration substituted.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{LazyLock, Mutex};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::jsonl::{read_jsonl_file, JsonlError};
use crate::model::{validate_qa_record, ClipRecord, QARecord, QuestionType, SegmentRecord, Split};
use crate::structured_output::{parse_box, parse_interval};

/// Environment variable holding the bearer token for [`HttpAnnotator`].
pub const CREDENTIALS_ENV: &str = "EGOKIT_ANNOTATOR_TOKEN";

/// Temporal grounding prompt; `[QUESTION]` is the event to localize.
pub const FG_TEMPORAL_PROMPT: &str = "To accurately pinpoint the event \"[QUESTION]\" in the video, you need to identify a time interval from which the answer to the question can be deduced. Output your thought process within the <think> </think> tags. Then, provide the start and end times (in seconds, precise to two decimal places) in the format \"(start,end)\" within the <answer> </answer> tags.";

/// Hand-object grounding prompt; `[OBJECT]` names the hand or object.
pub const FG_SPATIAL_PROMPT: &str = "This is an image containing an object: \"[OBJECT]\" ,and output the bounding box of this object in the image. Output your thought process within the <think> </think> tags. Then provide your bounding box within the <answer> </answer> tags,following <answer> (x_min,y_min),(x_max,y_max) </answer> format. The bounding box coordinates are normalized to the range [0, 1], relative to the width and height of the image.";

const SYSTEM_PROMPT: &str = "You write question-answer pairs about first-person (egocentric) videos from their textual descriptions. Respond with a single JSON object and nothing else, of the form {\"question\": \"...\", \"answer\": \"...\", \"rationale\": \"...\"}. The rationale field is optional unless the instructions ask for step-by-step reasoning.";

const SYSTEM_PROMPT_COT: &str = "You write question-answer pairs about first-person (egocentric) videos from their textual descriptions. Respond with a single JSON object and nothing else, of the form {\"question\": \"...\", \"answer\": \"...\", \"rationale\": \"...\"}. If the description does not support a question that needs several reasoning steps, respond with {\"skip\": true} instead.";

const SYSTEM_PROMPT_FG: &str = "You produce grounding annotations for first-person (egocentric) videos. Respond with a single JSON object and nothing else, of the form {\"answer\": \"...\", \"rationale\": \"...\"}, where answer uses exactly the output format requested in the instructions.";

static SLOT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\[([A-Z][A-Z_]*)\]").unwrap());

#[derive(Debug, Error)]
pub enum QaError {
    #[error("no text annotation for {0}")]
    NoTextAnnotation(String),
    #[error("unresolved template slot [{0}]")]
    UnresolvedSlot(String),
    #[error("question type {question_type} does not belong to split {split}")]
    WrongSplit { question_type: QuestionType, split: Split },
    #[error("{0} records cannot feed the {1} split")]
    WrongSource(&'static str, Split),
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
    #[error("invalid adapter spec {0:?}; expected mock:<path> or http:<url>")]
    AdapterSpec(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct QuestionTemplate {
    pub split: Split,
    pub question_type: QuestionType,
    pub prompt_text: String,
    /// True for wordings written for this toolkit rather than taken from the
    /// corpus documentation (everything except the two grounding prompts).
    pub reconstructed: bool,
}

fn focus(q: QuestionType) -> &'static str {
    use QuestionType::*;
    match q {
        ObjectExistence => "which objects are present or being handled",
        ObjectAttribute => "the state, color, shape or material of an object",
        ObjectCount => "how many people or objects appear",
        ObjectInteraction => "what the camera wearer is doing with a specific object",
        ActionDescription => "what the hands are doing",
        ActionReasoning => "why the person performs an action",
        BackgroundAttribute => "the setting or background of the scene",
        ActionSequence => "the order in which actions are performed",
        TemporalGrounding => "when a particular action happens, answered with start and end times in seconds",
        LongObjectCount => "how many distinct objects are interacted with across the segment",
        ActionPrediction => "the most likely next action after a given moment",
        ActionSummary => "the key actions performed across the segment",
        LongActionReasoning => "why the person performs an action in the way they do",
        ChainOfThoughtReasoning | FineGrainedTemporalGrounding | HandObjectGrounding => "",
    }
}

fn build_template(q: QuestionType) -> QuestionTemplate {
    let split = q.split();
    let (prompt_text, reconstructed) = match split {
        Split::Short => (
            format!(
                "Below is a description of a short first-person video clip lasting [DURATION] seconds.\n\nDescription:\n[DESCRIPTION]\n\nWrite one [QUESTION_TYPE] question about the clip, focusing on {}. The question must be answerable from the description alone. Then write its answer in one or two sentences.",
                focus(q)
            ),
            true,
        ),
        Split::Long => (
            format!(
                "Below is a time-ordered description of a first-person video segment lasting [DURATION] seconds, assembled from consecutive clips.\n\nDescription:\n[DESCRIPTION]\n\nWrite one [QUESTION_TYPE] question that requires information from more than one part of the segment, focusing on {}. Then write its answer.",
                focus(q)
            ),
            true,
        ),
        Split::Cot => (
            "Below is a time-ordered description of a first-person video segment lasting [DURATION] seconds.\n\nDescription:\n[DESCRIPTION]\n\nDecide whether this segment supports a question that can only be answered by reasoning over several steps of the activity. If it does, write such a question, its answer, and a step-by-step rationale that cites the described events in order. If it does not, decline.".to_owned(),
            true,
        ),
        Split::FgTemporal => (FG_TEMPORAL_PROMPT.to_owned(), false),
        Split::FgSpatial => (FG_SPATIAL_PROMPT.to_owned(), false),
    };
    QuestionTemplate { split, question_type: q, prompt_text, reconstructed }
}

static REGISTRY: LazyLock<Vec<QuestionTemplate>> =
    LazyLock::new(|| QuestionType::ALL.into_iter().map(build_template).collect());

/// All sixteen templates, in [`QuestionType::ALL`] order.
pub fn templates() -> &'static [QuestionTemplate] {
    &REGISTRY
}

pub fn template(q: QuestionType) -> &'static QuestionTemplate {
    REGISTRY.iter().find(|t| t.question_type == q).expect("every question type has a template")
}

/// Substitutes `[SLOT]` markers in one pass; substituted text is never
/// rescanned. Fails on a slot without a value.
pub fn fill_slots(text: &str, values: &[(&str, &str)]) -> Result<String, QaError> {
    let mut out = String::with_capacity(text.len());
    let mut last = 0;
    for caps in SLOT.captures_iter(text) {
        let whole = caps.get(0).expect("match");
        let name = &caps[1];
        let value = values
            .iter()
            .find(|(k, _)| *k == name)
            .map(|(_, v)| *v)
            .ok_or_else(|| QaError::UnresolvedSlot(name.to_owned()))?;
        out.push_str(&text[last..whole.start()]);
        out.push_str(value);
        last = whole.end();
    }
    out.push_str(&text[last..]);
    Ok(out)
}

/// Which text annotation feeds a clip prompt.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum CaptionSource {
    Caption,
    Narration,
    #[default]
    Both,
}

/// Input record of a split: short and fine-grained splits read clips, long
/// and CoT splits read segments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SourceRecord {
    Segment(SegmentRecord),
    Clip(ClipRecord),
}

impl SourceRecord {
    pub fn id(&self) -> &str {
        match self {
            SourceRecord::Segment(s) => &s.segment_id,
            SourceRecord::Clip(c) => &c.clip_id,
        }
    }

    pub fn clip_ids(&self) -> Vec<String> {
        match self {
            SourceRecord::Segment(s) => s.clip_ids.clone(),
            SourceRecord::Clip(c) => vec![c.clip_id.clone()],
        }
    }

    fn duration(&self) -> f64 {
        match self {
            SourceRecord::Segment(s) => s.interval.duration(),
            SourceRecord::Clip(c) => c.duration(),
        }
    }

    fn description(&self, source: CaptionSource) -> Option<String> {
        let nonempty = |s: &Option<String>| s.as_deref().map(str::trim).filter(|t| !t.is_empty()).map(str::to_owned);
        match self {
            SourceRecord::Segment(s) => nonempty(&Some(s.caption.clone())),
            SourceRecord::Clip(c) => {
                let narration = nonempty(&c.narration);
                let caption = nonempty(&c.caption);
                match source {
                    CaptionSource::Caption => caption,
                    CaptionSource::Narration => narration,
                    CaptionSource::Both => match (narration, caption) {
                        (Some(n), Some(c)) => Some(format!("Narration: {n}\nCaption: {c}")),
                        (Some(n), None) => Some(format!("Narration: {n}")),
                        (None, Some(c)) => Some(format!("Caption: {c}")),
                        (None, None) => None,
                    },
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatorRequest {
    pub system_prompt: String,
    pub user_prompt: String,
    pub temperature: f64,
    pub max_output: u32,
}

/// JSON body sent to an HTTP annotator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireRequest {
    pub system: String,
    pub user: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl From<&AnnotatorRequest> for WireRequest {
    fn from(r: &AnnotatorRequest) -> Self {
        Self {
            system: r.system_prompt.clone(),
            user: r.user_prompt.clone(),
            temperature: r.temperature,
            max_tokens: r.max_output,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    #[serde(default)]
    pub prompt_tokens: u64,
    #[serde(default)]
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatorResponse {
    pub text: String,
    #[serde(default)]
    pub usage: Option<Usage>,
    #[serde(default)]
    pub latency_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationSettings {
    pub temperature: f64,
    pub max_output: u32,
}

impl Default for GenerationSettings {
    fn default() -> Self {
        Self { temperature: 0.7, max_output: 1024 }
    }
}

/// The grounding prompt for a fine-grained template with its slot filled.
pub fn grounding_question(template: &QuestionTemplate, slot: &str) -> Result<String, QaError> {
    match template.split {
        Split::FgSpatial => fill_slots(&template.prompt_text, &[("OBJECT", slot)]),
        Split::FgTemporal => fill_slots(&template.prompt_text, &[("QUESTION", slot)]),
        split => Err(QaError::WrongSplit { question_type: template.question_type, split }),
    }
}

/// Renders the annotator request for one template and input record.
///
/// `slot` supplies `[OBJECT]` / `[QUESTION]` for the fine-grained templates
/// and is ignored otherwise.
pub fn build_prompt(
    template: &QuestionTemplate,
    source: &SourceRecord,
    caption_source: CaptionSource,
    slot: Option<&str>,
    settings: GenerationSettings,
) -> Result<AnnotatorRequest, QaError> {
    let description =
        source.description(caption_source).ok_or_else(|| QaError::NoTextAnnotation(source.id().to_owned()))?;
    let duration = format!("{:.1}", source.duration());
    let (system, user) = match template.split {
        Split::Short | Split::Long | Split::Cot => {
            let user = fill_slots(
                &template.prompt_text,
                &[
                    ("DURATION", &duration),
                    ("DESCRIPTION", &description),
                    ("QUESTION_TYPE", template.question_type.display_name()),
                ],
            )?;
            let system = if template.split == Split::Cot { SYSTEM_PROMPT_COT } else { SYSTEM_PROMPT };
            (system, user)
        }
        Split::FgSpatial | Split::FgTemporal => {
            let slot_name = if template.split == Split::FgSpatial { "OBJECT" } else { "QUESTION" };
            let value = slot.ok_or_else(|| QaError::UnresolvedSlot(slot_name.to_owned()))?;
            let question = grounding_question(template, value)?;
            let user = format!(
                "Instructions given to the model:\n{question}\n\nVideo description ({duration} seconds):\n{description}\n\nWrite the reference answer the model should give."
            );
            (SYSTEM_PROMPT_FG, user)
        }
    };
    Ok(AnnotatorRequest {
        system_prompt: system.to_owned(),
        user_prompt: user,
        temperature: settings.temperature,
        max_output: settings.max_output,
    })
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdapterError {
    #[error("annotator timed out")]
    Timeout,
    #[error("annotator transport error: {0}")]
    Transport(String),
    #[error("annotator returned HTTP {0}")]
    Status(u16),
    #[error("no canned response for prompt {0}")]
    NoCannedResponse(String),
}

pub trait Annotator: Send + Sync {
    fn complete(&self, request: &AnnotatorRequest) -> Result<AnnotatorResponse, AdapterError>;
}

/// Hex SHA-256 of a user prompt; the lookup key of canned responses.
pub fn prompt_key(user_prompt: &str) -> String {
    hex::encode(Sha256::digest(user_prompt.as_bytes()))
}

/// One line of a canned-response file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CannedResponse {
    pub prompt_sha256: String,
    pub text: String,
}

#[derive(Debug, Clone, Default)]
pub struct MockAnnotator {
    responses: HashMap<String, String>,
}

impl MockAnnotator {
    pub fn new(canned: impl IntoIterator<Item = CannedResponse>) -> Self {
        Self { responses: canned.into_iter().map(|c| (c.prompt_sha256, c.text)).collect() }
    }

    pub fn from_file(path: &Path) -> Result<Self, QaError> {
        Ok(Self::new(read_jsonl_file::<CannedResponse>(path)?))
    }
}

impl Annotator for MockAnnotator {
    fn complete(&self, request: &AnnotatorRequest) -> Result<AnnotatorResponse, AdapterError> {
        let key = prompt_key(&request.user_prompt);
        let text = self.responses.get(&key).cloned().ok_or(AdapterError::NoCannedResponse(key))?;
        Ok(AnnotatorResponse { text, usage: None, latency_ms: 0 })
    }
}

/// Posts [`WireRequest`] bodies to `url` and expects a JSON
/// [`AnnotatorResponse`] (`text` required, `usage` optional) back.
pub struct HttpAnnotator {
    url: String,
    token: Option<String>,
    agent: ureq::Agent,
}

impl HttpAnnotator {
    pub fn new(url: impl Into<String>, timeout: Duration) -> Self {
        let agent =
            ureq::Agent::config_builder().timeout_global(Some(timeout)).http_status_as_error(true).build().into();
        Self { url: url.into(), token: std::env::var(CREDENTIALS_ENV).ok(), agent }
    }
}

impl Annotator for HttpAnnotator {
    fn complete(&self, request: &AnnotatorRequest) -> Result<AnnotatorResponse, AdapterError> {
        let body =
            serde_json::to_string(&WireRequest::from(request)).map_err(|e| AdapterError::Transport(e.to_string()))?;
        let started = Instant::now();
        let mut req = self.agent.post(&self.url).header("Content-Type", "application/json");
        if let Some(token) = &self.token {
            req = req.header("Authorization", format!("Bearer {token}"));
        }
        let mut resp = req.send(body).map_err(|e| match e {
            ureq::Error::StatusCode(code) => AdapterError::Status(code),
            ureq::Error::Timeout(_) => AdapterError::Timeout,
            other => AdapterError::Transport(other.to_string()),
        })?;
        let text = resp.body_mut().read_to_string().map_err(|e| AdapterError::Transport(e.to_string()))?;
        let mut parsed: AnnotatorResponse =
            serde_json::from_str(&text).map_err(|e| AdapterError::Transport(format!("bad response body: {e}")))?;
        if parsed.latency_ms == 0 {
            parsed.latency_ms = started.elapsed().as_millis() as u64;
        }
        Ok(parsed)
    }
}

/// Builds an adapter from `mock:<path>` or `http:<url>`.
pub fn adapter_from_spec(spec: &str, timeout: Duration) -> Result<Box<dyn Annotator>, QaError> {
    if let Some(path) = spec.strip_prefix("mock:") {
        Ok(Box::new(MockAnnotator::from_file(Path::new(path))?))
    } else if let Some(url) = spec.strip_prefix("http:") {
        let url = if url.starts_with("//") { format!("http:{url}") } else { url.to_owned() };
        Ok(Box::new(HttpAnnotator::new(url, timeout)))
    } else {
        Err(QaError::AdapterSpec(spec.to_owned()))
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Rejection {
    #[error("annotator declined (skip)")]
    Skipped,
    #[error("malformed annotator JSON: {0}")]
    MalformedJson(String),
    #[error("empty question")]
    EmptyQuestion,
    #[error("empty answer")]
    EmptyAnswer,
    #[error("question duplicates answer")]
    Duplicate,
    #[error("rationale too short ({got} < {min} characters)")]
    RationaleTooShort { got: usize, min: usize },
    #[error("payload_malformed: {0:?}")]
    PayloadMalformed(String),
    #[error("record failed validation: {0}")]
    Invalid(String),
}

/// Identity of the QA item being validated.
#[derive(Debug, Clone, PartialEq)]
pub struct QaContext {
    pub qa_id: String,
    pub clip_ids: Vec<String>,
    pub question_type: QuestionType,
    /// Rendered grounding prompt; required for the fine-grained splits.
    pub grounding_question: Option<String>,
    pub min_rationale_chars: usize,
}

#[derive(Debug, Deserialize)]
struct Envelope {
    #[serde(default)]
    question: Option<String>,
    #[serde(default)]
    answer: Option<String>,
    #[serde(default)]
    rationale: Option<String>,
    #[serde(default)]
    skip: bool,
}

fn strip_code_fence(text: &str) -> &str {
    let t = text.trim();
    let Some(rest) = t.strip_prefix("```") else {
        return t;
    };
    let rest = rest.strip_prefix("json").unwrap_or(rest);
    rest.strip_suffix("```").unwrap_or(rest).trim()
}

fn normalize(s: &str) -> String {
    s.split_whitespace()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
        .filter(|w| !w.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Parses and screens an annotator response into a QA record.
pub fn validate_qa(response_text: &str, ctx: &QaContext) -> Result<QARecord, Rejection> {
    let split = ctx.question_type.split();
    let body = strip_code_fence(response_text);
    if body.eq_ignore_ascii_case("skip") {
        return Err(Rejection::Skipped);
    }
    let env: Envelope = serde_json::from_str(body).map_err(|e| Rejection::MalformedJson(e.to_string()))?;
    if env.skip {
        return Err(Rejection::Skipped);
    }
    let answer = env.answer.map(|a| a.trim().to_owned()).unwrap_or_default();
    if answer.is_empty() {
        return Err(Rejection::EmptyAnswer);
    }
    let rationale = env.rationale.map(|r| r.trim().to_owned()).filter(|r| !r.is_empty());

    let mut record = QARecord {
        qa_id: ctx.qa_id.clone(),
        clip_ids: ctx.clip_ids.clone(),
        split,
        question_type: ctx.question_type,
        question: String::new(),
        answer,
        rationale,
        gt_box: None,
        gt_interval: None,
    };

    match split {
        Split::FgSpatial | Split::FgTemporal => {
            record.question = ctx
                .grounding_question
                .clone()
                .ok_or_else(|| Rejection::Invalid("missing grounding question".into()))?;
            if split == Split::FgSpatial {
                record.gt_box =
                    Some(parse_box(&record.answer).ok_or_else(|| Rejection::PayloadMalformed(record.answer.clone()))?);
            } else {
                record.gt_interval = Some(
                    parse_interval(&record.answer).ok_or_else(|| Rejection::PayloadMalformed(record.answer.clone()))?,
                );
            }
        }
        Split::Short | Split::Long | Split::Cot => {
            record.question = env.question.map(|q| q.trim().to_owned()).unwrap_or_default();
            if record.question.is_empty() {
                return Err(Rejection::EmptyQuestion);
            }
            if normalize(&record.question) == normalize(&record.answer) {
                return Err(Rejection::Duplicate);
            }
            if split == Split::Cot {
                let got = record.rationale.as_deref().map_or(0, |r| r.chars().count());
                if got < ctx.min_rationale_chars {
                    return Err(Rejection::RationaleTooShort { got, min: ctx.min_rationale_chars });
                }
            }
        }
    }

    let report = validate_qa_record(&record);
    if !report.is_empty() {
        return Err(Rejection::Invalid(report.to_string()));
    }
    Ok(record)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    /// Fraction of input records sent to the annotator.
    pub sampling_ratio: f64,
    pub seed: u64,
    /// Maximum adapter calls in flight.
    pub concurrency: usize,
    pub max_attempts: u32,
    /// First retry waits this long; each further retry doubles it.
    pub backoff_base_ms: u64,
    pub min_rationale_chars: usize,
    pub caption_source: CaptionSource,
    pub generation: GenerationSettings,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            sampling_ratio: 1.0,
            seed: 0,
            concurrency: 4,
            max_attempts: 3,
            backoff_base_ms: 200,
            min_rationale_chars: 200,
            caption_source: CaptionSource::Both,
            generation: GenerationSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedItem {
    pub source_id: String,
    pub qa_id: Option<String>,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryNote {
    pub qa_id: String,
    pub retries: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitOutput {
    pub records: Vec<QARecord>,
    pub skipped: Vec<SkippedItem>,
    pub retries: Vec<RetryNote>,
}

struct Job {
    source_id: String,
    context: QaContext,
    request: AnnotatorRequest,
}

fn qa_id(split: Split, source_id: &str, q: QuestionType) -> String {
    format!("{split}-{source_id}-{q}")
}

/// Final adapter result and the number of retries it took.
type Attempt = (Result<AnnotatorResponse, AdapterError>, u32);

fn call_with_retries(adapter: &dyn Annotator, req: &AnnotatorRequest, cfg: &SplitConfig) -> Attempt {
    let attempts = cfg.max_attempts.max(1);
    let mut last = AdapterError::Transport("no attempt made".into());
    for attempt in 0..attempts {
        match adapter.complete(req) {
            Ok(resp) => return (Ok(resp), attempt),
            Err(e) => last = e,
        }
        if attempt + 1 < attempts && cfg.backoff_base_ms > 0 {
            std::thread::sleep(Duration::from_millis(cfg.backoff_base_ms << attempt));
        }
    }
    (Err(last), attempts - 1)
}

/// Generates QA records for one split.
///
/// Short and long splits request every question type of the split for each
/// input record; the other splits have a single type. Records are sampled
/// with a seeded RNG, adapter calls run on up to `concurrency` threads, and
/// output follows input order.
pub fn run_split(sources: &[SourceRecord], split: Split, adapter: &dyn Annotator, cfg: &SplitConfig) -> SplitOutput {
    let mut out = SplitOutput::default();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut jobs = Vec::new();

    for source in sources {
        let draw: f64 = rng.random();
        if draw >= cfg.sampling_ratio {
            continue;
        }
        let wants_segment = matches!(split, Split::Long | Split::Cot);
        if wants_segment != matches!(source, SourceRecord::Segment(_)) {
            let kind = if wants_segment { "clip" } else { "segment" };
            out.skipped.push(SkippedItem {
                source_id: source.id().to_owned(),
                qa_id: None,
                reason: QaError::WrongSource(kind, split).to_string(),
            });
            continue;
        }
        let slot = match source {
            SourceRecord::Clip(c) => c.narration.as_deref().map(str::trim).filter(|s| !s.is_empty()),
            SourceRecord::Segment(_) => None,
        };
        for q in split.question_types() {
            let tpl = template(q);
            let id = qa_id(split, source.id(), q);
            let built = build_prompt(tpl, source, cfg.caption_source, slot, cfg.generation).and_then(|request| {
                let grounding = match split {
                    Split::FgSpatial | Split::FgTemporal => {
                        Some(grounding_question(tpl, slot.expect("build_prompt checked the slot"))?)
                    }
                    _ => None,
                };
                Ok((request, grounding))
            });
            match built {
                Ok((request, grounding_question)) => jobs.push(Job {
                    source_id: source.id().to_owned(),
                    context: QaContext {
                        qa_id: id,
                        clip_ids: source.clip_ids(),
                        question_type: q,
                        grounding_question,
                        min_rationale_chars: cfg.min_rationale_chars,
                    },
                    request,
                }),
                Err(e) => {
                    log::warn!("{}: {e}", source.id());
                    out.skipped.push(SkippedItem {
                        source_id: source.id().to_owned(),
                        qa_id: Some(id),
                        reason: e.to_string(),
                    });
                }
            }
        }
    }

    let results: Vec<Mutex<Option<Attempt>>> = jobs.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = cfg.concurrency.clamp(1, jobs.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(job) = jobs.get(i) else { break };
                let result = call_with_retries(adapter, &job.request, cfg);
                *results[i].lock().expect("result slot poisoned") = Some(result);
            });
        }
    });

    for (job, slot) in jobs.into_iter().zip(results) {
        let (result, retries) = slot.into_inner().expect("result slot poisoned").expect("every job ran");
        let qa_id = job.context.qa_id.clone();
        if retries > 0 && result.is_ok() {
            log::info!("{}: {qa_id} succeeded after {retries} retries", job.source_id);
            out.retries.push(RetryNote { qa_id: qa_id.clone(), retries });
        }
        let response = match result {
            Ok(r) => r,
            Err(e) => {
                log::warn!("{}: {qa_id} failed after {} attempts: {e}", job.source_id, retries + 1);
                out.skipped.push(SkippedItem { source_id: job.source_id, qa_id: Some(qa_id), reason: e.to_string() });
                continue;
            }
        };
        match validate_qa(&response.text, &job.context) {
            Ok(record) => out.records.push(record),
            Err(rejection) => {
                log::info!("{}: {qa_id} rejected: {rejection}", job.source_id);
                out.skipped.push(SkippedItem {
                    source_id: job.source_id,
                    qa_id: Some(qa_id),
                    reason: rejection.to_string(),
                });
            }
        }
    }
    out
}

/// Reads the input file of a split: clips for short and fine-grained splits,
/// segments for long and CoT.
pub fn read_sources(path: &Path, split: Split) -> Result<Vec<SourceRecord>, QaError> {
    Ok(match split {
        Split::Long | Split::Cot => {
            read_jsonl_file::<SegmentRecord>(path)?.into_iter().map(SourceRecord::Segment).collect()
        }
        _ => read_jsonl_file::<ClipRecord>(path)?.into_iter().map(SourceRecord::Clip).collect(),
    })
}

/// Writes a canned-response file for a mock annotator.
pub fn write_canned(path: &Path, canned: &[CannedResponse]) -> Result<(), QaError> {
    crate::jsonl::write_jsonl_file(path, canned)?;
    Ok(())
}

/// Reads a file into a string with the path in the error.
pub fn read_text(path: &Path) -> std::io::Result<String> {
    fs::read_to_string(path)
}
