//! Toolkit for building egocentric video QA data and training grounding
//! policies with group-relative policy optimization.
//!
//! The pieces line up as a pipeline:
//!
//! - [`curation`] filters detection-annotated clips and merges survivors
//!   into long-term segments,
//! - [`qa`] turns clips and segments into QA records through an annotator
//!   model,
//! - [`structured_output`] and [`rewards`] parse `<think>`/`<answer>`
//!   responses and score them,
//! - [`grpo`] holds the advantage, KL and objective math plus a toy trainer,
//! - [`metrics`] evaluates predictions.
//!
//! ```
//! use egokit::rewards::score_candidate;
//! use egokit::model::{QARecord, QuestionType, Split, BBox};
//!
//! let gt = QARecord {
//!     qa_id: "q".into(),
//!     clip_ids: vec!["c".into()],
//!     split: Split::FgSpatial,
//!     question_type: QuestionType::HandObjectGrounding,
//!     question: "where is the cup?".into(),
//!     answer: "(0.000,0.000),(0.500,0.500)".into(),
//!     rationale: None,
//!     gt_box: Some(BBox { x_min: 0.0, y_min: 0.0, x_max: 0.5, y_max: 0.5 }),
//!     gt_interval: None,
//! };
//! let r = score_candidate("<think>left</think><answer>(0,0),(0.5,0.5)</answer>", &gt).unwrap();
//! assert_eq!(r.total, 2.0);
//! ```

// `!(x >= lo)` is used on purpose so NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod curation;
pub mod grpo;
pub mod jsonl;
pub mod metrics;
pub mod model;
pub mod qa;
pub mod rewards;
pub mod structured_output;
