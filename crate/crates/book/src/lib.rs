//! Compiles the guide's Rust listings as doc-tests. One module per chapter
//! so a failing listing points at its chapter.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/curation.md")]
pub mod curation {}
#[doc = include_str!("../../../book/src/qa.md")]
pub mod qa {}
#[doc = include_str!("../../../book/src/protocol.md")]
pub mod protocol {}
#[doc = include_str!("../../../book/src/rewards.md")]
pub mod rewards {}
#[doc = include_str!("../../../book/src/grpo.md")]
pub mod grpo {}
#[doc = include_str!("../../../book/src/metrics.md")]
pub mod metrics {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
