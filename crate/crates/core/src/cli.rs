//! Command-line front end. [`run`] parses arguments, dispatches and maps
//! failures to exit codes: 0 on success, 1 on a usage error, 2 on a data
//! error. Summaries go to standard error; data only to named files.

use std::collections::HashMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::curation::{run_pipeline, segment_long_term, FilterConfig, SegmentConfig};
use crate::grpo::{train_toy, GrpoConfig, ToyTask};
use crate::jsonl::{read_jsonl_file, write_jsonl_file};
use crate::metrics::{evaluate, EvalKind};
use crate::model::{ClipRecord, Prediction, QARecord, Split};
use crate::qa::{adapter_from_spec, read_sources, run_split, CaptionSource, SplitConfig};
use crate::rewards::{score_group, GroundingTask, RewardLine};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "egokit", version, about = "Egocentric QA curation, grounding rewards and GRPO tooling")]
pub struct Cli {
    /// error, warn, info, debug or trace
    #[arg(long, global = true, default_value = "warn")]
    pub log_level: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Clip filtering and long-term segmentation
    #[command(subcommand)]
    Curate(CurateCommand),
    /// QA generation through an annotator model
    #[command(subcommand)]
    Qa(QaCommand),
    /// Grounding rewards
    #[command(subcommand)]
    Reward(RewardCommand),
    /// Toy GRPO training
    #[command(subcommand)]
    Grpo(GrpoCommand),
    /// Evaluation
    #[command(subcommand)]
    Eval(EvalCommand),
}

#[derive(Debug, Subcommand)]
pub enum CurateCommand {
    /// Apply the ego, duration, hand, object and displacement rules
    Filter(FilterArgs),
    /// Merge consecutive clips into long-term segments
    Segment(SegmentArgs),
}

#[derive(Debug, Args)]
pub struct FilterArgs {
    /// Clip records with per-frame detections (JSONL)
    #[arg(long)]
    pub detections: PathBuf,
    /// Filter decisions (JSONL)
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the kept clip records here (JSONL)
    #[arg(long)]
    pub kept: Option<PathBuf>,
    #[arg(long, default_value_t = 0.7)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.1)]
    pub disp_frac: f64,
    #[arg(long, default_value_t = 2.0)]
    pub min_dur: f64,
    #[arg(long, default_value_t = 0.5)]
    pub ego_threshold: f64,
    #[arg(long, default_value_t = 2)]
    pub max_hands: usize,
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    /// Clip records (JSONL), typically the kept clips of `curate filter`
    #[arg(long)]
    pub clips: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 15.0)]
    pub min_len: f64,
    #[arg(long, default_value_t = 120.0)]
    pub max_len: f64,
    #[arg(long, default_value_t = 1.0)]
    pub max_gap: f64,
    #[arg(long, default_value = " ")]
    pub delimiter: String,
}

#[derive(Debug, Subcommand)]
pub enum QaCommand {
    /// Generate QA records for one split
    Build(QaBuildArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SplitArg {
    Short,
    Long,
    Cot,
    FgSpatial,
    FgTemporal,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Short => Split::Short,
            SplitArg::Long => Split::Long,
            SplitArg::Cot => Split::Cot,
            SplitArg::FgSpatial => Split::FgSpatial,
            SplitArg::FgTemporal => Split::FgTemporal,
        }
    }
}

#[derive(Debug, Args)]
pub struct QaBuildArgs {
    #[arg(long, value_enum)]
    pub split: SplitArg,
    /// Clip records, or segment records for the long and cot splits (JSONL)
    #[arg(long)]
    pub clips: PathBuf,
    /// mock:<canned-responses.jsonl> or http:<url>
    #[arg(long)]
    pub adapter: String,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 4)]
    pub concurrency: usize,
    /// Fraction of input records sent to the annotator
    #[arg(long, default_value_t = 1.0)]
    pub sampling_ratio: f64,
    #[arg(long, value_enum, default_value_t = CaptionSource::Both)]
    pub caption_source: CaptionSource,
    #[arg(long, default_value_t = 3)]
    pub max_attempts: u32,
    /// Delay before the first retry; doubles on each further retry
    #[arg(long, default_value_t = 200)]
    pub backoff_ms: u64,
    #[arg(long, default_value_t = 60)]
    pub timeout_s: u64,
}

#[derive(Debug, Subcommand)]
pub enum RewardCommand {
    /// Score responses against grounding QA records
    Score(RewardArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum TaskArg {
    Og,
    Tg,
}

#[derive(Debug, Args)]
pub struct RewardArgs {
    #[arg(long, value_enum)]
    pub task: TaskArg,
    /// Predictions, one {qa_id, response_text} per line
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground-truth QA records (JSONL)
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum GrpoCommand {
    /// Train a softmax policy over a fixed candidate set
    TrainToy(TrainToyArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ToyTaskArg {
    Box,
    Interval,
}

#[derive(Debug, Args)]
pub struct TrainToyArgs {
    #[arg(long, value_enum, default_value_t = ToyTaskArg::Box)]
    pub task: ToyTaskArg,
    #[arg(long, default_value_t = 8)]
    pub group_size: usize,
    #[arg(long, default_value_t = 0.04)]
    pub beta: f64,
    #[arg(long, default_value_t = 0.1)]
    pub lr: f64,
    #[arg(long, default_value_t = 200)]
    pub iters: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-8)]
    pub std_epsilon: f64,
    /// Gradient-norm clip; 0 disables clipping
    #[arg(long, default_value_t = 1.0)]
    pub max_grad_norm: f64,
    /// Per-iteration statistics (JSONL)
    #[arg(long)]
    pub report: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum EvalCommand {
    /// Grounding or multiple-choice evaluation
    Grounding(EvalArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum KindArg {
    Spatial,
    Temporal,
    Mc,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, value_enum)]
    pub kind: KindArg,
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    /// R1 thresholds for temporal evaluation
    #[arg(long, value_delimiter = ',', default_value = "0.05")]
    pub tau: Vec<f64>,
    /// Report (a single JSON document)
    #[arg(long)]
    pub report: PathBuf,
}

/// Marks a failure caused by bad arguments rather than bad data.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn read_input<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<Vec<T>> {
    read_jsonl_file(path).with_context(|| format!("reading {}", path.display()))
}

fn write_output<T: serde::Serialize>(path: &Path, records: &[T]) -> anyhow::Result<()> {
    write_jsonl_file(path, records).with_context(|| format!("writing {}", path.display()))
}

fn curate_filter(a: &FilterArgs) -> anyhow::Result<()> {
    let cfg = FilterConfig {
        ego_threshold: a.ego_threshold,
        max_hands: a.max_hands,
        alpha: a.alpha,
        disp_fraction: a.disp_frac,
        min_duration_s: a.min_dur,
        frame_stride: a.stride,
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let clips: Vec<ClipRecord> = read_input(&a.detections)?;
    let decisions = run_pipeline(&clips, &cfg)?;
    write_output(&a.out, &decisions)?;
    let kept: Vec<&ClipRecord> = clips.iter().zip(&decisions).filter(|(_, d)| d.kept).map(|(c, _)| c).collect();
    if let Some(path) = &a.kept {
        write_output(path, &kept)?;
    }
    eprintln!("kept {} / total {}", kept.len(), clips.len());
    Ok(())
}

fn curate_segment(a: &SegmentArgs) -> anyhow::Result<()> {
    if !(a.min_len >= 0.0 && a.min_len <= a.max_len) || !(a.max_gap >= 0.0) {
        return Err(usage("need 0 <= --min-len <= --max-len and --max-gap >= 0"));
    }
    let cfg = SegmentConfig {
        min_len_s: a.min_len,
        max_len_s: a.max_len,
        max_gap_s: a.max_gap,
        delimiter: a.delimiter.clone(),
    };
    let clips: Vec<ClipRecord> = read_input(&a.clips)?;
    let segments = segment_long_term(&clips, &cfg);
    write_output(&a.out, &segments)?;
    eprintln!("segments {} from {} clips", segments.len(), clips.len());
    Ok(())
}

fn qa_build(a: &QaBuildArgs) -> anyhow::Result<()> {
    if !(0.0..=1.0).contains(&a.sampling_ratio) {
        return Err(usage("--sampling-ratio must lie in [0, 1]"));
    }
    if a.concurrency == 0 || a.max_attempts == 0 {
        return Err(usage("--concurrency and --max-attempts must be positive"));
    }
    let split = Split::from(a.split);
    let adapter = adapter_from_spec(&a.adapter, Duration::from_secs(a.timeout_s)).map_err(|e| match e {
        crate::qa::QaError::AdapterSpec(_) => usage(e.to_string()),
        other => anyhow::Error::new(other),
    })?;
    let sources = read_sources(&a.clips, split).with_context(|| format!("reading {}", a.clips.display()))?;
    let cfg = SplitConfig {
        sampling_ratio: a.sampling_ratio,
        seed: a.seed,
        concurrency: a.concurrency,
        max_attempts: a.max_attempts,
        backoff_base_ms: a.backoff_ms,
        caption_source: a.caption_source,
        ..SplitConfig::default()
    };
    let out = run_split(&sources, split, adapter.as_ref(), &cfg);
    write_output(&a.out, &out.records)?;
    eprintln!(
        "generated {} records for {split} from {} inputs ({} skipped, {} retried)",
        out.records.len(),
        sources.len(),
        out.skipped.len(),
        out.retries.len()
    );
    Ok(())
}

fn reward_score(a: &RewardArgs) -> anyhow::Result<()> {
    let task = match a.task {
        TaskArg::Og => GroundingTask::Og,
        TaskArg::Tg => GroundingTask::Tg,
    };
    let preds: Vec<Prediction> = read_input(&a.pred)?;
    let gts: Vec<QARecord> = read_input(&a.gt)?;
    let by_id: HashMap<&str, &QARecord> = gts.iter().map(|g| (g.qa_id.as_str(), g)).collect();
    let mut lines = Vec::with_capacity(preds.len());
    for p in &preds {
        let gt = by_id.get(p.qa_id.as_str()).with_context(|| format!("prediction for unknown qa_id {}", p.qa_id))?;
        if gt.split != task.split() {
            bail!("qa_id {} belongs to split {}, not {}", p.qa_id, gt.split, task.split());
        }
        let breakdown = score_group(std::slice::from_ref(&p.response_text), gt).remove(0);
        lines.push(RewardLine { qa_id: p.qa_id.clone(), breakdown });
    }
    write_output(&a.out, &lines)?;
    let mean =
        if lines.is_empty() { 0.0 } else { lines.iter().map(|l| l.breakdown.total).sum::<f64>() / lines.len() as f64 };
    eprintln!("scored {} responses, mean reward {mean:.4}", lines.len());
    Ok(())
}

fn grpo_train_toy(a: &TrainToyArgs) -> anyhow::Result<()> {
    let task = match a.task {
        ToyTaskArg::Box => ToyTask::BoxGrounding,
        ToyTaskArg::Interval => ToyTask::IntervalGrounding,
    };
    let cfg = GrpoConfig {
        group_size: a.group_size,
        beta: a.beta,
        learning_rate: a.lr,
        iterations: a.iters,
        std_epsilon: a.std_epsilon,
        seed: a.seed,
        max_grad_norm: (a.max_grad_norm > 0.0).then_some(a.max_grad_norm),
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let report = train_toy(task, &cfg)?;
    write_output(&a.report, &report.history)?;
    eprintln!(
        "expected reward {:.4} -> {:.4}, final KL {:.3e}",
        report.initial_expected_reward(),
        report.final_expected_reward(),
        report.final_kl()
    );
    Ok(())
}

fn eval_grounding(a: &EvalArgs) -> anyhow::Result<()> {
    let kind = match a.kind {
        KindArg::Spatial => EvalKind::Spatial,
        KindArg::Temporal => EvalKind::Temporal,
        KindArg::Mc => EvalKind::Mc,
    };
    if a.tau.iter().any(|t| !(0.0..=1.0).contains(t)) {
        return Err(usage("--tau values must lie in [0, 1]"));
    }
    let preds: Vec<Prediction> = read_input(&a.pred)?;
    let gts: Vec<QARecord> = read_input(&a.gt)?;
    let report = evaluate(&preds, &gts, kind, &a.tau)?;
    let mut text = serde_json::to_string_pretty(&report)?;
    text.push('\n');
    fs::write(&a.report, text).with_context(|| format!("writing {}", a.report.display()))?;
    eprintln!("evaluated {} items, {} missing predictions", report.n, report.missing.len());
    Ok(())
}

pub fn dispatch(cli: &Cli) -> anyhow::Result<()> {
    match &cli.command {
        Command::Curate(CurateCommand::Filter(a)) => curate_filter(a),
        Command::Curate(CurateCommand::Segment(a)) => curate_segment(a),
        Command::Qa(QaCommand::Build(a)) => qa_build(a),
        Command::Reward(RewardCommand::Score(a)) => reward_score(a),
        Command::Grpo(GrpoCommand::TrainToy(a)) => grpo_train_toy(a),
        Command::Eval(EvalCommand::Grounding(a)) => eval_grounding(a),
    }
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let _ = env_logger::Builder::new().parse_filters(&cli.log_level).format_timestamp(None).try_init();
    match dispatch(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                EXIT_USAGE
            } else {
                EXIT_DATA
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn command_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn help_and_version_exit_zero() {
        assert_eq!(run(["egokit", "--help"]), EXIT_OK);
        assert_eq!(run(["egokit", "--version"]), EXIT_OK);
        assert_eq!(run(["egokit", "curate", "filter", "--help"]), EXIT_OK);
    }

    #[test]
    fn unknown_subcommand_is_usage_error() {
        assert_eq!(run(["egokit", "frobnicate"]), EXIT_USAGE);
        assert_eq!(run(["egokit"]), EXIT_USAGE);
    }

    #[test]
    fn help_lists_defaults() {
        let help = Cli::command()
            .find_subcommand_mut("curate")
            .unwrap()
            .find_subcommand_mut("filter")
            .unwrap()
            .render_long_help()
            .to_string();
        for needle in ["[default: 0.7]", "[default: 0.1]", "[default: 2]", "[default: 0.5]", "[default: 1]"] {
            assert!(help.contains(needle), "{needle} missing from {help}");
        }
    }
}
