//! Regenerates the 50-clip smoke fixture.
//!
//!     cargo run -p egokit --example make_fixture -- crates/core/tests/fixtures/smoke
//!
//! Writes the clip records, canned annotator responses, model predictions
//! and a small multiple-choice set. Golden pipeline outputs are produced
//! separately by the smoke test with `UPDATE_GOLDEN=1`.

use std::path::{Path, PathBuf};

use egokit::curation::{run_pipeline, segment_long_term, FilterConfig, SegmentConfig};
use egokit::jsonl::write_jsonl_file;
use egokit::model::{BBox, ClipRecord, FrameDetections, Prediction, QARecord, QuestionType, Split, TimeInterval};
use egokit::qa::{
    build_prompt, prompt_key, run_split, template, CannedResponse, CaptionSource, GenerationSettings, MockAnnotator,
    SourceRecord, SplitConfig,
};
use egokit::structured_output::{render_box, render_interval, render_response};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEED: u64 = 2024;

#[derive(Clone, Copy, PartialEq)]
enum Fate {
    Keep,
    LowEgo,
    NoEgo,
    Short,
    ManyHands,
    FewObjects,
    Static,
    Invalid,
}

fn fate(i: usize) -> Fate {
    match i {
        41 | 45 => Fate::LowEgo,
        47 => Fate::NoEgo,
        33 | 44 => Fate::Short,
        36 | 48 => Fate::ManyHands,
        38 | 42 => Fate::FewObjects,
        31 | 39 | 46 => Fate::Static,
        49 => Fate::Invalid,
        _ => Fate::Keep,
    }
}

const HANDS: [&str; 2] = ["left hand", "right hand"];
const VERBS: [&str; 8] = ["picks up", "opens", "rinses", "cuts", "stirs", "places", "wipes", "pours"];
const OBJECTS: [&str; 8] =
    ["the knife", "the drawer", "a mug", "the onion", "the pot", "a plate", "the counter", "the kettle"];

fn r3(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

fn r2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

fn hand_box(cx: f64, cy: f64) -> BBox {
    BBox { x_min: r3(cx - 0.04), y_min: r3(cy - 0.06), x_max: r3(cx + 0.04), y_max: r3(cy + 0.06) }
}

fn make_clips(rng: &mut ChaCha8Rng) -> Vec<ClipRecord> {
    let mut clips = Vec::with_capacity(50);
    for v in 0..5 {
        let mut t = r2(rng.random_range(0.0..3.0));
        for k in 0..10 {
            let i = v * 10 + k;
            let fate = fate(i);
            let dur = if fate == Fate::Short { 1.5 } else { r2(rng.random_range(3.5..7.0)) };
            let interval = TimeInterval { start_s: t, end_s: r2(t + dur) };
            t = r2(interval.end_s + [0.0, 0.2, 0.4][rng.random_range(0..3)]);

            let n_frames = 6;
            let (x0, y0) = (rng.random_range(0.2..0.8), rng.random_range(0.3..0.7));
            let (dx, dy) = if fate == Fate::Static {
                (0.01, 0.0)
            } else {
                (
                    rng.random_range(0.12..0.25) * if rng.random_bool(0.5) { 1.0 } else { -1.0 },
                    rng.random_range(-0.1..0.1),
                )
            };
            let frames = (0..n_frames)
                .map(|f| {
                    let a = f as f64 / (n_frames - 1) as f64;
                    let (cx, cy) = ((x0 + a * dx).clamp(0.1, 0.9), (y0 + a * dy).clamp(0.1, 0.9));
                    let mut hand_boxes = vec![hand_box(cx, cy)];
                    if f % 2 == 1 {
                        hand_boxes.push(hand_box(1.0 - cx, cy));
                    }
                    if fate == Fate::ManyHands && f == 3 {
                        hand_boxes.push(hand_box(0.5, 0.85));
                    }
                    let n_obj = if fate == Fate::FewObjects { usize::from(f == 0) } else { 1 + f % 2 };
                    let object_boxes = (0..n_obj)
                        .map(|o| {
                            let ox = 0.15 + 0.3 * o as f64 + rng.random_range(0.0..0.2);
                            let oy = rng.random_range(0.2..0.6);
                            BBox { x_min: r3(ox), y_min: r3(oy), x_max: r3(ox + 0.15), y_max: r3(oy + 0.2) }
                        })
                        .collect();
                    let mut timestamp_s = r2(interval.start_s + a * interval.duration());
                    if fate == Fate::Invalid && f == 5 {
                        timestamp_s = r2(interval.end_s + 1.0);
                    }
                    FrameDetections {
                        frame_index: (timestamp_s * 30.0).round() as u64,
                        timestamp_s,
                        hand_boxes,
                        object_boxes,
                        image_w: 1920,
                        image_h: 1080,
                    }
                })
                .collect();

            let ego_score = match fate {
                Fate::NoEgo => None,
                Fate::LowEgo => Some(r2(rng.random_range(0.1..0.45))),
                _ => Some(r2(rng.random_range(0.55..0.99))),
            };
            let hand = HANDS[rng.random_range(0..2)];
            let verb = VERBS[rng.random_range(0..VERBS.len())];
            let object = OBJECTS[rng.random_range(0..OBJECTS.len())];
            let narration = (i != 5 && i != 17).then(|| format!("{hand} {verb} {object}"));
            let caption = Some(format!(
                "The camera wearer {verb} {object} with the {hand} while standing at the kitchen counter."
            ));
            clips.push(ClipRecord {
                clip_id: format!("v{v}_c{k:02}"),
                video_id: format!("v{v}"),
                interval,
                frames,
                ego_score,
                caption,
                narration,
            });
        }
    }
    clips
}

fn canned(req_prompt: &str, text: String) -> CannedResponse {
    CannedResponse { prompt_sha256: prompt_key(req_prompt), text }
}

fn fg_canned(kept: &[ClipRecord]) -> Vec<CannedResponse> {
    let mut out = Vec::new();
    let settings = GenerationSettings::default();
    // faults are placed by position among the narrated clips
    let narrated = kept.iter().filter_map(|c| c.narration.as_deref().map(|n| (c, n)));
    for (n, (clip, narr)) in narrated.enumerate() {
        let src = SourceRecord::Clip(clip.clone());

        let mid = &clip.frames[clip.frames.len() / 2];
        let answer = if n == 3 { "(0.500,0.500)".to_owned() } else { render_box(&mid.hand_boxes[0]) };
        let req =
            build_prompt(template(QuestionType::HandObjectGrounding), &src, CaptionSource::Both, Some(narr), settings)
                .unwrap();
        // one clip deliberately has no canned answer
        if n != 7 {
            let rationale = format!(
                "The {} is visible near the middle of the frame.",
                narr.split(' ').take(2).collect::<Vec<_>>().join(" ")
            );
            out.push(canned(
                &req.user_prompt,
                serde_json::json!({ "answer": answer, "rationale": rationale }).to_string(),
            ));
        }

        let d = clip.duration();
        let iv =
            TimeInterval { start_s: r2(clip.interval.start_s + 0.2 * d), end_s: r2(clip.interval.start_s + 0.8 * d) };
        let answer = if n == 5 { format!("({:.2},{:.2})", iv.end_s, iv.start_s) } else { render_interval(&iv) };
        let req = build_prompt(
            template(QuestionType::FineGrainedTemporalGrounding),
            &src,
            CaptionSource::Both,
            Some(narr),
            settings,
        )
        .unwrap();
        let text = if n == 9 {
            format!("```json\n{}\n```", serde_json::json!({ "answer": answer }))
        } else {
            serde_json::json!({ "answer": answer, "rationale": "The action spans the middle of the clip." }).to_string()
        };
        out.push(canned(&req.user_prompt, text));
    }
    out
}

fn long_canned(segments: &[SourceRecord]) -> Vec<CannedResponse> {
    let mut out = Vec::new();
    for (n, seg) in segments.iter().enumerate() {
        for (k, q) in Split::Long.question_types().enumerate() {
            let req = build_prompt(template(q), seg, CaptionSource::Both, None, GenerationSettings::default()).unwrap();
            let answer = if n == 0 && k == 2 { String::new() } else { format!("Answer {k} for {}.", seg.id()) };
            let text = serde_json::json!({
                "question": format!("What {} happens in {}?", q.display_name(), seg.id()),
                "answer": answer,
            });
            out.push(canned(&req.user_prompt, text.to_string()));
        }
    }
    out
}

fn jitter_box(rng: &mut ChaCha8Rng, b: &BBox) -> BBox {
    let s = rng.random_range(-0.05..0.05);
    let t = rng.random_range(-0.05..0.05);
    let g = rng.random_range(-0.02..0.03);
    BBox {
        x_min: r3((b.x_min + s - g).clamp(0.0, 1.0)),
        y_min: r3((b.y_min + t - g).clamp(0.0, 1.0)),
        x_max: r3((b.x_max + s + g).clamp(0.0, 1.0)),
        y_max: r3((b.y_max + t + g).clamp(0.0, 1.0)),
    }
}

fn predictions(rng: &mut ChaCha8Rng, records: &[QARecord]) -> Vec<Prediction> {
    let mut out = Vec::new();
    for (n, r) in records.iter().enumerate() {
        if n % 9 == 4 {
            continue;
        }
        let answer = match (r.gt_box, r.gt_interval) {
            (Some(b), _) => render_box(&jitter_box(rng, &b)),
            (_, Some(iv)) => {
                let shift = rng.random_range(-1.5..1.5);
                let stretch = rng.random_range(-0.5..0.8);
                render_interval(&TimeInterval {
                    start_s: iv.start_s + shift - stretch,
                    end_s: iv.end_s + shift + stretch,
                })
            }
            _ => unreachable!("grounding records only"),
        };
        let response_text = match n % 11 {
            6 => format!("<answer>{answer}</answer>"),
            8 => "<think>I cannot tell.</think><answer>somewhere on the left</answer>".to_owned(),
            _ => render_response("The target is where the narration places it.", &answer),
        };
        out.push(Prediction { qa_id: r.qa_id.clone(), response_text });
    }
    out
}

fn mc_fixture(rng: &mut ChaCha8Rng) -> (Vec<QARecord>, Vec<Prediction>) {
    let types = [
        QuestionType::ObjectCount,
        QuestionType::ActionDescription,
        QuestionType::ActionSequence,
        QuestionType::ActionSummary,
    ];
    let mut gts = Vec::new();
    let mut preds = Vec::new();
    for i in 0..12 {
        let q = types[i % types.len()];
        let letter = ['A', 'B', 'C', 'D'][rng.random_range(0..4)];
        let qa_id = format!("mc-{i:03}");
        gts.push(QARecord {
            qa_id: qa_id.clone(),
            clip_ids: vec![format!("v{}_c{:02}", i % 5, i)],
            split: q.split(),
            question_type: q,
            question: format!("Question {i}? (A) one (B) two (C) three (D) four"),
            answer: letter.to_string(),
            rationale: None,
            gt_box: None,
            gt_interval: None,
        });
        let guess = if rng.random_bool(0.6) { letter } else { ['A', 'B', 'C', 'D'][rng.random_range(0..4)] };
        let response_text = match i % 4 {
            0 => guess.to_string(),
            1 => format!("({guess}) option text"),
            2 => format!("<think>Counting.</think><answer>{}</answer>", guess.to_ascii_lowercase()),
            _ => format!("{guess}."),
        };
        if i != 10 {
            preds.push(Prediction { qa_id, response_text });
        }
    }
    (gts, preds)
}

fn main() {
    let dir: PathBuf = std::env::args().nth(1).unwrap_or_else(|| "crates/core/tests/fixtures/smoke".into()).into();
    std::fs::create_dir_all(&dir).unwrap();
    let write = |name: &str, f: &dyn Fn(&Path)| f(&dir.join(name));
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);

    let clips = make_clips(&mut rng);
    let decisions = run_pipeline(&clips, &FilterConfig::default()).unwrap();
    let kept: Vec<ClipRecord> = clips.iter().zip(&decisions).filter(|(_, d)| d.kept).map(|(c, _)| c.clone()).collect();
    let segments: Vec<SourceRecord> =
        segment_long_term(&kept, &SegmentConfig::default()).into_iter().map(SourceRecord::Segment).collect();
    eprintln!("{} clips, {} kept, {} segments", clips.len(), kept.len(), segments.len());

    let mut responses = fg_canned(&kept);
    responses.extend(long_canned(&segments));
    write("clips.jsonl", &|p| write_jsonl_file(p, &clips).unwrap());
    write("canned.jsonl", &|p| write_jsonl_file(p, &responses).unwrap());

    let mock = MockAnnotator::new(responses.clone());
    let cfg = SplitConfig { backoff_base_ms: 0, ..SplitConfig::default() };
    let kept_src: Vec<SourceRecord> = kept.into_iter().map(SourceRecord::Clip).collect();
    let spatial = run_split(&kept_src, Split::FgSpatial, &mock, &cfg).records;
    let temporal = run_split(&kept_src, Split::FgTemporal, &mock, &cfg).records;
    let pred_spatial = predictions(&mut rng, &spatial);
    let pred_temporal = predictions(&mut rng, &temporal);
    write("pred_spatial.jsonl", &|p| write_jsonl_file(p, &pred_spatial).unwrap());
    write("pred_temporal.jsonl", &|p| write_jsonl_file(p, &pred_temporal).unwrap());

    let (mc_gt, mc_pred) = mc_fixture(&mut rng);
    write("mc_gt.jsonl", &|p| write_jsonl_file(p, &mc_gt).unwrap());
    write("mc_pred.jsonl", &|p| write_jsonl_file(p, &mc_pred).unwrap());
}
