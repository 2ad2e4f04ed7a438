//! Error-detection datasets and graph-based detectors.
//!
//! Action errors replace one step with a step from outside its neighborhood;
//! order errors shuffle a video into an ordering no video of the same task
//! follows.

use std::collections::{BTreeSet, HashSet};
use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, VideoAnnotation};
use crate::graph::ProcGraph;
use crate::seed::rng_for;

pub const DEFAULT_MAX_ATTEMPTS: usize = 100;
pub const DEFAULT_CLEAN_FRACTION: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MistakeError {
    #[error("video {video_id:?}: no step can be replaced by an off-neighborhood step")]
    NoCorruptiblePosition { video_id: String },
    #[error("video {video_id:?}: needs at least 2 steps to shuffle")]
    TooShort { video_id: String },
    #[error("video {video_id:?}: no unseen ordering found in {attempts} attempts")]
    ExhaustedAttempts { video_id: String, attempts: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MistakeKind {
    ActionError,
    OrderError,
    Clean,
}

/// Corrupted index for action errors, `is_shuffled` for order samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GroundTruth {
    Index(usize),
    Shuffled(bool),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MistakeSample {
    pub video_id: String,
    pub task: String,
    pub sequence: Vec<String>,
    pub kind: MistakeKind,
    pub ground_truth: GroundTruth,
}

/// Steps that may replace `v`: graph nodes outside `N(v) ∪ {v}`. A label the
/// graph has never seen has no neighbors.
fn replacement_pool<'g>(g: &'g ProcGraph, v: &str) -> Vec<&'g str> {
    let near = g.neighbors(v).unwrap_or_default();
    g.nodes()
        .iter()
        .filter(|x| *x != v && !near.contains(x))
        .collect()
}

pub fn synth_action_error(
    video: &VideoAnnotation,
    g: &ProcGraph,
    seed: u64,
) -> Result<MistakeSample, MistakeError> {
    let mut rng = rng_for(seed, &[b"action_error", video.video_id.as_bytes()]);
    let mut sequence = video.label_sequence();
    let pools: Vec<(usize, Vec<&str>)> = sequence
        .iter()
        .enumerate()
        .map(|(i, v)| (i, replacement_pool(g, v)))
        .filter(|(_, p)| !p.is_empty())
        .collect();
    let (t, pool) = pools
        .choose(&mut rng)
        .ok_or_else(|| MistakeError::NoCorruptiblePosition {
            video_id: video.video_id.clone(),
        })?;
    sequence[*t] = pool[rng.gen_range(0..pool.len())].to_string();
    Ok(MistakeSample {
        video_id: video.video_id.clone(),
        task: video.task.clone(),
        sequence,
        kind: MistakeKind::ActionError,
        ground_truth: GroundTruth::Index(*t),
    })
}

/// Label sequences of every video of `task` in `corpus`.
pub fn task_orderings(corpus: &Corpus, task: &str) -> HashSet<Vec<String>> {
    corpus
        .videos()
        .iter()
        .filter(|v| v.task == task)
        .map(VideoAnnotation::label_sequence)
        .collect()
}

pub fn synth_order_error(
    video: &VideoAnnotation,
    corpus: &Corpus,
    seed: u64,
    max_attempts: usize,
) -> Result<MistakeSample, MistakeError> {
    let mut seen = task_orderings(corpus, &video.task);
    synth_order_error_against(video, &mut seen, seed, max_attempts)
}

fn synth_order_error_against(
    video: &VideoAnnotation,
    seen: &mut HashSet<Vec<String>>,
    seed: u64,
    max_attempts: usize,
) -> Result<MistakeSample, MistakeError> {
    if video.clips.len() < 2 {
        return Err(MistakeError::TooShort {
            video_id: video.video_id.clone(),
        });
    }
    let original = video.label_sequence();
    seen.insert(original.clone());
    let mut rng = rng_for(seed, &[b"order_error", video.video_id.as_bytes()]);
    let mut candidate = original;
    for _ in 0..max_attempts {
        candidate.shuffle(&mut rng);
        if !seen.contains(&candidate) {
            return Ok(MistakeSample {
                video_id: video.video_id.clone(),
                task: video.task.clone(),
                sequence: candidate,
                kind: MistakeKind::OrderError,
                ground_truth: GroundTruth::Shuffled(true),
            });
        }
    }
    Err(MistakeError::ExhaustedAttempts {
        video_id: video.video_id.clone(),
        attempts: max_attempts,
    })
}

/// Edge evidence for each position: the incoming plus the outgoing
/// transition count. The first position's incoming evidence is how often its
/// label opens a video; the last position's outgoing evidence is how often
/// its label closes one.
pub fn position_support<S: AsRef<str>>(sequence: &[S], g: &ProcGraph) -> Vec<u64> {
    let n = sequence.len();
    (0..n)
        .map(|i| {
            let v = sequence[i].as_ref();
            let incoming = if i == 0 {
                g.first_count(v, None)
            } else {
                g.edge_count(sequence[i - 1].as_ref(), v, None)
            };
            let outgoing = if i + 1 == n {
                g.last_count(v, None)
            } else {
                g.edge_count(v, sequence[i + 1].as_ref(), None)
            };
            incoming + outgoing
        })
        .collect()
}

/// Position with the least support; ties go to the smallest index. `None`
/// only for an empty sequence.
pub fn detect_action_error<S: AsRef<str>>(sequence: &[S], g: &ProcGraph) -> Option<usize> {
    position_support(sequence, g)
        .into_iter()
        .enumerate()
        .min_by_key(|&(i, s)| (s, i))
        .map(|(i, _)| i)
}

/// True when every consecutive pair was observed in `g` (within `task` when
/// given).
pub fn detect_order_error<S: AsRef<str>>(
    sequence: &[S],
    g: &ProcGraph,
    task: Option<&str>,
) -> bool {
    sequence
        .windows(2)
        .all(|w| g.edge_count(w[0].as_ref(), w[1].as_ref(), task) > 0)
}

#[derive(Debug, Default)]
pub struct MistakeBatch {
    pub samples: Vec<MistakeSample>,
    pub failures: Vec<MistakeError>,
}

impl MistakeBatch {
    fn collect(results: Vec<Result<MistakeSample, MistakeError>>) -> Self {
        let mut batch = Self::default();
        for r in results {
            match r {
                Ok(s) => batch.samples.push(s),
                Err(e) => batch.failures.push(e),
            }
        }
        batch
    }
}

/// One action-error sample per video, in corpus order.
pub fn build_action_dataset(videos: &Corpus, g: &ProcGraph, seed: u64) -> MistakeBatch {
    MistakeBatch::collect(
        videos
            .videos()
            .par_iter()
            .map(|v| synth_action_error(v, g, seed))
            .collect(),
    )
}

/// One order sample per video: with probability `clean_fraction` the video
/// as annotated, otherwise a shuffle unseen among `reference`'s videos of the
/// same task (and among `videos` themselves).
pub fn build_order_dataset(
    videos: &Corpus,
    reference: &Corpus,
    clean_fraction: f64,
    seed: u64,
    max_attempts: usize,
) -> MistakeBatch {
    let tasks: BTreeSet<&str> = videos.tasks();
    let orderings: std::collections::BTreeMap<&str, HashSet<Vec<String>>> = tasks
        .iter()
        .map(|t| {
            let mut s = task_orderings(reference, t);
            s.extend(task_orderings(videos, t));
            (*t, s)
        })
        .collect();
    MistakeBatch::collect(
        videos
            .videos()
            .par_iter()
            .map(|v| {
                let mut rng = rng_for(seed, &[b"order_clean", v.video_id.as_bytes()]);
                if rng.gen::<f64>() < clean_fraction {
                    return Ok(MistakeSample {
                        video_id: v.video_id.clone(),
                        task: v.task.clone(),
                        sequence: v.label_sequence(),
                        kind: MistakeKind::Clean,
                        ground_truth: GroundTruth::Shuffled(false),
                    });
                }
                let mut seen = orderings[v.task.as_str()].clone();
                synth_order_error_against(v, &mut seen, seed, max_attempts)
            })
            .collect(),
    )
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Detection {
    pub video_id: String,
    pub prediction: GroundTruth,
    pub gold: GroundTruth,
    pub correct: bool,
}

/// Runs the matching detector on each sample. Order predictions are
/// `is_shuffled`, the negation of "correctly ordered".
pub fn detect_samples(samples: &[MistakeSample], g: &ProcGraph, use_task: bool) -> Vec<Detection> {
    samples
        .iter()
        .map(|s| {
            let prediction = match s.ground_truth {
                GroundTruth::Index(_) => {
                    GroundTruth::Index(detect_action_error(&s.sequence, g).unwrap_or(0))
                }
                GroundTruth::Shuffled(_) => {
                    let task = use_task.then_some(s.task.as_str());
                    GroundTruth::Shuffled(!detect_order_error(&s.sequence, g, task))
                }
            };
            Detection {
                video_id: s.video_id.clone(),
                prediction,
                gold: s.ground_truth,
                correct: prediction == s.ground_truth,
            }
        })
        .collect()
}

pub fn detection_accuracy(detections: &[Detection]) -> f64 {
    if detections.is_empty() {
        return 0.0;
    }
    detections.iter().filter(|d| d.correct).count() as f64 / detections.len() as f64
}

pub fn write_samples<W: Write>(samples: &[MistakeSample], mut out: W) -> std::io::Result<()> {
    for s in samples {
        serde_json::to_writer(&mut out, s)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn parse_samples<R: std::io::BufRead>(
    reader: R,
) -> Result<Vec<MistakeSample>, (usize, String)> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| (i + 1, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| (i + 1, e.to_string()))?);
    }
    Ok(out)
}
