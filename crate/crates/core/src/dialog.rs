//! Streaming-dialog samples generated from a video and the procedural graph.
//!
//! Three kinds:
//! - narration: for every clip, `stream / user question / assistant = step`;
//! - negative choice: the user proposes a step outside the true step's
//!   neighborhood and the assistant corrects it;
//! - multiple choice: the user offers the neighbors of the previous step and
//!   the assistant confirms the true one.

use std::collections::BTreeSet;
use std::io::Write;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, VideoAnnotation};
use crate::graph::{GraphError, ProcGraph};
use crate::seed::rng_for;

pub const DEFAULT_QUESTION: &str = "what should I do next?";

#[derive(Debug, Error)]
pub enum DialogError {
    #[error("video {video_id:?} clip {clip_index}: step {label:?} is not a graph node")]
    UnknownNode {
        video_id: String,
        clip_index: usize,
        label: String,
    },
    #[error(
        "video {video_id:?} clip {clip_index}: {label:?} is not a neighbor of the previous step"
    )]
    CorrectOptionMissing {
        video_id: String,
        clip_index: usize,
        label: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Stream,
    User,
    Assistant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DialogKind {
    Narration,
    NegativeChoice,
    MultipleChoice,
}

impl std::str::FromStr for DialogKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "narration" => Ok(Self::Narration),
            "negative" | "negative_choice" => Ok(Self::NegativeChoice),
            "multichoice" | "multiple_choice" => Ok(Self::MultipleChoice),
            other => Err(format!("unknown dialog kind {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub role: Role,
    pub content: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip_index: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogSample {
    pub video_id: String,
    pub kind: DialogKind,
    pub turns: Vec<Turn>,
    /// Steps offered to the user: the proposed negative, or the
    /// multiple-choice options in presentation order.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub options: Vec<String>,
}

impl DialogSample {
    /// Ground-truth steps carried by the sample, one per triple.
    pub fn answers(&self) -> impl Iterator<Item = &str> + '_ {
        self.turns
            .iter()
            .filter(|t| t.role == Role::Assistant)
            .map(|t| t.content.as_str())
    }
}

pub fn negative_answer(step: &str) -> String {
    format!("No, you should do {step} instead.")
}

pub fn multiple_choice_answer(step: &str) -> String {
    format!("Yes, please do {step}.")
}

fn stream_turn(video: &VideoAnnotation, t: usize) -> Turn {
    let c = &video.clips[t];
    Turn {
        role: Role::Stream,
        content: format!("{}#{} [{}s, {}s]", video.video_id, t, c.start_s, c.end_s),
        clip_index: Some(t),
    }
}

fn triple(video: &VideoAnnotation, t: usize, user: String, assistant: String) -> [Turn; 3] {
    [
        stream_turn(video, t),
        Turn {
            role: Role::User,
            content: user,
            clip_index: Some(t),
        },
        Turn {
            role: Role::Assistant,
            content: assistant,
            clip_index: Some(t),
        },
    ]
}

fn require_nodes(video: &VideoAnnotation, g: &ProcGraph) -> Result<(), DialogError> {
    match video.labels().enumerate().find(|(_, l)| !g.contains(l)) {
        Some((i, l)) => Err(DialogError::UnknownNode {
            video_id: video.video_id.clone(),
            clip_index: i,
            label: l.to_string(),
        }),
        None => Ok(()),
    }
}

/// `V_G \ (N(v) ∪ {v})`, sorted.
pub fn negative_pool<'g>(g: &'g ProcGraph, v: &str) -> Result<Vec<&'g str>, GraphError> {
    let near = g.neighbors(v)?;
    Ok(g.nodes()
        .iter()
        .filter(|x| *x != v && !near.contains(x))
        .collect())
}

/// One stream/user/assistant triple per clip; the assistant names the step.
pub fn gen_narration(
    video: &VideoAnnotation,
    g: &ProcGraph,
    question: &str,
) -> Result<DialogSample, DialogError> {
    require_nodes(video, g)?;
    let turns = (0..video.clips.len())
        .flat_map(|t| triple(video, t, question.to_string(), video.clips[t].label.clone()))
        .collect();
    Ok(DialogSample {
        video_id: video.video_id.clone(),
        kind: DialogKind::Narration,
        turns,
        options: Vec::new(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedClip {
    pub clip_index: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NegativeChoiceOutput {
    pub samples: Vec<DialogSample>,
    /// Clips whose negative pool was empty.
    pub skipped: Vec<SkippedClip>,
}

/// Up to `negatives_per_clip` distinct negatives per clip, drawn uniformly
/// from the clip's negative pool.
pub fn gen_negative_choice(
    video: &VideoAnnotation,
    g: &ProcGraph,
    question: &str,
    negatives_per_clip: usize,
    seed: u64,
) -> Result<NegativeChoiceOutput, DialogError> {
    require_nodes(video, g)?;
    let mut rng = rng_for(seed, &[b"negative", video.video_id.as_bytes()]);
    let mut out = NegativeChoiceOutput::default();
    for (t, label) in video.labels().enumerate() {
        let pool = negative_pool(g, label).expect("labels checked against graph");
        if pool.is_empty() {
            out.skipped.push(SkippedClip { clip_index: t });
            continue;
        }
        let k = negatives_per_clip.min(pool.len());
        for i in sample(&mut rng, pool.len(), k).into_iter() {
            let neg = pool[i];
            out.samples.push(DialogSample {
                video_id: video.video_id.clone(),
                kind: DialogKind::NegativeChoice,
                turns: triple(
                    video,
                    t,
                    format!("{question}, should I {neg}?"),
                    negative_answer(label),
                )
                .into(),
                options: vec![neg.to_string()],
            });
        }
    }
    Ok(out)
}

/// One sample per clip after the first; options are the neighbors of the
/// previous step in seeded shuffled order.
pub fn gen_multiple_choice(
    video: &VideoAnnotation,
    g: &ProcGraph,
    question: &str,
    seed: u64,
) -> Result<Vec<DialogSample>, DialogError> {
    require_nodes(video, g)?;
    let mut rng = rng_for(seed, &[b"multichoice", video.video_id.as_bytes()]);
    let labels = video.label_sequence();
    let mut samples = Vec::with_capacity(labels.len().saturating_sub(1));
    for t in 1..labels.len() {
        let near: BTreeSet<&str> = g
            .neighbors(&labels[t - 1])
            .expect("labels checked against graph");
        if !near.contains(labels[t].as_str()) {
            return Err(DialogError::CorrectOptionMissing {
                video_id: video.video_id.clone(),
                clip_index: t,
                label: labels[t].clone(),
            });
        }
        let mut options: Vec<String> = near.into_iter().map(str::to_string).collect();
        options.shuffle(&mut rng);
        samples.push(DialogSample {
            video_id: video.video_id.clone(),
            kind: DialogKind::MultipleChoice,
            turns: triple(
                video,
                t,
                format!("{question}, in one of {}", options.join(", ")),
                multiple_choice_answer(&labels[t]),
            )
            .into(),
            options,
        });
    }
    Ok(samples)
}

#[derive(Debug, Default)]
pub struct DialogBatch {
    pub samples: Vec<DialogSample>,
    pub skipped: Vec<(String, SkippedClip)>,
    pub errors: Vec<DialogError>,
}

/// Generates `kind` samples for every video, in corpus order. Videos are
/// processed in parallel; each draws from its own seed stream, so the output
/// does not depend on scheduling. Per-video failures are collected, not
/// fatal.
pub fn gen_dialog_corpus(
    corpus: &Corpus,
    g: &ProcGraph,
    kind: DialogKind,
    question: &str,
    negatives_per_clip: usize,
    seed: u64,
) -> DialogBatch {
    type VideoOutput = Result<(Vec<DialogSample>, Vec<SkippedClip>), DialogError>;
    let per_video: Vec<VideoOutput> = corpus
        .videos()
        .par_iter()
        .map(|v| match kind {
            DialogKind::Narration => gen_narration(v, g, question).map(|s| (vec![s], vec![])),
            DialogKind::NegativeChoice => {
                gen_negative_choice(v, g, question, negatives_per_clip, seed)
                    .map(|o| (o.samples, o.skipped))
            }
            DialogKind::MultipleChoice => {
                gen_multiple_choice(v, g, question, seed).map(|s| (s, vec![]))
            }
        })
        .collect();
    let mut batch = DialogBatch::default();
    for (v, r) in corpus.videos().iter().zip(per_video) {
        match r {
            Ok((samples, skipped)) => {
                batch.samples.extend(samples);
                batch
                    .skipped
                    .extend(skipped.into_iter().map(|s| (v.video_id.clone(), s)));
            }
            Err(e) => batch.errors.push(e),
        }
    }
    batch
}

pub fn write_samples<W: Write>(samples: &[DialogSample], mut out: W) -> std::io::Result<()> {
    for s in samples {
        serde_json::to_writer(&mut out, s)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
