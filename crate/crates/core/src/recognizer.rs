//! Step recognizers that turn a clip into text. [`MockRecognizer`] emits the
//! annotated step with seeded label noise and surface perturbations.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, VideoAnnotation};
use crate::graph::ProcGraph;
use crate::online::RecognizerEvent;
use crate::seed::rng_for;

#[derive(Debug, Error, PartialEq)]
pub enum RecognizerError {
    #[error("{name} must lie in [0, 1], got {value}")]
    InvalidRate { name: &'static str, value: f64 },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfusionScope {
    /// Wrong labels come from the clip's own task.
    #[default]
    TaskVocab,
    GlobalVocab,
}

impl std::str::FromStr for ConfusionScope {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "task" | "task_vocab" => Ok(Self::TaskVocab),
            "global" | "global_vocab" => Ok(Self::GlobalVocab),
            other => Err(format!("unknown confusion scope {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecognizerConfig {
    pub noise_rate: f64,
    pub paraphrase_rate: f64,
    pub confusion_scope: ConfusionScope,
    pub seed: u64,
}

impl Default for RecognizerConfig {
    fn default() -> Self {
        Self {
            noise_rate: 0.0,
            paraphrase_rate: 0.0,
            confusion_scope: ConfusionScope::TaskVocab,
            seed: 0,
        }
    }
}

impl RecognizerConfig {
    pub fn validate(&self) -> Result<(), RecognizerError> {
        for (name, value) in [
            ("noise_rate", self.noise_rate),
            ("paraphrase_rate", self.paraphrase_rate),
        ] {
            if !(0.0..=1.0).contains(&value) {
                return Err(RecognizerError::InvalidRate { name, value });
            }
        }
        Ok(())
    }
}

/// Identity of the clip being recognized.
#[derive(Debug, Clone, Copy)]
pub struct ClipRef<'a> {
    pub video_id: &'a str,
    pub task: &'a str,
    pub clip_index: usize,
}

pub trait Recognizer: Sync {
    /// Text for a clip whose annotated step is `truth`.
    fn recognize(&self, clip: ClipRef<'_>, truth: &str) -> String;

    fn recognize_video(&self, video: &VideoAnnotation) -> Vec<RecognizerEvent> {
        video
            .clips
            .iter()
            .enumerate()
            .map(|(i, c)| RecognizerEvent {
                clip_index: i,
                raw_text: self.recognize(
                    ClipRef {
                        video_id: &video.video_id,
                        task: &video.task,
                        clip_index: i,
                    },
                    &c.label,
                ),
                timestamp_s: c.end_s,
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct MockRecognizer {
    config: RecognizerConfig,
    global: Vec<String>,
    per_task: BTreeMap<String, Vec<String>>,
}

impl MockRecognizer {
    pub fn new(
        config: RecognizerConfig,
        per_task: BTreeMap<String, BTreeSet<String>>,
    ) -> Result<Self, RecognizerError> {
        config.validate()?;
        let global: BTreeSet<String> = per_task.values().flatten().cloned().collect();
        Ok(Self {
            config,
            global: global.into_iter().collect(),
            per_task: per_task
                .into_iter()
                .map(|(t, l)| (t, l.into_iter().collect()))
                .collect(),
        })
    }

    pub fn from_corpus(config: RecognizerConfig, corpus: &Corpus) -> Result<Self, RecognizerError> {
        let mut per_task: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for v in corpus.videos() {
            per_task
                .entry(v.task.clone())
                .or_default()
                .extend(v.labels().map(str::to_string));
        }
        Self::new(config, per_task)
    }

    pub fn from_graph(config: RecognizerConfig, g: &ProcGraph) -> Result<Self, RecognizerError> {
        let per_task = g
            .tasks()
            .map(|t| {
                (
                    t.to_string(),
                    g.task_labels(t).expect("listed task").clone(),
                )
            })
            .collect();
        Self::new(config, per_task)
    }

    pub fn config(&self) -> &RecognizerConfig {
        &self.config
    }

    fn scope(&self, task: &str) -> &[String] {
        match self.config.confusion_scope {
            ConfusionScope::TaskVocab => self.per_task.get(task).map_or(&[][..], Vec::as_slice),
            ConfusionScope::GlobalVocab => &self.global,
        }
    }
}

impl Recognizer for MockRecognizer {
    fn recognize(&self, clip: ClipRef<'_>, truth: &str) -> String {
        let mut rng = rng_for(
            self.config.seed,
            &[
                b"recognize",
                clip.video_id.as_bytes(),
                &(clip.clip_index as u64).to_le_bytes(),
            ],
        );
        // Every draw is made unconditionally and in a fixed order, so runs
        // that differ only in rates see the same random numbers per clip.
        let u_noise: f64 = rng.gen();
        let u_pick: f64 = rng.gen();
        let u_para: f64 = rng.gen();
        let style: u32 = rng.gen();

        let mut text = truth.to_string();
        if u_noise < self.config.noise_rate {
            let others: Vec<&String> = self
                .scope(clip.task)
                .iter()
                .filter(|l| *l != truth)
                .collect();
            if !others.is_empty() {
                let i = ((u_pick * others.len() as f64) as usize).min(others.len() - 1);
                text = others[i].clone();
            }
        }
        if u_para < self.config.paraphrase_rate {
            text = paraphrase(&text, style);
        }
        text
    }
}

/// Surface rewrite that [`crate::textmap::normalize`] undoes for normalized
/// input: ASCII casing, separators between words and trailing punctuation.
pub fn paraphrase(text: &str, style: u32) -> String {
    let words: Vec<&str> = text.split(' ').collect();
    let cased: Vec<String> = words
        .iter()
        .map(|w| match style % 3 {
            0 => w.to_ascii_uppercase(),
            1 => {
                let mut c = w.chars();
                match c.next() {
                    Some(f) => f.to_ascii_uppercase().to_string() + c.as_str(),
                    None => String::new(),
                }
            }
            _ => w.to_string(),
        })
        .collect();
    let sep = [" ", "  ", " - ", ", "][(style / 3 % 4) as usize];
    let tail = ["", ".", "!", "?", "..."][(style / 12 % 5) as usize];
    let lead = if style / 60 % 2 == 1 { "  " } else { "" };
    format!("{lead}{}{tail}", cased.join(sep))
}
