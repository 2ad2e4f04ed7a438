//! Step-annotated video corpora: ingestion, validation and statistics.
//!
//! A corpus file holds one JSON object per line:
//!
//! ```text
//! {"video_id":"v1","task":"make latte","clips":[{"label":"add milk","start_s":0.0,"end_s":5.0}]}
//! ```
//!
//! Labels and task names are normalized at ingestion (see
//! [`crate::textmap::normalize`]) so that label identity here matches node
//! identity in the procedural graph.

mod stats;
mod synth;

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed::rng_from_seed;
use crate::textmap::normalize;

pub use stats::{compute_stats, CorpusStats};
pub use synth::{
    bayes_optimal_next_accuracy, expected_transitions, generate_synthetic_corpus, BranchingModel,
    GeneratorSpec, MarkovChain, SyntheticCorpus,
};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("video {video_id:?}: {problem}")]
    Validation {
        video_id: String,
        problem: ValidationProblem,
    },
    #[error("invalid generator spec: {0}")]
    Spec(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ValidationProblem {
    #[error("empty video id")]
    EmptyVideoId,
    #[error("duplicate video id")]
    DuplicateVideoId,
    #[error("task name is empty after normalization")]
    EmptyTask,
    #[error("video has no clips")]
    NoClips,
    #[error("clip {clip} label is empty after normalization")]
    EmptyLabel { clip: usize },
    #[error("clip {clip} has invalid times [{start_s}, {end_s}]")]
    BadTimes {
        clip: usize,
        start_s: f64,
        end_s: f64,
    },
    #[error("clip {clip} overlaps or precedes clip {prev}")]
    Overlap { prev: usize, clip: usize },
    #[error("video id also present in the other split")]
    SharedAcrossSplits,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionClip {
    pub label: String,
    pub start_s: f64,
    pub end_s: f64,
}

impl ActionClip {
    pub fn new(label: impl AsRef<str>, start_s: f64, end_s: f64) -> Self {
        Self {
            label: normalize(label.as_ref()),
            start_s,
            end_s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoAnnotation {
    pub video_id: String,
    pub task: String,
    pub clips: Vec<ActionClip>,
}

impl VideoAnnotation {
    /// Builds a video from normalized-on-entry labels, laying clips out at
    /// unit intervals. Mostly useful in tests and fixtures.
    pub fn from_labels<S: AsRef<str>>(video_id: &str, task: &str, labels: &[S]) -> Self {
        let clips = labels
            .iter()
            .enumerate()
            .map(|(i, l)| ActionClip::new(l, i as f64, i as f64 + 1.0))
            .collect();
        Self {
            video_id: video_id.to_string(),
            task: normalize(task),
            clips,
        }
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> + '_ {
        self.clips.iter().map(|c| c.label.as_str())
    }

    pub fn label_sequence(&self) -> Vec<String> {
        self.labels().map(str::to_string).collect()
    }

    fn normalize_in_place(&mut self) {
        self.task = normalize(&self.task);
        for c in &mut self.clips {
            c.label = normalize(&c.label);
        }
    }

    pub fn validate(&self) -> Result<(), ValidationProblem> {
        if self.video_id.is_empty() {
            return Err(ValidationProblem::EmptyVideoId);
        }
        if self.task.is_empty() {
            return Err(ValidationProblem::EmptyTask);
        }
        if self.clips.is_empty() {
            return Err(ValidationProblem::NoClips);
        }
        for (i, c) in self.clips.iter().enumerate() {
            if c.label.is_empty() {
                return Err(ValidationProblem::EmptyLabel { clip: i });
            }
            if !(c.start_s.is_finite() && c.end_s.is_finite())
                || c.start_s < 0.0
                || c.end_s <= c.start_s
            {
                return Err(ValidationProblem::BadTimes {
                    clip: i,
                    start_s: c.start_s,
                    end_s: c.end_s,
                });
            }
            if i > 0 && self.clips[i - 1].end_s > c.start_s {
                return Err(ValidationProblem::Overlap {
                    prev: i - 1,
                    clip: i,
                });
            }
        }
        Ok(())
    }
}

/// A validated, immutable collection of videos from one split.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    videos: Vec<VideoAnnotation>,
    split: Split,
}

impl Corpus {
    /// Normalizes labels and validates every video.
    pub fn new(mut videos: Vec<VideoAnnotation>, split: Split) -> Result<Self, CorpusError> {
        let mut seen = BTreeSet::new();
        for v in &mut videos {
            v.normalize_in_place();
            let invalid = |problem| CorpusError::Validation {
                video_id: v.video_id.clone(),
                problem,
            };
            v.validate().map_err(invalid)?;
            if !seen.insert(v.video_id.clone()) {
                return Err(invalid(ValidationProblem::DuplicateVideoId));
            }
        }
        Ok(Self { videos, split })
    }

    pub fn empty(split: Split) -> Self {
        Self {
            videos: Vec::new(),
            split,
        }
    }

    pub fn videos(&self) -> &[VideoAnnotation] {
        &self.videos
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn len(&self) -> usize {
        self.videos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.videos.is_empty()
    }

    pub fn get(&self, video_id: &str) -> Option<&VideoAnnotation> {
        self.videos.iter().find(|v| v.video_id == video_id)
    }

    pub fn tasks(&self) -> BTreeSet<&str> {
        self.videos.iter().map(|v| v.task.as_str()).collect()
    }

    pub fn labels(&self) -> BTreeSet<&str> {
        self.videos.iter().flat_map(|v| v.labels()).collect()
    }

    pub fn n_clips(&self) -> usize {
        self.videos.iter().map(|v| v.clips.len()).sum()
    }

    /// Keeps only the videos whose id is in `ids`, preserving order.
    pub fn filter_ids<'a, I>(&self, ids: I) -> Corpus
    where
        I: IntoIterator<Item = &'a str>,
    {
        let keep: BTreeSet<&str> = ids.into_iter().collect();
        Corpus {
            videos: self
                .videos
                .iter()
                .filter(|v| keep.contains(v.video_id.as_str()))
                .cloned()
                .collect(),
            split: self.split,
        }
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }

    pub fn into_videos(self) -> Vec<VideoAnnotation> {
        self.videos
    }
}

/// Parses annotation lines. Blank lines are skipped; line numbers are 1-based.
pub fn parse_corpus<R: BufRead>(reader: R, split: Split) -> Result<Corpus, CorpusError> {
    let mut videos = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| CorpusError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let video: VideoAnnotation =
            serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
        videos.push(video);
    }
    Corpus::new(videos, split)
}

pub fn load_corpus(path: impl AsRef<Path>, split: Split) -> Result<Corpus, CorpusError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_corpus(BufReader::new(file), split)
}

/// Writes one canonical JSON line per video.
pub fn write_corpus<W: Write>(corpus: &Corpus, mut out: W) -> std::io::Result<()> {
    for v in &corpus.videos {
        serde_json::to_writer(&mut out, v)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn save_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let io_err = |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = File::create(path).map_err(io_err)?;
    let mut w = BufWriter::new(file);
    write_corpus(corpus, &mut w).map_err(io_err)?;
    w.flush().map_err(io_err)
}

/// Deterministic train/test split. `test_fraction` of the videos (rounded)
/// go to the test side; both sides keep the original video order.
pub fn train_test_split(corpus: &Corpus, test_fraction: f64, seed: u64) -> (Corpus, Corpus) {
    let n = corpus.len();
    let n_test = ((n as f64) * test_fraction.clamp(0.0, 1.0)).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_from_seed(seed));
    let test_idx: BTreeSet<usize> = order.into_iter().take(n_test).collect();
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (i, v) in corpus.videos.iter().enumerate() {
        if test_idx.contains(&i) {
            test.push(v.clone());
        } else {
            train.push(v.clone());
        }
    }
    (
        Corpus {
            videos: train,
            split: Split::Train,
        },
        Corpus {
            videos: test,
            split: Split::Test,
        },
    )
}

/// Checks that no video id appears in both corpora.
pub fn check_disjoint(train: &Corpus, test: &Corpus) -> Result<(), CorpusError> {
    let ids: BTreeSet<&str> = train.videos.iter().map(|v| v.video_id.as_str()).collect();
    match test
        .videos
        .iter()
        .find(|v| ids.contains(v.video_id.as_str()))
    {
        Some(v) => Err(CorpusError::Validation {
            video_id: v.video_id.clone(),
            problem: ValidationProblem::SharedAcrossSplits,
        }),
        None => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Corpus, CorpusError> {
        parse_corpus(text.as_bytes(), Split::Train)
    }

    #[test]
    fn minimal_valid_file() {
        let c = parse(
            r#"{"video_id":"v1","task":"t","clips":[{"label":"a","start_s":0,"end_s":5},{"label":"b","start_s":5,"end_s":9}]}"#,
        )
        .unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.n_clips(), 2);
    }

    #[test]
    fn overlapping_clips_rejected() {
        let err = parse(
            r#"{"video_id":"v1","task":"t","clips":[{"label":"a","start_s":0,"end_s":5},{"label":"b","start_s":4,"end_s":9}]}"#,
        )
        .unwrap_err();
        assert!(matches!(
            err,
            CorpusError::Validation {
                problem: ValidationProblem::Overlap { prev: 0, clip: 1 },
                ..
            }
        ));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = "\n{\"video_id\":\"v1\",\"task\":\"t\",\"clips\":[{\"label\":\"a\",\"start_s\":0,\"end_s\":1}]}\n{oops\n";
        match parse(text).unwrap_err() {
            CorpusError::Parse { line, .. } => assert_eq!(line, 3),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn empty_label_and_duplicate_ids() {
        let err = parse(
            r#"{"video_id":"v","task":"t","clips":[{"label":" !! ","start_s":0,"end_s":1}]}"#,
        )
        .unwrap_err();
        assert!(matches!(
            err,
            CorpusError::Validation {
                problem: ValidationProblem::EmptyLabel { clip: 0 },
                ..
            }
        ));
        let line = r#"{"video_id":"v","task":"t","clips":[{"label":"a","start_s":0,"end_s":1}]}"#;
        let err = parse(&format!("{line}\n{line}\n")).unwrap_err();
        assert!(matches!(
            err,
            CorpusError::Validation {
                problem: ValidationProblem::DuplicateVideoId,
                ..
            }
        ));
    }

    #[test]
    fn bad_times_rejected() {
        let err =
            parse(r#"{"video_id":"v","task":"t","clips":[{"label":"a","start_s":3,"end_s":3}]}"#)
                .unwrap_err();
        assert!(matches!(
            err,
            CorpusError::Validation {
                problem: ValidationProblem::BadTimes { .. },
                ..
            }
        ));
        let err = parse(r#"{"video_id":"v","task":"t","clips":[]}"#).unwrap_err();
        assert!(matches!(
            err,
            CorpusError::Validation {
                problem: ValidationProblem::NoClips,
                ..
            }
        ));
    }

    #[test]
    fn labels_normalized_on_ingest() {
        let c = parse(r#"{"video_id":"v","task":"Make Latte","clips":[{"label":"Add-Milk!","start_s":0,"end_s":1}]}"#)
            .unwrap();
        assert_eq!(c.videos()[0].task, "make latte");
        assert_eq!(c.videos()[0].clips[0].label, "add milk");
    }

    #[test]
    fn canonical_round_trip() {
        let text = "{\"video_id\":\"v1\",\"task\":\"t\",\"clips\":[{\"label\":\"a\",\"start_s\":0.0,\"end_s\":5.0},{\"label\":\"b c\",\"start_s\":5.0,\"end_s\":9.5}]}\n";
        let c = parse(text).unwrap();
        let mut out = Vec::new();
        write_corpus(&c, &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), text);
    }

    #[test]
    fn split_is_disjoint_and_deterministic() {
        let videos: Vec<_> = (0..50)
            .map(|i| VideoAnnotation::from_labels(&format!("v{i}"), "t", &["a", "b"]))
            .collect();
        let c = Corpus::new(videos, Split::Train).unwrap();
        let (tr, te) = train_test_split(&c, 0.2, 3);
        assert_eq!(te.len(), 10);
        assert_eq!(tr.len(), 40);
        check_disjoint(&tr, &te).unwrap();
        assert_eq!(train_test_split(&c, 0.2, 3), (tr.clone(), te));
        assert!(check_disjoint(&tr, &tr).is_err());
    }
}
