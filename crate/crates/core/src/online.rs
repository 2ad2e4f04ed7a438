//! Online search path: recognizer output mapped onto graph nodes clip by clip.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::ProcGraph;
use crate::textmap::{map_to_label, MapError, MapResult};

#[derive(Debug, Error)]
pub enum OnlineError {
    #[error("event for clip {got} arrived, expected clip {expected}")]
    OutOfOrder { expected: usize, got: usize },
    #[error(transparent)]
    Map(MapError),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// One recognizer output for one clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecognizerEvent {
    pub clip_index: usize,
    pub raw_text: String,
    #[serde(default)]
    pub timestamp_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnmappedEvent {
    pub clip_index: usize,
    pub raw_text: String,
}

/// What [`OnlinePath::advance`] did with an event.
#[derive(Debug, Clone, PartialEq)]
pub enum Advance {
    Appended(MapResult),
    Unmapped { best_score: f64 },
}

/// Append-only sequence of matched graph nodes. Consecutive nodes are the
/// path's edges; repeats are kept.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OnlinePath {
    nodes: Vec<String>,
    unmapped_events: Vec<UnmappedEvent>,
}

impl OnlinePath {
    pub fn new() -> Self {
        Self::default()
    }

    /// A path over labels that are already graph nodes.
    pub fn from_nodes<I, S>(nodes: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            nodes: nodes.into_iter().map(Into::into).collect(),
            unmapped_events: Vec::new(),
        }
    }

    pub fn nodes(&self) -> &[String] {
        &self.nodes
    }

    pub fn last(&self) -> Option<&str> {
        self.nodes.last().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn edges(&self) -> impl Iterator<Item = (&str, &str)> + '_ {
        self.nodes
            .windows(2)
            .map(|w| (w[0].as_str(), w[1].as_str()))
    }

    pub fn unmapped_events(&self) -> &[UnmappedEvent] {
        &self.unmapped_events
    }

    /// Number of events consumed so far, mapped or not.
    pub fn events_seen(&self) -> usize {
        self.nodes.len() + self.unmapped_events.len()
    }

    /// Maps the event's text onto the graph's nodes and appends the match.
    /// Text that maps to no node is recorded and the path is left unchanged.
    pub fn advance(
        &mut self,
        event: &RecognizerEvent,
        g: &ProcGraph,
        threshold: f64,
    ) -> Result<Advance, OnlineError> {
        let expected = self.events_seen();
        if event.clip_index != expected {
            return Err(OnlineError::OutOfOrder {
                expected,
                got: event.clip_index,
            });
        }
        match map_to_label(&event.raw_text, g.nodes(), threshold) {
            Ok(m) => {
                self.nodes.push(m.label.clone());
                Ok(Advance::Appended(m))
            }
            Err(MapError::Unmapped { best_score, .. }) => {
                self.unmapped_events.push(UnmappedEvent {
                    clip_index: event.clip_index,
                    raw_text: event.raw_text.clone(),
                });
                Ok(Advance::Unmapped { best_score })
            }
            Err(e) => Err(OnlineError::Map(e)),
        }
    }

    /// `flags[i]` is true when edge `i` never occurs in `g`.
    pub fn novelty_flags(&self, g: &ProcGraph) -> Vec<bool> {
        self.edges()
            .map(|(a, b)| g.edge_count(a, b, None) == 0)
            .collect()
    }

    /// `so far: a → b → c`
    pub fn verbalize(&self) -> String {
        verbalize_labels(&self.nodes)
    }
}

pub fn verbalize_labels<S: AsRef<str>>(labels: &[S]) -> String {
    let joined: Vec<&str> = labels.iter().map(AsRef::as_ref).collect();
    format!("so far: {}", joined.join(" → "))
}

/// Replays a whole stream into a fresh path.
pub fn replay<'a, I>(events: I, g: &ProcGraph, threshold: f64) -> Result<OnlinePath, OnlineError>
where
    I: IntoIterator<Item = &'a RecognizerEvent>,
{
    let mut path = OnlinePath::new();
    for e in events {
        path.advance(e, g, threshold)?;
    }
    Ok(path)
}

pub fn parse_stream<R: BufRead>(reader: R) -> Result<Vec<RecognizerEvent>, OnlineError> {
    let mut events: Vec<RecognizerEvent> = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let parse_err = |message: String| OnlineError::Parse {
            line: i + 1,
            message,
        };
        let line = line.map_err(|e| parse_err(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let e: RecognizerEvent =
            serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        if let Some(prev) = events.last() {
            if e.clip_index <= prev.clip_index {
                return Err(parse_err(format!(
                    "clip_index {} not greater than {}",
                    e.clip_index, prev.clip_index
                )));
            }
        }
        events.push(e);
    }
    Ok(events)
}

pub fn load_stream(path: impl AsRef<Path>) -> Result<Vec<RecognizerEvent>, OnlineError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| OnlineError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_stream(BufReader::new(file))
}
