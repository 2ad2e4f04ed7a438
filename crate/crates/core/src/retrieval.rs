//! Embedding retrieval: cosine ranking, set-based precision/recall/F1 and
//! temporal aggregation of frame-token features.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use ndarray::{Array3, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::Corpus;
use crate::textmap::normalize;

pub const DEFAULT_EMBED_DIM: usize = 256;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("vector {id:?} has zero norm")]
    ZeroNorm { id: String },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("cannot average an empty list of vectors")]
    EmptyList,
    #[error("embedding store is empty")]
    EmptyStore,
    #[error("k must be at least 1")]
    InvalidK,
    #[error("window {window} does not divide feature dimension {dim}")]
    WindowMismatch { dim: usize, window: usize },
    #[error("tensor dimensions must all be at least 1, got {0:?}")]
    InvalidShape([usize; 3]),
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64, RetrievalError> {
    if u.len() != v.len() {
        return Err(RetrievalError::DimensionMismatch {
            expected: u.len(),
            got: v.len(),
        });
    }
    let (nu, nv) = (norm(u), norm(v));
    for (n, id) in [(nu, "u"), (nv, "v")] {
        if n == 0.0 {
            return Err(RetrievalError::ZeroNorm { id: id.into() });
        }
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

/// Component-wise mean of clip vectors.
pub fn video_embedding<V: AsRef<[f64]>>(clips: &[V]) -> Result<Vec<f64>, RetrievalError> {
    let first = clips.first().ok_or(RetrievalError::EmptyList)?.as_ref();
    let mut sum = vec![0.0; first.len()];
    for c in clips {
        let c = c.as_ref();
        if c.len() != sum.len() {
            return Err(RetrievalError::DimensionMismatch {
                expected: sum.len(),
                got: c.len(),
            });
        }
        for (s, x) in sum.iter_mut().zip(c) {
            *s += x;
        }
    }
    let n = clips.len() as f64;
    Ok(sum.into_iter().map(|s| s / n).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub id: String,
    pub vector: Vec<f64>,
    /// Task of the video, used as retrieval relevance.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<String>,
}

/// Immutable set of equal-dimension, non-zero records.
#[derive(Debug, Clone)]
pub struct EmbeddingStore {
    records: Vec<EmbeddingRecord>,
    norms: Vec<f64>,
    dim: usize,
}

impl EmbeddingStore {
    pub fn new(records: Vec<EmbeddingRecord>) -> Result<Self, RetrievalError> {
        let dim = records
            .first()
            .ok_or(RetrievalError::EmptyStore)?
            .vector
            .len();
        let mut ids = BTreeSet::new();
        let mut norms = Vec::with_capacity(records.len());
        for r in &records {
            if r.vector.len() != dim {
                return Err(RetrievalError::DimensionMismatch {
                    expected: dim,
                    got: r.vector.len(),
                });
            }
            let n = norm(&r.vector);
            if n == 0.0 {
                return Err(RetrievalError::ZeroNorm { id: r.id.clone() });
            }
            if !ids.insert(r.id.as_str()) {
                return Err(RetrievalError::DuplicateId(r.id.clone()));
            }
            norms.push(n);
        }
        Ok(Self {
            records,
            norms,
            dim,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[EmbeddingRecord] {
        &self.records
    }

    /// Ids whose task is `task`.
    pub fn relevant_to(&self, task: &str) -> BTreeSet<&str> {
        self.records
            .iter()
            .filter(|r| r.task.as_deref() == Some(task))
            .map(|r| r.id.as_str())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub id: String,
    pub score: f64,
}

/// The `k` most cosine-similar records, best first; equal scores are ordered
/// by id. `k` is capped at the store size.
pub fn retrieve_topk(
    query: &[f64],
    store: &EmbeddingStore,
    k: usize,
) -> Result<Vec<Hit>, RetrievalError> {
    if k == 0 {
        return Err(RetrievalError::InvalidK);
    }
    if query.len() != store.dim {
        return Err(RetrievalError::DimensionMismatch {
            expected: store.dim,
            got: query.len(),
        });
    }
    let nq = norm(query);
    if nq == 0.0 {
        return Err(RetrievalError::ZeroNorm { id: "query".into() });
    }
    let mut scored: Vec<(f64, &str)> = store
        .records
        .iter()
        .zip(&store.norms)
        .map(|(r, n)| {
            let dot: f64 = r.vector.iter().zip(query).map(|(a, b)| a * b).sum();
            ((dot / (n * nq)).clamp(-1.0, 1.0), r.id.as_str())
        })
        .collect();
    let order = |a: &(f64, &str), b: &(f64, &str)| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1));
    let k = k.min(scored.len());
    if k < scored.len() {
        scored.select_nth_unstable_by(k - 1, order);
        scored.truncate(k);
    }
    scored.sort_by(order);
    Ok(scored
        .into_iter()
        .map(|(score, id)| Hit {
            id: id.to_string(),
            score,
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf1 {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Set-based scores. An empty retrieved (relevant) set has precision
/// (recall) 0.
pub fn prf1<A: AsRef<str>, B: AsRef<str>>(retrieved: &[A], relevant: &[B]) -> Prf1 {
    let ret: BTreeSet<&str> = retrieved.iter().map(AsRef::as_ref).collect();
    let rel: BTreeSet<&str> = relevant.iter().map(AsRef::as_ref).collect();
    let hit = ret.intersection(&rel).count() as f64;
    let precision = if ret.is_empty() {
        0.0
    } else {
        hit / ret.len() as f64
    };
    let recall = if rel.is_empty() {
        0.0
    } else {
        hit / rel.len() as f64
    };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Prf1 {
        precision,
        recall,
        f1,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub id: String,
    /// Embedded with the hashing embedder when `vector` is absent.
    #[serde(default)]
    pub text: Option<String>,
    #[serde(default)]
    pub vector: Option<Vec<f64>>,
    /// Relevance: store records of this task.
    #[serde(default)]
    pub task: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub query_id: String,
    pub hits: Vec<Hit>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scores: Option<Prf1>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalSummary {
    pub k: usize,
    pub n_queries: usize,
    pub n_scored: usize,
    pub mean: Prf1,
}

/// Runs every query against the store in parallel; output follows query
/// order. The summary averages over queries that carry a task.
pub fn run_queries(
    queries: &[Query],
    store: &EmbeddingStore,
    k: usize,
    embedder: &HashingEmbedder,
) -> Result<(Vec<QueryResult>, RetrievalSummary), RetrievalError> {
    let results = queries
        .par_iter()
        .map(|q| {
            let vector = match (&q.vector, &q.text) {
                (Some(v), _) => v.clone(),
                (None, Some(t)) => embedder.embed(t),
                (None, None) => {
                    return Err(RetrievalError::Parse {
                        line: 0,
                        message: format!("query {:?} has neither text nor vector", q.id),
                    })
                }
            };
            let hits = retrieve_topk(&vector, store, k)?;
            let scores = q.task.as_deref().map(|t| {
                let relevant: Vec<&str> = store.relevant_to(t).into_iter().collect();
                let ids: Vec<&str> = hits.iter().map(|h| h.id.as_str()).collect();
                prf1(&ids, &relevant)
            });
            Ok(QueryResult {
                query_id: q.id.clone(),
                hits,
                scores,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let scored: Vec<Prf1> = results.iter().filter_map(|r| r.scores).collect();
    let n = scored.len().max(1) as f64;
    let mean = Prf1 {
        precision: scored.iter().map(|s| s.precision).sum::<f64>() / n,
        recall: scored.iter().map(|s| s.recall).sum::<f64>() / n,
        f1: scored.iter().map(|s| s.f1).sum::<f64>() / n,
    };
    let summary = RetrievalSummary {
        k,
        n_queries: queries.len(),
        n_scored: scored.len(),
        mean,
    };
    Ok((results, summary))
}

/// Deterministic signed bag-of-words embedding over normalized tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashingEmbedder {
    dim: usize,
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        Self {
            dim: DEFAULT_EMBED_DIM,
        }
    }
}

impl HashingEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// All zeros when the text has no tokens.
    pub fn embed(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        for token in normalize(text).split_whitespace() {
            let h = Sha256::digest(token.as_bytes());
            let bucket = u64::from_le_bytes(h[..8].try_into().expect("8 bytes")) % self.dim as u64;
            let sign = if h[8] & 1 == 0 { 1.0 } else { -1.0 };
            v[bucket as usize] += sign;
        }
        v
    }
}

/// Video-level records (mean of the embedded step labels) for every video.
pub fn embed_corpus_videos(
    corpus: &Corpus,
    embedder: &HashingEmbedder,
) -> Result<Vec<EmbeddingRecord>, RetrievalError> {
    corpus
        .videos()
        .iter()
        .map(|v| {
            let clips: Vec<Vec<f64>> = v.labels().map(|l| embedder.embed(l)).collect();
            Ok(EmbeddingRecord {
                id: v.video_id.clone(),
                vector: video_embedding(&clips)?,
                task: Some(v.task.clone()),
            })
        })
        .collect()
}

/// Clip-level records with ids `<video_id>#<clip_index>`.
pub fn embed_corpus_clips(corpus: &Corpus, embedder: &HashingEmbedder) -> Vec<EmbeddingRecord> {
    corpus
        .videos()
        .iter()
        .flat_map(|v| {
            v.labels().enumerate().map(move |(i, l)| EmbeddingRecord {
                id: format!("{}#{i}", v.video_id),
                vector: embedder.embed(l),
                task: Some(v.task.clone()),
            })
        })
        .collect()
}

fn parse_jsonl<T: serde::de::DeserializeOwned, R: BufRead>(
    reader: R,
) -> Result<Vec<T>, RetrievalError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let err = |message: String| RetrievalError::Parse {
            line: i + 1,
            message,
        };
        let line = line.map_err(|e| err(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| err(e.to_string()))?);
    }
    Ok(out)
}

fn open(path: &Path) -> Result<BufReader<File>, RetrievalError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|source| RetrievalError::Io {
            path: path.to_path_buf(),
            source,
        })
}

pub fn parse_embeddings<R: BufRead>(reader: R) -> Result<Vec<EmbeddingRecord>, RetrievalError> {
    parse_jsonl(reader)
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingStore, RetrievalError> {
    EmbeddingStore::new(parse_embeddings(open(path.as_ref())?)?)
}

pub fn parse_queries<R: BufRead>(reader: R) -> Result<Vec<Query>, RetrievalError> {
    parse_jsonl(reader)
}

pub fn load_queries(path: impl AsRef<Path>) -> Result<Vec<Query>, RetrievalError> {
    parse_queries(open(path.as_ref())?)
}

pub fn write_embeddings<W: Write>(records: &[EmbeddingRecord], mut out: W) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// `T×N×D → (T·N)×1×D`
    Flatten,
    /// `T×N×D → 1×N×D`, mean over frames.
    Average,
    /// `T×N×D → T×N×(D/W)`, means over non-overlapping feature windows.
    Pool(usize),
}

/// Dense frame × token × feature tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor(Array3<f64>);

impl FeatureTensor {
    pub fn new(values: Array3<f64>) -> Result<Self, RetrievalError> {
        let (t, n, d) = values.dim();
        if t == 0 || n == 0 || d == 0 {
            return Err(RetrievalError::InvalidShape([t, n, d]));
        }
        Ok(Self(values))
    }

    pub fn from_shape_vec(shape: [usize; 3], values: Vec<f64>) -> Result<Self, RetrievalError> {
        let a = Array3::from_shape_vec((shape[0], shape[1], shape[2]), values)
            .map_err(|_| RetrievalError::InvalidShape(shape))?;
        Self::new(a)
    }

    pub fn shape(&self) -> [usize; 3] {
        let (t, n, d) = self.0.dim();
        [t, n, d]
    }

    pub fn values(&self) -> &Array3<f64> {
        &self.0
    }

    pub fn aggregate(&self, method: Aggregation) -> Result<FeatureTensor, RetrievalError> {
        let [t, n, d] = self.shape();
        let out = match method {
            Aggregation::Flatten => {
                let flat: Vec<f64> = self.0.iter().copied().collect();
                Array3::from_shape_vec((t * n, 1, d), flat).expect("same element count")
            }
            Aggregation::Average => self
                .0
                .mean_axis(Axis(0))
                .expect("t >= 1")
                .insert_axis(Axis(0)),
            Aggregation::Pool(w) => {
                if w == 0 || d % w != 0 {
                    return Err(RetrievalError::WindowMismatch { dim: d, window: w });
                }
                let flat: Vec<f64> = self.0.iter().copied().collect();
                let windows = ndarray::Array4::from_shape_vec((t, n, d / w, w), flat)
                    .expect("same element count");
                windows.mean_axis(Axis(3)).expect("w >= 1")
            }
        };
        Ok(FeatureTensor(out))
    }
}
