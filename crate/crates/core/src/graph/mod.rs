//! The procedural graph: action labels as nodes, observed consecutive-step
//! transitions as edges.
//!
//! Every edge carries a count per task; the task-summed counts form the
//! global graph. Per-task first-clip and last-clip counts are stored next to
//! the edges so predictors can reason about where procedures start and stop
//! without sentinel nodes in the graph itself.

mod dot;
mod io;

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, VideoAnnotation};
use crate::textmap::LabelVocabulary;

pub use io::{load_graph, parse_graph, save_graph, write_graph, GraphFile};

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("cannot build a graph from an empty corpus")]
    EmptyCorpus,
    #[error("unknown node {0:?}")]
    UnknownNode(String),
    #[error("unknown task {0:?}")]
    UnknownTask(String),
    #[error("node {0:?} has no successors")]
    NoSuccessors(String),
    #[error("smoothing alpha must be finite and >= 0, got {0}")]
    InvalidAlpha(f64),
    #[error("malformed graph file: {0}")]
    Format(String),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Where the videos a graph was mined from came from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphSource {
    #[default]
    Trainset,
    Retrieved,
}

impl std::str::FromStr for GraphSource {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "trainset" => Ok(Self::Trainset),
            "retrieved" => Ok(Self::Retrieved),
            other => Err(format!("unknown graph source {other:?}")),
        }
    }
}

type Counts = BTreeMap<String, u64>;

/// Partial graph over a subset of videos. Deltas built over disjoint video
/// subsets merge into the graph of their union.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GraphDelta {
    nodes: BTreeSet<String>,
    edges: BTreeMap<(String, String), Counts>,
    first_counts: BTreeMap<String, Counts>,
    last_counts: BTreeMap<String, Counts>,
}

fn bump(map: &mut Counts, key: &str, by: u64) {
    *map.entry(key.to_string()).or_insert(0) += by;
}

impl GraphDelta {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_videos<'a, I>(videos: I) -> Self
    where
        I: IntoIterator<Item = &'a VideoAnnotation>,
    {
        let mut d = Self::new();
        for v in videos {
            d.add_video(v);
        }
        d
    }

    /// Inserts the first clip's label, then every consecutive pair.
    pub fn add_video(&mut self, video: &VideoAnnotation) {
        let task = video.task.as_str();
        let mut labels = video.labels();
        let Some(first) = labels.next() else {
            return;
        };
        self.nodes.insert(first.to_string());
        bump(
            self.first_counts.entry(task.to_string()).or_default(),
            first,
            1,
        );
        let mut prev = first;
        for cur in labels {
            self.nodes.insert(cur.to_string());
            let counts = self
                .edges
                .entry((prev.to_string(), cur.to_string()))
                .or_default();
            bump(counts, task, 1);
            prev = cur;
        }
        bump(
            self.last_counts.entry(task.to_string()).or_default(),
            prev,
            1,
        );
    }

    pub fn merge(&mut self, other: GraphDelta) {
        self.nodes.extend(other.nodes);
        for (edge, counts) in other.edges {
            let mine = self.edges.entry(edge).or_default();
            for (task, n) in counts {
                bump(mine, &task, n);
            }
        }
        for (mine, theirs) in [
            (&mut self.first_counts, other.first_counts),
            (&mut self.last_counts, other.last_counts),
        ] {
            for (task, counts) in theirs {
                let m = mine.entry(task).or_default();
                for (label, n) in counts {
                    bump(m, &label, n);
                }
            }
        }
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeCounts {
    per_task: Counts,
    total: u64,
}

impl EdgeCounts {
    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn per_task(&self) -> &BTreeMap<String, u64> {
        &self.per_task
    }

    pub fn for_task(&self, task: &str) -> u64 {
        self.per_task.get(task).copied().unwrap_or(0)
    }

    fn scoped(&self, task: Option<&str>) -> u64 {
        match task {
            Some(t) => self.for_task(t),
            None => self.total,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProcGraph {
    nodes: LabelVocabulary,
    edges: BTreeMap<(String, String), EdgeCounts>,
    first_counts: BTreeMap<String, Counts>,
    last_counts: BTreeMap<String, Counts>,
    task_index: BTreeMap<String, BTreeSet<String>>,
    source: GraphSource,
    successors: BTreeMap<String, BTreeSet<String>>,
    predecessors: BTreeMap<String, BTreeSet<String>>,
}

/// Single pass over the corpus.
pub fn build_graph(corpus: &Corpus) -> Result<ProcGraph, GraphError> {
    if corpus.is_empty() {
        return Err(GraphError::EmptyCorpus);
    }
    Ok(ProcGraph::from_delta(
        GraphDelta::from_videos(corpus.videos()),
        GraphSource::Trainset,
    ))
}

/// Builds `shards` deltas in parallel and merges them.
pub fn build_graph_sharded(corpus: &Corpus, shards: usize) -> Result<ProcGraph, GraphError> {
    if corpus.is_empty() {
        return Err(GraphError::EmptyCorpus);
    }
    let chunk = corpus.len().div_ceil(shards.max(1));
    let deltas: Vec<GraphDelta> = corpus
        .videos()
        .par_chunks(chunk)
        .map(GraphDelta::from_videos)
        .collect();
    Ok(merge_deltas(deltas))
}

/// Graph over the videos whose ids are listed (e.g. the top-k of a
/// text-to-video retrieval), tagged as [`GraphSource::Retrieved`].
pub fn build_graph_from_retrieved<'a, I>(corpus: &Corpus, ids: I) -> Result<ProcGraph, GraphError>
where
    I: IntoIterator<Item = &'a str>,
{
    let subset = corpus.filter_ids(ids);
    build_graph(&subset).map(|g| g.with_source(GraphSource::Retrieved))
}

pub fn merge_deltas(deltas: Vec<GraphDelta>) -> ProcGraph {
    let merged = deltas.into_iter().fold(GraphDelta::new(), |mut acc, d| {
        acc.merge(d);
        acc
    });
    ProcGraph::from_delta(merged, GraphSource::Trainset)
}

impl ProcGraph {
    pub fn from_delta(delta: GraphDelta, source: GraphSource) -> Self {
        let GraphDelta {
            nodes,
            edges,
            first_counts,
            last_counts,
        } = delta;
        let edges = edges
            .into_iter()
            .map(|(k, per_task)| {
                let total = per_task.values().sum();
                (k, EdgeCounts { per_task, total })
            })
            .collect();
        Self::assemble(
            LabelVocabulary::new(&nodes),
            edges,
            first_counts,
            last_counts,
            source,
        )
    }

    fn assemble(
        nodes: LabelVocabulary,
        edges: BTreeMap<(String, String), EdgeCounts>,
        first_counts: BTreeMap<String, Counts>,
        last_counts: BTreeMap<String, Counts>,
        source: GraphSource,
    ) -> Self {
        let mut task_index: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        let mut successors: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        let mut predecessors: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for ((from, to), counts) in &edges {
            successors
                .entry(from.clone())
                .or_default()
                .insert(to.clone());
            predecessors
                .entry(to.clone())
                .or_default()
                .insert(from.clone());
            for task in counts.per_task.keys() {
                let idx = task_index.entry(task.clone()).or_default();
                idx.insert(from.clone());
                idx.insert(to.clone());
            }
        }
        for (task, counts) in &first_counts {
            task_index
                .entry(task.clone())
                .or_default()
                .extend(counts.keys().cloned());
        }
        Self {
            nodes,
            edges,
            first_counts,
            last_counts,
            task_index,
            source,
            successors,
            predecessors,
        }
    }

    pub fn nodes(&self) -> &LabelVocabulary {
        &self.nodes
    }

    pub fn contains(&self, label: &str) -> bool {
        self.nodes.contains(label)
    }

    pub fn source(&self) -> GraphSource {
        self.source
    }

    pub fn with_source(mut self, source: GraphSource) -> Self {
        self.source = source;
        self
    }

    pub fn edges(&self) -> impl Iterator<Item = (&str, &str, &EdgeCounts)> + '_ {
        self.edges
            .iter()
            .map(|((f, t), c)| (f.as_str(), t.as_str(), c))
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    /// Transition count, task-summed when `task` is `None`.
    pub fn edge_count(&self, from: &str, to: &str, task: Option<&str>) -> u64 {
        self.edges
            .get(&(from.to_string(), to.to_string()))
            .map_or(0, |c| c.scoped(task))
    }

    pub fn tasks(&self) -> impl Iterator<Item = &str> + '_ {
        self.task_index.keys().map(String::as_str)
    }

    pub fn has_task(&self, task: &str) -> bool {
        self.task_index.contains_key(task)
    }

    pub fn task_labels(&self, task: &str) -> Result<&BTreeSet<String>, GraphError> {
        self.task_index
            .get(task)
            .ok_or_else(|| GraphError::UnknownTask(task.to_string()))
    }

    pub fn first_counts(&self) -> &BTreeMap<String, BTreeMap<String, u64>> {
        &self.first_counts
    }

    pub fn last_counts(&self) -> &BTreeMap<String, BTreeMap<String, u64>> {
        &self.last_counts
    }

    fn scoped_count(map: &BTreeMap<String, Counts>, label: &str, task: Option<&str>) -> u64 {
        match task {
            Some(t) => map.get(t).and_then(|c| c.get(label)).copied().unwrap_or(0),
            None => map.values().filter_map(|c| c.get(label)).sum(),
        }
    }

    /// How often `label` opened a video (of `task`, or of any task).
    pub fn first_count(&self, label: &str, task: Option<&str>) -> u64 {
        Self::scoped_count(&self.first_counts, label, task)
    }

    /// How often `label` closed a video (of `task`, or of any task).
    pub fn last_count(&self, label: &str, task: Option<&str>) -> u64 {
        Self::scoped_count(&self.last_counts, label, task)
    }

    fn require_node(&self, v: &str) -> Result<(), GraphError> {
        if self.contains(v) {
            Ok(())
        } else {
            Err(GraphError::UnknownNode(v.to_string()))
        }
    }

    fn require_task(&self, task: Option<&str>) -> Result<(), GraphError> {
        match task {
            Some(t) if !self.has_task(t) => Err(GraphError::UnknownTask(t.to_string())),
            _ => Ok(()),
        }
    }

    /// In-neighbors union out-neighbors in the task-summed graph.
    pub fn neighbors(&self, v: &str) -> Result<BTreeSet<&str>, GraphError> {
        self.require_node(v)?;
        let mut out: BTreeSet<&str> = BTreeSet::new();
        for adj in [&self.successors, &self.predecessors] {
            if let Some(s) = adj.get(v) {
                out.extend(s.iter().map(String::as_str));
            }
        }
        Ok(out)
    }

    /// Labels with a positive transition count from `v` in scope.
    pub fn successors(&self, v: &str, task: Option<&str>) -> Vec<(&str, u64)> {
        self.successors
            .get(v)
            .into_iter()
            .flatten()
            .map(|to| (to.as_str(), self.edge_count(v, to, task)))
            .filter(|(_, c)| *c > 0)
            .collect()
    }

    /// Labels that may follow `v`: every node in scope (all nodes, or the
    /// task's labels), minus `v` itself unless a repeat of `v` was observed.
    pub fn candidates(&self, v: &str, task: Option<&str>) -> Result<Vec<&str>, GraphError> {
        self.require_node(v)?;
        self.require_task(task)?;
        let self_loop = self.edge_count(v, v, task) > 0;
        let keep = |x: &&str| *x != v || self_loop;
        Ok(match task {
            Some(t) => self.task_index[t]
                .iter()
                .map(String::as_str)
                .filter(keep)
                .collect(),
            None => self.nodes.iter().filter(keep).collect(),
        })
    }

    /// Successor distribution of `v`, proportional to `count + alpha` over
    /// [`ProcGraph::candidates`]. Zero-probability entries are omitted.
    pub fn out_distribution(
        &self,
        v: &str,
        task: Option<&str>,
        alpha: f64,
    ) -> Result<BTreeMap<String, f64>, GraphError> {
        if !(alpha.is_finite() && alpha >= 0.0) {
            return Err(GraphError::InvalidAlpha(alpha));
        }
        let weights: Vec<(&str, f64)> = self
            .candidates(v, task)?
            .into_iter()
            .map(|x| (x, self.edge_count(v, x, task) as f64 + alpha))
            .collect();
        let total: f64 = weights.iter().map(|(_, w)| w).sum();
        if total <= 0.0 {
            return Err(GraphError::NoSuccessors(v.to_string()));
        }
        Ok(weights
            .into_iter()
            .filter(|(_, w)| *w > 0.0)
            .map(|(x, w)| (x.to_string(), w / total))
            .collect())
    }

    /// True when videos ended at `v` more often than they continued to any
    /// single successor.
    pub fn is_terminal(&self, v: &str, task: Option<&str>) -> bool {
        let stop = self.last_count(v, task);
        let best_next = self
            .successors(v, task)
            .into_iter()
            .map(|(_, c)| c)
            .max()
            .unwrap_or(0);
        stop > best_next
    }

    /// Restriction to the nodes and edges with a positive count under `task`.
    pub fn subgraph_for_task(&self, task: &str) -> Result<ProcGraph, GraphError> {
        let labels = self.task_labels(task)?;
        let edges = self
            .edges
            .iter()
            .filter_map(|(k, c)| {
                let n = c.for_task(task);
                (n > 0).then(|| {
                    let per_task = BTreeMap::from([(task.to_string(), n)]);
                    (k.clone(), EdgeCounts { per_task, total: n })
                })
            })
            .collect();
        let pick = |m: &BTreeMap<String, Counts>| {
            m.get(task)
                .map(|c| BTreeMap::from([(task.to_string(), c.clone())]))
                .unwrap_or_default()
        };
        Ok(Self::assemble(
            LabelVocabulary::new(labels),
            edges,
            pick(&self.first_counts),
            pick(&self.last_counts),
            self.source,
        ))
    }

    /// Sum of all task-summed edge counts.
    pub fn total_transitions(&self) -> u64 {
        self.edges.values().map(|c| c.total).sum()
    }

    pub fn to_dot(&self) -> String {
        dot::to_dot(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Split;

    pub(crate) fn corpus_of(videos: &[(&str, &[&str])]) -> Corpus {
        Corpus::new(
            videos
                .iter()
                .enumerate()
                .map(|(i, (task, labels))| {
                    VideoAnnotation::from_labels(&format!("v{i}"), task, labels)
                })
                .collect(),
            Split::Train,
        )
        .unwrap()
    }

    fn set<'a>(xs: &[&'a str]) -> BTreeSet<&'a str> {
        xs.iter().copied().collect()
    }

    #[test]
    fn one_walk() {
        let g = build_graph(&corpus_of(&[("t", &["a", "b", "c"])])).unwrap();
        assert_eq!(g.nodes().labels(), &["a", "b", "c"]);
        assert_eq!(g.n_edges(), 2);
        assert_eq!(g.edge_count("a", "b", None), 1);
        assert_eq!(g.edge_count("b", "c", None), 1);
        assert_eq!(g.first_count("a", Some("t")), 1);
        assert_eq!(g.last_count("c", None), 1);
    }

    #[test]
    fn pair_counts_over_two_videos() {
        let g = build_graph(&corpus_of(&[
            ("t", &["a", "b", "c"]),
            ("t", &["a", "b", "d"]),
        ]))
        .unwrap();
        assert_eq!(g.edge_count("a", "b", None), 2);
        assert_eq!(g.edge_count("b", "c", None), 1);
        assert_eq!(g.edge_count("b", "d", None), 1);
        assert_eq!(g.total_transitions(), 4);
    }

    #[test]
    fn empty_corpus_rejected() {
        assert!(matches!(
            build_graph(&Corpus::empty(Split::Train)),
            Err(GraphError::EmptyCorpus)
        ));
    }

    #[test]
    fn single_clip_video_contributes_node_only() {
        let g = build_graph(&corpus_of(&[("t", &["a", "b"]), ("u", &["z"])])).unwrap();
        assert!(g.contains("z"));
        assert_eq!(g.neighbors("z").unwrap(), BTreeSet::new());
        assert_eq!(g.task_labels("u").unwrap().len(), 1);
    }

    #[test]
    fn neighbor_sets() {
        let g = build_graph(&corpus_of(&[("t", &["a", "b", "c"])])).unwrap();
        assert_eq!(g.neighbors("b").unwrap(), set(&["a", "c"]));
        let g = build_graph(&corpus_of(&[
            ("t", &["a", "b"]),
            ("t", &["c", "b"]),
            ("t", &["b", "d"]),
        ]))
        .unwrap();
        assert_eq!(g.neighbors("b").unwrap(), set(&["a", "c", "d"]));
        assert!(matches!(g.neighbors("q"), Err(GraphError::UnknownNode(_))));
    }

    #[test]
    fn out_distribution_examples() {
        let mut videos: Vec<(&str, &[&str])> = vec![("t", &["b", "c"]); 3];
        videos.push(("t", &["b", "d"]));
        let g = build_graph(&corpus_of(&videos)).unwrap();
        let d = g.out_distribution("b", None, 0.0).unwrap();
        assert_eq!(d, BTreeMap::from([("c".into(), 0.75), ("d".into(), 0.25)]));

        let g = build_graph(&corpus_of(&[("t", &["a", "b"])])).unwrap();
        assert_eq!(
            g.out_distribution("a", None, 0.0).unwrap(),
            BTreeMap::from([("b".into(), 1.0)])
        );

        // candidates of b are {c, d}: b never repeats
        let g = build_graph(&corpus_of(&[("t", &["b", "c"]), ("t", &["d"])])).unwrap();
        let d = g.out_distribution("b", None, 1.0).unwrap();
        assert!((d["c"] - 2.0 / 3.0).abs() < 1e-15);
        assert!((d["d"] - 1.0 / 3.0).abs() < 1e-15);
        assert!(!d.contains_key("b"));
    }

    #[test]
    fn out_distribution_errors_and_task_scope() {
        let g = build_graph(&corpus_of(&[
            ("x", &["a", "b"]),
            ("y", &["a", "c"]),
            ("y", &["c", "c"]),
        ]))
        .unwrap();
        assert!(matches!(
            g.out_distribution("b", None, 0.0),
            Err(GraphError::NoSuccessors(_))
        ));
        assert!(matches!(
            g.out_distribution("q", None, 1.0),
            Err(GraphError::UnknownNode(_))
        ));
        assert!(matches!(
            g.out_distribution("a", Some("nope"), 1.0),
            Err(GraphError::UnknownTask(_))
        ));
        assert!(matches!(
            g.out_distribution("a", None, -1.0),
            Err(GraphError::InvalidAlpha(_))
        ));
        let d = g.out_distribution("a", Some("x"), 0.0).unwrap();
        assert_eq!(d, BTreeMap::from([("b".into(), 1.0)]));
        // task y: candidates {a, c}; a excluded (no a->a), so only c
        let d = g.out_distribution("a", Some("y"), 1.0).unwrap();
        assert_eq!(d, BTreeMap::from([("c".into(), 1.0)]));
        // observed self-loop keeps c as its own candidate
        let d = g.out_distribution("c", Some("y"), 1.0).unwrap();
        assert!((d["c"] - 2.0 / 3.0).abs() < 1e-15);
        assert!((d["a"] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn merge_examples() {
        let mut d1 = GraphDelta::new();
        d1.add_video(&VideoAnnotation::from_labels("v1", "t", &["a", "b"]));
        let mut d2 = GraphDelta::new();
        d2.add_video(&VideoAnnotation::from_labels("v2", "t", &["a", "b"]));
        d2.add_video(&VideoAnnotation::from_labels("v3", "t", &["a", "b"]));
        let g = merge_deltas(vec![d1.clone(), d2]);
        assert_eq!(g.edge_count("a", "b", None), 3);
        assert_eq!(
            merge_deltas(vec![d1.clone(), GraphDelta::new()]),
            merge_deltas(vec![d1])
        );
    }

    #[test]
    fn subgraph_restriction() {
        let single =
            build_graph(&corpus_of(&[("t", &["a", "b", "c"]), ("t", &["a", "c"])])).unwrap();
        assert_eq!(single.subgraph_for_task("t").unwrap(), single);

        let g = build_graph(&corpus_of(&[("x", &["a", "b"]), ("y", &["c", "d"])])).unwrap();
        let x = g.subgraph_for_task("x").unwrap();
        assert_eq!(x.nodes().labels(), &["a", "b"]);
        assert_eq!(x.n_edges(), 1);
        assert!(matches!(
            g.subgraph_for_task("z"),
            Err(GraphError::UnknownTask(_))
        ));
    }

    #[test]
    fn terminal_rule() {
        let g = build_graph(&corpus_of(&[("t", &["a", "b", "c"] as &[&str]); 3])).unwrap();
        assert!(!g.is_terminal("a", None));
        assert!(!g.is_terminal("b", None));
        assert!(g.is_terminal("c", None));
    }

    #[test]
    fn retrieved_source() {
        let c = corpus_of(&[("x", &["a", "b"]), ("y", &["c", "d"])]);
        let g = build_graph_from_retrieved(&c, ["v1"]).unwrap();
        assert_eq!(g.source(), GraphSource::Retrieved);
        assert_eq!(g.nodes().labels(), &["c", "d"]);
    }
}
