use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EdgeCounts, GraphError, GraphSource, ProcGraph};
use crate::textmap::{normalize, LabelVocabulary};

/// On-disk form of a [`ProcGraph`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphFile {
    pub nodes: Vec<String>,
    pub edges: Vec<EdgeRecord>,
    pub first_counts: BTreeMap<String, BTreeMap<String, u64>>,
    pub last_counts: BTreeMap<String, BTreeMap<String, u64>>,
    #[serde(default)]
    pub source: GraphSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeRecord {
    pub from: String,
    pub to: String,
    pub counts: BTreeMap<String, u64>,
}

impl From<&ProcGraph> for GraphFile {
    fn from(g: &ProcGraph) -> Self {
        GraphFile {
            nodes: g.nodes.labels().to_vec(),
            edges: g
                .edges
                .iter()
                .map(|((from, to), c)| EdgeRecord {
                    from: from.clone(),
                    to: to.clone(),
                    counts: c.per_task.clone(),
                })
                .collect(),
            first_counts: g.first_counts.clone(),
            last_counts: g.last_counts.clone(),
            source: g.source,
        }
    }
}

impl TryFrom<GraphFile> for ProcGraph {
    type Error = GraphError;

    fn try_from(file: GraphFile) -> Result<Self, GraphError> {
        let bad = |m: String| Err(GraphError::Format(m));
        let nodes = LabelVocabulary::new(&file.nodes);
        if nodes.len() != file.nodes.len() || file.nodes.iter().any(|n| normalize(n) != *n) {
            return bad("node labels must be distinct and normalized".into());
        }
        let mut edges = BTreeMap::new();
        for e in file.edges {
            for end in [&e.from, &e.to] {
                if !nodes.contains(end) {
                    return bad(format!("edge endpoint {end:?} is not a node"));
                }
            }
            if e.counts.is_empty() || e.counts.values().any(|c| *c == 0) {
                return bad(format!(
                    "edge {:?} -> {:?} needs positive per-task counts",
                    e.from, e.to
                ));
            }
            let total = e.counts.values().sum();
            let key = (e.from, e.to);
            if edges.contains_key(&key) {
                return bad(format!("duplicate edge {key:?}"));
            }
            edges.insert(
                key,
                EdgeCounts {
                    per_task: e.counts,
                    total,
                },
            );
        }
        for counts in file.first_counts.values().chain(file.last_counts.values()) {
            for (label, c) in counts {
                if !nodes.contains(label) || *c == 0 {
                    return bad(format!("boundary count for {label:?} is invalid"));
                }
            }
        }
        Ok(ProcGraph::assemble(
            nodes,
            edges,
            file.first_counts,
            file.last_counts,
            file.source,
        ))
    }
}

pub fn write_graph<W: Write>(g: &ProcGraph, mut out: W) -> std::io::Result<()> {
    serde_json::to_writer_pretty(&mut out, &GraphFile::from(g))?;
    out.write_all(b"\n")
}

pub fn parse_graph<R: Read>(reader: R) -> Result<ProcGraph, GraphError> {
    let file: GraphFile =
        serde_json::from_reader(reader).map_err(|e| GraphError::Format(e.to_string()))?;
    ProcGraph::try_from(file)
}

pub fn save_graph(g: &ProcGraph, path: impl AsRef<Path>) -> Result<(), GraphError> {
    let path = path.as_ref();
    let io_err = |source| GraphError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
    write_graph(g, &mut w).map_err(io_err)?;
    w.flush().map_err(io_err)
}

pub fn load_graph(path: impl AsRef<Path>) -> Result<ProcGraph, GraphError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| GraphError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_graph(BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_graph;
    use crate::graph::tests::corpus_of;

    #[test]
    fn save_load_is_structural_identity() {
        let g = build_graph(&corpus_of(&[
            ("x", &["a", "b", "a"]),
            ("y", &["b", "c"]),
            ("y", &["z"]),
        ]))
        .unwrap()
        .with_source(GraphSource::Retrieved);
        let mut buf = Vec::new();
        write_graph(&g, &mut buf).unwrap();
        let back = parse_graph(buf.as_slice()).unwrap();
        assert_eq!(back, g);
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("\"source\": \"retrieved\""));
        assert!(text.contains("\"first_counts\""));
    }

    #[test]
    fn rejects_dangling_edges() {
        let text = r#"{"nodes":["a"],"edges":[{"from":"a","to":"b","counts":{"t":1}}],"first_counts":{},"last_counts":{}}"#;
        assert!(matches!(
            parse_graph(text.as_bytes()),
            Err(GraphError::Format(_))
        ));
        let text = r#"{"nodes":["a","b"],"edges":[{"from":"a","to":"b","counts":{"t":0}}],"first_counts":{},"last_counts":{}}"#;
        assert!(matches!(
            parse_graph(text.as_bytes()),
            Err(GraphError::Format(_))
        ));
        assert!(matches!(
            parse_graph("nope".as_bytes()),
            Err(GraphError::Format(_))
        ));
    }
}
