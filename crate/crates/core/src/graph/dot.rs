use std::fmt::Write;

use super::ProcGraph;

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for ch in s.chars() {
        if ch == '"' || ch == '\\' {
            out.push('\\');
        }
        out.push(ch);
    }
    out.push('"');
    out
}

/// Graphviz rendering; edge labels are task-summed counts.
pub(super) fn to_dot(g: &ProcGraph) -> String {
    let mut out = String::from("digraph procgraph {\n");
    for n in g.nodes().iter() {
        let _ = writeln!(out, "    {};", quote(n));
    }
    for (from, to, counts) in g.edges() {
        let _ = writeln!(
            out,
            "    {} -> {} [label=\"{}\"];",
            quote(from),
            quote(to),
            counts.total()
        );
    }
    out.push_str("}\n");
    out
}

#[cfg(test)]
mod tests {
    use crate::graph::build_graph;
    use crate::graph::tests::corpus_of;

    #[test]
    fn renders_nodes_and_counted_edges() {
        let g = build_graph(&corpus_of(&[("t", &["a", "b"]), ("t", &["a", "b"])])).unwrap();
        assert_eq!(
            g.to_dot(),
            "digraph procgraph {\n    \"a\";\n    \"b\";\n    \"a\" -> \"b\" [label=\"2\"];\n}\n"
        );
    }
}
