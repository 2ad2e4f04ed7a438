//! Shared fixtures for the benchmarks.

use procgraph::corpus::{generate_synthetic_corpus, BranchingModel, Corpus, GeneratorSpec};
use procgraph::{build_graph, OnlinePath, ProcGraph};

/// Random-branching corpus of `n_videos` walks over `n_tasks` x 20 actions.
pub fn corpus(n_tasks: usize, n_videos: usize, seed: u64) -> Corpus {
    let spec = GeneratorSpec::new(
        n_tasks,
        20,
        n_videos,
        BranchingModel::Random {
            out_degree: 3,
            terminal_prob: 0.1,
        },
        seed,
    )
    .with_length_range(4, 20);
    generate_synthetic_corpus(&spec)
        .expect("fixture spec is valid")
        .corpus
}

/// Graph over [`corpus`] plus the first few steps of every video as queries.
pub fn graph_and_paths(n_tasks: usize, n_videos: usize, seed: u64) -> (ProcGraph, Vec<OnlinePath>) {
    let c = corpus(n_tasks, n_videos, seed);
    let g = build_graph(&c).expect("non-empty corpus");
    let paths = c
        .videos()
        .iter()
        .map(|v| OnlinePath::from_nodes(v.labels().take(3)))
        .collect();
    (g, paths)
}
