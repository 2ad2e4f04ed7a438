use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use procgraph::build_graph;
use procgraph::graph::build_graph_sharded;
use procgraph_bench::corpus;

fn bench_build(c: &mut Criterion) {
    let mut group = c.benchmark_group("build_graph");
    for n in [1_000, 10_000] {
        let corpus = corpus(50, n, 7);
        group.throughput(Throughput::Elements(corpus.n_clips() as u64));
        group.bench_with_input(BenchmarkId::new("incremental", n), &corpus, |b, c| {
            b.iter(|| build_graph(c).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("sharded_8", n), &corpus, |b, c| {
            b.iter(|| build_graph_sharded(c, 8).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench_build);
criterion_main!(benches);
