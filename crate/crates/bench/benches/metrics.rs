use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use exguard_bench::edit_pair;
use exguard_core::metrics;

fn edit_similarity(c: &mut Criterion) {
    let mut group = c.benchmark_group("edit_similarity");
    for lines in [10, 50, 200] {
        let (a, b) = edit_pair(lines, 5);
        group.bench_with_input(BenchmarkId::from_parameter(lines), &(a, b), |bench, (a, b)| {
            bench.iter(|| metrics::edit_similarity(a, b, false))
        });
    }
    group.finish();
}

criterion_group!(benches, edit_similarity);
criterion_main!(benches);
