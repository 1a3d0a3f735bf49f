use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use tknn_bench::fixture;
use tknn_core::accountant::{compose_identical, subsampled_gaussian_pld};
use tknn_core::dp::{dp_tknn_shapley_all, DpParams};
use tknn_core::knn::knn_shapley_all;
use tknn_core::tknn::tknn_shapley_all;
use tknn_core::{DistanceMetric, KnnConfig, KnnVariant, TknnConfig};

fn valuation(c: &mut Criterion) {
    let mut group = c.benchmark_group("valuation");
    group.sample_size(10);
    let metric = DistanceMetric::NegativeCosine;
    for n in [10_000, 100_000] {
        let (train, val) = fixture(n, 20, 10, 7);
        group.throughput(Throughput::Elements((n * val.len()) as u64));
        group.bench_with_input(BenchmarkId::new("tknn", n), &n, |b, _| {
            b.iter(|| tknn_shapley_all(&train, &TknnConfig::new(-0.5, metric), &val).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("knn", n), &n, |b, _| {
            b.iter(|| knn_shapley_all(&train, &KnnConfig::new(5, metric, KnnVariant::Refined), &val).unwrap())
        });
        let params = DpParams::with_sigma(5.0, 1e-4, 0.01, 3).unwrap();
        group.bench_with_input(BenchmarkId::new("dp-tknn", n), &n, |b, _| {
            b.iter(|| dp_tknn_shapley_all(&train, &TknnConfig::new(-0.5, metric), &val, &params).unwrap())
        });
    }
    group.finish();
}

fn accounting(c: &mut Criterion) {
    let mut group = c.benchmark_group("accountant");
    group.sample_size(10);
    let pld = subsampled_gaussian_pld(3f64.sqrt(), 5.0, 0.01, 1e-4, 1e-10).unwrap();
    for m in [10, 200] {
        group.bench_with_input(BenchmarkId::new("compose", m), &m, |b, &m| {
            b.iter(|| compose_identical(&pld, m).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, valuation, accounting);
criterion_main!(benches);
