//! Sequential vs rayon-parallel throughput on the data-parallel workloads:
//! dataset generation and independent experiment grid cells.

use avsc::harness::model::tiny_bench_config;
use avsc::harness::runners::ablate_modality;
use avsc::parallel::Parallelism;
use avsc::synthdata::{generate_dataset, SceneSpec};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn modes() -> Vec<(&'static str, Parallelism)> {
    #[allow(unused_mut)] // mutated only when the parallel feature is on
    let mut v = vec![("sequential", Parallelism::Sequential)];
    #[cfg(feature = "parallel")]
    v.push(("rayon", Parallelism::Rayon));
    v
}

fn bench_dataset_generation(c: &mut Criterion) {
    let spec = SceneSpec::default();
    let mut group = c.benchmark_group("generate_dataset_400");
    for (name, par) in modes() {
        group.bench_with_input(BenchmarkId::from_parameter(name), &par, |b, &par| {
            b.iter(|| generate_dataset(&spec, 400, 7, par).unwrap());
        });
    }
    group.finish();
}

fn bench_grid_cells(c: &mut Criterion) {
    let cfg = tiny_bench_config();
    let mut group = c.benchmark_group("modality_grid_2_seeds");
    group.sample_size(10);
    for (name, par) in modes() {
        group.bench_with_input(BenchmarkId::from_parameter(name), &par, |b, &par| {
            b.iter(|| ablate_modality(&cfg, &[0, 1], par).unwrap());
        });
    }
    group.finish();
}

criterion_group!(benches, bench_dataset_generation, bench_grid_cells);
criterion_main!(benches);
