//! Row-parallel kernels on the global rayon pool against the same kernels on
//! a single-thread pool. Build with `--no-default-features` to time the plain
//! sequential loops instead.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use flowood::flow::{Architecture, FlowModel};
use flowood::metrics::uniformity;
use flowood::numerics::Matrix;
use flowood::l2_normalize;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0f32..1.0))
}

fn pools() -> Vec<(&'static str, Option<rayon::ThreadPool>)> {
    let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    vec![("parallel", None), ("sequential", Some(single))]
}

fn run<R: Send>(pool: &Option<rayon::ThreadPool>, f: impl FnOnce() -> R + Send) -> R {
    match pool {
        Some(p) => p.install(f),
        None => f(),
    }
}

fn bench_log_prob(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let model = FlowModel::<f32>::new(128, 4, 256, Architecture::Glow, &mut rng).unwrap();
    let x = random_matrix(2048, 128, 2);
    let mut group = c.benchmark_group("log_prob");
    for (name, pool) in pools() {
        group.bench_function(BenchmarkId::new(name, "2048x128"), |b| {
            b.iter(|| run(&pool, || model.log_prob(&x).unwrap()))
        });
    }
    group.finish();
}

fn bench_gemm(c: &mut Criterion) {
    let a = random_matrix(1024, 512, 3);
    let w = random_matrix(512, 512, 4);
    let mut group = c.benchmark_group("gemm");
    for (name, pool) in pools() {
        group.bench_function(BenchmarkId::new(name, "1024x512x512"), |b| {
            b.iter(|| run(&pool, || a.matmul_nt(&w).unwrap()))
        });
    }
    group.finish();
}

fn bench_uniformity(c: &mut Criterion) {
    let (z, _) = l2_normalize(&random_matrix(2000, 64, 5)).unwrap();
    let mut group = c.benchmark_group("uniformity");
    group.sample_size(10);
    for (name, pool) in pools() {
        group.bench_function(BenchmarkId::new(name, "2000x64"), |b| {
            b.iter(|| run(&pool, || uniformity(&z, 2.0).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, bench_log_prob, bench_gemm, bench_uniformity);
criterion_main!(benches);
