use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use std::hint::black_box;

use splitlora::linalg::svd;
use splitlora::subspace::{solve_k_split, SolverConfig};
use splitlora_bench::{bench_net, decaying_spectrum, random_matrix};

fn bench_svd(c: &mut Criterion) {
    let m = random_matrix(64, 64, 1);
    c.bench_function("svd_64x64", |b| b.iter(|| svd(black_box(&m)).unwrap()));
    let tall = random_matrix(64, 32, 2);
    c.bench_function("svd_64x32", |b| b.iter(|| svd(black_box(&tall)).unwrap()));
}

fn bench_solver(c: &mut Criterion) {
    let spectrum = decaying_spectrum(512);
    let cfg = SolverConfig { alpha: 20.0, tau: 0.02, task_index: 4 };
    c.bench_function("solve_k_split_d512", |b| {
        b.iter(|| solve_k_split(black_box(&spectrum), black_box(&cfg)).unwrap())
    });
}

fn bench_backward(c: &mut Criterion) {
    let (net, x, y) = bench_net(5);
    c.bench_function("forward_backward_batch64", |b| {
        b.iter_batched(
            || net.clone(),
            |net| {
                let cache = net.forward(black_box(&x)).unwrap();
                net.backward(&cache, black_box(&y)).unwrap()
            },
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(benches, bench_svd, bench_solver, bench_backward);
criterion_main!(benches);
