use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use grcl_bench::{conflicting_gradients, model_fixture, random_vec, rng};
use grcl_core::{contrastive_grad, kmeans, project_n, project_two, ContrastiveConfig};
use std::hint::black_box;

fn projection(c: &mut Criterion) {
    let mut group = c.benchmark_group("project_two");
    for len in [1_000, 10_000, 100_000] {
        let g = conflicting_gradients(len, 1);
        group.bench_with_input(BenchmarkId::from_parameter(len), &g, |b, g| {
            b.iter(|| project_two(black_box(g)).unwrap())
        });
    }
    group.finish();

    let mut r = rng(2);
    let g_t = random_vec(&mut r, 5_000);
    let constraints: Vec<Vec<f64>> = (0..12).map(|_| random_vec(&mut r, 5_000)).collect();
    let refs: Vec<&[f64]> = constraints.iter().map(|c| c.as_slice()).collect();
    c.bench_function("project_n/12x5000", |b| b.iter(|| project_n(black_box(&g_t), &refs).unwrap()));
}

fn gradients(c: &mut Criterion) {
    let f = model_fixture(64, 2_000, 3);
    let cfg = ContrastiveConfig::default();
    c.bench_function("contrastive_grad/64", |b| {
        let mut r = rng(4);
        b.iter(|| contrastive_grad(&f.params, black_box(&f.batch), &f.bank, &cfg, &mut r).unwrap())
    });
    c.bench_function("ce_loss_and_grad/64", |b| {
        b.iter(|| f.params.ce_loss_and_grad(black_box(&f.labeled)).unwrap())
    });
}

fn clustering(c: &mut Criterion) {
    let mut r = rng(5);
    let points: Vec<Vec<f64>> = (0..1_600).map(|_| random_vec(&mut r, 16)).collect();
    c.bench_function("kmeans/1600x16/k4", |b| {
        b.iter(|| {
            let mut r = rng(6);
            kmeans(black_box(&points), 4, &mut r, 100).unwrap()
        })
    });
}

criterion_group!(benches, projection, gradients, clustering);
criterion_main!(benches);
