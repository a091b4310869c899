use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ffhr_bench::{ball_point, ball_table, rng, tree_setup};
use ffhr_core::ball::{distance, exp0, log0, mobius_add};
use ffhr_core::encoder::{fpmgcn_forward, gyromidpoint};
use ffhr_core::scoring::hin;
use ffhr_core::Curvature;

fn pointwise(c: &mut Criterion) {
    let k = Curvature::ONE;
    for n in [8, 32, 128] {
        let mut r = rng(n as u64);
        let x = ball_point(&mut r, n, k);
        let y = ball_point(&mut r, n, k);
        let mut g = c.benchmark_group("pointwise");
        g.bench_with_input(BenchmarkId::new("mobius_add", n), &n, |b, _| {
            b.iter(|| mobius_add(black_box(&x), black_box(&y), k))
        });
        g.bench_with_input(BenchmarkId::new("exp0_log0", n), &n, |b, _| {
            b.iter(|| exp0(&log0(black_box(&x), k), k))
        });
        g.bench_with_input(BenchmarkId::new("distance", n), &n, |b, _| {
            b.iter(|| distance(black_box(&x), black_box(&y), k))
        });
        g.bench_with_input(BenchmarkId::new("hin", n), &n, |b, _| b.iter(|| hin(black_box(&x), black_box(&y), k)));
        g.finish();
    }
}

fn midpoint(c: &mut Criterion) {
    let k = Curvature::ONE;
    let mut r = rng(7);
    let mut g = c.benchmark_group("gyromidpoint");
    for m in [4, 32, 256] {
        let table = ball_table(&mut r, m, 32, k);
        let rows: Vec<&[f64]> = table.rows().into_iter().map(|row| row.to_slice().unwrap()).collect();
        let weights: Vec<f64> = (0..m).map(|i| 1.0 + i as f64 / m as f64).collect();
        g.bench_with_input(BenchmarkId::from_parameter(m), &m, |b, _| {
            b.iter(|| gyromidpoint(black_box(&rows), black_box(&weights), k).unwrap())
        });
    }
    g.finish();
}

fn encoder(c: &mut Criterion) {
    let mut g = c.benchmark_group("fpmgcn_forward");
    g.sample_size(20);
    for depth in [6, 9] {
        let s = tree_setup(depth, 32, true);
        let base = s.params.base_table();
        let layers = [s.params.layer(0)];
        let cfg = s.params.config().encoder.clone();
        let k = s.params.curvature();
        g.bench_with_input(BenchmarkId::new("tree_depth", depth), &depth, |b, _| {
            b.iter(|| fpmgcn_forward(black_box(&base), &s.adjacency, &layers, &cfg, k).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, pointwise, midpoint, encoder);
criterion_main!(benches);
