use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use jumpset_core::{comparison_constants, pushforward_grid, Bump, GridImage, LipschitzGraph, Point, ShiftTransform, Transform};

fn shift() -> ShiftTransform {
    let g = LipschitzGraph::circle(Point::new(0.6, 0.8), Point::new(0.45, 0.3), 0.3, 0.2).unwrap();
    let (lo, hi) = g.domain();
    ShiftTransform::new(g, 0.5 * (lo + hi), 0.1, 0.05, Bump::Standard).unwrap()
}

fn apply(c: &mut Criterion) {
    let t = shift();
    let pts: Vec<Point> = (0..1024).map(|k| Point::new((k % 32) as f64 / 32.0, (k / 32) as f64 / 32.0)).collect();
    c.bench_function("shift apply 1024 points", |b| {
        b.iter(|| pts.iter().map(|&x| t.apply(black_box(x)).x).sum::<f64>())
    });
}

fn constants(c: &mut Criterion) {
    let t = shift();
    let pair = (Transform::Shift(t.clone()), Transform::Shift(t.with_rho(-0.05).unwrap()));
    c.bench_function("comparison constants density 64", |b| {
        b.iter(|| comparison_constants(&pair.0, &pair.1, black_box(64)))
    });
}

fn pushforward(c: &mut Criterion) {
    let t = shift();
    let u = GridImage::from_fn(256, 256, 1.0 / 256.0, |x| (3.0 * x.x).sin() * x.y).unwrap();
    c.bench_function("pushforward 256x256", |b| b.iter(|| pushforward_grid(black_box(&u), &t)));
}

criterion_group!(benches, apply, constants, pushforward);
criterion_main!(benches);
