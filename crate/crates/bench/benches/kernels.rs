use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use mmstt::numerics::matmul;
use mmstt::rasterize::{BoundingBox, GridSpec, InterpolationPlan};
use mmstt::{Model, ModelConfig, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f32> {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

fn bench_matmul(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let a = random(&[320, 32], &mut rng);
    let b = random(&[32, 128], &mut rng);
    c.bench_function("matmul 320x32x128", |bench| {
        bench.iter(|| matmul(black_box(&a), black_box(&b)).unwrap())
    });
}

fn bench_forward(c: &mut Criterion) {
    let cfg = ModelConfig {
        height: 16,
        width: 16,
        patch: 4,
        embed_dim: 32,
        layers: 2,
        heads: 4,
        ..ModelConfig::default()
    };
    let model = Model::<f32>::init(cfg.clone(), 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random(&[4, cfg.t_in, cfg.c_in, 16, 16], &mut rng);
    c.bench_function("forward batch 4, 16x16, L=2", |bench| {
        bench.iter(|| model.forward(black_box(&x)).unwrap())
    });
}

fn bench_interpolation(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let xy: Vec<(f64, f64)> = (0..2000)
        .map(|_| (rng.random_range(0.0..1000.0), rng.random_range(0.0..1000.0)))
        .collect();
    let values: Vec<f64> = (0..2000).map(|_| rng.random_range(-10.0..10.0)).collect();
    let grid = GridSpec::new(64, 16);
    let bbox = BoundingBox::enclosing(&xy).unwrap();
    c.bench_function("interpolation plan, 2000 points on 64x64", |bench| {
        bench.iter(|| InterpolationPlan::build(black_box(&xy), &grid, &bbox).unwrap())
    });
    let plan = InterpolationPlan::build(&xy, &grid, &bbox).unwrap();
    c.bench_function("interpolation apply, 64x64", |bench| {
        bench.iter(|| plan.apply(black_box(&values)).unwrap())
    });
}

criterion_group!(benches, bench_matmul, bench_forward, bench_interpolation);
criterion_main!(benches);
