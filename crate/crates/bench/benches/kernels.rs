use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use std::hint::black_box;

use sparseq::agents::Member;
use sparseq::nn::{mlp_specs, NetworkParams};
use sparseq::pruning::{magnitude_mask, Mask};
use sparseq::rng::RngStream;

fn network(widths: &[usize]) -> NetworkParams {
    NetworkParams::init(&mlp_specs(widths), &mut RngStream::new(0, "bench")).unwrap()
}

fn batch(width: usize, size: usize) -> Vec<f64> {
    let mut rng = RngStream::new(1, "inputs");
    (0..width * size)
        .map(|_| rng.uniform_range(-1.0, 1.0))
        .collect()
}

fn forward_backward(c: &mut Criterion) {
    let params = network(&[4, 64, 64, 1]);
    let mask = Mask::ones(&params);
    let inputs = batch(4, 32);
    let actions = vec![0; 32];
    let targets = vec![0.5; 32];
    c.bench_function("forward 4x64x64x1 batch 32", |b| {
        b.iter(|| params.forward_batch(&mask, black_box(&inputs), 32).unwrap())
    });
    c.bench_function("backward 4x64x64x1 batch 32", |b| {
        b.iter(|| {
            params
                .backward(&mask, black_box(&inputs), &actions, &targets)
                .unwrap()
        })
    });
}

fn pruning(c: &mut Criterion) {
    let params = network(&[4, 64, 64, 1]);
    c.bench_function("magnitude mask at 0.5", |b| {
        b.iter(|| magnitude_mask(black_box(&params), 0.5).unwrap())
    });
}

fn gradient_step(c: &mut Criterion) {
    let member = Member::new(network(&[10, 32, 32, 2]), 1e-3, 1.5e-4, 0);
    let inputs = batch(10, 32);
    let actions: Vec<usize> = (0..32).map(|i| i % 2).collect();
    let targets = vec![1.0; 32];
    c.bench_function("member train step 10x32x32x2 batch 32", |b| {
        b.iter_batched(
            || member.clone(),
            |mut m| m.train_step(&inputs, &actions, &targets).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(benches, forward_backward, pruning, gradient_step);
criterion_main!(benches);
