use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use setlstm_bench::{desk_model, er_layer, random_batch, random_dense};
use setlstm_core::optim::{adam_step, AdamHyper, AdamState};
use setlstm_core::rng::seeded;
use setlstm_core::sparse::{dense_times_sparse, dense_times_sparse_transposed, masked_grad};
use setlstm_core::topology::rewire;
use setlstm_core::trainer::slot_shapes;

fn kernels(c: &mut Criterion) {
    let mut g = c.benchmark_group("kernels_256");
    let x = random_dense(32, 256, 1);
    for eps in [2.0, 10.0, f64::INFINITY] {
        let w = er_layer(256, 256, eps, 2);
        let label = if eps.is_finite() { format!("eps{eps}") } else { "dense".into() };
        g.bench_with_input(BenchmarkId::new("x_times_w", &label), &w, |b, w| {
            b.iter(|| dense_times_sparse(black_box(&x), w).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("dy_times_wt", &label), &w, |b, w| {
            b.iter(|| dense_times_sparse_transposed(black_box(&x), w).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("masked_grad", &label), &w, |b, w| {
            b.iter(|| masked_grad(black_box(&x), black_box(&x), w.mask()).unwrap())
        });
    }
    g.finish();
}

fn topology(c: &mut Criterion) {
    let w = er_layer(256, 256, 10.0, 3);
    c.bench_function("rewire_256_eps10", |b| {
        b.iter(|| rewire(black_box(&w), 0.3, true, &mut seeded(4)))
    });
    let emb = er_layer(20000, 256, 10.0, 5);
    c.bench_function("rewire_embedding_20000", |b| {
        b.iter(|| rewire(black_box(&emb), 0.3, true, &mut seeded(6)))
    });
}

fn training_step(c: &mut Criterion) {
    let model = desk_model(400, 16, 10.0, 7);
    let (tokens, labels) = random_batch(32, 16, 400, 8);
    c.bench_function("forward_backward_b32_t16", |b| {
        b.iter(|| model.forward_backward(black_box(&tokens), &labels).unwrap())
    });
    let grads = model.forward_backward(&tokens, &labels).unwrap().grads;
    let mut m = model.clone();
    let mut state = AdamState::new(AdamHyper::default(), slot_shapes(&m));
    c.bench_function("adam_step_desk", |b| {
        b.iter(|| adam_step(&mut m.params_mut(), &grads.as_refs(), &mut state).unwrap())
    });
}

criterion_group!(benches, kernels, topology, training_step);
criterion_main!(benches);
