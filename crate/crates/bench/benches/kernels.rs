use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use gnocchi::diffusion::{mmd, mmd_with_grad, DiffusionSchedule, NoisePredictor};
use gnocchi::nn::Gru;
use gnocchi_bench::{normal2, normal3, rng};
use ndarray::Array2;

fn gru_step(c: &mut Criterion) {
    let mut g = c.benchmark_group("gru_step");
    for hidden in [64, 128, 256] {
        let gru = Gru::new(133, hidden, &mut rng(0));
        let x = normal2((64, 133), 1);
        let h = Array2::zeros((64, hidden));
        g.bench_with_input(BenchmarkId::from_parameter(hidden), &hidden, |b, _| {
            b.iter(|| gru.step(black_box(x.view()), black_box(h.view())).unwrap())
        });
    }
    g.finish();
}

fn mmd_kernel(c: &mut Criterion) {
    let x = normal2((64, 5), 2);
    let y = normal2((64, 5), 3);
    c.bench_function("mmd_64x5", |b| b.iter(|| mmd(black_box(x.view()), black_box(y.view()), 10.0)));
    c.bench_function("mmd_with_grad_64x5", |b| {
        b.iter(|| mmd_with_grad(black_box(x.view()), black_box(y.view()), 10.0))
    });
}

fn denoiser_pass(c: &mut Criterion) {
    // One reverse-process step is one predictor pass over a 40-bin window.
    let mut g = c.benchmark_group("denoiser_pass");
    g.sample_size(10);
    let sched = DiffusionSchedule::linear(200, 1e-3, 1e-2).unwrap();
    for hidden in [64, 256] {
        let p = NoisePredictor::new(128, 5, 5, hidden, &mut rng(4));
        let x = normal3((40, 16, 128), 5);
        let codes = normal2((16, 5), 6);
        let steps = vec![sched.n_steps(); 16];
        g.bench_with_input(BenchmarkId::from_parameter(hidden), &hidden, |b, _| {
            b.iter(|| p.forward(black_box(x.view()), &steps, codes.view(), None).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, gru_step, mmd_kernel, denoiser_pass);
criterion_main!(benches);
