//! Parallel-vs-sequential comparison of the hot kernels. The `parallel`
//! feature keeps the sequential path available at runtime, so one binary
//! benchmarks both.

use criterion::{criterion_group, criterion_main, Criterion};
use fagan_tensor::{kernels, par, Tensor};
use std::hint::black_box;

fn tensor(shape: &[usize], seed: u32) -> Tensor<f32> {
    let mut state = seed.wrapping_mul(2654435761).wrapping_add(1);
    Tensor::from_fn(shape, |_| {
        state = state.wrapping_mul(1664525).wrapping_add(1013904223);
        (state >> 9) as f32 / (1 << 23) as f32 - 1.0
    })
}

fn bench_modes(c: &mut Criterion, name: &str, mut f: impl FnMut()) {
    let mut group = c.benchmark_group(name);
    group.sample_size(20);
    for (mode, sequential) in [("seq", true), ("par", false)] {
        group.bench_function(mode, |b| {
            par::set_sequential(sequential);
            b.iter(&mut f);
        });
    }
    par::set_sequential(false);
    group.finish();
}

fn conv_benches(c: &mut Criterion) {
    let x = tensor(&[32, 32, 16, 16], 1);
    let k = tensor(&[64, 32, 3, 3], 2);
    bench_modes(c, "conv2d_fwd_32x32c16", || {
        black_box(kernels::conv2d(&x, &k, 1, 1));
    });

    let gy = kernels::conv2d(&x, &k, 1, 1);
    bench_modes(c, "conv2d_bwd_input", || {
        black_box(kernels::conv2d_bwd_input(&gy, &k, 1, 1, (16, 16)));
    });
    bench_modes(c, "conv2d_bwd_kernel", || {
        black_box(kernels::conv2d_bwd_kernel(&x, &gy, 1, 1, (3, 3)));
    });

    let up_in = tensor(&[32, 64, 16, 16], 3);
    bench_modes(c, "upsample2x", || {
        black_box(kernels::upsample2x(&up_in));
    });
}

criterion_group!(benches, conv_benches);
criterion_main!(benches);
