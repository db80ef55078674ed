use adis_bench::{grid, operator, optics, scene};
use adis_core::optics::{build_psf_stack, minimum_side};
use adis_core::recon::{fista_reconstruct, SolverConfig};
use adis_core::sensor::forward_apply;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn forward_adjoint(c: &mut Criterion) {
    let mut group = c.benchmark_group("operator");
    for (bands, size) in [(8, 64), (28, 64), (28, 128)] {
        let op = operator(bands, size);
        let cube = scene(bands, size);
        let meas = op.apply(cube.data().view()).unwrap();
        let id = format!("{size}x{size}x{bands}");
        group.bench_with_input(BenchmarkId::new("forward", &id), &cube, |b, x| {
            b.iter(|| op.apply(x.data().view()).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("adjoint", &id), &meas, |b, y| {
            b.iter(|| op.adjoint(y.view()).unwrap())
        });
    }
    group.finish();
}

fn psf_stack(c: &mut Criterion) {
    let g = grid(28);
    let cfg = optics(&g);
    let side = minimum_side(&cfg, g.max()).unwrap();
    c.bench_function("psf/analytic 28 bands", |b| {
        b.iter(|| build_psf_stack(&cfg, &g, side).unwrap())
    });
}

fn fista(c: &mut Criterion) {
    let op = operator(8, 32);
    let meas = forward_apply(&scene(8, 32), &op).unwrap();
    let cfg = SolverConfig {
        iterations: 20,
        ..SolverConfig::default()
    };
    let mut group = c.benchmark_group("fista");
    group.sample_size(10);
    group.bench_function("20 iterations 32x32x8", |b| {
        b.iter(|| fista_reconstruct(&meas, &op, &cfg, None).unwrap())
    });
    group.finish();
}

criterion_group!(benches, forward_adjoint, psf_stack, fista);
criterion_main!(benches);
