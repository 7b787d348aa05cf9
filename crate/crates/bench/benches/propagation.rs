use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use kmwave::{field_profile, step, step_variational, uniform_grid, ReconstructSettings, Scheme};
use kmwave_bench::{converging_beam, harmonic, unit_circle};

fn steppers(c: &mut Criterion) {
    let mut group = c.benchmark_group("step");
    let sym = harmonic();
    for n in [256, 4096] {
        let chart = unit_circle(n);
        for scheme in [Scheme::Rk4, Scheme::Midpoint] {
            group.bench_with_input(
                BenchmarkId::new(format!("{scheme:?}"), n),
                &chart,
                |b, ch| b.iter(|| step(black_box(ch), &sym, 0.0, 0.05, scheme).unwrap()),
            );
        }
        group.bench_with_input(BenchmarkId::new("Variational", n), &chart, |b, ch| {
            b.iter(|| step_variational(black_box(ch), &sym, 0.0, 0.05).unwrap())
        });
    }
    group.finish();
}

fn reconstruction(c: &mut Criterion) {
    let mut group = c.benchmark_group("field_profile");
    group.sample_size(20);
    let grid = uniform_grid(-0.8, 0.8, 161);
    let settings = ReconstructSettings::default();
    for (label, t) in [("smooth", 0.5), ("focus", 1.0), ("past_focus", 2.0)] {
        let chart = converging_beam(1201, 0.005, t);
        group.bench_function(label, |b| {
            b.iter(|| field_profile(black_box(&chart), &grid, &settings).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, steppers, reconstruction);
criterion_main!(benches);
