use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use tfsparse::multiplier::{lambda_m_quadrature, GammaParametrization, MultiplierSpec, QuadratureOptions};
use tfsparse::signal::PowerPrefix;
use tfsparse::sparse::build_sparse;
use tfsparse::{ExponentTuple, FunctionPreset, SampledFunction};

fn triple(level: u32) -> [SampledFunction; 3] {
    [
        FunctionPreset::Bump { center: 0.5, width: 0.5 },
        FunctionPreset::Gaussian { center: 0.4, width: 0.3 },
        FunctionPreset::RandomTrig { seed: 3, degree: 4, center: 0.6, width: 0.8 },
    ]
    .map(|g| g.sample_at_level(level))
}

fn superlevel(c: &mut Criterion) {
    let f = triple(10);
    let prefix = PowerPrefix::new(&f[0], 1.8);
    c.bench_function("superlevel_cells/level10", |b| b.iter(|| prefix.superlevel_cells(black_box(0.3))));
}

fn sparse(c: &mut Criterion) {
    let f = triple(10);
    let p = ExponentTuple::from_f64([1.8; 3]);
    c.bench_function("build_sparse/level10", |b| {
        b.iter(|| build_sparse([&f[0], &f[1], &f[2]], black_box(&p), 0).unwrap())
    });
}

fn quadrature(c: &mut Criterion) {
    let f = triple(8);
    let opts = QuadratureOptions::default();
    let identity = MultiplierSpec::identity();
    let sign = MultiplierSpec::bht_sign(GammaParametrization::default());
    let mut g = c.benchmark_group("quadrature/level8");
    g.sample_size(10);
    g.bench_function("identity", |b| b.iter(|| lambda_m_quadrature(&identity, [&f[0], &f[1], &f[2]], &opts).unwrap()));
    g.bench_function("bht_sign", |b| b.iter(|| lambda_m_quadrature(&sign, [&f[0], &f[1], &f[2]], &opts).unwrap()));
    g.finish();
}

criterion_group!(benches, superlevel, sparse, quadrature);
criterion_main!(benches);
