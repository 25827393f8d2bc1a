use std::hint::black_box;
use std::sync::Arc;

use criterion::{BatchSize, Criterion, criterion_group, criterion_main};
use interlace::analytics::label_components;
use interlace::green::GreenTable;
use interlace::lattice::{BoxRegion, Dim};
use interlace::potential::solve_equilibrium_box;
use interlace::sampler::{SamplerMethod, WindowSampler};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn d3() -> Dim {
    Dim::new(3).unwrap()
}

fn green(c: &mut Criterion) {
    c.bench_function("green_table_d3_r32", |b| b.iter(|| GreenTable::build(d3(), black_box(32), 1e-8).unwrap()));
}

fn potential(c: &mut Criterion) {
    let gt = GreenTable::build(d3(), 32, 1e-8).unwrap();
    c.bench_function("equilibrium_box_r8", |b| b.iter(|| solve_equilibrium_box(&BoxRegion::centered(3, black_box(8)), &gt).unwrap()));
}

fn sampling(c: &mut Criterion) {
    let gt = Arc::new(GreenTable::build(d3(), 64, 1e-8).unwrap());
    let exact = WindowSampler::new(BoxRegion::centered(3, 4), gt.clone(), SamplerMethod::default()).unwrap();
    let trunc = WindowSampler::new(BoxRegion::centered(3, 20), gt, SamplerMethod::Truncate { epsilon: 0.05 }).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    c.bench_function("sample_field_exact_w4_u1", |b| b.iter(|| exact.sample_field(1.0, &mut rng).unwrap()));
    c.bench_function("sample_field_truncate_w20_u0.1", |b| b.iter(|| trunc.sample_field(0.1, &mut rng).unwrap()));
    c.bench_function("label_components_w20", |b| {
        b.iter_batched(|| trunc.sample_field(0.5, &mut rng).unwrap(), |f| label_components(&f), BatchSize::SmallInput)
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = green, potential, sampling
}
criterion_main!(benches);
