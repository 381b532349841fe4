use criterion::{black_box, criterion_group, criterion_main, Criterion};
use paretonas_core::fedsim::{desk_space, init_federation, maxnet_aggregate, run_training};
use paretonas_core::rng::seeded;
use paretonas_core::{ActivityMask, ArchGenome, FedConfig};
use rand::Rng;

fn aggregate(c: &mut Criterion) {
    let mut rng = seeded(5);
    let p = 40_000;
    let masks: Vec<ActivityMask> =
        (0..10).map(|_| ActivityMask { active: (0..p).map(|_| rng.random_bool(0.7)).collect() }).collect();
    let deltas: Vec<Vec<f64>> = (0..10).map(|_| (0..p).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let refs: Vec<&ActivityMask> = masks.iter().collect();
    c.bench_function("maxnet_aggregate_10x40k", |b| {
        b.iter(|| maxnet_aggregate(black_box(&deltas), &refs, 3, 0.5, 1e-8).unwrap())
    });
}

fn rounds(c: &mut Criterion) {
    let cfg = desk_space();
    let fed = FedConfig { rounds: 20, ..Default::default() };
    let cache = [ArchGenome::min(&cfg), ArchGenome::max(&cfg)];
    let mut group = c.benchmark_group("fedsim");
    group.sample_size(10);
    group.bench_function("20_rounds", |b| {
        b.iter(|| {
            let (mut s, mut clients) = init_federation(&cfg, &fed).unwrap();
            run_training(&cfg, &fed, &mut s, &mut clients, &cache).unwrap()
        })
    });
    group.finish();
}

criterion_group!(benches, aggregate, rounds);
criterion_main!(benches);
