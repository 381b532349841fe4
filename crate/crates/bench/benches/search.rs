use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};
use paretonas_core::archspace::{decode, random_genome};
use paretonas_core::fitness::fitness;
use paretonas_core::ga::{search_budget, BudgetConstraint};
use paretonas_core::rng::seeded;
use paretonas_core::{FitnessWeights, GaConfig, SearchSpaceConfig};

fn decode_and_score(c: &mut Criterion) {
    let cfg = SearchSpaceConfig::default();
    let w = FitnessWeights::default();
    let mut rng = seeded(1);
    let genomes: Vec<_> = (0..256).map(|_| random_genome(&cfg, &mut rng)).collect();
    let mut i = 0;
    c.bench_function("decode", |b| {
        b.iter(|| {
            i = (i + 1) % genomes.len();
            decode(black_box(&genomes[i]), &cfg).unwrap()
        })
    });
    c.bench_function("fitness", |b| {
        b.iter(|| {
            i = (i + 1) % genomes.len();
            fitness(black_box(&genomes[i]), &cfg, &w).unwrap()
        })
    });
}

fn ga(c: &mut Criterion) {
    let cfg = SearchSpaceConfig::default();
    let w = FitnessWeights::default();
    let mut group = c.benchmark_group("ga");
    group.sample_size(10);
    for budget in [600e6, 2000e6] {
        group.bench_function(format!("search_budget_{}M", budget / 1e6), |b| {
            b.iter_batched(
                || GaConfig { rng_seed: 3, ..Default::default() },
                |ga| search_budget(&cfg, &w, &ga, BudgetConstraint::macs_only(budget, w.rho0)).unwrap(),
                BatchSize::SmallInput,
            )
        });
    }
    group.finish();
}

criterion_group!(benches, decode_and_score, ga);
criterion_main!(benches);
