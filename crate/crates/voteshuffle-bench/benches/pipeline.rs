//! Benchmarks for the hot paths: hypergeometric sampling, center
//! shuffling, scoring, and the ζ chart.

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use voteshuffle::shuffle::{hypergeometric_draw, shuffle_center};
use voteshuffle::{
    generate_election, score_table, zeta_series, GeneratorConfig, SeedSpec, VoteOption, ZetaForm,
};

fn bench_hypergeometric(c: &mut Criterion) {
    let mut group = c.benchmark_group("hypergeometric_draw");
    for (population, successes, draw) in [(2_000u64, 800u64, 600u64), (2_000_000, 700_000, 400)] {
        group.bench_function(format!("pop{population}_succ{successes}_draw{draw}"), |b| {
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            b.iter(|| hypergeometric_draw(&mut rng, population, successes, draw).unwrap());
        });
    }
    group.finish();
}

fn bench_shuffle_center(c: &mut Criterion) {
    let world = generate_election(&GeneratorConfig::reference_scale(64), SeedSpec::new(11))
        .expect("reference world");
    let center = world
        .centers
        .iter()
        .max_by_key(|center| center.notebooks.len())
        .expect("non-empty world")
        .clone();
    c.bench_function("shuffle_center", |b| {
        let mut replicate = 0u64;
        b.iter(|| {
            replicate += 1;
            shuffle_center(&center, SeedSpec::new(11).replicate(replicate))
        });
    });
}

fn bench_score_table(c: &mut Criterion) {
    let world = generate_election(&GeneratorConfig::reference_scale(500), SeedSpec::new(13))
        .expect("reference world");
    c.bench_function("score_table_500_centers", |b| {
        b.iter(|| score_table(&world));
    });
}

fn bench_zeta_series(c: &mut Criterion) {
    let world = generate_election(&GeneratorConfig::reference_scale(500), SeedSpec::new(17))
        .expect("reference world");
    let table = score_table(&world);
    let k_max = world.notebook_count() / 2;
    c.bench_function("zeta_series_full_sweep", |b| {
        b.iter_batched(
            || table.clone(),
            |table| {
                zeta_series(
                    &world,
                    &table,
                    (100, k_max),
                    VoteOption::No,
                    ZetaForm::Studentized,
                )
                .unwrap()
            },
            BatchSize::SmallInput,
        );
    });
}

criterion_group!(
    benches,
    bench_hypergeometric,
    bench_shuffle_center,
    bench_score_table,
    bench_zeta_series
);
criterion_main!(benches);
