use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use edgekit::ensemble_sim::{run_monte_carlo, run_monte_carlo_seq, EnsembleConfig, EntryDistribution};
use edgekit::PopulationSpectrum;

fn replicates(c: &mut Criterion) {
    let mut group = c.benchmark_group("monte_carlo");
    group.sample_size(10);
    for n in [50usize, 100] {
        let spec = PopulationSpectrum::two_point(1.0, 2.0, 0.5, n, n).unwrap();
        let config = EnsembleConfig::new(spec, EntryDistribution::Gaussian, 64, 3, 1);
        // the rayon path only differs from the sequential one with `parallel` on
        group.bench_with_input(BenchmarkId::new("rayon", n), &config, |b, cfg| {
            b.iter(|| run_monte_carlo(cfg).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("sequential", n), &config, |b, cfg| {
            b.iter(|| run_monte_carlo_seq(cfg).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, replicates);
criterion_main!(benches);
