use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use mhrc::dynsys::{build_continual_dataset, IntegratorConfig, SystemKind};
use mhrc::exec::Execution;
use mhrc::experiment::{run_experiment, ExperimentConfig};

fn small_experiment() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::standard(SystemKind::Lorenz63);
    cfg.reservoir.size = 200;
    cfg.reservoir.sparsity = 0.05;
    cfg.num_seeds = 4;
    cfg
}

fn modes() -> [(&'static str, Execution); 2] {
    [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)]
}

fn seeds(c: &mut Criterion) {
    let cfg = small_experiment();
    let mut group = c.benchmark_group("continual_over_seeds");
    group.sample_size(10);
    for (name, exec) in modes() {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| run_experiment(&cfg, 0, exec).unwrap())
        });
    }
    group.finish();
}

fn datasets(c: &mut Criterion) {
    let specs = ExperimentConfig::standard(SystemKind::Lorenz96).environments;
    let icfg = IntegratorConfig::default();
    let mut group = c.benchmark_group("l96_dataset_generation");
    group.sample_size(10);
    for (name, exec) in modes() {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| build_continual_dataset(&specs, &icfg, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, seeds, datasets);
criterion_main!(benches);
