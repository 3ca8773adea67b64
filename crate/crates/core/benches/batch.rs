use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use memo_core::harness::{RunConfig, Trainer};
use memo_core::par::Exec;

/// Forward and backward passes of one desk-scale training batch.
fn batch_outcome(c: &mut Criterion) {
    let mut group = c.benchmark_group("batch_outcome");
    group.sample_size(10);
    for exec in [Exec::Sequential, Exec::Parallel] {
        let mut cfg = RunConfig::desk();
        cfg.batch_size = 32;
        cfg.exec = exec;
        let trainer = Trainer::new(cfg).expect("desk preset is valid");
        let name = format!("{exec:?}").to_lowercase();
        group.bench_with_input(BenchmarkId::new(name, 32), &trainer, |b, t| {
            let mut step = 0;
            b.iter(|| {
                step += 1;
                t.batch_outcome(step).expect("batch runs")
            })
        });
    }
    group.finish();
}

criterion_group!(benches, batch_outcome);
criterion_main!(benches);
