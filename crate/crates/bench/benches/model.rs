use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use das_bench::{dataset, model};
use das_core::trainer::{batch_gradients, Adam, LossPositions};
use das_core::{ModelConfig, TrainingWindow};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn bench_model(c: &mut Criterion) {
    let ds = dataset(200, 5);
    let m = model(&ds, ModelConfig::desk());
    let batch: Vec<&TrainingWindow> = ds.train.iter().take(128).collect();

    let mut group = c.benchmark_group("desk_model");
    group.bench_function("predict_1k_windows", |b| {
        let windows = &ds.train[..1000.min(ds.train.len())];
        b.iter(|| m.predict(black_box(windows)).unwrap())
    });
    group.bench_function("train_step_batch_128", |b| {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut params = m.params.clone();
        let mut adam = Adam::default();
        b.iter(|| {
            let (_, grads) = batch_gradients(&m, &batch, LossPositions::Last, Some(&mut rng)).unwrap();
            adam.step(&mut params, &grads, 1e-4).unwrap();
        })
    });
    group.finish();
}

criterion_group!(benches, bench_model);
criterion_main!(benches);
