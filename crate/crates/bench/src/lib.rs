//! Shared fixtures for the benchmarks in `benches/`.

use das_core::featureizer::{Dataset, FeatureSet, TimeLimits};
use das_core::ingest::{split_users, SplitRatio};
use das_core::sessionizer::{sessionize, DEFAULT_THRESHOLD_SECS};
use das_core::synthgen::{generate, SynthConfig, Synthetic};
use das_core::trainer::init_params;
use das_core::{Model, ModelConfig, ModelSpec};

pub fn synthetic(users: usize) -> Synthetic {
    generate(&SynthConfig {
        users,
        ..SynthConfig::default()
    })
    .expect("default synth config is valid")
}

/// A windowed dataset of `users` synthetic users.
pub fn dataset(users: usize, seq_size: usize) -> Dataset {
    let synth = synthetic(users);
    let seqs = sessionize(&synth.records, DEFAULT_THRESHOLD_SECS).unwrap();
    let partition = split_users(seqs.iter().map(|s| s.user_id.as_str()), SplitRatio::default(), 7).unwrap();
    Dataset::build(&seqs, &partition, TimeLimits::default(), seq_size).unwrap()
}

/// A freshly initialised model sized for `ds`.
pub fn model(ds: &Dataset, config: ModelConfig) -> Model<f32> {
    let spec = ModelSpec::new(config, FeatureSet::full(), ds.vocab.sizes(ds.seq_size)).unwrap();
    let params = init_params(&spec, 1);
    Model::new(spec, params).unwrap()
}
