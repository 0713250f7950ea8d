//! Training-throughput benchmarks for the boosting engine across its three
//! sampling modes, on a mid-sized synthetic panel.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use tempora_core::io::{generate_synthetic, SyntheticConfig};
use tempora_core::{BoostConfig, BoostMode, Booster, PanelSet};

fn training_panel() -> PanelSet {
    let config = SyntheticConfig {
        n_eras: 40,
        stocks_per_era: [200, 300],
        n_features: 20,
        seed: 42,
        ..SyntheticConfig::default()
    };
    generate_synthetic(&config).expect("synthetic panel")
}

fn bench_training(c: &mut Criterion) {
    let panel = training_panel();
    let mut group = c.benchmark_group("train");
    group.sample_size(10);
    for mode in [BoostMode::Gbdt, BoostMode::Dart, BoostMode::Goss] {
        let config = BoostConfig {
            mode,
            n_estimators: 30,
            num_leaves: 15,
            max_depth: 6,
            learning_rate: 0.1,
            feature_fraction: 0.8,
            seed: 7,
            ..BoostConfig::default()
        };
        group.bench_with_input(BenchmarkId::from_parameter(mode), &config, |b, cfg| {
            b.iter(|| {
                let model = Booster::train(black_box(&panel), "main", cfg, None).unwrap();
                black_box(model.n_trees())
            });
        });
    }
    group.finish();
}

fn bench_prediction(c: &mut Criterion) {
    let panel = training_panel();
    let config = BoostConfig {
        n_estimators: 50,
        num_leaves: 31,
        seed: 7,
        ..BoostConfig::default()
    };
    let model = Booster::train(&panel, "main", &config, None).unwrap();
    let era = &panel.eras()[0];
    c.bench_function("predict_era", |b| {
        b.iter(|| black_box(model.predict(black_box(era), 0).unwrap()))
    });
}

criterion_group!(benches, bench_training, bench_prediction);
criterion_main!(benches);
