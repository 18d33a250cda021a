use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use tagm::data::generator::generate_with;
use tagm::data::{generate, GenConfig, Split};
use tagm::exec::Execution;
use tagm::model::{Model, ModelKind};
use tagm::training::{batch_gradient, evaluate, ModelSpec};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn dataset() -> tagm::data::Dataset {
    generate(&GenConfig {
        n_train: 256,
        n_val: 64,
        n_test: 128,
        seed: 1,
        ..GenConfig::default()
    })
    .unwrap()
}

fn batch_gradients(c: &mut Criterion) {
    let ds = dataset();
    let batch: Vec<usize> = ds.indices(Split::Train).into_iter().take(64).collect();
    let mut group = c.benchmark_group("batch_gradient_64");
    for kind in ModelKind::ALL {
        let spec = ModelSpec {
            kind,
            attn_hidden: 16,
            cell_hidden: 16,
        };
        let model = Model::init(kind, spec.dims(&ds), ds.mode, 0).unwrap();
        for (name, exec) in MODES {
            group.bench_with_input(BenchmarkId::new(kind.to_string(), name), &exec, |b, &exec| {
                b.iter(|| black_box(batch_gradient(&model, &ds, &batch, exec).unwrap()))
            });
        }
    }
    group.finish();
}

fn evaluation(c: &mut Criterion) {
    let ds = dataset();
    let spec = ModelSpec {
        kind: ModelKind::Tagm,
        attn_hidden: 16,
        cell_hidden: 16,
    };
    let model = Model::init(spec.kind, spec.dims(&ds), ds.mode, 0).unwrap();
    let mut group = c.benchmark_group("evaluate_test_128");
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| black_box(evaluate(&model, &ds, Split::Test, exec).unwrap()))
        });
    }
    group.finish();
}

fn generation(c: &mut Criterion) {
    let cfg = GenConfig {
        n_train: 400,
        n_val: 50,
        n_test: 50,
        ..GenConfig::default()
    };
    let mut group = c.benchmark_group("generate_500");
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| black_box(generate_with(&cfg, exec).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, batch_gradients, evaluation, generation);
criterion_main!(benches);
