use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use fedlake_core::datanode::{CacheRequest, CacheSettings, RoundRequest};
use fedlake_core::federation::{fedavg, merge_count_trees, AggregationMode, ClientUpdate, CountPartial};
use fedlake_core::mlcore::{rng_from_seed, smote, TrainConfig};
use fedlake_core::synthcohort::{default_cohort_spec, generate};
use fedlake_core::Pattern;
use rand::Rng;

fn bench_fedavg(c: &mut Criterion) {
    let mut rng = rng_from_seed(1);
    let updates: Vec<ClientUpdate> = (0..16)
        .map(|i| ClientUpdate {
            node_id: format!("n{i:02}"),
            params: (0..2048).map(|_| rng.random_range(-1.0..1.0)).collect(),
            n_train: rng.random_range(100..5000),
        })
        .collect();
    c.bench_function("fedavg_16x2048_weighted", |b| {
        b.iter(|| fedavg(black_box(&updates), AggregationMode::SampleWeighted).unwrap())
    });
}

fn bench_smote(c: &mut Criterion) {
    let mut rng = rng_from_seed(2);
    let minority: Vec<Vec<f64>> = (0..500).map(|_| (0..30).map(|_| rng.random::<f64>()).collect()).collect();
    c.bench_function("smote_500x30_k5_n1000", |b| {
        b.iter_batched(
            || rng_from_seed(3),
            |mut r| smote(black_box(&minority), 5, 1000, &mut r).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

fn bench_count_merge(c: &mut Criterion) {
    let mut rng = rng_from_seed(4);
    let partials: Vec<CountPartial> = (0..3)
        .map(|_| CountPartial {
            group_by: vec!["cancer_type".into(), "tnm_stage".into()],
            target: "treatment".into(),
            counts: (0..4)
                .flat_map(|c| (0..6).flat_map(move |s| (0..5).map(move |t| (c, s, t))))
                .map(|(c, s, t)| (vec![format!("c{c}"), format!("s{s}"), format!("t{t}")], rng.random_range(0..100)))
                .collect(),
        })
        .collect();
    c.bench_function("merge_count_trees_3x120", |b| b.iter(|| merge_count_trees(black_box(&partials)).unwrap()));
}

fn bench_training_round(c: &mut Criterion) {
    let mut spec = default_cohort_spec();
    spec.nodes.truncate(1);
    let cohort = generate(&spec).unwrap();
    let node = cohort.data_nodes().unwrap().remove(0);
    let summary = node
        .build_cache(&CacheRequest {
            pattern: Pattern::AeRisk,
            schema: cohort.schema.clone(),
            settings: CacheSettings::default(),
        })
        .unwrap();
    let width = (summary.feature_width + 1) * summary.num_classes;
    let mut round = 0;
    c.bench_function("train_round_ae_risk_2000_rows", |b| {
        b.iter(|| {
            round += 1;
            node.train_round(&RoundRequest {
                pattern: Pattern::AeRisk,
                round,
                params: vec![0.0; width],
                config: TrainConfig::default(),
            })
            .unwrap()
        })
    });
}

criterion_group!(benches, bench_fedavg, bench_smote, bench_count_merge, bench_training_round);
criterion_main!(benches);
