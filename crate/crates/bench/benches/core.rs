use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use lama_bench::{binary_matrix, oof_candidates, scored_labels};
use lama_core::autotyping::norm_gini;
use lama_core::ensemble::blend_weights;
use lama_core::learners::gbm::boost;
use lama_core::learners::{GbmFlavor, GbmParams};
use lama_core::{Task, TimeBudget};

fn gini(c: &mut Criterion) {
    let (y, x) = scored_labels(100_000, 1);
    c.bench_function("norm_gini 100k", |b| b.iter(|| norm_gini(&y, &x).unwrap()));
}

fn gbm(c: &mut Criterion) {
    let (x, y) = binary_matrix(20_000, 20, 2);
    let mut group = c.benchmark_group("gbm 20k x 20, 100 trees");
    group.sample_size(10);
    for flavor in [GbmFlavor::LeafWise, GbmFlavor::SymmetricDepthWise] {
        let params = GbmParams {
            n_estimators_cap: 100,
            ..GbmParams::new(flavor)
        };
        group.bench_function(flavor.tag(), |b| {
            b.iter_batched(
                TimeBudget::unlimited,
                |budget| boost(&x, &y, None, &Task::binary(), &params, &budget).unwrap(),
                BatchSize::SmallInput,
            )
        });
    }
    group.finish();
}

fn blend(c: &mut Criterion) {
    let (y, _) = scored_labels(20_000, 3);
    let models = oof_candidates(&y, 5, 4);
    let refs: Vec<_> = models.iter().collect();
    let task = Task::binary();
    c.bench_function("blend 5 models 20k", |b| b.iter(|| blend_weights(&refs, &y, &task).unwrap()));
}

criterion_group!(benches, gini, gbm, blend);
criterion_main!(benches);
