use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use gpd::features::{grasp_image, hog, IndexedCloud};
use gpd::pipeline::{label, sample, PipelineConfig};
use gpd_bench::{clutter_scene, small_model};

fn bench_pipeline(c: &mut Criterion) {
    let cfg = PipelineConfig::default();
    let prep = clutter_scene(10, 7);
    let hands = sample(&prep, &cfg, 200, 1).expect("sample");
    let model = small_model(3);
    let cloud = IndexedCloud::new(&prep.merged);
    let rows: Vec<Vec<f32>> = hands
        .iter()
        .take(256)
        .map(|h| cloud.descriptor(h, &cfg.features).0.iter().map(|&x| x as f32).collect())
        .collect();

    let mut g = c.benchmark_group("pipeline");
    g.sample_size(10);
    g.bench_function("sample_100_points", |b| {
        b.iter(|| sample(&prep, &cfg, 100, black_box(2)).expect("sample"))
    });
    g.bench_function("label_hands", |b| b.iter(|| label(&prep, black_box(&hands), &cfg).expect("label")));
    g.bench_function("svm_predict_256", |b| b.iter(|| model.predict_batch(black_box(&rows)).expect("predict")));
    g.finish();

    let img = grasp_image(&prep.merged, &hands[0]);
    c.bench_function("grasp_image", |b| b.iter(|| grasp_image(&prep.merged, black_box(&hands[0]))));
    c.bench_function("hog", |b| {
        b.iter_batched(|| img.clone(), |i| hog(black_box(&i)).expect("hog"), BatchSize::SmallInput)
    });
}

criterion_group!(benches, bench_pipeline);
criterion_main!(benches);
