use std::hint::black_box;

use avifind_core::descriptors::{describe_image, mean_pairwise_distance, shape_context_with_alpha, ShapeContextParams};
use avifind_core::index::{query, BowHistogram, BowIndex, IndexEntry};
use avifind_core::synth::{synthetic_corpus, SynthSpec};
use avifind_core::vocabulary::{train_kmeans, KMeansConfig, Vocabulary};
use avifind_core::{ContourSet, PipelineParams, Point};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..d).map(|_| rng.gen::<f64>()).collect()).collect()
}

fn bench_shape_context(c: &mut Criterion) {
    let mut group = c.benchmark_group("shape_context");
    let params = ShapeContextParams::default();
    for n in [50usize, 100, 200, 300] {
        let points: Vec<Point> = (0..n)
            .map(|i| {
                let t = i as f64 / n as f64 * std::f64::consts::TAU;
                Point::new(48.0 + 30.0 * t.cos(), 48.0 + 20.0 * (2.0 * t).sin())
            })
            .collect();
        let contour = ContourSet::new(points, "bench").unwrap();
        let alpha = mean_pairwise_distance(&contour).unwrap();
        group.bench_with_input(BenchmarkId::new("all_refs", n), &contour, |b, contour| {
            b.iter(|| {
                for &r in &contour.points {
                    black_box(shape_context_with_alpha(r, 0.0, &contour.points, alpha, &params).unwrap());
                }
            })
        });
        group.bench_with_input(BenchmarkId::new("alpha", n), &contour, |b, contour| {
            b.iter(|| black_box(mean_pairwise_distance(contour).unwrap()))
        });
    }
    group.finish();
}

fn bench_describe(c: &mut Criterion) {
    let spec = SynthSpec { shapes: 1, colors: 1, per_class: 1, ..Default::default() };
    let img = synthetic_corpus(&spec).remove(0).image;
    let params = PipelineParams::default();
    c.bench_function("describe_image_96px", |b| {
        b.iter(|| black_box(describe_image(&img, "bench", &params).unwrap()))
    });
}

fn bench_vocabulary(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let data = random_rows(&mut rng, 2000, 66);
    let mut group = c.benchmark_group("vocabulary");
    for k in [64usize, 256] {
        let vocab = Vocabulary::from_centroids(random_rows(&mut rng, k, 66), 0).unwrap();
        group.bench_with_input(BenchmarkId::new("assign_nearest_2000", k), &vocab, |b, v| {
            b.iter(|| {
                for x in &data {
                    black_box(v.assign_nearest(x).unwrap());
                }
            })
        });
    }
    group.sample_size(10);
    group.bench_function("train_kmeans_k64", |b| {
        b.iter(|| black_box(train_kmeans(&data, &KMeansConfig { k: 64, max_iter: 20, ..Default::default() }).unwrap()))
    });
    group.finish();
}

fn bench_query(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let k = 256;
    let hist = |rng: &mut ChaCha8Rng| {
        let raw: Vec<f64> = (0..k).map(|_| rng.gen::<f64>()).collect();
        let total: f64 = raw.iter().sum();
        BowHistogram { weights: raw.iter().map(|w| w / total).collect(), raw_count: 100 }
    };
    let mut group = c.benchmark_group("query");
    for n in [100usize, 1000, 5000] {
        let entries = (0..n)
            .map(|i| IndexEntry { image_id: format!("img{i:05}"), label: format!("c{}", i % 10), bow: hist(&mut rng) })
            .collect();
        let index = BowIndex::new(k, "bench", entries).unwrap();
        let q = hist(&mut rng);
        group.bench_with_input(BenchmarkId::new("top10", n), &index, |b, index| {
            b.iter(|| black_box(query(&q, index, 10).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, bench_shape_context, bench_describe, bench_vocabulary, bench_query);
criterion_main!(benches);
