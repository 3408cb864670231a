use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use fairaug_bench::{phantom_image, scored, spd};
use fairaug_core::fairmetrics::auroc;
use fairaug_core::frd::{frechet_distance, GaussianSummary};
use fairaug_core::linalg::sqrt_psd;
use fairaug_core::radiomics::{discretize, extract_features, ExtractionSettings, Glcm, GLCM_OFFSETS};
use fairaug_core::stratify::{weighted_sample, WeightMode, WeightTable};

fn bench_auroc(c: &mut Criterion) {
    let mut group = c.benchmark_group("auroc");
    for n in [1_000, 100_000] {
        let (scores, labels) = scored(n, 1);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| auroc(black_box(&scores), black_box(&labels)).unwrap())
        });
    }
    group.finish();
}

fn bench_linalg(c: &mut Criterion) {
    let s = spd(26, 2);
    c.bench_function("sqrt_psd_26", |b| b.iter(|| sqrt_psd(black_box(&s)).unwrap()));

    let a = GaussianSummary { mean: vec![0.0; 26], covariance: spd(26, 3), n: 200 };
    let g = GaussianSummary { mean: vec![0.5; 26], covariance: spd(26, 4), n: 200 };
    c.bench_function("frechet_26", |b| b.iter(|| frechet_distance(black_box(&a), black_box(&g)).unwrap()));
}

fn bench_radiomics(c: &mut Criterion) {
    let (img, mask) = phantom_image(128, 5);
    let region = mask.foreground();
    let (q, _) = discretize(&img.channels[0], &region, 32).unwrap();
    c.bench_function("glcm_128", |b| {
        b.iter(|| Glcm::compute(black_box(&q), &region, &GLCM_OFFSETS).unwrap().features())
    });
    let settings = ExtractionSettings::default();
    c.bench_function("extract_features_128", |b| {
        b.iter(|| extract_features(black_box(&img), &mask, &settings).unwrap())
    });
}

fn bench_sampler(c: &mut Criterion) {
    let table = WeightTable {
        mode: WeightMode::Ssw,
        weights: (0..10_000).map(|i| (format!("s{i}"), 1.0 / 10_000.0)).collect(),
    };
    c.bench_function("weighted_sample_1e5", |b| {
        b.iter(|| weighted_sample(black_box(&table), 100_000, 42, true).unwrap())
    });
}

criterion_group!(benches, bench_auroc, bench_linalg, bench_radiomics, bench_sampler);
criterion_main!(benches);
