//! Criterion benches: batch pipeline throughput sequential vs parallel,
//! plus the NMS hot loop.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use stonescan::backend::ReplayFixture;
use stonescan::dataprep::{Label, Manifest, ManifestRow, Split};
use stonescan::detector::nms;
use stonescan::imaging::{save_png, BoxXYXY, ImageBuffer};
use stonescan::pipeline::{run_pipeline, ClassifierSource, DetectorSource, PipelineConfig};

fn synthetic_batch(dir: &std::path::Path, n: usize) -> (Manifest, ReplayFixture) {
    let mut rows = Vec::new();
    let mut fixture = ReplayFixture::default();
    for i in 0..n {
        let stem = format!("bench{i:04}");
        let path = dir.join(format!("{stem}.png"));
        save_png(&ImageBuffer::filled(320, 240, [(i % 200) as u8, 90, 90]), &path).unwrap();
        fixture.insert(
            &stem,
            vec![
                BoxXYXY::new(60.0, 70.0, 130.0, 170.0, 0.91),
                BoxXYXY::new(190.0, 70.0, 260.0, 170.0, 0.88),
            ],
        );
        rows.push(ManifestRow {
            stem,
            path,
            label: Label::Stone,
            subject: None,
            split: Split::Test,
        });
    }
    (Manifest::from_rows(rows).unwrap(), fixture)
}

fn bench_batch(c: &mut Criterion) {
    let tmp = tempfile::tempdir().unwrap();
    let (manifest, fixture) = synthetic_batch(tmp.path(), 64);
    let mut group = c.benchmark_group("pipeline_batch_64");
    group.sample_size(10);
    for workers in [1usize, 4] {
        group.bench_with_input(
            BenchmarkId::new("workers", workers),
            &workers,
            |b, &workers| {
                let mut cfg = PipelineConfig::new(
                    DetectorSource::ReplayInline(fixture.clone()),
                    ClassifierSource::ConstLogit(1.0),
                );
                cfg.workers = workers;
                b.iter(|| black_box(run_pipeline(&manifest, &cfg).unwrap()));
            },
        );
    }
    group.finish();
}

fn bench_nms(c: &mut Criterion) {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    let boxes: Vec<BoxXYXY> = (0..500)
        .map(|_| {
            let x1: f32 = rng.random_range(0.0..600.0);
            let y1: f32 = rng.random_range(0.0..600.0);
            BoxXYXY::new(
                x1,
                y1,
                x1 + rng.random_range(1.0..120.0),
                y1 + rng.random_range(1.0..120.0),
                rng.random_range(0.0..1.0),
            )
        })
        .collect();
    c.bench_function("nms_500", |b| b.iter(|| black_box(nms(&boxes, 0.45))));
}

criterion_group!(benches, bench_batch, bench_nms);
criterion_main!(benches);
