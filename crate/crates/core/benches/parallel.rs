use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use rfalign::aligner::{search_blocks_with, RfTargets};
use rfalign::archspec::{LayerSpec, NetworkSpec};
use rfalign::detmetrics::{evaluate_with, BBox, DetectionRecord, EvalConfig, GroundTruthRecord};
use rfalign::gridscope::utilization_map_with;
use rfalign::Exec;

const STRATEGIES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn bench_search(c: &mut Criterion) {
    let targets = RfTargets([27.0, 47.0, 87.0, 167.0, 327.0]);
    let mut group = c.benchmark_group("search_blocks");
    group.sample_size(10);
    for (name, exec) in STRATEGIES {
        group.bench_with_input(BenchmarkId::new(name, "n_max=8"), &exec, |b, &exec| {
            b.iter(|| search_blocks_with(black_box(&targets), 640, 8, exec).unwrap())
        });
    }
    group.finish();
}

fn bench_map(c: &mut Criterion) {
    // rf = 1 + 2·(1+1+1+1+1+60+120+200) = 771
    let layers = [1, 1, 1, 1, 1, 60, 120, 200]
        .into_iter()
        .map(|d| LayerSpec::conv(3, 1, d).unwrap())
        .collect();
    let spec = NetworkSpec::sequential(640, layers).unwrap();
    let mut group = c.benchmark_group("utilization_map");
    group.sample_size(10);
    for (name, exec) in STRATEGIES {
        group.bench_with_input(BenchmarkId::new(name, "rf=771"), &exec, |b, &exec| {
            b.iter(|| utilization_map_with(black_box(&spec), exec).unwrap())
        });
    }
    group.finish();
}

fn synthetic_eval_set(images: usize, per_image: usize) -> (Vec<GroundTruthRecord>, Vec<DetectionRecord>) {
    let mut gts = Vec::new();
    let mut dets = Vec::new();
    for i in 0..images {
        for j in 0..per_image {
            let x = (j * 37 % 500) as f64;
            let class = format!("c{}", j % 20);
            let b = BBox::new(x, x, x + 20.0, x + 24.0).unwrap();
            gts.push(GroundTruthRecord {
                image_id: format!("img{i}"),
                class_label: class.clone(),
                bbox: b,
            });
            let shift = (j % 7) as f64 * 3.0;
            let d = BBox::new(x + shift, x, x + 20.0 + shift, x + 24.0).unwrap();
            let score = ((i * 131 + j * 17) % 1000) as f64 / 1000.0;
            dets.push(DetectionRecord::new(&format!("img{i}"), &class, score, d).unwrap());
        }
    }
    (gts, dets)
}

fn bench_eval(c: &mut Criterion) {
    let (gts, dets) = synthetic_eval_set(500, 40);
    let cfg = EvalConfig::default();
    let mut group = c.benchmark_group("evaluate");
    group.sample_size(10);
    for (name, exec) in STRATEGIES {
        group.bench_with_input(BenchmarkId::new(name, "20k boxes"), &exec, |b, &exec| {
            b.iter(|| evaluate_with(black_box(&gts), black_box(&dets), &cfg, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench_search, bench_map, bench_eval);
criterion_main!(benches);
