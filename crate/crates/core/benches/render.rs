use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use ringflow::exec;
use ringflow::renderer::{render, LightMode, SoftRasterConfig};
use ringflow::scene::{generate_synthetic, ShapePreset, SynthSpec};
use ringflow::training::{RunConfig, Trainer};

fn soft_render(c: &mut Criterion) {
    let mut spec = SynthSpec::new(ShapePreset::Bumpy, 1, 64, LightMode::Collocated, 1);
    spec.level = 3;
    let scene = generate_synthetic(&spec).unwrap();
    let mesh = &scene.ground_truth.mesh;
    let theta = &scene.ground_truth.theta;
    let view = &scene.views[0];
    let cfg = SoftRasterConfig::default();
    let mut group = c.benchmark_group("soft_render_64px_level3");
    for parallel in [false, true] {
        let id = BenchmarkId::from_parameter(if parallel { "parallel" } else { "sequential" });
        group.bench_function(id, |b| {
            exec::set_parallel(parallel);
            b.iter(|| black_box(render(mesh, theta, &view.camera, &view.light, &cfg).unwrap()))
        });
    }
    group.finish();
    exec::set_parallel(true);
}

fn training_epoch(c: &mut Criterion) {
    let mut spec = SynthSpec::new(ShapePreset::Ellipsoid, 4, 32, LightMode::Collocated, 1);
    spec.level = 3;
    let views = generate_synthetic(&spec).unwrap().views;
    let mut group = c.benchmark_group("epoch_4x32px_level2");
    group.sample_size(10);
    for parallel in [false, true] {
        let id = BenchmarkId::from_parameter(if parallel { "parallel" } else { "sequential" });
        group.bench_function(id, |b| {
            exec::set_parallel(parallel);
            let mut trainer = Trainer::new(
                RunConfig {
                    epochs: usize::MAX,
                    level: 2,
                    ..RunConfig::default()
                },
                views.len(),
            )
            .unwrap();
            b.iter(|| black_box(trainer.run_epoch(&views).unwrap()))
        });
    }
    group.finish();
    exec::set_parallel(true);
}

criterion_group!(benches, soft_render, training_epoch);
criterion_main!(benches);
