use criterion::{black_box, criterion_group, criterion_main, Criterion};
use swlab_core::diagnostics::{Recorder, RecorderPlan};
use swlab_core::evolve::{evolve, step_diamond, CellGeometry, EvolutionConfig, Pulse, StoreOptions};
use swlab_core::geometry::SchwarzschildChart;

fn diamond(c: &mut Criterion) {
    let cell = CellGeometry { h: 0.2, potential: 0.01, nl: 0.05 };
    c.bench_function("step_diamond_p3", |b| {
        b.iter(|| step_diamond(black_box(0.3), black_box(0.31), black_box(0.29), &cell, 3.0, 1e-12))
    });
    c.bench_function("step_diamond_p2_6", |b| {
        b.iter(|| step_diamond(black_box(0.3), black_box(0.31), black_box(0.29), &cell, 2.6, 1e-12))
    });
}

fn short_run(c: &mut Criterion) {
    let chart = SchwarzschildChart::with_params(1.0, 2.0 * (1.0 + 1e-6), 30.0, Default::default()).unwrap();
    let pulse = Pulse { amplitude: 1.0, center: 20.0, width: 5.0 };
    let cfg = EvolutionConfig::new(3.0, pulse, 0.2, 50.0, 100.0);
    let mut g = c.benchmark_group("evolve_50x100_h0.2");
    g.sample_size(20);
    g.bench_function("bare", |b| b.iter(|| evolve(&chart, &cfg, &StoreOptions::default(), &mut ()).unwrap()));
    let plan = RecorderPlan {
        slices_vt: (1..10).map(|k| 10.0 * k as f64).collect(),
        radii: vec![3.0, 10.0],
        gammas: vec![0.5, 1.5],
        bulk_bin: 10.0,
        ..Default::default()
    };
    g.bench_function("recorded", |b| {
        b.iter(|| {
            let mut rec = Recorder::new(&chart, &cfg, &plan).unwrap();
            evolve(&chart, &cfg, &StoreOptions::default(), &mut rec).unwrap();
            rec.finish()
        })
    });
    g.finish();
}

criterion_group!(benches, diamond, short_run);
criterion_main!(benches);
