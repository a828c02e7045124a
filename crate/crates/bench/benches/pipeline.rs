use criterion::{criterion_group, criterion_main, Criterion};
use gridshed::classifier::{forward, Architecture, Params};
use gridshed::grid::{residuals, LoadDemand};
use gridshed::mpa::{analyze_window, PronyConfig};
use gridshed::sim::{simulate_from, ScenarioConfig, Simulator};
use gridshed_bench::{equilibrium, ringdown, sample_attack};
use std::hint::black_box;

fn bench_residual(c: &mut Criterion) {
    let eq = equilibrium();
    let loads = LoadDemand::from_model(&eq.model);
    let x = eq.state.values.clone();
    let mut out = vec![0.0; x.len()];
    c.bench_function("residual", |b| {
        b.iter(|| residuals(&eq.model, black_box(&x), &loads, &mut out).unwrap())
    });
}

fn bench_step(c: &mut Criterion) {
    let eq = equilibrium();
    let cfg = ScenarioConfig {
        attack: Some(sample_attack(-2.0)),
        ..Default::default()
    };
    c.bench_function("one second of simulation", |b| {
        b.iter_batched(
            || Simulator::new(&eq, &cfg).unwrap(),
            |mut s| {
                s.advance_to(1.0);
                s
            },
            criterion::BatchSize::LargeInput,
        )
    });
    let mut g = c.benchmark_group("scenario");
    g.sample_size(10);
    g.bench_function("210 s attack with shed", |b| {
        let cfg = ScenarioConfig::attack_then_shed(sample_attack(-2.0), 0);
        b.iter(|| simulate_from(&eq, black_box(&cfg)).unwrap())
    });
    g.finish();
}

fn bench_prony(c: &mut Criterion) {
    let cfg = PronyConfig::default();
    let w = ringdown(cfg.window_len);
    c.bench_function("prony window", |b| {
        b.iter(|| analyze_window(black_box(&w), &cfg).unwrap())
    });
}

fn bench_forward(c: &mut Criterion) {
    let arch = Architecture::reference(60, 200, 11);
    let p = Params::init(&arch, 0).unwrap();
    let x: Vec<f64> = (0..60 * 200)
        .map(|i| ((i % 97) as f64 / 48.0) - 1.0)
        .collect();
    c.bench_function("reference forward", |b| {
        b.iter(|| forward(&p, black_box(&x), 3).unwrap())
    });
}

criterion_group!(
    benches,
    bench_residual,
    bench_step,
    bench_prony,
    bench_forward
);
criterion_main!(benches);
