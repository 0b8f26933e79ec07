use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use gridstate::bench::scenario::{grid_search, BenchOptions, ScenarioData, SearchSpace};
use gridstate::bench::{GridData, ScenarioKind, TrainOptions};
use gridstate::exec::Execution;
use gridstate::grid_model::load_grid;
use gridstate::powerflow::{generate_time_series, LoadProfile};
use std::hint::black_box;

fn fixture() -> gridstate::grid_model::GridTopology {
    load_grid(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/fixtures/feeder30.json"
    ))
    .unwrap()
}

fn modes() -> [(&'static str, Execution); 2] {
    [
        ("sequential", Execution::Sequential),
        ("parallel", Execution::Parallel),
    ]
}

fn power_flow_series(c: &mut Criterion) {
    let topo = fixture();
    let profile = LoadProfile::default();
    let mut group = c.benchmark_group("power_flow_96_steps");
    for (name, mode) in modes() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                generate_time_series(black_box(&topo), "base", 96, &profile, 0, mode).unwrap()
            })
        });
    }
    group.finish();
}

fn small_sweep(c: &mut Criterion) {
    let pq = GridData::generate(
        &fixture(),
        16,
        &LoadProfile::default(),
        0,
        Execution::Sequential,
    )
    .unwrap();
    let data = ScenarioData { pq, mv: None };
    let space = SearchSpace {
        layers: vec![1, 2],
        ..SearchSpace::full()
    };
    let options = BenchOptions {
        train: TrainOptions {
            epochs: 20,
            ..TrainOptions::default()
        },
        ..BenchOptions::default()
    };
    let mut group = c.benchmark_group("grid_search_od_tc1");
    group.sample_size(10);
    for (name, mode) in modes() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                grid_search(
                    &[ScenarioKind::Od, ScenarioKind::Tc1],
                    &space,
                    &[0],
                    black_box(&data),
                    &options,
                    mode,
                )
                .unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, power_flow_series, small_sweep);
criterion_main!(benches);
