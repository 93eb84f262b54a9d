use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use eprnet::closedloop::assemble;
use eprnet::lqgsynth::{build_cost, synthesize};
use eprnet::par::Execution;
use eprnet::quadnet::{build_measurement_map, build_plant, NetworkParams};
use eprnet::spectra::{closed_loop_spectra, FrequencyGrid};

fn grid_evaluation(c: &mut Criterion) {
    let ideal = NetworkParams::ideal();
    let ctrl = synthesize(
        &build_plant(&ideal, true).unwrap(),
        &build_measurement_map(&ideal).unwrap(),
        &build_cost(&ideal).unwrap(),
    )
    .unwrap();
    let p = ideal.with_delays(1e-6, 2e-6);
    let cl = assemble(
        &build_plant(&p, true).unwrap(),
        &build_measurement_map(&p).unwrap(),
        &ctrl,
        &p,
    )
    .unwrap();

    let mut group = c.benchmark_group("closed_loop_spectra");
    group.sample_size(20);
    for points in [500, 2000] {
        let grid = FrequencyGrid::log(1e3, 1e9, points).unwrap();
        for (name, exec) in [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)] {
            group.bench_with_input(BenchmarkId::new(name, points), &grid, |b, g| {
                b.iter(|| closed_loop_spectra(&cl, g, exec).unwrap())
            });
        }
    }
    group.finish();
}

criterion_group!(benches, grid_evaluation);
criterion_main!(benches);
