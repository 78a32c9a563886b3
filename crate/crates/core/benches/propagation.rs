//! Loss and gradient of a two-system objective with a 3×3 B1/B0 ensemble
//! (18 independent forward/backward chains), evaluated on one worker and on
//! the whole pool. Built without the `parallel` feature both variants take
//! the sequential path.

use std::collections::BTreeMap;
use std::hint::black_box;
use std::path::Path;

use criterion::{criterion_group, criterion_main, Criterion};

use spinforge::grad::ChainWorkspace;
use spinforge::objective::{Objective, ObjectiveSpec, RobustnessSpec, Task, TaskKind};
use spinforge::par::{par_map, with_threads};
use spinforge::prop::random_program;
use spinforge::spinsys::{equilibrium_state, SpinSystem};

fn load(name: &str) -> SpinSystem {
    SpinSystem::load(Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join(format!("{name}.spin"))).unwrap()
}

fn task(system: &str, kind: TaskKind, weight: f64) -> Task {
    Task {
        system: system.into(),
        kind,
        region_ppm: Some([3.6, 3.9]),
        target: None,
        reference: None,
        weight,
    }
}

fn objective() -> Objective {
    let systems: BTreeMap<String, SpinSystem> =
        ["glutamine", "glutamate"].into_iter().map(|n| (n.to_string(), load(n))).collect();
    let mut spec = ObjectiveSpec::new(vec![
        task("glutamine", TaskKind::EnhancePeak, 1.0),
        task("glutamate", TaskKind::SuppressRegion, 0.1),
    ]);
    spec.ensemble = RobustnessSpec { b1_scales: vec![0.9, 1.0, 1.1], b0_offsets_hz: vec![-5.0, 0.0, 5.0] };
    Objective::new(spec, &systems).unwrap()
}

fn bench(c: &mut Criterion) {
    let obj = objective();
    let prog = random_program(100, 2e-4, 300.0, 7).unwrap();
    let mut g = c.benchmark_group("objective_gradient");
    g.sample_size(10);
    g.bench_function("sequential", |b| {
        b.iter(|| with_threads(1, || obj.evaluate_with_gradient(black_box(&prog)).unwrap()))
    });
    g.bench_function("parallel", |b| {
        b.iter(|| with_threads(0, || obj.evaluate_with_gradient(black_box(&prog)).unwrap()))
    });
    g.finish();

    // Forward chains alone, plain iterator against the data-parallel map.
    let sys = load("glutamine");
    let rho0 = equilibrium_state(sys.n_spins());
    let scales: Vec<f64> = (0..8).map(|k| 0.9 + 0.025 * k as f64).collect();
    let mut g = c.benchmark_group("forward_chains");
    g.sample_size(10);
    g.bench_function("sequential", |b| {
        b.iter(|| {
            scales
                .iter()
                .map(|&s| ChainWorkspace::forward(&sys, &prog, &rho0, s).unwrap())
                .count()
        })
    });
    g.bench_function("parallel", |b| {
        b.iter(|| par_map(&scales, |&s| ChainWorkspace::forward(&sys, &prog, &rho0, s).unwrap()).len())
    });
    g.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
