use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use dkyp_bench::ring_interconnection;
use dkyp_core::config::RunConfig;
use dkyp_core::linalg::Vector;
use dkyp_core::model::EstimatorGains;
use dkyp_core::sdp::{solve, SolverOptions};
use dkyp_core::sim::{run, Disturbance, SimScenario};
use dkyp_core::synthesis::{assemble_dkyp, assemble_theorem3, Theorem3Mode};

fn assembly(c: &mut Criterion) {
    let mut g = c.benchmark_group("assembly");
    for nodes in [3, 6, 12] {
        let (sys, graph, params) = ring_interconnection(nodes, 3);
        g.bench_with_input(BenchmarkId::new("dkyp ring", nodes), &nodes, |b, _| {
            b.iter(|| assemble_dkyp(black_box(&sys), &graph, &params).unwrap())
        });
    }
    let loaded = RunConfig::six_state_ring().load().unwrap();
    g.bench_function("linearized step, six-state ring", |b| {
        b.iter(|| assemble_theorem3(&loaded.model, &loaded.graph, &loaded.synthesis, Theorem3Mode::Step1).unwrap())
    });
    g.finish();
}

fn solver(c: &mut Criterion) {
    let mut g = c.benchmark_group("solver");
    g.sample_size(10);
    for nodes in [3, 6] {
        let (sys, graph, params) = ring_interconnection(nodes, 2);
        let prob = assemble_dkyp(&sys, &graph, &params).unwrap();
        g.bench_with_input(BenchmarkId::new("dkyp ring feasibility", nodes), &prob, |b, p| {
            b.iter(|| solve(black_box(p), &SolverOptions::default()).unwrap())
        });
    }
    g.finish();
}

fn simulation(c: &mut Criterion) {
    let loaded = RunConfig::six_state_ring().load().unwrap();
    let sc = SimScenario {
        gains: EstimatorGains::zeros(&loaded.model, &loaded.graph),
        model: loaded.model,
        graph: loaded.graph,
        x0: Vector::from_element(6, 1.0),
        xhat0: vec![Vector::zeros(6); 6],
        disturbance: Disturbance::SeededNoise { amp: 1.0, bandwidth: 5.0, seed: 1 },
        t_final: 1.0,
        dt: 1e-3,
        w: loaded.synthesis.w,
        gamma: 4.0,
        certificate: None,
    };
    let mut g = c.benchmark_group("simulation");
    g.sample_size(20);
    g.bench_function("rk4 six-state ring, 1000 steps", |b| b.iter(|| run(black_box(&sc)).unwrap()));
    g.finish();
}

criterion_group!(benches, assembly, solver, simulation);
criterion_main!(benches);
