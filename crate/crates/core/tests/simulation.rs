//! Simulator behavior against closed-form references.

mod support;

use dkyp_core::analysis::global_system;
use dkyp_core::linalg::{Mat, Vector};
use dkyp_core::model::{EstimatorGains, PlantModel};
use dkyp_core::sim::{run, Disturbance, SimScenario};
use dkyp_core::synthesis::error_interconnection;
use dkyp_core::{CommGraph, Error};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use support::*;

fn scenario(model: PlantModel, graph: CommGraph, gains: EstimatorGains, x0: Vector, xhat0: Vec<Vector>) -> SimScenario {
    let n = model.n();
    let nodes = graph.node_count();
    SimScenario {
        model,
        graph,
        gains,
        x0,
        xhat0,
        disturbance: Disturbance::Zero,
        t_final: 5.0,
        dt: 1e-3,
        w: vec![eye(n); nodes],
        gamma: 1.0,
        certificate: None,
    }
}

fn small_gains(rng: &mut ChaCha8Rng, model: &PlantModel, graph: &CommGraph, scale: f64) -> EstimatorGains {
    let mut g = EstimatorGains::zeros(model, graph);
    for m in g.l.iter_mut().chain(g.l_tilde.iter_mut()) {
        *m = random_mat(rng, m.nrows(), m.ncols(), scale);
    }
    for m in g.k.values_mut().chain(g.k_tilde.values_mut()) {
        *m = random_mat(rng, m.nrows(), m.ncols(), scale);
    }
    g
}

#[test]
fn exact_initial_estimates_stay_exact() {
    let mut rng = rng(21);
    let model = PlantModel::six_state_oscillator();
    let graph = CommGraph::ring(6).unwrap();
    for case in 0..4 {
        let gains = if case == 0 {
            EstimatorGains::zeros(&model, &graph)
        } else {
            small_gains(&mut rng, &model, &graph, 0.3)
        };
        let x0 = Vector::from_fn(6, |_, _| rng.random_range(-2.0..2.0));
        let sc = scenario(model.clone(), graph.clone(), gains, x0.clone(), vec![x0; 6]);
        let r = run(&sc).unwrap();
        let worst = r.err.iter().flatten().fold(0.0f64, |a, &v| a.max(v));
        assert!(worst < 1e-9, "case {case}: {worst:e}");
        assert!(r.x.last().unwrap().norm() > 1e-3, "case {case}: trivial trajectory");
    }
}

/// For a linear plant the stacked error obeys `ė = Ãe`, so the simulated
/// errors match `exp(Ãt) e(0)`.
#[test]
fn linear_error_matches_the_matrix_exponential() {
    let mut rng = rng(22);
    for case in 0..5 {
        let n = rng.random_range(2..=3);
        let nodes = rng.random_range(2..=4);
        let graph = random_graph(&mut rng, nodes, 0.6);
        let model = PlantModel::linear(
            random_mat(&mut rng, n, n, 0.5),
            random_mat(&mut rng, n, 1, 1.0),
            (0..nodes).map(|_| random_mat(&mut rng, 1, n, 1.0)).collect(),
        );
        let gains = small_gains(&mut rng, &model, &graph, 0.4);
        let x0 = Vector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let xhat0: Vec<Vector> = (0..nodes).map(|_| Vector::from_fn(n, |_, _| rng.random_range(-1.0..1.0))).collect();
        let mut sc = scenario(model.clone(), graph.clone(), gains.clone(), x0.clone(), xhat0.clone());
        sc.t_final = 2.0;
        let r = run(&sc).unwrap();

        let (a, _, _) = global_system(&error_interconnection(&model, &graph, &gains).unwrap(), &graph).unwrap();
        let e0 = Vector::from_iterator(n * nodes, xhat0.iter().flat_map(|xh| (&x0 - xh).iter().copied().collect::<Vec<_>>()));
        for &i in &[500usize, 1000, 2000] {
            let e = (&a * r.t[i]).exp() * &e0;
            for k in 0..nodes {
                let want = e.rows(k * n, n).norm();
                assert!((r.err[k][i] - want).abs() <= 1e-8 * want.max(1.0), "case {case} node {} t {}", k + 1, r.t[i]);
            }
        }
    }
}

#[test]
fn disturbance_energy_matches_closed_forms() {
    let mut rng = rng(23);
    let model = PlantModel::linear(-eye(2), random_mat(&mut rng, 2, 2, 1.0), vec![random_mat(&mut rng, 1, 2, 1.0); 2]);
    let graph = CommGraph::ring(2).unwrap();
    let gains = EstimatorGains::zeros(&model, &graph);
    let l = 2.0;
    for (amp, freq, t_final) in [(1.0, 1.0, 10.0), (0.3, 7.5, 4.0), (2.0, 0.2, 13.0)] {
        let mut sc = scenario(model.clone(), graph.clone(), gains.clone(), Vector::zeros(2), vec![Vector::zeros(2); 2]);
        sc.disturbance = Disturbance::Sinusoid { amp, freq };
        sc.t_final = t_final;
        let r = run(&sc).unwrap();
        let want = l * amp * amp * (t_final / 2.0 - (2.0 * freq * t_final).sin() / (4.0 * freq));
        assert!(rel_close(r.metrics.disturbance_energy, want, 1e-3), "{} vs {want}", r.metrics.disturbance_energy);
    }
    let mut sc = scenario(model, graph, gains, Vector::zeros(2), vec![Vector::zeros(2); 2]);
    sc.disturbance = Disturbance::Pulse { amp: 1.5, t_on: 1.0, t_off: 3.0 };
    let r = run(&sc).unwrap();
    assert!(rel_close(r.metrics.disturbance_energy, l * 1.5 * 1.5 * 2.0, 1e-3));
}

/// `e_k` obeys `ė_k = −e_k` without gains, so the weighted cost integral is
/// `Σ_k ‖e_k(0)‖² (1 − e^{−2T}) / 2`.
#[test]
fn error_cost_matches_a_decoupled_closed_form() {
    let model = PlantModel::linear(-eye(3), Mat::zeros(3, 1), vec![Mat::zeros(1, 3); 3]);
    let graph = CommGraph::ring(3).unwrap();
    let gains = EstimatorGains::zeros(&model, &graph);
    let x0 = Vector::from_vec(vec![1.0, -2.0, 0.5]);
    let xhat0 = vec![Vector::zeros(3), Vector::from_element(3, 1.0), x0.clone()];
    let mut sc = scenario(model, graph, gains, x0.clone(), xhat0.clone());
    sc.t_final = 3.0;
    let r = run(&sc).unwrap();
    let want: f64 = xhat0.iter().map(|xh| (&x0 - xh).norm_squared()).sum::<f64>() * (1.0 - (-6.0f64).exp()) / 2.0;
    assert!(rel_close(r.metrics.error_cost, want, 1e-5), "{} vs {want}", r.metrics.error_cost);
    assert_eq!(r.metrics.disturbance_energy, 0.0);
    assert!(!r.metrics.certified);
}

#[test]
fn blow_up_is_reported_as_divergence() {
    let model = PlantModel::linear(eye(2) * 5.0, Mat::zeros(2, 1), vec![Mat::zeros(1, 2)]);
    let graph = CommGraph::empty(1).unwrap();
    let gains = EstimatorGains::zeros(&model, &graph);
    let mut sc = scenario(model, graph, gains, Vector::from_element(2, 1.0), vec![Vector::zeros(2)]);
    sc.t_final = 20.0;
    match run(&sc) {
        Err(Error::Divergence { time }) => assert!(time > 1.0 && time < 20.0, "{time}"),
        other => panic!("expected divergence, got {:?}", other.map(|r| r.metrics)),
    }
    // a step far beyond the RK4 stability region
    let model = PlantModel::linear(-eye(2) * 50.0, Mat::zeros(2, 1), vec![Mat::zeros(1, 2)]);
    let graph = CommGraph::empty(1).unwrap();
    let gains = EstimatorGains::zeros(&model, &graph);
    let mut sc = scenario(model, graph, gains, Vector::from_element(2, 1.0), vec![Vector::zeros(2)]);
    sc.dt = 1.0;
    sc.t_final = 100.0;
    assert!(matches!(run(&sc), Err(Error::Divergence { .. })));
}
