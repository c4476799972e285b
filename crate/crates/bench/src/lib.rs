//! Deterministic inputs shared by the benchmarks.

use std::collections::BTreeMap;

use dkyp_core::linalg::Mat;
use dkyp_core::synthesis::{DkypParams, Interconnection};
use dkyp_core::CommGraph;

/// Ring of `nodes` stable `n`-state subsystems with weak couplings. The
/// identity certificate satisfies its distributed KYP conditions.
pub fn ring_interconnection(nodes: usize, n: usize) -> (Interconnection, CommGraph, DkypParams) {
    let graph = CommGraph::ring(nodes).expect("ring needs at least two nodes");
    let skew = Mat::from_fn(n, n, |i, j| match (i + 1 == j, j + 1 == i) {
        (true, _) => 1.0,
        (_, true) => -1.0,
        _ => 0.0,
    });
    let a = vec![skew - Mat::identity(n, n) * 2.0; nodes];
    let b = vec![Mat::from_fn(n, 1, |i, _| if i == 0 { 1.0 } else { 0.0 }); nodes];
    let e: Vec<Mat> = b.iter().map(|m| m.transpose()).collect();
    let mut a_off = BTreeMap::new();
    let mut e_off = BTreeMap::new();
    for (k, j) in graph.directed_edges() {
        a_off.insert((k, j), Mat::identity(n, n) * 0.05);
        e_off.insert((k, j), Mat::zeros(1, n));
    }
    let params = DkypParams {
        epsilon: 1e-2,
        pi: vec![0.1; nodes],
        w_bar: vec![Mat::zeros(n, n); nodes],
    };
    (Interconnection { a, a_off, b, e, e_off }, graph, params)
}
