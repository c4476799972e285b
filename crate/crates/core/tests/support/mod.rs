//! Fixtures shared by the integration suites: closed-form SDP oracle
//! families, planted feasible distributed KYP instances, decoupled
//! instances and random block certificates. Numeric checks here use
//! nalgebra directly rather than the crate's own assembly code.
#![allow(dead_code)]

use std::collections::BTreeMap;

use dkyp_core::linalg::{spectral_norm, Mat, Vector};
use dkyp_core::sdp::{solve, AffineExpr, Margin, SdpProblem, SdpSolution, SolveStatus, SolverOptions};
use dkyp_core::synthesis::{p_name, p_off_name, DkypParams, Interconnection, LyapunovCertificate};
use dkyp_core::CommGraph;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}

fn sym_eigs(m: &Mat) -> Vector {
    ((m + m.transpose()) * 0.5).symmetric_eigen().eigenvalues
}

pub fn eig_max(m: &Mat) -> f64 {
    sym_eigs(m).max()
}

pub fn eig_min(m: &Mat) -> f64 {
    sym_eigs(m).min()
}

pub fn eye(n: usize) -> Mat {
    Mat::identity(n, n)
}

pub fn random_mat(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> Mat {
    Mat::from_fn(r, c, |_, _| scale * rng.random_range(-1.0..1.0))
}

/// Symmetric matrix with eigenvalues drawn from `[lo, hi]`.
pub fn random_spd(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Mat {
    let q = random_mat(rng, n, n, 1.0).qr().q();
    let d = Mat::from_fn(n, n, |i, j| if i == j { rng.random_range(lo..=hi) } else { 0.0 });
    let p = &q * d * q.transpose();
    (&p + p.transpose()) * 0.5
}

/// Each of the `n(n-1)/2` edges present with probability `density`.
pub fn random_graph(rng: &mut ChaCha8Rng, nodes: usize, density: f64) -> CommGraph {
    let mut edges = Vec::new();
    for a in 1..=nodes {
        for b in a + 1..=nodes {
            if rng.random_bool(density) {
                edges.push((a, b));
            }
        }
    }
    CommGraph::new(nodes, edges).expect("valid random graph")
}

/// Solution `P` of `PA + AᵀP = −Q` via the Kronecker form.
pub fn lyapunov_solve(a: &Mat, q: &Mat) -> Mat {
    let n = a.nrows();
    let i = eye(n);
    let big = a.transpose().kronecker(&i) + i.kronecker(&a.transpose());
    let rhs = -Vector::from_column_slice(q.as_slice());
    let v = big.lu().solve(&rhs).expect("nonsingular Lyapunov operator");
    Mat::from_column_slice(n, n, v.as_slice())
}

/// Recomputes every constraint of `p` at `s.x` and checks it with a fresh
/// eigendecomposition.
pub fn reverify(p: &SdpProblem, s: &SdpSolution) -> Result<(), String> {
    for l in p.lmis() {
        let mut m = l.constant.clone();
        for (i, c) in &l.coeffs {
            m += c * s.x[*i];
        }
        let worst = eig_max(&m);
        if worst > 1e-7 {
            return Err(format!("LMI {} has eigenvalue {worst:e}", l.label));
        }
    }
    for e in p.equalities() {
        let mut m = e.constant.clone();
        for (i, c) in &e.coeffs {
            m += c * s.x[*i];
        }
        if m.amax() > 1e-9 {
            return Err(format!("equality {} residual {:e}", e.label, m.amax()));
        }
    }
    Ok(())
}

pub struct OracleCase {
    pub family: &'static str,
    pub problem: SdpProblem,
    pub expected: f64,
}

/// Minimize `t` with `‖M‖₂ ≤ t` for a random constant `M`.
pub fn random_epigraph(rng: &mut ChaCha8Rng) -> OracleCase {
    let (a, b) = (rng.random_range(1..=3), rng.random_range(1..=3));
    let m = random_mat(rng, a, b, 2.0);
    let mut p = SdpProblem::new();
    let t = p.add_scalar("t");
    p.spectral_norm_epigraph("epi", &AffineExpr::constant(m.clone()), t).unwrap();
    p.minimize_scalar(t, 1.0).unwrap();
    OracleCase {
        family: "spectral-norm epigraph",
        problem: p,
        expected: m.singular_values().max(),
    }
}

/// Minimize `p` with `p ≥ c_i` for scalars `c_i`.
pub fn random_scalar(rng: &mut ChaCha8Rng) -> OracleCase {
    let k = rng.random_range(1..=4);
    let cs: Vec<f64> = (0..k).map(|_| rng.random_range(-5.0..5.0)).collect();
    let mut p = SdpProblem::new();
    let x = p.add_scalar("p");
    for (i, c) in cs.iter().enumerate() {
        let mut e = p.scaled(x, &Mat::from_element(1, 1, -1.0));
        e.add_constant(&Mat::from_element(1, 1, *c));
        p.add_lmi(&format!("b{i}"), &e, Margin::NonStrict).unwrap();
    }
    p.minimize_scalar(x, 1.0).unwrap();
    OracleCase {
        family: "scalar bounds",
        problem: p,
        expected: cs.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    }
}

/// Minimize `tr(P)` with `PA + AᵀP ⪯ −I` for a Hurwitz 2x2 `A`. Every
/// feasible `P` dominates the Lyapunov solution, which is therefore optimal.
pub fn random_lyapunov(rng: &mut ChaCha8Rng) -> OracleCase {
    let n = 2;
    let a = loop {
        let a = random_mat(rng, n, n, 2.0);
        if a.complex_eigenvalues().iter().all(|z| z.re < -0.05) {
            break a;
        }
    };
    let i = eye(n);
    let pstar = lyapunov_solve(&a, &i);
    let mut p = SdpProblem::new();
    let pv = p.add_symmetric("P", n);
    let mut e = p.product(&i, pv, &a).he();
    e.add_constant(&i);
    p.add_lmi("lyap", &e, Margin::NonStrict).unwrap();
    p.add_objective(pv, &i).unwrap();
    OracleCase {
        family: "2x2 Lyapunov",
        problem: p,
        expected: pstar.trace(),
    }
}

/// `3 · rounds` problems cycling through the three families.
pub fn oracle_suite(seed: u64, rounds: usize) -> Vec<OracleCase> {
    let mut rng = rng(seed);
    let mut out = Vec::with_capacity(3 * rounds);
    for _ in 0..rounds {
        out.push(random_epigraph(&mut rng));
        out.push(random_scalar(&mut rng));
        out.push(random_lyapunov(&mut rng));
    }
    out
}

/// Solves one oracle case and returns the optimum on agreement.
pub fn run_oracle(case: &OracleCase) -> Result<f64, String> {
    let s = solve(&case.problem, &SolverOptions::default()).map_err(|e| e.to_string())?;
    if s.status != SolveStatus::Optimal {
        return Err(format!("{}: status {:?} ({})", case.family, s.status, s.message));
    }
    let got = s.objective_value.ok_or("no objective value")?;
    if !rel_close(got, case.expected, 1e-6) {
        return Err(format!("{}: got {got}, want {}", case.family, case.expected));
    }
    reverify(&case.problem, &s)?;
    Ok(got)
}

/// Centralized KYP problem `PA + AᵀP + εI + W̄ ⪯ 0`, `P ≻ 0`, `PB = Eᵀ`,
/// written out directly with the modelling API.
pub fn centralized_kyp(a: &Mat, b: &Mat, e: &Mat, eps: f64, w_bar: &Mat) -> SdpProblem {
    let n = a.nrows();
    let mut prob = SdpProblem::new();
    let p = prob.add_symmetric("P1", n);
    let mut lyap = prob.product(&eye(n), p, a).he();
    lyap.add_constant(&(eye(n) * eps + w_bar));
    prob.add_lmi("dkyp 1", &lyap, Margin::NonStrict).unwrap();
    prob.add_lmi("dominance 1", &(-prob.expr(p)), Margin::Strict).unwrap();
    let mut eq = prob.product(&eye(n), p, b);
    eq.add_constant(&(-e.transpose()));
    prob.add_equality("spr 1", &eq).unwrap();
    prob
}

fn block(cert: &LyapunovCertificate, k: usize, j: usize) -> Mat {
    let (nk, nj) = (cert.p[k - 1].nrows(), cert.p[j - 1].nrows());
    cert.block(k, j).unwrap_or_else(|| Mat::zeros(nk, nj))
}

/// Node `k` block of the distributed KYP inequality at a certificate.
pub fn dkyp_node_value(sys: &Interconnection, graph: &CommGraph, cert: &LyapunovCertificate, params: &DkypParams, k: usize) -> Mat {
    let nbrs = graph.neighbors(k).unwrap();
    let dims: Vec<usize> = cert.p.iter().map(|m| m.nrows()).collect();
    let mut sizes = vec![dims[k - 1]];
    sizes.extend(nbrs.iter().map(|&j| dims[j - 1]));
    let offs = offsets(&sizes);
    let total = sizes.iter().sum();
    let mut m = Mat::zeros(total, total);
    let (pk, ak) = (&cert.p[k - 1], &sys.a[k - 1]);
    let nk = dims[k - 1];
    let kk = pk * ak + ak.transpose() * pk + pk * (nbrs.len() as f64 * params.pi[k - 1]) + eye(nk) * params.epsilon
        + &params.w_bar[k - 1];
    m.view_mut((0, 0), (nk, nk)).copy_from(&kk);
    for (i1, &j1) in nbrs.iter().enumerate() {
        let pkj1 = block(cert, k, j1);
        let akj1 = &sys.a_off[&(k, j1)];
        let kj = pk * akj1 + ak.transpose() * &pkj1;
        m.view_mut((0, offs[i1 + 1]), kj.shape()).copy_from(&kj);
        m.view_mut((offs[i1 + 1], 0), (kj.ncols(), kj.nrows())).copy_from(&kj.transpose());
        for (i2, &j2) in nbrs.iter().enumerate() {
            let pkj2 = block(cert, k, j2);
            let akj2 = &sys.a_off[&(k, j2)];
            let mut jj = pkj1.transpose() * akj2 + akj1.transpose() * &pkj2;
            if i1 == i2 {
                jj -= &cert.p[j1 - 1] * params.pi[j1 - 1];
            }
            m.view_mut((offs[i1 + 1], offs[i2 + 1]), jj.shape()).copy_from(&jj);
        }
    }
    m
}

/// `[[P_k/(1+p_k), ½P_kj …], [·, diag(P_j/(1+p_j))]]`
pub fn dominance_value(cert: &LyapunovCertificate, graph: &CommGraph, k: usize) -> Mat {
    let nbrs = graph.neighbors(k).unwrap();
    let dims: Vec<usize> = cert.p.iter().map(|m| m.nrows()).collect();
    let total = dims[k - 1] + nbrs.iter().map(|&j| dims[j - 1]).sum::<usize>();
    let mut m = Mat::zeros(total, total);
    let nk = dims[k - 1];
    m.view_mut((0, 0), (nk, nk))
        .copy_from(&(&cert.p[k - 1] / (1.0 + nbrs.len() as f64)));
    let mut off = nk;
    for &j in nbrs {
        let nj = dims[j - 1];
        let h = block(cert, k, j) * 0.5;
        m.view_mut((0, off), (nk, nj)).copy_from(&h);
        m.view_mut((off, 0), (nj, nk)).copy_from(&h.transpose());
        let dj = graph.degree(j).unwrap() as f64;
        m.view_mut((off, off), (nj, nj)).copy_from(&(&cert.p[j - 1] / (1.0 + dj)));
        off += nj;
    }
    m
}

fn offsets(dims: &[usize]) -> Vec<usize> {
    dims.iter()
        .scan(0, |acc, d| {
            let o = *acc;
            *acc += d;
            Some(o)
        })
        .collect()
}

/// Global `P` built block by block.
pub fn global_p(cert: &LyapunovCertificate, graph: &CommGraph) -> Mat {
    let dims: Vec<usize> = cert.p.iter().map(|m| m.nrows()).collect();
    let off = offsets(&dims);
    let total = dims.iter().sum();
    let mut p = Mat::zeros(total, total);
    for a in 1..=dims.len() {
        for b in 1..=dims.len() {
            let m = if a == b {
                cert.p[a - 1].clone()
            } else if graph.has_edge(a, b) {
                block(cert, a, b)
            } else {
                continue;
            };
            p.view_mut((off[a - 1], off[b - 1]), m.shape()).copy_from(&m);
        }
    }
    p
}

/// Global `(Ã, B, E)` built block by block.
pub fn global_abe(sys: &Interconnection, graph: &CommGraph) -> (Mat, Mat, Mat) {
    let dims: Vec<usize> = sys.a.iter().map(|m| m.nrows()).collect();
    let ins: Vec<usize> = sys.b.iter().map(|m| m.ncols()).collect();
    let (off, ioff) = (offsets(&dims), offsets(&ins));
    let (n, m) = (dims.iter().sum(), ins.iter().sum());
    let mut a = Mat::zeros(n, n);
    let mut b = Mat::zeros(n, m);
    let mut e = Mat::zeros(m, n);
    for k in 1..=dims.len() {
        a.view_mut((off[k - 1], off[k - 1]), sys.a[k - 1].shape()).copy_from(&sys.a[k - 1]);
        b.view_mut((off[k - 1], ioff[k - 1]), sys.b[k - 1].shape()).copy_from(&sys.b[k - 1]);
        e.view_mut((ioff[k - 1], off[k - 1]), sys.e[k - 1].shape()).copy_from(&sys.e[k - 1]);
        for &j in graph.neighbors(k).unwrap() {
            let akj = &sys.a_off[&(k, j)];
            a.view_mut((off[k - 1], off[j - 1]), akj.shape()).copy_from(akj);
            let ekj = &sys.e_off[&(k, j)];
            e.view_mut((ioff[k - 1], off[j - 1]), ekj.shape()).copy_from(ekj);
        }
    }
    (a, b, e)
}

/// Certificate read back from a solved distributed KYP problem.
pub fn dkyp_certificate(graph: &CommGraph, params: &DkypParams, sol: &SdpSolution) -> LyapunovCertificate {
    LyapunovCertificate {
        p: graph.nodes().map(|k| sol.value(&p_name(k)).unwrap().clone()).collect(),
        p_off: graph
            .edges()
            .into_iter()
            .map(|(a, b)| ((a, b), sol.value(&p_off_name(a, b)).unwrap().clone()))
            .collect(),
        epsilon: params.epsilon,
        pi: params.pi.clone(),
    }
}

/// An interconnection built around a known certificate that satisfies the
/// distributed KYP conditions with margin.
pub struct PlantedDkyp {
    pub sys: Interconnection,
    pub graph: CommGraph,
    pub params: DkypParams,
    pub planted: LyapunovCertificate,
}

/// Fills `E_k = B_kᵀP_k`, `E_kj = B_kᵀP_kj` so the equalities hold at `cert`.
fn consistent_outputs(sys: &mut Interconnection, graph: &CommGraph, cert: &LyapunovCertificate) {
    sys.e = (1..=graph.node_count())
        .map(|k| sys.b[k - 1].transpose() * &cert.p[k - 1])
        .collect();
    sys.e_off = graph
        .directed_edges()
        .into_iter()
        .map(|(k, j)| ((k, j), sys.b[k - 1].transpose() * block(cert, k, j)))
        .collect();
}

/// Random graph on at most `max_nodes` nodes with subsystem orders up to
/// `max_dim`. Coupling blocks of `P` are shrunk and the local dynamics made
/// more stable until every node block is below `−0.05 I` and every
/// dominance block above `0.02 I`; `ε` is then half the node margin.
pub fn planted_dkyp(rng: &mut ChaCha8Rng, max_nodes: usize, max_dim: usize) -> PlantedDkyp {
    loop {
        let nodes = rng.random_range(1..=max_nodes);
        let graph = random_graph(rng, nodes, 0.5);
        let dims: Vec<usize> = (0..nodes).map(|_| rng.random_range(1..=max_dim)).collect();
        let pi = vec![0.5; nodes];
        let p: Vec<Mat> = dims.iter().map(|&n| random_spd(rng, n, 0.5, 2.0)).collect();
        let shapes: BTreeMap<(usize, usize), Mat> = graph
            .edges()
            .into_iter()
            .map(|(a, b)| ((a, b), random_mat(rng, dims[a - 1], dims[b - 1], 1.0)))
            .collect();
        let a_off: BTreeMap<(usize, usize), Mat> = graph
            .directed_edges()
            .into_iter()
            .map(|(k, j)| ((k, j), random_mat(rng, dims[k - 1], dims[j - 1], 0.5)))
            .collect();
        let r: Vec<Mat> = dims.iter().map(|&n| random_mat(rng, n, n, 1.0)).collect();
        let b: Vec<Mat> = dims
            .iter()
            .map(|&n| {
                let m = rng.random_range(1..=n.min(2));
                random_mat(rng, n, m, 1.0)
            })
            .collect();
        let (mut delta, mut shift) = (0.2, 1.0);
        for _ in 0..30 {
            let cert = LyapunovCertificate {
                p: p.clone(),
                p_off: shapes.iter().map(|(&e, m)| (e, m * delta)).collect(),
                epsilon: 0.0,
                pi: pi.clone(),
            };
            let a: Vec<Mat> = (1..=nodes)
                .map(|k| {
                    let c = spectral_norm(&r[k - 1]) + shift + graph.degree(k).unwrap() as f64 * pi[k - 1];
                    &r[k - 1] - eye(dims[k - 1]) * c
                })
                .collect();
            let mut sys = Interconnection {
                a,
                a_off: a_off.clone(),
                b: b.clone(),
                e: Vec::new(),
                e_off: BTreeMap::new(),
            };
            consistent_outputs(&mut sys, &graph, &cert);
            let mut params = DkypParams {
                epsilon: 0.0,
                pi: pi.clone(),
                w_bar: dims.iter().map(|&n| Mat::zeros(n, n)).collect(),
            };
            let margin = graph
                .nodes()
                .map(|k| -eig_max(&dkyp_node_value(&sys, &graph, &cert, &params, k)))
                .fold(f64::INFINITY, f64::min);
            let dom = graph
                .nodes()
                .map(|k| eig_min(&dominance_value(&cert, &graph, k)))
                .fold(f64::INFINITY, f64::min);
            if margin > 0.05 && dom > 0.02 {
                params.epsilon = margin / 2.0;
                let planted = LyapunovCertificate {
                    epsilon: params.epsilon,
                    ..cert
                };
                return PlantedDkyp {
                    sys,
                    graph,
                    params,
                    planted,
                };
            }
            delta *= 0.6;
            shift += 0.5;
        }
    }
}

/// Two nodes on one edge with `A_12 = A_21 = 0` and `E_12 = E_21 = 0`.
pub struct DecoupledCase {
    pub sys: Interconnection,
    pub graph: CommGraph,
    pub params: DkypParams,
}

impl DecoupledCase {
    /// Centralized problem of node `k`. With no coupling, node `k`'s block
    /// reduces to `P_kA_k + A_kᵀP_k + p_kπ_kP_k + εI ⪯ 0`, i.e. plain KYP
    /// for `A_k + ½p_kπ_k I`.
    pub fn node_problem(&self, k: usize) -> SdpProblem {
        let n = self.sys.a[k - 1].nrows();
        let shift = 0.5 * self.graph.degree(k).unwrap() as f64 * self.params.pi[k - 1];
        let a = &self.sys.a[k - 1] + eye(n) * shift;
        centralized_kyp(&a, &self.sys.b[k - 1], &self.sys.e[k - 1], self.params.epsilon, &self.params.w_bar[k - 1])
    }
}

/// Each node is, with probability 0.6, built around a KYP certificate with
/// margin; otherwise its `A_k` and `E_k` are random.
pub fn decoupled_case(rng: &mut ChaCha8Rng) -> DecoupledCase {
    let graph = CommGraph::new(2, [(1, 2)]).unwrap();
    let pi = 0.1;
    let eps = 1e-2;
    let mut a = Vec::new();
    let mut b = Vec::new();
    let mut e = Vec::new();
    let mut dims = Vec::new();
    for _ in 0..2 {
        let n = rng.random_range(1..=3);
        let bk = random_mat(rng, n, 1, 1.0);
        if rng.random_bool(0.6) {
            let p = random_spd(rng, n, 0.5, 2.0);
            let skew = random_mat(rng, n, n, 1.0);
            let skew = &skew - skew.transpose();
            let q = random_spd(rng, n, 0.5, 1.5);
            // P(Â) + ÂᵀP = −2Q for Â = P⁻¹(S − Q), then undo the π shift
            let ahat = p.clone().try_inverse().unwrap() * (skew - q);
            a.push(ahat - eye(n) * (0.5 * pi));
            e.push(bk.transpose() * &p);
        } else {
            a.push(random_mat(rng, n, n, 1.5));
            e.push(random_mat(rng, 1, n, 1.0));
        }
        b.push(bk);
        dims.push(n);
    }
    let sys = Interconnection {
        a,
        a_off: [((1, 2), Mat::zeros(dims[0], dims[1])), ((2, 1), Mat::zeros(dims[1], dims[0]))].into(),
        b,
        e,
        e_off: [((1, 2), Mat::zeros(1, dims[1])), ((2, 1), Mat::zeros(1, dims[0]))].into(),
    };
    DecoupledCase {
        sys,
        graph,
        params: DkypParams {
            epsilon: eps,
            pi: vec![pi; 2],
            w_bar: dims.iter().map(|&n| Mat::zeros(n, n)).collect(),
        },
    }
}

/// Random certificate on a random graph. Coupling blocks have spectral norm
/// `s · min(λ_min(P_a), λ_min(P_b)) / max(deg)` with `s` uniform in
/// `[0, 1.6]`, so roughly half of the draws pass the dominance test.
pub fn random_block_certificate(rng: &mut ChaCha8Rng) -> (LyapunovCertificate, CommGraph) {
    let nodes = rng.random_range(2..=6);
    let graph = random_graph(rng, nodes, 0.6);
    let dims: Vec<usize> = (0..nodes).map(|_| rng.random_range(1..=3)).collect();
    let p: Vec<Mat> = dims.iter().map(|&n| random_spd(rng, n, 0.1, 3.0)).collect();
    let max_deg = graph.nodes().map(|k| graph.degree(k).unwrap()).max().unwrap_or(0).max(1) as f64;
    let s = rng.random_range(0.0..1.6);
    let p_off = graph
        .edges()
        .into_iter()
        .map(|(a, b)| {
            let m = random_mat(rng, dims[a - 1], dims[b - 1], 1.0);
            let norm = spectral_norm(&m).max(1e-12);
            let lmin = eig_min(&p[a - 1]).min(eig_min(&p[b - 1]));
            ((a, b), m * (s * lmin / max_deg / norm))
        })
        .collect();
    (
        LyapunovCertificate {
            p,
            p_off,
            epsilon: 0.0,
            pi: vec![0.0; nodes],
        },
        graph,
    )
}

fn coeff_map(coeffs: &[(usize, Mat)]) -> BTreeMap<usize, &Mat> {
    coeffs.iter().map(|(i, c)| (*i, c)).collect()
}

/// Exact comparison of two lowered affine maps; a coefficient missing on
/// one side must be exactly zero on the other.
fn same_affine(label: &str, c1: &Mat, k1: &[(usize, Mat)], c2: &Mat, k2: &[(usize, Mat)]) -> Result<(), String> {
    if c1 != c2 {
        return Err(format!("{label}: constant terms differ"));
    }
    let (m1, m2) = (coeff_map(k1), coeff_map(k2));
    let zero = Mat::zeros(c1.nrows(), c1.ncols());
    for i in m1.keys().chain(m2.keys()) {
        let a = m1.get(i).copied().unwrap_or(&zero);
        let b = m2.get(i).copied().unwrap_or(&zero);
        if a != b {
            return Err(format!("{label}: coefficient of parameter {i} differs"));
        }
    }
    Ok(())
}

/// Variables, LMIs (data and margins) and equalities agree bit for bit.
pub fn identical(p: &SdpProblem, q: &SdpProblem) -> Result<(), String> {
    let vars = |s: &SdpProblem| -> Vec<_> { s.variables().iter().map(|v| (v.name.clone(), v.shape, v.offset)).collect() };
    if vars(p) != vars(q) {
        return Err(format!("variables differ: {:?} vs {:?}", vars(p), vars(q)));
    }
    if p.lmis().len() != q.lmis().len() || p.equalities().len() != q.equalities().len() {
        return Err("constraint counts differ".into());
    }
    for (a, b) in p.lmis().iter().zip(q.lmis()) {
        if a.label != b.label || a.dim != b.dim || a.margin != b.margin {
            return Err(format!("LMI `{}` vs `{}`: header differs", a.label, b.label));
        }
        same_affine(&a.label, &a.constant, &a.coeffs, &b.constant, &b.coeffs)?;
    }
    for (a, b) in p.equalities().iter().zip(q.equalities()) {
        if a.label != b.label || (a.nrows, a.ncols) != (b.nrows, b.ncols) {
            return Err(format!("equality `{}` vs `{}`: header differs", a.label, b.label));
        }
        same_affine(&a.label, &a.constant, &a.coeffs, &b.constant, &b.coeffs)?;
    }
    Ok(())
}

/// Random single-node KYP data `(A, B, E, ε, W̄)`.
pub fn random_kyp_data(rng: &mut ChaCha8Rng) -> (Mat, Mat, Mat, f64, Mat) {
    let n = rng.random_range(1..=4);
    let m = rng.random_range(1..=n);
    let a = random_mat(rng, n, n, 2.0);
    let b = random_mat(rng, n, m, 1.0);
    let e = random_mat(rng, m, n, 1.0);
    let eps = rng.random_range(1e-4..1.0);
    let w = random_mat(rng, n, n, 0.3);
    (a, b, e, eps, &w * w.transpose())
}

/// Solve status of a problem, reduced to feasible / infeasible / undecided.
pub fn decide(p: &SdpProblem) -> Result<bool, String> {
    let s = solve(p, &SolverOptions::default()).map_err(|e| e.to_string())?;
    match s.status {
        SolveStatus::Feasible | SolveStatus::Optimal => {
            reverify(p, &s)?;
            Ok(true)
        }
        SolveStatus::Infeasible => Ok(false),
        other => Err(format!("undecided: {other:?} ({})", s.message)),
    }
}
