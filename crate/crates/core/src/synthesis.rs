//! Assembly of the coupled per-node LMI systems and gain recovery.
//!
//! Variable names inside the assembled problems: `P{k}`, `P{a}_{b}` (one per
//! undirected edge, `a < b`, with `P_ba = P_abᵀ`), `G{k}`, `F{k}` (single
//! coupling gain), `F{k}_{j}`, `Lt{k}`, `L{k}`, `K{k}_{j}`, `Kt{k}_{j}`,
//! `t{a}_{b}` and `gamma2`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, SynthesisStage};
use crate::graph::CommGraph;
use crate::linalg::{lambda_max, lambda_min, pinv, Mat};
use crate::model::{EstimatorGains, PlantModel, SynthesisConfig};
use crate::sdp::{
    solve, verify_witness, AffineExpr, Margin, SdpProblem, SdpSolution, SolveStatus, VarId,
};

/// Diagonal blocks `P_k` and coupling blocks `P_ab` (`a < b`) of a
/// structured Lyapunov matrix. Missing edge blocks are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovCertificate {
    pub p: Vec<Mat>,
    pub p_off: BTreeMap<(usize, usize), Mat>,
    pub epsilon: f64,
    pub pi: Vec<f64>,
}

impl LyapunovCertificate {
    /// `P_kj`, transposing the stored block when `k > j`.
    pub fn block(&self, k: usize, j: usize) -> Option<Mat> {
        if k < j {
            self.p_off.get(&(k, j)).cloned()
        } else {
            self.p_off.get(&(j, k)).map(|m| m.transpose())
        }
    }

    pub fn node_count(&self) -> usize {
        self.p.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.p.iter().map(|m| m.nrows()).collect()
    }

    pub fn validate(&self, graph: &CommGraph) -> Result<()> {
        if self.p.len() != graph.node_count() {
            return Err(Error::Argument(format!(
                "certificate has {} diagonal blocks for {} nodes",
                self.p.len(),
                graph.node_count()
            )));
        }
        for &(a, b) in self.p_off.keys() {
            if a >= b || !graph.has_edge(a, b) {
                return Err(Error::Argument(format!("coupling block P_{a}{b} is not a graph edge")));
            }
            let m = &self.p_off[&(a, b)];
            if m.shape() != (self.p[a - 1].nrows(), self.p[b - 1].nrows()) {
                return Err(Error::Dimension(format!("P_{a}{b} has the wrong shape")));
            }
        }
        Ok(())
    }
}

/// Interconnected linear subsystems
/// `ẋ_k = A_k x_k + Σ A_kj x_j + B_k u_k`, `y_k = E_k x_k + Σ E_kj x_j`.
#[derive(Debug, Clone)]
pub struct Interconnection {
    pub a: Vec<Mat>,
    pub a_off: BTreeMap<(usize, usize), Mat>,
    pub b: Vec<Mat>,
    pub e: Vec<Mat>,
    pub e_off: BTreeMap<(usize, usize), Mat>,
}

impl Interconnection {
    fn dims(&self) -> Vec<usize> {
        self.a.iter().map(|m| m.nrows()).collect()
    }

    fn validate(&self, graph: &CommGraph) -> Result<()> {
        let nodes = graph.node_count();
        if self.a.len() != nodes || self.b.len() != nodes || self.e.len() != nodes {
            return Err(Error::Dimension(format!("interconnection must have {nodes} subsystems")));
        }
        let dims = self.dims();
        for k in 1..=nodes {
            let n = dims[k - 1];
            let (a, b, e) = (&self.a[k - 1], &self.b[k - 1], &self.e[k - 1]);
            if a.ncols() != n || b.nrows() != n || e.ncols() != n || e.nrows() != b.ncols() {
                return Err(Error::Dimension(format!("subsystem {k} blocks are inconsistent")));
            }
            for &j in graph.neighbors(k)? {
                let akj = self.a_off.get(&(k, j));
                let ekj = self.e_off.get(&(k, j));
                match (akj, ekj) {
                    (Some(akj), Some(ekj)) => {
                        if akj.shape() != (n, dims[j - 1]) || ekj.shape() != (b.ncols(), dims[j - 1]) {
                            return Err(Error::Dimension(format!("coupling blocks ({k},{j}) have wrong shape")));
                        }
                    }
                    _ => return Err(Error::Dimension(format!("missing coupling blocks for ({k},{j})"))),
                }
            }
        }
        Ok(())
    }
}

/// Scalars shared by the distributed KYP conditions.
#[derive(Debug, Clone)]
pub struct DkypParams {
    pub epsilon: f64,
    pub pi: Vec<f64>,
    /// `W̄_k`, zero matrices for plain SPR analysis.
    pub w_bar: Vec<Mat>,
}

pub fn p_name(k: usize) -> String {
    format!("P{k}")
}

pub fn p_off_name(a: usize, b: usize) -> String {
    format!("P{a}_{b}")
}

struct LyapVars {
    p: Vec<VarId>,
    off: BTreeMap<(usize, usize), VarId>,
}

impl LyapVars {
    fn declare(prob: &mut SdpProblem, graph: &CommGraph, dims: &[usize]) -> Self {
        let p = (1..=graph.node_count())
            .map(|k| prob.add_symmetric(&p_name(k), dims[k - 1]))
            .collect();
        let off = graph
            .edges()
            .into_iter()
            .map(|(a, b)| ((a, b), prob.add_matrix(&p_off_name(a, b), dims[a - 1], dims[b - 1])))
            .collect();
        LyapVars { p, off }
    }

    /// `left · P_k · right`
    fn pk(&self, prob: &SdpProblem, k: usize, left: &Mat, right: &Mat) -> AffineExpr {
        prob.product(left, self.p[k - 1], right)
    }

    /// `left · P_kj · right`
    fn pkj(&self, prob: &SdpProblem, k: usize, j: usize, left: &Mat, right: &Mat) -> AffineExpr {
        if k < j {
            prob.product(left, self.off[&(k, j)], right)
        } else {
            prob.product_t(left, self.off[&(j, k)], right)
        }
    }

    /// `left · P_kjᵀ · right`
    fn pkj_t(&self, prob: &SdpProblem, k: usize, j: usize, left: &Mat, right: &Mat) -> AffineExpr {
        self.pkj(prob, j, k, left, right)
    }
}

/// Symmetric block-matrix expression assembled from its upper triangle.
struct BlockLmi {
    offs: Vec<usize>,
    sizes: Vec<usize>,
    total: usize,
    expr: AffineExpr,
}

impl BlockLmi {
    fn new(sizes: &[usize]) -> Self {
        let mut offs = Vec::with_capacity(sizes.len());
        let mut total = 0;
        for s in sizes {
            offs.push(total);
            total += s;
        }
        BlockLmi {
            offs,
            sizes: sizes.to_vec(),
            total,
            expr: AffineExpr::zeros(total, total),
        }
    }

    /// Adds `e` at block `(i, j)`, `i ≤ j`, and its transpose at `(j, i)`.
    fn add(&mut self, i: usize, j: usize, e: AffineExpr) {
        debug_assert!(i <= j);
        if self.sizes[i] == 0 || self.sizes[j] == 0 {
            return;
        }
        let t = self.total;
        if i == j {
            self.expr += e.embed(t, t, self.offs[i], self.offs[i]);
        } else {
            self.expr += e.transpose().embed(t, t, self.offs[j], self.offs[i]);
            self.expr += e.embed(t, t, self.offs[i], self.offs[j]);
        }
    }

    fn add_const(&mut self, i: usize, j: usize, m: Mat) {
        self.add(i, j, AffineExpr::constant(m));
    }
}

fn eye(n: usize) -> Mat {
    Mat::identity(n, n)
}

/// `−[[P_k/(1+p_k), ½P_kj …], [·, diag(P_j/(1+p_j))]] ⪯ −μI` (strict).
fn add_dominance(prob: &mut SdpProblem, vars: &LyapVars, graph: &CommGraph, dims: &[usize], k: usize) -> Result<()> {
    let nbrs = graph.neighbors(k)?;
    let mut sizes = vec![dims[k - 1]];
    sizes.extend(nbrs.iter().map(|&j| dims[j - 1]));
    let mut b = BlockLmi::new(&sizes);
    let pk = graph.degree(k)? as f64;
    let nk = dims[k - 1];
    b.add(0, 0, vars.pk(prob, k, &eye(nk), &eye(nk)).scale(-1.0 / (1.0 + pk)));
    for (i, &j) in nbrs.iter().enumerate() {
        let nj = dims[j - 1];
        b.add(0, i + 1, vars.pkj(prob, k, j, &eye(nk), &eye(nj)).scale(-0.5));
        let pj = graph.degree(j)? as f64;
        b.add(i + 1, i + 1, vars.pk(prob, j, &eye(nj), &eye(nj)).scale(-1.0 / (1.0 + pj)));
    }
    prob.add_lmi(&format!("dominance {k}"), &b.expr, Margin::Strict)?;
    Ok(())
}

/// Numeric dominance matrix of node `k` for a given certificate.
pub fn dominance_matrix(cert: &LyapunovCertificate, graph: &CommGraph, k: usize) -> Result<Mat> {
    let nbrs = graph.neighbors(k)?;
    let dims = cert.dims();
    let mut sizes = vec![dims[k - 1]];
    sizes.extend(nbrs.iter().map(|&j| dims[j - 1]));
    let total: usize = sizes.iter().sum();
    let mut m = Mat::zeros(total, total);
    let pk = graph.degree(k)? as f64;
    m.view_mut((0, 0), (dims[k - 1], dims[k - 1]))
        .copy_from(&(&cert.p[k - 1] / (1.0 + pk)));
    let mut off = dims[k - 1];
    for &j in nbrs {
        let nj = dims[j - 1];
        let pkj = cert.block(k, j).unwrap_or_else(|| Mat::zeros(dims[k - 1], nj)) * 0.5;
        m.view_mut((0, off), pkj.shape()).copy_from(&pkj);
        m.view_mut((off, 0), (nj, dims[k - 1])).copy_from(&pkj.transpose());
        let pj = graph.degree(j)? as f64;
        m.view_mut((off, off), (nj, nj)).copy_from(&(&cert.p[j - 1] / (1.0 + pj)));
        off += nj;
    }
    Ok(m)
}

fn check_inputs(model: &PlantModel, graph: &CommGraph, cfg: &SynthesisConfig) -> Result<()> {
    model.validate()?;
    cfg.validate(model)?;
    if graph.node_count() != model.node_count() {
        return Err(Error::Dimension(format!(
            "graph has {} nodes but the model has {} measurement matrices",
            graph.node_count(),
            model.node_count()
        )));
    }
    Ok(())
}

/// Single-stage design with block-diagonal Lyapunov matrix and one coupling
/// gain `F_k` per node.
pub fn assemble_intuitive(model: &PlantModel, graph: &CommGraph, cfg: &SynthesisConfig) -> Result<SdpProblem> {
    check_inputs(model, graph, cfg)?;
    let n = model.n();
    let (r, rt, l) = (model.r(), model.r_tilde(), model.l());
    let nodes = graph.node_count();
    let mut prob = SdpProblem::new();
    let p: Vec<VarId> = (1..=nodes).map(|k| prob.add_symmetric(&p_name(k), n)).collect();
    let g: Vec<VarId> = (1..=nodes)
        .map(|k| prob.add_matrix(&format!("G{k}"), n, model.q(k)))
        .collect();
    let f: Vec<VarId> = (1..=nodes).map(|k| prob.add_matrix(&format!("F{k}"), n, n)).collect();
    let lt: Vec<VarId> = (1..=nodes)
        .map(|k| prob.add_matrix(&format!("Lt{k}"), r, model.q(k)))
        .collect();
    let i_n = eye(n);
    for k in 1..=nodes {
        let nbrs = graph.neighbors(k)?;
        let pk = nbrs.len();
        let ck = &model.c[k - 1];
        let mut sizes = vec![n, rt, l];
        sizes.extend(std::iter::repeat_n(n, pk));
        let mut b = BlockLmi::new(&sizes);
        let mut q = prob.product(&i_n, p[k - 1], &model.a)
            - prob.product(&i_n, g[k - 1], ck)
            - prob.product(&i_n, f[k - 1], &i_n).scale(pk as f64);
        q = q.he();
        q += prob
            .product(&i_n, p[k - 1], &i_n)
            .scale(cfg.alpha + pk as f64 * cfg.pi[k - 1]);
        q.add_constant(&cfg.w_bar(model, k));
        b.add(0, 0, q);
        b.add(0, 1, prob.product(&i_n, p[k - 1], &model.b_theta));
        b.add(0, 2, prob.product(&i_n, p[k - 1], &model.b_w));
        b.add_const(1, 1, -eye(rt) * (model.tau * model.tau));
        b.add_const(2, 2, -eye(l) * (cfg.gamma * cfg.gamma));
        for (i, &j) in nbrs.iter().enumerate() {
            b.add(0, 3 + i, prob.expr(f[k - 1]));
            b.add(3 + i, 3 + i, prob.product(&i_n, p[j - 1], &i_n).scale(-cfg.pi[j - 1]));
        }
        prob.add_lmi(&format!("node {k}"), &b.expr, Margin::Strict)?;
        let neg_p = prob.expr(p[k - 1]).scale(-1.0);
        prob.add_lmi(&format!("P{k} > 0"), &neg_p, Margin::Strict)?;
        if r > 0 {
            // −P_k B_φ − Hᵀ + C_kᵀ L̃_kᵀ = 0
            let mut e = prob.product(&i_n, p[k - 1], &model.b_phi).scale(-1.0)
                + prob.product_t(&ck.transpose(), lt[k - 1], &eye(r));
            e.add_constant(&(-model.h.transpose()));
            prob.add_equality(&format!("spr {k}"), &e)?;
        }
    }
    Ok(prob)
}

fn invert_spd(p: &Mat, what: &str) -> Result<Mat> {
    let lmin = lambda_min(p);
    let lmax = lambda_max(p);
    if !(lmin > 1e-10 * lmax.abs()) || !(lmax > 0.0) {
        return Err(Error::Conditioning(format!(
            "{what} is numerically singular (eigenvalues in [{lmin:e}, {lmax:e}])"
        )));
    }
    p.clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| Error::Conditioning(format!("{what} is not positive definite")))
}

fn value<'a>(sol: &'a SdpSolution, name: &str) -> Result<&'a Mat> {
    sol.value(name)
        .ok_or_else(|| Error::Argument(format!("solution has no variable `{name}`")))
}

/// `L_k = P_k⁻¹G_k`, `K_kj = P_k⁻¹F_k`, `K̃_kj = 0`, `L̃_k` from the equality.
pub fn recover_intuitive_gains(
    model: &PlantModel,
    graph: &CommGraph,
    sol: &SdpSolution,
) -> Result<EstimatorGains> {
    let mut gains = EstimatorGains::zeros(model, graph);
    for k in 1..=graph.node_count() {
        let pinv_k = invert_spd(value(sol, &p_name(k))?, &p_name(k))?;
        gains.l[k - 1] = &pinv_k * value(sol, &format!("G{k}"))?;
        gains.l_tilde[k - 1] = value(sol, &format!("Lt{k}"))?.clone();
        let kk = &pinv_k * value(sol, &format!("F{k}"))?;
        for &j in graph.neighbors(k)? {
            gains.k.insert((k, j), kk.clone());
        }
    }
    Ok(gains)
}

/// Certificate of a block-diagonal design: `ε = α · min_k λ_min(P_k)`.
pub fn intuitive_certificate(cfg: &SynthesisConfig, graph: &CommGraph, sol: &SdpSolution) -> Result<LyapunovCertificate> {
    let p: Vec<Mat> = (1..=graph.node_count())
        .map(|k| value(sol, &p_name(k)).cloned())
        .collect::<Result<_>>()?;
    let lmin = p.iter().map(lambda_min).fold(f64::INFINITY, f64::min);
    Ok(LyapunovCertificate {
        p,
        p_off: BTreeMap::new(),
        epsilon: cfg.alpha * lmin,
        pi: cfg.pi.clone(),
    })
}

/// Distributed KYP conditions for given interconnection blocks.
pub fn assemble_dkyp(sys: &Interconnection, graph: &CommGraph, params: &DkypParams) -> Result<SdpProblem> {
    sys.validate(graph)?;
    let nodes = graph.node_count();
    if params.pi.len() != nodes || params.w_bar.len() != nodes {
        return Err(Error::Dimension(format!("DKYP parameters must have {nodes} entries")));
    }
    let dims = sys.dims();
    let mut prob = SdpProblem::new();
    let vars = LyapVars::declare(&mut prob, graph, &dims);
    for k in 1..=nodes {
        let nbrs = graph.neighbors(k)?;
        let nk = dims[k - 1];
        let ak = &sys.a[k - 1];
        let mut sizes = vec![nk];
        sizes.extend(nbrs.iter().map(|&j| dims[j - 1]));
        let mut b = BlockLmi::new(&sizes);
        let mut kk = vars.pk(&prob, k, &eye(nk), ak).he();
        kk += vars
            .pk(&prob, k, &eye(nk), &eye(nk))
            .scale(nbrs.len() as f64 * params.pi[k - 1]);
        kk.add_constant(&(eye(nk) * params.epsilon + &params.w_bar[k - 1]));
        b.add(0, 0, kk);
        for (i1, &j1) in nbrs.iter().enumerate() {
            let nj1 = dims[j1 - 1];
            let akj1 = &sys.a_off[&(k, j1)];
            // P_k A_kj + A_kᵀ P_kj
            let e = vars.pk(&prob, k, &eye(nk), akj1) + vars.pkj(&prob, k, j1, &ak.transpose(), &eye(nj1));
            b.add(0, 1 + i1, e);
            for (i2, &j2) in nbrs.iter().enumerate().skip(i1) {
                let nj2 = dims[j2 - 1];
                let akj2 = &sys.a_off[&(k, j2)];
                // P_kj1ᵀ A_kj2 + A_kj1ᵀ P_kj2
                let mut e = vars.pkj_t(&prob, k, j1, &eye(nj1), akj2)
                    + vars.pkj(&prob, k, j2, &akj1.transpose(), &eye(nj2));
                if i1 == i2 {
                    e += vars.pk(&prob, j1, &eye(nj1), &eye(nj1)).scale(-params.pi[j1 - 1]);
                }
                b.add(1 + i1, 1 + i2, e);
            }
        }
        prob.add_lmi(&format!("dkyp {k}"), &b.expr, Margin::NonStrict)?;
        add_dominance(&mut prob, &vars, graph, &dims, k)?;
        let bk = &sys.b[k - 1];
        let m = bk.ncols();
        let mut e = vars.pk(&prob, k, &eye(nk), bk);
        e.add_constant(&(-sys.e[k - 1].transpose()));
        prob.add_equality(&format!("spr {k}"), &e)?;
        for &j in nbrs {
            let mut e = vars.pkj_t(&prob, k, j, &eye(dims[j - 1]), bk);
            e.add_constant(&(-sys.e_off[&(k, j)].transpose()));
            debug_assert_eq!(e.shape(), (dims[j - 1], m));
            prob.add_equality(&format!("spr {k},{j}"), &e)?;
        }
    }
    Ok(prob)
}

/// Centralized KYP conditions `PÃ + ÃᵀP + εI + W̄ ⪯ 0`, `P ≻ 0`, `PB = Eᵀ`,
/// laid out exactly as the single-node distributed assembly.
pub fn assemble_kyp(a: &Mat, b: &Mat, e: &Mat, epsilon: f64, w_bar: &Mat) -> Result<SdpProblem> {
    let n = a.nrows();
    if a.shape() != (n, n) || b.nrows() != n || e.shape() != (b.ncols(), n) || w_bar.shape() != (n, n) {
        return Err(Error::Dimension("KYP data are inconsistent".into()));
    }
    let mut prob = SdpProblem::new();
    let p = prob.add_symmetric(&p_name(1), n);
    let mut lyap = prob.product(&eye(n), p, a).he();
    lyap.add_constant(&(eye(n) * epsilon + w_bar));
    let mut b1 = BlockLmi::new(&[n]);
    b1.add(0, 0, lyap);
    prob.add_lmi("dkyp 1", &b1.expr, Margin::NonStrict)?;
    let mut b2 = BlockLmi::new(&[n]);
    b2.add(0, 0, prob.product(&eye(n), p, &eye(n)).scale(-1.0));
    prob.add_lmi("dominance 1", &b2.expr, Margin::Strict)?;
    let mut eq = prob.product(&eye(n), p, b);
    eq.add_constant(&(-e.transpose()));
    prob.add_equality("spr 1", &eq)?;
    Ok(prob)
}

#[derive(Debug, Clone)]
pub enum Theorem3Mode<'a> {
    /// Linearized coupled problem over `P_k`, `P_kj`, `G_k`, `F_kj`.
    Step1,
    /// Gains as variables with the Lyapunov blocks frozen.
    Step2 { fixed: &'a LyapunovCertificate },
}

/// Performance-bordered distributed KYP conditions for the estimator error.
pub fn assemble_theorem3(
    model: &PlantModel,
    graph: &CommGraph,
    cfg: &SynthesisConfig,
    mode: Theorem3Mode<'_>,
) -> Result<SdpProblem> {
    check_inputs(model, graph, cfg)?;
    match mode {
        Theorem3Mode::Step1 => assemble_step1(model, graph, cfg),
        Theorem3Mode::Step2 { fixed } => assemble_step2(model, graph, cfg, fixed),
    }
}

fn assemble_step1(model: &PlantModel, graph: &CommGraph, cfg: &SynthesisConfig) -> Result<SdpProblem> {
    let n = model.n();
    let (r, rt, l) = (model.r(), model.r_tilde(), model.l());
    let nodes = graph.node_count();
    let dims = vec![n; nodes];
    let mut prob = SdpProblem::new();
    let vars = LyapVars::declare(&mut prob, graph, &dims);
    let g: Vec<VarId> = (1..=nodes)
        .map(|k| prob.add_matrix(&format!("G{k}"), n, model.q(k)))
        .collect();
    let f: BTreeMap<(usize, usize), VarId> = graph
        .directed_edges()
        .into_iter()
        .map(|(k, j)| ((k, j), prob.add_matrix(&format!("F{k}_{j}"), n, n)))
        .collect();
    let t: BTreeMap<(usize, usize), VarId> = graph
        .edges()
        .into_iter()
        .map(|(a, b)| ((a, b), prob.add_scalar(&format!("t{a}_{b}"))))
        .collect();
    if let Some(bound) = cfg.linearization_bound {
        // keep G_k ≈ λ_k P_k C_kᵀ and F_kj ≈ λ_k P_k, the gains the
        // linearized coupling blocks assume
        for (k, gk) in g.iter().enumerate() {
            let lam = cfg.lambda[k];
            let dev = prob.expr(*gk) - vars.pk(&prob, k + 1, &eye(n), &model.c[k].transpose()).scale(lam);
            prob.add_norm_bound(&format!("bound G{}", k + 1), &dev, bound)?;
        }
        for ((k, j), fkj) in &f {
            let lam = cfg.lambda[k - 1];
            let dev = prob.expr(*fkj) - vars.pk(&prob, *k, &eye(n), &eye(n)).scale(lam);
            prob.add_norm_bound(&format!("bound F{k}_{j}"), &dev, bound)?;
        }
    }
    let i_n = eye(n);
    for k in 1..=nodes {
        let nbrs = graph.neighbors(k)?;
        let pk = nbrs.len();
        let lam = cfg.lambda[k - 1];
        let ck = &model.c[k - 1];
        let mut sizes = vec![n];
        sizes.extend(std::iter::repeat_n(n, pk));
        sizes.extend([rt, l]);
        let (th, wi) = (1 + pk, 2 + pk);
        let mut b = BlockLmi::new(&sizes);

        let mut kk = vars.pk(&prob, k, &i_n, &model.a) - prob.product(&i_n, g[k - 1], ck);
        for &j in nbrs {
            kk = kk - prob.expr(f[&(k, j)]);
        }
        let mut kk = kk.he();
        kk += vars.pk(&prob, k, &i_n, &i_n).scale(pk as f64 * cfg.pi[k - 1]);
        kk.add_constant(&(&i_n * cfg.epsilon + cfg.w_bar(model, k)));
        b.add(0, 0, kk);
        b.add(0, th, vars.pk(&prob, k, &i_n, &model.b_theta));
        b.add(0, wi, vars.pk(&prob, k, &i_n, &model.b_w));

        // Aᵀ − λ C_kᵀC_k − λ p_k I, applied from the left to P_kj
        let left = model.a.transpose() - (ck.transpose() * ck) * lam - &i_n * (lam * pk as f64);
        for (i1, &j1) in nbrs.iter().enumerate() {
            let e = prob.expr(f[&(k, j1)]) + vars.pkj(&prob, k, j1, &left, &i_n);
            b.add(0, 1 + i1, e);
            for (i2, &j2) in nbrs.iter().enumerate().skip(i1) {
                let mut e = vars.pkj_t(&prob, k, j1, &i_n, &i_n).scale(lam)
                    + vars.pkj(&prob, k, j2, &i_n, &i_n).scale(lam);
                if i1 == i2 {
                    e += vars.pk(&prob, j1, &i_n, &i_n).scale(-cfg.pi[j1 - 1]);
                }
                b.add(1 + i1, 1 + i2, e);
            }
            b.add(1 + i1, th, vars.pkj_t(&prob, k, j1, &i_n, &model.b_theta));
            b.add(1 + i1, wi, vars.pkj_t(&prob, k, j1, &i_n, &model.b_w));
        }
        b.add_const(th, th, -eye(rt) * (model.tau * model.tau));
        b.add_const(wi, wi, -eye(l) * (cfg.gamma * cfg.gamma));
        prob.add_lmi(&format!("node {k}"), &b.expr, Margin::Strict)?;
        add_dominance(&mut prob, &vars, graph, &dims, k)?;

        if r > 0 {
            // (H + B_φᵀ(P_k + Σ_j P_kj)) (I − C_k⁺C_k) = 0
            let proj = &i_n - pinv(ck) * ck;
            if proj.amax() > 1e-12 {
                let bt = model.b_phi.transpose();
                let mut e = vars.pk(&prob, k, &bt, &proj);
                for &j in nbrs {
                    e += vars.pkj(&prob, k, j, &bt, &proj);
                }
                e.add_constant(&(&model.h * &proj));
                prob.add_equality(&format!("spr {k}"), &e)?;
            }
        }
    }
    for ((a, bnode), tv) in &t {
        let m = vars.pkj(&prob, *a, *bnode, &i_n, &i_n);
        prob.spectral_norm_epigraph(&format!("norm {a},{bnode}"), &m, *tv)?;
        // Σ_k Σ_{j∈N_k} ‖P_kj‖ counts every undirected edge twice
        prob.minimize_scalar(*tv, 2.0)?;
    }
    Ok(prob)
}

/// `K̃_kj = −B_φᵀP_kj` and `L̃_k = (H + B_φᵀ(P_k + Σ_j P_kj)) C_k⁺`.
type OutputGains = (Vec<Mat>, BTreeMap<(usize, usize), Mat>);

fn output_gains_from_p(model: &PlantModel, graph: &CommGraph, cert: &LyapunovCertificate) -> Result<OutputGains> {
    let n = model.n();
    let bt = model.b_phi.transpose();
    let mut lt = Vec::new();
    let mut kt = BTreeMap::new();
    for k in 1..=graph.node_count() {
        let mut s = &model.h + &bt * &cert.p[k - 1];
        for &j in graph.neighbors(k)? {
            let pkj = cert.block(k, j).unwrap_or_else(|| Mat::zeros(n, n));
            s += &bt * &pkj;
            kt.insert((k, j), -(&bt * &pkj));
        }
        lt.push(s * pinv(&model.c[k - 1]));
    }
    Ok((lt, kt))
}

fn assemble_step2(
    model: &PlantModel,
    graph: &CommGraph,
    cfg: &SynthesisConfig,
    cert: &LyapunovCertificate,
) -> Result<SdpProblem> {
    let n = model.n();
    let (r, rt, l) = (model.r(), model.r_tilde(), model.l());
    let nodes = graph.node_count();
    cert.validate(graph)?;
    if cert.dims().iter().any(|&d| d != n) {
        return Err(Error::Dimension(format!("certificate blocks must be {n}x{n}")));
    }
    for k in 1..=nodes {
        let d = dominance_matrix(cert, graph, k)?;
        let lmin = lambda_min(&d);
        if !(lmin > 0.0) {
            return Err(Error::Precondition(format!(
                "frozen Lyapunov blocks violate the dominance condition at node {k} (λ_min = {lmin:e})"
            )));
        }
    }
    let mut prob = SdpProblem::new();
    let lv: Vec<VarId> = (1..=nodes)
        .map(|k| prob.add_matrix(&format!("L{k}"), n, model.q(k)))
        .collect();
    let lt: Vec<VarId> = (1..=nodes)
        .map(|k| prob.add_matrix(&format!("Lt{k}"), r, model.q(k)))
        .collect();
    let kv: BTreeMap<(usize, usize), VarId> = graph
        .directed_edges()
        .into_iter()
        .map(|(k, j)| ((k, j), prob.add_matrix(&format!("K{k}_{j}"), n, n)))
        .collect();
    let ktv: BTreeMap<(usize, usize), VarId> = graph
        .directed_edges()
        .into_iter()
        .map(|(k, j)| ((k, j), prob.add_matrix(&format!("Kt{k}_{j}"), r, n)))
        .collect();
    let g2 = cfg.minimize_gamma.then(|| prob.add_scalar("gamma2"));
    if let Some(bound) = cfg.gain_bound {
        for (k, lk) in lv.iter().enumerate() {
            prob.add_norm_bound(&format!("bound L{}", k + 1), &prob.expr(*lk), bound)?;
        }
        for ((k, j), kkj) in &kv {
            prob.add_norm_bound(&format!("bound K{k}_{j}"), &prob.expr(*kkj), bound)?;
        }
    }
    let i_n = eye(n);
    let zero = Mat::zeros(n, n);
    for k in 1..=nodes {
        let nbrs = graph.neighbors(k)?;
        let pk_count = nbrs.len();
        let ck = &model.c[k - 1];
        let pk = &cert.p[k - 1];
        let pkj = |j: usize| cert.block(k, j).unwrap_or_else(|| zero.clone());
        let mut sizes = vec![n];
        sizes.extend(std::iter::repeat_n(n, pk_count));
        sizes.extend([rt, l]);
        let (th, wi) = (1 + pk_count, 2 + pk_count);
        let mut b = BlockLmi::new(&sizes);

        // P_k A_k = P_k A − P_k L_k C_k − Σ P_k K_kl
        let mut pa = AffineExpr::constant(pk * &model.a) - prob.product(pk, lv[k - 1], ck);
        for &j in nbrs {
            pa = pa - prob.product(pk, kv[&(k, j)], &i_n);
        }
        let mut kk = pa.he();
        kk.add_constant(&(pk * (pk_count as f64 * cfg.pi[k - 1]) + &i_n * cfg.epsilon + cfg.w_bar(model, k)));
        b.add(0, 0, kk);
        b.add_const(0, th, pk * &model.b_theta);
        b.add_const(0, wi, pk * &model.b_w);

        for (i1, &j1) in nbrs.iter().enumerate() {
            let p1 = pkj(j1);
            // P_k K_kj + A_kᵀ P_kj with A_kᵀ = Aᵀ − C_kᵀL_kᵀ − Σ K_klᵀ
            let mut e = prob.product(pk, kv[&(k, j1)], &i_n) + AffineExpr::constant(model.a.transpose() * &p1)
                - prob.product_t(&ck.transpose(), lv[k - 1], &p1);
            for &jl in nbrs {
                e = e - prob.product_t(&i_n, kv[&(k, jl)], &p1);
            }
            b.add(0, 1 + i1, e);
            for (i2, &j2) in nbrs.iter().enumerate().skip(i1) {
                let p2 = pkj(j2);
                // P_kj1ᵀ K_kj2 + K_kj1ᵀ P_kj2
                let mut e = prob.product(&p1.transpose(), kv[&(k, j2)], &i_n)
                    + prob.product_t(&i_n, kv[&(k, j1)], &p2);
                if i1 == i2 {
                    e.add_constant(&(-&cert.p[j1 - 1] * cfg.pi[j1 - 1]));
                }
                b.add(1 + i1, 1 + i2, e);
            }
            b.add_const(1 + i1, th, p1.transpose() * &model.b_theta);
            b.add_const(1 + i1, wi, p1.transpose() * &model.b_w);
        }
        b.add_const(th, th, -eye(rt) * (model.tau * model.tau));
        match g2 {
            Some(g2) => b.add(wi, wi, prob.scaled(g2, &(-eye(l)))),
            None => b.add_const(wi, wi, -eye(l) * (cfg.gamma * cfg.gamma)),
        }
        prob.add_lmi(&format!("node {k}"), &b.expr, Margin::Strict)?;

        if r > 0 {
            // L̃_k C_kC_kᵀ = (H + B_φᵀ(P_k + Σ P_kj)) C_kᵀ
            let bt = model.b_phi.transpose();
            let mut s = &model.h + &bt * pk;
            for &j in nbrs {
                s += &bt * pkj(j);
            }
            let mut e = prob.product(&eye(r), lt[k - 1], &(ck * ck.transpose()));
            e.add_constant(&(-(s * ck.transpose())));
            prob.add_equality(&format!("output gain {k}"), &e)?;
            for &j in nbrs {
                // K̃_kj = −B_φᵀ P_kj
                let mut e = prob.expr(ktv[&(k, j)]);
                e.add_constant(&(&bt * pkj(j)));
                prob.add_equality(&format!("coupling output gain {k},{j}"), &e)?;
            }
        }
    }
    if let Some(g2) = g2 {
        prob.minimize_scalar(g2, 1.0)?;
    }
    Ok(prob)
}

/// Summary of one solver run for reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveSummary {
    pub status: SolveStatus,
    pub message: String,
    pub phase1_iterations: usize,
    pub phase2_iterations: usize,
    pub phase1_slack: f64,
    pub objective: Option<f64>,
    pub max_lmi_eigenvalue: f64,
    pub max_eq_residual: f64,
    pub witness_bound: Option<f64>,
    pub witness_verified: Option<bool>,
}

impl SolveSummary {
    pub fn new(problem: &SdpProblem, sol: &SdpSolution, threshold: f64) -> Self {
        let check = sol.witness.as_ref().map(|w| verify_witness(problem, w, threshold));
        SolveSummary {
            status: sol.status,
            message: sol.message.clone(),
            phase1_iterations: sol.stats.phase1_iterations,
            phase2_iterations: sol.stats.phase2_iterations,
            phase1_slack: sol.stats.phase1_slack,
            objective: sol.objective_value,
            max_lmi_eigenvalue: sol.max_lmi_residual(),
            max_eq_residual: sol.max_eq_residual(),
            witness_bound: check.as_ref().map(|c| c.bound),
            witness_verified: check.map(|c| c.certifies),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Design {
    pub gains: EstimatorGains,
    pub cert: LyapunovCertificate,
    pub gamma_achieved: f64,
    pub runs: Vec<(String, SolveSummary)>,
}

fn synthesis_error(stage: SynthesisStage, runs: Vec<(String, SolveSummary)>) -> Error {
    let last = &runs[runs.len() - 1].1;
    let mut message = last.message.clone();
    if let Some(b) = last.witness_bound {
        message = format!("{message}; witness bound {b:e}");
    }
    Error::Synthesis {
        stage,
        status: last.status,
        message,
        runs,
    }
}

/// Block-diagonal design: solve, recover gains and certificate.
pub fn intuitive_design(model: &PlantModel, graph: &CommGraph, cfg: &SynthesisConfig) -> Result<Design> {
    let prob = assemble_intuitive(model, graph, cfg)?;
    let sol = solve(&prob, &cfg.solver)?;
    let summary = SolveSummary::new(&prob, &sol, cfg.solver.infeasibility_threshold);
    if !sol.status.is_success() {
        return Err(synthesis_error(SynthesisStage::Intuitive, vec![("intuitive".into(), summary)]));
    }
    Ok(Design {
        gains: recover_intuitive_gains(model, graph, &sol)?,
        cert: intuitive_certificate(cfg, graph, &sol)?,
        gamma_achieved: cfg.gamma,
        runs: vec![("intuitive".into(), summary)],
    })
}

/// Extracts `P_k`, `P_ab` from a step-1 solution.
pub fn certificate_from_solution(graph: &CommGraph, cfg: &SynthesisConfig, sol: &SdpSolution) -> Result<LyapunovCertificate> {
    let p = (1..=graph.node_count())
        .map(|k| value(sol, &p_name(k)).cloned())
        .collect::<Result<Vec<_>>>()?;
    let p_off = graph
        .edges()
        .into_iter()
        .map(|(a, b)| Ok(((a, b), value(sol, &p_off_name(a, b))?.clone())))
        .collect::<Result<BTreeMap<_, _>>>()?;
    Ok(LyapunovCertificate {
        p,
        p_off,
        epsilon: cfg.epsilon,
        pi: cfg.pi.clone(),
    })
}

/// Step 1 (linearized, minimal coupling blocks), then Step 2 (gains with the
/// Lyapunov blocks frozen).
pub fn two_step_synthesis(model: &PlantModel, graph: &CommGraph, cfg: &SynthesisConfig) -> Result<Design> {
    let p1 = assemble_theorem3(model, graph, cfg, Theorem3Mode::Step1)?;
    let mut opts1 = cfg.solver.clone();
    opts1.gap_tol = cfg.step1_gap_tol;
    let s1 = solve(&p1, &opts1)?;
    let sum1 = SolveSummary::new(&p1, &s1, cfg.solver.infeasibility_threshold);
    if !s1.status.is_success() {
        return Err(synthesis_error(SynthesisStage::LyapunovStructure, vec![("step 1".into(), sum1)]));
    }
    let cert = certificate_from_solution(graph, cfg, &s1)?;
    let p2 = assemble_theorem3(model, graph, cfg, Theorem3Mode::Step2 { fixed: &cert })?;
    let s2 = solve(&p2, &cfg.solver)?;
    let sum2 = SolveSummary::new(&p2, &s2, cfg.solver.infeasibility_threshold);
    if !s2.status.is_success() {
        return Err(synthesis_error(
            SynthesisStage::FrozenGainSearch,
            vec![("step 1".into(), sum1), ("step 2".into(), sum2)],
        ));
    }
    let mut gains = EstimatorGains::zeros(model, graph);
    for k in 1..=graph.node_count() {
        gains.l[k - 1] = value(&s2, &format!("L{k}"))?.clone();
        if model.r() > 0 {
            gains.l_tilde[k - 1] = value(&s2, &format!("Lt{k}"))?.clone();
        }
    }
    for (k, j) in graph.directed_edges() {
        gains.k.insert((k, j), value(&s2, &format!("K{k}_{j}"))?.clone());
        if model.r() > 0 {
            gains.k_tilde.insert((k, j), value(&s2, &format!("Kt{k}_{j}"))?.clone());
        }
    }
    if model.r() == 0 {
        let (lt, kt) = output_gains_from_p(model, graph, &cert)?;
        gains.l_tilde = lt;
        gains.k_tilde = kt;
    }
    let gamma_achieved = if cfg.minimize_gamma {
        value(&s2, "gamma2")?[(0, 0)].max(0.0).sqrt()
    } else {
        cfg.gamma
    };
    Ok(Design {
        gains,
        cert,
        gamma_achieved,
        runs: vec![("step 1".into(), sum1), ("step 2".into(), sum2)],
    })
}

/// Error-dynamics blocks of a designed estimator network:
/// `A_k = A − L_kC_k − ΣK_kj`, `A_kj = K_kj`, `B_k = −B_φ`,
/// `E_k = H − L̃_kC_k − ΣK̃_kj`, `E_kj = K̃_kj`.
pub fn error_interconnection(model: &PlantModel, graph: &CommGraph, gains: &EstimatorGains) -> Result<Interconnection> {
    gains.validate(model, graph)?;
    let nodes = graph.node_count();
    let mut a = Vec::with_capacity(nodes);
    let mut e = Vec::with_capacity(nodes);
    let mut a_off = BTreeMap::new();
    let mut e_off = BTreeMap::new();
    for k in 1..=nodes {
        let ck = &model.c[k - 1];
        let mut ak = &model.a - &gains.l[k - 1] * ck;
        let mut ek = &model.h - &gains.l_tilde[k - 1] * ck;
        for &j in graph.neighbors(k)? {
            ak -= &gains.k[&(k, j)];
            ek -= &gains.k_tilde[&(k, j)];
            a_off.insert((k, j), gains.k[&(k, j)].clone());
            e_off.insert((k, j), gains.k_tilde[&(k, j)].clone());
        }
        a.push(ak);
        e.push(ek);
    }
    Ok(Interconnection {
        a,
        a_off,
        b: vec![-model.b_phi.clone(); nodes],
        e,
        e_off,
    })
}

/// Numeric performance-bordered block of node `k` for given gains and
/// Lyapunov blocks, built from the error interconnection.
pub fn performance_block(
    model: &PlantModel,
    graph: &CommGraph,
    cfg: &SynthesisConfig,
    cert: &LyapunovCertificate,
    gains: &EstimatorGains,
    k: usize,
) -> Result<Mat> {
    let sys = error_interconnection(model, graph, gains)?;
    let n = model.n();
    let (rt, l) = (model.r_tilde(), model.l());
    let nbrs = graph.neighbors(k)?;
    let pk_count = nbrs.len();
    let zero = Mat::zeros(n, n);
    let pkj = |j: usize| cert.block(k, j).unwrap_or_else(|| zero.clone());
    let size = n * (1 + pk_count) + rt + l;
    let mut m = Mat::zeros(size, size);
    let pk = &cert.p[k - 1];
    let ak = &sys.a[k - 1];
    let mut set = |r: usize, c: usize, b: &Mat| {
        m.view_mut((r, c), b.shape()).copy_from(b);
    };
    let kk = pk * ak + ak.transpose() * pk + pk * (pk_count as f64 * cert.pi[k - 1])
        + Mat::identity(n, n) * cert.epsilon
        + cfg.w_bar(model, k);
    set(0, 0, &kk);
    let (th, wi) = (n * (1 + pk_count), n * (1 + pk_count) + rt);
    let pbt = pk * &model.b_theta;
    let pbw = pk * &model.b_w;
    set(0, th, &pbt);
    set(th, 0, &pbt.transpose());
    set(0, wi, &pbw);
    set(wi, 0, &pbw.transpose());
    for (i1, &j1) in nbrs.iter().enumerate() {
        let p1 = pkj(j1);
        let a1 = &sys.a_off[&(k, j1)];
        let e = pk * a1 + ak.transpose() * &p1;
        let o1 = n * (1 + i1);
        set(0, o1, &e);
        set(o1, 0, &e.transpose());
        for (i2, &j2) in nbrs.iter().enumerate() {
            let p2 = pkj(j2);
            let a2 = &sys.a_off[&(k, j2)];
            let mut e = p1.transpose() * a2 + a1.transpose() * &p2;
            if i1 == i2 {
                e -= &cert.p[j1 - 1] * cert.pi[j1 - 1];
            }
            set(o1, n * (1 + i2), &e);
        }
        let bt = p1.transpose() * &model.b_theta;
        let bw = p1.transpose() * &model.b_w;
        set(o1, th, &bt);
        set(th, o1, &bt.transpose());
        set(o1, wi, &bw);
        set(wi, o1, &bw.transpose());
    }
    set(th, th, &(-Mat::identity(rt, rt) * (model.tau * model.tau)));
    set(wi, wi, &(-Mat::identity(l, l) * (cfg.gamma * cfg.gamma)));
    Ok(m)
}
