//! Independent checks of synthesized certificates: centralized KYP
//! conditions, global Lyapunov matrix, block dominance, frequency sampling.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::CommGraph;
use crate::linalg::{block_diag, is_hurwitz, lambda_max, lambda_min, max_abs, rank, spectral_norm, sym_eigenvalues, symmetrize, Mat};
use crate::model::{EstimatorGains, PlantModel, SynthesisConfig};
use crate::synthesis::{error_interconnection, performance_block, Interconnection, LyapunovCertificate};

/// Largest admissible `λ_max(PÃ + ÃᵀP + εI)`.
pub const KYP_LYAP_TOL: f64 = 1e-6;
/// Largest admissible `max |PB − Eᵀ|`.
pub const KYP_EQ_TOL: f64 = 1e-8;
/// Relative rank tolerance of the Kalman matrices.
pub const KALMAN_RANK_RTOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KypTolerances {
    pub lyap: f64,
    pub eq: f64,
}

impl Default for KypTolerances {
    fn default() -> Self {
        KypTolerances {
            lyap: KYP_LYAP_TOL,
            eq: KYP_EQ_TOL,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KypReport {
    pub lyap_max_eig: f64,
    pub eq_residual: f64,
    pub p_min_eig: f64,
    pub pass: bool,
}

/// Checks `PÃ + ÃᵀP ⪯ −εI`, `PB = Eᵀ` and `P ≻ 0` with the default
/// tolerances.
pub fn check_kyp(p: &Mat, a: &Mat, b: &Mat, e: &Mat, eps: f64) -> KypReport {
    check_kyp_with(p, a, b, e, eps, None, KypTolerances::default())
}

/// As [`check_kyp`], optionally adding a weight `W̄` to the Lyapunov term.
pub fn check_kyp_with(p: &Mat, a: &Mat, b: &Mat, e: &Mat, eps: f64, w_bar: Option<&Mat>, tol: KypTolerances) -> KypReport {
    let n = p.nrows();
    let mut lyap = p * a + a.transpose() * p + Mat::identity(n, n) * eps;
    if let Some(w) = w_bar {
        lyap += w;
    }
    let lyap_max_eig = lambda_max(&symmetrize(&lyap));
    let eq_residual = if b.ncols() == 0 { 0.0 } else { max_abs(&(p * b - e.transpose())) };
    let p_min_eig = lambda_min(&symmetrize(p));
    let pass = lyap_max_eig <= tol.lyap && eq_residual <= tol.eq && p_min_eig > 0.0;
    KypReport {
        lyap_max_eig,
        eq_residual,
        p_min_eig,
        pass,
    }
}

fn offsets(dims: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(dims.len());
    let mut acc = 0;
    for d in dims {
        out.push(acc);
        acc += d;
    }
    out
}

/// Global Lyapunov matrix with `P_k` on the diagonal and `P_kj`, `P_kjᵀ` at
/// the edge positions.
pub fn assemble_global_p(cert: &LyapunovCertificate, graph: &CommGraph) -> Result<Mat> {
    cert.validate(graph)?;
    let dims = cert.dims();
    let off = offsets(&dims);
    let total: usize = dims.iter().sum();
    let mut p = Mat::zeros(total, total);
    for (k, pk) in cert.p.iter().enumerate() {
        if pk.shape() != (dims[k], dims[k]) {
            return Err(Error::Dimension(format!("P_{} is not square", k + 1)));
        }
        p.view_mut((off[k], off[k]), pk.shape()).copy_from(&symmetrize(pk));
    }
    for (&(a, b), m) in &cert.p_off {
        p.view_mut((off[a - 1], off[b - 1]), m.shape()).copy_from(m);
        p.view_mut((off[b - 1], off[a - 1]), (m.ncols(), m.nrows()))
            .copy_from(&m.transpose());
    }
    Ok(p)
}

/// Global `(Ã, B, E)` of an interconnection.
pub fn global_system(sys: &Interconnection, graph: &CommGraph) -> Result<(Mat, Mat, Mat)> {
    let nodes = graph.node_count();
    if sys.a.len() != nodes || sys.b.len() != nodes || sys.e.len() != nodes {
        return Err(Error::Dimension(format!("interconnection must have {nodes} subsystems")));
    }
    let dims: Vec<usize> = sys.a.iter().map(|m| m.nrows()).collect();
    let off = offsets(&dims);
    let total: usize = dims.iter().sum();
    let mut a = block_diag(&sys.a);
    let b = block_diag(&sys.b);
    let mut e = block_diag(&sys.e);
    let in_dims: Vec<usize> = sys.b.iter().map(|m| m.ncols()).collect();
    let in_off = offsets(&in_dims);
    debug_assert_eq!(a.nrows(), total);
    for k in 1..=nodes {
        for &j in graph.neighbors(k)? {
            let akj = sys
                .a_off
                .get(&(k, j))
                .ok_or_else(|| Error::Dimension(format!("missing A_{k}{j}")))?;
            let ekj = sys
                .e_off
                .get(&(k, j))
                .ok_or_else(|| Error::Dimension(format!("missing E_{k}{j}")))?;
            if akj.shape() != (dims[k - 1], dims[j - 1]) || ekj.shape() != (in_dims[k - 1], dims[j - 1]) {
                return Err(Error::Dimension(format!("coupling blocks ({k},{j}) have wrong shape")));
            }
            a.view_mut((off[k - 1], off[j - 1]), akj.shape()).copy_from(akj);
            e.view_mut((in_off[k - 1], off[j - 1]), ekj.shape()).copy_from(ekj);
        }
    }
    Ok((a, b, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReducedMatrixReport {
    /// Row-major `N × N` reduced matrix.
    pub r: Vec<Vec<f64>>,
    pub diag_dominant: bool,
    /// `Σ_j ‖P_k⁻¹P_kj‖` per node.
    pub norm_sums: Vec<f64>,
}

/// Reduced matrix `r_kk = 1`, `r_kj = −‖P_k⁻¹P_kj‖₂` and its strict
/// row diagonal dominance.
pub fn reduced_matrix_test(cert: &LyapunovCertificate, graph: &CommGraph) -> Result<ReducedMatrixReport> {
    cert.validate(graph)?;
    let nodes = graph.node_count();
    let mut inverses = Vec::with_capacity(nodes);
    for (k, pk) in cert.p.iter().enumerate() {
        let eig = sym_eigenvalues(&symmetrize(pk));
        let lo = eig.iter().fold(f64::INFINITY, |a, v| a.min(v.abs()));
        let hi = eig.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let inv = pk.clone().try_inverse();
        match inv {
            Some(inv) if lo > 1e-12 * hi && inv.iter().all(|v| v.is_finite()) => inverses.push(inv),
            _ => return Err(Error::Conditioning(format!("P_{} is singular", k + 1))),
        }
    }
    let mut r = vec![vec![0.0; nodes]; nodes];
    let mut norm_sums = vec![0.0; nodes];
    for k in 1..=nodes {
        r[k - 1][k - 1] = 1.0;
        for &j in graph.neighbors(k)? {
            if let Some(pkj) = cert.block(k, j) {
                let v = spectral_norm(&(&inverses[k - 1] * pkj));
                r[k - 1][j - 1] = -v;
                norm_sums[k - 1] += v;
            }
        }
    }
    let diag_dominant = norm_sums.iter().all(|&s| s < 1.0);
    Ok(ReducedMatrixReport {
        r,
        diag_dominant,
        norm_sums,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corollary1Violation {
    pub k: usize,
    pub j: usize,
    /// `‖E_kj B_k‖_max`.
    pub residual: f64,
}

/// For every ordered pair with `B_k = B_j ≠ 0`, `E_kj ≠ 0` and `E_jk = 0`,
/// requires `E_kj B_k = 0`. Blocks whose entries are all at most `zero_tol`
/// in magnitude count as zero; absent blocks are zero.
pub fn corollary1_check(b: &[Mat], e_off: &BTreeMap<(usize, usize), Mat>, zero_tol: f64) -> Vec<Corollary1Violation> {
    let is_zero = |m: Option<&Mat>| m.is_none_or(|m| m.is_empty() || max_abs(m) <= zero_tol);
    let mut out = Vec::new();
    for (&(k, j), ekj) in e_off {
        let (Some(bk), Some(bj)) = (b.get(k.wrapping_sub(1)), b.get(j.wrapping_sub(1))) else {
            continue;
        };
        if bk.shape() != bj.shape() || is_zero(Some(bk)) || max_abs(&(bk - bj)) > zero_tol {
            continue;
        }
        if is_zero(Some(ekj)) || !is_zero(e_off.get(&(j, k))) || ekj.ncols() != bk.nrows() {
            continue;
        }
        let residual = max_abs(&(ekj * bk));
        if residual > zero_tol {
            out.push(Corollary1Violation { k, j, residual });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyGrid {
    pub w_min: f64,
    pub w_max: f64,
    pub points: usize,
}

impl Default for FrequencyGrid {
    fn default() -> Self {
        FrequencyGrid {
            w_min: 1e-3,
            w_max: 1e3,
            points: 500,
        }
    }
}

impl FrequencyGrid {
    pub fn frequencies(&self) -> Vec<f64> {
        if self.points <= 1 {
            return vec![self.w_min];
        }
        let (lo, hi) = (self.w_min.ln(), self.w_max.ln());
        (0..self.points)
            .map(|i| (lo + (hi - lo) * i as f64 / (self.points - 1) as f64).exp())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SprReport {
    pub hurwitz: bool,
    /// Minimum over the grid of `λ_min(G(jω) + G(jω)*)`; `None` when `Ã`
    /// is not Hurwitz.
    pub min_eig: Option<f64>,
    pub at_frequency: Option<f64>,
    pub pass: bool,
}

/// `λ_min(G(jω) + G(jω)*)` for `G(s) = E(sI − Ã)⁻¹B`, via the real
/// embedding of the complex resolvent.
fn hermitian_part_min_eig(a: &Mat, b: &Mat, e: &Mat, w: f64) -> Result<f64> {
    let n = a.nrows();
    let m = b.ncols();
    // (jωI − Ã)(X + jY) = B  ⇔  [[−Ã, −ωI], [ωI, −Ã]] [X; Y] = [B; 0]
    let mut big = Mat::zeros(2 * n, 2 * n);
    big.view_mut((0, 0), (n, n)).copy_from(&(-a));
    big.view_mut((n, n), (n, n)).copy_from(&(-a));
    big.view_mut((0, n), (n, n)).copy_from(&(-Mat::identity(n, n) * w));
    big.view_mut((n, 0), (n, n)).copy_from(&(Mat::identity(n, n) * w));
    let mut rhs = Mat::zeros(2 * n, m);
    rhs.view_mut((0, 0), (n, m)).copy_from(b);
    let sol = big
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Conditioning(format!("jωI − Ã is singular at ω = {w}")))?;
    let g_re = e * sol.rows(0, n);
    let g_im = e * sol.rows(n, n);
    // G + G* = (Re + Reᵀ) + j(Im − Imᵀ); Hermitian M = S + jK embeds as [[S, −K], [K, S]]
    let s = &g_re + g_re.transpose();
    let k = &g_im - g_im.transpose();
    let mut emb = DMatrix::zeros(2 * m, 2 * m);
    emb.view_mut((0, 0), (m, m)).copy_from(&s);
    emb.view_mut((m, m), (m, m)).copy_from(&s);
    emb.view_mut((0, m), (m, m)).copy_from(&(-&k));
    emb.view_mut((m, 0), (m, m)).copy_from(&k);
    Ok(lambda_min(&symmetrize(&emb)))
}

/// Samples `G(jω) + G(jω)*` on the grid. Fails outright when `Ã` is not
/// Hurwitz.
pub fn spr_frequency_check(a: &Mat, b: &Mat, e: &Mat, grid: &FrequencyGrid) -> Result<SprReport> {
    if !a.is_square() || b.nrows() != a.nrows() || e.shape() != (b.ncols(), a.nrows()) {
        return Err(Error::Dimension("SPR data are inconsistent".into()));
    }
    if !is_hurwitz(a) {
        return Ok(SprReport {
            hurwitz: false,
            min_eig: None,
            at_frequency: None,
            pass: false,
        });
    }
    let mut best = (f64::INFINITY, 0.0);
    for w in grid.frequencies() {
        let v = hermitian_part_min_eig(a, b, e, w)?;
        if v < best.0 {
            best = (v, w);
        }
    }
    Ok(SprReport {
        hurwitz: true,
        min_eig: Some(best.0),
        at_frequency: Some(best.1),
        pass: best.0 > 0.0,
    })
}

/// Warnings for an uncontrollable `(Ã, B)` or unobservable `(E, Ã)`.
pub fn kalman_warnings(a: &Mat, b: &Mat, e: &Mat) -> Vec<String> {
    let n = a.nrows();
    let mut out = Vec::new();
    if b.ncols() == 0 || e.nrows() == 0 {
        return out;
    }
    let mut ctrb = Mat::zeros(n, n * b.ncols());
    let mut blk = b.clone();
    for i in 0..n {
        ctrb.view_mut((0, i * b.ncols()), blk.shape()).copy_from(&blk);
        blk = a * blk;
    }
    let mut obsv = Mat::zeros(n * e.nrows(), n);
    let mut blk = e.clone();
    for i in 0..n {
        obsv.view_mut((i * e.nrows(), 0), blk.shape()).copy_from(&blk);
        blk = &blk * a;
    }
    let rc = rank(&ctrb, KALMAN_RANK_RTOL);
    if rc < n {
        out.push(format!("(Ã, B) is not controllable: rank {rc} of {n}"));
    }
    let ro = rank(&obsv, KALMAN_RANK_RTOL);
    if ro < n {
        out.push(format!("(E, Ã) is not observable: rank {ro} of {n}"));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    pub mandatory: bool,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub kyp: KypReport,
    /// `λ_max(PÃ + ÃᵀP + εI + blockdiag(W̄_k))`.
    pub weighted_lyap_max_eig: f64,
    pub global_p_min_eig: f64,
    /// Largest eigenvalue of the per-node performance blocks.
    pub performance_max_eig: Vec<f64>,
    pub reduced: Option<ReducedMatrixReport>,
    pub corollary1: Vec<Corollary1Violation>,
    pub spr: SprReport,
    pub warnings: Vec<String>,
    pub checks: Vec<CheckOutcome>,
    pub pass: bool,
}

/// Runs every check on a design. Mandatory: global `P ≻ 0`, the KYP
/// conditions, the per-node performance blocks, the structural equality
/// condition and the frequency sampling. The reduced-matrix test is a
/// diagnostic.
pub fn verify_design(
    model: &PlantModel,
    graph: &CommGraph,
    cfg: &SynthesisConfig,
    gains: &EstimatorGains,
    cert: &LyapunovCertificate,
    grid: &FrequencyGrid,
) -> Result<VerificationReport> {
    let sys = error_interconnection(model, graph, gains)?;
    let (a, b, e) = global_system(&sys, graph)?;
    let p = assemble_global_p(cert, graph)?;
    let kyp = check_kyp(&p, &a, &b, &e, cert.epsilon);
    let w_bar = block_diag(&(1..=graph.node_count()).map(|k| cfg.w_bar(model, k)).collect::<Vec<_>>());
    let weighted = check_kyp_with(&p, &a, &b, &e, cert.epsilon, Some(&w_bar), KypTolerances::default());
    let global_p_min_eig = kyp.p_min_eig;
    let performance_max_eig = (1..=graph.node_count())
        .map(|k| performance_block(model, graph, cfg, cert, gains, k).map(|m| lambda_max(&symmetrize(&m))))
        .collect::<Result<Vec<_>>>()?;
    let mut warnings = kalman_warnings(&a, &b, &e);
    let reduced = match reduced_matrix_test(cert, graph) {
        Ok(r) => Some(r),
        Err(err) => {
            warnings.push(format!("reduced-matrix test skipped: {err}"));
            None
        }
    };
    let corollary1 = corollary1_check(&sys.b, &sys.e_off, 1e-9);
    let spr = spr_frequency_check(&a, &b, &e, grid)?;

    let perf_worst = performance_max_eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut checks = vec![
        CheckOutcome {
            name: "global P positive definite".into(),
            mandatory: true,
            pass: global_p_min_eig > 0.0,
            detail: format!("lambda_min = {global_p_min_eig:.3e}"),
        },
        CheckOutcome {
            name: "KYP conditions".into(),
            mandatory: true,
            pass: kyp.pass,
            detail: format!(
                "lambda_max = {:.3e}, equality residual = {:.3e}",
                kyp.lyap_max_eig, kyp.eq_residual
            ),
        },
        CheckOutcome {
            name: "weighted KYP conditions".into(),
            mandatory: true,
            pass: weighted.pass,
            detail: format!("lambda_max = {:.3e}", weighted.lyap_max_eig),
        },
        CheckOutcome {
            name: "performance blocks".into(),
            mandatory: true,
            pass: perf_worst <= KYP_LYAP_TOL,
            detail: format!("worst lambda_max = {perf_worst:.3e}"),
        },
        CheckOutcome {
            name: "directed coupling condition".into(),
            mandatory: true,
            pass: corollary1.is_empty(),
            detail: format!("{} violations", corollary1.len()),
        },
        CheckOutcome {
            name: "frequency sampling".into(),
            mandatory: true,
            pass: spr.pass,
            detail: match spr.min_eig {
                Some(v) => format!("min eigenvalue {v:.3e} at omega = {:.3e}", spr.at_frequency.unwrap_or(0.0)),
                None => "error dynamics not Hurwitz".into(),
            },
        },
    ];
    checks.push(CheckOutcome {
        name: "block dominance".into(),
        mandatory: false,
        pass: reduced.as_ref().is_some_and(|r| r.diag_dominant),
        detail: match &reduced {
            Some(r) => format!(
                "max norm sum = {:.3e}",
                r.norm_sums.iter().cloned().fold(0.0f64, f64::max)
            ),
            None => "not evaluated".into(),
        },
    });
    let pass = checks.iter().all(|c| c.pass || !c.mandatory);
    Ok(VerificationReport {
        kyp,
        weighted_lyap_max_eig: weighted.lyap_max_eig,
        global_p_min_eig,
        performance_max_eig,
        reduced,
        corollary1,
        spr,
        warnings,
        checks,
        pass,
    })
}
