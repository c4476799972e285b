//! Primal log-det barrier method.
//!
//! Equalities are eliminated first: `x = x0 + T y` where the columns of `T`
//! span the nullspace of the equality system. Phase 1 minimizes a common
//! slack `s` with `F_i(x) + μ_i I ⪯ s I`; phase 2 (only with an objective)
//! follows the central path of the original problem from the phase-1 point.

use std::collections::BTreeMap;

use nalgebra::Cholesky;
use serde::{Deserialize, Serialize};

use super::problem::SdpProblem;
use crate::error::{Error, Result};
use crate::linalg::{lambda_max, lambda_min, sym_eigenvalues, Mat, PivotedQr, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Feasible,
    Optimal,
    Infeasible,
    NumericalFailure,
    IterationLimit,
}

impl SolveStatus {
    pub fn is_success(&self) -> bool {
        matches!(self, SolveStatus::Feasible | SolveStatus::Optimal)
    }
}

impl std::fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SolveStatus::Feasible => "feasible",
            SolveStatus::Optimal => "optimal",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::NumericalFailure => "numerical-failure",
            SolveStatus::IterationLimit => "iteration-limit",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    /// Largest admissible eigenvalue of a returned constraint matrix.
    pub tol_feas: f64,
    /// Largest admissible entry of a returned equality residual.
    pub tol_eq: f64,
    /// Newton iterations allowed in each phase.
    pub max_iters: usize,
    /// Phase 2 stops once `m / t <= gap_tol * max(1, |objective|)`.
    pub gap_tol: f64,
    /// Phase-1 lower bounds above this are infeasibility certificates.
    pub infeasibility_threshold: f64,
    /// Phase 1 stops once the slack is below `-feasibility_depth`.
    pub feasibility_depth: f64,
    /// Radius of the ball `‖x‖₂ ≤ R` the iterates are confined to. Phase-2
    /// iterates reaching 90% of it are reported as unbounded.
    pub unbounded_norm: f64,
    /// Barrier parameter growth per outer iteration.
    pub barrier_growth: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol_feas: 1e-7,
            tol_eq: 1e-9,
            max_iters: 200,
            gap_tol: 1e-8,
            infeasibility_threshold: 1e-6,
            feasibility_depth: 1e-6,
            unbounded_norm: 1e6,
            barrier_growth: 6.0,
        }
    }
}

pub const ENV_PREFIX: &str = "DKYP_SOLVER_";

impl SolverOptions {
    /// Applies `DKYP_SOLVER_TOL_FEAS`, `DKYP_SOLVER_TOL_EQ`,
    /// `DKYP_SOLVER_MAX_ITERS`, `DKYP_SOLVER_GAP_TOL` and
    /// `DKYP_SOLVER_FEASIBILITY_DEPTH` when set.
    pub fn with_env_overrides(mut self) -> Result<Self> {
        fn read<T: std::str::FromStr>(key: &str) -> Result<Option<T>> {
            let name = format!("{ENV_PREFIX}{key}");
            match std::env::var(&name) {
                Ok(v) => v
                    .trim()
                    .parse()
                    .map(Some)
                    .map_err(|_| Error::Config(format!("{name}={v} is not a valid number"))),
                Err(_) => Ok(None),
            }
        }
        if let Some(v) = read("TOL_FEAS")? {
            self.tol_feas = v;
        }
        if let Some(v) = read("TOL_EQ")? {
            self.tol_eq = v;
        }
        if let Some(v) = read("MAX_ITERS")? {
            self.max_iters = v;
        }
        if let Some(v) = read("GAP_TOL")? {
            self.gap_tol = v;
        }
        if let Some(v) = read("FEASIBILITY_DEPTH")? {
            self.feasibility_depth = v;
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("tol_feas", self.tol_feas),
            ("tol_eq", self.tol_eq),
            ("gap_tol", self.gap_tol),
            ("infeasibility_threshold", self.infeasibility_threshold),
            ("feasibility_depth", self.feasibility_depth),
            ("unbounded_norm", self.unbounded_norm),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("solver option {name} must be positive, got {v}")));
            }
        }
        if self.max_iters == 0 {
            return Err(Error::Config("solver option max_iters must be at least 1".into()));
        }
        if !(self.barrier_growth > 1.0) {
            return Err(Error::Config("solver option barrier_growth must exceed 1".into()));
        }
        Ok(())
    }
}

/// Dual certificate of infeasibility.
#[derive(Debug, Clone)]
pub enum InfeasibilityWitness {
    /// `Z_i ⪰ 0` with `Σ tr Z_i = 1` and multipliers `ν` (one per equality
    /// entry, column-major within each equality) such that
    /// `Σ_i ⟨F_ia, Z_i⟩ = Σ_j ⟨G_ja, ν_j⟩` for every parameter `a`, while
    /// `Σ_i ⟨F_i0 + μ_i I, Z_i⟩ − Σ_j ⟨G_j0, ν_j⟩ > 0`. Then every `x` with
    /// the equalities satisfied has `max_i λ_max(F_i(x) + μ_i I) > 0`.
    Dual {
        lmi_duals: Vec<Mat>,
        eq_multipliers: Vec<Mat>,
        bound: f64,
    },
    /// The equality system alone is inconsistent.
    Equalities { residual: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WitnessCheck {
    pub min_eigenvalue: f64,
    pub trace: f64,
    pub stationarity: f64,
    pub bound: f64,
    pub certifies: bool,
}

/// Re-checks a dual witness against the problem data only.
pub fn verify_witness(problem: &SdpProblem, witness: &InfeasibilityWitness, threshold: f64) -> WitnessCheck {
    match witness {
        InfeasibilityWitness::Equalities { residual } => WitnessCheck {
            min_eigenvalue: 0.0,
            trace: 0.0,
            stationarity: 0.0,
            bound: *residual,
            certifies: *residual > threshold,
        },
        InfeasibilityWitness::Dual {
            lmi_duals,
            eq_multipliers,
            ..
        } => {
            let m = problem.param_count();
            let lmis = problem.lmis();
            let eqs = problem.equalities();
            if lmi_duals.len() != lmis.len() || eq_multipliers.len() != eqs.len() {
                return WitnessCheck {
                    min_eigenvalue: f64::NAN,
                    trace: f64::NAN,
                    stationarity: f64::INFINITY,
                    bound: f64::NAN,
                    certifies: false,
                };
            }
            let mut r = vec![0.0; m];
            let mut bound = 0.0;
            let mut trace = 0.0;
            let mut min_eig = f64::INFINITY;
            let mut scale = 0.0f64;
            for (l, z) in lmis.iter().zip(lmi_duals) {
                min_eig = min_eig.min(lambda_min(z));
                trace += z.trace();
                bound += l.constant.dot(z) + l.margin * z.trace();
                for (p, c) in &l.coeffs {
                    let v = c.dot(z);
                    r[*p] += v;
                    scale = scale.max(v.abs());
                }
            }
            for (e, nu) in eqs.iter().zip(eq_multipliers) {
                bound -= e.constant.dot(nu);
                for (p, c) in &e.coeffs {
                    r[*p] -= c.dot(nu);
                }
            }
            let stationarity = r.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let certifies = min_eig >= -1e-12
                && (trace - 1.0).abs() <= 1e-9
                && stationarity <= WITNESS_STATIONARITY_TOL * scale.max(1.0)
                && bound > threshold;
            WitnessCheck {
                min_eigenvalue: min_eig,
                trace,
                stationarity,
                bound,
                certifies,
            }
        }
    }
}

const WITNESS_STATIONARITY_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SolveStats {
    pub phase1_iterations: usize,
    pub phase2_iterations: usize,
    /// Final phase-1 slack (negative means strictly feasible).
    pub phase1_slack: f64,
    /// Final `m / t` of phase 2.
    pub duality_gap: Option<f64>,
    pub free_dimension: usize,
    pub equality_rank: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConstraintResidual {
    pub label: String,
    /// `λ_max(F_i(x))` for LMIs, `max |G_j(x)|` for equalities.
    pub value: f64,
}

#[derive(Debug, Clone)]
pub struct SdpSolution {
    pub status: SolveStatus,
    /// Flat parameter vector of the last iterate.
    pub x: Vec<f64>,
    pub assignments: BTreeMap<String, Mat>,
    pub lmi_residuals: Vec<ConstraintResidual>,
    pub eq_residuals: Vec<ConstraintResidual>,
    pub objective_value: Option<f64>,
    pub witness: Option<InfeasibilityWitness>,
    pub stats: SolveStats,
    pub message: String,
}

impl SdpSolution {
    pub fn value(&self, name: &str) -> Option<&Mat> {
        self.assignments.get(name)
    }

    pub fn max_lmi_residual(&self) -> f64 {
        self.lmi_residuals
            .iter()
            .fold(f64::NEG_INFINITY, |a, r| a.max(r.value))
    }

    pub fn max_eq_residual(&self) -> f64 {
        self.eq_residuals.iter().fold(0.0f64, |a, r| a.max(r.value))
    }
}

struct Block {
    dim: usize,
    /// `F_0 + μ I`
    constant: Mat,
    params: Vec<usize>,
    coeffs: Vec<Mat>,
}

/// `x = x0 + T y` with `T = [N_E on the equality-involved coordinates; I on the rest]`.
struct Space {
    m: usize,
    x0: Vector,
    e_idx: Vec<usize>,
    f_idx: Vec<usize>,
    null_e: Mat,
}

impl Space {
    fn dim(&self) -> usize {
        self.null_e.ncols() + self.f_idx.len()
    }

    fn dz(&self) -> usize {
        self.null_e.ncols()
    }

    fn lift_dir(&self, dy: &Vector) -> Vector {
        let mut dx = Vector::zeros(self.m);
        let dz = self.dz();
        if dz > 0 {
            let xe = &self.null_e * dy.rows(0, dz);
            for (i, &a) in self.e_idx.iter().enumerate() {
                dx[a] = xe[i];
            }
        }
        for (i, &a) in self.f_idx.iter().enumerate() {
            dx[a] = dy[dz + i];
        }
        dx
    }

    fn lift(&self, y: &Vector) -> Vector {
        self.lift_dir(y) + &self.x0
    }

    fn reduce_vec(&self, gx: &Vector) -> Vector {
        let dz = self.dz();
        let mut gy = Vector::zeros(self.dim());
        if dz > 0 {
            let ge = Vector::from_iterator(self.e_idx.len(), self.e_idx.iter().map(|&a| gx[a]));
            gy.rows_mut(0, dz).copy_from(&self.null_e.tr_mul(&ge));
        }
        for (i, &a) in self.f_idx.iter().enumerate() {
            gy[dz + i] = gx[a];
        }
        gy
    }

    fn reduce_mat(&self, hx: &Mat) -> Mat {
        let dz = self.dz();
        let nf = self.f_idx.len();
        let mut hy = Mat::zeros(dz + nf, dz + nf);
        let hff = hx.select_rows(&self.f_idx).select_columns(&self.f_idx);
        hy.view_mut((dz, dz), (nf, nf)).copy_from(&hff);
        if dz > 0 {
            let hee = hx.select_rows(&self.e_idx).select_columns(&self.e_idx);
            let zz = self.null_e.tr_mul(&(hee * &self.null_e));
            hy.view_mut((0, 0), (dz, dz)).copy_from(&zz);
            if nf > 0 {
                let hef = hx.select_rows(&self.e_idx).select_columns(&self.f_idx);
                let zf = self.null_e.tr_mul(&hef);
                hy.view_mut((0, dz), (dz, nf)).copy_from(&zf);
                hy.view_mut((dz, 0), (nf, dz)).copy_from(&zf.transpose());
            }
        }
        hy
    }

    /// Appends a free coordinate (the phase-1 slack) at the end of `x` and `y`.
    fn with_extra(&self) -> Space {
        let mut f_idx = self.f_idx.clone();
        f_idx.push(self.m);
        let mut x0 = Vector::zeros(self.m + 1);
        x0.rows_mut(0, self.m).copy_from(&self.x0);
        Space {
            m: self.m + 1,
            x0,
            e_idx: self.e_idx.clone(),
            f_idx,
            null_e: self.null_e.clone(),
        }
    }
}

/// Equality data restricted to the involved coordinates.
struct EqSystem {
    /// Flattened (column-major per equality) rows over `e_idx`.
    a: Mat,
    b: Vector,
    e_idx: Vec<usize>,
    /// `(equality index, rows, cols)` in flattening order.
    shapes: Vec<(usize, usize)>,
    qr: Option<PivotedQr>,
    rank: usize,
}

impl EqSystem {
    fn new(problem: &SdpProblem) -> Self {
        let m = problem.param_count();
        let mut involved = vec![false; m];
        for e in problem.equalities() {
            for (p, _) in &e.coeffs {
                involved[*p] = true;
            }
        }
        let e_idx: Vec<usize> = (0..m).filter(|&a| involved[a]).collect();
        let mut pos = vec![usize::MAX; m];
        for (i, &a) in e_idx.iter().enumerate() {
            pos[a] = i;
        }
        let rows: usize = problem.equalities().iter().map(|e| e.nrows * e.ncols).sum();
        let mut a = Mat::zeros(rows, e_idx.len());
        let mut b = Vector::zeros(rows);
        let mut shapes = Vec::new();
        let mut row0 = 0;
        for e in problem.equalities() {
            let len = e.nrows * e.ncols;
            for (k, v) in e.constant.iter().enumerate() {
                b[row0 + k] = -v;
            }
            for (p, c) in &e.coeffs {
                for (k, v) in c.iter().enumerate() {
                    a[(row0 + k, pos[*p])] = *v;
                }
            }
            shapes.push((e.nrows, e.ncols));
            row0 += len;
        }
        let (qr, rank) = if rows > 0 && !e_idx.is_empty() {
            let qr = PivotedQr::new(&a.transpose());
            let rank = qr.rank(EQ_RANK_RTOL);
            (Some(qr), rank)
        } else {
            (None, 0)
        };
        EqSystem {
            a,
            b,
            e_idx,
            shapes,
            qr,
            rank,
        }
    }

    /// Minimum-norm solution of the consistent part and the nullspace basis.
    fn particular_and_null(&self) -> (Vector, Mat) {
        let ne = self.e_idx.len();
        let Some(qr) = &self.qr else {
            return (Vector::zeros(ne), Mat::identity(ne, ne));
        };
        let r = self.rank;
        let bp = Vector::from_iterator(r, qr.perm[..r].iter().map(|&i| self.b[i]));
        let r11 = qr.r.view((0, 0), (r, r)).clone_owned();
        let u = r11
            .transpose()
            .solve_lower_triangular(&bp)
            .unwrap_or_else(|| Vector::zeros(r));
        let q1 = qr.q.columns(0, r);
        let x0 = q1 * u;
        let null = qr.q.columns(r, ne - r).clone_owned();
        (x0, null)
    }

    /// Least-squares multipliers with `Aᵀ ν ≈ r_E`.
    fn multipliers(&self, r_e: &Vector) -> Vector {
        let rows = self.b.len();
        let mut nu = Vector::zeros(rows);
        let Some(qr) = &self.qr else {
            return nu;
        };
        let r = self.rank;
        if r == 0 {
            return nu;
        }
        let rhs = qr.q.columns(0, r).tr_mul(r_e);
        let r11 = qr.r.view((0, 0), (r, r)).clone_owned();
        if let Some(sol) = r11.solve_upper_triangular(&rhs) {
            for i in 0..r {
                nu[qr.perm[i]] = sol[i];
            }
        }
        nu
    }

    fn unflatten(&self, nu: &Vector) -> Vec<Mat> {
        let mut out = Vec::new();
        let mut row0 = 0;
        for &(r, c) in &self.shapes {
            out.push(Mat::from_column_slice(r, c, &nu.as_slice()[row0..row0 + r * c]));
            row0 += r * c;
        }
        out
    }
}

const EQ_RANK_RTOL: f64 = 1e-10;

/// Result of evaluating all barrier blocks at one point.
struct BarrierEval {
    value: f64,
    grad: Vector,
    hess: Mat,
    /// Per block: Cholesky factor and `L⁻¹ F_a L⁻ᵀ` for each block parameter.
    factors: Vec<(Mat, Vec<Mat>)>,
}

fn slack_matrix(b: &Block, x: &Vector) -> Mat {
    let mut g = b.constant.clone();
    for (p, c) in b.params.iter().zip(&b.coeffs) {
        let v = x[*p];
        if v != 0.0 {
            g += c * v;
        }
    }
    -g
}

fn barrier_value(blocks: &[Block], x: &Vector) -> Option<f64> {
    let mut total = 0.0;
    for b in blocks {
        let chol = Cholesky::new(slack_matrix(b, x))?;
        let l = chol.l_dirty();
        let mut logdet = 0.0;
        for i in 0..b.dim {
            let d = l[(i, i)];
            if !(d > 0.0) {
                return None;
            }
            logdet += 2.0 * d.ln();
        }
        total -= logdet;
    }
    total.is_finite().then_some(total)
}

fn barrier_eval(blocks: &[Block], x: &Vector, m: usize) -> Option<BarrierEval> {
    let mut grad = Vector::zeros(m);
    let mut hess = Mat::zeros(m, m);
    let mut value = 0.0;
    let mut factors = Vec::with_capacity(blocks.len());
    for b in blocks {
        let d = b.dim;
        let chol = Cholesky::new(slack_matrix(b, x))?;
        let l = chol.l();
        for i in 0..d {
            value -= 2.0 * l[(i, i)].ln();
        }
        let k = b.params.len();
        // L⁻¹ [F_1 ... F_k]
        let mut stacked = Mat::zeros(d, d * k);
        for (a, c) in b.coeffs.iter().enumerate() {
            stacked.view_mut((0, a * d), (d, d)).copy_from(c);
        }
        if !l.solve_lower_triangular_mut(&mut stacked) {
            return None;
        }
        // L⁻¹ (L⁻¹ F_a)ᵀ
        let mut second = Mat::zeros(d, d * k);
        for a in 0..k {
            second
                .view_mut((0, a * d), (d, d))
                .copy_from(&stacked.view((0, a * d), (d, d)).transpose());
        }
        if !l.solve_lower_triangular_mut(&mut second) {
            return None;
        }
        let svec_len = d * (d + 1) / 2;
        let mut mcols = Mat::zeros(svec_len, k);
        let mut ftilde = Vec::with_capacity(k);
        let sqrt2 = std::f64::consts::SQRT_2;
        for a in 0..k {
            let f = second.view((0, a * d), (d, d)).clone_owned();
            let mut idx = 0;
            let mut tr = 0.0;
            for j in 0..d {
                for i in 0..=j {
                    let v = 0.5 * (f[(i, j)] + f[(j, i)]);
                    mcols[(idx, a)] = if i == j { v } else { sqrt2 * v };
                    if i == j {
                        tr += v;
                    }
                    idx += 1;
                }
            }
            grad[b.params[a]] += tr;
            ftilde.push(f);
        }
        let local = mcols.tr_mul(&mcols);
        for (ia, &pa) in b.params.iter().enumerate() {
            for (ib, &pb) in b.params.iter().enumerate() {
                hess[(pa, pb)] += local[(ia, ib)];
            }
        }
        factors.push((l, ftilde));
    }
    Some(BarrierEval {
        value,
        grad,
        hess,
        factors,
    })
}

/// Largest step keeping every block positive definite (∞ if unlimited).
fn max_step(blocks: &[Block], eval: &BarrierEval, dx: &Vector) -> f64 {
    let mut alpha = f64::INFINITY;
    for (b, (_, ftilde)) in blocks.iter().zip(&eval.factors) {
        // L⁻¹ ΔS L⁻ᵀ = −Σ dx_a F̃_a
        let mut ds = Mat::zeros(b.dim, b.dim);
        let mut any = false;
        for (a, &p) in b.params.iter().enumerate() {
            let v = dx[p];
            if v != 0.0 {
                ds -= &ftilde[a] * v;
                any = true;
            }
        }
        if !any {
            continue;
        }
        let mn = sym_eigenvalues(&ds).first().copied().unwrap_or(0.0);
        if mn < 0.0 {
            alpha = alpha.min(-1.0 / mn);
        }
    }
    alpha
}

fn solve_newton(h: &Mat, rhs: &Vector) -> Option<Vector> {
    let n = h.nrows();
    if n == 0 {
        return Some(Vector::zeros(0));
    }
    // Jacobi scaling, then Cholesky with escalating regularization and
    // two rounds of iterative refinement against the unregularized matrix
    let d: Vector = Vector::from_iterator(
        n,
        (0..n).map(|i| {
            let v = h[(i, i)];
            if v > 0.0 {
                1.0 / v.sqrt()
            } else {
                1.0
            }
        }),
    );
    let mut hs = h.clone();
    for j in 0..n {
        for i in 0..n {
            hs[(i, j)] *= d[i] * d[j];
        }
    }
    let rs = rhs.component_mul(&d);
    let mut delta = 0.0;
    for _ in 0..12 {
        let mut hr = hs.clone();
        if delta > 0.0 {
            for i in 0..n {
                hr[(i, i)] += delta;
            }
        }
        if let Some(ch) = Cholesky::new(hr) {
            let mut sol = ch.solve(&rs);
            for _ in 0..2 {
                let r = &rs - &hs * &sol;
                sol += ch.solve(&r);
            }
            if sol.iter().all(|v| v.is_finite()) {
                return Some(sol.component_mul(&d));
            }
        }
        delta = if delta == 0.0 { 1e-12 } else { delta * 100.0 };
    }
    None
}

enum CenterEnd {
    Centered,
    EarlyStop,
    Stalled,
}

enum CenterFail {
    IterationLimit,
    Numerical(String),
}

/// Barrier `−log(R² − Σ_{a<n} x_a²)` over the original parameters.
struct Ball {
    n: usize,
    r2: f64,
}

impl Ball {
    fn slack(&self, x: &Vector) -> f64 {
        self.r2 - x.rows(0, self.n).norm_squared()
    }

    fn value(&self, x: &Vector) -> Option<f64> {
        let s = self.slack(x);
        (s > 0.0).then(|| -s.ln())
    }

    fn add_to(&self, x: &Vector, ev: &mut BarrierEval) -> Option<()> {
        let s = self.slack(x);
        if !(s > 0.0) {
            return None;
        }
        ev.value -= s.ln();
        let xb = x.rows(0, self.n);
        for a in 0..self.n {
            ev.grad[a] += 2.0 * xb[a] / s;
            ev.hess[(a, a)] += 2.0 / s;
        }
        let mut hb = ev.hess.view_mut((0, 0), (self.n, self.n));
        hb.ger(4.0 / (s * s), &xb, &xb, 1.0);
        Some(())
    }

    /// Largest `α` with `x + α dx` inside the ball.
    fn max_step(&self, x: &Vector, dx: &Vector) -> f64 {
        let xb = x.rows(0, self.n);
        let db = dx.rows(0, self.n);
        let a = db.norm_squared();
        if a == 0.0 {
            return f64::INFINITY;
        }
        let b = xb.dot(&db);
        let c = self.slack(x);
        (-b + (b * b + a * c).sqrt()) / a
    }
}

struct Centering<'a> {
    blocks: &'a [Block],
    ball: &'a Ball,
    space: &'a Space,
    c_y: &'a Vector,
    opts: &'a SolverOptions,
    /// `(y index, lower limit)`: steps are shortened so that coordinate
    /// never drops below the limit.
    floor: Option<(usize, f64)>,
}

impl Centering<'_> {
    fn run(
        &self,
        t: f64,
        y: &mut Vector,
        iters: &mut usize,
        early_stop: &dyn Fn(&Vector) -> bool,
    ) -> std::result::Result<CenterEnd, CenterFail> {
        let m = self.space.m;
        let mut inner = 0usize;
        loop {
            let x = self.space.lift(y);
            let mut ev = barrier_eval(self.blocks, &x, m)
                .ok_or_else(|| CenterFail::Numerical("iterate left the interior".into()))?;
            self.ball
                .add_to(&x, &mut ev)
                .ok_or_else(|| CenterFail::Numerical("iterate left the bounding ball".into()))?;
            let g = self.c_y * t + self.space.reduce_vec(&ev.grad);
            let h = self.space.reduce_mat(&ev.hess);
            let step = solve_newton(&h, &(-&g))
                .ok_or_else(|| CenterFail::Numerical("singular Newton system".into()))?;
            let slope = g.dot(&step);
            let dec2 = -slope;
            if !(dec2.is_finite()) {
                return Err(CenterFail::Numerical("non-finite Newton decrement".into()));
            }
            if dec2 < 0.0 {
                return Ok(CenterEnd::Stalled);
            }
            if dec2 / 2.0 <= CENTERING_TOL {
                return Ok(CenterEnd::Centered);
            }
            let dx = self.space.lift_dir(&step);
            let amax = max_step(self.blocks, &ev, &dx).min(self.ball.max_step(&x, &dx));
            let mut alpha = if amax.is_finite() { (0.99 * amax).min(1.0) } else { 1.0 };
            if let Some((i, lim)) = self.floor {
                if step[i] < 0.0 {
                    alpha = alpha.min((y[i] - lim) / -step[i]);
                }
            }
            let f0 = t * self.c_y.dot(y) + ev.value;
            let mut accepted = false;
            for _ in 0..60 {
                let y_new = &*y + &step * alpha;
                let x_new = self.space.lift(&y_new);
                let bv = barrier_value(self.blocks, &x_new)
                    .and_then(|v| self.ball.value(&x_new).map(|w| v + w));
                if let Some(bv) = bv {
                    let f1 = t * self.c_y.dot(&y_new) + bv;
                    if f1 <= f0 + ARMIJO * alpha * slope {
                        *y = y_new;
                        accepted = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            *iters += 1;
            inner += 1;
            if !accepted || inner >= MAX_INNER {
                return Ok(CenterEnd::Stalled);
            }
            if early_stop(y) {
                return Ok(CenterEnd::EarlyStop);
            }
            if *iters >= self.opts.max_iters {
                return Err(CenterFail::IterationLimit);
            }
        }
    }
}

const CENTERING_TOL: f64 = 1e-9;
/// Newton steps allowed for one centering before it counts as stalled.
const MAX_INNER: usize = 150;
const ARMIJO: f64 = 0.25;

/// Solves the problem. See the module documentation for the method.
pub fn solve(problem: &SdpProblem, opts: &SolverOptions) -> Result<SdpSolution> {
    opts.validate()?;
    let m = problem.param_count();
    let eq = EqSystem::new(problem);
    let (x0_e, null_e) = eq.particular_and_null();

    let mut x0 = Vector::zeros(m);
    for (i, &a) in eq.e_idx.iter().enumerate() {
        x0[a] = x0_e[i];
    }
    let mut in_e = vec![false; m];
    for &a in &eq.e_idx {
        in_e[a] = true;
    }
    let space = Space {
        m,
        x0,
        e_idx: eq.e_idx.clone(),
        f_idx: (0..m).filter(|&a| !in_e[a]).collect(),
        null_e,
    };
    let mut stats = SolveStats {
        free_dimension: space.dim(),
        equality_rank: eq.rank,
        ..Default::default()
    };

    // inconsistent equalities
    if !eq.b.is_empty() {
        let res = (&eq.a * &x0_e - &eq.b).amax();
        let scale = eq.b.amax().max(1.0);
        if res > opts.tol_eq.max(1e-10 * scale) {
            let x: Vec<f64> = space.x0.iter().copied().collect();
            return Ok(finish(
                problem,
                opts,
                SolveStatus::Infeasible,
                x,
                Some(InfeasibilityWitness::Equalities { residual: res }),
                stats,
                format!("equality constraints are inconsistent (residual {res:e})"),
            ));
        }
    }

    let mut blocks: Vec<Block> = problem
        .lmis()
        .iter()
        .map(|l| {
            let mut constant = l.constant.clone();
            for i in 0..l.dim {
                constant[(i, i)] += l.margin;
            }
            Block {
                dim: l.dim,
                constant,
                params: l.coeffs.iter().map(|(p, _)| *p).collect(),
                coeffs: l.coeffs.iter().map(|(_, c)| c.clone()).collect(),
            }
        })
        .collect();

    let c_x = Vector::from_vec(problem.objective_vector());
    let c_y = space.reduce_vec(&c_x);

    if blocks.is_empty() {
        let x: Vec<f64> = space.x0.iter().copied().collect();
        if problem.has_objective() && c_y.amax() > 0.0 {
            return Ok(finish(
                problem,
                opts,
                SolveStatus::NumericalFailure,
                x,
                None,
                stats,
                "objective is unbounded below on the equality set".into(),
            ));
        }
        let status = if problem.has_objective() {
            SolveStatus::Optimal
        } else {
            SolveStatus::Feasible
        };
        return Ok(finish(problem, opts, status, x, None, stats, String::new()));
    }

    // ---- phase 1 ----
    let s_idx = m;
    let space1 = space.with_extra();
    for b in &mut blocks {
        b.params.push(s_idx);
        b.coeffs.push(-Mat::identity(b.dim, b.dim));
    }
    // the bounding ball counts as one more barrier degree
    let total_dim: usize = blocks.iter().map(|b| b.dim).sum::<usize>() + 1;
    let xs = space.x0.clone();
    if xs.norm() >= 0.5 * opts.unbounded_norm {
        let x: Vec<f64> = xs.iter().copied().collect();
        return Ok(finish(
            problem,
            opts,
            SolveStatus::NumericalFailure,
            x,
            None,
            stats,
            format!("equality solution norm {:e} exceeds the iterate bound", xs.norm()),
        ));
    }
    let worst = blocks
        .iter()
        .map(|b| lambda_max(&b.constant_at(&xs)))
        .fold(f64::NEG_INFINITY, f64::max);
    let mut y = Vector::zeros(space1.dim());
    let ny = y.len();
    y[ny - 1] = worst.max(0.0) + 1.0;
    let mut c1 = Vector::zeros(space1.dim());
    c1[ny - 1] = 1.0;
    let depth = opts.feasibility_depth.max(opts.infeasibility_threshold);
    let ball = Ball {
        n: m,
        r2: opts.unbounded_norm * opts.unbounded_norm,
    };
    let center1 = Centering {
        blocks: &blocks,
        ball: &ball,
        space: &space1,
        c_y: &c1,
        opts,
        floor: Some((ny - 1, -2.0 * depth)),
    };
    let stop_at = |y: &Vector| y[y.len() - 1] <= -depth;
    let mut t = total_dim as f64 / y[ny - 1];
    let mut iters = 0usize;
    let mut witness = None;
    let mut phase1_status: Option<(SolveStatus, String)> = None;
    if !stop_at(&y) {
        loop {
            let end = center1.run(t, &mut y, &mut iters, &stop_at);
            let s = y[ny - 1];
            match end {
                Ok(CenterEnd::EarlyStop) => break,
                Ok(end) => {
                    let gap = total_dim as f64 / t;
                    if s - gap > opts.infeasibility_threshold {
                        let x1 = space1.lift(&y);
                        if let Some(w) = dual_witness(problem, &blocks, &eq, &x1) {
                            let check = verify_witness(problem, &w, opts.infeasibility_threshold);
                            if check.certifies {
                                phase1_status = Some((
                                    SolveStatus::Infeasible,
                                    format!(
                                        "phase-1 slack bounded below by {:e} (dual witness)",
                                        check.bound
                                    ),
                                ));
                                witness = Some(w);
                                break;
                            }
                        }
                    }
                    let converged = gap <= 1e-3 * opts.infeasibility_threshold
                        || matches!(end, CenterEnd::Stalled) && gap <= opts.infeasibility_threshold;
                    if converged {
                        let msg = if s >= -opts.infeasibility_threshold && s <= opts.infeasibility_threshold {
                            format!("phase-1 optimum {s:e} is within the marginal band")
                        } else if s > opts.infeasibility_threshold {
                            format!("phase-1 optimum {s:e} is positive but no dual witness verified")
                        } else {
                            // strictly feasible, just shallower than requested
                            break;
                        };
                        phase1_status = Some((SolveStatus::NumericalFailure, msg));
                        break;
                    }
                    if matches!(end, CenterEnd::Stalled) && iters >= opts.max_iters {
                        phase1_status = Some((SolveStatus::IterationLimit, "phase 1 stalled".into()));
                        break;
                    }
                    t *= opts.barrier_growth;
                }
                Err(CenterFail::IterationLimit) => {
                    phase1_status = Some((
                        SolveStatus::IterationLimit,
                        format!("phase 1 hit {} iterations at slack {s:e}", opts.max_iters),
                    ));
                    break;
                }
                Err(CenterFail::Numerical(msg)) => {
                    phase1_status = Some((SolveStatus::NumericalFailure, format!("phase 1: {msg}")));
                    break;
                }
            }
        }
    }
    stats.phase1_iterations = iters;
    stats.phase1_slack = y[ny - 1];
    let x1 = space1.lift(&y);
    if let Some((status, msg)) = phase1_status {
        let x: Vec<f64> = x1.rows(0, m).iter().copied().collect();
        return Ok(finish(problem, opts, status, x, witness, stats, msg));
    }

    // ---- phase 2 ----
    for b in &mut blocks {
        b.params.pop();
        b.coeffs.pop();
    }
    let mut y2 = y.rows(0, ny - 1).clone_owned();
    if !problem.has_objective() {
        let x: Vec<f64> = space.lift(&y2).iter().copied().collect();
        return Ok(finish(problem, opts, SolveStatus::Feasible, x, None, stats, String::new()));
    }
    let center2 = Centering {
        blocks: &blocks,
        ball: &ball,
        space: &space,
        c_y: &c_y,
        opts,
        floor: None,
    };
    let obj = |y: &Vector| c_x.dot(&space.lift(y));
    let mut t = total_dim as f64 / obj(&y2).abs().max(1.0);
    let mut iters = 0usize;
    let never = |_: &Vector| false;
    let status;
    let msg;
    loop {
        let end = center2.run(t, &mut y2, &mut iters, &never);
        let gap = total_dim as f64 / t;
        match end {
            Ok(end) => {
                let f = obj(&y2);
                let converged = gap <= opts.gap_tol * f.abs().max(1.0)
                    || matches!(end, CenterEnd::Stalled) && gap <= 1e-6 * f.abs().max(1.0);
                if converged && ball.slack(&space.lift(&y2)) < 0.19 * ball.r2 {
                    status = SolveStatus::NumericalFailure;
                    msg = "objective appears unbounded below (optimum on the iterate bound)".into();
                    break;
                }
                if gap <= opts.gap_tol * f.abs().max(1.0) {
                    status = SolveStatus::Optimal;
                    msg = String::new();
                    stats.duality_gap = Some(gap);
                    break;
                }
                if matches!(end, CenterEnd::Stalled) {
                    stats.duality_gap = Some(gap);
                    if gap <= 1e-6 * f.abs().max(1.0) {
                        // precision floor reached; accept with the gap on record
                        status = SolveStatus::Optimal;
                        msg = format!("stopped at gap {gap:e} (centering stalled)");
                    } else {
                        status = SolveStatus::NumericalFailure;
                        msg = format!("centering stalled at gap {gap:e}");
                    }
                    break;
                }
                t *= opts.barrier_growth;
            }
            Err(CenterFail::IterationLimit) => {
                status = SolveStatus::IterationLimit;
                msg = format!("phase 2 hit {} iterations at gap {gap:e}", opts.max_iters);
                stats.duality_gap = Some(gap);
                break;
            }
            Err(CenterFail::Numerical(m)) => {
                status = SolveStatus::NumericalFailure;
                msg = format!("phase 2: {m}");
                break;
            }
        }
    }
    stats.phase2_iterations = iters;
    let x: Vec<f64> = space.lift(&y2).iter().copied().collect();
    Ok(finish(problem, opts, status, x, None, stats, msg))
}

impl Block {
    /// `F_0 + μI + Σ x_a F_a` (no slack).
    fn constant_at(&self, x: &Vector) -> Mat {
        let mut g = self.constant.clone();
        for (p, c) in self.params.iter().zip(&self.coeffs) {
            if *p < x.len() && x[*p] != 0.0 {
                g += c * x[*p];
            }
        }
        g
    }
}

/// Normalized inverse slack matrices at a phase-1 point and least-squares
/// equality multipliers.
fn dual_witness(
    problem: &SdpProblem,
    blocks: &[Block],
    eq: &EqSystem,
    x1: &Vector,
) -> Option<InfeasibilityWitness> {
    let mut zs = Vec::with_capacity(blocks.len());
    let mut total = 0.0;
    for b in blocks {
        let ch = Cholesky::new(slack_matrix(b, x1))?;
        let z = crate::linalg::symmetrize(&ch.inverse());
        total += z.trace();
        zs.push(z);
    }
    if !(total > 0.0) {
        return None;
    }
    for z in &mut zs {
        *z /= total;
    }
    let m = problem.param_count();
    let mut r = Vector::zeros(m);
    for (l, z) in problem.lmis().iter().zip(&zs) {
        for (p, c) in &l.coeffs {
            r[*p] += c.dot(z);
        }
    }
    let r_e = Vector::from_iterator(eq.e_idx.len(), eq.e_idx.iter().map(|&a| r[a]));
    let nu = eq.multipliers(&r_e);
    let eq_multipliers = eq.unflatten(&nu);
    let mut bound = 0.0;
    for (l, z) in problem.lmis().iter().zip(&zs) {
        bound += l.constant.dot(z) + l.margin * z.trace();
    }
    for (e, n) in problem.equalities().iter().zip(&eq_multipliers) {
        bound -= e.constant.dot(n);
    }
    Some(InfeasibilityWitness::Dual {
        lmi_duals: zs,
        eq_multipliers,
        bound,
    })
}

fn finish(
    problem: &SdpProblem,
    opts: &SolverOptions,
    mut status: SolveStatus,
    x: Vec<f64>,
    witness: Option<InfeasibilityWitness>,
    stats: SolveStats,
    mut message: String,
) -> SdpSolution {
    let lmi_residuals: Vec<ConstraintResidual> = problem
        .lmis()
        .iter()
        .map(|l| ConstraintResidual {
            label: l.label.clone(),
            value: lambda_max(&l.eval(&x)),
        })
        .collect();
    let eq_residuals: Vec<ConstraintResidual> = problem
        .equalities()
        .iter()
        .map(|e| ConstraintResidual {
            label: e.label.clone(),
            value: e.eval(&x).amax(),
        })
        .collect();
    let objective_value = problem.has_objective().then(|| {
        problem
            .objective_vector()
            .iter()
            .zip(&x)
            .map(|(c, v)| c * v)
            .sum::<f64>()
    });
    let assignments = problem
        .variables()
        .iter()
        .enumerate()
        .map(|(i, v)| (v.name.clone(), problem.unpack(super::problem::VarId(i), &x)))
        .collect();
    let mut sol = SdpSolution {
        status,
        x,
        assignments,
        lmi_residuals,
        eq_residuals,
        objective_value,
        witness,
        stats,
        message: String::new(),
    };
    if status.is_success() {
        let (lmi, eqr) = (sol.max_lmi_residual(), sol.max_eq_residual());
        if !(lmi <= opts.tol_feas) || !(eqr <= opts.tol_eq) {
            status = SolveStatus::NumericalFailure;
            message = format!(
                "post-solve verification failed: max eigenvalue {lmi:e}, equality residual {eqr:e}"
            );
        }
    }
    sol.status = status;
    sol.message = message;
    sol
}
