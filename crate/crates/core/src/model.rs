//! Plant description, nonlinearities, estimator gains and synthesis settings.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::CommGraph;
use crate::linalg::{from_rows, lambda_min, max_asymmetry, Mat, Vector};
use crate::sdp::SolverOptions;

/// Componentwise scalar nonlinearity, applied identically to every component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Nonlinearity {
    Zero,
    Identity,
    /// `sign(y)·|y|^(1/3)`
    CubeRoot,
    Saturation { limit: f64 },
    /// `Σ_i coeffs[i]·y^i`
    Polynomial { coeffs: Vec<f64> },
    Sine,
}

impl Nonlinearity {
    pub fn eval_scalar(&self, y: f64) -> f64 {
        match self {
            Nonlinearity::Zero => 0.0,
            Nonlinearity::Identity => y,
            Nonlinearity::CubeRoot => y.signum() * y.abs().cbrt(),
            Nonlinearity::Saturation { limit } => y.clamp(-limit.abs(), limit.abs()),
            Nonlinearity::Polynomial { coeffs } => coeffs.iter().rev().fold(0.0, |acc, c| acc * y + c),
            Nonlinearity::Sine => y.sin(),
        }
    }

    pub fn eval(&self, y: &Vector) -> Result<Vector> {
        let out = y.map(|v| self.eval_scalar(v));
        if out.iter().all(|v| v.is_finite()) {
            Ok(out)
        } else {
            Err(Error::Evaluation(format!("{self:?} at {:?}", y.as_slice())))
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Nonlinearity::Zero)
    }
}

/// Known input term `g(u)(t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InputSignal {
    #[default]
    Zero,
    Constant { value: Vec<f64> },
    /// `amplitude · sin(freq·t + phase)`
    Sinusoid { amplitude: Vec<f64>, freq: f64, phase: f64 },
}

impl InputSignal {
    pub fn eval(&self, n: usize, t: f64) -> Vector {
        match self {
            InputSignal::Zero => Vector::zeros(n),
            InputSignal::Constant { value } => Vector::from_column_slice(value),
            InputSignal::Sinusoid {
                amplitude,
                freq,
                phase,
            } => Vector::from_column_slice(amplitude) * (freq * t + phase).sin(),
        }
    }

    fn dim(&self) -> Option<usize> {
        match self {
            InputSignal::Zero => None,
            InputSignal::Constant { value } => Some(value.len()),
            InputSignal::Sinusoid { amplitude, .. } => Some(amplitude.len()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PlantModel {
    pub a: Mat,
    pub b_phi: Mat,
    pub h: Mat,
    pub b_theta: Mat,
    pub h_tilde: Mat,
    pub b_w: Mat,
    /// Per-node measurement matrices, node `k` at index `k - 1`.
    pub c: Vec<Mat>,
    pub tau: f64,
    pub phi: Nonlinearity,
    pub theta: Nonlinearity,
    pub g_u: InputSignal,
}

impl PlantModel {
    /// Linear plant `ẋ = Ax + B_w w`, `y_k = C_k x`.
    pub fn linear(a: Mat, b_w: Mat, c: Vec<Mat>) -> Self {
        let n = a.nrows();
        PlantModel {
            a,
            b_phi: Mat::zeros(n, 0),
            h: Mat::zeros(0, n),
            b_theta: Mat::zeros(n, 0),
            h_tilde: Mat::zeros(0, n),
            b_w,
            c,
            tau: 1.0,
            phi: Nonlinearity::Zero,
            theta: Nonlinearity::Zero,
            g_u: InputSignal::Zero,
        }
    }

    /// Six-state oscillator with a cube-root feedback nonlinearity, measured
    /// by six nodes through neighboring state differences.
    pub fn six_state_oscillator() -> Self {
        let a = from_rows(&[
            vec![0., 1., 0., 1., 0., 1.],
            vec![-1., 0., 1., 0., 1., 0.],
            vec![0., -1., 0., 1., 0., 1.],
            vec![-1., 0., -1., 0., 1., 0.],
            vec![0., -1., 0., -1., 0., 1.],
            vec![-1., 0., -1., 0., -1., 0.],
        ]);
        let c = (0..6)
            .map(|k| {
                let mut row = Mat::zeros(1, 6);
                row[(0, k)] = -1.0;
                row[(0, (k + 1) % 6)] = 1.0;
                row
            })
            .collect();
        PlantModel {
            b_phi: Mat::from_column_slice(6, 1, &[1., 0., 0., -1., 0., 0.]),
            h: Mat::from_element(1, 6, 1.0),
            phi: Nonlinearity::CubeRoot,
            ..PlantModel::linear(a, Mat::from_element(6, 1, 1.0), c)
        }
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }
    pub fn r(&self) -> usize {
        self.b_phi.ncols()
    }
    pub fn r_tilde(&self) -> usize {
        self.b_theta.ncols()
    }
    pub fn l(&self) -> usize {
        self.b_w.ncols()
    }
    pub fn node_count(&self) -> usize {
        self.c.len()
    }
    pub fn q(&self, k: usize) -> usize {
        self.c[k - 1].nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        let dim = |name: &str, m: &Mat, r: usize, c: usize| -> Result<()> {
            if m.shape() != (r, c) {
                return Err(Error::Dimension(format!(
                    "{name} is {}x{}, expected {r}x{c}",
                    m.nrows(),
                    m.ncols()
                )));
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::Argument(format!("{name} has non-finite entries")));
            }
            Ok(())
        };
        if n == 0 {
            return Err(Error::Dimension("A must be at least 1x1".into()));
        }
        dim("A", &self.a, n, n)?;
        dim("B_phi", &self.b_phi, n, self.r())?;
        dim("H", &self.h, self.r(), n)?;
        dim("B_theta", &self.b_theta, n, self.r_tilde())?;
        dim("H_tilde", &self.h_tilde, self.r_tilde(), n)?;
        dim("B_w", &self.b_w, n, self.l())?;
        if self.c.is_empty() {
            return Err(Error::Dimension("at least one measurement matrix C_k is required".into()));
        }
        for (i, c) in self.c.iter().enumerate() {
            dim(&format!("C_{}", i + 1), c, c.nrows(), n)?;
        }
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::Argument(format!("tau must be positive, got {}", self.tau)));
        }
        if let Some(d) = self.g_u.dim() {
            if d != n {
                return Err(Error::Dimension(format!("g(u) has {d} entries, expected {n}")));
            }
        }
        Ok(())
    }
}

/// `Ax + B_φ φ(Hx) + B_θ θ(H̃x) + g(u)(t) + B_w w`
pub fn plant_rhs(model: &PlantModel, x: &Vector, w: &Vector, t: f64) -> Result<Vector> {
    let n = model.n();
    if x.len() != n || w.len() != model.l() {
        return Err(Error::Argument(format!(
            "plant_rhs expects x of length {n} and w of length {}",
            model.l()
        )));
    }
    let mut dx = &model.a * x + model.g_u.eval(n, t) + &model.b_w * w;
    if model.r() > 0 {
        dx += &model.b_phi * model.phi.eval(&(&model.h * x))?;
    }
    if model.r_tilde() > 0 {
        dx += &model.b_theta * model.theta.eval(&(&model.h_tilde * x))?;
    }
    finite(dx, "plant right-hand side")
}

fn finite(v: Vector, what: &str) -> Result<Vector> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(v)
    } else {
        Err(Error::Evaluation(what.to_string()))
    }
}

/// Per-node gains. Edge maps are keyed by directed pairs `(k, j)`, `j ∈ N_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorGains {
    pub l: Vec<Mat>,
    pub l_tilde: Vec<Mat>,
    pub k: BTreeMap<(usize, usize), Mat>,
    pub k_tilde: BTreeMap<(usize, usize), Mat>,
}

impl EstimatorGains {
    pub fn zeros(model: &PlantModel, graph: &CommGraph) -> Self {
        let n = model.n();
        let mut k = BTreeMap::new();
        let mut k_tilde = BTreeMap::new();
        for e in graph.directed_edges() {
            k.insert(e, Mat::zeros(n, n));
            k_tilde.insert(e, Mat::zeros(model.r(), n));
        }
        EstimatorGains {
            l: model.c.iter().map(|c| Mat::zeros(n, c.nrows())).collect(),
            l_tilde: model.c.iter().map(|c| Mat::zeros(model.r(), c.nrows())).collect(),
            k,
            k_tilde,
        }
    }

    pub fn validate(&self, model: &PlantModel, graph: &CommGraph) -> Result<()> {
        let n = model.n();
        let nodes = model.node_count();
        if graph.node_count() != nodes || self.l.len() != nodes || self.l_tilde.len() != nodes {
            return Err(Error::Argument(format!(
                "gains, model and graph disagree on the node count ({}, {nodes}, {})",
                self.l.len(),
                graph.node_count()
            )));
        }
        let check = |name: String, m: &Mat, shape: (usize, usize)| -> Result<()> {
            if m.shape() != shape {
                return Err(Error::Argument(format!(
                    "{name} is {}x{}, expected {}x{}",
                    m.nrows(),
                    m.ncols(),
                    shape.0,
                    shape.1
                )));
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::Argument(format!("{name} has non-finite entries")));
            }
            Ok(())
        };
        for k in 1..=nodes {
            check(format!("L_{k}"), &self.l[k - 1], (n, model.q(k)))?;
            check(format!("L~_{k}"), &self.l_tilde[k - 1], (model.r(), model.q(k)))?;
        }
        let want: Vec<(usize, usize)> = graph.directed_edges();
        let have_k: Vec<(usize, usize)> = self.k.keys().copied().collect();
        let have_kt: Vec<(usize, usize)> = self.k_tilde.keys().copied().collect();
        if have_k != want || have_kt != want {
            return Err(Error::Argument(
                "edge gains must be keyed exactly by the directed graph edges".into(),
            ));
        }
        for (&(k, j), m) in &self.k {
            check(format!("K_{k}{j}"), m, (n, n))?;
        }
        for (&(k, j), m) in &self.k_tilde {
            check(format!("K~_{k}{j}"), m, (model.r(), n))?;
        }
        Ok(())
    }
}

/// Right-hand side of estimator `k`. `xhat_neighbors` follows
/// `graph.neighbors(k)`.
#[allow(clippy::too_many_arguments)]
pub fn estimator_rhs(
    model: &PlantModel,
    graph: &CommGraph,
    gains: &EstimatorGains,
    k: usize,
    xhat_k: &Vector,
    xhat_neighbors: &[&Vector],
    y_k: &Vector,
    t: f64,
) -> Result<Vector> {
    let n = model.n();
    let nbrs = graph.neighbors(k)?;
    if nbrs.len() != xhat_neighbors.len() {
        return Err(Error::Argument(format!(
            "node {k} has {} neighbors, got {} estimates",
            nbrs.len(),
            xhat_neighbors.len()
        )));
    }
    if xhat_k.len() != n || xhat_neighbors.iter().any(|v| v.len() != n) {
        return Err(Error::Argument(format!("estimates must have length {n}")));
    }
    if k > model.node_count() || y_k.len() != model.q(k) {
        return Err(Error::Argument(format!("measurement for node {k} has wrong length")));
    }
    let innovation = y_k - &model.c[k - 1] * xhat_k;
    let mut dx = &model.a * xhat_k + model.g_u.eval(n, t) + &gains.l[k - 1] * &innovation;
    let mut v = &model.h * xhat_k + &gains.l_tilde[k - 1] * &innovation;
    for (&j, xj) in nbrs.iter().zip(xhat_neighbors) {
        let diff = *xj - xhat_k;
        let kk = gains
            .k
            .get(&(k, j))
            .ok_or_else(|| Error::Argument(format!("missing gain K_{k}{j}")))?;
        dx += kk * &diff;
        if model.r() > 0 {
            let kt = gains
                .k_tilde
                .get(&(k, j))
                .ok_or_else(|| Error::Argument(format!("missing gain K~_{k}{j}")))?;
            v += kt * &diff;
        }
    }
    if model.r() > 0 {
        dx += &model.b_phi * model.phi.eval(&v)?;
    }
    if model.r_tilde() > 0 {
        dx += &model.b_theta * model.theta.eval(&(&model.h_tilde * xhat_k))?;
    }
    finite(dx, "estimator right-hand side")
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisConfig {
    pub gamma: f64,
    /// Per-node error weights `W_k`.
    pub w: Vec<Mat>,
    /// True when `w` was filled with identities because none was given.
    pub w_defaulted: bool,
    pub pi: Vec<f64>,
    pub lambda: Vec<f64>,
    pub alpha: f64,
    pub epsilon: f64,
    /// Minimize `γ²` in the frozen-P step instead of checking a fixed `γ`.
    pub minimize_gamma: bool,
    /// Step 1: bound on `‖G_k − λ_k P_k C_kᵀ‖` and `‖F_kj − λ_k P_k‖`, the
    /// distance from the gains the linearized coupling blocks assume.
    pub linearization_bound: Option<f64>,
    /// Step 2: bound on `‖L_k‖` and `‖K_kj‖`.
    pub gain_bound: Option<f64>,
    /// Relative duality-gap target of the linearized step. Its objective
    /// only steers the coupling blocks, so a loose target suffices.
    pub step1_gap_tol: f64,
    pub solver: SolverOptions,
}

pub const DEFAULT_PI: f64 = 0.1;
pub const DEFAULT_LAMBDA: f64 = 1.0;
pub const DEFAULT_ALPHA: f64 = 0.1;
pub const DEFAULT_EPSILON: f64 = 1e-3;
pub const DEFAULT_LINEARIZATION_BOUND: f64 = 5.0;
pub const DEFAULT_GAIN_BOUND: f64 = 100.0;
pub const DEFAULT_STEP1_GAP_TOL: f64 = 1e-3;

impl SynthesisConfig {
    /// Defaults: `W_k = I`, `π_k = 0.1`, `λ_k = 1`, `α = 0.1`, `ε = 10⁻³`,
    /// linearization bound 5, gain bound 100.
    pub fn new(model: &PlantModel, gamma: f64) -> Self {
        let nodes = model.node_count();
        SynthesisConfig {
            gamma,
            w: vec![Mat::identity(model.n(), model.n()); nodes],
            w_defaulted: true,
            pi: vec![DEFAULT_PI; nodes],
            lambda: vec![DEFAULT_LAMBDA; nodes],
            alpha: DEFAULT_ALPHA,
            epsilon: DEFAULT_EPSILON,
            minimize_gamma: false,
            linearization_bound: Some(DEFAULT_LINEARIZATION_BOUND),
            gain_bound: Some(DEFAULT_GAIN_BOUND),
            step1_gap_tol: DEFAULT_STEP1_GAP_TOL,
            solver: SolverOptions::default(),
        }
    }

    pub fn validate(&self, model: &PlantModel) -> Result<()> {
        let nodes = model.node_count();
        let n = model.n();
        if !(self.gamma > 0.0) || !self.gamma.is_finite() {
            return Err(Error::Argument(format!("gamma must be positive, got {}", self.gamma)));
        }
        if !(self.epsilon > 0.0) || !(self.alpha > 0.0) {
            return Err(Error::Argument("epsilon and alpha must be positive".into()));
        }
        for (name, b) in [("linearization", self.linearization_bound), ("gain", self.gain_bound)] {
            if let Some(b) = b {
                if !(b > 0.0) || !b.is_finite() {
                    return Err(Error::Argument(format!("{name} bound must be positive, got {b}")));
                }
            }
        }
        if !(self.step1_gap_tol > 0.0) || !self.step1_gap_tol.is_finite() {
            return Err(Error::Argument("step-1 gap tolerance must be positive".into()));
        }
        if self.w.len() != nodes || self.pi.len() != nodes || self.lambda.len() != nodes {
            return Err(Error::Argument(format!(
                "per-node settings must have {nodes} entries"
            )));
        }
        for (k, p) in self.pi.iter().enumerate() {
            if !(*p > 0.0) {
                return Err(Error::Argument(format!("pi_{} must be positive", k + 1)));
            }
        }
        if self.lambda.iter().any(|v| !v.is_finite()) {
            return Err(Error::Argument("lambda must be finite".into()));
        }
        for (k, w) in self.w.iter().enumerate() {
            if w.shape() != (n, n) {
                return Err(Error::Dimension(format!("W_{} must be {n}x{n}", k + 1)));
            }
            if max_asymmetry(w) > 1e-12 * (1.0 + w.amax()) {
                return Err(Error::Argument(format!("W_{} is not symmetric", k + 1)));
            }
            if lambda_min(w) < -1e-12 * (1.0 + w.amax()) {
                return Err(Error::Argument(format!("W_{} is not positive semidefinite", k + 1)));
            }
        }
        self.solver.validate()
    }

    /// `W̄_k = W_k + H̃ᵀH̃`
    pub fn w_bar(&self, model: &PlantModel, k: usize) -> Mat {
        &self.w[k - 1] + model.h_tilde.transpose() * &model.h_tilde
    }
}

/// One closed interval per argument component.
pub type SampleBox = [(f64, f64)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectorReport {
    pub ok: bool,
    /// Most negative `(φ_i(a) − φ_i(b))(a − b)` seen, or 0.
    pub worst_violation: f64,
    pub pairs_checked: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IqcReport {
    pub ok: bool,
    /// Largest `‖θ(a) − θ(b)‖ / ‖a − b‖` seen.
    pub worst_ratio: f64,
    /// `1/τ`
    pub bound: f64,
    pub pairs_checked: usize,
}

const SAMPLING_SEED: u64 = 0x5eed_0fc1;

fn box_for(b: &SampleBox, dim: usize) -> Result<Vec<(f64, f64)>> {
    match b.len() {
        1 => Ok(vec![b[0]; dim]),
        d if d == dim => Ok(b.to_vec()),
        d => Err(Error::Argument(format!("sample box has {d} intervals, expected 1 or {dim}"))),
    }
}

/// Checks monotonicity of every component of `φ` on sorted samples.
pub fn validate_sector(model: &PlantModel, sample_box: &SampleBox, samples: usize) -> Result<SectorReport> {
    if samples < 2 {
        return Err(Error::Argument("validate_sector needs at least 2 samples".into()));
    }
    let r = model.r();
    let bx = box_for(sample_box, r)?;
    let mut rng = ChaCha8Rng::seed_from_u64(SAMPLING_SEED);
    let mut worst = 0.0f64;
    let mut pairs = 0;
    for (lo, hi) in bx {
        let mut pts: Vec<f64> = (0..samples - 2).map(|_| rng.random_range(lo..=hi)).collect();
        pts.push(lo);
        pts.push(hi);
        pts.sort_by(|a, b| a.total_cmp(b));
        let vals: Vec<f64> = pts.iter().map(|&p| model.phi.eval_scalar(p)).collect();
        if let Some(bad) = vals.iter().position(|v| !v.is_finite()) {
            return Err(Error::Evaluation(format!("phi({}) is not finite", pts[bad])));
        }
        for i in 1..pts.len() {
            let prod = (vals[i] - vals[i - 1]) * (pts[i] - pts[i - 1]);
            worst = worst.min(prod);
            pairs += 1;
        }
    }
    Ok(SectorReport {
        ok: worst >= 0.0,
        worst_violation: worst,
        pairs_checked: pairs,
    })
}

/// Checks `‖a − b‖² ≥ τ² ‖θ(a) − θ(b)‖²` on random pairs from the box.
pub fn validate_iqc(model: &PlantModel, sample_box: &SampleBox, samples: usize) -> Result<IqcReport> {
    if samples < 2 {
        return Err(Error::Argument("validate_iqc needs at least 2 samples".into()));
    }
    let rt = model.r_tilde();
    let bound = 1.0 / model.tau;
    if rt == 0 {
        return Ok(IqcReport {
            ok: true,
            worst_ratio: 0.0,
            bound,
            pairs_checked: 0,
        });
    }
    let bx = box_for(sample_box, rt)?;
    let mut rng = ChaCha8Rng::seed_from_u64(SAMPLING_SEED);
    let draw = |rng: &mut ChaCha8Rng| Vector::from_iterator(rt, bx.iter().map(|&(lo, hi)| rng.random_range(lo..=hi)));
    let mut worst = 0.0f64;
    let mut ok = true;
    let mut pairs = 0;
    for _ in 0..samples {
        let a = draw(&mut rng);
        let b = draw(&mut rng);
        let d = (&a - &b).norm();
        if d == 0.0 {
            continue;
        }
        let dt = (model.theta.eval(&a)? - model.theta.eval(&b)?).norm();
        worst = worst.max(dt / d);
        if model.tau * model.tau * dt * dt > d * d * (1.0 + 1e-12) {
            ok = false;
        }
        pairs += 1;
    }
    Ok(IqcReport {
        ok,
        worst_ratio: worst,
        bound,
        pairs_checked: pairs,
    })
}
