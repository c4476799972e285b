//! Fixed-step simulation of the plant together with all estimators, and the
//! decay and energy metrics derived from it.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::assemble_global_p;
use crate::error::{Error, Result};
use crate::graph::CommGraph;
use crate::linalg::{Mat, Vector};
use crate::model::{estimator_rhs, plant_rhs, EstimatorGains, PlantModel};
use crate::synthesis::LyapunovCertificate;

/// Sinusoids in the seeded-noise signal.
pub const NOISE_COMPONENTS: usize = 20;
/// A state norm above `BLOWUP_FACTOR · (1 + ‖z(0)‖)` counts as divergence.
pub const BLOWUP_FACTOR: f64 = 1e12;
/// Error norms at or below this are treated as converged by the fit.
pub const FIT_FLOOR: f64 = 1e-12;

/// Disturbance `w(t)`, applied identically to every component unless noted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Disturbance {
    Zero,
    /// `amp · sin(freq · t)`, `freq` in rad/s.
    Sinusoid { amp: f64, freq: f64 },
    /// `amp` on `[t_on, t_off)`, zero elsewhere.
    Pulse { amp: f64, t_on: f64, t_off: f64 },
    /// Per component, a sum of [`NOISE_COMPONENTS`] sinusoids with
    /// frequencies uniform in `(0, bandwidth]` rad/s and random phases,
    /// scaled to RMS `amp`.
    SeededNoise { amp: f64, bandwidth: f64, seed: u64 },
}

#[derive(Debug, Clone)]
enum Signal {
    Zero,
    Sinusoid { amp: f64, freq: f64 },
    Pulse { amp: f64, t_on: f64, t_off: f64 },
    /// `(amplitude, frequency, phase)` per component.
    Sum(Vec<Vec<(f64, f64, f64)>>),
}

impl Disturbance {
    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Disturbance::Zero => true,
            Disturbance::Sinusoid { amp, freq } => amp.is_finite() && freq.is_finite(),
            Disturbance::Pulse { amp, t_on, t_off } => amp.is_finite() && t_on.is_finite() && t_off >= t_on,
            Disturbance::SeededNoise { amp, bandwidth, .. } => amp.is_finite() && bandwidth > 0.0 && bandwidth.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Argument(format!("invalid disturbance {self:?}")))
        }
    }

    fn realize(&self, l: usize) -> Signal {
        match *self {
            Disturbance::Zero => Signal::Zero,
            Disturbance::Sinusoid { amp, freq } => Signal::Sinusoid { amp, freq },
            Disturbance::Pulse { amp, t_on, t_off } => Signal::Pulse { amp, t_on, t_off },
            Disturbance::SeededNoise { amp, bandwidth, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let a = amp * (2.0 / NOISE_COMPONENTS as f64).sqrt();
                let comps = (0..l)
                    .map(|_| {
                        (0..NOISE_COMPONENTS)
                            .map(|_| {
                                let f = bandwidth * (1.0 - rng.random::<f64>());
                                let ph = 2.0 * PI * rng.random::<f64>();
                                (a, f, ph)
                            })
                            .collect()
                    })
                    .collect();
                Signal::Sum(comps)
            }
        }
    }
}

impl Signal {
    fn eval(&self, l: usize, t: f64) -> Vector {
        match self {
            Signal::Zero => Vector::zeros(l),
            Signal::Sinusoid { amp, freq } => Vector::from_element(l, amp * (freq * t).sin()),
            Signal::Pulse { amp, t_on, t_off } => {
                Vector::from_element(l, if t >= *t_on && t < *t_off { *amp } else { 0.0 })
            }
            Signal::Sum(comps) => Vector::from_iterator(
                l,
                comps
                    .iter()
                    .map(|c| c.iter().map(|(a, f, ph)| a * (f * t + ph).sin()).sum::<f64>()),
            ),
        }
    }
}

/// Everything needed for one run.
#[derive(Debug, Clone)]
pub struct SimScenario {
    pub model: PlantModel,
    pub graph: CommGraph,
    pub gains: EstimatorGains,
    pub x0: Vector,
    pub xhat0: Vec<Vector>,
    pub disturbance: Disturbance,
    pub t_final: f64,
    pub dt: f64,
    /// Error weights `W_k` of the cost integral.
    pub w: Vec<Mat>,
    /// Performance level `γ` of the energy bound.
    pub gamma: f64,
    /// Source of `I₀ = e(0)ᵀ P e(0)`; without it `I₀ = 0` and the bound is
    /// reported as not certified.
    pub certificate: Option<LyapunovCertificate>,
}

impl SimScenario {
    fn validate(&self) -> Result<()> {
        let n = self.model.n();
        let nodes = self.graph.node_count();
        self.model.validate()?;
        self.gains.validate(&self.model, &self.graph)?;
        if !(self.dt > 0.0) || !self.dt.is_finite() || !(self.t_final >= self.dt) || !self.t_final.is_finite() {
            return Err(Error::Argument(format!(
                "need 0 < dt <= t_final, got dt = {}, t_final = {}",
                self.dt, self.t_final
            )));
        }
        if self.x0.len() != n || self.xhat0.len() != nodes || self.xhat0.iter().any(|v| v.len() != n) {
            return Err(Error::Dimension(format!("initial states must have length {n} for {nodes} estimators")));
        }
        if self.w.len() != nodes || self.w.iter().any(|w| w.shape() != (n, n)) {
            return Err(Error::Dimension(format!("need {nodes} weights of size {n}x{n}")));
        }
        if !(self.gamma > 0.0) {
            return Err(Error::Argument("gamma must be positive".into()));
        }
        if let Some(c) = &self.certificate {
            c.validate(&self.graph)?;
            if c.dims().iter().any(|&d| d != n) {
                return Err(Error::Dimension(format!("certificate blocks must be {n}x{n}")));
            }
        }
        self.disturbance.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceMetrics {
    /// `Σ_k ∫ e_kᵀ W_k e_k dt`
    pub error_cost: f64,
    /// `∫ wᵀw dt`
    pub disturbance_energy: f64,
    /// `V(e(0))`, zero without a certificate.
    pub i0: f64,
    pub certified: bool,
    pub gamma: f64,
    /// `error_cost / (N γ² ∫wᵀw + I₀)`
    pub ratio_n: f64,
    /// `error_cost / (γ² ∫wᵀw + I₀)`
    pub ratio_1: f64,
}

#[derive(Debug, Clone)]
pub struct SimResult {
    pub t: Vec<f64>,
    pub x: Vec<Vector>,
    /// `xhat[i][k]`: estimate of node `k + 1` at sample `i`.
    pub xhat: Vec<Vec<Vector>>,
    /// `err[k][i] = ‖e_k(t_i)‖`
    pub err: Vec<Vec<f64>>,
    pub metrics: PerformanceMetrics,
}

fn unpack(z: &Vector, n: usize, nodes: usize) -> (Vector, Vec<Vector>) {
    let x = z.rows(0, n).into_owned();
    let xh = (0..nodes).map(|k| z.rows(n * (k + 1), n).into_owned()).collect();
    (x, xh)
}

fn coupled_rhs(sc: &SimScenario, signal: &Signal, z: &Vector, t: f64) -> Result<Vector> {
    let model = &sc.model;
    let n = model.n();
    let nodes = sc.graph.node_count();
    let (x, xh) = unpack(z, n, nodes);
    let w = signal.eval(model.l(), t);
    let mut out = Vector::zeros(z.len());
    out.rows_mut(0, n).copy_from(&plant_rhs(model, &x, &w, t)?);
    for k in 1..=nodes {
        let nbrs: Vec<&Vector> = sc.graph.neighbors(k)?.iter().map(|&j| &xh[j - 1]).collect();
        let y = &model.c[k - 1] * &x;
        let d = estimator_rhs(model, &sc.graph, &sc.gains, k, &xh[k - 1], &nbrs, &y, t)?;
        out.rows_mut(n * k, n).copy_from(&d);
    }
    Ok(out)
}

fn trapezoid(t: &[f64], f: &[f64]) -> f64 {
    t.windows(2)
        .zip(f.windows(2))
        .map(|(t, f)| 0.5 * (t[1] - t[0]) * (f[0] + f[1]))
        .sum()
}

/// Classical RK4 on the `(N + 1)·n` coupled state.
pub fn run(sc: &SimScenario) -> Result<SimResult> {
    sc.validate()?;
    let model = &sc.model;
    let n = model.n();
    let nodes = sc.graph.node_count();
    let signal = sc.disturbance.realize(model.l());
    let steps = (sc.t_final / sc.dt).round().max(1.0) as usize;
    let dt = sc.t_final / steps as f64;

    let mut z = Vector::zeros(n * (nodes + 1));
    z.rows_mut(0, n).copy_from(&sc.x0);
    for (k, v) in sc.xhat0.iter().enumerate() {
        z.rows_mut(n * (k + 1), n).copy_from(v);
    }
    let limit = BLOWUP_FACTOR * (1.0 + z.norm());
    let mut zs = Vec::with_capacity(steps + 1);
    let mut ts = Vec::with_capacity(steps + 1);
    zs.push(z.clone());
    ts.push(0.0);
    let diverged = |t: f64| Error::Divergence { time: t };
    for i in 0..steps {
        let t = i as f64 * dt;
        let stage = |z: &Vector, t: f64| match coupled_rhs(sc, &signal, z, t) {
            Err(Error::Evaluation(_)) => Err(diverged(t)),
            other => other,
        };
        let k1 = stage(&z, t)?;
        let k2 = stage(&(&z + &k1 * (0.5 * dt)), t + 0.5 * dt)?;
        let k3 = stage(&(&z + &k2 * (0.5 * dt)), t + 0.5 * dt)?;
        let k4 = stage(&(&z + &k3 * dt), t + dt)?;
        z += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        let t_next = (i + 1) as f64 * dt;
        if z.iter().any(|v| !v.is_finite()) || z.norm() > limit {
            return Err(diverged(t_next));
        }
        zs.push(z.clone());
        ts.push(t_next);
    }

    let mut x = Vec::with_capacity(zs.len());
    let mut xhat = Vec::with_capacity(zs.len());
    let mut err = vec![Vec::with_capacity(zs.len()); nodes];
    let mut cost_density = Vec::with_capacity(zs.len());
    let mut w_density = Vec::with_capacity(zs.len());
    for (zi, &ti) in zs.iter().zip(&ts) {
        let (xi, xhi) = unpack(zi, n, nodes);
        let mut c = 0.0;
        for k in 0..nodes {
            let e = &xi - &xhi[k];
            err[k].push(e.norm());
            c += e.dot(&(&sc.w[k] * &e));
        }
        cost_density.push(c);
        w_density.push(signal.eval(model.l(), ti).norm_squared());
        x.push(xi);
        xhat.push(xhi);
    }
    let error_cost = trapezoid(&ts, &cost_density);
    let disturbance_energy = trapezoid(&ts, &w_density);
    let (i0, certified) = match &sc.certificate {
        Some(cert) => {
            let p = assemble_global_p(cert, &sc.graph)?;
            let e0 = Vector::from_iterator(
                n * nodes,
                sc.xhat0.iter().flat_map(|xh| (&sc.x0 - xh).iter().copied().collect::<Vec<_>>()),
            );
            (e0.dot(&(&p * &e0)), true)
        }
        None => (0.0, false),
    };
    let g2 = sc.gamma * sc.gamma;
    let ratio = |scale: f64| {
        let denom = scale * g2 * disturbance_energy + i0;
        if denom > 0.0 {
            error_cost / denom
        } else if error_cost == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    };
    let metrics = PerformanceMetrics {
        error_cost,
        disturbance_energy,
        i0,
        certified,
        gamma: sc.gamma,
        ratio_n: ratio(nodes as f64),
        ratio_1: ratio(1.0),
    };
    Ok(SimResult {
        t: ts,
        x,
        xhat,
        err,
        metrics,
    })
}

impl SimResult {
    /// `max_k ‖e_k(t_i)‖` per sample.
    pub fn max_error(&self) -> Vec<f64> {
        (0..self.t.len())
            .map(|i| self.err.iter().map(|e| e[i]).fold(0.0, f64::max))
            .collect()
    }

    /// First time at which every `‖e_k‖` stays below `factor · ‖e_k(0)‖`
    /// for the rest of the run.
    pub fn settling_time(&self, factor: f64) -> Option<f64> {
        let mut worst: f64 = 0.0;
        for e in &self.err {
            let bound = factor * e[0];
            let last_above = e.iter().rposition(|&v| v >= bound && !(v == 0.0 && bound == 0.0));
            match last_above {
                None => {}
                Some(i) if i + 1 < e.len() => worst = worst.max(self.t[i + 1]),
                Some(_) => return None,
            }
        }
        Some(worst)
    }

    /// CSV with `t`, `x_i`, `xhat[k]_i` and `err_k`, every `stride`-th
    /// sample plus the last one.
    pub fn write_csv(&self, out: &mut impl Write, stride: usize) -> Result<()> {
        let stride = stride.max(1);
        let n = self.x.first().map_or(0, |v| v.len());
        let nodes = self.err.len();
        let mut header = String::from("t");
        for i in 1..=n {
            write!(header, ",x_{i}").unwrap();
        }
        for k in 1..=nodes {
            for i in 1..=n {
                write!(header, ",xhat{k}_{i}").unwrap();
            }
        }
        for k in 1..=nodes {
            write!(header, ",err_{k}").unwrap();
        }
        writeln!(out, "{header}")?;
        let last = self.t.len() - 1;
        for i in (0..self.t.len()).filter(|&i| i % stride == 0 || i == last) {
            let mut line = format!("{:e}", self.t[i]);
            for v in self.x[i].iter() {
                write!(line, ",{v:e}").unwrap();
            }
            for xh in &self.xhat[i] {
                for v in xh.iter() {
                    write!(line, ",{v:e}").unwrap();
                }
            }
            for e in &self.err {
                write!(line, ",{:e}", e[i]).unwrap();
            }
            writeln!(out, "{line}")?;
        }
        Ok(())
    }
}

/// gnuplot script drawing `x_1`, `x_2` and all error norms from `csv_name`.
pub fn gnuplot_script(csv_name: &str, n: usize, nodes: usize, prefix: &str) -> String {
    let err_col = |k: usize| 1 + n + nodes * n + k;
    let mut s = String::new();
    writeln!(s, "set datafile separator ','").unwrap();
    writeln!(s, "set key autotitle columnhead").unwrap();
    writeln!(s, "set terminal pngcairo size 900,500").unwrap();
    writeln!(s, "set xlabel 't'").unwrap();
    writeln!(s, "set output '{prefix}_states.png'").unwrap();
    writeln!(s, "plot '{csv_name}' using 1:2 with lines, '' using 1:3 with lines").unwrap();
    writeln!(s, "set output '{prefix}_errors.png'").unwrap();
    writeln!(s, "set logscale y").unwrap();
    let curves: Vec<String> = (1..=nodes)
        .map(|k| {
            let src = if k == 1 { format!("'{csv_name}'") } else { "''".into() };
            format!("{src} using 1:{} with lines", err_col(k))
        })
        .collect();
    writeln!(s, "plot {}", curves.join(", ")).unwrap();
    s
}

/// Decay threshold, relative to `‖e_k(0)‖`, used for settling times.
pub const SETTLING_FACTOR: f64 = 1e-3;

/// Metrics sidecar of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub name: String,
    pub disturbance: Disturbance,
    pub t_final: f64,
    pub dt: f64,
    pub samples: usize,
    pub performance: PerformanceMetrics,
    pub initial_error: Vec<f64>,
    pub final_error: Vec<f64>,
    /// Time after which every `‖e_k‖ < SETTLING_FACTOR · ‖e_k(0)‖`.
    pub settling_time: Option<f64>,
    /// Fit of `max_k ‖e_k(t)‖`; `None` when degenerate.
    pub fit: Option<ExponentialFit>,
    pub fit_error: Option<String>,
}

impl RunSummary {
    pub fn new(name: &str, sc: &SimScenario, r: &SimResult) -> Self {
        let (fit, fit_error) = match exponential_fit(&r.t, &r.max_error()) {
            Ok(f) => (Some(f), None),
            Err(e) => (None, Some(e.to_string())),
        };
        RunSummary {
            name: name.to_string(),
            disturbance: sc.disturbance.clone(),
            t_final: sc.t_final,
            dt: sc.dt,
            samples: r.t.len(),
            performance: r.metrics.clone(),
            initial_error: r.err.iter().map(|e| e[0]).collect(),
            final_error: r.err.iter().map(|e| e[e.len() - 1]).collect(),
            settling_time: r.settling_time(SETTLING_FACTOR),
            fit,
            fit_error,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExponentialFit {
    /// Slope of `log‖e‖` against `t`.
    pub rate: f64,
    pub r_squared: f64,
    /// `rate < 0` with a fit better than r² = 0.5.
    pub convergent: bool,
    pub window: (f64, f64),
}

/// Least-squares line through `log‖e(t)‖` over the last 80% of the samples
/// taken before the series first reaches [`FIT_FLOOR`].
pub fn exponential_fit(t: &[f64], e: &[f64]) -> Result<ExponentialFit> {
    if t.len() != e.len() {
        return Err(Error::Argument("time and error series differ in length".into()));
    }
    if e.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::Argument("error series must be finite and nonnegative".into()));
    }
    let end = e.iter().position(|&v| v <= FIT_FLOOR).unwrap_or(e.len());
    let start = end / 5;
    if end - start < 3 {
        return Err(Error::DegenerateFit(format!(
            "only {} samples above the floor",
            end - start
        )));
    }
    let ts = &t[start..end];
    let ys: Vec<f64> = e[start..end].iter().map(|v| v.ln()).collect();
    let m = ts.len() as f64;
    let tm = ts.iter().sum::<f64>() / m;
    let ym = ys.iter().sum::<f64>() / m;
    let stt: f64 = ts.iter().map(|t| (t - tm).powi(2)).sum();
    if stt <= 0.0 {
        return Err(Error::DegenerateFit("all samples at one time".into()));
    }
    let sty: f64 = ts.iter().zip(&ys).map(|(t, y)| (t - tm) * (y - ym)).sum();
    let rate = sty / stt;
    let syy: f64 = ys.iter().map(|y| (y - ym).powi(2)).sum();
    let sres: f64 = ts
        .iter()
        .zip(&ys)
        .map(|(t, y)| (y - ym - rate * (t - tm)).powi(2))
        .sum();
    let r_squared = if syy > 0.0 { 1.0 - sres / syy } else { 1.0 };
    let convergent = rate < 0.0 && syy > 0.0 && r_squared > 0.5;
    Ok(ExponentialFit {
        rate,
        r_squared,
        convergent,
        window: (ts[0], ts[ts.len() - 1]),
    })
}
