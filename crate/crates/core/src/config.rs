//! TOML run configuration: plant, graph, synthesis settings and simulation
//! scenarios. See `examples/six_state_ring.toml` for the layout.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::CommGraph;
use crate::linalg::{from_rows, Mat, Vector};
use crate::model::{InputSignal, Nonlinearity, PlantModel, SynthesisConfig};
use crate::sdp::SolverOptions;
use crate::sim::Disturbance;

/// The six-state ring example shipped with the crate.
pub const SIX_STATE_RING: &str = include_str!("../examples/six_state_ring.toml");

type Rows = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerNode<T> {
    All(T),
    Each(Vec<T>),
}

impl<T: Clone> PerNode<T> {
    fn expand(&self, nodes: usize, field: &str) -> Result<Vec<T>> {
        match self {
            PerNode::All(v) => Ok(vec![v.clone(); nodes]),
            PerNode::Each(v) if v.len() == nodes => Ok(v.clone()),
            PerNode::Each(v) => Err(Error::Config(format!(
                "{field}: expected {nodes} entries, got {}",
                v.len()
            ))),
        }
    }
}

/// `W_k` as a multiple of the identity, one matrix for all nodes, or one
/// matrix per node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WeightSpec {
    Scale(f64),
    Matrix(Rows),
    PerNode(Vec<Rows>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    pub a: Rows,
    #[serde(default)]
    pub b_phi: Option<Rows>,
    #[serde(default)]
    pub h: Option<Rows>,
    #[serde(default)]
    pub b_theta: Option<Rows>,
    #[serde(default)]
    pub h_tilde: Option<Rows>,
    pub b_w: Rows,
    pub c: Vec<Rows>,
    #[serde(default = "one")]
    pub tau: f64,
    #[serde(default = "zero_nl")]
    pub phi: Nonlinearity,
    #[serde(default = "zero_nl")]
    pub theta: Nonlinearity,
    #[serde(default)]
    pub g_u: InputSignal,
}

fn one() -> f64 {
    1.0
}

fn zero_nl() -> Nonlinearity {
    Nonlinearity::Zero
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthesisSection {
    pub gamma: f64,
    #[serde(default)]
    pub pi: Option<PerNode<f64>>,
    #[serde(default)]
    pub lambda: Option<PerNode<f64>>,
    #[serde(default)]
    pub w: Option<WeightSpec>,
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub epsilon: Option<f64>,
    #[serde(default)]
    pub minimize_gamma: bool,
    /// `0` disables the bound.
    #[serde(default)]
    pub linearization_bound: Option<f64>,
    /// `0` disables the bound.
    #[serde(default)]
    pub gain_bound: Option<f64>,
    #[serde(default)]
    pub step1_gap_tol: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    pub name: String,
    pub disturbance: Disturbance,
    #[serde(default)]
    pub t_final: Option<f64>,
    #[serde(default)]
    pub dt: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    #[serde(default = "default_t_final")]
    pub t_final: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    #[serde(default)]
    pub xhat0: Option<PerNode<Vec<f64>>>,
    #[serde(default = "default_stride")]
    pub csv_stride: usize,
    #[serde(default = "default_scenarios")]
    pub scenarios: Vec<ScenarioSection>,
}

fn default_t_final() -> f64 {
    20.0
}

fn default_dt() -> f64 {
    1e-3
}

fn default_stride() -> usize {
    10
}

fn default_scenarios() -> Vec<ScenarioSection> {
    vec![
        ScenarioSection {
            name: "nominal-decay".into(),
            disturbance: Disturbance::Zero,
            t_final: None,
            dt: None,
        },
        ScenarioSection {
            name: "disturbed".into(),
            disturbance: Disturbance::SeededNoise {
                amp: 1.0,
                bandwidth: 5.0,
                seed: 42,
            },
            t_final: None,
            dt: None,
        },
    ]
}

impl Default for SimulationSection {
    fn default() -> Self {
        SimulationSection {
            t_final: default_t_final(),
            dt: default_dt(),
            x0: None,
            xhat0: None,
            csv_stride: default_stride(),
            scenarios: default_scenarios(),
        }
    }
}

/// Sampling of the nonlinearity checks. `sample_box` holds one `[lo, hi]`
/// interval for every component, or one interval per component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidationSection {
    #[serde(default = "default_sample_box")]
    pub sample_box: Vec<[f64; 2]>,
    #[serde(default = "default_samples")]
    pub samples: usize,
}

fn default_sample_box() -> Vec<[f64; 2]> {
    vec![[-10.0, 10.0]]
}

fn default_samples() -> usize {
    10_000
}

impl Default for ValidationSection {
    fn default() -> Self {
        ValidationSection {
            sample_box: default_sample_box(),
            samples: default_samples(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub system: SystemSection,
    pub graph: CommGraph,
    pub synthesis: SynthesisSection,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default)]
    pub simulation: SimulationSection,
    #[serde(default)]
    pub validation: ValidationSection,
}

/// Initial conditions and timing of one named scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub name: String,
    pub disturbance: Disturbance,
    pub x0: Vector,
    pub xhat0: Vec<Vector>,
    pub t_final: f64,
    pub dt: f64,
}

/// A validated configuration.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub model: PlantModel,
    pub graph: CommGraph,
    pub synthesis: SynthesisConfig,
    pub scenarios: Vec<ScenarioSpec>,
    pub csv_stride: usize,
    pub sample_box: Vec<(f64, f64)>,
    pub samples: usize,
}

fn matrix(rows: &Rows, field: &str) -> Result<Mat> {
    if let Some(first) = rows.first() {
        if rows.iter().any(|r| r.len() != first.len()) {
            return Err(Error::Config(format!("{field}: rows have different lengths")));
        }
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Config(format!("{field}: entries must be finite")));
    }
    Ok(from_rows(rows))
}

fn opt_matrix(rows: &Option<Rows>, field: &str, empty: (usize, usize)) -> Result<Mat> {
    match rows {
        Some(r) if !r.is_empty() => matrix(r, field),
        _ => Ok(Mat::zeros(empty.0, empty.1)),
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn six_state_ring() -> Self {
        Self::parse(SIX_STATE_RING).expect("embedded example config is valid")
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn model(&self) -> Result<PlantModel> {
        let s = &self.system;
        let a = matrix(&s.a, "system.a")?;
        let n = a.nrows();
        let c = s
            .c
            .iter()
            .enumerate()
            .map(|(k, rows)| matrix(rows, &format!("system.c[{}]", k + 1)))
            .collect::<Result<Vec<_>>>()?;
        let b_phi = opt_matrix(&s.b_phi, "system.b_phi", (n, 0))?;
        let h = opt_matrix(&s.h, "system.h", (b_phi.ncols(), n))?;
        let b_theta = opt_matrix(&s.b_theta, "system.b_theta", (n, 0))?;
        let h_tilde = opt_matrix(&s.h_tilde, "system.h_tilde", (b_theta.ncols(), n))?;
        let model = PlantModel {
            a,
            b_phi,
            h,
            b_theta,
            h_tilde,
            b_w: matrix(&s.b_w, "system.b_w")?,
            c,
            tau: s.tau,
            phi: s.phi.clone(),
            theta: s.theta.clone(),
            g_u: s.g_u.clone(),
        };
        model
            .validate()
            .map_err(|e| Error::Config(format!("system: {e}")))?;
        Ok(model)
    }

    pub fn synthesis_config(&self, model: &PlantModel) -> Result<SynthesisConfig> {
        let s = &self.synthesis;
        let nodes = model.node_count();
        let n = model.n();
        let mut cfg = SynthesisConfig::new(model, s.gamma);
        if let Some(pi) = &s.pi {
            cfg.pi = pi.expand(nodes, "synthesis.pi")?;
        }
        if let Some(l) = &s.lambda {
            cfg.lambda = l.expand(nodes, "synthesis.lambda")?;
        }
        if let Some(w) = &s.w {
            cfg.w = match w {
                WeightSpec::Scale(v) => vec![Mat::identity(n, n) * *v; nodes],
                WeightSpec::Matrix(m) => vec![matrix(m, "synthesis.w")?; nodes],
                WeightSpec::PerNode(ms) => {
                    if ms.len() != nodes {
                        return Err(Error::Config(format!(
                            "synthesis.w: expected {nodes} matrices, got {}",
                            ms.len()
                        )));
                    }
                    ms.iter()
                        .enumerate()
                        .map(|(k, m)| matrix(m, &format!("synthesis.w[{}]", k + 1)))
                        .collect::<Result<_>>()?
                }
            };
            cfg.w_defaulted = false;
        }
        if let Some(v) = s.alpha {
            cfg.alpha = v;
        }
        if let Some(v) = s.epsilon {
            cfg.epsilon = v;
        }
        cfg.minimize_gamma = s.minimize_gamma;
        let bound = |v: Option<f64>, default: Option<f64>| match v {
            Some(0.0) => None,
            Some(b) => Some(b),
            None => default,
        };
        cfg.linearization_bound = bound(s.linearization_bound, cfg.linearization_bound);
        cfg.gain_bound = bound(s.gain_bound, cfg.gain_bound);
        if let Some(v) = s.step1_gap_tol {
            cfg.step1_gap_tol = v;
        }
        cfg.solver = self.solver.clone();
        cfg.validate(model)
            .map_err(|e| Error::Config(format!("synthesis: {e}")))?;
        Ok(cfg)
    }

    pub fn scenarios(&self, model: &PlantModel) -> Result<Vec<ScenarioSpec>> {
        let sim = &self.simulation;
        let n = model.n();
        let nodes = model.node_count();
        let x0 = match &sim.x0 {
            Some(v) if v.len() == n => Vector::from_column_slice(v),
            Some(v) => {
                return Err(Error::Config(format!(
                    "simulation.x0: expected {n} entries, got {}",
                    v.len()
                )))
            }
            None => Vector::from_element(n, 1.0),
        };
        let xhat0 = match &sim.xhat0 {
            Some(spec) => spec
                .expand(nodes, "simulation.xhat0")?
                .into_iter()
                .map(|v| {
                    if v.len() == n {
                        Ok(Vector::from_vec(v))
                    } else {
                        Err(Error::Config(format!("simulation.xhat0: entries must have length {n}")))
                    }
                })
                .collect::<Result<Vec<_>>>()?,
            None => vec![Vector::zeros(n); nodes],
        };
        let mut names = std::collections::BTreeSet::new();
        sim.scenarios
            .iter()
            .map(|s| {
                if !names.insert(s.name.as_str()) {
                    return Err(Error::Config(format!("simulation.scenarios: duplicate name {}", s.name)));
                }
                Ok(ScenarioSpec {
                    name: s.name.clone(),
                    disturbance: s.disturbance.clone(),
                    x0: x0.clone(),
                    xhat0: xhat0.clone(),
                    t_final: s.t_final.unwrap_or(sim.t_final),
                    dt: s.dt.unwrap_or(sim.dt),
                })
            })
            .collect()
    }

    /// Builds and validates every derived object.
    pub fn load(&self) -> Result<Loaded> {
        let model = self.model()?;
        if self.graph.node_count() != model.node_count() {
            return Err(Error::Config(format!(
                "graph.nodes = {} but system.c has {} entries",
                self.graph.node_count(),
                model.node_count()
            )));
        }
        let synthesis = self.synthesis_config(&model)?;
        let scenarios = self.scenarios(&model)?;
        let v = &self.validation;
        if v.sample_box.is_empty() || v.sample_box.iter().any(|&[lo, hi]| !(lo.is_finite() && hi.is_finite() && lo < hi)) {
            return Err(Error::Config("validation.sample_box: need finite intervals with lo < hi".into()));
        }
        if v.samples < 2 {
            return Err(Error::Config("validation.samples must be at least 2".into()));
        }
        Ok(Loaded {
            model,
            graph: self.graph.clone(),
            synthesis,
            scenarios,
            csv_stride: self.simulation.csv_stride.max(1),
            sample_box: v.sample_box.iter().map(|&[lo, hi]| (lo, hi)).collect(),
            samples: v.samples,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embedded_example_matches_builtin_model() {
        let loaded = RunConfig::six_state_ring().load().unwrap();
        let builtin = PlantModel::six_state_oscillator();
        assert_eq!(loaded.model.a, builtin.a);
        assert_eq!(loaded.model.b_phi, builtin.b_phi);
        assert_eq!(loaded.model.h, builtin.h);
        assert_eq!(loaded.model.b_w, builtin.b_w);
        assert_eq!(loaded.model.c, builtin.c);
        assert_eq!(loaded.model.phi, builtin.phi);
        assert_eq!(loaded.graph, CommGraph::ring(6).unwrap());
        assert_eq!(loaded.synthesis.pi, vec![0.1; 6]);
        assert_eq!(loaded.synthesis.lambda, vec![1.0; 6]);
        assert_eq!(loaded.synthesis.gamma, 4.0);
        assert_eq!(loaded.synthesis.w[0], Mat::identity(6, 6) * 0.01);
        assert!(!loaded.synthesis.w_defaulted);
        assert_eq!(loaded.scenarios.len(), 2);
        assert_eq!(loaded.scenarios[0].x0, Vector::from_element(6, 1.0));
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = RunConfig::six_state_ring();
        let again = RunConfig::parse(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn reports_field_and_line() {
        let bad = SIX_STATE_RING.replace("gamma = 4.0", "gamma = \"four\"");
        let err = RunConfig::parse(&bad).unwrap_err().to_string();
        assert!(err.contains("gamma") && err.contains("line"), "{err}");
        let bad = SIX_STATE_RING.replace("pi = 0.1", "pi = [0.1, 0.1]");
        let err = RunConfig::parse(&bad).unwrap().load().unwrap_err().to_string();
        assert!(err.contains("synthesis.pi"), "{err}");
    }

    #[test]
    fn omitted_weights_default_to_identity() {
        let text = SIX_STATE_RING.replace("w = 0.01\n", "");
        let loaded = RunConfig::parse(&text).unwrap().load().unwrap();
        assert!(loaded.synthesis.w_defaulted);
        assert_eq!(loaded.synthesis.w[3], Mat::identity(6, 6));
    }

    #[test]
    fn validation_box_is_configurable() {
        let loaded = RunConfig::six_state_ring().load().unwrap();
        assert_eq!((loaded.sample_box.clone(), loaded.samples), (vec![(-5.0, 5.0)], 10_000));
        let text = SIX_STATE_RING.replace("sample_box = [[-5.0, 5.0]]", "sample_box = [[-1.0, 1.0]]\nsamples = 50");
        let loaded = RunConfig::parse(&text).unwrap().load().unwrap();
        assert_eq!((loaded.sample_box, loaded.samples), (vec![(-1.0, 1.0)], 50));
        let bad = text.replace("[[-1.0, 1.0]]", "[[1.0, -1.0]]");
        assert!(matches!(RunConfig::parse(&bad).unwrap().load(), Err(Error::Config(_))));
    }

    #[test]
    fn zero_disables_a_bound() {
        let text = SIX_STATE_RING.replace("gain_bound = 100.0", "gain_bound = 0.0");
        let loaded = RunConfig::parse(&text).unwrap().load().unwrap();
        assert_eq!(loaded.synthesis.gain_bound, None);
    }
}
