//! JSON report files for synthesis and verification results.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::linalg::{from_rows, to_rows, Mat};
use crate::model::EstimatorGains;
use crate::synthesis::{LyapunovCertificate, SolveSummary};

pub const SYNTHESIS_REPORT_FORMAT: &str = "dkyp-synthesis-report/1";

type Rows = Vec<Vec<f64>>;

/// Matrix attached to a directed pair `from → to`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeMatrix {
    pub from: usize,
    pub to: usize,
    pub value: Rows,
}

fn edge_list(m: &BTreeMap<(usize, usize), Mat>) -> Vec<EdgeMatrix> {
    m.iter()
        .map(|(&(from, to), v)| EdgeMatrix {
            from,
            to,
            value: to_rows(v),
        })
        .collect()
}

fn edge_map(list: &[EdgeMatrix]) -> Result<BTreeMap<(usize, usize), Mat>> {
    let mut out = BTreeMap::new();
    for e in list {
        if out.insert((e.from, e.to), matrix(&e.value)?).is_some() {
            return Err(Error::Argument(format!("duplicate block ({}, {})", e.from, e.to)));
        }
    }
    Ok(out)
}

fn matrix(rows: &Rows) -> Result<Mat> {
    if let Some(first) = rows.first() {
        if rows.iter().any(|r| r.len() != first.len()) {
            return Err(Error::Argument("ragged matrix in report".into()));
        }
    }
    Ok(from_rows(rows))
}

/// Row-major gains. Empty row lists stand for matrices without rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainsRecord {
    pub l: Vec<Rows>,
    pub l_tilde: Vec<Rows>,
    pub k: Vec<EdgeMatrix>,
    pub k_tilde: Vec<EdgeMatrix>,
}

impl GainsRecord {
    pub fn from_gains(g: &EstimatorGains) -> Self {
        GainsRecord {
            l: g.l.iter().map(to_rows).collect(),
            l_tilde: g.l_tilde.iter().map(to_rows).collect(),
            k: edge_list(&g.k),
            k_tilde: edge_list(&g.k_tilde),
        }
    }

    /// Rebuilds the gains; matrices without rows get their column count
    /// from the node's measurement dimension `q[k]` or the state dimension.
    pub fn to_gains(&self, n: usize, q: &[usize]) -> Result<EstimatorGains> {
        let sized = |rows: &Rows, cols: usize| -> Result<Mat> {
            if rows.is_empty() {
                Ok(Mat::zeros(0, cols))
            } else {
                matrix(rows)
            }
        };
        if self.l_tilde.len() != q.len() {
            return Err(Error::Dimension(format!(
                "report has {} output gains for {} nodes",
                self.l_tilde.len(),
                q.len()
            )));
        }
        let mut k_tilde = BTreeMap::new();
        for e in &self.k_tilde {
            k_tilde.insert((e.from, e.to), sized(&e.value, n)?);
        }
        Ok(EstimatorGains {
            l: self.l.iter().map(matrix).collect::<Result<_>>()?,
            l_tilde: self
                .l_tilde
                .iter()
                .zip(q)
                .map(|(m, &qk)| sized(m, qk))
                .collect::<Result<_>>()?,
            k: edge_map(&self.k)?,
            k_tilde,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateRecord {
    pub p: Vec<Rows>,
    /// One block per undirected edge, `from < to`.
    pub p_off: Vec<EdgeMatrix>,
    pub epsilon: f64,
    pub pi: Vec<f64>,
}

impl CertificateRecord {
    pub fn from_certificate(c: &LyapunovCertificate) -> Self {
        CertificateRecord {
            p: c.p.iter().map(to_rows).collect(),
            p_off: edge_list(&c.p_off),
            epsilon: c.epsilon,
            pi: c.pi.clone(),
        }
    }

    pub fn to_certificate(&self) -> Result<LyapunovCertificate> {
        Ok(LyapunovCertificate {
            p: self.p.iter().map(matrix).collect::<Result<_>>()?,
            p_off: edge_map(&self.p_off)?,
            epsilon: self.epsilon,
            pi: self.pi.clone(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Intuitive,
    TwoStep,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Intuitive => "intuitive",
            Method::TwoStep => "two-step",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Outcome {
    Feasible,
    Infeasible,
    NumericalFailure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub stage: String,
    pub summary: SolveSummary,
}

/// Everything a synthesis run produced, together with the configuration
/// that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisReport {
    pub format: String,
    pub method: Method,
    pub outcome: Outcome,
    pub message: String,
    /// True when `W_k = I` was assumed because the config gave no weights.
    pub w_defaulted: bool,
    pub gamma: f64,
    pub gamma_achieved: Option<f64>,
    pub gains: Option<GainsRecord>,
    pub certificate: Option<CertificateRecord>,
    pub runs: Vec<RunRecord>,
    pub warnings: Vec<String>,
    pub elapsed_seconds: f64,
    pub config: RunConfig,
}

impl SynthesisReport {
    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let rep: SynthesisReport = serde_json::from_str(&text)?;
        if rep.format != SYNTHESIS_REPORT_FORMAT {
            return Err(Error::Argument(format!("unknown report format {:?}", rep.format)));
        }
        Ok(rep)
    }

    pub fn gains(&self, n: usize, q: &[usize]) -> Result<EstimatorGains> {
        self.gains
            .as_ref()
            .ok_or_else(|| Error::Argument("report contains no gains".into()))?
            .to_gains(n, q)
    }

    pub fn certificate(&self) -> Result<LyapunovCertificate> {
        self.certificate
            .as_ref()
            .ok_or_else(|| Error::Argument("report contains no certificate".into()))?
            .to_certificate()
    }
}
