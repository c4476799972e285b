use thiserror::Error;

/// Which stage of the two-step synthesis gave up.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthesisStage {
    /// The linearized coupled problem has no solution.
    LyapunovStructure,
    /// The gain search with frozen Lyapunov blocks has no solution.
    FrozenGainSearch,
    /// The single-stage (block-diagonal Lyapunov) design has no solution.
    Intuitive,
}

impl SynthesisStage {
    pub fn code(&self) -> &'static str {
        match self {
            SynthesisStage::LyapunovStructure => "no Lyapunov structure found",
            SynthesisStage::FrozenGainSearch => "frozen-P gain search failed",
            SynthesisStage::Intuitive => "block-diagonal design infeasible",
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("evaluation produced a non-finite value: {0}")]
    Evaluation(String),

    #[error("ill-conditioned matrix: {0}")]
    Conditioning(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    /// The solver ran, but the problem was infeasible or marginal.
    #[error("synthesis failed ({}): {message}", stage.code())]
    Synthesis {
        stage: SynthesisStage,
        status: crate::sdp::SolveStatus,
        message: String,
        /// Solver summaries of the stages that ran, in order.
        runs: Vec<(String, crate::synthesis::SolveSummary)>,
    },

    #[error("integration diverged at t = {time}")]
    Divergence { time: f64 },

    #[error("degenerate exponential fit: {0}")]
    DegenerateFit(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
