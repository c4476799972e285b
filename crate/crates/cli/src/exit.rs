use dkyp_core::sdp::SolveStatus;
use dkyp_core::Error;

pub const SUCCESS: u8 = 0;
/// Bad arguments, unreadable or malformed files.
pub const USAGE: u8 = 1;
/// Infeasible problem, failed check or diverged simulation.
pub const NEGATIVE: u8 = 2;
/// The solver could not decide.
pub const NUMERICAL: u8 = 3;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError {
            code: USAGE,
            message: message.into(),
        }
    }
}

pub fn code_for(e: &Error) -> u8 {
    match e {
        Error::Synthesis { status, .. } => match status {
            SolveStatus::Infeasible => NEGATIVE,
            _ => NUMERICAL,
        },
        Error::Divergence { .. } | Error::Precondition(_) => NEGATIVE,
        Error::Conditioning(_) | Error::Evaluation(_) | Error::DegenerateFit(_) => NUMERICAL,
        Error::Argument(_) | Error::Dimension(_) | Error::Config(_) | Error::Io(_) | Error::Json(_) => USAGE,
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError {
            code: code_for(&e),
            message: e.to_string(),
        }
    }
}

pub type CliResult = Result<u8, CliError>;
