//! Small dense semidefinite programs: problem assembly and an embedded
//! barrier solver.

mod problem;
mod solver;

pub use problem::{
    AffineExpr, EqConstraint, LmiConstraint, Margin, SdpProblem, VarId, VarShape, Variable,
    STRICT_MARGIN_SCALE,
};
pub use solver::{
    solve, verify_witness, ConstraintResidual, InfeasibilityWitness, SdpSolution, SolveStats,
    SolveStatus, SolverOptions, WitnessCheck, ENV_PREFIX,
};
