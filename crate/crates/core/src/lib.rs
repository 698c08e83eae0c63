//! Normal-form games, equilibrium selection targets, the dual objective of
//! the target-approximate maximum-welfare minimum-relative-entropy
//! (C)CE problem, and an exact per-game dual solver.

pub mod dual;
pub mod error;
pub mod game;
pub mod io;
pub mod metrics;
pub mod oracle;
pub mod targets;

#[cfg(test)]
mod test_games;

pub use dual::{DualEvaluation, DualProblem, DualVariables, EquilibriumSolution};
pub use error::{CoreError, Result};
pub use oracle::{solve, SolveConfig, SolveReport};
pub use game::{GameShape, JointDistribution, NormOrder, NormalFormGame};
pub use targets::{Concept, ParamName, Parameterization, SelectionTargets, TargetOptions};
