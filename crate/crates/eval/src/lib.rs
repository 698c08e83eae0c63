//! Metrics, fixture games and experiment drivers for learned equilibrium
//! solvers: solver and (C)CE gaps, reference sets solved by the oracle,
//! polytope approximation, zero-shot generalization and fixture
//! verification.

pub mod brute;
pub mod commands;
pub mod error;
pub mod fixtures;
pub mod generalization;
pub mod lp;
pub mod polytope;
pub mod reference;
pub mod report;
pub mod vertices;
pub mod zero_sum;

pub use error::{EvalError, Result};
pub use fixtures::{all_fixtures, verify_fixture, FixtureGame, FixtureReport};
pub use generalization::{generalization_run, warm_start_comparison, GeneralizationRow, WarmStartOutcome};
pub use polytope::{plot_data, polytope_approximation, PlotData, PolytopeApproximation, PolytopeMode, PolytopeOptions};
pub use reference::{network_metrics, GameMetrics, ReferenceSet};
pub use zero_sum::{solve_zero_sum_cce, zero_sum_marginal_check};

/// Per-game gap report.
pub use gaps::{gap_report, GapReport};

mod gaps {
    use serde::{Deserialize, Serialize};

    use nes_core::metrics::{equilibrium_gap_components, solver_gap};
    use nes_core::{Concept, JointDistribution, NormalFormGame};

    use crate::error::Result;

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct GapReport {
        /// Half L1 distance to the reference joint, in `[0, 1]`.
        pub solver_gap: f64,
        /// Sum of the per-player components.
        pub gap: f64,
        pub components: Vec<f64>,
    }

    pub fn gap_report(
        game: &NormalFormGame,
        reference: &JointDistribution,
        sigma: &JointDistribution,
        epsilon: &[f64],
        concept: Concept,
    ) -> Result<GapReport> {
        let components = equilibrium_gap_components(game, sigma, epsilon, concept)?;
        Ok(GapReport {
            solver_gap: solver_gap(reference, sigma)?,
            gap: components.iter().sum(),
            components,
        })
    }
}
