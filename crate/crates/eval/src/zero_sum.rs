//! Marginals of coarse correlated equilibria of two-player zero-sum games.

use nes_core::game::exploitability_of_marginals;
use nes_core::{solve, Concept, JointDistribution, NormOrder, NormalFormGame, SelectionTargets, SolveConfig};

use crate::error::{EvalError, Result};

/// Payoff-sum tolerance of the zero-sum test.
pub const ZERO_SUM_TOL: f64 = 1e-9;

/// Rho of the near-exact (epsilon ~ 0) maximum-entropy CCE solve.
pub const ZERO_SUM_RHO: f64 = 1e7;

/// Exploitability of the product of `solution`'s marginals.
pub fn zero_sum_marginal_check(game: &NormalFormGame, solution: &JointDistribution) -> Result<f64> {
    if game.num_players() != 2 || !game.is_zero_sum(ZERO_SUM_TOL) {
        return Err(EvalError::NotZeroSum);
    }
    if solution.shape() != game.shape() {
        return Err(EvalError::InvalidInput("solution shape differs from the game".into()));
    }
    Ok(exploitability_of_marginals(game, solution))
}

/// The solver budget of [`solve_zero_sum_cce`]: near-exact solves need
/// more iterations than the default.
pub fn zero_sum_solve_config() -> SolveConfig {
    SolveConfig {
        max_iters: 500_000,
        ..SolveConfig::default()
    }
}

/// Maximum-entropy CCE with target epsilon 0 and a large `rho`, so that the
/// recovered epsilon is close to 0.
pub fn solve_zero_sum_cce(game: &NormalFormGame, rho: f64, config: &SolveConfig) -> Result<JointDistribution> {
    if game.num_players() != 2 || !game.is_zero_sum(ZERO_SUM_TOL) {
        return Err(EvalError::NotZeroSum);
    }
    let targets = SelectionTargets::max_entropy(game.shape(), NormOrder::L2, rho);
    Ok(solve(game, &targets, Concept::Cce, config)?.ok()?.solution.sigma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{matching_pennies_game, prisoners_dilemma_game};

    #[test]
    fn matching_pennies_marginals_are_nash() {
        let g = matching_pennies_game();
        let sigma = solve_zero_sum_cce(&g, ZERO_SUM_RHO, &zero_sum_solve_config()).unwrap();
        assert!(zero_sum_marginal_check(&g, &sigma).unwrap() <= 1e-3);
    }

    #[test]
    fn general_sum_games_are_rejected() {
        let g = prisoners_dilemma_game();
        let u = JointDistribution::uniform(g.shape());
        assert!(matches!(zero_sum_marginal_check(&g, &u), Err(EvalError::NotZeroSum)));
        assert!(matches!(solve_zero_sum_cce(&g, 100.0, &SolveConfig::default()), Err(EvalError::NotZeroSum)));
    }
}
