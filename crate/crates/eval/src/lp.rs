//! Linear programs over the (C)CE polytope of a game.

use microlp::{ComparisonOp, LinearExpr, OptimizationDirection, Problem};

use nes_core::game::{cce_deviation_gains, ce_deviation_gains};
use nes_core::{Concept, GameShape, JointDistribution, NormalFormGame};

use crate::error::{EvalError, Result};

/// The linear constraints `sum_a sigma(a) A_p[k][a] <= eps_p` of a game, one
/// row per (player, dual entry). CE rows with equal deviation and
/// recommendation are identically zero and omitted.
#[derive(Debug, Clone, PartialEq)]
pub struct PolytopeConstraints {
    pub shape: GameShape,
    /// `(player, row)` pairs.
    pub rows: Vec<(usize, Vec<f64>)>,
}

impl PolytopeConstraints {
    pub fn new(game: &NormalFormGame, concept: Concept) -> Self {
        let shape = game.shape().clone();
        let j = shape.joint_size();
        let mut rows = Vec::new();
        match concept {
            Concept::Cce => {
                let gains = cce_deviation_gains(game);
                for p in 0..shape.num_players() {
                    for row in gains.player(p).chunks_exact(j) {
                        rows.push((p, row.to_vec()));
                    }
                }
            }
            Concept::Ce => {
                let gains = ce_deviation_gains(game);
                for p in 0..shape.num_players() {
                    let n = shape.num_strategies(p);
                    for (k, row) in gains.player(p).chunks_exact(j).enumerate() {
                        if k / n != k % n {
                            rows.push((p, row.to_vec()));
                        }
                    }
                }
            }
        }
        Self { shape, rows }
    }

    /// Largest violation `max_k (A_k . sigma - eps_p)`, clipped below at 0.
    pub fn max_violation(&self, sigma: &[f64], epsilon: &[f64]) -> f64 {
        self.rows
            .iter()
            .map(|(p, row)| row.iter().zip(sigma).map(|(a, s)| a * s).sum::<f64>() - epsilon[*p])
            .fold(0.0, f64::max)
    }
}

/// Extra linear conditions on the joint.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct JointRestrictions {
    /// Joint indices forced to zero mass; `None` allows every joint.
    pub support: Option<Vec<usize>>,
    /// `(joint index, lower bound)` pairs.
    pub lower_bounds: Vec<(usize, f64)>,
}

/// Maximizes `objective . sigma` over the epsilon-(C)CE polytope.
///
/// Returns `Ok(None)` when the restricted polytope is empty.
pub fn maximize_over_polytope(
    game: &NormalFormGame,
    concept: Concept,
    epsilon: &[f64],
    objective: &[f64],
    restrictions: &JointRestrictions,
) -> Result<Option<(JointDistribution, f64)>> {
    let shape = game.shape();
    let j = shape.joint_size();
    if objective.len() != j || epsilon.len() != shape.num_players() {
        return Err(EvalError::InvalidInput("objective or epsilon length".into()));
    }
    let constraints = PolytopeConstraints::new(game, concept);
    let mut lp = Problem::new(OptimizationDirection::Maximize);
    let allowed: Vec<bool> = match &restrictions.support {
        Some(s) => (0..j).map(|a| s.contains(&a)).collect(),
        None => vec![true; j],
    };
    let vars: Vec<_> = (0..j)
        .map(|a| {
            let upper = if allowed[a] { 1.0 } else { 0.0 };
            lp.add_var(objective[a], (0.0, upper))
        })
        .collect();
    let mut total = LinearExpr::empty();
    for &v in &vars {
        total.add(v, 1.0);
    }
    lp.add_constraint(total, ComparisonOp::Eq, 1.0);
    for (p, row) in &constraints.rows {
        let mut expr = LinearExpr::empty();
        for (&v, &a) in vars.iter().zip(row) {
            if a != 0.0 {
                expr.add(v, a);
            }
        }
        lp.add_constraint(expr, ComparisonOp::Le, epsilon[*p]);
    }
    for &(a, lb) in &restrictions.lower_bounds {
        let mut expr = LinearExpr::empty();
        expr.add(vars[a], 1.0);
        lp.add_constraint(expr, ComparisonOp::Ge, lb);
    }
    match lp.solve() {
        Ok(sol) => {
            let probs: Vec<f64> = vars.iter().map(|&v| sol.var_value(v).max(0.0)).collect();
            let sigma = JointDistribution::from_weights(shape.clone(), probs)?;
            Ok(Some((sigma, sol.objective())))
        }
        Err(microlp::Error::Infeasible) => Ok(None),
        Err(e) => Err(EvalError::Lp(e.to_string())),
    }
}
