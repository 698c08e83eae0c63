//! Brute-force reference solutions, independent of the dual solver.
//!
//! The selection problem is written directly in primal form. For fixed
//! `sigma` the best slack of player `p` is `max(eps_hat_p, g_p(sigma))`,
//! where `g_p` is the largest expected deviation gain, so the objective is
//!
//! ```text
//! F(sigma) = sum_a sigma ln(sigma / sigma_hat) - mu sigma . W + sum_p f_p(max(eps_hat_p, g_p))
//! f_p(e)   = rho * (d (u ln u - u) + eps_cap),  u = (eps_cap - e) / d,  d = eps_cap - eps_hat
//! ```
//!
//! with `f_p = rho * eps_hat` below `eps_hat` and `+inf` from `eps_cap` on.
//! `f_p` is the convex conjugate of the epsilon term of the dual.

use nes_core::game::{cce_deviation_gains, ce_deviation_gains};
use nes_core::{Concept, GameShape, JointDistribution, NormalFormGame, SelectionTargets};

use crate::error::{EvalError, Result};

/// Per-player constraint rows, flattened `[k][a]`; CE drops the diagonal.
fn constraint_rows(game: &NormalFormGame, concept: Concept) -> Vec<Vec<Vec<f64>>> {
    let shape = game.shape();
    let j = shape.joint_size();
    match concept {
        Concept::Cce => {
            let g = cce_deviation_gains(game);
            (0..shape.num_players())
                .map(|p| g.player(p).chunks_exact(j).map(<[f64]>::to_vec).collect())
                .collect()
        }
        Concept::Ce => {
            let g = ce_deviation_gains(game);
            (0..shape.num_players())
                .map(|p| {
                    let n = shape.num_strategies(p);
                    g.player(p)
                        .chunks_exact(j)
                        .enumerate()
                        .filter(|(k, _)| k / n != k % n)
                        .map(|(_, r)| r.to_vec())
                        .collect()
                })
                .collect()
        }
    }
}

/// The slack penalty `f_p(e)`.
pub fn slack_penalty(e: f64, eps_hat: f64, eps_cap: f64, rho: f64) -> f64 {
    if e <= eps_hat {
        return rho * eps_hat;
    }
    if e >= eps_cap {
        return f64::INFINITY;
    }
    let d = eps_cap - eps_hat;
    let u = (eps_cap - e) / d;
    rho * (d * (u * u.ln() - u) + eps_cap)
}

/// Evaluates the primal objective on many joints of one game.
pub struct PrimalObjective {
    rows: Vec<Vec<Vec<f64>>>,
    log_sigma_hat: Vec<f64>,
    mu_w: Vec<f64>,
    eps_hat: Vec<f64>,
    eps_cap: Vec<f64>,
    rho: f64,
}

impl PrimalObjective {
    pub fn new(game: &NormalFormGame, targets: &SelectionTargets, concept: Concept) -> Result<Self> {
        targets.validate(game.shape())?;
        Ok(Self {
            rows: constraint_rows(game, concept),
            log_sigma_hat: targets.target_joint.probs().iter().map(|s| s.ln()).collect(),
            mu_w: targets.welfare.iter().map(|w| targets.mu * w).collect(),
            eps_hat: targets.target_epsilon.clone(),
            eps_cap: targets.epsilon_cap.clone(),
            rho: targets.rho,
        })
    }

    /// The optimal slack of every player at `sigma`.
    pub fn slacks(&self, sigma: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .zip(&self.eps_hat)
            .map(|(rows, &eh)| {
                rows.iter()
                    .map(|r| r.iter().zip(sigma).map(|(a, s)| a * s).sum::<f64>())
                    .fold(eh, f64::max)
            })
            .collect()
    }

    pub fn value(&self, sigma: &[f64]) -> f64 {
        let mut f = 0.0;
        for ((&s, &lh), &mw) in sigma.iter().zip(&self.log_sigma_hat).zip(&self.mu_w) {
            if s > 0.0 {
                f += s * (s.ln() - lh);
            }
            f -= mw * s;
        }
        for (p, e) in self.slacks(sigma).into_iter().enumerate() {
            f += slack_penalty(e, self.eps_hat[p], self.eps_cap[p], self.rho);
        }
        f
    }
}

/// Minimizes the primal objective over the simplex grid
/// `{k / resolution : sum k = resolution}`.
///
/// Returns the best grid joint and its objective value.
pub fn grid_search(
    game: &NormalFormGame,
    targets: &SelectionTargets,
    concept: Concept,
    resolution: usize,
) -> Result<(JointDistribution, f64)> {
    let shape: &GameShape = game.shape();
    let d = shape.joint_size();
    let points = binomial_f64(resolution + d - 1, d - 1);
    if points > 5e8 {
        return Err(EvalError::InvalidInput(format!("{points:e} grid points")));
    }
    let objective = PrimalObjective::new(game, targets, concept)?;
    let step = 1.0 / resolution as f64;
    let mut counts = vec![0usize; d];
    counts[d - 1] = resolution;
    let mut sigma = vec![0.0; d];
    let mut best = (f64::INFINITY, vec![0.0; d]);
    loop {
        for (s, &c) in sigma.iter_mut().zip(&counts) {
            *s = c as f64 * step;
        }
        let v = objective.value(&sigma);
        if v < best.0 {
            best = (v, sigma.clone());
        }
        if !next_composition(&mut counts) {
            break;
        }
    }
    if !best.0.is_finite() {
        return Err(EvalError::InvalidInput("no grid point has finite objective".into()));
    }
    Ok((JointDistribution::from_weights(shape.clone(), best.1)?, best.0))
}

fn binomial_f64(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Steps through all compositions of a fixed total into `counts.len()`
/// nonnegative parts. Starts from `[0, ..., 0, total]`.
fn next_composition(counts: &mut [usize]) -> bool {
    let d = counts.len();
    // Find the last nonzero entry before the end that can take one unit
    // from the tail.
    let tail = counts[d - 1];
    if tail > 0 {
        counts[d - 1] -= 1;
        counts[d - 2] += 1;
        return true;
    }
    // Move the rightmost nonzero (excluding the last) entry's mass: increment
    // the entry before it and put the rest at the end.
    let mut i = d - 2;
    loop {
        if counts[i] > 0 {
            if i == 0 {
                return false;
            }
            let moved = counts[i];
            counts[i] = 0;
            counts[i - 1] += 1;
            counts[d - 1] = moved - 1;
            return true;
        }
        if i == 0 {
            return false;
        }
        i -= 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nes_core::targets::{make_targets, sample_invariant_game, TargetOptions};
    use nes_core::{solve, DualProblem, NormOrder, ParamName, SolveConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn compositions_are_enumerated_exactly_once() {
        let mut c = vec![0, 0, 0, 4];
        let mut seen = std::collections::HashSet::new();
        seen.insert(c.clone());
        while next_composition(&mut c) {
            assert_eq!(c.iter().sum::<usize>(), 4);
            assert!(seen.insert(c.clone()));
        }
        assert_eq!(seen.len(), 35);
        assert_eq!(binomial_f64(203, 3), 1_373_701.0);
    }

    #[test]
    fn penalty_is_continuous_and_convex() {
        let (eh, cap, rho) = (0.1, 2.0, 100.0);
        assert!((slack_penalty(eh, eh, cap, rho) - rho * eh).abs() < 1e-12);
        assert!((slack_penalty(eh + 1e-12, eh, cap, rho) - rho * eh).abs() < 1e-8);
        assert_eq!(slack_penalty(cap, eh, cap, rho), f64::INFINITY);
        let xs: Vec<f64> = (0..50).map(|i| eh + i as f64 * 0.035).collect();
        for w in xs.windows(3) {
            let (a, b, c) = (
                slack_penalty(w[0], eh, cap, rho),
                slack_penalty(w[1], eh, cap, rho),
                slack_penalty(w[2], eh, cap, rho),
            );
            assert!(b <= 0.5 * (a + c) + 1e-9);
            assert!(a <= b);
        }
    }

    #[test]
    fn strong_duality_with_the_dual_solver() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let shape = GameShape::new(vec![3, 2]).unwrap();
        for (concept, name) in [(Concept::Cce, ParamName::Me), (Concept::Ce, ParamName::Mre), (Concept::Cce, ParamName::Mwme)] {
            for _ in 0..5 {
                let game = sample_invariant_game(&shape, NormOrder::L2, &mut rng);
                let targets = make_targets(name, &game, &TargetOptions::default(), &mut rng).unwrap();
                let report = solve(&game, &targets, concept, &SolveConfig::default()).unwrap();
                let dual = DualProblem::new(&game, &targets, concept).unwrap().loss(&report.duals).unwrap();
                let primal = PrimalObjective::new(&game, &targets, concept)
                    .unwrap()
                    .value(report.solution.sigma.probs());
                assert!((primal + dual).abs() < 1e-6, "{concept:?} {name:?}: primal {primal} dual {dual}");
            }
        }
    }
}
