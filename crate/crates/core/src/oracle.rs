//! Exact per-game solver: minimizes the dual loss over the nonnegative
//! orthant (CE diagonals pinned at zero) to a tight gradient tolerance.
//!
//! The default method is projected gradient descent with Barzilai–Borwein
//! trial steps and monotone Armijo backtracking. Near the optimum the loss
//! changes fall below floating-point resolution, so a step whose loss change
//! is not measurable is still accepted when the directional derivative at
//! the new point is nonpositive: by convexity the loss then decreased along
//! the whole step, even if the computed values differ only by rounding.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dual::{mask_diagonal, DualEvaluation, DualProblem, DualVariables, EquilibriumSolution};
use crate::error::{CoreError, Result};
use crate::game::{GameShape, NormalFormGame};
use crate::targets::{Concept, SelectionTargets};

/// Solves stop and report non-convergence once any `S_p` exceeds this.
pub const MAX_DUAL_SUM: f64 = 1e6;
/// Armijo sufficient-decrease constant.
const ARMIJO: f64 = 1e-4;
/// Backtracking gives up below this step size.
const MIN_STEP: f64 = 1e-20;
/// Relative loss change regarded as below rounding.
const ROUNDING: f64 = 1e-13;
/// Under the softplus parameterization a zero dual starts at
/// `softplus(ZERO_LOGIT)`, about 0.0067: far enough from the flat tail that
/// the `z`-gradient still carries signal.
const ZERO_LOGIT: f64 = -5.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum StepRule {
    /// Constant step size, no line search.
    Fixed(f64),
    /// Barzilai–Borwein trial step with monotone Armijo backtracking.
    Backtracking,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Reparam {
    /// Optimize the duals directly, projecting onto `alpha >= 0`.
    #[default]
    Projection,
    /// Optimize `z` with `alpha = softplus(z)`, unconstrained.
    Softplus,
}

impl fmt::Display for Reparam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Reparam::Projection => "projection",
            Reparam::Softplus => "softplus",
        })
    }
}

impl FromStr for Reparam {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "projection" => Ok(Reparam::Projection),
            "softplus" => Ok(Reparam::Softplus),
            _ => Err(CoreError::InvalidConfig(format!("unknown reparameterization `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub enum Init {
    #[default]
    Zeros,
    Warm(DualVariables),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveConfig {
    pub max_iters: usize,
    /// Tolerance on the infinity norm of the projected gradient (or of the
    /// `z`-gradient under [`Reparam::Softplus`]).
    pub grad_tol: f64,
    pub step_rule: StepRule,
    pub reparam: Reparam,
    pub init: Init,
    /// Record the loss after every iteration in [`SolveReport::loss_trace`].
    pub record_trace: bool,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            max_iters: 50_000,
            grad_tol: 1e-8,
            step_rule: StepRule::Backtracking,
            reparam: Reparam::Projection,
            init: Init::Zeros,
            record_trace: false,
        }
    }
}

impl SolveConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters < 1 {
            return Err(CoreError::InvalidConfig("max_iters must be >= 1".into()));
        }
        if !(self.grad_tol > 0.0) {
            return Err(CoreError::InvalidConfig("grad_tol must be > 0".into()));
        }
        if let StepRule::Fixed(step) = self.step_rule {
            if !(step > 0.0) || !step.is_finite() {
                return Err(CoreError::InvalidConfig("fixed step must be > 0".into()));
            }
        }
        Ok(())
    }
}

/// A copy of `config` that starts from `duals`, which must fit `concept` on
/// `shape`.
pub fn warm_start_from(
    duals: &DualVariables,
    concept: Concept,
    shape: &GameShape,
    config: &SolveConfig,
) -> Result<SolveConfig> {
    duals.check_compatible(concept, shape)?;
    Ok(SolveConfig {
        init: Init::Warm(duals.clone()),
        ..config.clone()
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub solution: EquilibriumSolution,
    pub duals: DualVariables,
    pub iterations: usize,
    pub final_grad_norm: f64,
    pub converged: bool,
    /// Loss at the initial point followed by the loss after each iteration,
    /// when requested.
    pub loss_trace: Vec<f64>,
}

impl SolveReport {
    /// The report itself if it converged, `NotConverged` otherwise.
    pub fn ok(self) -> Result<Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(CoreError::NotConverged {
                iterations: self.iterations,
                grad_norm: self.final_grad_norm,
            })
        }
    }
}

/// Minimizes the dual loss of `(game, targets, concept)`.
///
/// Invalid inputs are errors; running out of iterations or exceeding
/// [`MAX_DUAL_SUM`] yields a report with `converged == false`.
pub fn solve(
    game: &NormalFormGame,
    targets: &SelectionTargets,
    concept: Concept,
    config: &SolveConfig,
) -> Result<SolveReport> {
    let problem = DualProblem::new(game, targets, concept)?;
    solve_problem(&problem, config)
}

/// [`solve`] on an already-built problem.
pub fn solve_problem(problem: &DualProblem, config: &SolveConfig) -> Result<SolveReport> {
    config.validate()?;
    let shape = problem.shape().clone();
    let concept = problem.concept();
    let start = match &config.init {
        Init::Zeros => DualVariables::zeros(concept, &shape),
        Init::Warm(d) => {
            d.check_compatible(concept, &shape)?;
            d.clone()
        }
    };
    let mut space = Space::new(problem, config.reparam, start.values());
    let x0 = space.initial();
    let result = descend(&mut space, x0, config);
    let values = space.to_duals(&result.x);
    let duals = DualVariables::new(concept, &shape, values)?;
    let solution = problem.solution(&duals)?;
    Ok(SolveReport {
        solution,
        duals,
        iterations: result.iterations,
        final_grad_norm: result.grad_norm,
        converged: result.converged,
        loss_trace: result.trace,
    })
}

/// The optimization variables: either the flat duals or their softplus
/// preimages, with the per-player block layout and CE masks.
struct Space<'a> {
    problem: &'a DualProblem,
    reparam: Reparam,
    /// Length of every player's block.
    blocks: Vec<usize>,
    /// Entries pinned at zero (CE diagonals).
    pinned: Vec<bool>,
    start: Vec<f64>,
}

struct Point {
    x: Vec<f64>,
    eval: DualEvaluation,
    /// Gradient with respect to `x`.
    grad: Vec<f64>,
}

impl<'a> Space<'a> {
    fn new(problem: &'a DualProblem, reparam: Reparam, start: &[Vec<f64>]) -> Self {
        let shape = problem.shape();
        let blocks: Vec<usize> = start.iter().map(Vec::len).collect();
        let mut pinned = Vec::new();
        for p in 0..shape.num_players() {
            let n = shape.num_strategies(p);
            for k in 0..blocks[p] {
                pinned.push(problem.concept() == Concept::Ce && k / n == k % n);
            }
        }
        Self {
            problem,
            reparam,
            blocks,
            pinned,
            start: start.concat(),
        }
    }

    fn initial(&self) -> Vec<f64> {
        match self.reparam {
            Reparam::Projection => self.start.clone(),
            Reparam::Softplus => self.start.iter().map(|&a| inverse_softplus(a)).collect(),
        }
    }

    fn alphas(&self, x: &[f64]) -> Vec<f64> {
        let mut a: Vec<f64> = match self.reparam {
            Reparam::Projection => x.to_vec(),
            Reparam::Softplus => x.iter().map(|&z| softplus(z)).collect(),
        };
        a.iter_mut().zip(&self.pinned).for_each(|(v, &p)| {
            if p {
                *v = 0.0
            }
        });
        a
    }

    fn split(&self, flat: &[f64]) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(self.blocks.len());
        let mut offset = 0;
        for &len in &self.blocks {
            out.push(flat[offset..offset + len].to_vec());
            offset += len;
        }
        out
    }

    fn to_duals(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let shape = self.problem.shape();
        let mut values = self.split(&self.alphas(x));
        if self.problem.concept() == Concept::Ce {
            for (p, b) in values.iter_mut().enumerate() {
                mask_diagonal(b, shape.num_strategies(p));
            }
        }
        values
    }

    fn point(&self, x: Vec<f64>) -> Point {
        let values = self.to_duals(&x);
        let eval = self.problem.evaluate_values(&values);
        let mut grad = eval.gradient.concat();
        if self.reparam == Reparam::Softplus {
            grad.iter_mut().zip(&x).for_each(|(g, &z)| *g *= sigmoid(z));
        }
        grad.iter_mut().zip(&self.pinned).for_each(|(g, &p)| {
            if p {
                *g = 0.0
            }
        });
        Point { x, eval, grad }
    }

    /// Projected (or plain) gradient step.
    fn step(&self, x: &[f64], grad: &[f64], t: f64) -> Vec<f64> {
        x.iter()
            .zip(grad)
            .zip(&self.pinned)
            .map(|((&x, &g), &pinned)| {
                if pinned {
                    return x;
                }
                let v = x - t * g;
                match self.reparam {
                    Reparam::Projection => v.max(0.0),
                    Reparam::Softplus => v,
                }
            })
            .collect()
    }

    /// Stationarity measure: `|x - P(x - g)|_inf` for the projection, the
    /// plain gradient norm for softplus.
    fn stationarity(&self, point: &Point) -> f64 {
        let stepped = self.step(&point.x, &point.grad, 1.0);
        point
            .x
            .iter()
            .zip(&stepped)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
    }

    fn max_dual_sum(&self, x: &[f64]) -> f64 {
        self.split(&self.alphas(x))
            .iter()
            .map(|b| b.iter().sum::<f64>())
            .fold(0.0, f64::max)
    }
}

struct Descent {
    x: Vec<f64>,
    iterations: usize,
    grad_norm: f64,
    converged: bool,
    trace: Vec<f64>,
}

fn descend(space: &mut Space<'_>, x0: Vec<f64>, config: &SolveConfig) -> Descent {
    let mut current = space.point(x0);
    let mut trace = Vec::new();
    if config.record_trace {
        trace.push(current.eval.loss - space.problem.loss_offset());
    }
    let mut grad_norm = space.stationarity(&current);
    let mut step = 1.0 / grad_norm.max(1.0);
    let mut iterations = 0;
    let mut converged = grad_norm <= config.grad_tol;
    while !converged && iterations < config.max_iters {
        if space.max_dual_sum(&current.x) > MAX_DUAL_SUM {
            break;
        }
        let next = match config.step_rule {
            StepRule::Fixed(t) => Some(space.point(space.step(&current.x, &current.grad, t))),
            StepRule::Backtracking => backtrack(space, &current, step),
        };
        let Some(next) = next else {
            break;
        };
        iterations += 1;
        // Barzilai–Borwein step from the accepted displacement.
        let (mut ss, mut sy) = (0.0, 0.0);
        for ((xn, xc), (gn, gc)) in next.x.iter().zip(&current.x).zip(next.grad.iter().zip(&current.grad)) {
            let s = xn - xc;
            ss += s * s;
            sy += s * (gn - gc);
        }
        step = if sy > 0.0 && ss > 0.0 {
            (ss / sy).clamp(1e-10, 1e10)
        } else {
            (step * 2.0).min(1e10)
        };
        current = next;
        if config.record_trace {
            trace.push(current.eval.loss - space.problem.loss_offset());
        }
        grad_norm = space.stationarity(&current);
        converged = grad_norm <= config.grad_tol;
    }
    Descent {
        x: current.x,
        iterations,
        grad_norm,
        converged,
        trace,
    }
}

/// Armijo backtracking along the projection arc from trial step `t`.
fn backtrack(space: &Space<'_>, current: &Point, mut t: f64) -> Option<Point> {
    let f = current.eval.loss;
    while t >= MIN_STEP {
        let x = space.step(&current.x, &current.grad, t);
        let (mut decrease, mut moved) = (0.0, false);
        for ((xn, xc), g) in x.iter().zip(&current.x).zip(&current.grad) {
            decrease += g * (xn - xc);
            moved |= xn != xc;
        }
        if !moved {
            return None;
        }
        let candidate = space.point(x);
        let fn_ = candidate.eval.loss;
        if fn_.is_finite() {
            if fn_ <= f + ARMIJO * decrease {
                return Some(candidate);
            }
            if (fn_ - f).abs() <= ROUNDING * (1.0 + f.abs()) {
                let slope: f64 = candidate
                    .grad
                    .iter()
                    .zip(candidate.x.iter().zip(&current.x))
                    .map(|(g, (xn, xc))| g * (xn - xc))
                    .sum();
                if slope <= 0.0 {
                    return Some(candidate);
                }
            }
        }
        t *= 0.5;
    }
    None
}

fn softplus(z: f64) -> f64 {
    if z > 30.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn inverse_softplus(a: f64) -> f64 {
    if a <= 0.0 {
        ZERO_LOGIT
    } else if a > 30.0 {
        a + (-(-a).exp_m1()).ln()
    } else {
        a.exp_m1().ln()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{JointDistribution, NormOrder};
    use crate::targets::{sample_invariant_game, SelectionTargets};
    use crate::test_games::prisoners_dilemma;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn me(shape: &GameShape) -> SelectionTargets {
        SelectionTargets::max_entropy(shape, NormOrder::L2, 100.0)
    }

    #[test]
    fn prisoners_dilemma_concentrates_on_defection() {
        // Defection is the unique CCE. How close the selected joint gets to
        // it depends on the approximation weight: at rho = 100 the solution
        // trades a positive epsilon for entropy.
        let g = prisoners_dilemma().standardize(NormOrder::L2).unwrap();
        for concept in [Concept::Cce, Concept::Ce] {
            let r = solve(&g, &me(g.shape()), concept, &SolveConfig::default()).unwrap().ok().unwrap();
            assert!(r.final_grad_norm <= 1e-8);
            // Frozen from an independent constrained primal solve.
            assert!((r.solution.sigma.probs()[3] - 0.87332898).abs() < 1e-6);
            assert!((r.solution.epsilon[0] - 0.05856679).abs() < 1e-6);

            let sharp = SelectionTargets::max_entropy(g.shape(), NormOrder::L2, 1e4);
            let r = solve(&g, &sharp, concept, &SolveConfig::default()).unwrap().ok().unwrap();
            assert!(r.solution.sigma.probs()[3] >= 0.99, "{:?}", r.solution.sigma);
        }
    }

    #[test]
    fn exact_target_equilibrium_is_returned() {
        // In plain coordination, an even mix of the two coordinated joints
        // is an exact CCE; with it as the target the solution is the target.
        let g = NormalFormGame::bimatrix(2, 2, vec![1.0, 0.0, 0.0, 1.0], vec![1.0, 0.0, 0.0, 1.0])
            .unwrap()
            .standardize(NormOrder::L2)
            .unwrap();
        let mut t = me(g.shape());
        t.target_joint = JointDistribution::new(g.shape().clone(), vec![0.5 - 1e-9, 1e-9, 1e-9, 0.5 - 1e-9]).unwrap();
        let r = solve(&g, &t, Concept::Cce, &SolveConfig::default()).unwrap().ok().unwrap();
        let tv: f64 = r
            .solution
            .sigma
            .probs()
            .iter()
            .zip(t.target_joint.probs())
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / 2.0;
        assert!(tv < 1e-4);
    }

    #[test]
    fn warm_start_at_the_solution_is_immediate() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let shape = GameShape::new(vec![3, 3]).unwrap();
        let g = sample_invariant_game(&shape, NormOrder::L2, &mut rng);
        let t = me(&shape);
        let cold = solve(&g, &t, Concept::Ce, &SolveConfig::default()).unwrap().ok().unwrap();
        let cfg = warm_start_from(&cold.duals, Concept::Ce, &shape, &SolveConfig::default()).unwrap();
        let warm = solve(&g, &t, Concept::Ce, &cfg).unwrap().ok().unwrap();
        assert!(warm.iterations <= 2);
        assert!(matches!(
            warm_start_from(&cold.duals, Concept::Cce, &shape, &SolveConfig::default()),
            Err(CoreError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn softplus_parameterization_agrees() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let shape = GameShape::new(vec![3, 3]).unwrap();
        let g = sample_invariant_game(&shape, NormOrder::L2, &mut rng);
        let t = me(&shape);
        let a = solve(&g, &t, Concept::Cce, &SolveConfig::default()).unwrap().ok().unwrap();
        let cfg = SolveConfig {
            reparam: Reparam::Softplus,
            grad_tol: 1e-7,
            max_iters: 200_000,
            ..Default::default()
        };
        let b = solve(&g, &t, Concept::Cce, &cfg).unwrap();
        let tv: f64 = a
            .solution
            .sigma
            .probs()
            .iter()
            .zip(b.solution.sigma.probs())
            .map(|(x, y)| (x - y).abs())
            .sum::<f64>()
            / 2.0;
        assert!(tv < 1e-3, "tv {tv}");
    }

    #[test]
    fn iteration_budget_is_reported() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let shape = GameShape::new(vec![4, 4]).unwrap();
        let g = sample_invariant_game(&shape, NormOrder::L2, &mut rng);
        let cfg = SolveConfig {
            max_iters: 1,
            ..Default::default()
        };
        let r = solve(&g, &me(&shape), Concept::Ce, &cfg).unwrap();
        assert!(!r.converged);
        assert!(matches!(r.ok(), Err(CoreError::NotConverged { iterations: 1, .. })));
    }

    #[test]
    fn invalid_config_is_rejected() {
        let g = prisoners_dilemma();
        let cfg = SolveConfig {
            grad_tol: 0.0,
            ..Default::default()
        };
        assert!(matches!(
            solve(&g, &me(g.shape()), Concept::Cce, &cfg),
            Err(CoreError::InvalidConfig(_))
        ));
    }

    #[test]
    fn softplus_helpers() {
        for a in [1e-9, 0.3, 2.0, 45.0] {
            assert!((softplus(inverse_softplus(a)) - a).abs() < 1e-12 * a.max(1.0));
        }
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-15);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn descent_is_monotone(seed in any::<u64>(), ce in any::<bool>()) {
            let concept = if ce { Concept::Ce } else { Concept::Cce };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let shape = GameShape::new(vec![3, 3]).unwrap();
            let g = sample_invariant_game(&shape, NormOrder::L2, &mut rng);
            let cfg = SolveConfig { record_trace: true, ..Default::default() };
            let r = solve(&g, &me(&shape), concept, &cfg).unwrap();
            for w in r.loss_trace.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-13 * (1.0 + w[0].abs()), "{} -> {}", w[0], w[1]);
            }
            prop_assert!(r.converged);
        }

        #[test]
        fn solution_is_unique(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let shape = GameShape::new(vec![3, 3]).unwrap();
            let g = sample_invariant_game(&shape, NormOrder::L2, &mut rng);
            let t = me(&shape);
            let a = solve(&g, &t, Concept::Cce, &SolveConfig::default()).unwrap();
            let init = DualVariables::new(Concept::Cce, &shape, vec![vec![2.0, 0.5, 1.0], vec![0.1, 3.0, 0.0]]).unwrap();
            let b = solve(&g, &t, Concept::Cce, &SolveConfig { init: Init::Warm(init), ..Default::default() }).unwrap();
            let tv: f64 = a.solution.sigma.probs().iter().zip(b.solution.sigma.probs()).map(|(x, y)| (x - y).abs()).sum::<f64>() / 2.0;
            prop_assert!(tv < 1e-3);
        }

        #[test]
        fn complementary_slackness(seed in any::<u64>(), ce in any::<bool>()) {
            let concept = if ce { Concept::Ce } else { Concept::Cce };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let shape = GameShape::new(vec![4, 4]).unwrap();
            let g = sample_invariant_game(&shape, NormOrder::L2, &mut rng);
            let t = me(&shape);
            let r = solve(&g, &t, concept, &SolveConfig::default()).unwrap().ok().unwrap();
            let problem = DualProblem::new(&g, &t, concept).unwrap();
            let grad = problem.gradient(&r.duals).unwrap();
            for (alpha, g) in r.duals.values().iter().zip(&grad) {
                for (a, g) in alpha.iter().zip(g) {
                    if *a > 1e-6 {
                        prop_assert!(g.abs() < 1e-3);
                    }
                }
            }
        }
    }
}
