//! The dual Lagrangian of the target-approximate maximum-welfare
//! minimum-relative-entropy problem, primal recovery and the analytic dual
//! gradient.
//!
//! For either concept the constraint tensor of player `p` is a block of rows
//! `A_p[k][a]`, one row per dual entry `k`: the deviation `a'_p` for CCE, and
//! the pair `(a'_p, a''_p)` (flattened as `a'_p * |A_p| + a''_p`) for CE. With
//! `S_p = sum_k alpha_p[k]`:
//!
//! ```text
//! l(a)   = mu W(a) - sum_p sum_k alpha_p[k] A_p[k][a]
//! sigma  ∝ sigma_hat(a) exp(l(a))
//! eps_p  = (eps_hat_p - eps_cap_p) exp(-S_p / rho) + eps_cap_p
//! L      = logsumexp_a(ln sigma_hat(a) + l(a)) + sum_p eps_cap_p S_p - rho sum_p eps_p
//! dL/dalpha_p[k] = eps_p - sum_a sigma(a) A_p[k][a]
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::game::{
    ce_deviation_gains, cce_deviation_gains, dot, GameShape, JointDistribution, NormalFormGame,
};
use crate::targets::{Concept, SelectionTargets};

/// Nonnegative dual variables, one block per player.
///
/// CCE blocks have `|A_p|` entries indexed by deviation. CE blocks hold the
/// full `|A_p| x |A_p|` matrix `[a'_p][a''_p]` whose diagonal is always zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualVariables {
    concept: Concept,
    shape: GameShape,
    values: Vec<Vec<f64>>,
}

impl DualVariables {
    pub fn zeros(concept: Concept, shape: &GameShape) -> Self {
        let values = (0..shape.num_players())
            .map(|p| vec![0.0; block_len(concept, shape.num_strategies(p))])
            .collect();
        Self {
            concept,
            shape: shape.clone(),
            values,
        }
    }

    /// Validates lengths, finiteness and nonnegativity. CE diagonals are
    /// masked to zero rather than rejected.
    pub fn new(concept: Concept, shape: &GameShape, mut values: Vec<Vec<f64>>) -> Result<Self> {
        if values.len() != shape.num_players() {
            return Err(CoreError::ShapeMismatch(format!(
                "{} dual blocks for {} players",
                values.len(),
                shape.num_players()
            )));
        }
        for (p, block) in values.iter_mut().enumerate() {
            let n = shape.num_strategies(p);
            if block.len() != block_len(concept, n) {
                return Err(CoreError::ShapeMismatch(format!(
                    "player {p}: {} dual entries, {concept} on {shape} needs {}",
                    block.len(),
                    block_len(concept, n)
                )));
            }
            if block.iter().any(|v| !v.is_finite()) {
                return Err(CoreError::NonFinite("dual variables"));
            }
            if let Some(v) = block.iter().find(|v| **v < 0.0) {
                return Err(CoreError::InvalidTargets(format!(
                    "dual variables must be >= 0, found {v}"
                )));
            }
            if concept == Concept::Ce {
                mask_diagonal(block, n);
            }
        }
        Ok(Self {
            concept,
            shape: shape.clone(),
            values,
        })
    }

    pub fn concept(&self) -> Concept {
        self.concept
    }

    pub fn shape(&self) -> &GameShape {
        &self.shape
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn player(&self, p: usize) -> &[f64] {
        &self.values[p]
    }

    pub fn into_values(self) -> Vec<Vec<f64>> {
        self.values
    }

    /// `S_p`, the sum of every player's entries.
    pub fn sums(&self) -> Vec<f64> {
        self.values.iter().map(|b| b.iter().sum()).collect()
    }

    pub fn len(&self) -> usize {
        self.values.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Concatenation of all blocks, player by player.
    pub fn flatten(&self) -> Vec<f64> {
        self.values.concat()
    }

    /// Inverse of [`DualVariables::flatten`], with validation.
    pub fn from_flat(concept: Concept, shape: &GameShape, flat: &[f64]) -> Result<Self> {
        let mut values = Vec::with_capacity(shape.num_players());
        let mut offset = 0;
        for p in 0..shape.num_players() {
            let len = block_len(concept, shape.num_strategies(p));
            let block = flat.get(offset..offset + len).ok_or_else(|| {
                CoreError::ShapeMismatch(format!("{} flat dual entries is too few", flat.len()))
            })?;
            values.push(block.to_vec());
            offset += len;
        }
        if offset != flat.len() {
            return Err(CoreError::ShapeMismatch(format!(
                "{} flat dual entries, expected {offset}",
                flat.len()
            )));
        }
        Self::new(concept, shape, values)
    }

    /// Checks that these duals fit a concept and game shape.
    pub fn check_compatible(&self, concept: Concept, shape: &GameShape) -> Result<()> {
        if self.concept != concept || &self.shape != shape {
            return Err(CoreError::ShapeMismatch(format!(
                "duals are {} on {}, expected {concept} on {shape}",
                self.concept, self.shape
            )));
        }
        Ok(())
    }
}

/// Number of dual entries of one player.
pub fn block_len(concept: Concept, num_strategies: usize) -> usize {
    match concept {
        Concept::Cce => num_strategies,
        Concept::Ce => num_strategies * num_strategies,
    }
}

pub(crate) fn mask_diagonal(block: &mut [f64], n: usize) {
    for i in 0..n {
        block[i * n + i] = 0.0;
    }
}

/// The recovered primal solution.
#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumSolution {
    pub sigma: JointDistribution,
    pub epsilon: Vec<f64>,
    pub logits: Vec<f64>,
    pub loss: f64,
}

/// `log sum_i exp(x_i)`, with the maximum subtracted first.
pub fn logsumexp(values: &[f64]) -> f64 {
    let max = values.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    if max == f64::NEG_INFINITY || !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// `sigma(a) ∝ sigma_hat(a) exp(l(a))`, normalized through the log-sum-exp
/// kernel.
pub fn primal_joint(targets: &SelectionTargets, logits: &[f64]) -> Result<JointDistribution> {
    if logits.len() != targets.target_joint.probs().len() {
        return Err(CoreError::ShapeMismatch("logits vs target joint".into()));
    }
    if logits.iter().any(|l| !l.is_finite()) {
        return Err(CoreError::NonFinite("logits"));
    }
    let shifted: Vec<f64> = targets
        .target_joint
        .probs()
        .iter()
        .zip(logits)
        .map(|(s, l)| s.ln() + l)
        .collect();
    Ok(softmax(targets.target_joint.shape(), &shifted))
}

fn softmax(shape: &GameShape, shifted: &[f64]) -> JointDistribution {
    let max = shifted.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let weights: Vec<f64> = shifted.iter().map(|v| (v - max).exp()).collect();
    JointDistribution::from_weights(shape.clone(), weights).expect("max-shifted weights are positive")
}

/// `eps_p = (eps_hat_p - eps_cap_p) exp(-S_p / rho) + eps_cap_p`, which lies in
/// `[eps_hat_p, eps_cap_p)` for `S_p >= 0`.
pub fn primal_epsilon(targets: &SelectionTargets, duals: &DualVariables) -> Vec<f64> {
    epsilon_from_sums(targets, &duals.sums())
}

fn epsilon_from_sums(targets: &SelectionTargets, sums: &[f64]) -> Vec<f64> {
    sums.iter()
        .zip(targets.target_epsilon.iter().zip(&targets.epsilon_cap))
        .map(|(s, (e, cap))| (e - cap) * (-s / targets.rho).exp() + cap)
        .collect()
}

/// `phi(u) = exp(-u) - 1 + u`, evaluated without cancellation.
fn phi(u: f64) -> f64 {
    if u.abs() < 1e-3 {
        // Taylor series; the remainder is below 1e-16 relative.
        u * u * (0.5 - u * (1.0 / 6.0 - u * (1.0 / 24.0 - u / 120.0)))
    } else {
        (-u).exp_m1() + u
    }
}

/// Loss, gradient and recovered primal at one dual point.
#[derive(Debug, Clone, PartialEq)]
pub struct DualEvaluation {
    pub loss: f64,
    pub gradient: Vec<Vec<f64>>,
    pub sigma: JointDistribution,
    pub epsilon: Vec<f64>,
    pub logits: Vec<f64>,
}

impl DualEvaluation {
    /// `max |g|` over all entries.
    pub fn grad_inf_norm(&self) -> f64 {
        self.gradient
            .iter()
            .flatten()
            .fold(0.0f64, |m, g| m.max(g.abs()))
    }
}

/// One (game, targets, concept) instance of the dual problem, with the
/// constraint tensors materialized.
#[derive(Debug, Clone)]
pub struct DualProblem {
    concept: Concept,
    shape: GameShape,
    /// Per player, `[k][a]` constraint rows.
    rows: Vec<Vec<f64>>,
    targets: SelectionTargets,
    log_target: Vec<f64>,
    welfare: Vec<f64>,
}

impl DualProblem {
    pub fn new(game: &NormalFormGame, targets: &SelectionTargets, concept: Concept) -> Result<Self> {
        targets.validate(game.shape())?;
        let shape = game.shape().clone();
        let rows = match concept {
            Concept::Cce => {
                let g = cce_deviation_gains(game);
                (0..shape.num_players()).map(|p| g.player(p).to_vec()).collect()
            }
            Concept::Ce => {
                let g = ce_deviation_gains(game);
                (0..shape.num_players()).map(|p| g.player(p).to_vec()).collect()
            }
        };
        let log_target = targets.target_joint.probs().iter().map(|s| s.ln()).collect();
        let welfare = targets.welfare.iter().map(|w| targets.mu * w).collect();
        Ok(Self {
            concept,
            shape,
            rows,
            targets: targets.clone(),
            log_target,
            welfare,
        })
    }

    pub fn concept(&self) -> Concept {
        self.concept
    }

    pub fn shape(&self) -> &GameShape {
        &self.shape
    }

    pub fn targets(&self) -> &SelectionTargets {
        &self.targets
    }

    /// The `[k][a]` constraint rows of one player.
    pub fn constraint_rows(&self, p: usize) -> &[f64] {
        &self.rows[p]
    }

    fn check(&self, duals: &DualVariables) -> Result<()> {
        duals.check_compatible(self.concept, &self.shape)
    }

    /// `l(a) = mu W(a) - sum_p <alpha_p, A_p(., a)>`.
    pub fn logits(&self, duals: &DualVariables) -> Result<Vec<f64>> {
        self.check(duals)?;
        Ok(self.logits_unchecked(duals.values()))
    }

    fn logits_unchecked(&self, values: &[Vec<f64>]) -> Vec<f64> {
        let j = self.shape.joint_size();
        let mut l = self.welfare.clone();
        for (rows, alpha) in self.rows.iter().zip(values) {
            for (row, &a) in rows.chunks_exact(j).zip(alpha) {
                if a != 0.0 {
                    l.iter_mut().zip(row).for_each(|(l, r)| *l -= a * r);
                }
            }
        }
        l
    }

    /// The dual loss, computed in one pass.
    ///
    /// The epsilon part is evaluated in the algebraically equal form
    /// `eps_hat_p (S_p - rho) + rho (eps_cap_p - eps_hat_p) phi(S_p / rho)`,
    /// which stays accurate when `rho` is large.
    pub fn loss(&self, duals: &DualVariables) -> Result<f64> {
        self.check(duals)?;
        let l = self.logits_unchecked(duals.values());
        Ok(self.loss_shifted(&l, &duals.sums()) - self.loss_offset())
    }

    /// `rho sum_p eps_hat_p`: the constant separating [`DualProblem::loss`]
    /// from the form the solver minimizes.
    pub(crate) fn loss_offset(&self) -> f64 {
        self.targets.rho * self.targets.target_epsilon.iter().sum::<f64>()
    }

    /// The loss plus [`DualProblem::loss_offset`]; zero at `alpha = 0` when
    /// `mu = 0`.
    pub(crate) fn loss_shifted(&self, logits: &[f64], sums: &[f64]) -> f64 {
        let shifted: Vec<f64> = self.log_target.iter().zip(logits).map(|(s, l)| s + l).collect();
        let rho = self.targets.rho;
        let eps_part: f64 = sums
            .iter()
            .zip(self.targets.target_epsilon.iter().zip(&self.targets.epsilon_cap))
            .map(|(&s, (&e, &cap))| e * s + rho * (cap - e) * phi(s / rho))
            .sum();
        logsumexp(&shifted) + eps_part
    }

    /// The loss assembled literally from the recovered logits and epsilons.
    pub fn loss_from_parts(&self, logits: &[f64], epsilon: &[f64], duals: &DualVariables) -> f64 {
        let shifted: Vec<f64> = self.log_target.iter().zip(logits).map(|(s, l)| s + l).collect();
        let cap_part: f64 = duals
            .sums()
            .iter()
            .zip(&self.targets.epsilon_cap)
            .map(|(s, c)| s * c)
            .sum();
        logsumexp(&shifted) + cap_part - self.targets.rho * epsilon.iter().sum::<f64>()
    }

    /// `dL/dalpha_p[k] = eps_p - E_sigma[A_p[k]]`, with the CE diagonal masked.
    pub fn gradient(&self, duals: &DualVariables) -> Result<Vec<Vec<f64>>> {
        Ok(self.evaluate(duals)?.gradient)
    }

    /// Loss, gradient and primal recovery in a single pass.
    pub fn evaluate(&self, duals: &DualVariables) -> Result<DualEvaluation> {
        self.check(duals)?;
        let mut eval = self.evaluate_values(duals.values());
        eval.loss -= self.loss_offset();
        Ok(eval)
    }

    /// Like [`DualProblem::evaluate`] on raw blocks, reporting the shifted loss.
    pub(crate) fn evaluate_values(&self, values: &[Vec<f64>]) -> DualEvaluation {
        let logits = self.logits_unchecked(values);
        let sums: Vec<f64> = values.iter().map(|b| b.iter().sum()).collect();
        let loss = self.loss_shifted(&logits, &sums);
        let shifted: Vec<f64> = self.log_target.iter().zip(&logits).map(|(s, l)| s + l).collect();
        let sigma = softmax(&self.shape, &shifted);
        let epsilon = epsilon_from_sums(&self.targets, &sums);
        let j = self.shape.joint_size();
        let gradient = self
            .rows
            .iter()
            .zip(&epsilon)
            .enumerate()
            .map(|(p, (rows, &eps))| {
                let mut g: Vec<f64> = rows
                    .chunks_exact(j)
                    .map(|row| eps - dot(row, sigma.probs()))
                    .collect();
                if self.concept == Concept::Ce {
                    mask_diagonal(&mut g, self.shape.num_strategies(p));
                }
                g
            })
            .collect();
        DualEvaluation {
            loss,
            gradient,
            sigma,
            epsilon,
            logits,
        }
    }

    /// Recovers the primal solution at `duals`.
    pub fn solution(&self, duals: &DualVariables) -> Result<EquilibriumSolution> {
        let eval = self.evaluate(duals)?;
        Ok(EquilibriumSolution {
            sigma: eval.sigma,
            epsilon: eval.epsilon,
            logits: eval.logits,
            loss: eval.loss,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::NormOrder;
    use crate::targets::{
        make_targets, sample_dirichlet_joint, sample_invariant_game, sample_sphere, ParamName,
        TargetOptions,
    };
    use crate::test_games::prisoners_dilemma;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn me(game: &NormalFormGame) -> SelectionTargets {
        SelectionTargets::max_entropy(game.shape(), NormOrder::L2, 100.0)
    }

    /// A random instance with every target component active.
    pub(crate) fn random_instance(
        shape: &GameShape,
        concept: Concept,
        rng: &mut ChaCha8Rng,
    ) -> (DualProblem, DualVariables) {
        let game = sample_invariant_game(shape, NormOrder::L2, rng);
        let z = NormOrder::L2.scale(shape.joint_size());
        let targets = SelectionTargets {
            target_joint: sample_dirichlet_joint(shape, rng),
            target_epsilon: (0..shape.num_players()).map(|_| rng.random_range(-z..z)).collect(),
            epsilon_cap: vec![z; shape.num_players()],
            welfare: sample_sphere(shape.joint_size(), NormOrder::L2, rng),
            rho: rng.random_range(0.5..20.0),
            mu: rng.random_range(0.0..2.0),
        };
        let problem = DualProblem::new(&game, &targets, concept).unwrap();
        let values = (0..shape.num_players())
            .map(|p| {
                (0..block_len(concept, shape.num_strategies(p)))
                    .map(|_| rng.random_range(0.01..1.5))
                    .collect()
            })
            .collect();
        let duals = DualVariables::new(concept, shape, values).unwrap();
        (problem, duals)
    }

    #[test]
    fn logits_vanish_at_zero_duals() {
        let g = prisoners_dilemma();
        let mut t = me(&g);
        let p = DualProblem::new(&g, &t, Concept::Cce).unwrap();
        let zero = DualVariables::zeros(Concept::Cce, g.shape());
        assert_eq!(p.logits(&zero).unwrap(), vec![0.0; 4]);

        t.mu = 1.0;
        t.welfare = vec![0.3, -0.1, 0.2, -0.4];
        let p = DualProblem::new(&g, &t, Concept::Cce).unwrap();
        assert_eq!(p.logits(&zero).unwrap(), t.welfare);
    }

    #[test]
    fn prisoners_dilemma_logits() {
        let g = prisoners_dilemma();
        let p = DualProblem::new(&g, &me(&g), Concept::Cce).unwrap();
        let duals =
            DualVariables::new(Concept::Cce, g.shape(), vec![vec![0.0, 1.0], vec![0.0, 0.0]]).unwrap();
        // Joints (C,C), (C,D), (D,C), (D,D).
        assert_eq!(p.logits(&duals).unwrap(), vec![-1.0, -1.0, 0.0, 0.0]);
    }

    #[test]
    fn primal_joint_examples() {
        let g = prisoners_dilemma();
        let t = me(&g);
        assert_eq!(primal_joint(&t, &[0.0; 4]).unwrap().probs(), &[0.25; 4]);
        let s = primal_joint(&t, &[7.0; 4]).unwrap();
        s.probs().iter().for_each(|p| assert!((p - 0.25).abs() < 1e-15));

        let shape = GameShape::new(vec![2, 2]).unwrap();
        let mut t = SelectionTargets::max_entropy(&shape, NormOrder::L2, 100.0);
        t.target_joint = JointDistribution::new(shape, vec![0.5 - 1e-12, 1e-12, 1e-12, 0.5 - 1e-12]).unwrap();
        let s = primal_joint(&t, &[3f64.ln(), 0.0, 0.0, 0.0]).unwrap();
        assert!((s.probs()[0] - 0.75).abs() < 1e-9);
        assert!((s.probs()[3] - 0.25).abs() < 1e-9);
    }

    #[test]
    fn primal_joint_survives_huge_logits() {
        let g = prisoners_dilemma();
        let t = me(&g);
        let s = primal_joint(&t, &[1e4, 0.0, -1e4, 1e4]).unwrap();
        assert_eq!(s.probs(), &[0.5, 0.0, 0.0, 0.5]);
    }

    #[test]
    fn primal_epsilon_examples() {
        let g = prisoners_dilemma();
        let t = me(&g);
        let zero = DualVariables::zeros(Concept::Cce, g.shape());
        assert_eq!(primal_epsilon(&t, &zero), vec![0.0, 0.0]);
        let d = DualVariables::new(Concept::Cce, g.shape(), vec![vec![40.0, 60.0], vec![0.0, 0.0]]).unwrap();
        let eps = primal_epsilon(&t, &d);
        assert!((eps[0] - 1.2642411176571153).abs() < 1e-15);
        let big = DualVariables::new(Concept::Cce, g.shape(), vec![vec![1e6, 0.0], vec![0.0, 0.0]]).unwrap();
        assert!((primal_epsilon(&t, &big)[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn loss_examples() {
        let g = prisoners_dilemma();
        let p = DualProblem::new(&g, &me(&g), Concept::Cce).unwrap();
        let zero = DualVariables::zeros(Concept::Cce, g.shape());
        assert_eq!(p.loss(&zero).unwrap(), 0.0);

        let mut t = me(&g);
        t.target_epsilon = vec![0.5, -1.0];
        let p = DualProblem::new(&g, &t, Concept::Cce).unwrap();
        assert!((p.loss(&zero).unwrap() - 50.0).abs() < 1e-12);
    }

    #[test]
    fn prisoners_dilemma_gradient_at_zero() {
        let g = prisoners_dilemma();
        let p = DualProblem::new(&g, &me(&g), Concept::Cce).unwrap();
        let grad = p.gradient(&DualVariables::zeros(Concept::Cce, g.shape())).unwrap();
        assert_eq!(grad[0], vec![0.5, -0.5]);
        assert_eq!(grad[1], vec![0.5, -0.5]);
    }

    #[test]
    fn ce_gradient_diagonal_is_masked() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let shape = GameShape::new(vec![3, 2]).unwrap();
        let (p, d) = random_instance(&shape, Concept::Ce, &mut rng);
        let grad = p.gradient(&d).unwrap();
        for (pl, g) in grad.iter().enumerate() {
            let n = shape.num_strategies(pl);
            (0..n).for_each(|i| assert_eq!(g[i * n + i], 0.0));
        }
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let g = prisoners_dilemma();
        let p = DualProblem::new(&g, &me(&g), Concept::Cce).unwrap();
        let wrong = DualVariables::zeros(Concept::Ce, g.shape());
        assert!(matches!(p.loss(&wrong), Err(CoreError::ShapeMismatch(_))));
        assert!(DualVariables::new(Concept::Cce, g.shape(), vec![vec![0.0; 3], vec![0.0; 2]]).is_err());
        assert!(DualVariables::new(Concept::Cce, g.shape(), vec![vec![-1.0, 0.0], vec![0.0; 2]]).is_err());
    }

    #[test]
    fn flat_round_trip() {
        let shape = GameShape::new(vec![3, 2, 2]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (_, d) = random_instance(&shape, Concept::Ce, &mut rng);
        let back = DualVariables::from_flat(Concept::Ce, &shape, &d.flatten()).unwrap();
        assert_eq!(back, d);
        assert!(DualVariables::from_flat(Concept::Ce, &shape, &d.flatten()[1..]).is_err());
    }

    #[test]
    fn logsumexp_shift_identity() {
        let x = [0.3, -2.0, 5.5, 1.0];
        for c in [-1e3, -1.0, 0.0, 2.5, 1e3] {
            let shifted: Vec<f64> = x.iter().map(|v| v + c).collect();
            assert!((logsumexp(&x) - (logsumexp(&shifted) - c)).abs() < 1e-12);
        }
    }

    #[test]
    fn phi_matches_direct_formula() {
        for u in [1e-6, 1e-4, 9.99e-4, 1e-3, 0.01, 0.7, 5.0, 40.0] {
            let direct = (-u as f64).exp() - 1.0 + u;
            assert!((phi(u) - direct).abs() <= 1e-15 + 1e-9 * direct.abs(), "u = {u}");
        }
    }

    #[test]
    fn unused_make_targets_rows_build_problems() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let shape = GameShape::new(vec![2, 3]).unwrap();
        let game = sample_invariant_game(&shape, NormOrder::L2, &mut rng);
        for name in [ParamName::Me, ParamName::Mu, ParamName::EpsMre, ParamName::Ms] {
            let t = make_targets(name, &game, &TargetOptions::default(), &mut rng).unwrap();
            for concept in [Concept::Cce, Concept::Ce] {
                let p = DualProblem::new(&game, &t, concept).unwrap();
                assert!(p.loss(&DualVariables::zeros(concept, &shape)).unwrap().is_finite());
            }
        }
    }

    fn flat_loss(p: &DualProblem, concept: Concept, flat: &[f64]) -> f64 {
        p.loss(&DualVariables::from_flat(concept, p.shape(), flat).unwrap()).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn direct_and_assembled_loss_agree(seed in any::<u64>(), ce in any::<bool>(), three in any::<bool>()) {
            let concept = if ce { Concept::Ce } else { Concept::Cce };
            let shape = GameShape::new(if three { vec![2, 2, 2] } else { vec![2, 3] }).unwrap();
            let (p, d) = random_instance(&shape, concept, &mut ChaCha8Rng::seed_from_u64(seed));
            let direct = p.loss(&d).unwrap();
            let logits = p.logits(&d).unwrap();
            let eps = primal_epsilon(p.targets(), &d);
            let assembled = p.loss_from_parts(&logits, &eps, &d);
            prop_assert!((direct - assembled).abs() <= 1e-12 * (1.0 + direct.abs()), "{direct} vs {assembled}");
        }

        #[test]
        fn loss_is_convex(seed in any::<u64>(), ce in any::<bool>()) {
            let concept = if ce { Concept::Ce } else { Concept::Cce };
            let shape = GameShape::new(vec![3, 3]).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (p, a) = random_instance(&shape, concept, &mut rng);
            let b: Vec<f64> = a.flatten().iter().map(|_| rng.random_range(0.0..3.0)).collect();
            let a = a.flatten();
            let mid: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect();
            let lhs = flat_loss(&p, concept, &mid);
            let rhs = 0.5 * flat_loss(&p, concept, &a) + 0.5 * flat_loss(&p, concept, &b);
            prop_assert!(lhs <= rhs + 1e-10);
        }

        #[test]
        fn recovered_primal_is_valid(seed in any::<u64>(), ce in any::<bool>()) {
            let concept = if ce { Concept::Ce } else { Concept::Cce };
            let shape = GameShape::new(vec![2, 2, 2]).unwrap();
            let (p, d) = random_instance(&shape, concept, &mut ChaCha8Rng::seed_from_u64(seed));
            let sol = p.solution(&d).unwrap();
            prop_assert!(JointDistribution::new(shape.clone(), sol.sigma.probs().to_vec()).is_ok());
            for (e, (lo, cap)) in sol.epsilon.iter().zip(p.targets().target_epsilon.iter().zip(&p.targets().epsilon_cap)) {
                prop_assert!(e >= lo && e < cap);
            }
        }

        #[test]
        fn gradient_matches_central_differences(seed in any::<u64>(), ce in any::<bool>(), three in any::<bool>()) {
            let concept = if ce { Concept::Ce } else { Concept::Cce };
            let shape = GameShape::new(if three { vec![2, 2, 2] } else { vec![2, 2] }).unwrap();
            let (p, d) = random_instance(&shape, concept, &mut ChaCha8Rng::seed_from_u64(seed));
            let grad: Vec<f64> = p.gradient(&d).unwrap().concat();
            let x = d.flatten();
            let h = 1e-5;
            let mut offset = 0;
            for pl in 0..shape.num_players() {
                let n = shape.num_strategies(pl);
                for k in 0..block_len(concept, n) {
                    let i = offset + k;
                    if concept == Concept::Ce && k / n == k % n {
                        prop_assert_eq!(grad[i], 0.0);
                        continue;
                    }
                    let mut up = x.clone();
                    let mut down = x.clone();
                    up[i] += h;
                    down[i] -= h;
                    let fd = (flat_loss(&p, concept, &up) - flat_loss(&p, concept, &down)) / (2.0 * h);
                    let err = (fd - grad[i]).abs() / grad[i].abs().max(1e-2);
                    prop_assert!(err < 1e-5, "entry {i}: fd {fd} vs analytic {}", grad[i]);
                }
                offset += block_len(concept, n);
            }
        }
    }
}
