//! Distances between joints and distance of a joint from the
//! epsilon-equilibrium polytope.

use crate::error::{CoreError, Result};
use crate::game::{ce_deviation_gains, cce_deviation_gains, JointDistribution, NormalFormGame};
use crate::targets::Concept;

/// Half the L1 distance between two joints, in `[0, 1]`.
pub fn solver_gap(reference: &JointDistribution, other: &JointDistribution) -> Result<f64> {
    if reference.shape() != other.shape() {
        return Err(CoreError::ShapeMismatch(format!(
            "joints over {} and {}",
            reference.shape(),
            other.shape()
        )));
    }
    let l1: f64 = reference
        .probs()
        .iter()
        .zip(other.probs())
        .map(|(a, b)| (a - b).abs())
        .sum();
    Ok((0.5 * l1).min(1.0))
}

/// The largest expected deviation gain of every player: over deviations for
/// CCE, over (deviation, recommendation) pairs for CE. CE gains are weighted
/// by the joint, i.e. they are conditional gains times recommendation mass.
pub fn max_expected_gains(game: &NormalFormGame, sigma: &JointDistribution, concept: Concept) -> Vec<f64> {
    let expected = match concept {
        Concept::Cce => cce_deviation_gains(game).expected(sigma.probs()),
        Concept::Ce => ce_deviation_gains(game).expected(sigma.probs()),
    };
    expected
        .iter()
        .map(|g| g.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v)))
        .collect()
}

/// Per player, `[max expected deviation gain - eps_p]^+`.
pub fn equilibrium_gap_components(
    game: &NormalFormGame,
    sigma: &JointDistribution,
    epsilon: &[f64],
    concept: Concept,
) -> Result<Vec<f64>> {
    if sigma.shape() != game.shape() {
        return Err(CoreError::ShapeMismatch("joint vs game".into()));
    }
    if epsilon.len() != game.num_players() {
        return Err(CoreError::ShapeMismatch(format!(
            "{} epsilons for {} players",
            epsilon.len(),
            game.num_players()
        )));
    }
    Ok(max_expected_gains(game, sigma, concept)
        .iter()
        .zip(epsilon)
        .map(|(g, e)| (g - e).max(0.0))
        .collect())
}

/// Sum over players of [`equilibrium_gap_components`]; zero exactly when the
/// joint satisfies every (C)CE constraint at the given epsilons.
pub fn equilibrium_gap(
    game: &NormalFormGame,
    sigma: &JointDistribution,
    epsilon: &[f64],
    concept: Concept,
) -> Result<f64> {
    Ok(equilibrium_gap_components(game, sigma, epsilon, concept)?.iter().sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::GameShape;
    use crate::test_games::prisoners_dilemma;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_joint(shape: &GameShape, rng: &mut ChaCha8Rng) -> JointDistribution {
        let w = (0..shape.joint_size()).map(|_| rng.random_range(0.0..1.0)).collect();
        JointDistribution::from_weights(shape.clone(), w).unwrap()
    }

    #[test]
    fn solver_gap_examples() {
        let shape = GameShape::new(vec![2, 2]).unwrap();
        let u = JointDistribution::uniform(&shape);
        let p0 = JointDistribution::point_mass(&shape, 0);
        let p3 = JointDistribution::point_mass(&shape, 3);
        assert_eq!(solver_gap(&u, &u).unwrap(), 0.0);
        assert_eq!(solver_gap(&p0, &u).unwrap(), 0.75);
        assert_eq!(solver_gap(&p0, &p3).unwrap(), 1.0);
        let other = JointDistribution::uniform(&GameShape::new(vec![2, 3]).unwrap());
        assert!(matches!(solver_gap(&u, &other), Err(CoreError::ShapeMismatch(_))));
    }

    #[test]
    fn prisoners_dilemma_gaps() {
        let g = prisoners_dilemma();
        let u = JointDistribution::uniform(g.shape());
        assert_eq!(equilibrium_gap(&g, &u, &[0.0, 0.0], Concept::Cce).unwrap(), 1.0);
        let dd = JointDistribution::point_mass(g.shape(), 3);
        assert_eq!(equilibrium_gap(&g, &dd, &[0.0, 0.0], Concept::Cce).unwrap(), 0.0);
        assert_eq!(equilibrium_gap(&g, &dd, &[0.0, 0.0], Concept::Ce).unwrap(), 0.0);
        // CE: recommending C (mass 1/2) to the row player, deviating to D
        // gains 1 on both joints where the row plays C.
        assert_eq!(equilibrium_gap(&g, &u, &[0.0, 0.0], Concept::Ce).unwrap(), 1.0);
    }

    proptest! {
        #[test]
        fn solver_gap_is_a_metric(seed in any::<u64>()) {
            let shape = GameShape::new(vec![3, 2]).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (a, b, c) = (random_joint(&shape, &mut rng), random_joint(&shape, &mut rng), random_joint(&shape, &mut rng));
            let ab = solver_gap(&a, &b).unwrap();
            prop_assert_eq!(ab, solver_gap(&b, &a).unwrap());
            prop_assert!(solver_gap(&a, &a).unwrap() < 1e-15);
            prop_assert!(ab <= solver_gap(&a, &c).unwrap() + solver_gap(&c, &b).unwrap() + 1e-15);
            prop_assert!((0.0..=1.0).contains(&ab));
        }

        #[test]
        fn zero_gap_iff_constraints_hold(seed in any::<u64>(), ce in any::<bool>()) {
            let concept = if ce { Concept::Ce } else { Concept::Cce };
            let shape = GameShape::new(vec![2, 3]).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let game = crate::targets::sample_invariant_game(&shape, crate::game::NormOrder::L2, &mut rng);
            let sigma = random_joint(&shape, &mut rng);
            let eps: Vec<f64> = (0..2).map(|_| rng.random_range(-0.2..1.0)).collect();
            let gap = equilibrium_gap(&game, &sigma, &eps, concept).unwrap();
            let expected = match concept {
                Concept::Cce => cce_deviation_gains(&game).expected(sigma.probs()),
                Concept::Ce => ce_deviation_gains(&game).expected(sigma.probs()),
            };
            let holds = expected.iter().zip(&eps).all(|(g, e)| g.iter().all(|v| *v <= e + 1e-9));
            prop_assert_eq!(gap <= 1e-9, holds);
        }
    }
}
