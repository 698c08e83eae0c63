//! Assembly of the network input tensor from games and selection targets.

use nes_core::game::z_sigma;
use nes_core::{GameShape, NormalFormGame, SelectionTargets};
use nes_tensor::Tensor;

use crate::error::{NetError, Result};

/// Number of input channels: payoffs, target joint, target epsilon, welfare.
pub const INPUT_CHANNELS: usize = 4;

/// A standardized game together with the targets selecting its equilibrium.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub game: NormalFormGame,
    pub targets: SelectionTargets,
}

impl Instance {
    pub fn new(game: NormalFormGame, targets: SelectionTargets) -> Self {
        Self { game, targets }
    }
}

/// The common shape of a batch of instances.
pub fn batch_shape(batch: &[Instance]) -> Result<GameShape> {
    let first = batch
        .first()
        .ok_or_else(|| NetError::ShapeMismatch("empty batch".into()))?;
    let shape = first.game.shape();
    if let Some(other) = batch.iter().find(|i| i.game.shape() != shape) {
        return Err(NetError::ShapeMismatch(format!(
            "batch mixes {shape} and {}",
            other.game.shape()
        )));
    }
    Ok(shape.clone())
}

/// Builds the `[B, 4, N, |A_1|, ..., |A_N|]` input tensor.
///
/// Channel 0 holds each player's (already standardized) payoff. Channel 1 is
/// the centered, rescaled target joint `Z_sigma (sigma_hat - 1/|A|)`, the same
/// for every player. Channel 2 is the player's target epsilon clipped to
/// `[-eps_cap, eps_cap]`, constant over joint actions. Channel 3 is the
/// (already standardized) welfare, the same for every player.
pub fn assemble_input(batch: &[Instance]) -> Result<Tensor> {
    let shape = batch_shape(batch)?;
    let n = shape.num_players();
    let j = shape.joint_size();
    let zs = z_sigma(j);
    let uniform = 1.0 / j as f64;
    let per_game = INPUT_CHANNELS * n * j;
    let mut data = vec![0.0; batch.len() * per_game];
    for (b, inst) in batch.iter().enumerate() {
        inst.targets.validate(&shape)?;
        let t = &inst.targets;
        let sigma = t.target_joint.probs();
        let base = b * per_game;
        for p in 0..n {
            let eps = t.target_epsilon[p].clamp(-t.epsilon_cap[p], t.epsilon_cap[p]);
            let g = inst.game.payoff(p);
            for a in 0..j {
                data[base + p * j + a] = g[a];
                data[base + (n + p) * j + a] = zs * (sigma[a] - uniform);
                data[base + (2 * n + p) * j + a] = eps;
                data[base + (3 * n + p) * j + a] = t.welfare[a];
            }
        }
    }
    let mut dims = vec![batch.len(), INPUT_CHANNELS, n];
    dims.extend_from_slice(shape.strategies());
    Ok(Tensor::new(dims, data)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nes_core::targets::{make_targets, sample_invariant_game, TargetOptions};
    use nes_core::{JointDistribution, NormOrder, ParamName};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn instance(name: ParamName, seed: u64) -> Instance {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = GameShape::new(vec![2, 3]).unwrap();
        let game = sample_invariant_game(&shape, NormOrder::L2, &mut rng);
        let targets = make_targets(name, &game, &TargetOptions::default(), &mut rng).unwrap();
        Instance::new(game, targets)
    }

    fn channel(t: &Tensor, c: usize) -> Vec<f64> {
        let per = t.len() / (t.shape()[0] * INPUT_CHANNELS);
        t.data()[c * per..(c + 1) * per].to_vec()
    }

    #[test]
    fn max_entropy_targets_give_zero_target_channels() {
        let inst = instance(ParamName::Me, 1);
        let x = assemble_input(&[inst.clone()]).unwrap();
        assert_eq!(x.shape(), &[1, 4, 2, 2, 3]);
        assert!(channel(&x, 1).iter().all(|v| v.abs() < 1e-15));
        assert!(channel(&x, 2).iter().all(|&v| v == 0.0));
        assert!(channel(&x, 3).iter().all(|&v| v == 0.0));
        let g = channel(&x, 0);
        assert_eq!(&g[..6], inst.game.payoff(0));
        assert_eq!(&g[6..], inst.game.payoff(1));
    }

    #[test]
    fn target_epsilon_is_clipped_to_the_cap() {
        let mut inst = instance(ParamName::Me, 2);
        let cap = inst.targets.epsilon_cap.clone();
        inst.targets.target_epsilon = vec![0.5 * cap[0], -10.0 * cap[1]];
        let x = assemble_input(&[inst]).unwrap();
        let eps = channel(&x, 2);
        assert!(eps[..6].iter().all(|&v| v == 0.5 * cap[0]));
        assert!(eps[6..].iter().all(|&v| v == -cap[1]));
    }

    #[test]
    fn target_joint_channel_is_centered_and_scaled() {
        let mut inst = instance(ParamName::Mre, 3);
        let shape = inst.game.shape().clone();
        inst.targets.target_joint =
            JointDistribution::from_weights(shape, vec![1.0, 1.0, 1.0, 1.0, 7.0, 1.0]).unwrap();
        let x = assemble_input(&[inst]).unwrap();
        let s = channel(&x, 1);
        let zs = z_sigma(6);
        assert!((s[4] - zs * (7.0 / 12.0 - 1.0 / 6.0)).abs() < 1e-12);
        assert!((s[0] - zs * (1.0 / 12.0 - 1.0 / 6.0)).abs() < 1e-12);
        assert_eq!(&s[..6], &s[6..]);
    }

    #[test]
    fn mixed_shapes_are_rejected() {
        let a = instance(ParamName::Me, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let shape = GameShape::new(vec![2, 2]).unwrap();
        let game = sample_invariant_game(&shape, NormOrder::L2, &mut rng);
        let b = Instance::new(game, SelectionTargets::max_entropy(&shape, NormOrder::L2, 100.0));
        assert!(matches!(assemble_input(&[a, b]), Err(NetError::ShapeMismatch(_))));
        assert!(assemble_input(&[]).is_err());
    }
}
