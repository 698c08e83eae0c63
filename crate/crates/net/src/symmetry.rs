//! Relabelling strategies and players of instances and dual variables.
//!
//! The network commutes with these maps: predicting on a relabelled
//! instance gives the relabelled duals.

use nes_core::{Concept, DualVariables, GameShape, JointDistribution, NormalFormGame, SelectionTargets};

use crate::error::Result;
use crate::input::Instance;

/// A joint tensor carried through a game relabelling as the payoff of every
/// player.
fn permute_tensor(shape: &GameShape, values: &[f64], f: impl Fn(&NormalFormGame) -> NormalFormGame) -> Result<Vec<f64>> {
    let carrier = NormalFormGame::new(shape.clone(), vec![values.to_vec(); shape.num_players()])?;
    Ok(f(&carrier).payoff(0).to_vec())
}

fn permute_targets(
    targets: &SelectionTargets,
    shape: &GameShape,
    new_shape: &GameShape,
    player_of: impl Fn(usize) -> usize,
    f: impl Fn(&NormalFormGame) -> NormalFormGame + Copy,
) -> Result<SelectionTargets> {
    let n = shape.num_players();
    let mut eps_hat = vec![0.0; n];
    let mut eps_cap = vec![0.0; n];
    for p in 0..n {
        eps_hat[player_of(p)] = targets.target_epsilon[p];
        eps_cap[player_of(p)] = targets.epsilon_cap[p];
    }
    Ok(SelectionTargets {
        target_joint: JointDistribution::new(new_shape.clone(), permute_tensor(shape, targets.target_joint.probs(), f)?)?,
        target_epsilon: eps_hat,
        epsilon_cap: eps_cap,
        welfare: permute_tensor(shape, &targets.welfare, f)?,
        rho: targets.rho,
        mu: targets.mu,
    })
}

/// Relabels strategies: `perms[p][a]` is the new index of player `p`'s
/// strategy `a`.
pub fn permute_instance_strategies(inst: &Instance, perms: &[Vec<usize>]) -> Result<Instance> {
    let shape = inst.game.shape();
    let f = |g: &NormalFormGame| g.permute_strategies(perms);
    Ok(Instance::new(f(&inst.game), permute_targets(&inst.targets, shape, shape, |p| p, f)?))
}

/// Relabels players: new player `perm[p]` is old player `p`.
pub fn permute_instance_players(inst: &Instance, perm: &[usize]) -> Result<Instance> {
    let shape = inst.game.shape();
    let f = |g: &NormalFormGame| g.permute_players(perm);
    let game = f(&inst.game);
    let new_shape = game.shape().clone();
    let targets = permute_targets(&inst.targets, shape, &new_shape, |p| perm[p], f)?;
    Ok(Instance::new(game, targets))
}

/// The duals of the strategy-relabelled instance.
pub fn permute_dual_strategies(duals: &DualVariables, perms: &[Vec<usize>]) -> Result<DualVariables> {
    let shape = duals.shape();
    let values = duals
        .values()
        .iter()
        .enumerate()
        .map(|(p, block)| {
            let n = shape.num_strategies(p);
            let perm = &perms[p];
            let mut out = vec![0.0; block.len()];
            match duals.concept() {
                Concept::Cce => (0..n).for_each(|a| out[perm[a]] = block[a]),
                Concept::Ce => {
                    for d in 0..n {
                        for r in 0..n {
                            out[perm[d] * n + perm[r]] = block[d * n + r];
                        }
                    }
                }
            }
            out
        })
        .collect();
    Ok(DualVariables::new(duals.concept(), shape, values)?)
}

/// The duals of the player-relabelled instance.
pub fn permute_dual_players(duals: &DualVariables, perm: &[usize]) -> Result<DualVariables> {
    let shape = duals.shape();
    let n = shape.num_players();
    let mut strategies = vec![0; n];
    let mut values = vec![Vec::new(); n];
    for p in 0..n {
        strategies[perm[p]] = shape.num_strategies(p);
        values[perm[p]] = duals.player(p).to_vec();
    }
    Ok(DualVariables::new(duals.concept(), &GameShape::new(strategies)?, values)?)
}
