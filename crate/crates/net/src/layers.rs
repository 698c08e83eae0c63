//! Equivariant building blocks recorded on an autodiff tape.
//!
//! Every function here commutes with relabelling any player's strategies.
//! Functions that pool over players additionally commute with relabelling
//! players on cubic games.

use nes_core::GameShape;
use nes_tensor::{BatchNormMode, Reduction, Tape, Tensor, Var};

use crate::config::{CceDualPool, CeDualPool, OuterOp, PayoffPool, PayoffToDualPool, Phi};
use crate::error::{NetError, Result};

/// Index of the first strategy axis in a payoff activation.
const STRATEGY_AXIS: usize = 3;

fn reduction(phi: Phi) -> Reduction {
    match phi {
        Phi::Mean => Reduction::Mean,
        Phi::Max => Reduction::Max,
    }
}

/// Pools over `axes`, then broadcasts back to the input shape.
fn pool_broadcast(tape: &mut Tape, x: Var, axes: &[usize], phi: Phi) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    let r = tape.reduce(x, axes, reduction(phi), true)?;
    Ok(tape.broadcast_to(r, &shape)?)
}

fn mean_of(tape: &mut Tape, terms: &[Var]) -> Result<Var> {
    let sum = tape.add_many(terms)?;
    if terms.len() == 1 {
        return Ok(sum);
    }
    Ok(tape.scale(sum, 1.0 / terms.len() as f64)?)
}

fn strategy_axes(n: usize, offset: usize, except: Option<usize>) -> Vec<usize> {
    (0..n).filter(|&r| Some(r) != except).map(|r| offset + r).collect()
}

/// One per-q branch of a payoff pooling family.
fn payoff_branch_for(tape: &mut Tape, x: Var, pool: PayoffPool, phi: Phi, q: usize) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    let n = shape[2];
    let s = STRATEGY_AXIS;
    match pool {
        PayoffPool::PlayersAndStrategyOf => pool_broadcast(tape, x, &[2, s + q], phi),
        PayoffPool::PlayersAndStrategiesOfOthers => {
            let mut axes = vec![2];
            axes.extend(strategy_axes(n, s, Some(q)));
            pool_broadcast(tape, x, &axes, phi)
        }
        PayoffPool::StrategyOf => pool_broadcast(tape, x, &[s + q], phi),
        PayoffPool::StrategiesOfOthers => pool_broadcast(tape, x, &strategy_axes(n, s, Some(q)), phi),
        PayoffPool::OwnStrategyOfPlayer | PayoffPool::OthersStrategiesOfPlayer => {
            // Output player p pools player q's payoff over p's own axis (or
            // over every axis but p's).
            let slice = tape.select(x, 2, q)?;
            let per_output = (0..n)
                .map(|p| {
                    let axes = if pool == PayoffPool::OwnStrategyOfPlayer {
                        vec![2 + p]
                    } else {
                        strategy_axes(n, 2, Some(p))
                    };
                    pool_broadcast(tape, slice, &axes, phi)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(tape.stack(&per_output, 2)?)
        }
        PayoffPool::PlayerOwnStrategy | PayoffPool::PlayerOthersStrategies => {
            let slice = tape.select(x, 2, q)?;
            let axes = if pool == PayoffPool::PlayerOwnStrategy {
                vec![2 + q]
            } else {
                strategy_axes(n, 2, Some(q))
            };
            let r = tape.reduce(slice, &axes, reduction(phi), true)?;
            let mut kept = tape.shape(r).to_vec();
            kept.insert(2, 1);
            let r = tape.reshape(r, &kept)?;
            Ok(tape.broadcast_to(r, &shape)?)
        }
        PayoffPool::Identity | PayoffPool::Strategies | PayoffPool::Global | PayoffPool::Players => {
            unreachable!("not a per-player family")
        }
    }
}

/// Number of channel blocks [`payoff_branches`] concatenates.
pub fn payoff_branch_count(pools: &[PayoffPool], phis: &[Phi], num_players: usize, share: bool) -> usize {
    pools
        .iter()
        .map(|&pool| match pool {
            PayoffPool::Identity => 1,
            p if p.is_per_player() && !share => phis.len() * num_players,
            _ => phis.len(),
        })
        .sum()
}

/// Concatenates every branch of a payoff layer along the channel axis.
pub fn payoff_branches(tape: &mut Tape, x: Var, pools: &[PayoffPool], phis: &[Phi], share: bool) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    let n = shape[2];
    let s = STRATEGY_AXIS;
    let mut branches = Vec::new();
    for &pool in pools {
        if pool == PayoffPool::Identity {
            branches.push(x);
            continue;
        }
        for &phi in phis {
            match pool {
                PayoffPool::Strategies => branches.push(pool_broadcast(tape, x, &strategy_axes(n, s, None), phi)?),
                PayoffPool::Global => {
                    let axes: Vec<usize> = (2..shape.len()).collect();
                    branches.push(pool_broadcast(tape, x, &axes, phi)?);
                }
                PayoffPool::Players => branches.push(pool_broadcast(tape, x, &[2], phi)?),
                _ => {
                    let per_q = (0..n)
                        .map(|q| payoff_branch_for(tape, x, pool, phi, q))
                        .collect::<Result<Vec<_>>>()?;
                    if share {
                        branches.push(mean_of(tape, &per_q)?);
                    } else {
                        branches.extend(per_q);
                    }
                }
            }
        }
    }
    Ok(tape.concat(&branches, 1)?)
}

/// `x` contracted with `w[c_out, c_in]` on axis 1, plus `b[c_out]`.
pub fn linear(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = tape.channel_linear(x, w, 1)?;
    let shape = tape.shape(y).to_vec();
    let mut bias_shape = vec![1; shape.len()];
    bias_shape[1] = shape[1];
    let b = tape.reshape(b, &bias_shape)?;
    let b = tape.broadcast_to(b, &shape)?;
    Ok(tape.add(y, b)?)
}

/// Branches of the payoff-to-dual map for player `p`, concatenated:
/// `[B, K * C, |A_p|]`.
pub fn payoff_to_dual_branches(
    tape: &mut Tape,
    x: Var,
    p: usize,
    pools: &[PayoffToDualPool],
    phis: &[Phi],
) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    let n = shape[2];
    let (b, c, ap) = (shape[0], shape[1], shape[STRATEGY_AXIS + p]);
    let own = tape.select(x, 2, p)?;
    let mut branches = Vec::new();
    for &pool in pools {
        for &phi in phis {
            let kind = reduction(phi);
            let v = match pool {
                PayoffToDualPool::OwnPayoffOthersStrategies => {
                    tape.reduce(own, &strategy_axes(n, 2, Some(p)), kind, false)?
                }
                PayoffToDualPool::AllPayoffsOthersStrategies => {
                    let mut axes = vec![2];
                    axes.extend(strategy_axes(n, STRATEGY_AXIS, Some(p)));
                    tape.reduce(x, &axes, kind, false)?
                }
                PayoffToDualPool::OwnPayoffAllStrategies | PayoffToDualPool::AllPayoffsAllStrategies => {
                    let r = if pool == PayoffToDualPool::OwnPayoffAllStrategies {
                        tape.reduce(own, &strategy_axes(n, 2, None), kind, false)?
                    } else {
                        let axes: Vec<usize> = (2..shape.len()).collect();
                        tape.reduce(x, &axes, kind, false)?
                    };
                    let r = tape.reshape(r, &[b, c, 1])?;
                    tape.broadcast_to(r, &[b, c, ap])?
                }
            };
            branches.push(v);
        }
    }
    Ok(tape.concat(&branches, 1)?)
}

/// Stacks per-player dual activations along a new player axis 2.
pub fn stack_players(tape: &mut Tape, duals: &[Var], shape: &GameShape) -> Result<Var> {
    if !shape.is_cubic() {
        return Err(NetError::NonCubicStackRequested(shape.to_string()));
    }
    Ok(tape.stack(duals, 2)?)
}

/// Combines two CCE-shaped heads `[B, C, |A_p|]` into a CE-shaped
/// `[B, C, |A_p|, |A_p|]` tensor `out[a', a''] = rec[a''] (op) dev[a']`,
/// before any nonlinearity or masking.
pub fn outer_combine(tape: &mut Tape, rec: Var, dev: Var, op: OuterOp) -> Result<Var> {
    let s = tape.shape(rec).to_vec();
    if tape.shape(dev) != s.as_slice() || s.len() != 3 {
        return Err(NetError::ShapeMismatch(format!(
            "outer operation on {:?} and {:?}",
            s,
            tape.shape(dev)
        )));
    }
    let full = [s[0], s[1], s[2], s[2]];
    let r = tape.reshape(rec, &[s[0], s[1], 1, s[2]])?;
    let r = tape.broadcast_to(r, &full)?;
    let d = tape.reshape(dev, &[s[0], s[1], s[2], 1])?;
    let d = tape.broadcast_to(d, &full)?;
    Ok(match op {
        OuterOp::Sum => tape.add(r, d)?,
        OuterOp::Product => tape.mul(r, d)?,
    })
}

/// Number of channel blocks the CCE dual branches concatenate.
pub fn cce_branch_count(pools: &[CceDualPool], phis: &[Phi]) -> usize {
    pools
        .iter()
        .map(|p| if *p == CceDualPool::Identity { 1 } else { phis.len() })
        .sum()
}

/// Number of channel blocks the CE dual branches concatenate.
pub fn ce_branch_count(pools: &[CeDualPool], phis: &[Phi]) -> usize {
    pools.iter().map(|p| if p.is_pooled() { phis.len() } else { 1 }).sum()
}

/// Branches of a CCE dual layer for every player. Player-pooling branches
/// are zero on non-cubic games.
pub fn cce_dual_branches(
    tape: &mut Tape,
    duals: &[Var],
    shape: &GameShape,
    pools: &[CceDualPool],
    phis: &[Phi],
) -> Result<Vec<Var>> {
    let cubic = shape.is_cubic();
    let stacked = if cubic && pools.iter().any(|p| p.needs_cubic()) {
        Some(stack_players(tape, duals, shape)?)
    } else {
        None
    };
    let mut shared: Vec<Option<Var>> = Vec::new();
    for &pool in pools {
        for &phi in phis {
            let v = match (pool, stacked) {
                (CceDualPool::PlayersAndDeviations, Some(st)) => {
                    let r = tape.reduce(st, &[2, 3], reduction(phi), false)?;
                    let s = tape.shape(r).to_vec();
                    Some(tape.reshape(r, &[s[0], s[1], 1])?)
                }
                _ => None,
            };
            shared.push(v);
        }
    }
    duals
        .iter()
        .map(|&alpha| {
            let s = tape.shape(alpha).to_vec();
            let mut branches = Vec::new();
            let mut k = 0;
            for &pool in pools {
                if pool == CceDualPool::Identity {
                    branches.push(alpha);
                    continue;
                }
                for &phi in phis {
                    let v = match pool {
                        CceDualPool::Deviations => pool_broadcast(tape, alpha, &[2], phi)?,
                        _ => match shared[k] {
                            Some(v) => tape.broadcast_to(v, &s)?,
                            None => tape.constant(Tensor::zeros(&s))?,
                        },
                    };
                    branches.push(v);
                    k += 1;
                }
            }
            Ok(tape.concat(&branches, 1)?)
        })
        .collect()
}

/// Branches of a CE dual layer for every player. The player-pooling branch
/// is zero on non-cubic games.
pub fn ce_dual_branches(
    tape: &mut Tape,
    duals: &[Var],
    shape: &GameShape,
    pools: &[CeDualPool],
    phis: &[Phi],
) -> Result<Vec<Var>> {
    let cubic = shape.is_cubic();
    let mut player_pool = Vec::new();
    if pools.contains(&CeDualPool::PoolPlayersAndBoth) && cubic {
        let st = stack_players(tape, duals, shape)?;
        for &phi in phis {
            let r = tape.reduce(st, &[2, 3, 4], reduction(phi), false)?;
            let s = tape.shape(r).to_vec();
            player_pool.push(tape.reshape(r, &[s[0], s[1], 1, 1])?);
        }
    }
    duals
        .iter()
        .map(|&alpha| {
            let s = tape.shape(alpha).to_vec();
            let mut branches = Vec::new();
            for &pool in pools {
                match pool {
                    CeDualPool::Identity => {
                        branches.push(alpha);
                        continue;
                    }
                    CeDualPool::Transpose => {
                        branches.push(tape.transpose(alpha, &[0, 1, 3, 2])?);
                        continue;
                    }
                    _ => {}
                }
                for (i, &phi) in phis.iter().enumerate() {
                    let kind = reduction(phi);
                    let v = match pool {
                        // Pool over the first index: a function of the
                        // second, laid out [B, C, 1, A].
                        CeDualPool::PoolDeviation => {
                            let k = tape.reduce(alpha, &[2], kind, true)?;
                            tape.broadcast_to(k, &s)?
                        }
                        CeDualPool::PoolRecommendationTransposed => {
                            let k = tape.reduce(alpha, &[2], kind, true)?;
                            let k = tape.transpose(k, &[0, 1, 3, 2])?;
                            tape.broadcast_to(k, &s)?
                        }
                        // Pool over the second index: a function of the
                        // first, laid out [B, C, A, 1].
                        CeDualPool::PoolRecommendation => {
                            let r = tape.reduce(alpha, &[3], kind, true)?;
                            tape.broadcast_to(r, &s)?
                        }
                        CeDualPool::PoolDeviationTransposed => {
                            let r = tape.reduce(alpha, &[3], kind, true)?;
                            let r = tape.transpose(r, &[0, 1, 3, 2])?;
                            tape.broadcast_to(r, &s)?
                        }
                        CeDualPool::PoolBoth => pool_broadcast(tape, alpha, &[2, 3], phi)?,
                        CeDualPool::PoolPlayersAndBoth => match player_pool.get(i) {
                            Some(&v) => tape.broadcast_to(v, &s)?,
                            None => tape.constant(Tensor::zeros(&s))?,
                        },
                        CeDualPool::Identity | CeDualPool::Transpose => unreachable!(),
                    };
                    branches.push(v);
                }
            }
            Ok(tape.concat(&branches, 1)?)
        })
        .collect()
}

/// Batch normalization over per-player dual activations with statistics
/// shared across players (channel axis 1).
pub fn joint_batchnorm(
    tape: &mut Tape,
    duals: &[Var],
    gamma: Var,
    beta: Var,
    mode: BatchNormMode<'_>,
) -> Result<(Vec<Var>, Var)> {
    let shapes: Vec<Vec<usize>> = duals.iter().map(|&d| tape.shape(d).to_vec()).collect();
    let flat = duals
        .iter()
        .zip(&shapes)
        .map(|(&d, s)| {
            let rest: usize = s[2..].iter().product();
            tape.reshape(d, &[s[0], s[1], rest])
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let joined = tape.concat(&flat, 2)?;
    let normed = tape.batchnorm(joined, gamma, beta, mode)?;
    let mut offset = 0;
    let mut out = Vec::with_capacity(duals.len());
    for s in &shapes {
        let rest: usize = s[2..].iter().product();
        let piece = tape.narrow(normed, 2, offset, rest)?;
        out.push(tape.reshape(piece, s)?);
        offset += rest;
    }
    Ok((out, normed))
}
