//! Normal-form games, joint distributions and deviation gains.
//!
//! Payoff tensors are stored flat in row-major order: the joint action
//! `(a_1, ..., a_N)` lives at index `sum_p a_p * stride_p`, where the last
//! player's strategy varies fastest. [`GameShape::joint_index`] and
//! [`GameShape::joint_actions`] are the two halves of that bijection.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::{Mutex, OnceLock};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Absolute tolerance used when checking that a joint sums to one.
pub const DISTRIBUTION_TOL: f64 = 1e-9;

/// Strategy counts of every player.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct GameShape {
    strategies: Vec<usize>,
    strides: Vec<usize>,
    joint_size: usize,
}

impl GameShape {
    pub fn new(strategies: Vec<usize>) -> Result<Self> {
        if strategies.len() < 2 {
            return Err(CoreError::InvalidShape(format!(
                "need at least two players, got {}",
                strategies.len()
            )));
        }
        if let Some(p) = strategies.iter().position(|&n| n < 2) {
            return Err(CoreError::InvalidShape(format!(
                "player {p} has {} strategies, need at least two",
                strategies[p]
            )));
        }
        let mut strides = vec![1; strategies.len()];
        for p in (0..strategies.len() - 1).rev() {
            strides[p] = strides[p + 1] * strategies[p + 1];
        }
        let joint_size = strides[0] * strategies[0];
        Ok(Self {
            strategies,
            strides,
            joint_size,
        })
    }

    /// A cubic shape: `num_players` players with `n` strategies each.
    pub fn cubic(num_players: usize, n: usize) -> Result<Self> {
        Self::new(vec![n; num_players])
    }

    pub fn num_players(&self) -> usize {
        self.strategies.len()
    }

    pub fn strategies(&self) -> &[usize] {
        &self.strategies
    }

    pub fn num_strategies(&self, player: usize) -> usize {
        self.strategies[player]
    }

    pub fn joint_size(&self) -> usize {
        self.joint_size
    }

    /// Row-major stride of each player's axis.
    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    /// All players have the same number of strategies.
    pub fn is_cubic(&self) -> bool {
        self.strategies.windows(2).all(|w| w[0] == w[1])
    }

    pub fn joint_index(&self, actions: &[usize]) -> usize {
        debug_assert_eq!(actions.len(), self.num_players());
        actions
            .iter()
            .zip(&self.strides)
            .map(|(a, s)| a * s)
            .sum()
    }

    pub fn joint_actions(&self, index: usize) -> Vec<usize> {
        (0..self.num_players())
            .map(|p| self.action_of(index, p))
            .collect()
    }

    /// Strategy of `player` inside the joint action at `index`.
    #[inline]
    pub fn action_of(&self, index: usize, player: usize) -> usize {
        (index / self.strides[player]) % self.strategies[player]
    }

    /// Index of the joint obtained by replacing `player`'s strategy with `action`.
    #[inline]
    pub fn with_action(&self, index: usize, player: usize, action: usize) -> usize {
        let current = self.action_of(index, player);
        index + action * self.strides[player] - current * self.strides[player]
    }
}

impl TryFrom<Vec<usize>> for GameShape {
    type Error = CoreError;

    fn try_from(value: Vec<usize>) -> Result<Self> {
        Self::new(value)
    }
}

impl From<GameShape> for Vec<usize> {
    fn from(shape: GameShape) -> Self {
        shape.strategies
    }
}

impl fmt::Display for GameShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.strategies.iter().map(|n| n.to_string()).collect();
        write!(f, "{}", parts.join("x"))
    }
}

impl FromStr for GameShape {
    type Err = CoreError;

    /// Parses `AxBxC` strings such as `2x2` or `3x3x3`.
    fn from_str(s: &str) -> Result<Self> {
        let strategies = s
            .split(['x', 'X'])
            .map(|part| {
                part.trim().parse::<usize>().map_err(|_| {
                    CoreError::InvalidShape(format!("cannot parse `{s}`, expected e.g. 2x3"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(strategies)
    }
}

/// Norm used to standardize payoff tensors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum NormOrder {
    #[serde(rename = "1")]
    L1,
    #[default]
    #[serde(rename = "2")]
    L2,
    #[serde(rename = "inf")]
    LInf,
}

impl NormOrder {
    pub fn norm(self, values: &[f64]) -> f64 {
        match self {
            NormOrder::L1 => values.iter().map(|v| v.abs()).sum(),
            NormOrder::L2 => values.iter().map(|v| v * v).sum::<f64>().sqrt(),
            NormOrder::LInf => values.iter().fold(0.0, |m, v| m.max(v.abs())),
        }
    }

    /// The scale `Z_m` a standardized tensor with `joint_size` elements is
    /// normalized to, chosen so that elements have unit variance.
    ///
    /// For `L2` this is the closed form `sqrt(|A|)`. For `L1` and `LInf` there
    /// is no closed form: the constant is `sqrt(|A| / E[|g|_2^2 / |g|_m^2])`
    /// for a centered isotropic Gaussian `g`, estimated once per size with
    /// [`SCALE_SIMULATION_SAMPLES`] draws from a fixed seed and memoized. For
    /// `L2` the same expression is exactly `sqrt(|A|)`, so all three norms
    /// share one definition.
    pub fn scale(self, joint_size: usize) -> f64 {
        match self {
            NormOrder::L2 => (joint_size as f64).sqrt(),
            NormOrder::L1 | NormOrder::LInf => simulated_scale(self, joint_size),
        }
    }
}

impl fmt::Display for NormOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NormOrder::L1 => write!(f, "1"),
            NormOrder::L2 => write!(f, "2"),
            NormOrder::LInf => write!(f, "inf"),
        }
    }
}

impl FromStr for NormOrder {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "1" | "l1" => Ok(NormOrder::L1),
            "2" | "l2" => Ok(NormOrder::L2),
            "inf" | "linf" | "max" => Ok(NormOrder::LInf),
            other => Err(CoreError::InvalidConfig(format!("unknown norm `{other}`"))),
        }
    }
}

/// Gaussian draws used to estimate `Z_1` and `Z_inf`.
pub const SCALE_SIMULATION_SAMPLES: usize = 4096;
const SCALE_SIMULATION_SEED: u64 = 0x5eed_2a11;

fn simulated_scale(norm: NormOrder, joint_size: usize) -> f64 {
    static CACHE: OnceLock<Mutex<HashMap<(NormOrder, usize), f64>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(&z) = cache.lock().unwrap().get(&(norm, joint_size)) {
        return z;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(SCALE_SIMULATION_SEED ^ joint_size as u64);
    let mut buf = vec![0.0; joint_size];
    let mut ratio = 0.0;
    for _ in 0..SCALE_SIMULATION_SAMPLES {
        for v in buf.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        center(&mut buf);
        let l2 = NormOrder::L2.norm(&buf);
        let lm = norm.norm(&buf);
        ratio += (l2 * l2) / (lm * lm);
    }
    ratio /= SCALE_SIMULATION_SAMPLES as f64;
    let z = (joint_size as f64 / ratio).sqrt();
    cache.lock().unwrap().insert((norm, joint_size), z);
    z
}

/// `Z_sigma = |A| sqrt((|A| + 1) / (|A| - 1))`, the scale that gives the
/// centered target joint of a flat Dirichlet unit element variance.
pub fn z_sigma(joint_size: usize) -> f64 {
    let n = joint_size as f64;
    n * ((n + 1.0) / (n - 1.0)).sqrt()
}

pub(crate) fn center(values: &mut [f64]) {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    values.iter_mut().for_each(|v| *v -= mean);
}

/// Zero-mean, `L_m`-norm `Z_m` version of `values`, plus the positive factor
/// the centered values were multiplied by. `None` if `values` is constant.
pub fn standardize_tensor(values: &[f64], norm: NormOrder) -> Option<(Vec<f64>, f64)> {
    let mut out = values.to_vec();
    center(&mut out);
    let n = norm.norm(&out);
    let max_abs = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !(n > 1e-14 * max_abs.max(f64::MIN_POSITIVE)) || n == 0.0 {
        return None;
    }
    let factor = norm.scale(values.len()) / n;
    out.iter_mut().for_each(|v| *v *= factor);
    Some((out, factor))
}

/// Per-player payoff tensors over the joint strategy space.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalFormGame {
    shape: GameShape,
    payoffs: Vec<Vec<f64>>,
}

impl NormalFormGame {
    pub fn new(shape: GameShape, payoffs: Vec<Vec<f64>>) -> Result<Self> {
        if payoffs.len() != shape.num_players() {
            return Err(CoreError::ShapeMismatch(format!(
                "{} payoff tensors for {} players",
                payoffs.len(),
                shape.num_players()
            )));
        }
        for (p, g) in payoffs.iter().enumerate() {
            if g.len() != shape.joint_size() {
                return Err(CoreError::ShapeMismatch(format!(
                    "player {p} payoff has {} entries, shape {shape} needs {}",
                    g.len(),
                    shape.joint_size()
                )));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(CoreError::NonFinite("payoffs"));
            }
        }
        Ok(Self { shape, payoffs })
    }

    /// Two-player game from row-major row and column payoff matrices.
    pub fn bimatrix(rows: usize, cols: usize, row: Vec<f64>, col: Vec<f64>) -> Result<Self> {
        Self::new(GameShape::new(vec![rows, cols])?, vec![row, col])
    }

    pub fn shape(&self) -> &GameShape {
        &self.shape
    }

    pub fn num_players(&self) -> usize {
        self.shape.num_players()
    }

    pub fn payoffs(&self) -> &[Vec<f64>] {
        &self.payoffs
    }

    pub fn payoff(&self, player: usize) -> &[f64] {
        &self.payoffs[player]
    }

    /// `sum_p G_p(a)`.
    pub fn welfare(&self) -> Vec<f64> {
        let mut w = vec![0.0; self.shape.joint_size()];
        for g in &self.payoffs {
            w.iter_mut().zip(g).for_each(|(w, g)| *w += g);
        }
        w
    }

    /// Two players whose payoffs sum to zero everywhere (within `tol`).
    pub fn is_zero_sum(&self, tol: f64) -> bool {
        self.num_players() == 2
            && self.payoffs[0]
                .iter()
                .zip(&self.payoffs[1])
                .all(|(a, b)| (a + b).abs() <= tol)
    }

    /// Shift every player's payoff to zero mean and scale it to `L_m` norm
    /// `Z_m`. Equilibria are unchanged because the scale is positive.
    pub fn standardize(&self, norm: NormOrder) -> Result<Self> {
        Ok(self.standardize_with_factors(norm)?.0)
    }

    /// Like [`standardize`](Self::standardize), also returning the positive
    /// factor each player's centered payoff was multiplied by.
    pub fn standardize_with_factors(&self, norm: NormOrder) -> Result<(Self, Vec<f64>)> {
        let mut payoffs = Vec::with_capacity(self.num_players());
        let mut factors = Vec::with_capacity(self.num_players());
        for (player, g) in self.payoffs.iter().enumerate() {
            let (s, f) =
                standardize_tensor(g, norm).ok_or(CoreError::ConstantPayoff { player })?;
            payoffs.push(s);
            factors.push(f);
        }
        Ok((
            Self {
                shape: self.shape.clone(),
                payoffs,
            },
            factors,
        ))
    }

    /// Relabel strategies: `perms[p][a]` is the new index of player `p`'s
    /// strategy `a`.
    pub fn permute_strategies(&self, perms: &[Vec<usize>]) -> Self {
        let shape = &self.shape;
        let mut payoffs = vec![vec![0.0; shape.joint_size()]; self.num_players()];
        for j in 0..shape.joint_size() {
            let target: Vec<usize> = (0..shape.num_players())
                .map(|p| perms[p][shape.action_of(j, p)])
                .collect();
            let t = shape.joint_index(&target);
            for p in 0..self.num_players() {
                payoffs[p][t] = self.payoffs[p][j];
            }
        }
        Self {
            shape: shape.clone(),
            payoffs,
        }
    }

    /// Relabel players: new player `perm[p]` is old player `p`. The tensor
    /// axes move with their players, so the shape is permuted too.
    pub fn permute_players(&self, perm: &[usize]) -> Self {
        let n = self.num_players();
        let mut new_strats = vec![0; n];
        for p in 0..n {
            new_strats[perm[p]] = self.shape.num_strategies(p);
        }
        let new_shape = GameShape::new(new_strats).expect("permuted shape is valid");
        let mut payoffs = vec![vec![0.0; self.shape.joint_size()]; n];
        for j in 0..self.shape.joint_size() {
            let mut actions = vec![0; n];
            for p in 0..n {
                actions[perm[p]] = self.shape.action_of(j, p);
            }
            let t = new_shape.joint_index(&actions);
            for p in 0..n {
                payoffs[perm[p]][t] = self.payoffs[p][j];
            }
        }
        Self {
            shape: new_shape,
            payoffs,
        }
    }
}

/// A probability mass function over joint actions.
#[derive(Debug, Clone, PartialEq)]
pub struct JointDistribution {
    shape: GameShape,
    probs: Vec<f64>,
}

impl JointDistribution {
    pub fn new(shape: GameShape, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != shape.joint_size() {
            return Err(CoreError::ShapeMismatch(format!(
                "joint has {} entries, shape {shape} needs {}",
                probs.len(),
                shape.joint_size()
            )));
        }
        if let Some(v) = probs.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(CoreError::InvalidDistribution(format!("entry {v} is not >= 0")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > DISTRIBUTION_TOL {
            return Err(CoreError::InvalidDistribution(format!(
                "entries sum to {total}"
            )));
        }
        Ok(Self { shape, probs })
    }

    /// Normalizes nonnegative weights into a distribution.
    pub fn from_weights(shape: GameShape, mut weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(CoreError::InvalidDistribution(format!(
                "weights sum to {total}"
            )));
        }
        weights.iter_mut().for_each(|w| *w /= total);
        Self::new(shape, weights)
    }

    pub fn uniform(shape: &GameShape) -> Self {
        let n = shape.joint_size();
        Self {
            shape: shape.clone(),
            probs: vec![1.0 / n as f64; n],
        }
    }

    pub fn point_mass(shape: &GameShape, index: usize) -> Self {
        let mut probs = vec![0.0; shape.joint_size()];
        probs[index] = 1.0;
        Self {
            shape: shape.clone(),
            probs,
        }
    }

    /// Independent play: the product of per-player marginals.
    pub fn product(shape: &GameShape, marginals: &[Vec<f64>]) -> Result<Self> {
        let probs = (0..shape.joint_size())
            .map(|j| {
                (0..shape.num_players())
                    .map(|p| marginals[p][shape.action_of(j, p)])
                    .product()
            })
            .collect();
        Self::new(shape.clone(), probs)
    }

    pub fn shape(&self) -> &GameShape {
        &self.shape
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// `sigma(a_p) = sum_{a_-p} sigma(a)` for every player.
    pub fn marginals(&self) -> Vec<Vec<f64>> {
        let shape = &self.shape;
        let mut out: Vec<Vec<f64>> = shape.strategies().iter().map(|&n| vec![0.0; n]).collect();
        for (j, &s) in self.probs.iter().enumerate() {
            for (p, m) in out.iter_mut().enumerate() {
                m[shape.action_of(j, p)] += s;
            }
        }
        out
    }

    /// Convex combination `sum_i w_i sigma_i`.
    pub fn mixture(components: &[&JointDistribution], weights: &[f64]) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| CoreError::InvalidDistribution("empty mixture".into()))?;
        let mut probs = vec![0.0; first.probs.len()];
        for (c, &w) in components.iter().zip(weights) {
            if c.shape != first.shape {
                return Err(CoreError::ShapeMismatch("mixture of different shapes".into()));
            }
            probs.iter_mut().zip(&c.probs).for_each(|(p, q)| *p += w * q);
        }
        Self::new(first.shape.clone(), probs)
    }

    /// Expected payoff of every player.
    pub fn expected_payoffs(&self, game: &NormalFormGame) -> Vec<f64> {
        game.payoffs()
            .iter()
            .map(|g| g.iter().zip(&self.probs).map(|(g, s)| g * s).sum())
            .collect()
    }
}

/// `A_p^CCE(a'_p, a) = G_p(a'_p, a_-p) - G_p(a)`, laid out `[a'_p][a]` per player.
#[derive(Debug, Clone, PartialEq)]
pub struct CceGains {
    shape: GameShape,
    gains: Vec<Vec<f64>>,
}

impl CceGains {
    pub fn shape(&self) -> &GameShape {
        &self.shape
    }

    /// The `[|A_p|, |A|]` block of one player.
    pub fn player(&self, p: usize) -> &[f64] {
        &self.gains[p]
    }

    pub fn get(&self, p: usize, deviation: usize, joint: usize) -> f64 {
        self.gains[p][deviation * self.shape.joint_size() + joint]
    }

    /// `sum_a sigma(a) A_p(a'_p, a)` per player and deviation.
    pub fn expected(&self, sigma: &[f64]) -> Vec<Vec<f64>> {
        let n = self.shape.joint_size();
        self.gains
            .iter()
            .map(|g| g.chunks_exact(n).map(|row| dot(row, sigma)).collect())
            .collect()
    }

    /// Scales every player's gains, e.g. to undo a payoff standardization.
    pub fn scaled(&self, factors: &[f64]) -> Self {
        Self {
            shape: self.shape.clone(),
            gains: self
                .gains
                .iter()
                .zip(factors)
                .map(|(g, f)| g.iter().map(|v| v * f).collect())
                .collect(),
        }
    }
}

/// `A_p^CE(a'_p, a''_p, a)`, laid out `[a'_p][a''_p][a]` per player. Nonzero
/// only where `a_p = a''_p` and `a'_p != a''_p`.
#[derive(Debug, Clone, PartialEq)]
pub struct CeGains {
    shape: GameShape,
    gains: Vec<Vec<f64>>,
}

impl CeGains {
    pub fn shape(&self) -> &GameShape {
        &self.shape
    }

    pub fn player(&self, p: usize) -> &[f64] {
        &self.gains[p]
    }

    pub fn get(&self, p: usize, deviation: usize, recommendation: usize, joint: usize) -> f64 {
        let n = self.shape.num_strategies(p);
        let j = self.shape.joint_size();
        self.gains[p][(deviation * n + recommendation) * j + joint]
    }

    /// `sum_a sigma(a) A_p(a'_p, a''_p, a)`, `[a'_p][a''_p]` row-major.
    pub fn expected(&self, sigma: &[f64]) -> Vec<Vec<f64>> {
        let n = self.shape.joint_size();
        self.gains
            .iter()
            .map(|g| g.chunks_exact(n).map(|row| dot(row, sigma)).collect())
            .collect()
    }

    /// Sum over recommendations, which reproduces the CCE gains.
    pub fn aggregate(&self) -> CceGains {
        let j = self.shape.joint_size();
        let gains = self
            .gains
            .iter()
            .enumerate()
            .map(|(p, g)| {
                let n = self.shape.num_strategies(p);
                let mut out = vec![0.0; n * j];
                for dev in 0..n {
                    for rec in 0..n {
                        let src = &g[(dev * n + rec) * j..(dev * n + rec + 1) * j];
                        out[dev * j..(dev + 1) * j]
                            .iter_mut()
                            .zip(src)
                            .for_each(|(o, s)| *o += s);
                    }
                }
                out
            })
            .collect();
        CceGains {
            shape: self.shape.clone(),
            gains,
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn cce_deviation_gains(game: &NormalFormGame) -> CceGains {
    let shape = game.shape();
    let j = shape.joint_size();
    let gains = (0..game.num_players())
        .map(|p| {
            let g = game.payoff(p);
            let n = shape.num_strategies(p);
            let mut out = vec![0.0; n * j];
            for dev in 0..n {
                for a in 0..j {
                    out[dev * j + a] = g[shape.with_action(a, p, dev)] - g[a];
                }
            }
            out
        })
        .collect();
    CceGains {
        shape: shape.clone(),
        gains,
    }
}

pub fn ce_deviation_gains(game: &NormalFormGame) -> CeGains {
    let shape = game.shape();
    let j = shape.joint_size();
    let gains = (0..game.num_players())
        .map(|p| {
            let g = game.payoff(p);
            let n = shape.num_strategies(p);
            let mut out = vec![0.0; n * n * j];
            for dev in 0..n {
                for a in 0..j {
                    let rec = shape.action_of(a, p);
                    if rec != dev {
                        out[(dev * n + rec) * j + a] = g[shape.with_action(a, p, dev)] - g[a];
                    }
                }
            }
            out
        })
        .collect();
    CeGains {
        shape: shape.clone(),
        gains,
    }
}

/// Sum over players of the best unilateral improvement against the product
/// of `sigma`'s marginals, each clipped below at zero. Zero exactly when the
/// marginals form a Nash equilibrium.
pub fn exploitability_of_marginals(game: &NormalFormGame, sigma: &JointDistribution) -> f64 {
    let product = JointDistribution::product(game.shape(), &sigma.marginals())
        .expect("product of marginals is a distribution");
    cce_deviation_gains(game)
        .expected(product.probs())
        .iter()
        .map(|gains| gains.iter().fold(0.0f64, |m, &g| m.max(g)))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::test_games::{matching_pennies, prisoners_dilemma};

    #[test]
    fn shape_validation_and_index_bijection() {
        assert!(GameShape::new(vec![2]).is_err());
        assert!(GameShape::new(vec![2, 1]).is_err());
        let shape: GameShape = "2x3x4".parse().unwrap();
        assert_eq!(shape.joint_size(), 24);
        assert_eq!(shape.strides(), &[12, 4, 1]);
        for j in 0..24 {
            assert_eq!(shape.joint_index(&shape.joint_actions(j)), j);
        }
        assert_eq!(shape.joint_index(&[1, 2, 3]), 23);
        assert_eq!(shape.to_string(), "2x3x4");
        assert!(!shape.is_cubic());
        assert!(GameShape::cubic(3, 2).unwrap().is_cubic());
    }

    #[test]
    fn standardize_two_by_two_by_hand() {
        let g = NormalFormGame::bimatrix(2, 2, vec![1.0, 2.0, 3.0, 4.0], vec![4.0, 3.0, 2.0, 1.0])
            .unwrap();
        let s = g.standardize(NormOrder::L2).unwrap();
        let expected = [-1.3416407864998738, -0.4472135954999579, 0.4472135954999579, 1.3416407864998738];
        for (a, b) in s.payoff(0).iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((NormOrder::L2.norm(s.payoff(0)) - 2.0).abs() < 1e-12);
        let again = s.standardize(NormOrder::L2).unwrap();
        for (a, b) in again.payoff(1).iter().zip(s.payoff(1)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_payoff_is_rejected() {
        let g = NormalFormGame::bimatrix(2, 2, vec![3.0; 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!(matches!(
            g.standardize(NormOrder::L2),
            Err(CoreError::ConstantPayoff { player: 0 })
        ));
    }

    #[test]
    fn non_l2_norms_reach_their_scale() {
        for norm in [NormOrder::L1, NormOrder::LInf] {
            let g = NormalFormGame::bimatrix(2, 3, vec![1.0, 5.0, 2.0, 0.0, 3.0, 9.0], vec![0.0, 1.0, 0.0, 2.0, 0.0, 4.0])
                .unwrap()
                .standardize(norm)
                .unwrap();
            let z = norm.scale(6);
            for p in 0..2 {
                assert!((norm.norm(g.payoff(p)) - z).abs() < 1e-12);
                assert!(g.payoff(p).iter().sum::<f64>().abs() < 1e-12);
            }
        }
        // Z_1 approaches |A| sqrt(2 / pi) for large games.
        let z1 = NormOrder::L1.scale(400);
        assert!((z1 / (400.0 * (2.0 / std::f64::consts::PI).sqrt()) - 1.0).abs() < 0.02);
    }

    #[test]
    fn z_sigma_values() {
        assert!((z_sigma(4) - 5.163977794943222).abs() < 1e-12);
        assert!((z_sigma(2) - 3.4641016151377544).abs() < 1e-12);
        assert!((z_sigma(1_000_000) / 1e6 - 1.0).abs() < 1e-5);
    }

    #[test]
    fn prisoners_dilemma_gains() {
        let pd = prisoners_dilemma();
        let cce = cce_deviation_gains(&pd);
        let cc = pd.shape().joint_index(&[0, 0]);
        let dc = pd.shape().joint_index(&[1, 0]);
        assert_eq!(cce.get(0, 1, cc), 1.0);
        for a in 0..4 {
            let own = pd.shape().action_of(a, 0);
            assert_eq!(cce.get(0, own, a), 0.0);
        }
        let ce = ce_deviation_gains(&pd);
        assert_eq!(ce.get(0, 1, 0, cc), 1.0);
        assert_eq!(ce.get(0, 1, 0, dc), 0.0);
        for p in 0..2 {
            for r in 0..2 {
                for a in 0..4 {
                    assert_eq!(ce.get(p, r, r, a), 0.0);
                }
            }
        }
        assert_eq!(ce.aggregate(), cce);
    }

    #[test]
    fn expected_gains_under_uniform_and_point_mass() {
        let pd = prisoners_dilemma();
        let cce = cce_deviation_gains(&pd);
        let uniform = JointDistribution::uniform(pd.shape());
        let e = cce.expected(uniform.probs());
        assert!((e[0][1] - 0.5).abs() < 1e-15);
        assert!((e[1][1] - 0.5).abs() < 1e-15);
        let dd = JointDistribution::point_mass(pd.shape(), 3);
        for gains in cce.expected(dd.probs()) {
            assert!(gains.iter().all(|&g| g <= 0.0));
        }
        let zero = CceGains {
            shape: pd.shape().clone(),
            gains: vec![vec![0.0; 8]; 2],
        };
        assert!(zero.expected(uniform.probs()).iter().flatten().all(|&g| g == 0.0));
    }

    #[test]
    fn marginals_cases() {
        let s22 = GameShape::new(vec![2, 2]).unwrap();
        assert_eq!(JointDistribution::uniform(&s22).marginals(), vec![vec![0.5, 0.5]; 2]);
        let s23 = GameShape::new(vec![2, 3]).unwrap();
        let m = JointDistribution::point_mass(&s23, s23.joint_index(&[0, 1])).marginals();
        assert_eq!(m, vec![vec![1.0, 0.0], vec![0.0, 1.0, 0.0]]);
        let prod = JointDistribution::product(&s22, &[vec![0.3, 0.7], vec![0.6, 0.4]]).unwrap();
        let m = prod.marginals();
        assert!((m[0][0] - 0.3).abs() < 1e-15 && (m[1][0] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn exploitability_cases() {
        let pd = prisoners_dilemma();
        let dd = JointDistribution::point_mass(pd.shape(), 3);
        assert_eq!(exploitability_of_marginals(&pd, &dd), 0.0);
        let mp = matching_pennies();
        let uniform = JointDistribution::uniform(mp.shape());
        assert!(exploitability_of_marginals(&mp, &uniform).abs() < 1e-15);
        for j in 0..4 {
            let pure = JointDistribution::point_mass(mp.shape(), j);
            assert!((exploitability_of_marginals(&mp, &pure) - 2.0).abs() < 1e-15);
        }
    }

    #[test]
    fn invalid_distribution_rejected() {
        let s = GameShape::new(vec![2, 2]).unwrap();
        assert!(JointDistribution::new(s.clone(), vec![0.5, 0.5, 0.5, -0.5]).is_err());
        assert!(JointDistribution::new(s.clone(), vec![0.25; 3]).is_err());
        assert!(JointDistribution::new(s, vec![0.3; 4]).is_err());
    }

    #[test]
    fn player_permutation_transposes_bimatrix() {
        let pd = prisoners_dilemma();
        let swapped = pd.permute_players(&[1, 0]);
        // The prisoner's dilemma is symmetric.
        assert_eq!(swapped, pd);
    }
}
