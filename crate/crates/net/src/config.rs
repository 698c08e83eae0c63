//! Architecture configuration and the catalogue of equivariant pooling
//! branches.
//!
//! Payoff activations have layout `[B, C, N, |A_1|, ..., |A_N|]`: batch,
//! channel, the player whose payoff the slice describes, then one axis per
//! player's strategy. CCE dual activations are one `[B, C, |A_p|]` tensor per
//! player (indexed by deviation); CE dual activations are one
//! `[B, C, |A_p|, |A_p|]` tensor per player indexed `[deviation,
//! recommendation]`.

use serde::{Deserialize, Serialize};

use nes_core::Concept;

use crate::error::{NetError, Result};

/// Symmetric reduction applied by a pooling branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phi {
    Mean,
    Max,
}

/// Branches of a payoff-to-payoff layer. `g(p, a)` is the input activation;
/// each branch is pooled over the listed axes and broadcast back to the full
/// payoff layout. Families marked "per q" produce one branch per player `q`;
/// with weight sharing they are averaged over `q` (one shared weight block),
/// without it each `q` gets its own weight block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PayoffPool {
    /// `g(p, a)` itself.
    Identity,
    /// Pool over every strategy axis: one summary per player.
    Strategies,
    /// Pool over players and strategies: one summary per game.
    Global,
    /// Pool over players: `phi_p g(p, a)`.
    Players,
    /// Per q: pool over players and `a_q`.
    PlayersAndStrategyOf,
    /// Per q: pool over players and every strategy axis except `a_q`.
    PlayersAndStrategiesOfOthers,
    /// Per q: pool over `a_q`.
    StrategyOf,
    /// Per q: pool over every strategy axis except `a_q`.
    StrategiesOfOthers,
    /// Per q: player q's payoff pooled over the output player's own axis
    /// `a_p`.
    OwnStrategyOfPlayer,
    /// Per q: player q's payoff pooled over every axis except the output
    /// player's own axis `a_p`.
    OthersStrategiesOfPlayer,
    /// Per q: player q's payoff pooled over its own axis `a_q`.
    PlayerOwnStrategy,
    /// Per q: player q's payoff pooled over every axis except `a_q`.
    PlayerOthersStrategies,
}

impl PayoffPool {
    pub const ALL: [PayoffPool; 12] = [
        PayoffPool::Identity,
        PayoffPool::Strategies,
        PayoffPool::Global,
        PayoffPool::Players,
        PayoffPool::PlayersAndStrategyOf,
        PayoffPool::PlayersAndStrategiesOfOthers,
        PayoffPool::StrategyOf,
        PayoffPool::StrategiesOfOthers,
        PayoffPool::OwnStrategyOfPlayer,
        PayoffPool::OthersStrategiesOfPlayer,
        PayoffPool::PlayerOwnStrategy,
        PayoffPool::PlayerOthersStrategies,
    ];

    /// The default payoff-layer set: identity, the three whole-axis pools and
    /// the two per-player own-strategy families.
    pub const DEFAULT: [PayoffPool; 6] = [
        PayoffPool::Identity,
        PayoffPool::Strategies,
        PayoffPool::Global,
        PayoffPool::Players,
        PayoffPool::PlayerOwnStrategy,
        PayoffPool::PlayerOthersStrategies,
    ];

    pub fn is_per_player(self) -> bool {
        !matches!(
            self,
            PayoffPool::Identity | PayoffPool::Strategies | PayoffPool::Global | PayoffPool::Players
        )
    }
}

/// Branches of the payoff-to-dual map for player `p`; every branch pools
/// at least over the other players' strategies `a_{-p}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PayoffToDualPool {
    /// Player p's payoff pooled over `a_{-p}`.
    OwnPayoffOthersStrategies,
    /// Player p's payoff pooled over every strategy axis.
    OwnPayoffAllStrategies,
    /// Every player's payoff pooled over players and `a_{-p}`.
    AllPayoffsOthersStrategies,
    /// Every player's payoff pooled over players and strategies.
    AllPayoffsAllStrategies,
}

impl PayoffToDualPool {
    pub const ALL: [PayoffToDualPool; 4] = [
        PayoffToDualPool::OwnPayoffOthersStrategies,
        PayoffToDualPool::OwnPayoffAllStrategies,
        PayoffToDualPool::AllPayoffsOthersStrategies,
        PayoffToDualPool::AllPayoffsAllStrategies,
    ];
}

/// Branches of a CCE dual layer on `alpha_p(a')`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CceDualPool {
    Identity,
    /// Pool over `a'`.
    Deviations,
    /// Pool over players and `a'` (cubic games only).
    PlayersAndDeviations,
}

impl CceDualPool {
    pub const ALL: [CceDualPool; 3] = [
        CceDualPool::Identity,
        CceDualPool::Deviations,
        CceDualPool::PlayersAndDeviations,
    ];

    pub fn needs_cubic(self) -> bool {
        self == CceDualPool::PlayersAndDeviations
    }
}

/// Branches of a CE dual layer on `alpha_p(a', a'')`; all of them are
/// equivariant under relabelling `a'` and `a''` together.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CeDualPool {
    /// `alpha(a', a'')`.
    Identity,
    /// `alpha(a'', a')`.
    Transpose,
    /// `phi_{a'} alpha(a', a'')`: a function of `a''`.
    PoolDeviation,
    /// `phi_{a'} alpha(a'', a')`: a function of `a''`.
    PoolDeviationTransposed,
    /// `phi_{a''} alpha(a', a'')`: a function of `a'`.
    PoolRecommendation,
    /// `phi_{a''} alpha(a'', a')`: a function of `a'`.
    PoolRecommendationTransposed,
    /// `phi_{a', a''} alpha`.
    PoolBoth,
    /// `phi_{p, a', a''} alpha` (cubic games only).
    PoolPlayersAndBoth,
}

impl CeDualPool {
    pub const ALL: [CeDualPool; 8] = [
        CeDualPool::Identity,
        CeDualPool::Transpose,
        CeDualPool::PoolDeviation,
        CeDualPool::PoolDeviationTransposed,
        CeDualPool::PoolRecommendation,
        CeDualPool::PoolRecommendationTransposed,
        CeDualPool::PoolBoth,
        CeDualPool::PoolPlayersAndBoth,
    ];

    pub fn needs_cubic(self) -> bool {
        matches!(self, CeDualPool::PoolPlayersAndBoth)
    }

    pub fn is_pooled(self) -> bool {
        !matches!(self, CeDualPool::Identity | CeDualPool::Transpose)
    }
}

/// How the two CCE-shaped heads are combined into CE duals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OuterOp {
    #[default]
    Sum,
    Product,
}

/// The branch families used by each kind of layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolingConfig {
    pub phis: Vec<Phi>,
    pub payoff: Vec<PayoffPool>,
    pub payoff_to_dual: Vec<PayoffToDualPool>,
    pub cce_dual: Vec<CceDualPool>,
    pub ce_dual: Vec<CeDualPool>,
}

impl Default for PoolingConfig {
    fn default() -> Self {
        Self {
            phis: vec![Phi::Mean, Phi::Max],
            payoff: PayoffPool::DEFAULT.to_vec(),
            payoff_to_dual: PayoffToDualPool::ALL.to_vec(),
            cce_dual: CceDualPool::ALL.to_vec(),
            ce_dual: CeDualPool::ALL.to_vec(),
        }
    }
}

/// Network architecture.
///
/// The stack is: payoff layers (ReLU), one payoff-to-dual layer (ReLU), dual
/// layers (ReLU), then a one-channel output layer with a softplus. Every
/// hidden layer is linear + bias + batch normalization + nonlinearity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub concept: Concept,
    /// Number of players the network is built for. Only consulted when
    /// weights are not shared across players.
    pub num_players: usize,
    pub payoff_layer_channels: Vec<usize>,
    pub payoff_to_dual_channels: usize,
    pub dual_layer_channels: Vec<usize>,
    pub pooling: PoolingConfig,
    /// Combination of the two heads of the CE payoff-to-dual layer.
    pub outer_op: Option<OuterOp>,
    /// Share every weight across players (required for player-permutation
    /// equivariance). Without it each player gets its own weights.
    pub cubic_weight_sharing: bool,
    /// Running-statistics momentum of batch normalization.
    pub batchnorm_momentum: f64,
}

impl NetworkConfig {
    /// The full-size architecture `[(32, 32, 32, 32, 32), 64, (32, 32)]`.
    pub fn full(concept: Concept, num_players: usize) -> Self {
        Self {
            concept,
            num_players,
            payoff_layer_channels: vec![32; 5],
            payoff_to_dual_channels: 64,
            dual_layer_channels: vec![32, 32],
            pooling: PoolingConfig::default(),
            outer_op: match concept {
                Concept::Ce => Some(OuterOp::Sum),
                Concept::Cce => None,
            },
            cubic_weight_sharing: true,
            batchnorm_momentum: 0.9,
        }
    }

    /// A smaller stack for CPU-scale training runs.
    pub fn desk(concept: Concept, num_players: usize) -> Self {
        Self {
            payoff_layer_channels: vec![16; 3],
            payoff_to_dual_channels: 32,
            dual_layer_channels: vec![16, 16],
            ..Self::full(concept, num_players)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(NetError::InvalidConfig(m.to_string()));
        if self.num_players < 2 {
            return bad("a game has at least two players");
        }
        if self.payoff_layer_channels.contains(&0)
            || self.dual_layer_channels.contains(&0)
            || self.payoff_to_dual_channels == 0
        {
            return bad("channel counts must be at least 1");
        }
        if self.concept == Concept::Ce && self.outer_op.is_none() {
            return bad("CE networks need an outer operation");
        }
        let p = &self.pooling;
        if p.phis.is_empty() {
            return bad("at least one pooling reduction is required");
        }
        if p.payoff.is_empty() || p.payoff_to_dual.is_empty() {
            return bad("payoff layers need at least one branch");
        }
        let dual_empty = match self.concept {
            Concept::Cce => p.cce_dual.is_empty(),
            Concept::Ce => p.ce_dual.is_empty(),
        };
        if dual_empty {
            return bad("dual layers need at least one branch");
        }
        if !(0.0..1.0).contains(&self.batchnorm_momentum) {
            return bad("batch-norm momentum must lie in [0, 1)");
        }
        Ok(())
    }
}
