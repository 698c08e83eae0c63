//! One library entry point per command-line subcommand.
//!
//! Each function takes fully parsed inputs and returns serializable
//! outputs; the binary only parses flags, calls one of these and writes the
//! result. Every source of randomness is a ChaCha8 stream seeded from the
//! caller's seed.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use nes_core::io::{resolve_targets, GameFile, SolutionFile, TargetOverrides, TargetsSpec};
use nes_core::targets::{sample_invariant_game, DEFAULT_RHO};
use nes_core::{solve, Concept, GameShape, NormOrder, NormalFormGame, ParamName, SolveConfig, TargetOptions};
use nes_net::trainer::FINAL_PARAMS;
use nes_net::{load_network, train, Network, NetworkConfig, TrainConfig, TrainLog};

use crate::error::{EvalError, Result};
use crate::fixtures::{all_fixtures, verify_fixture, FixtureReport};
use crate::generalization::{generalization_run, GeneralizationRow};
use crate::polytope::{plot_data, polytope_approximation, PlotData, PolytopeMode, PolytopeOptions};
use crate::reference::{GameMetrics, ReferenceSet};

/// Seed used when none is given.
pub const DEFAULT_SEED: u64 = 0;

/// Oracle-solved games in the evaluation set of a training run.
pub const TRAIN_EVAL_GAMES: usize = 64;

/// Offsets separating the random streams derived from one seed.
const EVAL_STREAM: u64 = 0x5eed_0001;

/// A random game of `shape` drawn from the invariant sphere distribution,
/// annotated with the parameterization that should select its equilibrium.
pub fn sample_game(shape: &GameShape, name: ParamName, rho: Option<f64>, mu: Option<f64>, norm: NormOrder, seed: u64) -> GameFile {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let game = sample_invariant_game(shape, norm, &mut rng);
    GameFile {
        targets: Some(TargetsSpec {
            parameterization: name,
            rho: Some(rho.unwrap_or(DEFAULT_RHO)),
            mu,
            sigma_hat: None,
            epsilon_hat: None,
            welfare: None,
        }),
        ..GameFile::from_game(&game)
    }
}

/// The standardized game of a file, its per-player scale factors and the
/// resolved targets.
fn prepare(
    file: &GameFile,
    overrides: &TargetOverrides,
    norm: NormOrder,
    seed: u64,
) -> Result<(NormalFormGame, Vec<f64>, ParamName, nes_core::SelectionTargets)> {
    let (game, factors) = file.game()?.standardize_with_factors(norm)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (name, targets) = resolve_targets(file.targets.as_ref(), overrides, &game, &factors, norm, &mut rng)?;
    Ok((game, factors, name, targets))
}

/// Solves the game of a file with the oracle. A run that does not converge
/// still yields a solution file, with `converged == false`.
pub fn solve_game_file(
    file: &GameFile,
    overrides: &TargetOverrides,
    concept: Concept,
    norm: NormOrder,
    seed: u64,
    config: &SolveConfig,
) -> Result<SolutionFile> {
    let (game, factors, name, targets) = prepare(file, overrides, norm, seed)?;
    let report = solve(&game, &targets, concept, config)?;
    Ok(SolutionFile::from_report(&report, name, &factors))
}

/// Flags of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainRequest {
    pub shape: GameShape,
    pub concept: Concept,
    pub parameterization: ParamName,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub rho: Option<f64>,
    pub mu: Option<f64>,
    pub seed: u64,
    pub out: Option<PathBuf>,
    /// Oracle-solved games scored during training; 0 disables evaluation.
    pub eval_games: usize,
    pub jobs: usize,
}

/// The trainer configuration of a request (desk-scale network).
pub fn train_config(req: &TrainRequest) -> TrainConfig {
    let network = NetworkConfig::desk(req.concept, req.shape.num_players());
    let mut config = TrainConfig::new(network, req.shape.clone(), req.parameterization, req.steps);
    config.batch_size = req.batch_size;
    config.learning_rate = req.learning_rate;
    config.rho = req.rho.unwrap_or(DEFAULT_RHO);
    config.mu = req.mu;
    config.seed = req.seed;
    config.log_interval = config.log_interval.min(req.steps.max(1));
    config.eval_interval = if req.eval_games > 0 { config.log_interval * 10 } else { 0 };
    config.checkpoint_dir = req.out.clone();
    config
}

/// Trains a network, scoring it on a fixed oracle-solved set when requested.
pub fn train_network(req: &TrainRequest) -> Result<(Network, TrainLog)> {
    let config = train_config(req);
    let eval = if req.eval_games > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(req.seed ^ EVAL_STREAM);
        let opts = TargetOptions {
            norm: config.norm,
            rho: config.rho,
            mu: config.mu,
            target_joint: None,
        };
        let reference = ReferenceSet::sample(
            &req.shape,
            req.parameterization,
            &opts,
            req.concept,
            req.eval_games,
            &SolveConfig::default(),
            req.jobs,
            &mut rng,
        )?;
        Some(reference.eval_set()?)
    } else {
        None
    };
    Ok(train(&config, eval.as_ref())?)
}

/// A parameter file, or the final parameter file of a checkpoint directory.
pub fn checkpoint_params(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(FINAL_PARAMS)
    } else {
        path.to_path_buf()
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Network> {
    Ok(load_network(&checkpoint_params(path))?)
}

/// Flags of a zero-shot evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRequest {
    pub shapes: Vec<GameShape>,
    pub parameterization: ParamName,
    pub rho: Option<f64>,
    pub mu: Option<f64>,
    pub games: usize,
    pub seed: u64,
    pub jobs: usize,
}

/// One generalization table row per shape, with the per-game metrics.
pub fn evaluate_network(net: &Network, req: &EvalRequest) -> Result<Vec<(GeneralizationRow, Vec<GameMetrics>)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(req.seed);
    let opts = TargetOptions {
        rho: req.rho.unwrap_or(DEFAULT_RHO),
        mu: req.mu,
        ..TargetOptions::default()
    };
    generalization_run(
        net,
        &req.shapes,
        req.parameterization,
        &opts,
        req.games,
        &SolveConfig::default(),
        req.jobs,
        &mut rng,
    )
}

/// One selected equilibrium per joint action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolytopePoint {
    pub target: usize,
    pub sigma: Vec<f64>,
    /// Epsilons in standardized units.
    pub epsilon: Vec<f64>,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolytopeReport {
    pub shape: GameShape,
    pub concept: Concept,
    pub mode: PolytopeMode,
    /// The standardized payoffs all points refer to.
    pub payoffs: Vec<Vec<f64>>,
    pub points: Vec<PolytopePoint>,
}

pub fn polytope_report(
    game: &NormalFormGame,
    concept: Concept,
    floor: f64,
    mode: PolytopeMode,
    opts: &PolytopeOptions,
) -> Result<PolytopeReport> {
    let approx = polytope_approximation(game, concept, floor, mode, opts)?;
    let gaps = approx.gaps()?;
    Ok(PolytopeReport {
        shape: approx.game.shape().clone(),
        concept,
        mode,
        payoffs: approx.game.payoffs().to_vec(),
        points: approx
            .points
            .iter()
            .zip(gaps)
            .enumerate()
            .map(|(target, (s, gap))| PolytopePoint {
                target,
                sigma: s.sigma.probs().to_vec(),
                epsilon: s.epsilon.clone(),
                gap,
            })
            .collect(),
    })
}

/// Every shipped fixture, re-derived.
pub fn verify_all_fixtures() -> Vec<FixtureReport> {
    all_fixtures().iter().map(verify_fixture).collect()
}

/// Plot data of a two-by-two game file: the polytope at the selected
/// equilibrium's epsilon, together with that equilibrium.
pub fn plot_game_file(
    file: &GameFile,
    overrides: &TargetOverrides,
    concept: Concept,
    norm: NormOrder,
    seed: u64,
    config: &SolveConfig,
) -> Result<PlotData> {
    let (game, _, name, targets) = prepare(file, overrides, norm, seed)?;
    let report = solve(&game, &targets, concept, config)?.ok()?;
    let solution = report.solution;
    plot_data(&game, concept, &solution.epsilon, &[(name.to_string(), solution.sigma)])
}

/// Parses a comma-separated list of `AxB...` shapes.
pub fn parse_shapes(list: &str) -> Result<Vec<GameShape>> {
    let shapes = list
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<GameShape>().map_err(EvalError::from))
        .collect::<Result<Vec<_>>>()?;
    if shapes.is_empty() {
        return Err(EvalError::InvalidInput("no shapes given".into()));
    }
    Ok(shapes)
}
