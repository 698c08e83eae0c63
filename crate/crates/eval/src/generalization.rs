//! Zero-shot evaluation of one network on several game shapes.

use rand::Rng;
use serde::{Deserialize, Serialize};

use nes_core::oracle::Init;
use nes_core::{solve, GameShape, ParamName, SolveConfig, TargetOptions};
use nes_net::{Instance, Network};

use crate::error::Result;
use crate::reference::{network_metrics, with_jobs, GameMetrics, ReferenceSet};

/// Games per shape in a generalization table.
pub const GENERALIZATION_GAMES: usize = 128;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneralizationRow {
    pub shape: GameShape,
    pub games: usize,
    /// Fraction of games the oracle solved.
    pub success_fraction: f64,
    /// Mean (C)CE gap of the network over all games.
    pub mean_gap: f64,
    /// Mean solver gap over the games the oracle solved.
    pub mean_solver_gap: Option<f64>,
    /// Uniform-joint baselines over the solved games.
    pub uniform_gap: Option<f64>,
    pub uniform_solver_gap: Option<f64>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Summarizes per-game metrics into one table row.
pub fn summarize(shape: &GameShape, games: &[GameMetrics]) -> GeneralizationRow {
    GeneralizationRow {
        shape: shape.clone(),
        games: games.len(),
        success_fraction: games.iter().filter(|g| g.oracle_converged).count() as f64 / games.len().max(1) as f64,
        mean_gap: mean(games.iter().map(|g| g.gap)).unwrap_or(f64::NAN),
        mean_solver_gap: mean(games.iter().filter_map(|g| g.solver_gap)),
        uniform_gap: mean(games.iter().filter_map(|g| g.uniform_gap)),
        uniform_solver_gap: mean(games.iter().filter_map(|g| g.uniform_solver_gap)),
    }
}

/// Evaluates `net` on `games_per_shape` fresh games of every shape in
/// `shapes`, with the network's parameters unchanged.
#[allow(clippy::too_many_arguments)]
pub fn generalization_run<R: Rng + ?Sized>(
    net: &Network,
    shapes: &[GameShape],
    name: ParamName,
    opts: &TargetOptions,
    games_per_shape: usize,
    config: &SolveConfig,
    jobs: usize,
    rng: &mut R,
) -> Result<Vec<(GeneralizationRow, Vec<GameMetrics>)>> {
    let concept = net.config().concept;
    shapes
        .iter()
        .map(|shape| {
            let reference = ReferenceSet::sample(shape, name, opts, concept, games_per_shape, config, jobs, rng)?;
            let metrics = network_metrics(net, &reference)?;
            Ok((summarize(shape, &metrics), metrics))
        })
        .collect()
}

/// Oracle iterations from a zero start and from the network's prediction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WarmStartOutcome {
    pub zeros_iterations: usize,
    pub warm_iterations: usize,
    pub zeros_converged: bool,
    pub warm_converged: bool,
}

impl WarmStartOutcome {
    /// The warm start converged in strictly fewer iterations.
    pub fn warm_is_faster(&self) -> bool {
        self.warm_converged && (!self.zeros_converged || self.warm_iterations < self.zeros_iterations)
    }
}

pub fn warm_start_comparison(net: &Network, instances: &[Instance], config: &SolveConfig, jobs: usize) -> Result<Vec<WarmStartOutcome>> {
    use rayon::prelude::*;
    let concept = net.config().concept;
    let predicted = net.predict(instances)?;
    with_jobs(jobs, || {
        instances
            .par_iter()
            .zip(predicted.par_iter())
            .map(|(inst, duals)| {
                let zeros = solve(&inst.game, &inst.targets, concept, config)?;
                let warm_cfg = SolveConfig {
                    init: Init::Warm(duals.clone()),
                    ..config.clone()
                };
                let warm = solve(&inst.game, &inst.targets, concept, &warm_cfg)?;
                Ok(WarmStartOutcome {
                    zeros_iterations: zeros.iterations,
                    warm_iterations: warm.iterations,
                    zeros_converged: zeros.converged,
                    warm_converged: warm.converged,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?
}

#[cfg(test)]
mod tests {
    use super::*;
    use nes_core::Concept;
    use nes_net::NetworkConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn one_network_evaluates_every_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = Network::new(NetworkConfig::desk(Concept::Cce, 2), &mut rng).unwrap();
        let shapes: Vec<GameShape> = ["2x2", "3x3", "2x4"].iter().map(|s| s.parse().unwrap()).collect();
        let rows = generalization_run(&net, &shapes, ParamName::Me, &TargetOptions::default(), 6, &SolveConfig::default(), 1, &mut rng).unwrap();
        assert_eq!(rows.len(), 3);
        for ((row, games), shape) in rows.iter().zip(&shapes) {
            assert_eq!(&row.shape, shape);
            assert_eq!(games.len(), 6);
            assert_eq!(row.success_fraction, 1.0);
            assert!(row.mean_gap >= 0.0);
            assert!(row.uniform_gap.unwrap() >= 0.0);
            let sg = row.mean_solver_gap.unwrap();
            assert!((0.0..=1.0).contains(&sg));
        }
    }

    #[test]
    fn warm_start_from_exact_duals_needs_no_iterations() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let shape: GameShape = "2x2".parse().unwrap();
        let inst = nes_net::trainer::sample_instances(&shape, ParamName::Me, &TargetOptions::default(), 1, &mut rng).unwrap();
        let exact = solve(&inst[0].game, &inst[0].targets, Concept::Cce, &SolveConfig::default()).unwrap();
        let warm = solve(
            &inst[0].game,
            &inst[0].targets,
            Concept::Cce,
            &SolveConfig {
                init: Init::Warm(exact.duals.clone()),
                ..SolveConfig::default()
            },
        )
        .unwrap();
        assert!(warm.iterations <= 1, "{}", warm.iterations);
        let o = WarmStartOutcome {
            zeros_iterations: exact.iterations,
            warm_iterations: warm.iterations,
            zeros_converged: true,
            warm_converged: true,
        };
        assert_eq!(o.warm_is_faster(), warm.iterations < exact.iterations);
    }
}
