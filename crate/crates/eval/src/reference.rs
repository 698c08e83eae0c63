//! Frozen evaluation sets solved by the oracle, and the uniform baseline.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use nes_core::metrics::{equilibrium_gap, solver_gap};
use nes_core::{
    solve, Concept, EquilibriumSolution, GameShape, JointDistribution, ParamName, SolveConfig, TargetOptions,
};
use nes_net::trainer::{predict_solutions, sample_instances};
use nes_net::{EvalMetrics, EvalSet, Instance, Network};

use crate::error::{EvalError, Result};

/// Runs `f` on `jobs` worker threads (sequentially when `jobs <= 1`).
pub fn with_jobs<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if jobs <= 1 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| EvalError::InvalidInput(e.to_string()))?;
    Ok(pool.install(f))
}

/// Games with their oracle solutions; `None` where the oracle did not
/// converge.
#[derive(Debug, Clone)]
pub struct ReferenceSet {
    pub concept: Concept,
    pub instances: Vec<Instance>,
    pub solutions: Vec<Option<EquilibriumSolution>>,
    pub iterations: Vec<usize>,
}

impl ReferenceSet {
    /// Solves every instance with the oracle.
    pub fn solve(instances: Vec<Instance>, concept: Concept, config: &SolveConfig, jobs: usize) -> Result<Self> {
        let results: Vec<(Option<EquilibriumSolution>, usize)> = with_jobs(jobs, || {
            instances
                .par_iter()
                .map(|i| match solve(&i.game, &i.targets, concept, config) {
                    Ok(r) if r.converged => Ok((Some(r.solution), r.iterations)),
                    Ok(r) => Ok((None, r.iterations)),
                    Err(e) => Err(EvalError::from(e)),
                })
                .collect::<Result<Vec<_>>>()
        })??;
        let (solutions, iterations) = results.into_iter().unzip();
        Ok(Self {
            concept,
            instances,
            solutions,
            iterations,
        })
    }

    /// Samples `count` games of `shape` and solves them.
    pub fn sample<R: Rng + ?Sized>(
        shape: &GameShape,
        name: ParamName,
        opts: &TargetOptions,
        concept: Concept,
        count: usize,
        config: &SolveConfig,
        jobs: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let instances = sample_instances(shape, name, opts, count, rng)?;
        Self::solve(instances, concept, config, jobs)
    }

    pub fn success_fraction(&self) -> f64 {
        self.solutions.iter().filter(|s| s.is_some()).count() as f64 / self.solutions.len() as f64
    }

    /// The games the oracle solved, as a trainer evaluation set.
    pub fn eval_set(&self) -> Result<EvalSet> {
        let (inst, refs): (Vec<Instance>, Vec<JointDistribution>) = self
            .instances
            .iter()
            .zip(&self.solutions)
            .filter_map(|(i, s)| s.as_ref().map(|s| (i.clone(), s.sigma.clone())))
            .unzip();
        Ok(EvalSet::new(inst, refs)?)
    }

    /// The uniform joint measured on the solved games: solver gap to the
    /// oracle joint and (C)CE gap at the oracle's epsilon.
    pub fn uniform_baseline(&self) -> Result<EvalMetrics> {
        let mut sg = 0.0;
        let mut gap = 0.0;
        let mut n = 0usize;
        for (inst, sol) in self.instances.iter().zip(&self.solutions) {
            if let Some(sol) = sol {
                let u = JointDistribution::uniform(inst.game.shape());
                sg += solver_gap(&sol.sigma, &u)?;
                gap += equilibrium_gap(&inst.game, &u, &sol.epsilon, self.concept)?;
                n += 1;
            }
        }
        if n == 0 {
            return Err(EvalError::InvalidInput("the oracle solved no game".into()));
        }
        Ok(EvalMetrics {
            solver_gap: sg / n as f64,
            gap: gap / n as f64,
        })
    }
}

/// Per-game metrics of a network on a reference set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameMetrics {
    pub index: usize,
    pub oracle_converged: bool,
    /// Half L1 distance to the oracle joint (solved games only).
    pub solver_gap: Option<f64>,
    /// (C)CE gap of the predicted joint at its recovered epsilon.
    pub gap: f64,
    pub uniform_solver_gap: Option<f64>,
    /// (C)CE gap of the uniform joint at the oracle's epsilon.
    pub uniform_gap: Option<f64>,
}

pub fn network_metrics(net: &Network, reference: &ReferenceSet) -> Result<Vec<GameMetrics>> {
    let concept = reference.concept;
    let predictions = predict_solutions(net, &reference.instances)?;
    reference
        .instances
        .iter()
        .zip(&reference.solutions)
        .zip(predictions)
        .enumerate()
        .map(|(index, ((inst, sol), (sigma, eps)))| {
            let uniform = JointDistribution::uniform(inst.game.shape());
            Ok(GameMetrics {
                index,
                oracle_converged: sol.is_some(),
                solver_gap: sol.as_ref().map(|s| solver_gap(&s.sigma, &sigma)).transpose()?,
                gap: equilibrium_gap(&inst.game, &sigma, &eps, concept)?,
                uniform_solver_gap: sol.as_ref().map(|s| solver_gap(&s.sigma, &uniform)).transpose()?,
                uniform_gap: sol
                    .as_ref()
                    .map(|s| equilibrium_gap(&inst.game, &uniform, &s.epsilon, concept))
                    .transpose()?,
            })
        })
        .collect()
}
