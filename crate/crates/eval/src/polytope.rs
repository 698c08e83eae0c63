//! Approximating the (C)CE polytope by selecting many of its equilibria,
//! and plot data for two-player two-strategy games.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use nes_core::metrics::equilibrium_gap;
use nes_core::targets::{sample_pure_joint_targets, DEFAULT_MU, DEFAULT_RHO};
use nes_core::{
    solve, Concept, EquilibriumSolution, GameShape, JointDistribution, NormOrder, NormalFormGame, SelectionTargets,
    SolveConfig, TargetOptions,
};

use crate::error::{EvalError, Result};
use crate::vertices::enumerate_vertices;

/// How the extreme points are targeted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PolytopeMode {
    /// Minimum relative entropy to a floored point mass on each joint.
    Targets,
    /// Maximum welfare for the welfare vector that is the indicator of each
    /// joint, ties broken by maximum entropy.
    Welfare,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolytopeOptions {
    pub norm: NormOrder,
    pub rho: f64,
    /// Welfare weight of [`PolytopeMode::Welfare`].
    pub mu: f64,
    pub solve: SolveConfig,
    /// Worker threads; 1 runs sequentially.
    pub jobs: usize,
}

impl Default for PolytopeOptions {
    fn default() -> Self {
        Self {
            norm: NormOrder::L2,
            rho: DEFAULT_RHO,
            mu: DEFAULT_MU,
            solve: SolveConfig::default(),
            jobs: 1,
        }
    }
}

/// Solutions of a standardized game, one per joint action.
#[derive(Debug, Clone)]
pub struct PolytopeApproximation {
    /// The standardized game all solutions refer to.
    pub game: NormalFormGame,
    pub concept: Concept,
    /// `points[j]` targets joint `j`.
    pub points: Vec<EquilibriumSolution>,
}

impl PolytopeApproximation {
    /// Gap of every point at its own epsilon.
    pub fn gaps(&self) -> Result<Vec<f64>> {
        self.points
            .iter()
            .map(|s| Ok(equilibrium_gap(&self.game, &s.sigma, &s.epsilon, self.concept)?))
            .collect()
    }

    /// The convex mixture of the points with nonnegative `weights`
    /// (normalized to sum to one), and the matching mixture of their
    /// epsilons.
    pub fn mixture(&self, weights: &[f64]) -> Result<(JointDistribution, Vec<f64>)> {
        if weights.len() != self.points.len() {
            return Err(EvalError::InvalidInput("one weight per point".into()));
        }
        let total: f64 = weights.iter().sum();
        if weights.iter().any(|w| !(*w >= 0.0)) || !(total > 0.0) || !total.is_finite() {
            return Err(EvalError::InvalidInput("weights must be nonnegative with a positive sum".into()));
        }
        let weights: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let joints: Vec<&JointDistribution> = self.points.iter().map(|s| &s.sigma).collect();
        let sigma = JointDistribution::mixture(&joints, &weights)?;
        let n = self.game.num_players();
        let eps = (0..n)
            .map(|p| self.points.iter().zip(&weights).map(|(s, w)| w * s.epsilon[p]).sum::<f64>())
            .collect();
        Ok((sigma, eps))
    }
}

/// Targets driving the solver towards joint `j`.
pub fn polytope_targets(
    game: &NormalFormGame,
    floor: f64,
    mode: PolytopeMode,
    opts: &PolytopeOptions,
) -> Result<Vec<SelectionTargets>> {
    let shape = game.shape();
    let target_opts = TargetOptions {
        norm: opts.norm,
        rho: opts.rho,
        mu: None,
        target_joint: None,
    };
    match mode {
        PolytopeMode::Targets => Ok(sample_pure_joint_targets(shape, floor, &target_opts)?),
        PolytopeMode::Welfare => {
            let size = shape.joint_size();
            let base = SelectionTargets::max_entropy(shape, opts.norm, opts.rho);
            (0..size)
                .map(|j| {
                    let mut indicator = vec![0.0; size];
                    indicator[j] = 1.0;
                    let (welfare, _) = nes_core::game::standardize_tensor(&indicator, opts.norm)
                        .ok_or_else(|| EvalError::InvalidInput("constant welfare".into()))?;
                    Ok(SelectionTargets {
                        welfare,
                        mu: opts.mu,
                        ..base.clone()
                    })
                })
                .collect()
        }
    }
}

/// One oracle solve per joint action of the (standardized) game.
pub fn polytope_approximation(
    game: &NormalFormGame,
    concept: Concept,
    floor: f64,
    mode: PolytopeMode,
    opts: &PolytopeOptions,
) -> Result<PolytopeApproximation> {
    let game = game.standardize(opts.norm)?;
    let targets = polytope_targets(&game, floor, mode, opts)?;
    let solve_one = |t: &SelectionTargets| -> Result<EquilibriumSolution> {
        Ok(solve(&game, t, concept, &opts.solve)?.ok()?.solution)
    };
    let points = if opts.jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(opts.jobs)
            .build()
            .map_err(|e| EvalError::InvalidInput(e.to_string()))?;
        pool.install(|| targets.par_iter().map(solve_one).collect::<Result<Vec<_>>>())?
    } else {
        targets.iter().map(solve_one).collect::<Result<Vec<_>>>()?
    };
    Ok(PolytopeApproximation { game, concept, points })
}

/// Barycentric embedding of the 3-simplex into R^3 (regular tetrahedron).
pub const TETRAHEDRON: [[f64; 3]; 4] = [
    [1.0, 1.0, 1.0],
    [1.0, -1.0, -1.0],
    [-1.0, 1.0, -1.0],
    [-1.0, -1.0, 1.0],
];

pub fn tetrahedron_point(sigma: &[f64]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for (s, v) in sigma.iter().zip(&TETRAHEDRON) {
        for k in 0..3 {
            out[k] += s * v[k];
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotPoint {
    pub label: String,
    pub joint: Vec<f64>,
    pub xyz: [f64; 3],
}

/// Polytope vertices and solution points of a two-by-two game, as joint
/// probabilities and as points of the tetrahedron [`TETRAHEDRON`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotData {
    pub concept: Concept,
    pub epsilon: Vec<f64>,
    pub payoffs: Vec<Vec<f64>>,
    pub simplex_vertices: Vec<[f64; 3]>,
    pub polytope_vertices: Vec<PlotPoint>,
    pub solutions: Vec<PlotPoint>,
}

pub fn plot_data(
    game: &NormalFormGame,
    concept: Concept,
    epsilon: &[f64],
    solutions: &[(String, JointDistribution)],
) -> Result<PlotData> {
    if game.shape() != &GameShape::new(vec![2, 2])? {
        return Err(EvalError::InvalidInput(format!("plot data needs a 2x2 game, got {}", game.shape())));
    }
    let point = |label: String, sigma: &JointDistribution| PlotPoint {
        label,
        joint: sigma.probs().to_vec(),
        xyz: tetrahedron_point(sigma.probs()),
    };
    let vertices = enumerate_vertices(game, concept, epsilon)?;
    Ok(PlotData {
        concept,
        epsilon: epsilon.to_vec(),
        payoffs: game.payoffs().to_vec(),
        simplex_vertices: TETRAHEDRON.to_vec(),
        polytope_vertices: vertices.iter().enumerate().map(|(i, v)| point(format!("v{i}"), v)).collect(),
        solutions: solutions.iter().map(|(l, s)| point(l.clone(), s)).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn coordination() -> NormalFormGame {
        NormalFormGame::bimatrix(2, 2, vec![1.0, 0.0, 0.0, 1.0], vec![1.0, 0.0, 0.0, 1.0]).unwrap()
    }

    #[test]
    fn coordination_targets_recover_both_pure_equilibria() {
        let approx = polytope_approximation(&coordination(), Concept::Cce, 1e-4, PolytopeMode::Targets, &Default::default())
            .unwrap();
        assert!(approx.points[0].sigma.probs()[0] >= 0.99, "{:?}", approx.points[0].sigma.probs());
        assert!(approx.points[3].sigma.probs()[3] >= 0.99, "{:?}", approx.points[3].sigma.probs());
        assert!(approx.gaps().unwrap().iter().all(|&g| g <= 1e-4));
        let (mix, eps) = approx.mixture(&[0.5, 0.0, 0.0, 0.5]).unwrap();
        assert!(equilibrium_gap(&approx.game, &mix, &eps, Concept::Cce).unwrap() <= 1e-4);
        let (scaled, scaled_eps) = approx.mixture(&[3.0, 0.0, 0.0, 3.0]).unwrap();
        assert!(scaled.probs().iter().zip(mix.probs()).all(|(a, b)| (a - b).abs() < 1e-15));
        assert!(scaled_eps.iter().zip(&eps).all(|(a, b)| (a - b).abs() < 1e-15));
        assert!(approx.mixture(&[1.0, -0.5, 0.0, 0.5]).is_err());
        assert!(approx.mixture(&[0.0; 4]).is_err());
    }

    #[test]
    fn welfare_mode_points_lie_in_the_polytope() {
        let approx = polytope_approximation(&coordination(), Concept::Ce, 1e-4, PolytopeMode::Welfare, &Default::default())
            .unwrap();
        assert_eq!(approx.points.len(), 4);
        assert!(approx.gaps().unwrap().iter().all(|&g| g <= 1e-4));
        assert!(approx.points[0].sigma.probs()[0] > approx.points[0].sigma.probs()[3]);
    }

    #[test]
    fn parallel_and_sequential_runs_agree() {
        let g = NormalFormGame::bimatrix(2, 2, vec![3.0, 0.0, 5.0, 1.0], vec![3.0, 5.0, 0.0, 1.0]).unwrap();
        let a = polytope_approximation(&g, Concept::Cce, 1e-3, PolytopeMode::Targets, &Default::default()).unwrap();
        let opts = PolytopeOptions { jobs: 3, ..Default::default() };
        let b = polytope_approximation(&g, Concept::Cce, 1e-3, PolytopeMode::Targets, &opts).unwrap();
        for (x, y) in a.points.iter().zip(&b.points) {
            assert_eq!(x.sigma, y.sigma);
        }
    }

    #[test]
    fn plot_data_contains_vertices_and_solutions() {
        let g = coordination();
        let sol = vec![("uniform".to_string(), JointDistribution::uniform(g.shape()))];
        let data = plot_data(&g, Concept::Cce, &[0.0, 0.0], &sol).unwrap();
        // Coordination CCE polytope at eps = 0: both pure equilibria are vertices.
        let has = |j: usize| data.polytope_vertices.iter().any(|v| (v.joint[j] - 1.0).abs() < 1e-9);
        assert!(has(0) && has(3));
        assert_eq!(data.solutions[0].xyz, [0.0, 0.0, 0.0]);
        let three = NormalFormGame::bimatrix(3, 2, vec![0.0; 6], vec![1.0, 0.0, 0.0, 1.0, 0.5, 0.5]).unwrap();
        assert!(plot_data(&three, Concept::Cce, &[0.0, 0.0], &[]).is_err());
    }
}
