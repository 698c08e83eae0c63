//! Fixture games with machine-checkable facts, re-derived from the raw
//! payoffs on every verification.

use serde::{Deserialize, Serialize};

use nes_core::game::exploitability_of_marginals;
use nes_core::metrics::equilibrium_gap;
use nes_core::targets::sample_pure_joint_targets;
use nes_core::{
    solve, Concept, EquilibriumSolution, JointDistribution, NormOrder, NormalFormGame, SelectionTargets, SolveConfig,
    TargetOptions,
};

use crate::error::{EvalError, Result};
use crate::lp::{maximize_over_polytope, JointRestrictions};

/// Floor of the pure-joint targets used to maximize the mass on one joint.
pub const PURE_TARGET_FLOOR: f64 = 1e-4;
/// Rho of the fixture oracle solves.
pub const FIXTURE_RHO: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Expectation {
    Approx { value: f64, tol: f64 },
    AtLeast(f64),
    AtMost(f64),
}

impl Expectation {
    pub fn holds(&self, observed: f64) -> bool {
        match *self {
            Expectation::Approx { value, tol } => (observed - value).abs() <= tol,
            Expectation::AtLeast(b) => observed >= b,
            Expectation::AtMost(b) => observed <= b,
        }
    }
}

impl std::fmt::Display for Expectation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Expectation::Approx { value, tol } => write!(f, "{value} ± {tol}"),
            Expectation::AtLeast(b) => write!(f, ">= {b}"),
            Expectation::AtMost(b) => write!(f, "<= {b}"),
        }
    }
}

/// A claim about a fixture game; `compute` derives the observed quantity
/// from the raw payoffs.
#[derive(Clone)]
pub struct Fact {
    pub id: &'static str,
    pub description: &'static str,
    pub expectation: Expectation,
    pub compute: fn(&NormalFormGame) -> Result<f64>,
}

impl std::fmt::Debug for Fact {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fact")
            .field("id", &self.id)
            .field("expectation", &self.expectation)
            .finish()
    }
}

#[derive(Debug, Clone)]
pub struct FixtureGame {
    pub name: &'static str,
    pub description: &'static str,
    /// True when the payoffs are a textbook reconstruction rather than
    /// published values.
    pub reconstructed: bool,
    pub game: NormalFormGame,
    pub facts: Vec<Fact>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactOutcome {
    pub id: String,
    pub description: String,
    pub expectation: Expectation,
    pub observed: Option<f64>,
    pub error: Option<String>,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureReport {
    pub fixture: String,
    pub outcomes: Vec<FactOutcome>,
}

impl FixtureReport {
    pub fn passed(&self) -> bool {
        self.outcomes.iter().all(|o| o.passed)
    }

    pub fn outcome(&self, id: &str) -> Option<&FactOutcome> {
        self.outcomes.iter().find(|o| o.id == id)
    }

    /// `FactViolated` listing every failed fact, or the report itself.
    pub fn into_result(self) -> Result<Self> {
        let failed: Vec<String> = self
            .outcomes
            .iter()
            .filter(|o| !o.passed)
            .map(|o| match (&o.observed, &o.error) {
                (_, Some(e)) => format!("  {}: {} (error: {e})", o.id, o.description),
                (Some(v), None) => format!("  {}: {} — observed {v}, expected {}", o.id, o.description, o.expectation),
                (None, None) => format!("  {}: {}", o.id, o.description),
            })
            .collect();
        if failed.is_empty() {
            Ok(self)
        } else {
            Err(EvalError::FactViolated {
                fixture: self.fixture,
                violations: failed.len(),
                details: failed.join("\n"),
            })
        }
    }
}

/// Re-derives every fact of a fixture.
pub fn verify_fixture(fixture: &FixtureGame) -> FixtureReport {
    let outcomes = fixture
        .facts
        .iter()
        .map(|fact| {
            let (observed, error) = match (fact.compute)(&fixture.game) {
                Ok(v) => (Some(v), None),
                Err(e) => (None, Some(e.to_string())),
            };
            FactOutcome {
                id: fact.id.to_string(),
                description: fact.description.to_string(),
                expectation: fact.expectation,
                observed,
                passed: observed.is_some_and(|v| v.is_finite() && fact.expectation.holds(v)),
                error,
            }
        })
        .collect();
    FixtureReport {
        fixture: fixture.name.to_string(),
        outcomes,
    }
}

// ---------------------------------------------------------------------------
// Helpers shared by the facts. Joint labels in descriptions are 1-based
// (row, column); indices in code are 0-based.

fn idx(game: &NormalFormGame, row: usize, col: usize) -> usize {
    game.shape().joint_index(&[row - 1, col - 1])
}

fn point_mass(game: &NormalFormGame, row: usize, col: usize) -> JointDistribution {
    JointDistribution::point_mass(game.shape(), idx(game, row, col))
}

fn welfare_of(game: &NormalFormGame, sigma: &JointDistribution) -> f64 {
    sigma.expected_payoffs(game).iter().sum()
}

fn exact_gap(game: &NormalFormGame, sigma: &JointDistribution, concept: Concept) -> Result<f64> {
    Ok(equilibrium_gap(game, sigma, &vec![0.0; game.num_players()], concept)?)
}

fn support(game: &NormalFormGame, cells: &[(usize, usize)]) -> Vec<usize> {
    cells.iter().map(|&(r, c)| idx(game, r, c)).collect()
}

fn max_welfare(game: &NormalFormGame, concept: Concept, restrictions: &JointRestrictions) -> Result<Option<f64>> {
    let w = game.welfare();
    let zero = vec![0.0; game.num_players()];
    Ok(maximize_over_polytope(game, concept, &zero, &w, restrictions)?.map(|(_, v)| v))
}

fn max_mass(game: &NormalFormGame, concept: Concept, joint: usize, restrictions: &JointRestrictions) -> Result<f64> {
    let mut obj = vec![0.0; game.shape().joint_size()];
    obj[joint] = 1.0;
    let zero = vec![0.0; game.num_players()];
    maximize_over_polytope(game, concept, &zero, &obj, restrictions)?
        .map(|(_, v)| v)
        .ok_or_else(|| EvalError::Lp("empty polytope".into()))
}

/// Oracle solve of the standardized game with the given target builder.
fn oracle<F>(game: &NormalFormGame, concept: Concept, targets: F) -> Result<EquilibriumSolution>
where
    F: FnOnce(&NormalFormGame) -> Result<SelectionTargets>,
{
    let std_game = game.standardize(NormOrder::L2)?;
    let t = targets(&std_game)?;
    Ok(solve(&std_game, &t, concept, &SolveConfig::default())?.ok()?.solution)
}

/// The oracle's CCE with the most mass on one joint: minimum relative
/// entropy to a floored point mass there.
fn max_mass_oracle(game: &NormalFormGame, row: usize, col: usize) -> Result<JointDistribution> {
    let j = idx(game, row, col);
    let opts = TargetOptions {
        rho: FIXTURE_RHO,
        ..TargetOptions::default()
    };
    Ok(oracle(game, Concept::Cce, |g| {
        Ok(sample_pure_joint_targets(g.shape(), PURE_TARGET_FLOOR, &opts)?.swap_remove(j))
    })?
    .sigma)
}

fn max_entropy_oracle(game: &NormalFormGame, concept: Concept, rho: f64) -> Result<JointDistribution> {
    Ok(oracle(game, concept, |g| Ok(SelectionTargets::max_entropy(g.shape(), NormOrder::L2, rho)))?.sigma)
}

// ---------------------------------------------------------------------------
// CE welfare counterexample: two games of chicken side by side.

/// Symmetric 4x4 game from the row player's payoffs (`col(i, j) = row(j, i)`).
fn symmetric(row: [[f64; 4]; 4]) -> NormalFormGame {
    let r: Vec<f64> = row.iter().flatten().copied().collect();
    let c: Vec<f64> = (0..4).flat_map(|i| (0..4).map(move |j| row[j][i])).collect();
    NormalFormGame::bimatrix(4, 4, r, c).expect("4x4 payoffs")
}

pub fn ce_welfare_counterexample() -> FixtureGame {
    let game = symmetric([
        [-4.0, 2.0, -999.0, -999.0],
        [-2.0, 1.0, -999.0, -999.0],
        [-999.0, -999.0, -3.0, 2.0],
        [-999.0, -999.0, -2.0, 1.1],
    ]);
    FixtureGame {
        name: "ce-welfare-counterexample",
        description: "Two incompatible games of chicken; the welfare-maximizing joint (4,4) is not played by the welfare-maximizing CE",
        reconstructed: false,
        game,
        facts: vec![
            Fact {
                id: "w44-exceeds-w22",
                description: "welfare(4,4) - welfare(2,2), so a welfare softmax target favours (4,4)",
                expectation: Expectation::Approx { value: 0.2, tol: 1e-9 },
                compute: |g| {
                    let w = g.welfare();
                    Ok(w[idx(g, 4, 4)] - w[idx(g, 2, 2)])
                },
            },
            Fact {
                id: "low-block-ce-welfare",
                description: "max welfare of a CE supported on {(1,2),(2,1),(2,2)}",
                expectation: Expectation::Approx { value: 1.0, tol: 1e-6 },
                compute: |g| {
                    let r = JointRestrictions {
                        support: Some(support(g, &[(1, 2), (2, 1), (2, 2)])),
                        lower_bounds: vec![],
                    };
                    max_welfare(g, Concept::Ce, &r)?.ok_or_else(|| EvalError::Lp("no CE on that support".into()))
                },
            },
            Fact {
                id: "beats-any-ce-playing-44",
                description: "min over t of [low-block CE welfare - max welfare of CEs with sigma(4,4) >= t], t = 0.01, 0.02, ...",
                expectation: Expectation::AtLeast(1e-6),
                compute: |g| {
                    let low = JointRestrictions {
                        support: Some(support(g, &[(1, 2), (2, 1), (2, 2)])),
                        lower_bounds: vec![],
                    };
                    let best_low = max_welfare(g, Concept::Ce, &low)?.ok_or_else(|| EvalError::Lp("empty".into()))?;
                    let mut margin = f64::INFINITY;
                    for k in 1..=100 {
                        let r = JointRestrictions {
                            support: None,
                            lower_bounds: vec![(idx(g, 4, 4), k as f64 / 100.0)],
                        };
                        match max_welfare(g, Concept::Ce, &r)? {
                            Some(w) => margin = margin.min(best_low - w),
                            None => break,
                        }
                    }
                    Ok(margin)
                },
            },
        ],
    }
}

// ---------------------------------------------------------------------------
// CCE welfare counterexample.

pub fn cce_welfare_counterexample() -> FixtureGame {
    let game = symmetric([
        [2.0, 0.0, 0.0, 0.0],
        [0.0, 3.0, 0.0, -10.0],
        [0.0, 3.0, -10.0, -10.0],
        [2.0, 7.0, -6.0, 0.0],
    ]);
    FixtureGame {
        name: "cce-welfare-counterexample",
        description: "Two high-welfare joints (1,1) and (2,2); playing (2,2) too often invites a deviation to strategy 4",
        reconstructed: false,
        game,
        facts: vec![
            Fact {
                id: "11-is-exact-cce",
                description: "CCE gap of the point mass on (1,1) at eps = 0",
                expectation: Expectation::Approx { value: 0.0, tol: 1e-12 },
                compute: |g| exact_gap(g, &point_mass(g, 1, 1), Concept::Cce),
            },
            Fact {
                id: "11-welfare",
                description: "welfare of (1,1)",
                expectation: Expectation::Approx { value: 4.0, tol: 1e-12 },
                compute: |g| Ok(welfare_of(g, &point_mass(g, 1, 1))),
            },
            Fact {
                id: "stated-joint-is-cce",
                description: "CCE gap of 0.2 (2,2) + 0.4 (2,3) + 0.4 (3,2) at eps = 0",
                expectation: Expectation::Approx { value: 0.0, tol: 1e-12 },
                compute: |g| exact_gap(g, &stated_joint(g)?, Concept::Cce),
            },
            Fact {
                id: "stated-joint-deviation-to-4",
                description: "row payoff of deviating to strategy 4 against the stated joint",
                expectation: Expectation::Approx { value: 1.8, tol: 1e-12 },
                compute: |g| {
                    let marg = stated_joint(g)?.marginals();
                    Ok((0..4).map(|c| marg[1][c] * g.payoff(0)[idx(g, 4, c + 1)]).sum())
                },
            },
            Fact {
                id: "restricted-max-p22",
                description: "max sigma(2,2) over CCEs supported on {(2,2),(2,3),(3,2)}",
                expectation: Expectation::Approx { value: 0.2, tol: 1e-6 },
                compute: |g| {
                    let r = JointRestrictions {
                        support: Some(support(g, &[(2, 2), (2, 3), (3, 2)])),
                        lower_bounds: vec![],
                    };
                    max_mass(g, Concept::Cce, idx(g, 2, 2), &r)
                },
            },
            Fact {
                id: "lp-max-p22",
                description: "max sigma(2,2) over all exact CCEs (linear program)",
                expectation: Expectation::Approx { value: 0.2, tol: 0.02 },
                compute: |g| max_mass(g, Concept::Cce, idx(g, 2, 2), &JointRestrictions::default()),
            },
            Fact {
                id: "oracle-max-p22",
                description: "sigma(2,2) of the oracle CCE targeting (2,2)",
                expectation: Expectation::Approx { value: 0.2, tol: 0.02 },
                compute: |g| Ok(max_mass_oracle(g, 2, 2)?.probs()[idx(g, 2, 2)]),
            },
            Fact {
                id: "oracle-max-p23",
                description: "sigma(2,3) of the oracle CCE targeting (2,2)",
                expectation: Expectation::Approx { value: 0.4, tol: 0.02 },
                compute: |g| Ok(max_mass_oracle(g, 2, 2)?.probs()[idx(g, 2, 3)]),
            },
            Fact {
                id: "oracle-max-p32",
                description: "sigma(3,2) of the oracle CCE targeting (2,2)",
                expectation: Expectation::Approx { value: 0.4, tol: 0.02 },
                compute: |g| Ok(max_mass_oracle(g, 2, 2)?.probs()[idx(g, 3, 2)]),
            },
            Fact {
                id: "oracle-max-mean-payoff",
                description: "mean per-player payoff of the oracle CCE targeting (2,2)",
                expectation: Expectation::Approx { value: 1.8, tol: 0.05 },
                compute: |g| Ok(welfare_of(g, &max_mass_oracle(g, 2, 2)?) / 2.0),
            },
        ],
    }
}

fn stated_joint(g: &NormalFormGame) -> Result<JointDistribution> {
    let mut p = vec![0.0; 16];
    p[idx(g, 2, 2)] = 0.2;
    p[idx(g, 2, 3)] = 0.4;
    p[idx(g, 3, 2)] = 0.4;
    Ok(JointDistribution::new(g.shape().clone(), p)?)
}

// ---------------------------------------------------------------------------
// Textbook two-by-two games (reconstructions).

/// Prisoner's dilemma, strategies (C, D), payoffs as years lost.
pub fn prisoners_dilemma_game() -> NormalFormGame {
    NormalFormGame::bimatrix(2, 2, vec![-1.0, -3.0, 0.0, -2.0], vec![-1.0, 0.0, -3.0, -2.0]).expect("2x2")
}

/// Pure coordination: 1 on the diagonal, 0 off it.
pub fn pure_coordination_game() -> NormalFormGame {
    NormalFormGame::bimatrix(2, 2, vec![1.0, 0.0, 0.0, 1.0], vec![1.0, 0.0, 0.0, 1.0]).expect("2x2")
}

pub fn matching_pennies_game() -> NormalFormGame {
    NormalFormGame::bimatrix(2, 2, vec![1.0, -1.0, -1.0, 1.0], vec![-1.0, 1.0, 1.0, -1.0]).expect("2x2")
}

pub fn prisoners_dilemma() -> FixtureGame {
    FixtureGame {
        name: "prisoners-dilemma",
        description: "Textbook prisoner's dilemma (years lost); defection dominates",
        reconstructed: true,
        game: prisoners_dilemma_game(),
        facts: vec![
            Fact {
                id: "uniform-cce-gap",
                description: "CCE gap of the uniform joint at eps = 0",
                expectation: Expectation::Approx { value: 1.0, tol: 1e-12 },
                compute: |g| exact_gap(g, &JointDistribution::uniform(g.shape()), Concept::Cce),
            },
            Fact {
                id: "dd-is-exact-cce",
                description: "CCE gap of the point mass on (D,D) at eps = 0",
                expectation: Expectation::Approx { value: 0.0, tol: 1e-12 },
                compute: |g| exact_gap(g, &point_mass(g, 2, 2), Concept::Cce),
            },
            Fact {
                id: "unique-cce",
                description: "least sigma(D,D) over exact CCEs",
                expectation: Expectation::Approx { value: 1.0, tol: 1e-9 },
                compute: |g| {
                    let mut obj = vec![0.0; 4];
                    obj[idx(g, 2, 2)] = -1.0;
                    let zero = [0.0, 0.0];
                    let (_, v) = maximize_over_polytope(g, Concept::Cce, &zero, &obj, &Default::default())?
                        .ok_or_else(|| EvalError::Lp("empty".into()))?;
                    Ok(-v)
                },
            },
            Fact {
                id: "me-cce-near-dd",
                description: "mass on (D,D) of the maximum-entropy CCE at rho = 1e4",
                expectation: Expectation::AtLeast(0.99),
                compute: |g| Ok(max_entropy_oracle(g, Concept::Cce, 1e4)?.probs()[idx(g, 2, 2)]),
            },
            Fact {
                id: "pure-targets-collapse",
                description: "least (D,D) mass over the four pure-joint-target CCEs at rho = 1e4",
                expectation: Expectation::AtLeast(0.99),
                compute: |g| {
                    let opts = TargetOptions {
                        rho: 1e4,
                        ..TargetOptions::default()
                    };
                    let mut least = f64::INFINITY;
                    for j in 0..4 {
                        let s = oracle(g, Concept::Cce, |sg| {
                            Ok(sample_pure_joint_targets(sg.shape(), PURE_TARGET_FLOOR, &opts)?.swap_remove(j))
                        })?;
                        least = least.min(s.sigma.probs()[idx(g, 2, 2)]);
                    }
                    Ok(least)
                },
            },
        ],
    }
}

pub fn pure_coordination() -> FixtureGame {
    FixtureGame {
        name: "pure-coordination",
        description: "Textbook pure coordination game; both diagonal joints are equilibria",
        reconstructed: true,
        game: pure_coordination_game(),
        facts: vec![
            Fact {
                id: "diagonals-are-exact-cces",
                description: "largest CCE gap of the two diagonal point masses at eps = 0",
                expectation: Expectation::Approx { value: 0.0, tol: 1e-12 },
                compute: |g| Ok(exact_gap(g, &point_mass(g, 1, 1), Concept::Cce)?.max(exact_gap(g, &point_mass(g, 2, 2), Concept::Cce)?)),
            },
            Fact {
                id: "diagonal-targets-recovered",
                description: "least mass on the targeted diagonal joint over the two diagonal-target CCEs",
                expectation: Expectation::AtLeast(0.99),
                compute: |g| {
                    let a = max_mass_oracle(g, 1, 1)?.probs()[idx(g, 1, 1)];
                    let b = max_mass_oracle(g, 2, 2)?.probs()[idx(g, 2, 2)];
                    Ok(a.min(b))
                },
            },
        ],
    }
}

pub fn matching_pennies() -> FixtureGame {
    FixtureGame {
        name: "matching-pennies",
        description: "Textbook matching pennies; the unique Nash equilibrium is uniform",
        reconstructed: true,
        game: matching_pennies_game(),
        facts: vec![
            Fact {
                id: "me-cce-marginals-are-nash",
                description: "exploitability of the marginals of the maximum-entropy CCE (rho = 1e7)",
                expectation: Expectation::AtMost(1e-3),
                compute: |g| Ok(exploitability_of_marginals(g, &max_entropy_oracle(g, Concept::Cce, 1e7)?)),
            },
            Fact {
                id: "pure-joint-exploitability",
                description: "exploitability of the point mass on (1,1)",
                expectation: Expectation::Approx { value: 2.0, tol: 1e-12 },
                compute: |g| Ok(exploitability_of_marginals(g, &point_mass(g, 1, 1))),
            },
        ],
    }
}

/// Every shipped fixture.
pub fn all_fixtures() -> Vec<FixtureGame> {
    vec![
        ce_welfare_counterexample(),
        cce_welfare_counterexample(),
        prisoners_dilemma(),
        pure_coordination(),
        matching_pennies(),
    ]
}
