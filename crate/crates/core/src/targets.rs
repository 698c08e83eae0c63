//! Selection targets: the bundle `(sigma_hat, eps_hat, eps_cap, W, rho, mu)`
//! that makes the regularized equilibrium unique, plus the game samplers used
//! for training.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::game::{center, standardize_tensor, GameShape, JointDistribution, NormOrder, NormalFormGame};

/// Default approximation weight.
pub const DEFAULT_RHO: f64 = 100.0;
/// Default welfare weight for the welfare-seeking parameterizations.
pub const DEFAULT_MU: f64 = 10.0;
/// Lower clamp on Dirichlet target joints before renormalizing.
pub const DIRICHLET_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Concept {
    #[serde(rename = "CE")]
    Ce,
    #[serde(rename = "CCE")]
    Cce,
}

impl fmt::Display for Concept {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Concept::Ce => "CE",
            Concept::Cce => "CCE",
        })
    }
}

impl FromStr for Concept {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "CE" => Ok(Concept::Ce),
            "CCE" => Ok(Concept::Cce),
            _ => Err(CoreError::UnknownConcept(s.to_string())),
        }
    }
}

/// The rows of the parameterization table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ParamName {
    /// Maximum entropy.
    Me,
    /// Minimum relative entropy to a caller-supplied target joint.
    Mt,
    /// Maximum utilitarian welfare.
    Mu,
    /// Maximum sampled welfare, maximum entropy.
    Mwme,
    /// Minimum relative entropy to a Dirichlet-sampled target joint.
    Mre,
    /// Maximum strength: the smallest reachable approximation parameter.
    Ms,
    EpsMe,
    EpsMwme,
    EpsMre,
}

impl ParamName {
    pub const ALL: [ParamName; 9] = [
        ParamName::Me,
        ParamName::Mt,
        ParamName::Mu,
        ParamName::Mwme,
        ParamName::Mre,
        ParamName::Ms,
        ParamName::EpsMe,
        ParamName::EpsMwme,
        ParamName::EpsMre,
    ];

    pub fn label(self) -> &'static str {
        match self {
            ParamName::Me => "ME",
            ParamName::Mt => "MT",
            ParamName::Mu => "MU",
            ParamName::Mwme => "MWME",
            ParamName::Mre => "MRE",
            ParamName::Ms => "MS",
            ParamName::EpsMe => "εME",
            ParamName::EpsMwme => "εMWME",
            ParamName::EpsMre => "εMRE",
        }
    }

    /// Welfare enters the objective (`mu > 0` by default).
    pub fn uses_welfare(self) -> bool {
        matches!(self, ParamName::Mu | ParamName::Mwme | ParamName::EpsMwme)
    }
}

impl fmt::Display for ParamName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for ParamName {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        let upper = s.trim().to_uppercase();
        let (eps, rest) = ["Ε", "EPS-", "EPS", "E-", "E"]
            .iter()
            .find_map(|prefix| upper.strip_prefix(prefix).map(|r| (true, r)))
            .filter(|(_, r)| matches!(*r, "ME" | "MWME" | "MRE"))
            .unwrap_or((false, upper.as_str()));
        let name = match (eps, rest) {
            (false, "ME") => ParamName::Me,
            (false, "MT") => ParamName::Mt,
            (false, "MU") => ParamName::Mu,
            (false, "MWME") => ParamName::Mwme,
            (false, "MRE") => ParamName::Mre,
            (false, "MS") => ParamName::Ms,
            (true, "ME") => ParamName::EpsMe,
            (true, "MWME") => ParamName::EpsMwme,
            (true, "MRE") => ParamName::EpsMre,
            _ => return Err(CoreError::UnknownParameterization(s.to_string())),
        };
        Ok(name)
    }
}

impl TryFrom<String> for ParamName {
    type Error = CoreError;

    fn try_from(value: String) -> Result<Self> {
        value.parse()
    }
}

impl From<ParamName> for String {
    fn from(value: ParamName) -> Self {
        value.label().to_string()
    }
}

/// A parameterization row paired with the solution concept it is solved for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Parameterization {
    pub name: ParamName,
    pub concept: Concept,
}

impl Parameterization {
    pub fn new(name: ParamName, concept: Concept) -> Self {
        Self { name, concept }
    }
}

impl fmt::Display for Parameterization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.name, self.concept)
    }
}

/// Everything that pins down one regularized equilibrium of a game.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionTargets {
    pub target_joint: JointDistribution,
    pub target_epsilon: Vec<f64>,
    pub epsilon_cap: Vec<f64>,
    pub welfare: Vec<f64>,
    pub rho: f64,
    pub mu: f64,
}

impl SelectionTargets {
    /// Checks the bundle's invariants against a game shape.
    pub fn validate(&self, shape: &GameShape) -> Result<()> {
        if self.target_joint.shape() != shape {
            return Err(CoreError::ShapeMismatch(format!(
                "target joint has shape {}, game has {shape}",
                self.target_joint.shape()
            )));
        }
        if self.target_joint.probs().iter().any(|&s| s <= 0.0) {
            return Err(CoreError::InvalidTargets(
                "target joint must have full support".into(),
            ));
        }
        let n = shape.num_players();
        if self.target_epsilon.len() != n || self.epsilon_cap.len() != n {
            return Err(CoreError::ShapeMismatch(format!(
                "need one target epsilon and one cap per player ({n})"
            )));
        }
        for (p, (e, cap)) in self.target_epsilon.iter().zip(&self.epsilon_cap).enumerate() {
            if !(e < cap) {
                return Err(CoreError::InvalidTargets(format!(
                    "player {p}: target epsilon {e} must be below the cap {cap}"
                )));
            }
        }
        if self.welfare.len() != shape.joint_size() {
            return Err(CoreError::ShapeMismatch("welfare tensor size".into()));
        }
        if !(self.rho > 0.0) || !self.rho.is_finite() {
            return Err(CoreError::InvalidTargets(format!("rho = {} must be positive", self.rho)));
        }
        if !(self.mu >= 0.0) || !self.mu.is_finite() {
            return Err(CoreError::InvalidTargets(format!("mu = {} must be >= 0", self.mu)));
        }
        let finite = self
            .target_epsilon
            .iter()
            .chain(&self.epsilon_cap)
            .chain(&self.welfare)
            .all(|v| v.is_finite());
        if !finite {
            return Err(CoreError::NonFinite("selection targets"));
        }
        Ok(())
    }

    /// Maximum-entropy targets for a shape: uniform joint, zero target
    /// epsilon, no welfare.
    pub fn max_entropy(shape: &GameShape, norm: NormOrder, rho: f64) -> Self {
        let z = norm.scale(shape.joint_size());
        Self {
            target_joint: JointDistribution::uniform(shape),
            target_epsilon: vec![0.0; shape.num_players()],
            epsilon_cap: vec![z; shape.num_players()],
            welfare: vec![0.0; shape.joint_size()],
            rho,
            mu: 0.0,
        }
    }
}

/// Knobs shared by every parameterization.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetOptions {
    pub norm: NormOrder,
    pub rho: f64,
    /// Welfare weight; `None` picks [`DEFAULT_MU`] for welfare rows, 0 otherwise.
    pub mu: Option<f64>,
    /// The target joint of the MT row.
    pub target_joint: Option<JointDistribution>,
}

impl Default for TargetOptions {
    fn default() -> Self {
        Self {
            norm: NormOrder::L2,
            rho: DEFAULT_RHO,
            mu: None,
            target_joint: None,
        }
    }
}

/// Builds the targets of one parameterization row for a standardized game.
pub fn make_targets<R: Rng + ?Sized>(
    name: ParamName,
    game: &NormalFormGame,
    opts: &TargetOptions,
    rng: &mut R,
) -> Result<SelectionTargets> {
    let shape = game.shape();
    let n = shape.num_players();
    let z = opts.norm.scale(shape.joint_size());
    let uniform = || JointDistribution::uniform(shape);

    let target_joint = match name {
        ParamName::Mt => opts
            .target_joint
            .clone()
            .ok_or(CoreError::MissingTargetJoint)?,
        ParamName::Mre | ParamName::EpsMre => sample_dirichlet_joint(shape, rng),
        _ => uniform(),
    };
    let target_epsilon = match name {
        ParamName::Ms => vec![-z; n],
        ParamName::EpsMe | ParamName::EpsMwme | ParamName::EpsMre => {
            (0..n).map(|_| rng.random_range(-z..z)).collect()
        }
        _ => vec![0.0; n],
    };
    let welfare = match name {
        ParamName::Mu => standardize_tensor(&game.welfare(), opts.norm)
            .map(|(w, _)| w)
            .unwrap_or_else(|| vec![0.0; shape.joint_size()]),
        ParamName::Mwme | ParamName::EpsMwme => sample_sphere(shape.joint_size(), opts.norm, rng),
        _ => vec![0.0; shape.joint_size()],
    };
    let mu = if name.uses_welfare() {
        opts.mu.unwrap_or(DEFAULT_MU)
    } else {
        0.0
    };
    let targets = SelectionTargets {
        target_joint,
        target_epsilon,
        epsilon_cap: vec![z; n],
        welfare,
        rho: opts.rho,
        mu,
    };
    targets.validate(shape)?;
    Ok(targets)
}

/// A flat-Dirichlet joint, clamped below at [`DIRICHLET_FLOOR`].
pub fn sample_dirichlet_joint<R: Rng + ?Sized>(shape: &GameShape, rng: &mut R) -> JointDistribution {
    let mut w: Vec<f64> = (0..shape.joint_size()).map(|_| Exp1.sample(rng)).collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v = (*v / total).max(DIRICHLET_FLOOR));
    JointDistribution::from_weights(shape.clone(), w).expect("positive weights")
}

/// A point on the centered `L_m` sphere of radius `Z_m`: isotropic Gaussian,
/// centered, normalized and rescaled.
pub fn sample_sphere<R: Rng + ?Sized>(len: usize, norm: NormOrder, rng: &mut R) -> Vec<f64> {
    loop {
        let mut g: Vec<f64> = (0..len).map(|_| StandardNormal.sample(rng)).collect();
        center(&mut g);
        let n = norm.norm(&g);
        if n > 0.0 {
            let scale = norm.scale(len) / n;
            g.iter_mut().for_each(|v| *v *= scale);
            return g;
        }
    }
}

/// A game drawn from the offset- and scale-invariant subspace: every player's
/// payoff is an independent point on the centered `L_m` sphere.
pub fn sample_invariant_game<R: Rng + ?Sized>(
    shape: &GameShape,
    norm: NormOrder,
    rng: &mut R,
) -> NormalFormGame {
    let payoffs = (0..shape.num_players())
        .map(|_| sample_sphere(shape.joint_size(), norm, rng))
        .collect();
    NormalFormGame::new(shape.clone(), payoffs).expect("sampled payoffs match the shape")
}

/// One minimum-relative-entropy target per joint action: mass
/// `1 - (|A| - 1) * floor` on that joint and `floor` everywhere else.
pub fn sample_pure_joint_targets(
    shape: &GameShape,
    floor: f64,
    opts: &TargetOptions,
) -> Result<Vec<SelectionTargets>> {
    let size = shape.joint_size();
    if !(floor > 0.0) || floor * size as f64 >= 1.0 {
        return Err(CoreError::FloorTooLarge {
            floor,
            joint_size: size,
        });
    }
    let base = SelectionTargets::max_entropy(shape, opts.norm, opts.rho);
    (0..size)
        .map(|j| {
            let mut probs = vec![floor; size];
            probs[j] = 1.0 - (size - 1) as f64 * floor;
            let target_joint = JointDistribution::new(shape.clone(), probs)?;
            Ok(SelectionTargets {
                target_joint,
                ..base.clone()
            })
        })
        .collect()
}
