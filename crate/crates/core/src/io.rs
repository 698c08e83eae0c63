//! JSON file formats for games, targets and solutions.
//!
//! Every float is written with 17 significant digits, which round-trips any
//! finite double exactly.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use rand::Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::dual::DualVariables;
use crate::error::{CoreError, Result};
use crate::game::{standardize_tensor, GameShape, JointDistribution, NormOrder, NormalFormGame};
use crate::oracle::SolveReport;
use crate::targets::{make_targets, Concept, ParamName, SelectionTargets, TargetOptions, DEFAULT_RHO};

/// The optional `targets` object of a game file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetsSpec {
    pub parameterization: ParamName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    /// Explicit target joint, flat row-major.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_hat: Option<Vec<f64>>,
    /// Explicit target epsilons, in the game's own payoff units.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon_hat: Option<Vec<f64>>,
    /// Explicit welfare tensor; it is standardized like a payoff.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub welfare: Option<Vec<f64>>,
}

/// `{ "shape": [...], "payoffs": [[...], ...], "targets": {...}? }`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameFile {
    pub shape: GameShape,
    pub payoffs: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub targets: Option<TargetsSpec>,
}

impl GameFile {
    pub fn from_game(game: &NormalFormGame) -> Self {
        Self {
            shape: game.shape().clone(),
            payoffs: game.payoffs().to_vec(),
            targets: None,
        }
    }

    pub fn game(&self) -> Result<NormalFormGame> {
        NormalFormGame::new(self.shape.clone(), self.payoffs.clone())
    }
}

/// Overrides applied on top of a game file's own `targets` object.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TargetOverrides {
    pub parameterization: Option<ParamName>,
    pub rho: Option<f64>,
    pub mu: Option<f64>,
}

/// Builds the selection targets of a raw game for its standardized version.
///
/// `factors` are the per-player scales returned by
/// [`NormalFormGame::standardize_with_factors`]; explicit target epsilons are
/// multiplied by them so that they keep their meaning in standardized units.
pub fn resolve_targets<R: Rng + ?Sized>(
    spec: Option<&TargetsSpec>,
    overrides: &TargetOverrides,
    standardized: &NormalFormGame,
    factors: &[f64],
    norm: NormOrder,
    rng: &mut R,
) -> Result<(ParamName, SelectionTargets)> {
    let shape = standardized.shape();
    let name = overrides
        .parameterization
        .or(spec.map(|s| s.parameterization))
        .unwrap_or(ParamName::Me);
    let target_joint = spec
        .and_then(|s| s.sigma_hat.clone())
        .map(|p| JointDistribution::new(shape.clone(), p))
        .transpose()?;
    let opts = TargetOptions {
        norm,
        rho: overrides.rho.or(spec.and_then(|s| s.rho)).unwrap_or(DEFAULT_RHO),
        mu: overrides.mu.or(spec.and_then(|s| s.mu)),
        target_joint: target_joint.clone(),
    };
    let mut targets = make_targets(name, standardized, &opts, rng)?;
    if let Some(joint) = target_joint {
        targets.target_joint = joint;
    }
    if let Some(eps) = spec.and_then(|s| s.epsilon_hat.as_ref()) {
        if eps.len() != shape.num_players() {
            return Err(CoreError::ShapeMismatch(format!(
                "{} target epsilons for {} players",
                eps.len(),
                shape.num_players()
            )));
        }
        targets.target_epsilon = eps.iter().zip(factors).map(|(e, f)| e * f).collect();
    }
    if let Some(w) = spec.and_then(|s| s.welfare.as_ref()) {
        if w.len() != shape.joint_size() {
            return Err(CoreError::ShapeMismatch("welfare tensor size".into()));
        }
        targets.welfare = standardize_tensor(w, norm)
            .map(|(w, _)| w)
            .unwrap_or_else(|| vec![0.0; w.len()]);
    }
    targets.validate(shape)?;
    Ok((name, targets))
}

/// `{ "sigma", "epsilon", "duals", "loss", "converged", ... }`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionFile {
    pub shape: GameShape,
    pub concept: Concept,
    pub parameterization: ParamName,
    /// Recovered joint, flat row-major.
    pub sigma: Vec<f64>,
    /// Recovered epsilons in the game's own payoff units.
    pub epsilon: Vec<f64>,
    /// Recovered epsilons in standardized units.
    pub epsilon_standardized: Vec<f64>,
    /// Dual variables of the standardized problem, one array per player.
    pub duals: Vec<Vec<f64>>,
    pub loss: f64,
    pub converged: bool,
    pub iterations: usize,
    pub grad_norm: f64,
}

impl SolutionFile {
    pub fn from_report(report: &SolveReport, parameterization: ParamName, factors: &[f64]) -> Self {
        let eps = &report.solution.epsilon;
        Self {
            shape: report.duals.shape().clone(),
            concept: report.duals.concept(),
            parameterization,
            sigma: report.solution.sigma.probs().to_vec(),
            epsilon: eps.iter().zip(factors).map(|(e, f)| e / f).collect(),
            epsilon_standardized: eps.clone(),
            duals: report.duals.values().to_vec(),
            loss: report.solution.loss,
            converged: report.converged,
            iterations: report.iterations,
            grad_norm: report.final_grad_norm,
        }
    }

    pub fn dual_variables(&self) -> Result<DualVariables> {
        DualVariables::new(self.concept, &self.shape, self.duals.clone())
    }
}

/// JSON formatter that writes floats as `{:.16e}` (17 significant digits).
#[derive(Debug, Clone, Copy, Default)]
pub struct ExactFloatFormatter;

impl serde_json::ser::Formatter for ExactFloatFormatter {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        write!(writer, "{:.16e}", value as f64)
    }
}

/// Serializes `value` with [`ExactFloatFormatter`].
pub fn to_json_string<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, ExactFloatFormatter);
    value.serialize(&mut ser)?;
    buf.push(b'\n');
    Ok(String::from_utf8(buf).expect("JSON is UTF-8"))
}

/// Writes `value` as JSON through a temporary file and an atomic rename.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, to_json_string(value)?.as_bytes())
}

/// Writes `bytes` to a sibling temporary file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| CoreError::InvalidConfig(format!("`{}` is not a file path", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", file_name.to_string_lossy()));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{solve, SolveConfig};
    use crate::targets::sample_invariant_game;
    use crate::test_games::prisoners_dilemma;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn game_file_round_trips_bit_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let shape = GameShape::new(vec![3, 2, 2]).unwrap();
        let game = sample_invariant_game(&shape, NormOrder::L2, &mut rng);
        let text = to_json_string(&GameFile::from_game(&game)).unwrap();
        let back: GameFile = serde_json::from_str(&text).unwrap();
        assert_eq!(back.game().unwrap(), game);
    }

    #[test]
    fn game_file_with_targets_parses() {
        let text = r#"{"shape": [2, 2], "payoffs": [[-1, -3, 0, -2], [-1, 0, -3, -2]],
            "targets": {"parameterization": "MRE", "rho": 50, "epsilon_hat": [0.5, -0.5]}}"#;
        let file: GameFile = serde_json::from_str(text).unwrap();
        let spec = file.targets.as_ref().unwrap();
        assert_eq!(spec.parameterization, ParamName::Mre);
        let (std, factors) = file.game().unwrap().standardize_with_factors(NormOrder::L2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (name, t) =
            resolve_targets(Some(spec), &TargetOverrides::default(), &std, &factors, NormOrder::L2, &mut rng)
                .unwrap();
        assert_eq!(name, ParamName::Mre);
        assert_eq!(t.rho, 50.0);
        assert!((t.target_epsilon[0] - 0.5 * 2.0 / 5f64.sqrt()).abs() < 1e-15);

        let overrides = TargetOverrides {
            parameterization: Some(ParamName::Me),
            rho: Some(7.0),
            mu: None,
        };
        let (name, t) = resolve_targets(Some(spec), &overrides, &std, &factors, NormOrder::L2, &mut rng).unwrap();
        assert_eq!(name, ParamName::Me);
        assert_eq!(t.rho, 7.0);
    }

    #[test]
    fn unknown_parameterization_is_an_error() {
        let text = r#"{"shape": [2, 2], "payoffs": [[0, 1, 2, 3], [0, 1, 2, 3]],
            "targets": {"parameterization": "XYZ"}}"#;
        assert!(serde_json::from_str::<GameFile>(text).is_err());
    }

    #[test]
    fn solution_file_round_trips() {
        let (g, factors) = prisoners_dilemma().standardize_with_factors(NormOrder::L2).unwrap();
        let t = SelectionTargets::max_entropy(g.shape(), NormOrder::L2, 100.0);
        let r = solve(&g, &t, Concept::Cce, &SolveConfig::default()).unwrap();
        let file = SolutionFile::from_report(&r, ParamName::Me, &factors);
        let dir = std::env::temp_dir().join(format!("nes-core-io-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("sol.json");
        write_json(&path, &file).unwrap();
        let back: SolutionFile = read_json(&path).unwrap();
        assert_eq!(back, file);
        assert_eq!(back.dual_variables().unwrap(), r.duals);
        fs::remove_dir_all(&dir).unwrap();
    }

    proptest! {
        #[test]
        fn floats_round_trip(x in any::<f64>().prop_filter("finite", |x| x.is_finite())) {
            let text = to_json_string(&vec![x]).unwrap();
            let back: Vec<f64> = serde_json::from_str(&text).unwrap();
            prop_assert_eq!(back[0].to_bits(), x.to_bits());
        }
    }
}
