//! Exact vertex enumeration of small (C)CE polytopes by brute-force
//! intersection of constraint hyperplanes.

use nalgebra::{DMatrix, DVector};

use nes_core::{Concept, JointDistribution, NormalFormGame};

use crate::error::{EvalError, Result};
use crate::lp::PolytopeConstraints;

/// Enumeration is refused above this many hyperplane subsets.
pub const MAX_SUBSETS: u64 = 5_000_000;

/// Feasibility tolerance for candidate intersection points.
pub const FEASIBILITY_TOL: f64 = 1e-9;

/// Two vertices closer than this (infinity norm) are merged.
const DEDUP_TOL: f64 = 1e-7;

fn binomial(n: usize, k: usize) -> u64 {
    let k = k.min(n - k.min(n));
    (0..k).fold(1u64, |acc, i| acc.saturating_mul((n - i) as u64) / (i as u64 + 1))
}

/// Every vertex of `{sigma >= 0, sum sigma = 1, A sigma <= eps}`.
///
/// A vertex is the unique solution of `|A|` linearly independent tight
/// constraints, one of which is the normalization; every subset of
/// `|A| - 1` inequalities is tried.
pub fn enumerate_vertices(game: &NormalFormGame, concept: Concept, epsilon: &[f64]) -> Result<Vec<JointDistribution>> {
    let shape = game.shape();
    let d = shape.joint_size();
    if epsilon.len() != shape.num_players() {
        return Err(EvalError::InvalidInput("one epsilon per player".into()));
    }
    let constraints = PolytopeConstraints::new(game, concept);
    // Inequalities as (row, rhs) with row . sigma <= rhs.
    let mut ineq: Vec<(Vec<f64>, f64)> = (0..d)
        .map(|a| {
            let mut row = vec![0.0; d];
            row[a] = -1.0;
            (row, 0.0)
        })
        .collect();
    ineq.extend(constraints.rows.iter().map(|(p, row)| (row.clone(), epsilon[*p])));
    let m = ineq.len();
    if binomial(m, d - 1) > MAX_SUBSETS {
        return Err(EvalError::InvalidInput(format!(
            "{} hyperplane subsets exceed the enumeration budget",
            binomial(m, d - 1)
        )));
    }
    let mut vertices: Vec<Vec<f64>> = Vec::new();
    let mut subset: Vec<usize> = (0..d - 1).collect();
    loop {
        let mut mat = DMatrix::<f64>::zeros(d, d);
        let mut rhs = DVector::<f64>::zeros(d);
        for c in 0..d {
            mat[(0, c)] = 1.0;
        }
        rhs[0] = 1.0;
        for (r, &k) in subset.iter().enumerate() {
            for c in 0..d {
                mat[(r + 1, c)] = ineq[k].0[c];
            }
            rhs[r + 1] = ineq[k].1;
        }
        if let Some(x) = mat.clone().full_piv_lu().solve(&rhs) {
            let finite = x.iter().all(|v| v.is_finite());
            let residual: DVector<f64> = &mat * &x - &rhs;
            if finite && residual.amax() < 1e-9 && ineq.iter().all(|(row, b)| dot(row, x.as_slice()) <= b + FEASIBILITY_TOL) {
                let v: Vec<f64> = x.iter().map(|&p| p.max(0.0)).collect();
                if !vertices.iter().any(|w| w.iter().zip(&v).all(|(a, b)| (a - b).abs() < DEDUP_TOL)) {
                    vertices.push(v);
                }
            }
        }
        if !next_subset(&mut subset, m) {
            break;
        }
    }
    vertices
        .into_iter()
        .map(|v| Ok(JointDistribution::from_weights(shape.clone(), v)?))
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Advances a sorted k-subset of `0..n` in lexicographic order.
fn next_subset(subset: &mut [usize], n: usize) -> bool {
    let k = subset.len();
    if k == 0 {
        return false;
    }
    let mut i = k;
    while i > 0 {
        i -= 1;
        if subset[i] < n - k + i {
            subset[i] += 1;
            for t in i + 1..k {
                subset[t] = subset[t - 1] + 1;
            }
            return true;
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lp::{maximize_over_polytope, JointRestrictions};
    use nes_core::targets::sample_invariant_game;
    use nes_core::{GameShape, NormOrder};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn subsets_are_enumerated_exactly_once() {
        let mut s = vec![0, 1];
        let mut count = 1;
        while next_subset(&mut s, 5) {
            count += 1;
        }
        assert_eq!(count, 10);
        assert_eq!(binomial(5, 2), 10);
        assert_eq!(binomial(24, 15), 1_307_504);
    }

    #[test]
    fn loose_epsilon_gives_the_simplex_vertices() {
        let g = NormalFormGame::bimatrix(2, 2, vec![1.0, 0.0, 0.0, 1.0], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let v = enumerate_vertices(&g, Concept::Cce, &[10.0, 10.0]).unwrap();
        assert_eq!(v.len(), 4);
    }

    #[test]
    fn linear_objectives_are_maximized_at_enumerated_vertices() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let shape = GameShape::new(vec![2, 2]).unwrap();
        for concept in [Concept::Cce, Concept::Ce] {
            for _ in 0..10 {
                let g = sample_invariant_game(&shape, NormOrder::L2, &mut rng);
                let vertices = enumerate_vertices(&g, concept, &[0.0, 0.0]).unwrap();
                assert!(!vertices.is_empty());
                let c = PolytopeConstraints::new(&g, concept);
                for v in &vertices {
                    assert!(c.max_violation(v.probs(), &[0.0, 0.0]) < 1e-8);
                }
                for target in 0..4 {
                    let mut obj = vec![0.0; 4];
                    obj[target] = 1.0;
                    let (_, lp) = maximize_over_polytope(&g, concept, &[0.0, 0.0], &obj, &JointRestrictions::default())
                        .unwrap()
                        .unwrap();
                    let best = vertices.iter().map(|v| v.probs()[target]).fold(f64::MIN, f64::max);
                    assert!((best - lp).abs() < 1e-7, "{best} vs {lp}");
                }
            }
        }
    }
}
