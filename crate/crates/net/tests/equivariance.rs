//! End-to-end permutation equivariance of the network's forward pass.

use nes_core::targets::{sample_dirichlet_joint, sample_invariant_game, sample_sphere};
use nes_core::{Concept, DualVariables, GameShape, NormOrder, SelectionTargets};
use nes_net::symmetry::{permute_dual_players, permute_dual_strategies, permute_instance_players, permute_instance_strategies};
use nes_net::trainer::sample_instances;
use nes_net::{Instance, Network, NetworkConfig};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-10;
const PERMUTATIONS: usize = 50;

/// An instance with every input channel non-trivial.
fn rich_instance(shape: &GameShape, rng: &mut ChaCha8Rng) -> Instance {
    let game = sample_invariant_game(shape, NormOrder::L2, rng);
    let n = shape.num_players();
    let base = SelectionTargets::max_entropy(shape, NormOrder::L2, 100.0);
    let targets = SelectionTargets {
        target_joint: sample_dirichlet_joint(shape, rng),
        target_epsilon: (0..n).map(|p| rng.random_range(-0.5..0.5) * base.epsilon_cap[p]).collect(),
        welfare: sample_sphere(shape.joint_size(), NormOrder::L2, rng),
        mu: 1.0,
        ..base
    };
    Instance::new(game, targets)
}

fn network(concept: Concept, rng: &mut ChaCha8Rng) -> Network {
    let shape = GameShape::new(vec![3, 3]).unwrap();
    let dummy = sample_instances(&shape, nes_core::ParamName::Mre, &Default::default(), 256, rng).unwrap();
    Network::initialize(NetworkConfig::desk(concept, 2), &dummy, rng).unwrap()
}


fn max_diff(a: &DualVariables, b: &DualVariables) -> f64 {
    a.values()
        .iter()
        .flatten()
        .zip(b.values().iter().flatten())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn random_perms(shape: &GameShape, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    shape
        .strategies()
        .iter()
        .map(|&n| {
            let mut p: Vec<usize> = (0..n).collect();
            p.shuffle(rng);
            p
        })
        .collect()
}

fn check_strategies(shape: &str, concept: Concept, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = network(concept, &mut rng);
    let shape: GameShape = shape.parse().unwrap();
    let mut worst = 0.0f64;
    for _ in 0..PERMUTATIONS {
        let inst = rich_instance(&shape, &mut rng);
        let perms = random_perms(&shape, &mut rng);
        let out = net.forward(&inst.game, &inst.targets).unwrap();
        let moved = permute_instance_strategies(&inst, &perms).unwrap();
        let out_moved = net.forward(&moved.game, &moved.targets).unwrap();
        worst = worst.max(max_diff(&out_moved, &permute_dual_strategies(&out, &perms).unwrap()));
    }
    assert!(worst <= TOL, "{shape} {concept:?}: worst deviation {worst:e}");
}

fn check_players(shape: &str, concept: Concept, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = network(concept, &mut rng);
    let shape: GameShape = shape.parse().unwrap();
    let mut worst = 0.0f64;
    for _ in 0..PERMUTATIONS {
        let inst = rich_instance(&shape, &mut rng);
        let mut perm: Vec<usize> = (0..shape.num_players()).collect();
        perm.shuffle(&mut rng);
        let out = net.forward(&inst.game, &inst.targets).unwrap();
        let moved = permute_instance_players(&inst, &perm).unwrap();
        let out_moved = net.forward(&moved.game, &moved.targets).unwrap();
        worst = worst.max(max_diff(&out_moved, &permute_dual_players(&out, &perm).unwrap()));
    }
    assert!(worst <= TOL, "{shape} {concept:?}: worst deviation {worst:e}");
}

#[test]
fn strategy_permutations_three_by_three() {
    check_strategies("3x3", Concept::Cce, 1);
    check_strategies("3x3", Concept::Ce, 2);
}

#[test]
fn strategy_permutations_two_by_two_by_two() {
    check_strategies("2x2x2", Concept::Cce, 3);
    check_strategies("2x2x2", Concept::Ce, 4);
}

#[test]
fn strategy_permutations_non_cubic() {
    check_strategies("2x4", Concept::Cce, 5);
    check_strategies("3x2", Concept::Ce, 6);
}

#[test]
fn player_permutations_on_cubic_games() {
    check_players("3x3", Concept::Cce, 7);
    check_players("2x2x2", Concept::Cce, 8);
    check_players("2x2x2", Concept::Ce, 9);
    check_players("3x3", Concept::Ce, 10);
}
