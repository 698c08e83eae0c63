use crate::game::NormalFormGame;

/// Prisoner's dilemma, strategies (C, D), payoffs as years lost.
pub fn prisoners_dilemma() -> NormalFormGame {
    NormalFormGame::bimatrix(
        2,
        2,
        vec![-1.0, -3.0, 0.0, -2.0],
        vec![-1.0, 0.0, -3.0, -2.0],
    )
    .unwrap()
}

pub fn matching_pennies() -> NormalFormGame {
    NormalFormGame::bimatrix(2, 2, vec![1.0, -1.0, -1.0, 1.0], vec![-1.0, 1.0, 1.0, -1.0]).unwrap()
}
