//! Small transition models shared by unit tests across modules.

use crate::env::EnvParams;
use crate::grid::{build_transition_model, Branch, GridSpec, TransitionModel};

pub(crate) fn mountain_car(n_pos: usize, n_vel: usize) -> TransitionModel {
    let params = EnvParams::default();
    let grid = GridSpec::new(n_pos, n_vel, &params).unwrap();
    build_transition_model(&params, &grid).unwrap()
}

/// Single-action chain 0 -> 1 -> ... -> n-1 with the last state
/// terminal and reward -1 on every move.
pub(crate) fn chain(n: usize) -> TransitionModel {
    let mut branches = vec![Vec::new(); n];
    let mut terminal = vec![false; n];
    terminal[n - 1] = true;
    for (i, row) in branches.iter_mut().enumerate().take(n - 1) {
        row.push(Branch { dest: i + 1, prob: 1.0, reward: -1.0 });
    }
    TransitionModel::from_parts(n, 1, 1, branches, terminal, 0).unwrap()
}
