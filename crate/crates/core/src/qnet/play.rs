use super::{encode_state, NodeOverrideSet, QNetwork, Tensor, Visited};
use crate::error::{Error, Result};
use crate::maze::{Action, MazeGrid, MoveOutcome, Position};

pub const DEFAULT_STEP_CAP: usize = 200;

/// When a playout's node overrides take effect.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActivationRule {
    Always,
    /// From the first time the agent stands on optimal-path cell `k`
    /// (1-based) until the episode ends.
    FromPathIndex(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EpisodeResult {
    pub steps: usize,
    pub success: bool,
    pub trajectory: Vec<Position>,
}

/// Argmax over the Q-values; ties go to the earliest action.
pub fn greedy_action(net: &QNetwork, state: &Tensor, overrides: &NodeOverrideSet) -> Result<Action> {
    let q = net.forward(state, overrides)?;
    let mut best = 0;
    for i in 1..q.len() {
        if q[i] > q[best] {
            best = i;
        }
    }
    Ok(Action::from_index(best).expect("four actions"))
}

/// Greedy playout from `start_pos` until the exit is reached or `cap`
/// moves have been made.
pub fn play_episode(
    net: &QNetwork,
    grid: &MazeGrid,
    start_pos: Position,
    overrides: &NodeOverrideSet,
    activation: ActivationRule,
    cap: usize,
) -> Result<EpisodeResult> {
    if !grid.is_free(start_pos) {
        return Err(Error::NotFree(start_pos));
    }
    let trigger = match activation {
        ActivationRule::Always => None,
        ActivationRule::FromPathIndex(k) => {
            let path = grid.shortest_path()?;
            let cell = path
                .at(k)
                .ok_or_else(|| Error::range("qnet", "path index", format!("{k} not in 1..={}", path.len())))?;
            Some(cell)
        }
    };
    let clean = NodeOverrideSet::new();
    let mut active = trigger.map_or(true, |cell| cell == start_pos);
    let mut pos = start_pos;
    let mut visited = Visited::new(grid);
    let mut trajectory = vec![pos];
    if pos == grid.exit() {
        return Ok(EpisodeResult {
            steps: 0,
            success: true,
            trajectory,
        });
    }
    for step in 1..=cap {
        let state = encode_state(grid, pos, &visited)?;
        let action = greedy_action(net, &state, if active { overrides } else { &clean })?;
        visited.insert(pos);
        let (next, outcome) = grid.apply_move(pos, action);
        pos = next;
        trajectory.push(pos);
        if outcome == MoveOutcome::Win {
            return Ok(EpisodeResult {
                steps: step,
                success: true,
                trajectory,
            });
        }
        if trigger == Some(pos) {
            active = true;
        }
    }
    Ok(EpisodeResult {
        steps: cap,
        success: false,
        trajectory,
    })
}

/// Playout from the maze start with overrides switched on at optimal-path
/// cell `k`.
///
/// The last path cell is the exit itself, which an unattacked agent reaches
/// before the attack could begin. For that index the agent starts on the
/// cell before the exit with the overrides already active, so the attack
/// still has a move to act on.
pub fn play_from_path_index(
    net: &QNetwork,
    grid: &MazeGrid,
    k: usize,
    overrides: &NodeOverrideSet,
    cap: usize,
) -> Result<EpisodeResult> {
    let path = grid.shortest_path()?;
    if k == 0 || k > path.len() {
        return Err(Error::range("qnet", "path index", format!("{k} not in 1..={}", path.len())));
    }
    if k == path.len() {
        let before_exit = path.at(k - 1).expect("path has at least two cells");
        play_episode(net, grid, before_exit, overrides, ActivationRule::Always, cap)
    } else {
        play_episode(net, grid, grid.start(), overrides, ActivationRule::FromPathIndex(k), cap)
    }
}
