use std::collections::BTreeSet;

use super::NEURON_COUNT;
use crate::error::Result;
use crate::maze::{MazeGrid, OptimalPath, Position};
use crate::qnet::layer1_id;

/// Time the agent spends on each path cell, ms.
pub const SEGMENT_MS: f64 = 1000.0;
/// Input current for neurons not tied to the agent's surroundings, mV/ms.
pub const BASE_CURRENT: f64 = 10.0;
/// Input current for intervening neurons, mV/ms.
pub const INTERVENING_CURRENT: f64 = 15.0;

/// Layer-1 neurons whose 3×3 receptive field covers at least one cell the
/// agent can move to from `pos`.
pub fn intervening_neurons(grid: &MazeGrid, pos: Position) -> Result<BTreeSet<usize>> {
    let neighbours: Vec<Position> = grid
        .valid_moves(pos)?
        .into_iter()
        .filter_map(|a| grid.neighbor(pos, a))
        .collect();
    let mut ids = BTreeSet::new();
    for q in neighbours {
        // Receptive field rows r..r+2 contain q.row  <=>  q.row-2 <= r <= q.row.
        for r in q.row.saturating_sub(2)..=q.row.min(4) {
            for c in q.col.saturating_sub(2)..=q.col.min(4) {
                ids.extend((0..8).map(|f| layer1_id(r, c, f)));
            }
        }
    }
    Ok(ids)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub duration_ms: f64,
    /// Per-neuron input current, mV/ms.
    pub currents: Vec<f64>,
}

/// Piecewise-constant input currents, one segment per visited path cell.
#[derive(Debug, Clone, PartialEq)]
pub struct StimulusSchedule {
    pub segments: Vec<Segment>,
}

impl StimulusSchedule {
    pub fn duration_ms(&self) -> f64 {
        self.segments.iter().map(|s| s.duration_ms).sum()
    }

    /// The same currents for `duration_ms`.
    pub fn constant(currents: Vec<f64>, duration_ms: f64) -> Self {
        StimulusSchedule {
            segments: vec![Segment { duration_ms, currents }],
        }
    }
}

/// While the agent stands on `path[k]`, its intervening neurons get
/// 15 mV/ms and every other neuron 10 mV/ms.
pub fn build_stimulus(grid: &MazeGrid, path: &OptimalPath) -> Result<StimulusSchedule> {
    let segments = path
        .positions()
        .iter()
        .map(|&pos| {
            let hot = intervening_neurons(grid, pos)?;
            let currents = (0..NEURON_COUNT)
                .map(|id| if hot.contains(&id) { INTERVENING_CURRENT } else { BASE_CURRENT })
                .collect();
            Ok(Segment {
                duration_ms: SEGMENT_MS,
                currents,
            })
        })
        .collect::<Result<_>>()?;
    Ok(StimulusSchedule { segments })
}
