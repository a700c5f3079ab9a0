use serde::{Deserialize, Serialize};

use super::stimulus::SEGMENT_MS;
use crate::error::{Error, Result};
use crate::metrics::whole_ratio;
use crate::qnet::TOTAL_NODES;

/// Offset of every attack from the moment the agent enters a cell, ms.
pub const ATTACK_DELAY_MS: f64 = 50.0;

/// Simulated window and integration step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunClock {
    pub t_win_ms: f64,
    pub dt_ms: f64,
}

impl Default for RunClock {
    fn default() -> Self {
        RunClock {
            t_win_ms: 27.0 * SEGMENT_MS,
            dt_ms: 0.1,
        }
    }
}

impl RunClock {
    pub fn new(t_win_ms: f64, dt_ms: f64) -> Result<Self> {
        let clock = RunClock { t_win_ms, dt_ms };
        clock.validate()?;
        Ok(clock)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt_ms > 0.0 && self.dt_ms <= 1.0) {
            return Err(Error::range("snn", "dt", format!("{} ms not in (0, 1]", self.dt_ms)));
        }
        if !(self.t_win_ms > 0.0) || whole_ratio(self.t_win_ms, self.dt_ms).is_none() {
            return Err(Error::range(
                "snn",
                "t_win",
                format!("{} ms is not a positive multiple of dt {}", self.t_win_ms, self.dt_ms),
            ));
        }
        Ok(())
    }

    pub fn steps(&self) -> u64 {
        whole_ratio(self.t_win_ms, self.dt_ms).unwrap_or(0)
    }

    /// Step index of an instant that must lie on the clock grid.
    pub fn step_of(&self, t_ms: f64, what: &'static str) -> Result<u64> {
        whole_ratio(t_ms, self.dt_ms)
            .ok_or_else(|| Error::range("snn", what, format!("{t_ms} ms is not a multiple of dt {}", self.dt_ms)))
    }

    /// Number of one-second path positions in the window.
    pub fn positions(&self) -> usize {
        (self.t_win_ms / SEGMENT_MS).floor() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackKind {
    Jam,
    Flo,
}

impl std::fmt::Display for AttackKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AttackKind::Jam => "jam",
            AttackKind::Flo => "flo",
        })
    }
}

/// One attack on a set of neurons.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum AttackPlan {
    /// Hold the targets at `v_min` during `[t_attk, t_attk + t_pulse)`.
    Jam {
        targets: Vec<usize>,
        t_attk_ms: f64,
        t_pulse_ms: f64,
    },
    /// Add `increment_mv` to every target's `v` once, at `t_attk`.
    Flo {
        targets: Vec<usize>,
        t_attk_ms: f64,
        increment_mv: f64,
    },
}

impl AttackPlan {
    pub fn jam(targets: Vec<usize>, t_attk_ms: f64, t_pulse_ms: f64) -> Result<Self> {
        let plan = AttackPlan::Jam {
            targets,
            t_attk_ms,
            t_pulse_ms,
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn flo(targets: Vec<usize>, t_attk_ms: f64, increment_mv: f64) -> Result<Self> {
        let plan = AttackPlan::Flo {
            targets,
            t_attk_ms,
            increment_mv,
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn kind(&self) -> AttackKind {
        match self {
            AttackPlan::Jam { .. } => AttackKind::Jam,
            AttackPlan::Flo { .. } => AttackKind::Flo,
        }
    }

    pub fn targets(&self) -> &[usize] {
        match self {
            AttackPlan::Jam { targets, .. } | AttackPlan::Flo { targets, .. } => targets,
        }
    }

    pub fn t_attk_ms(&self) -> f64 {
        match self {
            AttackPlan::Jam { t_attk_ms, .. } | AttackPlan::Flo { t_attk_ms, .. } => *t_attk_ms,
        }
    }

    /// `[start, end)` in ms; a flooding impulse occupies a single instant.
    pub fn window_ms(&self) -> (f64, f64) {
        match self {
            AttackPlan::Jam {
                t_attk_ms, t_pulse_ms, ..
            } => (*t_attk_ms, t_attk_ms + t_pulse_ms),
            AttackPlan::Flo { t_attk_ms, .. } => (*t_attk_ms, *t_attk_ms),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(&bad) = self.targets().iter().find(|&&t| t >= TOTAL_NODES) {
            return Err(Error::range("snn", "targets", format!("neuron {bad} >= {TOTAL_NODES}")));
        }
        let t = self.t_attk_ms();
        if !(t >= 0.0 && t.is_finite()) {
            return Err(Error::range("snn", "t_attk", format!("{t} ms")));
        }
        match self {
            AttackPlan::Jam { t_pulse_ms, .. } if !(*t_pulse_ms > 0.0 && t_pulse_ms.is_finite()) => {
                Err(Error::range("snn", "t_pulse", format!("{t_pulse_ms} ms must be positive")))
            }
            AttackPlan::Flo { increment_mv, .. } if !increment_mv.is_finite() => {
                Err(Error::range("snn", "vi", format!("{increment_mv} mV")))
            }
            _ => Ok(()),
        }
    }
}

/// Jamming that starts 50 ms into path position `first_pos` (1-based) and
/// lasts until the end of position `first_pos + n_positions - 1`.
pub fn make_jam_plan(targets: Vec<usize>, first_pos: usize, n_positions: usize, clock: &RunClock) -> Result<AttackPlan> {
    let total = clock.positions();
    if first_pos == 0 || n_positions == 0 || first_pos + n_positions - 1 > total {
        return Err(Error::range(
            "snn",
            "first_pos/n_positions",
            format!("positions {first_pos}..{} exceed 1..={total}", first_pos + n_positions.max(1) - 1),
        ));
    }
    let t_attk = (first_pos - 1) as f64 * SEGMENT_MS + ATTACK_DELAY_MS;
    let t_pulse = n_positions as f64 * SEGMENT_MS - ATTACK_DELAY_MS;
    AttackPlan::jam(targets, t_attk, t_pulse)
}

/// Flooding impulse 50 ms after the agent reaches path position `pos`.
pub fn make_flo_plan(targets: Vec<usize>, pos: usize, increment_mv: f64, clock: &RunClock) -> Result<AttackPlan> {
    let total = clock.positions();
    if pos == 0 || pos > total {
        return Err(Error::range("snn", "pos", format!("{pos} not in 1..={total}")));
    }
    AttackPlan::flo(targets, (pos - 1) as f64 * SEGMENT_MS + ATTACK_DELAY_MS, increment_mv)
}
