//! Jamming and flooding attacks on a maze-solving Q-network and on the
//! Izhikevich spiking network obtained by translating it neuron for neuron.
//!
//! [`maze`] and [`qnet`] hold the grid world and the CNN, [`snn`] the
//! translation and the clock-driven simulator, [`metrics`] spike counting,
//! dispersion and Pearson, and [`experiments`] the sweeps that tie them
//! together.

pub mod error;
pub mod experiments;
pub mod maze;
pub mod metrics;
pub mod qnet;
pub mod snn;

pub use error::{Error, Result};
pub use experiments::{RunResult, Scenario, SweepConfig};
pub use maze::{MazeGrid, Position};
pub use metrics::{SpikeEvent, SpikeRecord};
pub use qnet::{NodeOverride, NodeOverrideSet, QNetwork};
pub use snn::{AttackKind, AttackPlan, RunClock, SpikingNetwork};
