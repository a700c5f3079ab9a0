//! Clock-driven Izhikevich network built from the trained Q-network.
//!
//! Each neuron follows
//!
//! ```text
//! v' = 0.04 v² + 5 v + 140 - u + I
//! u' = a (b v - u)
//! v >= v_peak  =>  v <- c, u <- u + d
//! ```
//!
//! integrated with forward Euler. Synapses are delta jumps: a presynaptic
//! spike in one step moves the postsynaptic `v` by the synaptic weight in
//! the next step.

mod attack;
mod engine;
mod stimulus;

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qnet::{layer1_id, layer2_id, QNetwork, LAYER2_NODES, LAYER2_OFFSET, OUTPUT_NODES, OUTPUT_OFFSET, TOTAL_NODES};

pub use attack::{make_flo_plan, make_jam_plan, AttackKind, AttackPlan, RunClock, ATTACK_DELAY_MS};
pub use engine::{run, Baseline, ImpulseRecord, Simulator};
pub use stimulus::{
    build_stimulus, intervening_neurons, Segment, StimulusSchedule, BASE_CURRENT, INTERVENING_CURRENT, SEGMENT_MS,
};

pub const NEURON_COUNT: usize = TOTAL_NODES;
pub const SYNAPSE_COUNT: usize = LAYER2_NODES * 9 * 8 + OUTPUT_NODES * LAYER2_NODES;

/// Regular-spiking parameter set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IzhikevichParams {
    /// Recovery time scale, 1/ms.
    pub a: f64,
    /// Recovery sensitivity to `v`, 1/ms.
    pub b: f64,
    /// After-spike reset of `v`, mV.
    pub c: f64,
    /// After-spike increment of `u`, mV/ms.
    pub d: f64,
    /// Voltage that jamming clamps to, mV.
    pub v_min: f64,
    /// Spike threshold, mV.
    pub v_peak: f64,
}

impl Default for IzhikevichParams {
    fn default() -> Self {
        IzhikevichParams {
            a: 0.02,
            b: 0.2,
            c: -65.0,
            d: 8.0,
            v_min: -65.0,
            v_peak: 30.0,
        }
    }
}

impl IzhikevichParams {
    pub fn validate(&self) -> Result<()> {
        let all_finite = [self.a, self.b, self.c, self.d, self.v_min, self.v_peak]
            .iter()
            .all(|x| x.is_finite());
        if !all_finite || self.v_min >= self.v_peak || self.c >= self.v_peak {
            return Err(Error::range("snn", "izhikevich params", format!("{self:?}")));
        }
        Ok(())
    }

    /// `(dv/dt, du/dt)` at a given state and input current.
    #[inline]
    pub fn derivatives(&self, v: f64, u: f64, current: f64) -> (f64, f64) {
        (0.04 * v * v + 5.0 * v + 140.0 - u + current, self.a * (self.b * v - u))
    }

    /// State a neuron starts from: `v = c`, `u = b·c`.
    pub fn rest_state(&self) -> NeuronState {
        NeuronState {
            v: self.c,
            u: self.b * self.c,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeuronState {
    /// Membrane potential, mV.
    pub v: f64,
    /// Recovery variable, mV/ms.
    pub u: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Synapse {
    pub pre: usize,
    pub post: usize,
    /// Jump applied to the postsynaptic `v`, mV.
    pub weight: f64,
}

/// Feed-forward network of 276 neurons sharing ids with the Q-network.
#[derive(Debug, Clone)]
pub struct SpikingNetwork {
    params: IzhikevichParams,
    initial: Vec<NeuronState>,
    synapses: Vec<Synapse>,
    gain: f64,
    /// CSR offsets into `targets`, indexed by presynaptic id.
    fanout_start: Vec<usize>,
    targets: Vec<(usize, f64)>,
}

impl SpikingNetwork {
    pub fn from_synapses(params: IzhikevichParams, n_neurons: usize, synapses: Vec<Synapse>, gain: f64) -> Result<Self> {
        params.validate()?;
        if let Some(bad) = synapses
            .iter()
            .find(|s| s.pre >= n_neurons || s.post >= n_neurons || !s.weight.is_finite())
        {
            return Err(Error::range("snn", "synapse", format!("{bad:?}")));
        }
        let mut fanout_start = vec![0; n_neurons + 1];
        for s in &synapses {
            fanout_start[s.pre + 1] += 1;
        }
        for i in 0..n_neurons {
            fanout_start[i + 1] += fanout_start[i];
        }
        let mut fill = fanout_start.clone();
        let mut targets = vec![(0, 0.0); synapses.len()];
        for s in &synapses {
            targets[fill[s.pre]] = (s.post, s.weight);
            fill[s.pre] += 1;
        }
        Ok(SpikingNetwork {
            params,
            initial: vec![params.rest_state(); n_neurons],
            synapses,
            gain,
            fanout_start,
            targets,
        })
    }

    pub fn params(&self) -> &IzhikevichParams {
        &self.params
    }

    pub fn n_neurons(&self) -> usize {
        self.initial.len()
    }

    pub fn initial_states(&self) -> &[NeuronState] {
        &self.initial
    }

    pub fn synapses(&self) -> &[Synapse] {
        &self.synapses
    }

    pub fn gain(&self) -> f64 {
        self.gain
    }

    #[inline]
    pub(crate) fn fanout(&self, pre: usize) -> &[(usize, f64)] {
        &self.targets[self.fanout_start[pre]..self.fanout_start[pre + 1]]
    }

    /// `pre,post,weight_mV` audit dump.
    pub fn topology_csv(&self) -> String {
        let mut out = String::from("pre,post,weight_mV\n");
        for s in &self.synapses {
            writeln!(out, "{},{},{}", s.pre, s.post, s.weight).unwrap();
        }
        out
    }

    pub fn write_topology(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.topology_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Gain that maps the largest translated weight to `max_jump_mv`.
pub fn gain_for_max_jump(net: &QNetwork, max_jump_mv: f64) -> f64 {
    let max = net.max_abs_synaptic_weight();
    if max > 0.0 {
        max_jump_mv / max
    } else {
        1.0
    }
}

/// Maximum synaptic jump used when no gain is given. At 1 mV the three
/// layers barely interact and attacks on layer 1 stay local.
pub const DEFAULT_MAX_JUMP_MV: f64 = 10.0;

/// Keeps layers and nodes, turning conv2 and dense weights into synapses.
///
/// Layer 1 has no presynaptic partners: it is driven by external current
/// only, so conv1 kernels have no synaptic counterpart.
pub fn translate(net: &QNetwork, gain: f64, params: IzhikevichParams) -> Result<SpikingNetwork> {
    net.validate()?;
    if !gain.is_finite() {
        return Err(Error::range("snn", "gain", format!("{gain} is not finite")));
    }
    let mut synapses = Vec::with_capacity(SYNAPSE_COUNT);
    for r in 0..3 {
        for c in 0..3 {
            for f2 in 0..8 {
                let post = layer2_id(r, c, f2);
                for dr in 0..3 {
                    for dc in 0..3 {
                        for f1 in 0..8 {
                            synapses.push(Synapse {
                                pre: layer1_id(r + dr, c + dc, f1),
                                post,
                                weight: gain * net.conv2.weight(f2, dr, dc, f1),
                            });
                        }
                    }
                }
            }
        }
    }
    for o in 0..OUTPUT_NODES {
        for i in 0..LAYER2_NODES {
            synapses.push(Synapse {
                pre: LAYER2_OFFSET + i,
                post: OUTPUT_OFFSET + o,
                weight: gain * net.dense.weight(o, i),
            });
        }
    }
    SpikingNetwork::from_synapses(params, NEURON_COUNT, synapses, gain)
}
