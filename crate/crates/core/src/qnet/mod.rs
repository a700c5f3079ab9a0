//! The maze-solving convolutional Q-network.
//!
//! Topology (valid padding, stride 1, ReLU after every layer):
//!
//! ```text
//! input 7x7x1 -> conv 8@3x3 -> 5x5x8 (200 nodes)
//!             -> conv 8@3x3 -> 3x3x8 (72 nodes)
//!             -> dense      -> 4     (4 nodes, one per action)
//! ```
//!
//! Nodes carry global ids shared with the spiking network: layer 1 is
//! `0..200`, layer 2 is `200..272` and the dense outputs are `272..276`.
//! Within a convolutional layer the id is `(row * width + col) * 8 + filter`.

mod io;
mod play;
mod train;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::maze::{MazeGrid, Position, MAZE_SIDE};

pub use io::{load_weights, save_weights, WEIGHTS_HEADER};
pub use play::{greedy_action, play_episode, play_from_path_index, ActivationRule, EpisodeResult, DEFAULT_STEP_CAP};
pub use train::{loss_and_gradients, train, Gradients, Optimizer, TrainConfig, TrainReport, Transition};

pub const LAYER1_NODES: usize = 200;
pub const LAYER2_NODES: usize = 72;
pub const OUTPUT_NODES: usize = 4;
pub const TOTAL_NODES: usize = LAYER1_NODES + LAYER2_NODES + OUTPUT_NODES;

pub const LAYER2_OFFSET: usize = LAYER1_NODES;
pub const OUTPUT_OFFSET: usize = LAYER1_NODES + LAYER2_NODES;

/// Cell encodings fed to the network.
pub const ENC_WALL: f64 = 0.0;
pub const ENC_FREE: f64 = 1.0;
pub const ENC_VISITED: f64 = 0.8;
pub const ENC_AGENT: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerKind {
    Conv,
    Dense,
}

/// Static description of one layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub filters: usize,
    pub kernel: (usize, usize),
    pub stride: usize,
    pub input_shape: (usize, usize, usize),
    pub output_shape: (usize, usize, usize),
}

impl LayerSpec {
    pub fn nodes(&self) -> usize {
        let (h, w, c) = self.output_shape;
        h * w * c
    }
}

/// The three layers of the maze network.
pub const LAYERS: [LayerSpec; 3] = [
    LayerSpec {
        kind: LayerKind::Conv,
        filters: 8,
        kernel: (3, 3),
        stride: 1,
        input_shape: (7, 7, 1),
        output_shape: (5, 5, 8),
    },
    LayerSpec {
        kind: LayerKind::Conv,
        filters: 8,
        kernel: (3, 3),
        stride: 1,
        input_shape: (5, 5, 8),
        output_shape: (3, 3, 8),
    },
    LayerSpec {
        kind: LayerKind::Dense,
        filters: 0,
        kernel: (1, 1),
        stride: 1,
        input_shape: (3, 3, 8),
        output_shape: (1, 1, 4),
    },
];

/// Height × width × channels tensor, channel-fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize, channels: usize) -> Self {
        Tensor {
            rows,
            cols,
            channels,
            data: vec![0.0; rows * cols * channels],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols * channels {
            return Err(Error::Shape {
                what: "tensor",
                expected: format!("{} values", rows * cols * channels),
                got: format!("{} values", data.len()),
            });
        }
        Ok(Tensor {
            rows,
            cols,
            channels,
            data,
        })
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.rows, self.cols, self.channels)
    }

    #[inline]
    pub fn idx(&self, row: usize, col: usize, ch: usize) -> usize {
        (row * self.cols + col) * self.channels + ch
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, ch: usize) -> f64 {
        self.data[self.idx(row, col, ch)]
    }
}

/// Convolution filters stored as `[filter][row][col][channel]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub filters: usize,
    pub kernel_rows: usize,
    pub kernel_cols: usize,
    pub in_channels: usize,
    pub stride: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvLayer {
    pub fn zeros(filters: usize, kernel_rows: usize, kernel_cols: usize, in_channels: usize, stride: usize) -> Self {
        ConvLayer {
            filters,
            kernel_rows,
            kernel_cols,
            in_channels,
            stride,
            weights: vec![0.0; filters * kernel_rows * kernel_cols * in_channels],
            bias: vec![0.0; filters],
        }
    }

    #[inline]
    pub fn widx(&self, f: usize, dr: usize, dc: usize, ch: usize) -> usize {
        ((f * self.kernel_rows + dr) * self.kernel_cols + dc) * self.in_channels + ch
    }

    pub fn weight(&self, f: usize, dr: usize, dc: usize, ch: usize) -> f64 {
        self.weights[self.widx(f, dr, dc, ch)]
    }

    fn output_dims(&self, input: &Tensor) -> Result<(usize, usize)> {
        let ok = input.channels == self.in_channels
            && input.rows >= self.kernel_rows
            && input.cols >= self.kernel_cols
            && self.stride > 0
            && self.weights.len() == self.filters * self.kernel_rows * self.kernel_cols * self.in_channels
            && self.bias.len() == self.filters;
        if !ok {
            return Err(Error::Shape {
                what: "conv input",
                expected: format!("?x?x{} with kernel {}x{}", self.in_channels, self.kernel_rows, self.kernel_cols),
                got: format!("{}x{}x{}", input.rows, input.cols, input.channels),
            });
        }
        Ok((
            (input.rows - self.kernel_rows) / self.stride + 1,
            (input.cols - self.kernel_cols) / self.stride + 1,
        ))
    }

    /// Valid-padding convolution before the activation.
    pub fn pre_activation(&self, input: &Tensor) -> Result<Tensor> {
        let (out_r, out_c) = self.output_dims(input)?;
        let mut out = Tensor::zeros(out_r, out_c, self.filters);
        for r in 0..out_r {
            for c in 0..out_c {
                for f in 0..self.filters {
                    let mut acc = self.bias[f];
                    for dr in 0..self.kernel_rows {
                        for dc in 0..self.kernel_cols {
                            let base_in = input.idx(r * self.stride + dr, c * self.stride + dc, 0);
                            let base_w = self.widx(f, dr, dc, 0);
                            for ch in 0..self.in_channels {
                                acc += input.data[base_in + ch] * self.weights[base_w + ch];
                            }
                        }
                    }
                    let i = out.idx(r, c, f);
                    out.data[i] = acc;
                }
            }
        }
        Ok(out)
    }
}

/// Fully connected layer stored as `[output][input]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        DenseLayer {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    pub fn weight(&self, out: usize, input: usize) -> f64 {
        self.weights[out * self.inputs + input]
    }

    pub fn pre_activation(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.inputs {
            return Err(Error::Shape {
                what: "dense input",
                expected: self.inputs.to_string(),
                got: input.len().to_string(),
            });
        }
        Ok((0..self.outputs)
            .map(|o| {
                let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
                self.bias[o] + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>()
            })
            .collect())
    }
}

#[inline]
fn relu(x: f64) -> f64 {
    x.max(0.0)
}

/// `ReLU(bias + Σ input · kernel)` with valid padding.
pub fn conv_forward(input: &Tensor, layer: &ConvLayer) -> Result<Tensor> {
    let mut out = layer.pre_activation(input)?;
    out.data.iter_mut().for_each(|x| *x = relu(*x));
    Ok(out)
}

/// Weights of the three-layer Q-network.
#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork {
    pub conv1: ConvLayer,
    pub conv2: ConvLayer,
    pub dense: DenseLayer,
}

impl QNetwork {
    /// All-zero network with the fixed maze topology.
    pub fn zeros() -> Self {
        QNetwork {
            conv1: ConvLayer::zeros(8, 3, 3, 1, 1),
            conv2: ConvLayer::zeros(8, 3, 3, 8, 1),
            dense: DenseLayer::zeros(LAYER2_NODES, OUTPUT_NODES),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let reference = QNetwork::zeros();
        let pairs = [
            ("conv1 weights", self.conv1.weights.len(), reference.conv1.weights.len()),
            ("conv1 bias", self.conv1.bias.len(), reference.conv1.bias.len()),
            ("conv2 weights", self.conv2.weights.len(), reference.conv2.weights.len()),
            ("conv2 bias", self.conv2.bias.len(), reference.conv2.bias.len()),
            ("dense weights", self.dense.weights.len(), reference.dense.weights.len()),
            ("dense bias", self.dense.bias.len(), reference.dense.bias.len()),
        ];
        for (what, got, expected) in pairs {
            if got != expected {
                return Err(Error::Shape {
                    what,
                    expected: expected.to_string(),
                    got: got.to_string(),
                });
            }
        }
        let dims_ok = (self.conv1.filters, self.conv1.kernel_rows, self.conv1.kernel_cols, self.conv1.in_channels)
            == (8, 3, 3, 1)
            && (self.conv2.filters, self.conv2.kernel_rows, self.conv2.kernel_cols, self.conv2.in_channels) == (8, 3, 3, 8)
            && self.conv1.stride == 1
            && self.conv2.stride == 1
            && (self.dense.inputs, self.dense.outputs) == (LAYER2_NODES, OUTPUT_NODES);
        if !dims_ok {
            return Err(Error::Shape {
                what: "layer geometry",
                expected: "8@3x3x1 / 8@3x3x8 / 72->4".into(),
                got: "different geometry".into(),
            });
        }
        Ok(())
    }

    /// Mutable views over every parameter block, in file order.
    pub fn parameter_blocks_mut(&mut self) -> [&mut Vec<f64>; 6] {
        [
            &mut self.conv1.weights,
            &mut self.conv1.bias,
            &mut self.conv2.weights,
            &mut self.conv2.bias,
            &mut self.dense.weights,
            &mut self.dense.bias,
        ]
    }

    pub fn parameter_blocks(&self) -> [&Vec<f64>; 6] {
        [
            &self.conv1.weights,
            &self.conv1.bias,
            &self.conv2.weights,
            &self.conv2.bias,
            &self.dense.weights,
            &self.dense.bias,
        ]
    }

    pub fn parameter_count(&self) -> usize {
        self.parameter_blocks().iter().map(|b| b.len()).sum()
    }

    /// Q-values for a state with the given node overrides in force.
    pub fn forward(&self, state: &Tensor, overrides: &NodeOverrideSet) -> Result<[f64; 4]> {
        Ok(self.forward_trace(state, overrides)?.q_values())
    }

    /// Forward pass keeping every layer's pre- and post-activation values.
    pub fn forward_trace(&self, state: &Tensor, overrides: &NodeOverrideSet) -> Result<ForwardTrace> {
        if state.shape() != LAYERS[0].input_shape {
            return Err(Error::Shape {
                what: "network input",
                expected: "7x7x1".into(),
                got: format!("{}x{}x{}", state.rows, state.cols, state.channels),
            });
        }
        let z1 = self.conv1.pre_activation(state)?;
        let mut a1 = z1.clone();
        for (i, x) in a1.data.iter_mut().enumerate() {
            *x = overrides.apply(i, relu(*x));
        }
        let z2 = self.conv2.pre_activation(&a1)?;
        let mut a2 = z2.clone();
        for (i, x) in a2.data.iter_mut().enumerate() {
            *x = overrides.apply(LAYER2_OFFSET + i, relu(*x));
        }
        let z3 = self.dense.pre_activation(&a2.data)?;
        let a3 = z3
            .iter()
            .enumerate()
            .map(|(i, &z)| overrides.apply(OUTPUT_OFFSET + i, relu(z)))
            .collect();
        Ok(ForwardTrace { z1, a1, z2, a2, z3, a3 })
    }

    /// Largest absolute weight among the blocks that become synapses.
    pub fn max_abs_synaptic_weight(&self) -> f64 {
        self.conv2
            .weights
            .iter()
            .chain(&self.dense.weights)
            .fold(0.0_f64, |m, w| m.max(w.abs()))
    }
}

/// Pre-activations (`z*`) and outputs (`a*`) of each layer.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub z1: Tensor,
    pub a1: Tensor,
    pub z2: Tensor,
    pub a2: Tensor,
    pub z3: Vec<f64>,
    pub a3: Vec<f64>,
}

impl ForwardTrace {
    pub fn q_values(&self) -> [f64; 4] {
        [self.a3[0], self.a3[1], self.a3[2], self.a3[3]]
    }

    /// Every node's output in global id order.
    pub fn node_outputs(&self) -> Vec<f64> {
        self.a1.data.iter().chain(&self.a2.data).chain(&self.a3).copied().collect()
    }
}

/// How an attacked node's output is altered.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum NodeOverride {
    /// Replace the output with a fixed value, bypassing the ReLU.
    SetTo(f64),
    /// Multiply the activation by a factor (`1 + p` for a `p` increase).
    Scale(f64),
}

impl NodeOverride {
    #[inline]
    pub fn apply(self, activation: f64) -> f64 {
        match self {
            NodeOverride::SetTo(v) => v,
            NodeOverride::Scale(s) => activation * s,
        }
    }
}

/// At most one override per node id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NodeOverrideSet {
    entries: BTreeMap<usize, NodeOverride>,
}

impl NodeOverrideSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn uniform(ids: impl IntoIterator<Item = usize>, mode: NodeOverride) -> Result<Self> {
        let mut set = Self::new();
        for id in ids {
            set.insert(id, mode)?;
        }
        Ok(set)
    }

    /// Inserts or replaces the override for `id`.
    pub fn insert(&mut self, id: usize, mode: NodeOverride) -> Result<()> {
        if id >= TOTAL_NODES {
            return Err(Error::InvalidNode(id));
        }
        self.entries.insert(id, mode);
        Ok(())
    }

    pub fn get(&self, id: usize) -> Option<NodeOverride> {
        self.entries.get(&id).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, NodeOverride)> + '_ {
        self.entries.iter().map(|(&k, &v)| (k, v))
    }

    /// Union; entries of `other` win on conflicts.
    pub fn merged(&self, other: &NodeOverrideSet) -> NodeOverrideSet {
        let mut entries = self.entries.clone();
        entries.extend(other.entries.iter().map(|(&k, &v)| (k, v)));
        NodeOverrideSet { entries }
    }

    #[inline]
    fn apply(&self, id: usize, activation: f64) -> f64 {
        if self.entries.is_empty() {
            return activation;
        }
        match self.entries.get(&id) {
            Some(mode) => mode.apply(activation),
            None => activation,
        }
    }
}

/// Cells the agent has already left during an episode.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Visited {
    cols: usize,
    marks: Vec<bool>,
}

impl Visited {
    pub fn new(grid: &MazeGrid) -> Self {
        Visited {
            cols: grid.cols(),
            marks: vec![false; grid.rows() * grid.cols()],
        }
    }

    pub fn insert(&mut self, p: Position) {
        self.marks[p.row * self.cols + p.col] = true;
    }

    pub fn contains(&self, p: Position) -> bool {
        self.marks.get(p.row * self.cols + p.col).copied().unwrap_or(false)
    }

    pub fn len(&self) -> usize {
        self.marks.iter().filter(|&&m| m).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Network input for the agent at `pos`: walls 0.0, free 1.0, visited
/// free 0.8, the agent's own cell 0.5.
pub fn encode_state(grid: &MazeGrid, pos: Position, visited: &Visited) -> Result<Tensor> {
    if !grid.is_free(pos) {
        return Err(Error::NotFree(pos));
    }
    if (grid.rows(), grid.cols()) != (MAZE_SIDE, MAZE_SIDE) {
        return Err(Error::Shape {
            what: "maze for network input",
            expected: "7x7".into(),
            got: format!("{}x{}", grid.rows(), grid.cols()),
        });
    }
    let data = grid
        .positions()
        .map(|p| {
            if p == pos {
                ENC_AGENT
            } else if !grid.is_free(p) {
                ENC_WALL
            } else if visited.contains(p) {
                ENC_VISITED
            } else {
                ENC_FREE
            }
        })
        .collect();
    Tensor::from_vec(MAZE_SIDE, MAZE_SIDE, 1, data)
}

/// `(row, col, filter)` of a layer-1 node id.
pub fn layer1_coords(id: usize) -> Option<(usize, usize, usize)> {
    (id < LAYER1_NODES).then_some((id / 8 / 5, (id / 8) % 5, id % 8))
}

pub fn layer1_id(row: usize, col: usize, filter: usize) -> usize {
    (row * 5 + col) * 8 + filter
}

pub fn layer2_id(row: usize, col: usize, filter: usize) -> usize {
    LAYER2_OFFSET + (row * 3 + col) * 8 + filter
}

/// Which layer (1, 2 or 3) a global node id belongs to.
pub fn layer_of(id: usize) -> Option<usize> {
    match id {
        i if i < LAYER2_OFFSET => Some(1),
        i if i < OUTPUT_OFFSET => Some(2),
        i if i < TOTAL_NODES => Some(3),
        _ => None,
    }
}
