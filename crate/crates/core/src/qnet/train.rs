//! Deep Q-learning with experience replay.
//!
//! The output layer keeps its ReLU, so the network cannot emit negative
//! values. Returns along long corridors are negative under the reward
//! scheme, so the network learns `Q + value_offset` instead of `Q`. A
//! constant shift leaves every argmax unchanged; terminal targets become
//! `r + offset` and bootstrapped ones `r + (1 - γ)·offset + γ·max Q'`.
//! With `offset = max|r| / (1 - γ)` (15 for the default rewards) the
//! shifted values of every policy are non-negative, so an early bad
//! policy cannot push the outputs into the dead side of the ReLU.

use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::play::greedy_action;
use super::{encode_state, ConvLayer, NodeOverrideSet, QNetwork, Tensor, Visited, LAYER2_NODES};
use crate::error::{Error, Result};
use crate::maze::{Action, MazeGrid, MoveOutcome, Position, RewardScheme};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub seed: u64,
    pub discount: f64,
    pub learning_rate: f64,
    pub memory_size: usize,
    pub batch_size: usize,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Multiplicative epsilon decay applied after every episode.
    pub epsilon_decay: f64,
    pub max_epochs: usize,
    pub value_offset: f64,
    pub optimizer: Optimizer,
    /// Gradient updates between copies of the online network into the
    /// network that computes bootstrap targets; 0 bootstraps from the
    /// online network itself.
    pub target_sync: usize,
    /// Episodes between full greedy evaluations.
    pub check_every: usize,
    pub rewards: RewardScheme,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 7,
            discount: 0.95,
            learning_rate: 1e-3,
            memory_size: 512,
            batch_size: 32,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay: 0.995,
            max_epochs: 20_000,
            value_offset: 15.0,
            optimizer: Optimizer::Adam,
            target_sync: 200,
            check_every: 10,
            rewards: RewardScheme::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            ("discount", (0.0..=1.0).contains(&self.discount)),
            ("epsilon_start", (0.0..=1.0).contains(&self.epsilon_start)),
            ("epsilon_end", (0.0..=1.0).contains(&self.epsilon_end)),
            ("epsilon_decay", (0.0..=1.0).contains(&self.epsilon_decay)),
            ("learning_rate", self.learning_rate > 0.0 && self.learning_rate.is_finite()),
            ("batch_size", self.batch_size > 0 && self.batch_size <= self.memory_size),
            ("check_every", self.check_every > 0),
            ("value_offset", self.value_offset.is_finite() && self.value_offset >= 0.0),
        ];
        match checks.iter().find(|(_, ok)| !ok) {
            Some((param, _)) => Err(Error::range("qnet", param, "invalid training configuration")),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    /// Adam with β₁ = 0.9, β₂ = 0.999, ε = 1e-8.
    Adam,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Tensor,
    pub action: Action,
    pub reward: f64,
    pub next_state: Tensor,
    pub terminal: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epochs: usize,
    pub updates: usize,
}

/// Parameter gradients, laid out like the network itself.
pub type Gradients = QNetwork;

/// Trains until greedy playout from every free cell follows a shortest
/// route to the exit.
pub fn train(grid: &MazeGrid, cfg: &TrainConfig) -> Result<(QNetwork, TrainReport)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut net = init_network(&mut rng, cfg.value_offset);
    let starts: Vec<Position> = grid.free_cells().filter(|&p| p != grid.exit()).collect();
    let to_exit = grid.distances_to_exit();
    let mut memory: VecDeque<Transition> = VecDeque::with_capacity(cfg.memory_size);
    let mut epsilon = cfg.epsilon_start;
    let mut updates = 0;
    let clean = NodeOverrideSet::new();
    let mut target_net = net.clone();
    let mut adam = AdamState::new();

    for epoch in 1..=cfg.max_epochs {
        let mut pos = *starts.choose(&mut rng).expect("maze has free cells");
        let mut visited = Visited::new(grid);
        let mut total = 0.0;
        loop {
            let state = encode_state(grid, pos, &visited)?;
            let action = if rng.gen::<f64>() < epsilon {
                Action::ALL[rng.gen_range(0..4)]
            } else {
                greedy_action(&net, &state, &clean)?
            };
            let (next, outcome) = grid.apply_move(pos, action);
            let revisited = outcome == MoveOutcome::Valid && visited.contains(next);
            let reward = cfg.rewards.reward(outcome, revisited);
            visited.insert(pos);
            total += reward;
            let terminal = outcome == MoveOutcome::Win;
            let next_state = if terminal { state.clone() } else { encode_state(grid, next, &visited)? };
            if memory.len() == cfg.memory_size {
                memory.pop_front();
            }
            memory.push_back(Transition {
                state,
                action,
                reward,
                next_state,
                terminal,
            });
            if memory.len() >= cfg.batch_size {
                let batch: Vec<&Transition> = (0..cfg.batch_size)
                    .map(|_| &memory[rng.gen_range(0..memory.len())])
                    .collect();
                let targets = batch
                    .iter()
                    .map(|t| td_target(if cfg.target_sync > 0 { &target_net } else { &net }, t, cfg))
                    .collect::<Result<Vec<f64>>>()?;
                let (_, grads) = loss_and_gradients(&net, &batch, &targets)?;
                match cfg.optimizer {
                    Optimizer::Sgd => sgd_step(&mut net, &grads, cfg.learning_rate),
                    Optimizer::Adam => adam.step(&mut net, &grads, cfg.learning_rate),
                }
                updates += 1;
                if cfg.target_sync > 0 && updates % cfg.target_sync == 0 {
                    target_net = net.clone();
                }
            }
            pos = next;
            if terminal || total < cfg.rewards.abort_below {
                break;
            }
        }
        epsilon = (epsilon * cfg.epsilon_decay).max(cfg.epsilon_end);

        if epoch % cfg.check_every == 0 && is_optimal_everywhere(&net, grid, &starts, &to_exit)? {
            return Ok((net, TrainReport { epochs: epoch, updates }));
        }
    }
    Err(Error::TrainingFailed { epochs: cfg.max_epochs })
}

/// Greedy playout from each start cell takes exactly its BFS distance.
fn is_optimal_everywhere(
    net: &QNetwork,
    grid: &MazeGrid,
    starts: &[Position],
    to_exit: &[Option<usize>],
) -> Result<bool> {
    let clean = NodeOverrideSet::new();
    for &start in starts {
        let Some(dist) = to_exit[grid.index_of(start)] else {
            continue;
        };
        let mut pos = start;
        let mut visited = Visited::new(grid);
        for remaining in (1..=dist).rev() {
            let state = encode_state(grid, pos, &visited)?;
            let action = greedy_action(net, &state, &clean)?;
            visited.insert(pos);
            let (next, _) = grid.apply_move(pos, action);
            if to_exit[grid.index_of(next)] != Some(remaining - 1) {
                return Ok(false);
            }
            pos = next;
        }
    }
    Ok(true)
}

fn init_network(rng: &mut ChaCha8Rng, value_offset: f64) -> QNetwork {
    let mut net = QNetwork::zeros();
    let mut he = |w: &mut Vec<f64>, fan_in: usize| {
        let limit = (6.0 / fan_in as f64).sqrt();
        w.iter_mut().for_each(|x| *x = rng.gen_range(-limit..limit));
    };
    he(&mut net.conv1.weights, 9);
    he(&mut net.conv2.weights, 72);
    he(&mut net.dense.weights, LAYER2_NODES);
    net.conv1.bias.fill(0.01);
    net.conv2.bias.fill(0.01);
    net.dense.bias.fill(value_offset);
    // Scale the head down so the initial outputs sit near the offset.
    net.dense.weights.iter_mut().for_each(|w| *w *= 0.1);
    net
}

fn td_target(net: &QNetwork, t: &Transition, cfg: &TrainConfig) -> Result<f64> {
    if t.terminal {
        return Ok(t.reward + cfg.value_offset);
    }
    let next = net.forward(&t.next_state, &NodeOverrideSet::new())?;
    let best = next.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(t.reward + (1.0 - cfg.discount) * cfg.value_offset + cfg.discount * best)
}

fn sgd_step(net: &mut QNetwork, grads: &Gradients, lr: f64) {
    for (w, g) in net.parameter_blocks_mut().into_iter().zip(grads.parameter_blocks()) {
        w.iter_mut().zip(g).for_each(|(w, g)| *w -= lr * g);
    }
}

struct AdamState {
    m: QNetwork,
    v: QNetwork,
    t: i32,
}

impl AdamState {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new() -> Self {
        AdamState {
            m: QNetwork::zeros(),
            v: QNetwork::zeros(),
            t: 0,
        }
    }

    fn step(&mut self, net: &mut QNetwork, grads: &Gradients, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        let blocks = net
            .parameter_blocks_mut()
            .into_iter()
            .zip(grads.parameter_blocks())
            .zip(self.m.parameter_blocks_mut())
            .zip(self.v.parameter_blocks_mut());
        for (((w, g), m), v) in blocks {
            for i in 0..w.len() {
                m[i] = Self::BETA1 * m[i] + (1.0 - Self::BETA1) * g[i];
                v[i] = Self::BETA2 * v[i] + (1.0 - Self::BETA2) * g[i] * g[i];
                w[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + Self::EPS);
            }
        }
    }
}

/// Mean squared-error loss `½·mean (Q(s,a) - y)²` over a batch, with its
/// gradient with respect to every parameter.
pub fn loss_and_gradients(net: &QNetwork, batch: &[&Transition], targets: &[f64]) -> Result<(f64, Gradients)> {
    let mut grads = QNetwork::zeros();
    let mut loss = 0.0;
    let scale = 1.0 / batch.len() as f64;
    let none = NodeOverrideSet::new();
    for (t, &y) in batch.iter().zip(targets) {
        let trace = net.forward_trace(&t.state, &none)?;
        let a = t.action.index();
        let err = trace.a3[a] - y;
        loss += 0.5 * err * err * scale;

        let mut dz3 = [0.0; 4];
        if trace.z3[a] > 0.0 {
            dz3[a] = err * scale;
        }
        let mut da2 = vec![0.0; LAYER2_NODES];
        for (o, &g) in dz3.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grads.dense.bias[o] += g;
            for i in 0..LAYER2_NODES {
                grads.dense.weights[o * LAYER2_NODES + i] += g * trace.a2.data[i];
                da2[i] += g * net.dense.weight(o, i);
            }
        }
        let dz2: Vec<f64> = da2
            .iter()
            .zip(&trace.z2.data)
            .map(|(&g, &z)| if z > 0.0 { g } else { 0.0 })
            .collect();
        let da1 = conv_backward(&net.conv2, &mut grads.conv2, &trace.a1, &dz2, true);
        let dz1: Vec<f64> = da1
            .iter()
            .zip(&trace.z1.data)
            .map(|(&g, &z)| if z > 0.0 { g } else { 0.0 })
            .collect();
        conv_backward(&net.conv1, &mut grads.conv1, &t.state, &dz1, false);
    }
    Ok((loss, grads))
}

/// Accumulates parameter gradients for one convolution and, when asked,
/// returns the gradient with respect to its input.
fn conv_backward(layer: &ConvLayer, grads: &mut ConvLayer, input: &Tensor, dout: &[f64], want_input: bool) -> Vec<f64> {
    let out_r = (input.rows - layer.kernel_rows) / layer.stride + 1;
    let out_c = (input.cols - layer.kernel_cols) / layer.stride + 1;
    let mut din = if want_input { vec![0.0; input.data.len()] } else { Vec::new() };
    for r in 0..out_r {
        for c in 0..out_c {
            for f in 0..layer.filters {
                let g = dout[(r * out_c + c) * layer.filters + f];
                if g == 0.0 {
                    continue;
                }
                grads.bias[f] += g;
                for dr in 0..layer.kernel_rows {
                    for dc in 0..layer.kernel_cols {
                        let base_in = input.idx(r * layer.stride + dr, c * layer.stride + dc, 0);
                        let base_w = layer.widx(f, dr, dc, 0);
                        for ch in 0..layer.in_channels {
                            grads.weights[base_w + ch] += g * input.data[base_in + ch];
                            if want_input {
                                din[base_in + ch] += g * layer.weights[base_w + ch];
                            }
                        }
                    }
                }
            }
        }
    }
    din
}
