use std::path::PathBuf;

use thiserror::Error;

use crate::maze::Position;

#[derive(Debug, Error)]
pub enum Error {
    #[error("maze: {0}")]
    Maze(String),

    #[error("maze: position {0} is a wall or out of bounds")]
    NotFree(Position),

    #[error("maze: exit is unreachable from start")]
    Unreachable,

    #[error("qnet: shape mismatch in {what}: expected {expected}, got {got}")]
    Shape {
        what: &'static str,
        expected: String,
        got: String,
    },

    #[error("qnet: node id {0} is out of range (network has 276 nodes)")]
    InvalidNode(usize),

    #[error("qnet: training did not reach an optimal policy within {epochs} epochs")]
    TrainingFailed { epochs: usize },

    #[error("qnet: malformed weight file: {0}")]
    WeightFormat(String),

    #[error("snn: numerical divergence in neuron {neuron} at t = {time_ms} ms")]
    Divergence { neuron: usize, time_ms: f64 },

    #[error("{module}: parameter `{param}` out of range: {detail}")]
    Range {
        module: &'static str,
        param: &'static str,
        detail: String,
    },

    #[error("metrics: {0}")]
    Degenerate(String),

    #[error("experiments: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error on {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl Error {
    pub(crate) fn range(module: &'static str, param: &'static str, detail: impl Into<String>) -> Self {
        Error::Range {
            module,
            param,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn csv(path: impl Into<PathBuf>, source: csv::Error) -> Self {
        Error::Csv {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
