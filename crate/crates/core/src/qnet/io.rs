//! Textual weight files.
//!
//! ```text
//! qnet-v1
//! conv1.weights 8 3 3 1
//! <72 reals>
//! conv1.bias 8
//! <8 reals>
//! ...
//! ```
//!
//! Every block is a name, its shape, then the values row-major on one line.
//! Reals use the shortest representation that parses back to the same bits.

use std::fmt::Write as _;
use std::path::Path;

use super::QNetwork;
use crate::error::{Error, Result};

pub const WEIGHTS_HEADER: &str = "qnet-v1";

const BLOCKS: [(&str, &[usize]); 6] = [
    ("conv1.weights", &[8, 3, 3, 1]),
    ("conv1.bias", &[8]),
    ("conv2.weights", &[8, 3, 3, 8]),
    ("conv2.bias", &[8]),
    ("dense.weights", &[4, 72]),
    ("dense.bias", &[4]),
];

pub fn to_text(net: &QNetwork) -> String {
    let mut out = String::new();
    writeln!(out, "{WEIGHTS_HEADER}").unwrap();
    for ((name, shape), values) in BLOCKS.iter().zip(net.parameter_blocks()) {
        let dims: Vec<String> = shape.iter().map(usize::to_string).collect();
        writeln!(out, "{name} {}", dims.join(" ")).unwrap();
        let vals: Vec<String> = values.iter().map(f64::to_string).collect();
        writeln!(out, "{}", vals.join(" ")).unwrap();
    }
    out
}

pub fn from_text(text: &str) -> Result<QNetwork> {
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
    match lines.next() {
        Some(WEIGHTS_HEADER) => {}
        other => {
            return Err(Error::WeightFormat(format!(
                "expected header `{WEIGHTS_HEADER}`, found {other:?}"
            )))
        }
    }
    let mut net = QNetwork::zeros();
    for ((name, shape), block) in BLOCKS.iter().zip(net.parameter_blocks_mut()) {
        let head = lines
            .next()
            .ok_or_else(|| Error::WeightFormat(format!("missing block `{name}`")))?;
        let mut parts = head.split_whitespace();
        if parts.next() != Some(*name) {
            return Err(Error::WeightFormat(format!("expected block `{name}`, found `{head}`")));
        }
        let dims: Vec<usize> = parts
            .map(|d| d.parse().map_err(|_| Error::WeightFormat(format!("bad dimension `{d}` in `{name}`"))))
            .collect::<Result<_>>()?;
        if dims != *shape {
            return Err(Error::Shape {
                what: name,
                expected: format!("{shape:?}"),
                got: format!("{dims:?}"),
            });
        }
        let body = lines
            .next()
            .ok_or_else(|| Error::WeightFormat(format!("missing values for `{name}`")))?;
        let values: Vec<f64> = body
            .split_whitespace()
            .map(|v| v.parse().map_err(|_| Error::WeightFormat(format!("bad real `{v}` in `{name}`"))))
            .collect::<Result<_>>()?;
        if values.len() != block.len() || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::WeightFormat(format!(
                "`{name}` needs {} finite values, found {}",
                block.len(),
                values.len()
            )));
        }
        *block = values;
    }
    if let Some(extra) = lines.next() {
        return Err(Error::WeightFormat(format!("trailing content: `{extra}`")));
    }
    net.validate()?;
    Ok(net)
}

pub fn save_weights(net: &QNetwork, path: &Path) -> Result<()> {
    std::fs::write(path, to_text(net)).map_err(|e| Error::io(path, e))
}

pub fn load_weights(path: &Path) -> Result<QNetwork> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_text(&text)
}
