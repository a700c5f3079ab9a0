//! `manifest.txt`: one `key = value` line per entry, values on one line.

use anyhow::{bail, Context, Result};

pub const HEADER: &str = "# neurostrike manifest v1";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    entries: Vec<(String, String)>,
}

impl Manifest {
    pub fn new(command: &str) -> Self {
        let mut m = Manifest::default();
        m.set("tool", concat!("neurostrike ", env!("CARGO_PKG_VERSION")));
        m.set("command", command);
        m.set("formats", "weights=qnet-v1 results=csv-v1 spikes=csv-v1");
        m
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        let value = value.into().replace('\n', "\\n");
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(e) => e.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn render(&self) -> String {
        let mut out = format!("{HEADER}\n");
        for (k, v) in &self.entries {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(HEADER) {
            bail!("not a neurostrike manifest");
        }
        let mut m = Manifest::default();
        for (i, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once(" = ")
                .with_context(|| format!("manifest line {}: expected `key = value`", i + 2))?;
            m.entries.push((k.to_string(), v.to_string()));
        }
        Ok(m)
    }

    pub fn is_manifest(text: &str) -> bool {
        text.starts_with(HEADER)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut m = Manifest::new("sweep-flo");
        m.set("config", r#"{"a":1}"#);
        m.set("config", r#"{"a":2}"#);
        m.set("maze", "ab\ncd");
        let back = Manifest::parse(&m.render()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.get("config"), Some(r#"{"a":2}"#));
        assert_eq!(back.get("maze"), Some("ab\\ncd"));
        assert!(Manifest::parse("x = 1").is_err());
    }
}
