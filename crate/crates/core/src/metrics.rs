//! Impact metrics over recorded spikes: spike counts, temporal dispersion,
//! Pearson correlation and raster diffs against a spontaneous baseline.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One spike. Times are kept as integer clock steps so records from the
/// same clock compare exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SpikeEvent {
    pub step: u64,
    pub neuron: usize,
}

/// Spikes of one run, sorted by `(step, neuron)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpikeRecord {
    events: Vec<SpikeEvent>,
    dt_ms: f64,
    steps: u64,
    n_neurons: usize,
}

impl SpikeRecord {
    pub fn new(mut events: Vec<SpikeEvent>, dt_ms: f64, steps: u64, n_neurons: usize) -> Result<Self> {
        if !(dt_ms > 0.0 && dt_ms.is_finite()) {
            return Err(Error::range("metrics", "dt_ms", format!("{dt_ms} must be positive")));
        }
        if let Some(bad) = events.iter().find(|e| e.step >= steps || e.neuron >= n_neurons) {
            return Err(Error::range(
                "metrics",
                "events",
                format!("event {bad:?} outside {steps} steps x {n_neurons} neurons"),
            ));
        }
        events.sort_unstable();
        Ok(SpikeRecord {
            events,
            dt_ms,
            steps,
            n_neurons,
        })
    }

    pub fn empty(dt_ms: f64, steps: u64, n_neurons: usize) -> Result<Self> {
        Self::new(Vec::new(), dt_ms, steps, n_neurons)
    }

    pub fn events(&self) -> &[SpikeEvent] {
        &self.events
    }

    pub fn dt_ms(&self) -> f64 {
        self.dt_ms
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn duration_ms(&self) -> f64 {
        self.steps as f64 * self.dt_ms
    }

    pub fn n_neurons(&self) -> usize {
        self.n_neurons
    }

    pub fn time_ms(&self, e: &SpikeEvent) -> f64 {
        e.step as f64 * self.dt_ms
    }

    pub fn per_neuron_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_neurons];
        for e in &self.events {
            counts[e.neuron] += 1;
        }
        counts
    }

    /// Events with `start <= step < end`.
    pub fn events_in_steps(&self, start: u64, end: u64) -> impl Iterator<Item = &SpikeEvent> {
        let lo = self.events.partition_point(|e| e.step < start);
        let hi = self.events.partition_point(|e| e.step < end);
        self.events[lo..hi.max(lo)].iter()
    }

    /// Adds events, keeping the record sorted and duplicate-free.
    pub fn extend(&mut self, extra: impl IntoIterator<Item = SpikeEvent>) -> Result<()> {
        let mut events = std::mem::take(&mut self.events);
        events.extend(extra);
        events.sort_unstable();
        events.dedup();
        *self = SpikeRecord::new(events, self.dt_ms, self.steps, self.n_neurons)?;
        Ok(())
    }
}

pub fn count_spikes(rec: &SpikeRecord) -> usize {
    rec.events.len()
}

/// Percentage of `bin_ms` bins in which at least one neuron fires.
///
/// Also reported as the "percentage of instants with spikes".
pub fn temporal_dispersion(rec: &SpikeRecord, bin_ms: f64) -> Result<f64> {
    if rec.steps == 0 {
        return Err(Error::Degenerate("temporal dispersion of a zero-length record".into()));
    }
    let bin_steps = whole_ratio(bin_ms, rec.dt_ms)
        .filter(|&b| b > 0)
        .ok_or_else(|| Error::range("metrics", "bin_ms", format!("{bin_ms} is not a multiple of dt {}", rec.dt_ms)))?;
    if rec.steps % bin_steps != 0 {
        return Err(Error::range(
            "metrics",
            "bin_ms",
            format!("{bin_ms} does not divide the duration {} ms", rec.duration_ms()),
        ));
    }
    let total_bins = rec.steps / bin_steps;
    let mut occupied = vec![false; total_bins as usize];
    for e in &rec.events {
        occupied[(e.step / bin_steps) as usize] = true;
    }
    let hits = occupied.iter().filter(|&&o| o).count();
    Ok(100.0 * hits as f64 / total_bins as f64)
}

/// `Some(n)` if `a / b` is (numerically) the integer `n`.
pub(crate) fn whole_ratio(a: f64, b: f64) -> Option<u64> {
    let r = a / b;
    let n = r.round();
    ((r - n).abs() < 1e-9 * r.abs().max(1.0) && n >= 0.0).then_some(n as u64)
}

/// The two bio-side impact metrics of a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub n_spikes: usize,
    pub dispersion_pct: f64,
}

pub const DEFAULT_BIN_MS: f64 = 1.0;

pub fn metric_row(rec: &SpikeRecord) -> Result<MetricRow> {
    Ok(MetricRow {
        n_spikes: count_spikes(rec),
        dispersion_pct: temporal_dispersion(rec, DEFAULT_BIN_MS)?,
    })
}

/// Single-pass accumulator for the product-moment correlation.
#[derive(Debug, Clone, Copy, Default)]
pub struct PearsonAccumulator {
    n: u64,
    mean_x: f64,
    mean_y: f64,
    m2_x: f64,
    m2_y: f64,
    co_moment: f64,
}

impl PearsonAccumulator {
    pub fn push(&mut self, x: f64, y: f64) {
        self.n += 1;
        let n = self.n as f64;
        let dx = x - self.mean_x;
        let dy = y - self.mean_y;
        self.mean_x += dx / n;
        self.mean_y += dy / n;
        self.m2_x += dx * (x - self.mean_x);
        self.m2_y += dy * (y - self.mean_y);
        self.co_moment += dx * (y - self.mean_y);
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn correlation(&self) -> Result<f64> {
        if self.n < 2 {
            return Err(Error::Degenerate(format!("pearson needs at least 2 samples, got {}", self.n)));
        }
        if self.m2_x <= 0.0 || self.m2_y <= 0.0 {
            return Err(Error::Degenerate("pearson of a constant series".into()));
        }
        Ok((self.co_moment / (self.m2_x.sqrt() * self.m2_y.sqrt())).clamp(-1.0, 1.0))
    }
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Degenerate(format!("pearson of unequal lengths {} and {}", x.len(), y.len())));
    }
    let mut acc = PearsonAccumulator::default();
    x.iter().zip(y).for_each(|(&a, &b)| acc.push(a, b));
    acc.correlation()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RasterTag {
    /// Spontaneous spike that survives the attack.
    SpontaneousPreserved,
    /// Spike that only exists in the attacked run.
    AttackNew,
    /// Spontaneous spike that the attack removed.
    Suppressed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RasterRow {
    pub neuron_id: usize,
    pub time_ms: f64,
    pub tag: RasterTag,
}

/// Tags every spike of either run by comparing `(neuron, step)` pairs.
pub fn diff_raster(baseline: &SpikeRecord, attacked: &SpikeRecord) -> Result<Vec<RasterRow>> {
    if baseline.steps != attacked.steps || baseline.dt_ms != attacked.dt_ms || baseline.n_neurons != attacked.n_neurons {
        return Err(Error::Degenerate("raster diff of records with different clocks".into()));
    }
    let base: HashSet<SpikeEvent> = baseline.events.iter().copied().collect();
    let hit: HashSet<SpikeEvent> = attacked.events.iter().copied().collect();
    let mut tagged: Vec<(SpikeEvent, RasterTag)> = attacked
        .events
        .iter()
        .map(|e| {
            let tag = if base.contains(e) {
                RasterTag::SpontaneousPreserved
            } else {
                RasterTag::AttackNew
            };
            (*e, tag)
        })
        .chain(
            baseline
                .events
                .iter()
                .filter(|e| !hit.contains(e))
                .map(|e| (*e, RasterTag::Suppressed)),
        )
        .collect();
    tagged.sort_by_key(|(e, _)| *e);
    Ok(tagged
        .into_iter()
        .map(|(e, tag)| RasterRow {
            neuron_id: e.neuron,
            time_ms: attacked.time_ms(&e),
            tag,
        })
        .collect())
}

/// Writes `neuron_id,time_ms,tag` rows.
pub fn write_raster_csv(rows: &[RasterRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    w.write_record(["neuron_id", "time_ms", "tag"]).map_err(|e| Error::csv(path, e))?;
    for r in rows {
        let tag = match r.tag {
            RasterTag::SpontaneousPreserved => "spontaneous-preserved",
            RasterTag::AttackNew => "attack-new",
            RasterTag::Suppressed => "suppressed",
        };
        w.write_record([r.neuron_id.to_string(), fmt_time(r.time_ms), tag.to_string()])
            .map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Millisecond timestamps rounded to the 1 µs grid so that `0.1 * 3`
/// prints as `0.3`.
fn fmt_time(t: f64) -> String {
    let rounded = (t * 1000.0).round() / 1000.0;
    format!("{rounded}")
}

/// Writes `neuron_id,time_ms` rows, preceded by a `# dt_ms,steps,n_neurons`
/// line so the record can be read back.
pub fn write_spikes_csv(rec: &SpikeRecord, path: &Path) -> Result<()> {
    let mut text = format!("# dt_ms={},steps={},n_neurons={}\nneuron_id,time_ms\n", rec.dt_ms, rec.steps, rec.n_neurons);
    for e in &rec.events {
        text.push_str(&format!("{},{}\n", e.neuron, fmt_time(rec.time_ms(e))));
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_spikes_csv(path: &Path) -> Result<SpikeRecord> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |what: &str| Error::Degenerate(format!("{}: {what}", path.display()));
    let mut lines = text.lines();
    let meta = lines.next().and_then(|l| l.strip_prefix("# ")).ok_or_else(|| bad("missing metadata line"))?;
    let mut dt_ms = None;
    let mut steps = None;
    let mut n_neurons = None;
    for kv in meta.split(',') {
        match kv.split_once('=') {
            Some(("dt_ms", v)) => dt_ms = v.parse::<f64>().ok(),
            Some(("steps", v)) => steps = v.parse::<u64>().ok(),
            Some(("n_neurons", v)) => n_neurons = v.parse::<usize>().ok(),
            _ => return Err(bad("malformed metadata")),
        }
    }
    let (dt_ms, steps, n_neurons) = match (dt_ms, steps, n_neurons) {
        (Some(a), Some(b), Some(c)) => (a, b, c),
        _ => return Err(bad("incomplete metadata")),
    };
    if lines.next() != Some("neuron_id,time_ms") {
        return Err(bad("missing header"));
    }
    let mut events = Vec::new();
    for line in lines.filter(|l| !l.trim().is_empty()) {
        let (n, t) = line.split_once(',').ok_or_else(|| bad("malformed row"))?;
        let neuron = n.trim().parse().map_err(|_| bad("bad neuron id"))?;
        let t: f64 = t.trim().parse().map_err(|_| bad("bad time"))?;
        let step = whole_ratio(t, dt_ms).ok_or_else(|| bad("time not on the clock grid"))?;
        events.push(SpikeEvent { step, neuron });
    }
    SpikeRecord::new(events, dt_ms, steps, n_neurons)
}
