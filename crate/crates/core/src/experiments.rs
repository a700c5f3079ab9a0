//! JAM and FLO sweeps over both networks, result persistence and the
//! bio-vs-CNN correlation reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::maze::MazeGrid;
use crate::metrics::{metric_row, MetricRow, PearsonAccumulator};
use crate::qnet::{play_episode, play_from_path_index, ActivationRule, NodeOverride, NodeOverrideSet, QNetwork, TOTAL_NODES};
use crate::snn::{
    build_stimulus, gain_for_max_jump, make_flo_plan, make_jam_plan, translate, AttackKind, Baseline,
    IzhikevichParams, RunClock, SpikingNetwork, ATTACK_DELAY_MS, DEFAULT_MAX_JUMP_MV, SEGMENT_MS,
};

/// Value the CNN-side JAM writes into every targeted node.
pub const CNN_JAM_VALUE: f64 = -1.0;

/// CNN output-importance increase, in percent, paired with a bio FLO
/// increment: 10 → 15, 20 → 30, 40 → 60, 60 → 90.
pub fn cnn_importance_pct(vi_mv: f64) -> f64 {
    1.5 * vi_mv
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub attack_kind: AttackKind,
    pub neuron_counts: Vec<usize>,
    /// JAM: numbers of consecutive positions attacked from position 1.
    /// FLO: the single attacked position.
    pub positions: Vec<usize>,
    /// FLO voltage increments in mV; ignored by JAM, which clamps.
    pub amplitudes: Vec<f64>,
    pub executions: usize,
    pub master_seed: u64,
    pub dt_ms: f64,
    pub step_cap: usize,
    /// Largest synaptic jump after translation, mV.
    pub max_jump_mv: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self::jam()
    }
}

impl SweepConfig {
    pub fn jam() -> Self {
        SweepConfig {
            attack_kind: AttackKind::Jam,
            neuron_counts: vec![5, 35, 55, 75, 105],
            positions: (1..=27).collect(),
            amplitudes: vec![],
            executions: 10,
            master_seed: 2023,
            dt_ms: 0.1,
            step_cap: crate::qnet::DEFAULT_STEP_CAP,
            max_jump_mv: DEFAULT_MAX_JUMP_MV,
        }
    }

    /// Bio-vs-CNN JAM comparison: 1..=20 neurons jammed over the whole
    /// path.
    pub fn jam_restricted() -> Self {
        SweepConfig {
            neuron_counts: (1..=20).collect(),
            positions: vec![27],
            ..Self::jam()
        }
    }

    pub fn flo() -> Self {
        SweepConfig {
            attack_kind: AttackKind::Flo,
            amplitudes: vec![10.0, 20.0, 40.0, 60.0],
            ..Self::jam()
        }
    }

    pub fn for_kind(kind: AttackKind) -> Self {
        match kind {
            AttackKind::Jam => Self::jam(),
            AttackKind::Flo => Self::flo(),
        }
    }

    /// Desk-scale variant with 3 executions. JAM keeps 4 neuron counts and
    /// 1, 7, 14, 21 and 27 consecutive positions; FLO attacks positions 1,
    /// 14 and 27.
    pub fn quick(mut self) -> Self {
        self.executions = 3;
        match self.attack_kind {
            AttackKind::Jam => {
                self.neuron_counts.retain(|&n| n != 55);
                self.positions.retain(|p| [1, 7, 14, 21, 27].contains(p));
            }
            AttackKind::Flo => self.positions.retain(|p| [1, 14, 27].contains(p)),
        }
        self
    }

    pub fn clock(&self) -> Result<RunClock> {
        RunClock::new(27.0 * SEGMENT_MS, self.dt_ms)
    }

    pub fn validate(&self) -> Result<()> {
        let err = |param: &'static str, detail: String| Err(Error::range("experiments", param, detail));
        if self.executions == 0 {
            return err("executions", "must be at least 1".into());
        }
        if self.neuron_counts.is_empty() || self.positions.is_empty() {
            return err("neuron_counts/positions", "must not be empty".into());
        }
        if let Some(n) = self.neuron_counts.iter().find(|&&n| n > TOTAL_NODES) {
            return err("neuron_counts", format!("{n} > {TOTAL_NODES}"));
        }
        if let Some(p) = self.positions.iter().find(|&&p| p == 0 || p > 27) {
            return err("positions", format!("{p} not in 1..=27"));
        }
        if self.attack_kind == AttackKind::Flo && self.amplitudes.is_empty() {
            return err("amplitudes", "FLO needs at least one voltage increment".into());
        }
        if !(self.max_jump_mv.is_finite() && self.max_jump_mv >= 0.0) {
            return err("max_jump_mv", format!("{}", self.max_jump_mv));
        }
        if self.step_cap == 0 {
            return err("step_cap", "must be positive".into());
        }
        self.clock()?;
        Ok(())
    }

    /// Bio/CNN amplitude pairs swept by this config.
    fn amplitude_pairs(&self) -> Vec<(f64, f64)> {
        match self.attack_kind {
            AttackKind::Jam => vec![(IzhikevichParams::default().v_min, CNN_JAM_VALUE)],
            AttackKind::Flo => self.amplitudes.iter().map(|&vi| (vi, cnn_importance_pct(vi))).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    Bio,
    Cnn,
}

/// One execution of one sweep cell in one network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub scenario: Scenario,
    pub attack_kind: AttackKind,
    pub n_neurons: usize,
    /// FLO attack position.
    pub position: Option<usize>,
    /// JAM number of consecutive attacked positions.
    pub n_consecutive: Option<usize>,
    /// mV for bio (FLO increment or JAM clamp), node value or percent for CNN.
    pub amplitude: f64,
    pub execution_index: usize,
    pub target_set_seed: u64,
    pub n_spikes: Option<usize>,
    pub dispersion_pct: Option<f64>,
    pub steps: Option<usize>,
    pub success: Option<bool>,
}

impl RunResult {
    fn sweep_param(&self) -> usize {
        self.position.or(self.n_consecutive).unwrap_or(0)
    }
}

/// Seed of the target set for one execution of one neuron count.
pub fn target_set_seed(master_seed: u64, execution_index: usize, n: usize) -> u64 {
    let mut h = splitmix64(master_seed);
    h = splitmix64(h ^ execution_index as u64);
    splitmix64(h ^ n as u64)
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `n` distinct neuron ids drawn uniformly from `0..276`, sorted.
pub fn sample_targets(n: usize, execution_index: usize, master_seed: u64) -> Result<Vec<usize>> {
    if n > TOTAL_NODES {
        return Err(Error::range("experiments", "n_neurons", format!("{n} > {TOTAL_NODES}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(target_set_seed(master_seed, execution_index, n));
    let mut ids = sample(&mut rng, TOTAL_NODES, n).into_vec();
    ids.sort_unstable();
    Ok(ids)
}

/// Everything a sweep needs besides its config.
pub struct SweepContext<'a> {
    pub grid: &'a MazeGrid,
    pub net: &'a QNetwork,
}

/// Translated network plus its attack-free run.
pub struct BioSetup {
    pub snn: SpikingNetwork,
    pub clock: RunClock,
}

impl BioSetup {
    pub fn new(net: &QNetwork, cfg: &SweepConfig) -> Result<Self> {
        let gain = gain_for_max_jump(net, cfg.max_jump_mv);
        Ok(BioSetup {
            snn: translate(net, gain, IzhikevichParams::default())?,
            clock: cfg.clock()?,
        })
    }

    /// Baseline with a snapshot at every attack instant.
    pub fn baseline(&self, grid: &MazeGrid) -> Result<Baseline<'_>> {
        let path = grid.shortest_path()?;
        let schedule = build_stimulus(grid, &path)?;
        let snaps: Vec<u64> = (0..self.clock.positions())
            .map(|k| self.clock.step_of(k as f64 * SEGMENT_MS + ATTACK_DELAY_MS, "t_attk"))
            .collect::<Result<_>>()?;
        Baseline::new(&self.snn, schedule, self.clock, &snaps)
    }
}

/// Output of a sweep: paired rows in config order plus the spontaneous
/// bio metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutput {
    pub results: Vec<RunResult>,
    pub spontaneous: MetricRow,
}

#[derive(Debug, Clone, Copy)]
struct Cell {
    n: usize,
    param: usize,
    bio_amp: f64,
    cnn_amp: f64,
    exec: usize,
}

fn cells(cfg: &SweepConfig) -> Vec<Cell> {
    let mut out = Vec::new();
    for &n in &cfg.neuron_counts {
        for &param in &cfg.positions {
            for &(bio_amp, cnn_amp) in &cfg.amplitude_pairs() {
                for exec in 0..cfg.executions {
                    out.push(Cell {
                        n,
                        param,
                        bio_amp,
                        cnn_amp,
                        exec,
                    });
                }
            }
        }
    }
    out
}

/// Runs every cell of `cfg` in both networks.
///
/// Cells run in parallel on the current rayon pool; rows come back in
/// config order (neuron count, position, amplitude, execution), bio row
/// before its CNN twin.
pub fn run_sweep(ctx: &SweepContext<'_>, cfg: &SweepConfig) -> Result<SweepOutput> {
    cfg.validate()?;
    let bio = BioSetup::new(ctx.net, cfg)?;
    let baseline = bio.baseline(ctx.grid)?;
    let spontaneous = metric_row(baseline.record())?;
    let clock = bio.clock;
    let kind = cfg.attack_kind;

    let pairs: Vec<[RunResult; 2]> = cells(cfg)
        .into_par_iter()
        .map(|cell| {
            let seed = target_set_seed(cfg.master_seed, cell.exec, cell.n);
            let targets = sample_targets(cell.n, cell.exec, cfg.master_seed)?;
            let (plan, episode) = match kind {
                AttackKind::Jam => {
                    let plan = make_jam_plan(targets.clone(), 1, cell.param, &clock)?;
                    let ov = NodeOverrideSet::uniform(targets, NodeOverride::SetTo(cell.cnn_amp))?;
                    let ep = play_episode(ctx.net, ctx.grid, ctx.grid.start(), &ov, ActivationRule::Always, cfg.step_cap)?;
                    (plan, ep)
                }
                AttackKind::Flo => {
                    let plan = make_flo_plan(targets.clone(), cell.param, cell.bio_amp, &clock)?;
                    let ov = NodeOverrideSet::uniform(targets, NodeOverride::Scale(1.0 + cell.cnn_amp / 100.0))?;
                    let ep = play_from_path_index(ctx.net, ctx.grid, cell.param, &ov, cfg.step_cap)?;
                    (plan, ep)
                }
            };
            let rec = baseline.run_attacked(&[plan])?;
            let m = metric_row(&rec)?;
            let (position, n_consecutive) = match kind {
                AttackKind::Jam => (None, Some(cell.param)),
                AttackKind::Flo => (Some(cell.param), None),
            };
            let base = RunResult {
                scenario: Scenario::Bio,
                attack_kind: kind,
                n_neurons: cell.n,
                position,
                n_consecutive,
                amplitude: cell.bio_amp,
                execution_index: cell.exec,
                target_set_seed: seed,
                n_spikes: Some(m.n_spikes),
                dispersion_pct: Some(m.dispersion_pct),
                steps: None,
                success: None,
            };
            let cnn = RunResult {
                scenario: Scenario::Cnn,
                amplitude: cell.cnn_amp,
                n_spikes: None,
                dispersion_pct: None,
                steps: Some(episode.steps),
                success: Some(episode.success),
                ..base.clone()
            };
            Ok([base, cnn])
        })
        .collect::<Result<_>>()?;
    Ok(SweepOutput {
        results: pairs.into_iter().flatten().collect(),
        spontaneous,
    })
}

/// Writes one row per result with a fixed header.
pub fn persist(results: &[RunResult], path: &Path) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| Error::csv(path, e))?;
    w.write_record(RESULT_COLUMNS).map_err(|e| Error::csv(path, e))?;
    for r in results {
        w.serialize(r).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub const RESULT_COLUMNS: [&str; 12] = [
    "scenario",
    "attack_kind",
    "n_neurons",
    "position",
    "n_consecutive",
    "amplitude",
    "execution_index",
    "target_set_seed",
    "n_spikes",
    "dispersion_pct",
    "steps",
    "success",
];

pub fn load_results(path: &Path) -> Result<Vec<RunResult>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    let header = r.headers().map_err(|e| Error::csv(path, e))?;
    if header.iter().ne(RESULT_COLUMNS) {
        return Err(Error::Config(format!("{}: unexpected header {header:?}", path.display())));
    }
    r.deserialize().map(|row| row.map_err(|e| Error::csv(path, e))).collect()
}

/// Feature columns of the bio-vs-CNN comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Feature {
    /// FLO attack position or JAM consecutive-position count.
    Position,
    Spikes,
    Dispersion,
    Steps,
    Neurons,
}

impl Feature {
    pub fn label(self) -> &'static str {
        match self {
            Feature::Position => "position",
            Feature::Spikes => "n_spikes",
            Feature::Dispersion => "dispersion_pct",
            Feature::Steps => "steps",
            Feature::Neurons => "n_neurons",
        }
    }

    /// Columns reported for each attack.
    pub fn for_kind(kind: AttackKind) -> &'static [Feature] {
        match kind {
            AttackKind::Jam => &[Feature::Spikes, Feature::Dispersion, Feature::Steps, Feature::Neurons],
            AttackKind::Flo => &[
                Feature::Position,
                Feature::Spikes,
                Feature::Dispersion,
                Feature::Steps,
                Feature::Neurons,
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationReport {
    pub features: Vec<Feature>,
    /// Row-major, `features.len()` squared.
    pub matrix: Vec<f64>,
    /// Number of joined cells behind every coefficient.
    pub cells: usize,
}

impl CorrelationReport {
    pub fn get(&self, a: Feature, b: Feature) -> Option<f64> {
        let i = self.features.iter().position(|&f| f == a)?;
        let j = self.features.iter().position(|&f| f == b)?;
        Some(self.matrix[i * self.features.len() + j])
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("feature");
        for f in &self.features {
            write!(out, ",{}", f.label()).unwrap();
        }
        out.push('\n');
        let k = self.features.len();
        for (i, f) in self.features.iter().enumerate() {
            out.push_str(f.label());
            for j in 0..k {
                let r = self.matrix[i * k + j];
                // Keep rounding noise from printing as -0.000000.
                let r = if r.abs() < 5e-7 { 0.0 } else { r };
                write!(out, ",{r:.6}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

type CellKey = (usize, usize, u64);

#[derive(Default)]
struct CellMeans {
    spikes: (f64, usize),
    dispersion: (f64, usize),
    steps: (f64, usize),
    success: (f64, usize),
}

fn add(slot: &mut (f64, usize), x: f64) {
    slot.0 += x;
    slot.1 += 1;
}

fn mean(slot: (f64, usize)) -> Option<f64> {
    (slot.1 > 0).then(|| slot.0 / slot.1 as f64)
}

/// Bio and CNN rows of the same cell share neuron count, sweep parameter
/// and bio amplitude; CNN rows are matched to their bio amplitude through
/// the fixed pairing.
fn group(results: &[RunResult], kind: AttackKind) -> BTreeMap<CellKey, CellMeans> {
    let mut cells: BTreeMap<CellKey, CellMeans> = BTreeMap::new();
    for r in results.iter().filter(|r| r.attack_kind == kind) {
        let bio_amp = match (r.scenario, kind) {
            (Scenario::Cnn, AttackKind::Flo) => r.amplitude / 1.5,
            (Scenario::Cnn, AttackKind::Jam) => IzhikevichParams::default().v_min,
            (Scenario::Bio, _) => r.amplitude,
        };
        let c = cells.entry((r.n_neurons, r.sweep_param(), bio_amp.to_bits())).or_default();
        if let Some(x) = r.n_spikes {
            add(&mut c.spikes, x as f64);
        }
        if let Some(x) = r.dispersion_pct {
            add(&mut c.dispersion, x);
        }
        if let Some(x) = r.steps {
            add(&mut c.steps, x as f64);
        }
        if let Some(x) = r.success {
            add(&mut c.success, if x { 1.0 } else { 0.0 });
        }
    }
    cells
}

/// Pearson matrix over per-cell means of the joined bio and CNN rows.
///
/// A cell is one (neuron count, position, amplitude) combination; its
/// executions are averaged in each scenario before joining. Cells missing
/// either scenario are skipped.
pub fn correlate(results: &[RunResult], kind: AttackKind, features: &[Feature]) -> Result<CorrelationReport> {
    let cells = group(results, kind);
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); features.len()];
    let mut joined = 0;
    for (&(n, param, _), c) in &cells {
        let (Some(spikes), Some(disp), Some(steps)) = (mean(c.spikes), mean(c.dispersion), mean(c.steps)) else {
            continue;
        };
        joined += 1;
        for (col, f) in columns.iter_mut().zip(features) {
            col.push(match f {
                Feature::Position => param as f64,
                Feature::Spikes => spikes,
                Feature::Dispersion => disp,
                Feature::Steps => steps,
                Feature::Neurons => n as f64,
            });
        }
    }
    if joined < 2 {
        return Err(Error::Degenerate(format!("only {joined} joinable {kind} cells")));
    }
    let k = features.len();
    let mut matrix = vec![0.0; k * k];
    for i in 0..k {
        for j in i..k {
            let r = if i == j {
                check_variance(&columns[i], features[i])?;
                1.0
            } else {
                let mut acc = PearsonAccumulator::default();
                columns[i].iter().zip(&columns[j]).for_each(|(&x, &y)| acc.push(x, y));
                acc.correlation().map_err(|_| {
                    Error::Degenerate(format!("{} or {} has zero variance", features[i].label(), features[j].label()))
                })?
            };
            matrix[i * k + j] = r;
            matrix[j * k + i] = r;
        }
    }
    Ok(CorrelationReport {
        features: features.to_vec(),
        matrix,
        cells: joined,
    })
}

fn check_variance(col: &[f64], f: Feature) -> Result<()> {
    if col.iter().all(|&x| x == col[0]) {
        return Err(Error::Degenerate(format!("{} has zero variance", f.label())));
    }
    Ok(())
}

/// Pearson between mean steps and success rate over CNN cells.
pub fn steps_success_correlation(results: &[RunResult], kind: AttackKind) -> Result<f64> {
    let mut acc = PearsonAccumulator::default();
    for c in group(results, kind).values() {
        if let (Some(steps), Some(rate)) = (mean(c.steps), mean(c.success)) {
            acc.push(steps, rate);
        }
    }
    acc.correlation()
}

/// Mean bio spike count per (neuron count, sweep parameter), over
/// executions and amplitudes.
pub fn mean_bio_spikes(results: &[RunResult], kind: AttackKind) -> BTreeMap<(usize, usize), f64> {
    let mut sums: BTreeMap<(usize, usize), (f64, usize)> = BTreeMap::new();
    for r in results.iter().filter(|r| r.attack_kind == kind && r.scenario == Scenario::Bio) {
        if let Some(s) = r.n_spikes {
            add(sums.entry((r.n_neurons, r.sweep_param())).or_default(), s as f64);
        }
    }
    sums.into_iter().map(|(k, v)| (k, v.0 / v.1 as f64)).collect()
}
