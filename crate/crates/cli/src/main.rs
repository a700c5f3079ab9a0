mod manifest;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use neurostrike_core::experiments::{
    cnn_importance_pct, correlate, load_results, mean_bio_spikes, persist, run_sweep, sample_targets,
    steps_success_correlation, BioSetup, Feature, RunResult, SweepConfig, SweepContext, CNN_JAM_VALUE,
};
use neurostrike_core::maze::{default_maze, MazeGrid};
use neurostrike_core::metrics::{diff_raster, metric_row, read_spikes_csv, write_raster_csv, write_spikes_csv};
use neurostrike_core::qnet::{
    load_weights, play_episode, play_from_path_index, save_weights, train, ActivationRule, NodeOverride,
    NodeOverrideSet, QNetwork, TrainConfig, DEFAULT_STEP_CAP,
};
use neurostrike_core::snn::{
    gain_for_max_jump, make_flo_plan, make_jam_plan, translate, AttackKind, AttackPlan, IzhikevichParams, RunClock,
    DEFAULT_MAX_JUMP_MV,
};

use manifest::Manifest;

#[derive(Parser)]
#[command(name = "neurostrike", version, about = "Jamming and flooding attacks on a maze-solving CNN and its spiking twin")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Training seed (also the sweep master seed when given).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, env = "NEUROSTRIKE_OUT", default_value = "out")]
    out_dir: PathBuf,
    /// JSON config or a manifest.txt written by an earlier run.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for sweeps.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Reduced grid with 3 executions.
    #[arg(long, global = true)]
    quick: bool,
    /// Largest synaptic jump after translation, mV.
    #[arg(long, global = true)]
    gain: Option<f64>,
    /// Maze text file; defaults to the built-in maze.
    #[arg(long, global = true)]
    maze: Option<PathBuf>,
    /// Trained weights; trained on the fly when omitted.
    #[arg(long, global = true)]
    weights: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train the Q-network and save its weights.
    Train {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Translate weights into the spiking network and dump its synapses.
    Translate,
    /// One 27 s run of the spiking network.
    RunBio(BioArgs),
    /// One greedy playout of the Q-network.
    RunCnn(CnnArgs),
    /// JAM sweep over neuron counts and consecutive positions.
    SweepJam {
        /// 1..=20 neurons jammed over the whole path.
        #[arg(long)]
        restricted: bool,
    },
    /// FLO sweep over positions, neuron counts and increments.
    SweepFlo,
    /// Correlation report from a results CSV.
    Report {
        #[arg(long)]
        results: PathBuf,
    },
    /// Tag spikes of an attacked run against a baseline run.
    ExportRaster {
        #[arg(long)]
        baseline: PathBuf,
        #[arg(long)]
        attacked: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum AttackArg {
    None,
    Jam,
    Flo,
}

#[derive(Args, Serialize)]
struct AttackArgs {
    #[arg(long, value_enum, default_value = "none")]
    attack: AttackArg,
    #[arg(long, default_value_t = 5)]
    n_neurons: usize,
    /// Master seed of the target sampler.
    #[arg(long, default_value_t = 0)]
    targets_seed: u64,
    #[arg(long, default_value_t = 0)]
    execution: usize,
    /// JAM: first attacked position.
    #[arg(long, default_value_t = 1)]
    first_pos: usize,
    /// JAM: number of consecutive attacked positions.
    #[arg(long, default_value_t = 27)]
    n_pos: usize,
    /// FLO: attacked position.
    #[arg(long, default_value_t = 1)]
    pos: usize,
    /// FLO: voltage increment, mV.
    #[arg(long, default_value_t = 40.0)]
    vi: f64,
}

#[derive(Args)]
struct BioArgs {
    #[command(flatten)]
    attack: AttackArgs,
    #[arg(long, default_value_t = 0.1)]
    dt: f64,
}

#[derive(Args)]
struct CnnArgs {
    #[command(flatten)]
    attack: AttackArgs,
    /// FLO output-importance increase in percent; defaults to 1.5·vi.
    #[arg(long)]
    pct: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_STEP_CAP)]
    cap: usize,
}

/// Everything a command reads from `--config`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
struct FileConfig {
    /// Maze text; the built-in maze when absent.
    maze: Option<String>,
    train: TrainConfig,
    sweep: Option<SweepConfig>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let g = &cli.global;
    let file = load_config(g.config.as_deref(), &cli.command)?;
    fs::create_dir_all(&g.out_dir).with_context(|| format!("creating {}", g.out_dir.display()))?;
    match &cli.command {
        Command::Train { out } => cmd_train(g, file, out.clone()),
        Command::Translate => cmd_translate(g, file),
        Command::RunBio(a) => cmd_run_bio(g, file, a),
        Command::RunCnn(a) => cmd_run_cnn(g, file, a),
        Command::SweepJam { restricted } => {
            let base = if *restricted {
                SweepConfig::jam_restricted()
            } else {
                SweepConfig::jam()
            };
            cmd_sweep(g, file, base, AttackKind::Jam)
        }
        Command::SweepFlo => cmd_sweep(g, file, SweepConfig::flo(), AttackKind::Flo),
        Command::Report { results } => cmd_report(g, results),
        Command::ExportRaster {
            baseline,
            attacked,
            out,
        } => cmd_export_raster(g, baseline, attacked, out.clone()),
    }
}

/// Reads a manifest, a full [`FileConfig`], or a bare sweep/train config.
fn load_config(path: Option<&Path>, command: &Command) -> Result<FileConfig> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let json = if Manifest::is_manifest(&text) {
        let m = Manifest::parse(&text)?;
        m.get("config").context("manifest has no `config` entry")?.to_string()
    } else {
        text
    };
    let value: serde_json::Value =
        serde_json::from_str(&json).with_context(|| format!("parsing config {}", path.display()))?;
    let is_full = value
        .as_object()
        .is_some_and(|o| ["maze", "train", "sweep"].iter().any(|k| o.contains_key(*k)));
    let parsed = if is_full {
        serde_json::from_value(value)?
    } else {
        match command {
            Command::SweepJam { .. } | Command::SweepFlo => FileConfig {
                sweep: Some(serde_json::from_value(value)?),
                ..FileConfig::default()
            },
            _ => FileConfig {
                train: serde_json::from_value(value)?,
                ..FileConfig::default()
            },
        }
    };
    Ok(parsed)
}

fn maze(g: &Global, file: &mut FileConfig) -> Result<MazeGrid> {
    if let Some(path) = &g.maze {
        file.maze = Some(fs::read_to_string(path).with_context(|| format!("reading maze {}", path.display()))?);
    }
    match &file.maze {
        Some(text) => Ok(text.parse()?),
        None => Ok(default_maze()),
    }
}

fn train_config(g: &Global, file: &mut FileConfig) -> TrainConfig {
    if let Some(seed) = g.seed {
        file.train.seed = seed;
    }
    file.train.clone()
}

/// Loads `--weights`, or trains and stores `weights.txt` under the output
/// directory.
fn weights(g: &Global, file: &mut FileConfig, grid: &MazeGrid, manifest: &mut Manifest) -> Result<QNetwork> {
    if let Some(path) = &g.weights {
        manifest.set("weights", format!("loaded {}", path.display()));
        return Ok(load_weights(path)?);
    }
    let cfg = train_config(g, file);
    let t = Instant::now();
    let (net, report) = train(grid, &cfg)?;
    let path = g.out_dir.join("weights.txt");
    save_weights(&net, &path)?;
    eprintln!(
        "trained seed {} in {} episodes ({:.1}s)",
        cfg.seed,
        report.epochs,
        t.elapsed().as_secs_f64()
    );
    manifest.set("weights", format!("trained seed {} -> weights.txt", cfg.seed));
    Ok(net)
}

fn finish(g: &Global, mut manifest: Manifest, file: &FileConfig, artifacts: &[&str]) -> Result<()> {
    manifest.set("args", serde_json::to_string(&std::env::args().skip(1).collect::<Vec<_>>())?);
    manifest.set("config", serde_json::to_string(file)?);
    manifest.set("artifacts", artifacts.join(" "));
    let path = g.out_dir.join("manifest.txt");
    fs::write(&path, manifest.render()).with_context(|| format!("writing {}", path.display()))
}

fn cmd_train(g: &Global, mut file: FileConfig, out: Option<PathBuf>) -> Result<()> {
    let grid = maze(g, &mut file)?;
    let cfg = train_config(g, &mut file);
    let t = Instant::now();
    let (net, report) = train(&grid, &cfg)?;
    let path = out.unwrap_or_else(|| g.out_dir.join("weights.txt"));
    save_weights(&net, &path)?;
    let ep = play_episode(&net, &grid, grid.start(), &NodeOverrideSet::new(), ActivationRule::Always, DEFAULT_STEP_CAP)?;
    println!(
        "seed {}: optimal after {} episodes, {} updates, {:.1}s; start -> exit in {} steps",
        cfg.seed,
        report.epochs,
        report.updates,
        t.elapsed().as_secs_f64(),
        ep.steps
    );
    println!("weights: {}", path.display());
    let mut m = Manifest::new("train");
    m.set("weights", format!("trained seed {}", cfg.seed));
    finish(g, m, &file, &[&path.display().to_string()])
}

fn max_jump(g: &Global) -> f64 {
    g.gain.unwrap_or(DEFAULT_MAX_JUMP_MV)
}

fn cmd_translate(g: &Global, mut file: FileConfig) -> Result<()> {
    let grid = maze(g, &mut file)?;
    let mut m = Manifest::new("translate");
    let net = weights(g, &mut file, &grid, &mut m)?;
    let snn = translate(&net, gain_for_max_jump(&net, max_jump(g)), IzhikevichParams::default())?;
    let path = g.out_dir.join("topology.csv");
    snn.write_topology(&path)?;
    println!(
        "{} neurons, {} synapses, gain {:.6} (max jump {} mV)",
        snn.n_neurons(),
        snn.synapses().len(),
        snn.gain(),
        max_jump(g)
    );
    m.set("max_jump_mv", max_jump(g).to_string());
    finish(g, m, &file, &["topology.csv"])
}

fn targets(a: &AttackArgs) -> Result<Vec<usize>> {
    Ok(sample_targets(a.n_neurons, a.execution, a.targets_seed)?)
}

fn cmd_run_bio(g: &Global, mut file: FileConfig, a: &BioArgs) -> Result<()> {
    let clock = RunClock::new(27_000.0, a.dt)?;
    // Validate the attack before paying for training.
    let plan = match a.attack.attack {
        AttackArg::None => None,
        AttackArg::Jam => Some(make_jam_plan(targets(&a.attack)?, a.attack.first_pos, a.attack.n_pos, &clock)?),
        AttackArg::Flo => Some(make_flo_plan(targets(&a.attack)?, a.attack.pos, a.attack.vi, &clock)?),
    };
    let grid = maze(g, &mut file)?;
    let mut m = Manifest::new("run-bio");
    let net = weights(g, &mut file, &grid, &mut m)?;
    let sweep = SweepConfig {
        dt_ms: a.dt,
        max_jump_mv: max_jump(g),
        ..SweepConfig::jam()
    };
    let setup = BioSetup::new(&net, &sweep)?;
    let baseline = setup.baseline(&grid)?;
    let attacks: Vec<AttackPlan> = plan.into_iter().collect();
    let rec = baseline.run_attacked(&attacks)?;
    let spont = metric_row(baseline.record())?;
    let hit = metric_row(&rec)?;

    write_spikes_csv(baseline.record(), &g.out_dir.join("baseline_spikes.csv"))?;
    write_spikes_csv(&rec, &g.out_dir.join("spikes.csv"))?;
    write_raster_csv(&diff_raster(baseline.record(), &rec)?, &g.out_dir.join("raster.csv"))?;
    let summary = serde_json::json!({
        "attack": &a.attack,
        "targets": attacks.first().map(|p| p.targets().to_vec()).unwrap_or_default(),
        "spontaneous": spont,
        "attacked": hit,
    });
    fs::write(g.out_dir.join("metrics.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    println!(
        "spontaneous: {} spikes, {:.3}% dispersion; attacked: {} spikes, {:.3}% dispersion",
        spont.n_spikes, spont.dispersion_pct, hit.n_spikes, hit.dispersion_pct
    );
    m.set("max_jump_mv", max_jump(g).to_string());
    finish(g, m, &file, &["baseline_spikes.csv", "spikes.csv", "raster.csv", "metrics.json"])
}

fn cmd_run_cnn(g: &Global, mut file: FileConfig, a: &CnnArgs) -> Result<()> {
    let grid = maze(g, &mut file)?;
    let ids = match a.attack.attack {
        AttackArg::None => vec![],
        _ => targets(&a.attack)?,
    };
    let pct = a.pct.unwrap_or_else(|| cnn_importance_pct(a.attack.vi));
    let mut m = Manifest::new("run-cnn");
    let net = weights(g, &mut file, &grid, &mut m)?;
    let ep = match a.attack.attack {
        AttackArg::None => play_episode(&net, &grid, grid.start(), &NodeOverrideSet::new(), ActivationRule::Always, a.cap)?,
        AttackArg::Jam => {
            let ov = NodeOverrideSet::uniform(ids.clone(), NodeOverride::SetTo(CNN_JAM_VALUE))?;
            play_episode(&net, &grid, grid.start(), &ov, ActivationRule::Always, a.cap)?
        }
        AttackArg::Flo => {
            let ov = NodeOverrideSet::uniform(ids.clone(), NodeOverride::Scale(1.0 + pct / 100.0))?;
            play_from_path_index(&net, &grid, a.attack.pos, &ov, a.cap)?
        }
    };
    let summary = serde_json::json!({
        "attack": &a.attack,
        "targets": ids,
        "steps": ep.steps,
        "success": ep.success,
        "trajectory": ep.trajectory.iter().map(|p| [p.row, p.col]).collect::<Vec<_>>(),
    });
    fs::write(g.out_dir.join("episode.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    println!("steps {}, success {}", ep.steps, ep.success);
    finish(g, m, &file, &["episode.json"])
}

fn sweep_config(g: &Global, file: &mut FileConfig, base: SweepConfig, kind: AttackKind) -> Result<SweepConfig> {
    let mut cfg = match file.sweep.take() {
        Some(c) => c,
        None => base,
    };
    if cfg.attack_kind != kind {
        bail!("config describes a {} sweep, not {kind}", cfg.attack_kind);
    }
    if g.quick {
        cfg = cfg.quick();
    }
    if let Some(seed) = g.seed {
        cfg.master_seed = seed;
    }
    if let Some(gain) = g.gain {
        cfg.max_jump_mv = gain;
    }
    cfg.validate()?;
    file.sweep = Some(cfg.clone());
    Ok(cfg)
}

fn with_pool<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match jobs {
        Some(n) => Ok(rayon::ThreadPoolBuilder::new().num_threads(n).build()?.install(f)),
        None => Ok(f()),
    }
}

fn cmd_sweep(g: &Global, mut file: FileConfig, base: SweepConfig, kind: AttackKind) -> Result<()> {
    let cfg = sweep_config(g, &mut file, base, kind)?;
    let grid = maze(g, &mut file)?;
    let name = format!("sweep-{kind}");
    let mut m = Manifest::new(&name);
    let net = weights(g, &mut file, &grid, &mut m)?;
    let ctx = SweepContext { grid: &grid, net: &net };
    let t = Instant::now();
    let out = with_pool(g.jobs, || run_sweep(&ctx, &cfg))??;
    eprintln!("{} rows in {:.1}s", out.results.len(), t.elapsed().as_secs_f64());

    let stem = format!("{kind}");
    let results = format!("{stem}_results.csv");
    persist(&out.results, &g.out_dir.join(&results))?;
    let report = write_report(g, &out.results, kind, &stem)?;
    let summary = serde_json::json!({
        "spontaneous": out.spontaneous,
        "steps_success_r": steps_success_correlation(&out.results, kind).ok(),
        "correlation": report.as_ref().ok(),
        "correlation_error": report.as_ref().err(),
        "mean_bio_spikes": mean_bio_spikes(&out.results, kind)
            .into_iter()
            .map(|((n, p), s)| serde_json::json!({"n_neurons": n, "position": p, "n_spikes": s}))
            .collect::<Vec<_>>(),
    });
    let summary_name = format!("{stem}_summary.json");
    fs::write(g.out_dir.join(&summary_name), serde_json::to_string_pretty(&summary)? + "\n")?;
    let corr_name = format!("{stem}_correlation.csv");
    let mut artifacts = vec![results.as_str(), summary_name.as_str()];
    if report.is_ok() {
        artifacts.push(&corr_name);
    }
    finish(g, m, &file, &artifacts)
}

#[derive(Serialize)]
struct ReportJson {
    features: Vec<&'static str>,
    matrix: Vec<Vec<f64>>,
    cells: usize,
}

/// Writes `<stem>_correlation.csv` and prints the matrix; a degenerate
/// feature column is reported, not fatal.
fn write_report(g: &Global, results: &[RunResult], kind: AttackKind, stem: &str) -> Result<Result<ReportJson, String>> {
    match correlate(results, kind, Feature::for_kind(kind)) {
        Ok(rep) => {
            rep.write(&g.out_dir.join(format!("{stem}_correlation.csv")))?;
            print!("{}", rep.to_csv());
            let k = rep.features.len();
            Ok(Ok(ReportJson {
                features: rep.features.iter().map(|f| f.label()).collect(),
                matrix: rep.matrix.chunks(k).map(|r| r.to_vec()).collect(),
                cells: rep.cells,
            }))
        }
        Err(e) => {
            eprintln!("correlation skipped: {e}");
            Ok(Err(e.to_string()))
        }
    }
}

fn cmd_report(g: &Global, results: &Path) -> Result<()> {
    let rows = load_results(results)?;
    let Some(kind) = rows.first().map(|r| r.attack_kind) else {
        bail!("{} has no rows", results.display());
    };
    let stem = format!("{kind}_report");
    if let Err(e) = write_report(g, &rows, kind, &stem)? {
        bail!("{e}");
    }
    if let Ok(r) = steps_success_correlation(&rows, kind) {
        println!("steps vs success: {r:.6}");
    }
    let mut m = Manifest::new("report");
    m.set("results", results.display().to_string());
    let corr = format!("{stem}_correlation.csv");
    finish(g, m, &FileConfig::default(), &[&corr])
}

fn cmd_export_raster(g: &Global, baseline: &Path, attacked: &Path, out: Option<PathBuf>) -> Result<()> {
    let base = read_spikes_csv(baseline)?;
    let hit = read_spikes_csv(attacked)?;
    let rows = diff_raster(&base, &hit)?;
    let path = out.unwrap_or_else(|| g.out_dir.join("raster.csv"));
    write_raster_csv(&rows, &path)?;
    println!("{} rows -> {}", rows.len(), path.display());
    let mut m = Manifest::new("export-raster");
    m.set("inputs", format!("{} {}", baseline.display(), attacked.display()));
    finish(g, m, &FileConfig::default(), &[&path.display().to_string()])
}
