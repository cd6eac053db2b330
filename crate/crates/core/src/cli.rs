//! Command-line surface. Four subcommands cover the whole workflow:
//! `expert` trains on true rewards and exports demos, `imitate` trains any
//! of the imitation algorithms from a demo file, `measure` analyzes a
//! finished run, and `matrix` drives an algorithms-by-settings-by-seeds
//! grid through worker processes and aggregates the results.
//!
//! Exit codes are a stable contract: 0 success, 2 usage or precondition
//! failure, 1 runtime failure. Config values resolve as CLI flag over
//! config-file entry over built-in default.

use crate::envs::{DynamicsConfig, EnvKind};
use crate::error::{Error, Result};
use crate::trainers::{self, measure, Algo, HyperParams, RunPaths, TrainConfig};
use clap::{Args, Parser, Subcommand};
use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Child, Command};
use std::str::FromStr;

#[derive(Parser)]
#[command(name = "i2l", version, about = "State-only imitation learning under dynamics mismatch")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train an expert on the true reward and export demo files
    Expert(ExpertArgs),
    /// Train an imitation policy from a demo file
    Imitate(ImitateArgs),
    /// Analyze a finished run: critic trend and reward-transfer gap
    Measure(MeasureArgs),
    /// Run an algorithms x settings x seeds grid and aggregate results
    Matrix(MatrixArgs),
}

#[derive(Args)]
struct ExpertArgs {
    /// Environment name (pendulum | pointmass2d)
    #[arg(long)]
    env: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Total environment steps
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    gravity_scale: Option<f64>,
    #[arg(long)]
    mass_scale: Option<f64>,
    #[arg(long)]
    friction_scale: Option<f64>,
    /// Run directory name under the output root
    #[arg(long)]
    name: Option<String>,
    /// Flat key=value config file; CLI flags win over its entries
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct ImitateArgs {
    /// Algorithm name (i2l | gail_s | gaifo | gail_sa | airl | bco)
    #[arg(long)]
    algo: Option<String>,
    /// Environment name (pendulum | pointmass2d)
    #[arg(long)]
    env: Option<String>,
    /// Demo file (state-only, or state-action for gail_sa/airl)
    #[arg(long)]
    demo: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Total environment steps
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    gravity_scale: Option<f64>,
    #[arg(long)]
    mass_scale: Option<f64>,
    #[arg(long)]
    friction_scale: Option<f64>,
    /// Trajectories the priority buffer can hold
    #[arg(long)]
    buffer_capacity: Option<usize>,
    /// Run directory name under the output root
    #[arg(long)]
    name: Option<String>,
    /// Flat key=value config file; CLI flags win over its entries
    #[arg(long)]
    config: Option<PathBuf>,
    /// Record periodic buffer snapshots for later gap measurement
    #[arg(long)]
    snapshots: bool,
}

#[derive(Args)]
struct MeasureArgs {
    /// Finished run directory
    #[arg(long)]
    run: PathBuf,
    /// Held-out expert state-action demo the learned reward is scored on
    #[arg(long)]
    oracle: PathBuf,
    /// Lipschitz scale for the bound; repeatable
    #[arg(long = "scale")]
    scales: Vec<f64>,
    /// Iterations averaged at each end of the trend comparison
    #[arg(long, default_value_t = 10)]
    window: usize,
    /// Critic update calls per buffer snapshot
    #[arg(long, default_value_t = 50)]
    rounds: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct MatrixArgs {
    /// Comma-separated environment names
    #[arg(long, default_value = "pendulum")]
    envs: String,
    /// Comma-separated mismatch settings (default | gravity | density | friction)
    #[arg(long, default_value = "default,gravity,density,friction")]
    settings: String,
    /// Comma-separated algorithm names
    #[arg(long, default_value = "i2l,gail_s,gaifo,gail_sa,airl,bco")]
    algos: String,
    /// Independent seeds per cell
    #[arg(long, default_value_t = 8)]
    seeds: u64,
    /// First seed; cell k uses seed_base + k
    #[arg(long, default_value_t = 0)]
    seed_base: u64,
    /// Total environment steps per cell
    #[arg(long, default_value_t = 300_000)]
    steps: usize,
    /// Directory holding <env>.demo and <env>.demo-sa files
    #[arg(long)]
    demo_dir: PathBuf,
    /// Worker processes running cells concurrently
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Matrix directory name under the output root
    #[arg(long, default_value = "matrix")]
    out: String,
    /// Skip cells whose run directory already holds a final evaluation
    #[arg(long)]
    resume: bool,
    #[arg(long, default_value_t = 5)]
    buffer_capacity: usize,
}

/// Output root for run directories; `I2L_RUN_DIR` overrides the default.
fn run_root() -> PathBuf {
    std::env::var_os("I2L_RUN_DIR").map(PathBuf::from).unwrap_or_else(|| PathBuf::from("run"))
}

const CONFIG_KEYS: [&str; 11] = [
    "algo",
    "buffer-capacity",
    "demo",
    "env",
    "friction-scale",
    "gravity-scale",
    "mass-scale",
    "name",
    "seed",
    "snapshots",
    "steps",
];

/// Key=value entries from an optional config file. Blank lines and `#`
/// comments are skipped; unknown keys are rejected so typos surface.
struct FileConfig {
    entries: HashMap<String, String>,
}

impl FileConfig {
    fn load(path: Option<&Path>) -> Result<FileConfig> {
        let mut entries = HashMap::new();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path)?;
            for (lineno, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (key, value) = line.split_once('=').ok_or_else(|| {
                    Error::parse(format!("{}:{}: expected key=value", path.display(), lineno + 1))
                })?;
                let key = key.trim();
                if !CONFIG_KEYS.contains(&key) {
                    return Err(Error::parse(format!(
                        "{}:{}: unknown key `{key}` (known: {})",
                        path.display(),
                        lineno + 1,
                        CONFIG_KEYS.join(", ")
                    )));
                }
                entries.insert(key.to_string(), value.trim().to_string());
            }
        }
        Ok(FileConfig { entries })
    }

    fn parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.entries.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|e| Error::parse(format!("config key `{key}`: {e}"))),
        }
    }
}

/// CLI flag over config-file entry over default.
fn pick<T: FromStr>(cli: Option<T>, file: &FileConfig, key: &str, default: T) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    Ok(cli.or(file.parsed(key)?).unwrap_or(default))
}

fn require<T: FromStr>(cli: Option<T>, file: &FileConfig, key: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    cli.or(file.parsed(key)?)
        .ok_or_else(|| Error::parse(format!("--{key} is required (flag or config file)")))
}

fn parse_flag<T: FromStr<Err = Error>>(name: &str, raw: Option<String>) -> Result<Option<T>> {
    raw.map(|s| s.parse().map_err(|e| Error::parse(format!("--{name}: {e}")))).transpose()
}

fn dynamics_from(
    gravity: Option<f64>,
    mass: Option<f64>,
    friction: Option<f64>,
    file: &FileConfig,
) -> Result<DynamicsConfig> {
    let d = DynamicsConfig {
        gravity_scale: pick(gravity, file, "gravity-scale", 1.0)?,
        mass_scale: pick(mass, file, "mass-scale", 1.0)?,
        friction_scale: pick(friction, file, "friction-scale", 1.0)?,
    };
    d.validate()?;
    Ok(d)
}

fn cmd_expert(args: ExpertArgs) -> Result<()> {
    let file = FileConfig::load(args.config.as_deref())?;
    let env: EnvKind = require(parse_flag("env", args.env)?, &file, "env")?;
    let seed = pick(args.seed, &file, "seed", 0)?;
    let steps = pick(args.steps, &file, "steps", 300_000)?;
    let dynamics = dynamics_from(args.gravity_scale, args.mass_scale, args.friction_scale, &file)?;
    let name = pick(args.name, &file, "name", format!("expert_{env}_s{seed}"))?;
    let cfg = TrainConfig {
        algo: Algo::I2l,
        env,
        dynamics,
        seed,
        total_steps: steps,
        buffer_capacity: 1,
        demo_path: None,
        run_dir: run_root().join(name),
        snapshots: false,
        hp: HyperParams::default(),
    };
    let outcome = trainers::expert::train(&cfg)?;
    let paths = RunPaths::existing(&cfg.run_dir);
    println!(
        "expert {env} seed {seed}: mean_return {:.3} after {} iterations; demo {}",
        outcome.final_mean_return,
        outcome.iterations,
        paths.demo().display()
    );
    Ok(())
}

fn cmd_imitate(args: ImitateArgs) -> Result<()> {
    let file = FileConfig::load(args.config.as_deref())?;
    let algo: Algo = require(parse_flag("algo", args.algo)?, &file, "algo")?;
    let env: EnvKind = require(parse_flag("env", args.env)?, &file, "env")?;
    let demo: PathBuf = require(args.demo, &file, "demo")?;
    let seed = pick(args.seed, &file, "seed", 0)?;
    let steps = pick(args.steps, &file, "steps", 300_000)?;
    let buffer_capacity = pick(args.buffer_capacity, &file, "buffer-capacity", 5)?;
    let snapshots = args.snapshots || file.parsed("snapshots")?.unwrap_or(false);
    let dynamics = dynamics_from(args.gravity_scale, args.mass_scale, args.friction_scale, &file)?;
    let name = pick(args.name, &file, "name", format!("{algo}_{env}_s{seed}"))?;
    let cfg = TrainConfig {
        algo,
        env,
        dynamics,
        seed,
        total_steps: steps,
        buffer_capacity,
        demo_path: Some(demo),
        run_dir: run_root().join(name),
        snapshots,
        hp: HyperParams::default(),
    };
    let outcome = match algo {
        Algo::I2l => trainers::i2l::train(&cfg)?,
        Algo::Bco => trainers::bco::train(&cfg)?,
        _ => trainers::baselines::train(&cfg)?,
    };
    println!(
        "imitate {algo} {env} seed {seed}: mean_return {:.3} after {} iterations -> {}",
        outcome.final_mean_return,
        outcome.iterations,
        cfg.run_dir.display()
    );
    Ok(())
}

fn cmd_measure(args: MeasureArgs) -> Result<()> {
    let trend = measure::w1_trend(&args.run, args.window)?;
    let mut trend_csv = String::from("window,initial_mean,final_mean,decreased\n");
    let _ = writeln!(
        trend_csv,
        "{},{},{},{}",
        trend.window,
        trend.initial_mean,
        trend.final_mean,
        trend.decreased()
    );
    std::fs::write(args.run.join("measure_trend.csv"), trend_csv)?;
    println!(
        "trend: {} iterations, first {} mean {:.4}, last {} mean {:.4}, decreased {}",
        trend.iterations,
        trend.window,
        trend.initial_mean,
        trend.window,
        trend.final_mean,
        trend.decreased()
    );

    let scales = if args.scales.is_empty() { vec![0.5, 1.0, 1.5] } else { args.scales.clone() };
    let gap_cfg = measure::GapConfig { scales, rounds: args.rounds, seed: args.seed, ..measure::GapConfig::default() };
    let report = measure::reward_gap(&args.run, &args.oracle, &gap_cfg)?;

    let mut csv = String::from("iteration,w1_sa,mean_buffer_f");
    for l in &gap_cfg.scales {
        let _ = write!(csv, ",gap_L{l}");
    }
    csv.push('\n');
    for row in &report.rows {
        let _ = write!(csv, "{},{},{}", row.iteration, row.w1_sa, row.mean_buffer_f);
        for &(_, g) in &row.gaps {
            let _ = write!(csv, ",{g}");
        }
        csv.push('\n');
    }
    std::fs::write(args.run.join("measure_gap.csv"), csv)?;

    println!("gap: expert-side mean reward {:.4} over {} snapshots", report.mean_expert_f, report.rows.len());
    for (i, &l) in gap_cfg.scales.iter().enumerate() {
        let first = report.rows.first().map(|r| r.gaps[i].1).unwrap_or(f64::NAN);
        let last = report.rows.last().map(|r| r.gaps[i].1).unwrap_or(f64::NAN);
        println!("gap L={l}: first {first:.4}, last {last:.4}, shrunk {}", last < first);
    }
    Ok(())
}

/// Named dynamics-mismatch settings the study grid runs over.
fn setting_by_name(name: &str) -> Result<DynamicsConfig> {
    match name {
        "default" => Ok(DynamicsConfig::default()),
        "gravity" => Ok(DynamicsConfig { gravity_scale: 0.5, ..DynamicsConfig::default() }),
        "density" => Ok(DynamicsConfig { mass_scale: 2.0, ..DynamicsConfig::default() }),
        "friction" => Ok(DynamicsConfig { friction_scale: 3.0, ..DynamicsConfig::default() }),
        other => Err(Error::parse(format!(
            "unknown setting `{other}` (expected default, gravity, density, friction)"
        ))),
    }
}

struct Cell {
    env: EnvKind,
    setting: String,
    dynamics: DynamicsConfig,
    algo: Algo,
    seed: u64,
    name: String,
    demo: PathBuf,
}

impl Cell {
    fn dir(&self, root: &Path) -> PathBuf {
        root.join(&self.name)
    }

    fn final_eval(&self, root: &Path) -> PathBuf {
        RunPaths::existing(&self.dir(root)).final_eval()
    }
}

fn spawn_cell(cell: &Cell, root: &Path, steps: usize, capacity: usize) -> Result<Child> {
    let exe = std::env::current_exe()?;
    let log = std::fs::File::create(root.join(format!("{}.log", cell.name)))?;
    let err = log.try_clone()?;
    let child = Command::new(exe)
        .arg("imitate")
        .args(["--algo", cell.algo.name()])
        .args(["--env", &cell.env.to_string()])
        .args(["--demo", &cell.demo.display().to_string()])
        .args(["--seed", &cell.seed.to_string()])
        .args(["--steps", &steps.to_string()])
        .args(["--buffer-capacity", &capacity.to_string()])
        .args(["--gravity-scale", &cell.dynamics.gravity_scale.to_string()])
        .args(["--mass-scale", &cell.dynamics.mass_scale.to_string()])
        .args(["--friction-scale", &cell.dynamics.friction_scale.to_string()])
        .args(["--name", &cell.name])
        .env("I2L_RUN_DIR", root)
        .stdout(log)
        .stderr(err)
        .spawn()?;
    Ok(child)
}

fn mean_and_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

fn cmd_matrix(args: MatrixArgs) -> Result<()> {
    if args.seeds == 0 || args.jobs == 0 {
        return Err(Error::precondition("matrix needs at least one seed and one job"));
    }
    let envs: Vec<EnvKind> = args
        .envs
        .split(',')
        .map(|s| s.trim().parse().map_err(|e| Error::parse(format!("--envs: {e}"))))
        .collect::<Result<_>>()?;
    let settings: Vec<(String, DynamicsConfig)> = args
        .settings
        .split(',')
        .map(|s| setting_by_name(s.trim()).map(|d| (s.trim().to_string(), d)))
        .collect::<Result<_>>()?;
    let algos: Vec<Algo> = args
        .algos
        .split(',')
        .map(|s| s.trim().parse().map_err(|e| Error::parse(format!("--algos: {e}"))))
        .collect::<Result<_>>()?;

    // Every demo file the grid will read must exist before any cell starts.
    let mut cells = Vec::new();
    for &env in &envs {
        for (setting, dynamics) in &settings {
            for &algo in &algos {
                let demo = if algo.needs_actions() {
                    args.demo_dir.join(format!("{env}.demo-sa"))
                } else {
                    args.demo_dir.join(format!("{env}.demo"))
                };
                if !demo.is_file() {
                    return Err(Error::precondition(format!(
                        "missing demo file {} (needed by {algo} on {env})",
                        demo.display()
                    )));
                }
                for k in 0..args.seeds {
                    let seed = args.seed_base + k;
                    cells.push(Cell {
                        env,
                        setting: setting.clone(),
                        dynamics: *dynamics,
                        algo,
                        seed,
                        name: format!("{algo}_{env}_{setting}_s{seed}"),
                        demo: demo.clone(),
                    });
                }
            }
        }
    }

    let root = run_root().join(&args.out);
    std::fs::create_dir_all(&root)?;
    let total = cells.len();
    let mut done = 0usize;
    let mut failed: Vec<String> = Vec::new();
    let mut queue = std::collections::VecDeque::from(
        cells.iter().enumerate().collect::<Vec<_>>(),
    );
    let mut running: Vec<(Child, usize)> = Vec::new();

    while !queue.is_empty() || !running.is_empty() {
        while running.len() < args.jobs {
            let (idx, cell) = match queue.pop_front() {
                Some(c) => c,
                None => break,
            };
            if args.resume && cell.final_eval(&root).is_file() {
                done += 1;
                println!("[{done}/{total}] {} already complete, skipped", cell.name);
                continue;
            }
            running.push((spawn_cell(cell, &root, args.steps, args.buffer_capacity)?, idx));
        }
        let mut i = 0;
        while i < running.len() {
            match running[i].0.try_wait()? {
                Some(status) => {
                    let (_, idx) = running.swap_remove(i);
                    let cell = &cells[idx];
                    done += 1;
                    if status.success() && cell.final_eval(&root).is_file() {
                        println!("[{done}/{total}] {} finished", cell.name);
                    } else {
                        failed.push(cell.name.clone());
                        println!("[{done}/{total}] {} FAILED (see {}.log)", cell.name, cell.name);
                    }
                }
                None => i += 1,
            }
        }
        if !running.is_empty() {
            std::thread::sleep(std::time::Duration::from_millis(25));
        }
    }

    // Aggregate per cell group, in the deterministic grid order.
    let mut summary = String::from("env,setting,algo,seeds,completed,failed,mean_return,std_return\n");
    for &env in &envs {
        for (setting, _) in &settings {
            for &algo in &algos {
                let mut finals = Vec::new();
                let mut missing = 0usize;
                for cell in cells.iter().filter(|c| {
                    c.env == env && &c.setting == setting && c.algo == algo
                }) {
                    match trainers::read_final_eval(&cell.final_eval(&root)) {
                        Ok(v) => finals.push(v),
                        Err(_) => missing += 1,
                    }
                }
                let (mean, std) = if finals.is_empty() { (f64::NAN, f64::NAN) } else { mean_and_std(&finals) };
                let _ = writeln!(
                    summary,
                    "{env},{setting},{algo},{},{},{missing},{mean},{std}",
                    args.seeds,
                    finals.len()
                );
                println!(
                    "{env} {setting} {algo}: mean {mean:.3} std {std:.3} over {}/{} seeds",
                    finals.len(),
                    args.seeds
                );
            }
        }
    }
    std::fs::write(root.join("summary.csv"), summary)?;
    println!("summary -> {}", root.join("summary.csv").display());

    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Io(std::io::Error::other(format!(
            "{} of {total} cells failed: {}",
            failed.len(),
            failed.join(", ")
        ))))
    }
}

/// Parses `args` and runs the chosen command, translating every outcome
/// into the documented exit codes.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.cmd {
        Cmd::Expert(a) => cmd_expert(a),
        Cmd::Imitate(a) => cmd_imitate(a),
        Cmd::Measure(a) => cmd_measure(a),
        Cmd::Matrix(a) => cmd_matrix(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Precondition(_) | Error::Parse(_) => 2,
                _ => 1,
            }
        }
    }
}
