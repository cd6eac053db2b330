//! Training loops and the shared run-directory plumbing they write through.
//!
//! Every run, whatever the algorithm, owns one directory with a manifest,
//! an append-only metrics CSV, checkpoints, and a final deterministic
//! evaluation. All stochastic choices inside a run derive from the single
//! user-facing seed through [`derive_seed`], so a repeated run with the same
//! flags reproduces its metrics file byte for byte.

pub mod baselines;
pub mod bco;
pub mod expert;
pub mod i2l;
pub mod measure;

use crate::adversary::DiscConfig;
use crate::envs::{DynamicsConfig, EnvKind, EnvSpec};
use crate::error::{Error, Result};
use crate::nn::InputNorm;
use crate::policy::{GaussianPolicy, PpoConfig};
use crate::rollout::{self, Trajectory};
use crate::wcritic::CriticConfig;
use std::fmt;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Algo {
    I2l,
    GailS,
    Gaifo,
    GailSa,
    Airl,
    Bco,
}

impl Algo {
    pub const ALL: [Algo; 6] = [Algo::I2l, Algo::GailS, Algo::Gaifo, Algo::GailSa, Algo::Airl, Algo::Bco];

    pub fn name(self) -> &'static str {
        match self {
            Algo::I2l => "i2l",
            Algo::GailS => "gail_s",
            Algo::Gaifo => "gaifo",
            Algo::GailSa => "gail_sa",
            Algo::Airl => "airl",
            Algo::Bco => "bco",
        }
    }

    /// Whether the algorithm consumes expert actions and therefore needs an
    /// action-augmented demo file.
    pub fn needs_actions(self) -> bool {
        matches!(self, Algo::GailSa | Algo::Airl)
    }
}

impl fmt::Display for Algo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algo::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::parse(format!("unknown algorithm `{s}` (expected one of i2l, gail_s, gaifo, gail_sa, airl, bco)")))
    }
}

/// Fixed training shape shared by every algorithm. Defaults follow the
/// common two-layer-64 recipe; individual runs rarely override anything but
/// the step budget and buffer capacity.
#[derive(Debug, Clone, Copy)]
pub struct HyperParams {
    pub hidden: usize,
    pub n_steps_per_iter: usize,
    pub eval_episodes: usize,
    pub gamma: f64,
    pub lam: f64,
    pub ppo: PpoConfig,
    pub critic: CriticConfig,
    pub disc: DiscConfig,
    /// Buffer snapshot cadence in iterations, when snapshots are enabled.
    pub snapshot_every: usize,
    /// Post-initial interaction multiplier for behavioral cloning from
    /// observation.
    pub bco_alpha: f64,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            hidden: 64,
            n_steps_per_iter: 2000,
            eval_episodes: 10,
            gamma: 0.99,
            lam: 0.95,
            ppo: PpoConfig::default(),
            critic: CriticConfig::default(),
            disc: DiscConfig::default(),
            snapshot_every: 10,
            bco_alpha: 5.0,
        }
    }
}

/// One fully resolved training job.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub algo: Algo,
    pub env: EnvKind,
    pub dynamics: DynamicsConfig,
    pub seed: u64,
    pub total_steps: usize,
    pub buffer_capacity: usize,
    pub demo_path: Option<PathBuf>,
    pub run_dir: PathBuf,
    pub snapshots: bool,
    pub hp: HyperParams,
}

impl TrainConfig {
    pub fn n_iterations(&self) -> Result<usize> {
        if self.total_steps < self.hp.n_steps_per_iter {
            return Err(Error::precondition(format!(
                "{} total steps cannot fit one {}-step iteration",
                self.total_steps, self.hp.n_steps_per_iter
            )));
        }
        Ok(self.total_steps / self.hp.n_steps_per_iter)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TrainOutcome {
    pub iterations: usize,
    pub final_mean_return: f64,
}

/// Stable per-purpose seed derivation (FNV-1a over master seed, a purpose
/// tag, and an index). Streams for different purposes never share a seed by
/// construction rather than by accident.
pub fn derive_seed(master: u64, tag: &str, k: u64) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    for b in master.to_le_bytes().iter().chain(tag.as_bytes()).chain(k.to_le_bytes().iter()) {
        h ^= u64::from(*b);
        h = h.wrapping_mul(PRIME);
    }
    h
}

/// Welford running mean and variance over observation vectors.
#[derive(Debug, Clone)]
pub struct RunningNorm {
    n: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl RunningNorm {
    pub fn new(dim: usize) -> Self {
        RunningNorm { n: 0, mean: vec![0.0; dim], m2: vec![0.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn push(&mut self, x: &[f64]) {
        debug_assert_eq!(x.len(), self.mean.len());
        self.n += 1;
        for i in 0..self.mean.len() {
            let d = x[i] - self.mean[i];
            self.mean[i] += d / self.n as f64;
            self.m2[i] += d * (x[i] - self.mean[i]);
        }
    }

    pub fn push_all<'a>(&mut self, xs: impl IntoIterator<Item = &'a Vec<f64>>) {
        for x in xs {
            self.push(x);
        }
    }

    pub fn mean_vec(&self) -> Vec<f64> {
        self.mean.clone()
    }

    /// Population standard deviation with a floor that keeps the affine
    /// transform invertible for constant dimensions.
    pub fn std_vec(&self) -> Vec<f64> {
        self.m2
            .iter()
            .map(|&m2| if self.n == 0 { 1.0 } else { (m2 / self.n as f64).sqrt().max(1e-6) })
            .collect()
    }

    /// Frozen affine snapshot of the current statistics.
    pub fn snapshot(&self) -> InputNorm {
        if self.n == 0 {
            return InputNorm::identity(self.mean.len());
        }
        InputNorm::new(self.mean_vec(), self.std_vec()).expect("running stats are finite and floored")
    }
}

/// Snapshot for a state-action input: state dims use the running stats,
/// action dims pass through untouched.
pub fn state_action_norm(rn: &RunningNorm, action_dim: usize) -> InputNorm {
    let mut mean = rn.mean_vec();
    let mut std = rn.std_vec();
    if rn.count() == 0 {
        mean = vec![0.0; rn.dim()];
        std = vec![1.0; rn.dim()];
    }
    mean.extend(std::iter::repeat(0.0).take(action_dim));
    std.extend(std::iter::repeat(1.0).take(action_dim));
    InputNorm::new(mean, std).expect("composed stats are finite and floored")
}

/// Snapshot for a state-successor input: the same state stats, twice.
pub fn state_pair_norm(rn: &RunningNorm) -> InputNorm {
    let (mut mean, mut std) = if rn.count() == 0 {
        (vec![0.0; rn.dim()], vec![1.0; rn.dim()])
    } else {
        (rn.mean_vec(), rn.std_vec())
    };
    mean.extend(mean.clone());
    std.extend(std.clone());
    InputNorm::new(mean, std).expect("composed stats are finite and floored")
}

/// One metrics row. Columns that do not apply to an algorithm are written
/// as zero so every run shares one header.
#[derive(Debug, Clone, Copy, Default)]
pub struct MetricsRow {
    pub iter: usize,
    pub steps: usize,
    pub mean_return: f64,
    pub w1: f64,
    pub buffer_score: f64,
    pub disc_loss: f64,
    pub critic_obj: f64,
    pub entropy: f64,
}

pub const METRICS_HEADER: &str = "iter,steps,mean_return,w1,buffer_score,disc_loss,critic_obj,entropy";

pub struct MetricsWriter {
    out: BufWriter<File>,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "{METRICS_HEADER}")?;
        Ok(MetricsWriter { out })
    }

    pub fn append(&mut self, row: &MetricsRow) -> Result<()> {
        writeln!(
            self.out,
            "{},{},{},{},{},{},{},{}",
            row.iter, row.steps, row.mean_return, row.w1, row.buffer_score, row.disc_loss, row.critic_obj, row.entropy
        )?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

/// Parsed metrics file, one vector per column.
#[derive(Debug, Clone, Default)]
pub struct MetricsTable {
    pub rows: Vec<MetricsRow>,
}

pub fn read_metrics(path: &Path) -> Result<MetricsTable> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::parse("empty metrics file"))?;
    if header != METRICS_HEADER {
        return Err(Error::parse(format!("unexpected metrics header `{header}`")));
    }
    let mut rows = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 8 {
            return Err(Error::parse(format!("metrics row has {} fields", f.len())));
        }
        let num =
            |t: &str| -> Result<f64> { t.parse().map_err(|_| Error::parse(format!("bad metrics value `{t}`"))) };
        rows.push(MetricsRow {
            iter: f[0].parse().map_err(|_| Error::parse("bad iter"))?,
            steps: f[1].parse().map_err(|_| Error::parse("bad steps"))?,
            mean_return: num(f[2])?,
            w1: num(f[3])?,
            buffer_score: num(f[4])?,
            disc_loss: num(f[5])?,
            critic_obj: num(f[6])?,
            entropy: num(f[7])?,
        });
    }
    Ok(MetricsTable { rows })
}

/// Layout of one run directory.
#[derive(Debug, Clone)]
pub struct RunPaths {
    pub dir: PathBuf,
}

impl RunPaths {
    pub fn create(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir.join("snapshots"))?;
        Ok(RunPaths { dir: dir.to_path_buf() })
    }

    pub fn existing(dir: &Path) -> Self {
        RunPaths { dir: dir.to_path_buf() }
    }

    pub fn manifest(&self) -> PathBuf {
        self.dir.join("manifest.txt")
    }

    pub fn metrics(&self) -> PathBuf {
        self.dir.join("metrics.csv")
    }

    pub fn policy_ckpt(&self) -> PathBuf {
        self.dir.join("policy.ckpt")
    }

    pub fn disc_ckpt(&self) -> PathBuf {
        self.dir.join("disc.ckpt")
    }

    pub fn critic_ckpt(&self) -> PathBuf {
        self.dir.join("critic.ckpt")
    }

    pub fn buffer_ckpt(&self) -> PathBuf {
        self.dir.join("buffer.ckpt")
    }

    pub fn snapshots_dir(&self) -> PathBuf {
        self.dir.join("snapshots")
    }

    pub fn buffer_snapshot(&self, iter: usize) -> PathBuf {
        self.snapshots_dir().join(format!("buffer_{iter:04}.ckpt"))
    }

    pub fn final_eval(&self) -> PathBuf {
        self.dir.join("final_eval.txt")
    }

    pub fn demo(&self) -> PathBuf {
        self.dir.join("expert.demo")
    }

    pub fn demo_with_actions(&self) -> PathBuf {
        self.dir.join("expert.demo-sa")
    }
}

pub fn write_manifest(paths: &RunPaths, cfg: &TrainConfig, command: &str) -> Result<()> {
    let mut out = String::new();
    let _ = writeln!(out, "command={command}");
    let name = cfg.run_dir.file_name().and_then(|n| n.to_str()).unwrap_or("run");
    let _ = writeln!(out, "name={name}");
    let _ = writeln!(out, "version={}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(out, "started_unix={}", unix_now());
    let _ = writeln!(out, "algo={}", cfg.algo);
    let _ = writeln!(out, "env={}", cfg.env);
    let _ = writeln!(out, "gravity_scale={}", cfg.dynamics.gravity_scale);
    let _ = writeln!(out, "mass_scale={}", cfg.dynamics.mass_scale);
    let _ = writeln!(out, "friction_scale={}", cfg.dynamics.friction_scale);
    let _ = writeln!(out, "seed={}", cfg.seed);
    let _ = writeln!(out, "total_steps={}", cfg.total_steps);
    let _ = writeln!(out, "buffer_capacity={}", cfg.buffer_capacity);
    let _ = writeln!(out, "demo={}", cfg.demo_path.as_ref().map_or_else(String::new, |p| p.display().to_string()));
    let _ = writeln!(out, "snapshots={}", cfg.snapshots);
    std::fs::write(paths.manifest(), out)?;
    Ok(())
}

fn unix_now() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Appends the completion timestamp to an existing manifest.
pub fn stamp_finished(paths: &RunPaths) -> Result<()> {
    let mut text = std::fs::read_to_string(paths.manifest())?;
    let _ = writeln!(text, "finished_unix={}", unix_now());
    std::fs::write(paths.manifest(), text)?;
    Ok(())
}

/// Deterministic final evaluation: mean-action episodes on the run's own
/// dynamics. Writes `final_eval.txt` and returns the mean return together
/// with the evaluated trajectories.
pub fn final_evaluation(
    paths: &RunPaths,
    policy: &GaussianPolicy,
    spec: &EnvSpec,
    dynamics: &DynamicsConfig,
    episodes: usize,
    seed: u64,
) -> Result<(f64, Vec<Trajectory>)> {
    let trajs = rollout::evaluate(policy, spec, dynamics, episodes, seed)?;
    let returns: Vec<f64> = trajs
        .iter()
        .map(crate::envs::episode_return)
        .collect::<Result<_>>()?;
    let mean = returns.iter().sum::<f64>() / returns.len() as f64;
    let mut out = String::new();
    let _ = writeln!(out, "episodes {}", returns.len());
    let _ = writeln!(out, "mean_return {mean}");
    let mut line = String::from("returns");
    for r in &returns {
        let _ = write!(line, " {r}");
    }
    out.push_str(&line);
    out.push('\n');
    std::fs::write(paths.final_eval(), out)?;
    Ok((mean, trajs))
}

/// Reads `mean_return` back out of a `final_eval.txt`.
pub fn read_final_eval(path: &Path) -> Result<f64> {
    let text = std::fs::read_to_string(path)?;
    for line in text.lines() {
        if let Some(rest) = line.strip_prefix("mean_return ") {
            return rest.trim().parse().map_err(|_| Error::parse(format!("bad mean_return `{rest}`")));
        }
    }
    Err(Error::parse(format!("no mean_return line in {}", path.display())))
}

pub fn mean_env_return(trajs: &[Trajectory]) -> Result<f64> {
    if trajs.is_empty() {
        return Err(Error::precondition("no trajectories to average"));
    }
    let mut sum = 0.0;
    for t in trajs {
        let rewards = t
            .env_rewards
            .as_ref()
            .ok_or_else(|| Error::precondition("trajectory lacks environment rewards"))?;
        sum += rewards.iter().sum::<f64>();
    }
    Ok(sum / trajs.len() as f64)
}

/// Demo states loaded and checked against the observation shape of `env`.
pub fn load_checked_demo(path: &Path, spec: &EnvSpec) -> Result<Vec<Vec<f64>>> {
    let states = rollout::load_demo(path)?;
    if states[0].len() != spec.state_dim {
        return Err(Error::precondition(format!(
            "demo has {}-dim states but {} observes {} dims",
            states[0].len(),
            spec.kind,
            spec.state_dim
        )));
    }
    Ok(states)
}

/// Ordered stages of one training iteration, reported through the optional
/// observer hook so tests can pin the loop order without instrumenting
/// internals.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainEvent {
    Collect,
    CriticUpdate,
    ScoreNewTrajectories,
    BufferRescore,
    BufferOffers,
    DiscUpdate,
    AssignRewards,
    PolicyUpdate,
}

pub type TrainHook<'a> = &'a mut dyn FnMut(usize, TrainEvent);
