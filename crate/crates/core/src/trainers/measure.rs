//! Post-run analysis tools. One reads a finished run's metrics and reports
//! whether the critic's distance estimate trended down; the other replays a
//! run's buffer snapshots and measures how far the learned reward's score on
//! held-out expert pairs sits above its buffer-side lower bound.

use super::*;
use crate::adversary::{DiscConfig, Discriminator};
use crate::buffer::PriorityBuffer;
use crate::rollout;
use crate::wcritic::{CriticConfig, WassersteinCritic};
use std::path::Path;

/// Windowed comparison of the critic estimate at the start and end of a run.
#[derive(Debug, Clone, Copy)]
pub struct TrendReport {
    /// Rows that carried a critic estimate (the first iteration never does).
    pub iterations: usize,
    pub window: usize,
    pub initial_mean: f64,
    pub final_mean: f64,
}

impl TrendReport {
    pub fn decreased(&self) -> bool {
        self.final_mean < self.initial_mean
    }
}

/// Compares the mean critic estimate over the first and last `window`
/// iterations of a run's metrics.
pub fn w1_trend(run_dir: &Path, window: usize) -> Result<TrendReport> {
    if window == 0 {
        return Err(Error::precondition("trend window must be positive"));
    }
    let paths = RunPaths::existing(run_dir);
    let table = read_metrics(&paths.metrics())?;
    let vals: Vec<f64> = table.rows.iter().filter(|r| r.iter >= 2).map(|r| r.w1).collect();
    if vals.len() < 2 * window {
        return Err(Error::precondition(format!(
            "need {} iterations with critic estimates for window {}, metrics has {}",
            2 * window,
            window,
            vals.len()
        )));
    }
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    Ok(TrendReport {
        iterations: vals.len(),
        window,
        initial_mean: mean(&vals[..window]),
        final_mean: mean(&vals[vals.len() - window..]),
    })
}

#[derive(Debug, Clone)]
pub struct GapConfig {
    /// Lipschitz scales the bound is evaluated at.
    pub scales: Vec<f64>,
    /// Update calls for each snapshot's measurement critic. Each call draws
    /// fresh subsamples and runs the configured ascent steps on them.
    pub rounds: usize,
    pub critic: CriticConfig,
    pub hidden: usize,
    pub seed: u64,
}

impl Default for GapConfig {
    fn default() -> Self {
        GapConfig {
            scales: vec![0.5, 1.0, 1.5],
            rounds: 50,
            critic: CriticConfig { max_batch: 256, ..CriticConfig::default() },
            hidden: 64,
            seed: 0,
        }
    }
}

/// One buffer snapshot's measurements.
#[derive(Debug, Clone)]
pub struct GapRow {
    pub iteration: usize,
    /// Distance estimate between expert and buffer state-action pairs under
    /// a critic trained for this snapshot alone.
    pub w1_sa: f64,
    /// Mean learned reward (the final run's) over this snapshot's pairs.
    pub mean_buffer_f: f64,
    /// `(scale, mean_expert_f - (mean_buffer_f - scale * w1_sa))` per scale.
    pub gaps: Vec<(f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct GapReport {
    /// Mean learned reward over the held-out expert pairs.
    pub mean_expert_f: f64,
    pub rows: Vec<GapRow>,
}

fn buffer_features(buffer: &PriorityBuffer) -> Result<Vec<Vec<f64>>> {
    let mut feats = Vec::new();
    for item in buffer.items() {
        let actions = item
            .traj
            .actions
            .as_ref()
            .ok_or_else(|| Error::contract("buffer snapshot items must carry actions"))?;
        for (s, a) in item.traj.states.iter().zip(actions) {
            let mut x = s.clone();
            x.extend_from_slice(a);
            feats.push(x);
        }
    }
    if feats.is_empty() {
        return Err(Error::precondition("buffer snapshot is empty"));
    }
    Ok(feats)
}

/// Sorted `(iteration, path)` pairs for a run's buffer snapshots.
fn snapshot_files(paths: &RunPaths) -> Result<Vec<(usize, std::path::PathBuf)>> {
    let dir = paths.snapshots_dir();
    let mut out = Vec::new();
    if dir.is_dir() {
        for entry in std::fs::read_dir(&dir)? {
            let path = entry?.path();
            let name = match path.file_name().and_then(|n| n.to_str()) {
                Some(n) => n,
                None => continue,
            };
            if let Some(digits) = name.strip_prefix("buffer_").and_then(|r| r.strip_suffix(".ckpt")) {
                if let Ok(iter) = digits.parse::<usize>() {
                    out.push((iter, path));
                }
            }
        }
    }
    out.sort_by_key(|&(iter, _)| iter);
    if out.is_empty() {
        return Err(Error::precondition(format!(
            "no buffer snapshots under {}; train with --snapshots to record them",
            dir.display()
        )));
    }
    Ok(out)
}

/// For every buffer snapshot of `run_dir`: trains a fresh critic to estimate
/// the distance between the held-out expert state-action pairs and the
/// snapshot's pairs, then scores both sides with the run's final learned
/// reward and reports how far the expert-side mean sits above
/// `buffer mean - scale * distance`.
pub fn reward_gap(run_dir: &Path, expert_sa_path: &Path, cfg: &GapConfig) -> Result<GapReport> {
    if cfg.scales.is_empty() || cfg.rounds == 0 {
        return Err(Error::precondition("gap measurement needs at least one scale and one round"));
    }
    let paths = RunPaths::existing(run_dir);
    let disc = Discriminator::load(&paths.disc_ckpt(), DiscConfig::default())?;
    let (states, actions) = rollout::load_demo_with_actions(expert_sa_path)?;
    let expert_feats: Vec<Vec<f64>> = states
        .iter()
        .zip(&actions)
        .map(|(s, a)| {
            let mut x = s.clone();
            x.extend_from_slice(a);
            x
        })
        .collect();
    if expert_feats.is_empty() {
        return Err(Error::precondition("expert pair file is empty"));
    }
    if expert_feats[0].len() != disc.input_dim() {
        return Err(Error::precondition(format!(
            "expert pairs have {} dims, run's reward expects {}",
            expert_feats[0].len(),
            disc.input_dim()
        )));
    }

    let mean_f = |feats: &[Vec<f64>]| -> Result<f64> {
        let mut sum = 0.0;
        for x in feats {
            sum += disc.f_value(x)?;
        }
        Ok(sum / feats.len() as f64)
    };
    let mean_expert_f = mean_f(&expert_feats)?;

    let mut rows = Vec::new();
    for (iteration, path) in snapshot_files(&paths)? {
        let buffer = PriorityBuffer::load(&path)?;
        let buffer_feats = buffer_features(&buffer)?;
        if buffer_feats[0].len() != disc.input_dim() {
            return Err(Error::contract(format!(
                "snapshot pairs have {} dims, run's reward expects {}",
                buffer_feats[0].len(),
                disc.input_dim()
            )));
        }

        let mut stats = RunningNorm::new(disc.input_dim());
        stats.push_all(&expert_feats);
        stats.push_all(&buffer_feats);
        let mut critic = WassersteinCritic::new(
            disc.input_dim(),
            cfg.hidden,
            cfg.critic,
            derive_seed(cfg.seed, "measure-critic", iteration as u64),
        )?;
        critic.set_input_norm(stats.snapshot())?;
        for round in 0..cfg.rounds {
            critic.update(
                &expert_feats,
                &buffer_feats,
                derive_seed(cfg.seed, "measure-round", (iteration * 10_000 + round) as u64),
            )?;
        }
        let w1_sa = critic.w1_estimate(&expert_feats, &buffer_feats)?;

        let mean_buffer_f = mean_f(&buffer_feats)?;
        let gaps = cfg
            .scales
            .iter()
            .map(|&l| (l, mean_expert_f - (mean_buffer_f - l * w1_sa)))
            .collect();
        rows.push(GapRow { iteration, w1_sa, mean_buffer_f, gaps });
    }
    Ok(GapReport { mean_expert_f, rows })
}
