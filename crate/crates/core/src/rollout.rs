//! Trajectory containers, seeded on-policy collection, generalized
//! advantage estimation, and the on-disk demonstration format.
//!
//! Collection only gathers complete episodes: a step budget that is not a
//! multiple of the episode length is truncated at the last whole episode.
//! Training rewards are deliberately left unset by [`collect`]; each trainer
//! decides what reward signal fills them, while the environment's true
//! rewards ride along separately for evaluation.

use crate::envs::{self, DynamicsConfig, EnvSpec};
use crate::error::{Error, Result};
use crate::policy::{GaussianPolicy, ValueFn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fmt::Write as _;
use std::path::Path;

/// One episode's worth of observations, with optional per-step annotations.
/// `rewards` holds whatever signal training optimizes; `env_rewards` holds
/// the environment's true rewards and is never used for learning.
#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub states: Vec<Vec<f64>>,
    pub actions: Option<Vec<Vec<f64>>>,
    pub rewards: Option<Vec<f64>>,
    pub env_rewards: Option<Vec<f64>>,
    /// Observation after the final action, kept for value bootstrapping at
    /// timeout boundaries.
    pub final_state: Option<Vec<f64>>,
}

impl Trajectory {
    pub fn from_states(states: Vec<Vec<f64>>) -> Self {
        Trajectory { states, ..Default::default() }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(actions) = &self.actions {
            if actions.len() != self.states.len() {
                return Err(Error::contract(format!(
                    "{} actions for {} states",
                    actions.len(),
                    self.states.len()
                )));
            }
        }
        for (name, seq) in [("rewards", &self.rewards), ("env_rewards", &self.env_rewards)] {
            if let Some(seq) = seq {
                if seq.len() != self.states.len() {
                    return Err(Error::contract(format!(
                        "{} {name} for {} states",
                        seq.len(),
                        self.states.len()
                    )));
                }
            }
        }
        Ok(())
    }
}

/// A trajectory plus the per-step quantities the policy update needs.
#[derive(Debug, Clone)]
pub struct CollectedEpisode {
    pub traj: Trajectory,
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
    /// Value of the state reached at timeout, used as the GAE tail.
    pub bootstrap_value: f64,
}

/// Runs the stochastic policy for `n_steps / episode_length` complete
/// episodes. Requires a budget of at least one episode.
pub fn collect(
    policy: &GaussianPolicy,
    vf: &ValueFn,
    spec: &EnvSpec,
    cfg: &DynamicsConfig,
    n_steps: usize,
    seed: u64,
) -> Result<Vec<CollectedEpisode>> {
    if n_steps < spec.episode_length {
        return Err(Error::precondition(format!(
            "budget of {n_steps} steps cannot fit an episode of {}",
            spec.episode_length
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_episodes = n_steps / spec.episode_length;
    let mut episodes = Vec::with_capacity(n_episodes);

    for _ in 0..n_episodes {
        let mut state = envs::reset(spec, cfg, &mut rng);
        let mut obs = envs::observe(spec, &state);
        let mut traj = Trajectory::default();
        let mut env_rewards = Vec::with_capacity(spec.episode_length);
        let mut actions = Vec::with_capacity(spec.episode_length);
        let mut log_probs = Vec::with_capacity(spec.episode_length);
        let mut values = Vec::with_capacity(spec.episode_length);

        loop {
            let action = policy.sample(&obs, &mut rng)?;
            log_probs.push(policy.log_prob(&obs, &action)?);
            values.push(vf.value(&obs)?);
            traj.states.push(obs);

            let out = envs::step(spec, cfg, &state, &action)?;
            actions.push(action);
            env_rewards.push(out.reward);
            state = out.state;
            obs = out.obs;
            if out.done {
                break;
            }
        }
        let bootstrap_value = vf.value(&obs)?;
        traj.actions = Some(actions);
        traj.env_rewards = Some(env_rewards);
        traj.final_state = Some(obs);
        episodes.push(CollectedEpisode { traj, log_probs, values, bootstrap_value });
    }
    Ok(episodes)
}

/// Deterministic-mode episodes (mean action, no sampling noise beyond the
/// seeded initial states). True rewards land in both reward slots so the
/// result feeds `episode_return` directly.
pub fn evaluate(
    policy: &GaussianPolicy,
    spec: &EnvSpec,
    cfg: &DynamicsConfig,
    episodes: usize,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let mut state = envs::reset(spec, cfg, &mut rng);
        let mut obs = envs::observe(spec, &state);
        let mut traj = Trajectory::default();
        let mut rewards = Vec::with_capacity(spec.episode_length);
        let mut actions = Vec::with_capacity(spec.episode_length);
        loop {
            let action = policy.mean_action(&obs)?;
            traj.states.push(obs);
            let step = envs::step(spec, cfg, &state, &action)?;
            actions.push(action);
            rewards.push(step.reward);
            state = step.state;
            obs = step.obs;
            if step.done {
                break;
            }
        }
        traj.actions = Some(actions);
        traj.rewards = Some(rewards.clone());
        traj.env_rewards = Some(rewards);
        traj.final_state = Some(obs);
        out.push(traj);
    }
    Ok(out)
}

/// Generalized advantage estimation over one episode.
///
/// `last_value` is the bootstrap for the state after the final step: the
/// critic's estimate at a timeout, or zero at a true terminal. Returns
/// `(advantages, return_targets)` with `return_targets = advantages + values`.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    last_value: f64,
    gamma: f64,
    lam: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if rewards.len() != values.len() {
        return Err(Error::contract(format!(
            "{} rewards vs {} values",
            rewards.len(),
            values.len()
        )));
    }
    if rewards.iter().chain(values).chain([&last_value]).any(|v| !v.is_finite()) {
        return Err(Error::numeric("non-finite input to gae"));
    }
    let t_max = rewards.len();
    let mut advantages = vec![0.0; t_max];
    let mut acc = 0.0;
    for t in (0..t_max).rev() {
        let next_value = if t + 1 < t_max { values[t + 1] } else { last_value };
        let delta = rewards[t] + gamma * next_value - values[t];
        acc = delta + gamma * lam * acc;
        advantages[t] = acc;
    }
    let returns = advantages.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((advantages, returns))
}

/// Flattened per-step records for a policy update. `advantages` are raw;
/// normalization, when enabled, happens inside the update itself.
#[derive(Debug, Clone, Default)]
pub struct RolloutBatch {
    pub obs: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }

    pub fn check_consistent(&self) -> Result<()> {
        let n = self.obs.len();
        if [self.actions.len(), self.log_probs.len(), self.values.len(), self.advantages.len(), self.returns.len()]
            .iter()
            .any(|&l| l != n)
        {
            return Err(Error::contract("rollout batch fields disagree on length"));
        }
        Ok(())
    }

    /// Builds the update batch from episodes whose training rewards have
    /// been assigned.
    pub fn from_episodes(episodes: &[CollectedEpisode], gamma: f64, lam: f64) -> Result<Self> {
        let mut batch = RolloutBatch::default();
        for ep in episodes {
            let rewards = ep
                .traj
                .rewards
                .as_ref()
                .ok_or_else(|| Error::precondition("episode has no training rewards assigned"))?;
            let (adv, ret) = compute_gae(rewards, &ep.values, ep.bootstrap_value, gamma, lam)?;
            let actions = ep
                .traj
                .actions
                .as_ref()
                .ok_or_else(|| Error::contract("collected episode lost its actions"))?;
            batch.obs.extend(ep.traj.states.iter().cloned());
            batch.actions.extend(actions.iter().cloned());
            batch.log_probs.extend_from_slice(&ep.log_probs);
            batch.values.extend_from_slice(&ep.values);
            batch.advantages.extend_from_slice(&adv);
            batch.returns.extend_from_slice(&ret);
        }
        Ok(batch)
    }
}

/// Indices `(i, i+1)` of consecutive states that lie within the same
/// fixed-length episode; pairs spanning an episode boundary are excluded.
pub fn consecutive_pairs(n_states: usize, episode_length: usize) -> Vec<(usize, usize)> {
    (0..n_states.saturating_sub(1))
        .filter(|i| (i + 1) % episode_length != 0)
        .map(|i| (i, i + 1))
        .collect()
}

fn write_states_line(out: &mut String, values: &[f64]) {
    let mut first = true;
    for v in values {
        if !first {
            out.push(' ');
        }
        let _ = write!(out, "{v}");
        first = false;
    }
    out.push('\n');
}

/// State-only demonstration file: `demo v1 <state_dim> <n_states>` followed
/// by one whitespace-separated state per line. Round-trips exactly.
pub fn save_demo(path: &Path, states: &[Vec<f64>]) -> Result<()> {
    if states.is_empty() {
        return Err(Error::contract("refusing to write an empty demo"));
    }
    let dim = states[0].len();
    if states.iter().any(|s| s.len() != dim) {
        return Err(Error::contract("demo states disagree on dimension"));
    }
    let mut out = format!("demo v1 {dim} {}\n", states.len());
    for s in states {
        write_states_line(&mut out, s);
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn load_demo(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::parse("empty demo file"))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 4 || fields[0] != "demo" || fields[1] != "v1" {
        return Err(Error::parse(format!("bad demo header `{header}`")));
    }
    let dim: usize = fields[2].parse().map_err(|_| Error::parse("bad state_dim"))?;
    let n: usize = fields[3].parse().map_err(|_| Error::parse("bad n_states"))?;
    let states = parse_rows(lines, dim, n, "state")?;
    Ok(states)
}

/// Action-augmented variant for algorithms that consume expert actions:
/// `demo-sa v1 <state_dim> <action_dim> <n_states>`, each line one state
/// followed by its action.
pub fn save_demo_with_actions(path: &Path, states: &[Vec<f64>], actions: &[Vec<f64>]) -> Result<()> {
    if states.is_empty() || states.len() != actions.len() {
        return Err(Error::contract(format!(
            "{} states vs {} actions",
            states.len(),
            actions.len()
        )));
    }
    let sdim = states[0].len();
    let adim = actions[0].len();
    if states.iter().any(|s| s.len() != sdim) || actions.iter().any(|a| a.len() != adim) {
        return Err(Error::contract("demo rows disagree on dimension"));
    }
    let mut out = format!("demo-sa v1 {sdim} {adim} {}\n", states.len());
    for (s, a) in states.iter().zip(actions) {
        let mut row = s.clone();
        row.extend_from_slice(a);
        write_states_line(&mut out, &row);
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn load_demo_with_actions(path: &Path) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::parse("empty demo file"))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 5 || fields[0] != "demo-sa" || fields[1] != "v1" {
        return Err(Error::parse(format!("bad demo-sa header `{header}`")));
    }
    let sdim: usize = fields[2].parse().map_err(|_| Error::parse("bad state_dim"))?;
    let adim: usize = fields[3].parse().map_err(|_| Error::parse("bad action_dim"))?;
    let n: usize = fields[4].parse().map_err(|_| Error::parse("bad n_states"))?;
    let rows = parse_rows(lines, sdim + adim, n, "state-action row")?;
    let mut states = Vec::with_capacity(n);
    let mut actions = Vec::with_capacity(n);
    for mut row in rows {
        let action = row.split_off(sdim);
        states.push(row);
        actions.push(action);
    }
    Ok((states, actions))
}

fn parse_rows<'a>(
    lines: impl Iterator<Item = &'a str>,
    dim: usize,
    n: usize,
    what: &str,
) -> Result<Vec<Vec<f64>>> {
    let mut rows = Vec::with_capacity(n);
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| Error::parse(format!("bad value `{t}`"))))
            .collect::<Result<_>>()?;
        if row.len() != dim {
            return Err(Error::parse(format!(
                "{what} {} has {} values, expected {dim}",
                rows.len(),
                row.len()
            )));
        }
        rows.push(row);
    }
    if rows.len() != n {
        return Err(Error::parse(format!("header declares {n} rows, found {}", rows.len())));
    }
    Ok(rows)
}
