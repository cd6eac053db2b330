//! Two small continuous-control environments with adjustable dynamics.
//!
//! Transitions are deterministic given (state, action); randomness enters
//! only through the seeded initial-state distribution. [`DynamicsConfig`]
//! scales gravity, inertia, and damping so that a demonstrator's environment
//! and an imitator's environment can disagree on physics while sharing the
//! same observation and action interfaces.
//!
//! `pointmass2d`: a unit mass on a bounded plane, pulled downward by
//! gravity, driven by a 2-d force, slowed by linear drag. Reward is the
//! negative distance from the post-step position to a fixed goal.
//!
//! `pendulum`: torque-limited swing-up. The state is (angle from upright,
//! angular velocity); the observation embeds the angle as (cos, sin) to
//! avoid a wrap discontinuity. Reward penalizes angle, speed, and torque.

use crate::error::{Error, Result};
use crate::rollout::Trajectory;
use rand::Rng;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

/// Multipliers on the base physics. (1, 1, 1) reproduces the unscaled
/// dynamics exactly, bit for bit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DynamicsConfig {
    pub gravity_scale: f64,
    pub mass_scale: f64,
    pub friction_scale: f64,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        DynamicsConfig { gravity_scale: 1.0, mass_scale: 1.0, friction_scale: 1.0 }
    }
}

impl DynamicsConfig {
    pub fn new(gravity_scale: f64, mass_scale: f64, friction_scale: f64) -> Result<Self> {
        let cfg = DynamicsConfig { gravity_scale, mass_scale, friction_scale };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Entry-point validation: every scale strictly positive and finite.
    /// `step` itself stays total over any finite config so that edge cases
    /// (for instance gravity switched off) remain expressible in tests.
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("gravity_scale", self.gravity_scale),
            ("mass_scale", self.mass_scale),
            ("friction_scale", self.friction_scale),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::contract(format!("{name} must be strictly positive, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvKind {
    PointMass2d,
    Pendulum,
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EnvKind::PointMass2d => "pointmass2d",
            EnvKind::Pendulum => "pendulum",
        })
    }
}

impl FromStr for EnvKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pointmass2d" => Ok(EnvKind::PointMass2d),
            "pendulum" => Ok(EnvKind::Pendulum),
            other => Err(Error::contract(format!(
                "unknown env `{other}` (valid: pointmass2d, pendulum)"
            ))),
        }
    }
}

/// Static facts about an environment: observation width (`state_dim`),
/// action width, fixed episode length, and integration step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvSpec {
    pub kind: EnvKind,
    pub state_dim: usize,
    pub action_dim: usize,
    pub episode_length: usize,
    pub dt: f64,
}

impl EnvSpec {
    pub fn new(kind: EnvKind) -> Self {
        match kind {
            EnvKind::PointMass2d => EnvSpec { kind, state_dim: 4, action_dim: 2, episode_length: 200, dt: 0.05 },
            EnvKind::Pendulum => EnvSpec { kind, state_dim: 3, action_dim: 1, episode_length: 200, dt: 0.05 },
        }
    }
}

/// Raw simulator coordinates plus the step counter. For the point mass the
/// coordinates are `[px, py, vx, vy]` (and equal the observation); for the
/// pendulum they are `[theta, theta_dot]` with theta measured from upright.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub coords: Vec<f64>,
    pub t: usize,
}

pub struct StepOutcome {
    pub state: EnvState,
    pub obs: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

// Point-mass base physics.
const PM_BASE_GRAVITY: f64 = 1.0;
const PM_BASE_FRICTION: f64 = 0.5;
const PM_BASE_MASS: f64 = 1.0;
const PM_POS_LIMIT: f64 = 5.0;
const PM_INIT_LIMIT: f64 = 4.0;
const PM_GOAL: [f64; 2] = [3.0, 3.0];

// Pendulum base physics.
const PEND_GRAVITY: f64 = 10.0;
const PEND_LENGTH: f64 = 1.0;
const PEND_MASS: f64 = 1.0;
const PEND_DAMPING: f64 = 0.1;
const PEND_MAX_SPEED: f64 = 8.0;
const PEND_TORQUE_SCALE: f64 = 2.0;

/// Wraps an angle into [-pi, pi).
pub fn wrap_angle(theta: f64) -> f64 {
    (theta + PI).rem_euclid(2.0 * PI) - PI
}

pub fn reset(spec: &EnvSpec, _cfg: &DynamicsConfig, rng: &mut impl Rng) -> EnvState {
    let coords = match spec.kind {
        EnvKind::PointMass2d => {
            let px = rng.gen_range(-PM_INIT_LIMIT..PM_INIT_LIMIT);
            let py = rng.gen_range(-PM_INIT_LIMIT..PM_INIT_LIMIT);
            vec![px, py, 0.0, 0.0]
        }
        EnvKind::Pendulum => {
            let theta = rng.gen_range(-PI..PI);
            let theta_dot = rng.gen_range(-1.0..1.0);
            vec![theta, theta_dot]
        }
    };
    EnvState { coords, t: 0 }
}

pub fn observe(spec: &EnvSpec, state: &EnvState) -> Vec<f64> {
    match spec.kind {
        EnvKind::PointMass2d => state.coords.clone(),
        EnvKind::Pendulum => vec![state.coords[0].cos(), state.coords[0].sin(), state.coords[1]],
    }
}

/// Semi-implicit Euler step. Pure: identical inputs give identical outputs,
/// and the caller's state is never mutated. Actions are clamped to
/// [-1, 1] per dimension before they touch the physics.
pub fn step(spec: &EnvSpec, cfg: &DynamicsConfig, state: &EnvState, action: &[f64]) -> Result<StepOutcome> {
    if action.len() != spec.action_dim {
        return Err(Error::contract(format!(
            "action has {} dims, {} expects {}",
            action.len(),
            spec.kind,
            spec.action_dim
        )));
    }
    if action.iter().any(|a| !a.is_finite()) {
        return Err(Error::numeric("non-finite action"));
    }

    let (coords, reward) = match spec.kind {
        EnvKind::PointMass2d => {
            let (px, py, vx, vy) = (state.coords[0], state.coords[1], state.coords[2], state.coords[3]);
            let ax = action[0].clamp(-1.0, 1.0);
            let ay = action[1].clamp(-1.0, 1.0);
            let mass = cfg.mass_scale * PM_BASE_MASS;
            let drag = cfg.friction_scale * PM_BASE_FRICTION;
            let vx2 = vx + spec.dt * ((ax - drag * vx) / mass + 0.0);
            let vy2 = vy + spec.dt * ((ay - drag * vy) / mass + (-PM_BASE_GRAVITY * cfg.gravity_scale));
            let px2 = (px + spec.dt * vx2).clamp(-PM_POS_LIMIT, PM_POS_LIMIT);
            let py2 = (py + spec.dt * vy2).clamp(-PM_POS_LIMIT, PM_POS_LIMIT);
            let dist = ((px2 - PM_GOAL[0]).powi(2) + (py2 - PM_GOAL[1]).powi(2)).sqrt();
            (vec![px2, py2, vx2, vy2], -dist)
        }
        EnvKind::Pendulum => {
            let (theta, theta_dot) = (state.coords[0], state.coords[1]);
            let torque = PEND_TORQUE_SCALE * action[0].clamp(-1.0, 1.0);
            // Cost is charged on the pre-step state and the applied torque.
            let reward = -(wrap_angle(theta).powi(2) + 0.1 * theta_dot * theta_dot + 0.001 * torque * torque);
            let accel = cfg.gravity_scale * (3.0 * PEND_GRAVITY / (2.0 * PEND_LENGTH)) * theta.sin()
                - cfg.friction_scale * PEND_DAMPING * theta_dot
                + 3.0 * torque / (cfg.mass_scale * PEND_MASS * PEND_LENGTH * PEND_LENGTH);
            let theta_dot2 = (theta_dot + spec.dt * accel).clamp(-PEND_MAX_SPEED, PEND_MAX_SPEED);
            let theta2 = theta + spec.dt * theta_dot2;
            (vec![theta2, theta_dot2], reward)
        }
    };

    let state = EnvState { coords, t: state.t + 1 };
    let obs = observe(spec, &state);
    let done = state.t >= spec.episode_length;
    Ok(StepOutcome { state, obs, reward, done })
}

/// Undiscounted sum of the trajectory's rewards.
pub fn episode_return(traj: &Trajectory) -> Result<f64> {
    let rewards = traj
        .rewards
        .as_ref()
        .ok_or_else(|| Error::precondition("trajectory carries no rewards"))?;
    Ok(rewards.iter().sum())
}
