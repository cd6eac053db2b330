//! Indirect imitation from state-only demonstrations under mismatched
//! dynamics.
//!
//! The learner never sees expert actions and never interacts with the
//! expert's environment. A Wasserstein critic ranks the learner's own
//! trajectories by proximity to the demonstrated state distribution, the
//! best of them are kept in a small priority buffer, and that buffer stands
//! in for the expert when training an adversarial reward. Classic
//! adversarial and behavioral-cloning baselines share the same environments,
//! networks, and rollout machinery for comparison.

pub mod adversary;
pub mod buffer;
pub mod cli;
pub mod envs;
pub mod error;
pub mod nn;
pub mod policy;
pub mod rollout;
pub mod trainers;
pub mod wcritic;

pub use error::{Error, Result};
