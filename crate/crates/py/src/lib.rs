//! Python bindings over the core crate: environments, trained artifacts
//! (policy, critic, learned reward, buffer), demo file IO, and the training
//! and measurement entry points. Everything heavy stays in Rust; these are
//! thin wrappers that translate errors into `ValueError`.

use i2l_core::adversary::{DiscConfig, Discriminator};
use i2l_core::buffer::PriorityBuffer;
use i2l_core::envs::{self, DynamicsConfig, EnvKind, EnvSpec, EnvState};
use i2l_core::policy::GaussianPolicy;
use i2l_core::rollout;
use i2l_core::trainers::{self, measure, Algo, HyperParams, TrainConfig};
use i2l_core::wcritic::{CriticConfig, WassersteinCritic};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::PathBuf;
use std::str::FromStr;

fn err(e: i2l_core::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// A stateful environment handle: `reset(seed)` starts an episode,
/// `step(action)` advances it and reports `(obs, reward, done)`.
#[pyclass]
struct Env {
    spec: EnvSpec,
    dynamics: DynamicsConfig,
    state: Option<EnvState>,
}

#[pymethods]
impl Env {
    #[new]
    #[pyo3(signature = (kind, gravity_scale = 1.0, mass_scale = 1.0, friction_scale = 1.0))]
    fn new(kind: &str, gravity_scale: f64, mass_scale: f64, friction_scale: f64) -> PyResult<Self> {
        let kind = EnvKind::from_str(kind).map_err(err)?;
        let dynamics = DynamicsConfig::new(gravity_scale, mass_scale, friction_scale).map_err(err)?;
        Ok(Env { spec: EnvSpec::new(kind), dynamics, state: None })
    }

    #[getter]
    fn state_dim(&self) -> usize {
        self.spec.state_dim
    }

    #[getter]
    fn action_dim(&self) -> usize {
        self.spec.action_dim
    }

    #[getter]
    fn episode_length(&self) -> usize {
        self.spec.episode_length
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let state = envs::reset(&self.spec, &self.dynamics, &mut rng);
        let obs = envs::observe(&self.spec, &state);
        self.state = Some(state);
        obs
    }

    fn step(&mut self, action: Vec<f64>) -> PyResult<(Vec<f64>, f64, bool)> {
        let state = self
            .state
            .as_ref()
            .ok_or_else(|| PyValueError::new_err("step before reset"))?;
        let out = envs::step(&self.spec, &self.dynamics, state, &action).map_err(err)?;
        let result = (out.obs, out.reward, out.done);
        self.state = Some(out.state);
        Ok(result)
    }
}

/// A trained Gaussian policy loaded from a run checkpoint.
#[pyclass]
struct Policy {
    inner: GaussianPolicy,
}

#[pymethods]
impl Policy {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Policy { inner: GaussianPolicy::load(&path).map_err(err)? })
    }

    /// Deterministic (mean) action.
    fn act(&self, obs: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.mean_action(&obs).map_err(err)
    }

    fn sample(&self, obs: Vec<f64>, seed: u64) -> PyResult<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.inner.sample(&obs, &mut rng).map_err(err)
    }

    fn log_prob(&self, obs: Vec<f64>, action: Vec<f64>) -> PyResult<f64> {
        self.inner.log_prob(&obs, &action).map_err(err)
    }

    fn entropy(&self) -> f64 {
        self.inner.entropy()
    }
}

/// A trained distance critic loaded from a run checkpoint.
#[pyclass]
struct Critic {
    inner: WassersteinCritic,
}

#[pymethods]
impl Critic {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Critic { inner: WassersteinCritic::load(&path, CriticConfig::default()).map_err(err)? })
    }

    fn score(&self, x: Vec<f64>) -> PyResult<f64> {
        self.inner.score(&x).map_err(err)
    }

    /// Mean score difference between two batches.
    fn w1(&self, a: Vec<Vec<f64>>, b: Vec<Vec<f64>>) -> PyResult<f64> {
        self.inner.w1_estimate(&a, &b).map_err(err)
    }
}

/// A trained adversarial reward loaded from a run checkpoint. `f` is the
/// reward head on a state-action (or state-pair) feature vector.
#[pyclass]
struct LearnedReward {
    inner: Discriminator,
}

#[pymethods]
impl LearnedReward {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(LearnedReward { inner: Discriminator::load(&path, DiscConfig::default()).map_err(err)? })
    }

    #[getter]
    fn input_dim(&self) -> usize {
        self.inner.input_dim()
    }

    fn f(&self, x: Vec<f64>) -> PyResult<f64> {
        self.inner.f_value(&x).map_err(err)
    }

    /// Discriminator probability given the policy log-density of the action.
    fn d(&self, x: Vec<f64>, log_pi: f64) -> PyResult<f64> {
        self.inner.d_value(&x, log_pi).map_err(err)
    }
}

/// A priority trajectory buffer loaded from a run checkpoint.
#[pyclass]
struct Buffer {
    inner: PriorityBuffer,
}

#[pymethods]
impl Buffer {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Buffer { inner: PriorityBuffer::load(&path).map_err(err)? })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn capacity(&self) -> usize {
        self.inner.capacity()
    }

    #[getter]
    fn scores(&self) -> Vec<f64> {
        self.inner.items().iter().map(|it| it.score).collect()
    }

    #[getter]
    fn mean_score(&self) -> Option<f64> {
        self.inner.mean_score()
    }

    /// All held states, concatenated across trajectories.
    fn states(&self) -> Vec<Vec<f64>> {
        self.inner.all_states()
    }
}

#[pyfunction]
fn load_demo(path: PathBuf) -> PyResult<Vec<Vec<f64>>> {
    rollout::load_demo(&path).map_err(err)
}

#[pyfunction]
fn save_demo(path: PathBuf, states: Vec<Vec<f64>>) -> PyResult<()> {
    rollout::save_demo(&path, &states).map_err(err)
}

#[pyfunction]
fn load_demo_with_actions(path: PathBuf) -> PyResult<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    rollout::load_demo_with_actions(&path).map_err(err)
}

#[allow(clippy::too_many_arguments)]
fn build_config(
    algo: Algo,
    env: &str,
    run_dir: PathBuf,
    demo: Option<PathBuf>,
    seed: u64,
    steps: usize,
    buffer_capacity: usize,
    gravity_scale: f64,
    mass_scale: f64,
    friction_scale: f64,
    snapshots: bool,
) -> PyResult<TrainConfig> {
    let kind = EnvKind::from_str(env).map_err(err)?;
    let dynamics = DynamicsConfig::new(gravity_scale, mass_scale, friction_scale).map_err(err)?;
    Ok(TrainConfig {
        algo,
        env: kind,
        dynamics,
        seed,
        total_steps: steps,
        buffer_capacity,
        demo_path: demo,
        run_dir,
        snapshots,
        hp: HyperParams::default(),
    })
}

/// Trains an expert on the true reward; returns
/// `(iterations, final_mean_return)`. Demo files land in `run_dir`.
#[pyfunction]
#[pyo3(signature = (env, run_dir, seed = 0, steps = 300_000, gravity_scale = 1.0, mass_scale = 1.0, friction_scale = 1.0))]
fn train_expert(
    env: &str,
    run_dir: PathBuf,
    seed: u64,
    steps: usize,
    gravity_scale: f64,
    mass_scale: f64,
    friction_scale: f64,
) -> PyResult<(usize, f64)> {
    let cfg = build_config(
        Algo::I2l,
        env,
        run_dir,
        None,
        seed,
        steps,
        1,
        gravity_scale,
        mass_scale,
        friction_scale,
        false,
    )?;
    let out = trainers::expert::train(&cfg).map_err(err)?;
    Ok((out.iterations, out.final_mean_return))
}

/// Trains an imitation policy from a demo file; returns
/// `(iterations, final_mean_return)`.
#[pyfunction]
#[pyo3(signature = (algo, env, demo, run_dir, seed = 0, steps = 300_000, buffer_capacity = 5, gravity_scale = 1.0, mass_scale = 1.0, friction_scale = 1.0, snapshots = false))]
#[allow(clippy::too_many_arguments)]
fn train_imitate(
    algo: &str,
    env: &str,
    demo: PathBuf,
    run_dir: PathBuf,
    seed: u64,
    steps: usize,
    buffer_capacity: usize,
    gravity_scale: f64,
    mass_scale: f64,
    friction_scale: f64,
    snapshots: bool,
) -> PyResult<(usize, f64)> {
    let algo = Algo::from_str(algo).map_err(err)?;
    let cfg = build_config(
        algo,
        env,
        run_dir,
        Some(demo),
        seed,
        steps,
        buffer_capacity,
        gravity_scale,
        mass_scale,
        friction_scale,
        snapshots,
    )?;
    let out = match algo {
        Algo::I2l => trainers::i2l::train(&cfg).map_err(err)?,
        Algo::Bco => trainers::bco::train(&cfg).map_err(err)?,
        _ => trainers::baselines::train(&cfg).map_err(err)?,
    };
    Ok((out.iterations, out.final_mean_return))
}

/// Critic-estimate trend of a finished run:
/// `(iterations, initial_mean, final_mean, decreased)`.
#[pyfunction]
#[pyo3(signature = (run_dir, window = 10))]
fn w1_trend(run_dir: PathBuf, window: usize) -> PyResult<(usize, f64, f64, bool)> {
    let t = measure::w1_trend(&run_dir, window).map_err(err)?;
    Ok((t.iterations, t.initial_mean, t.final_mean, t.decreased()))
}

/// Reward-transfer gap per buffer snapshot:
/// `(mean_expert_f, [(iteration, w1_sa, [(scale, gap)])])`.
#[pyfunction]
#[pyo3(signature = (run_dir, oracle, scales = vec![0.5, 1.0, 1.5], rounds = 50, seed = 0))]
fn reward_gap(
    run_dir: PathBuf,
    oracle: PathBuf,
    scales: Vec<f64>,
    rounds: usize,
    seed: u64,
) -> PyResult<(f64, Vec<(usize, f64, Vec<(f64, f64)>)>)> {
    let cfg = measure::GapConfig { scales, rounds, seed, ..measure::GapConfig::default() };
    let report = measure::reward_gap(&run_dir, &oracle, &cfg).map_err(err)?;
    let rows = report
        .rows
        .into_iter()
        .map(|r| (r.iteration, r.w1_sa, r.gaps))
        .collect();
    Ok((report.mean_expert_f, rows))
}

#[pymodule]
fn i2l_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Env>()?;
    m.add_class::<Policy>()?;
    m.add_class::<Critic>()?;
    m.add_class::<LearnedReward>()?;
    m.add_class::<Buffer>()?;
    m.add_function(wrap_pyfunction!(load_demo, m)?)?;
    m.add_function(wrap_pyfunction!(save_demo, m)?)?;
    m.add_function(wrap_pyfunction!(load_demo_with_actions, m)?)?;
    m.add_function(wrap_pyfunction!(train_expert, m)?)?;
    m.add_function(wrap_pyfunction!(train_imitate, m)?)?;
    m.add_function(wrap_pyfunction!(w1_trend, m)?)?;
    m.add_function(wrap_pyfunction!(reward_gap, m)?)?;
    Ok(())
}
