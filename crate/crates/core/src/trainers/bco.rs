//! Behavioral cloning from observation. A learned inverse-dynamics model
//! fills in the actions the demo never had, and the policy mean is
//! regressed onto those inferred actions.
//!
//! The first iteration collects one standard batch with the untrained
//! policy; every later iteration collects `alpha` times as much with the
//! current clone, refines the inverse model on that fresh data, re-infers
//! the demo actions, and re-clones. The policy's exploration noise comes from
//! its unchanged Gaussian head; only the mean network is cloned.

use super::*;
use crate::nn::{Network, Optimizer};
use crate::policy::ValueFn;
use crate::rollout;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const MODEL_LR: f64 = 3e-4;
const MODEL_EPOCHS: usize = 5;
const CLONE_LR: f64 = 3e-4;
const CLONE_EPOCHS: usize = 10;
const MINIBATCH: usize = 128;

/// Mean squared error of `net` against vector targets, summed over output
/// dimensions and averaged over the batch, with its exact gradient.
pub fn mse_loss_grads(net: &Network, xs: &[Vec<f64>], ys: &[Vec<f64>]) -> Result<(f64, Vec<f64>)> {
    if xs.is_empty() || xs.len() != ys.len() {
        return Err(Error::contract(format!("{} inputs vs {} targets", xs.len(), ys.len())));
    }
    let mut grads = vec![0.0; net.n_params()];
    let mut loss = 0.0;
    let w = 1.0 / xs.len() as f64;
    for (x, y) in xs.iter().zip(ys) {
        let trace = net.traced_forward(x)?;
        let out = trace.output();
        if out.len() != y.len() {
            return Err(Error::contract(format!("target has {} dims, net outputs {}", y.len(), out.len())));
        }
        let mut d = Vec::with_capacity(out.len());
        for (o, t) in out.iter().zip(y) {
            loss += (o - t) * (o - t) * w;
            d.push(2.0 * (o - t) * w);
        }
        net.backward(&trace, &d, &mut grads);
    }
    Ok((loss, grads))
}

/// Minibatched regression epochs over a fixed dataset. Returns the mean
/// minibatch loss of the last epoch.
pub fn fit_mse(
    net: &mut Network,
    opt: &mut Optimizer,
    xs: &[Vec<f64>],
    ys: &[Vec<f64>],
    epochs: usize,
    minibatch: usize,
    seed: u64,
) -> Result<f64> {
    if xs.is_empty() || xs.len() != ys.len() {
        return Err(Error::contract(format!("{} inputs vs {} targets", xs.len(), ys.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let mut last_epoch_loss = 0.0;
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(minibatch.max(1)) {
            let bx: Vec<Vec<f64>> = chunk.iter().map(|&i| xs[i].clone()).collect();
            let by: Vec<Vec<f64>> = chunk.iter().map(|&i| ys[i].clone()).collect();
            let (loss, grads) = mse_loss_grads(net, &bx, &by)?;
            opt.step(net.params_mut(), &grads)?;
            epoch_loss += loss;
            batches += 1;
        }
        last_epoch_loss = epoch_loss / batches as f64;
    }
    Ok(last_epoch_loss)
}

pub fn train(cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.dynamics.validate()?;
    let spec = EnvSpec::new(cfg.env);
    let demo_path = cfg
        .demo_path
        .as_ref()
        .ok_or_else(|| Error::precondition("bco needs a state-only demo file"))?;
    let demo_states = load_checked_demo(demo_path, &spec)?;
    let demo_pairs = rollout::consecutive_pairs(demo_states.len(), spec.episode_length);
    if demo_pairs.is_empty() {
        return Err(Error::precondition("demo has no within-episode transitions"));
    }

    if cfg.total_steps < cfg.hp.n_steps_per_iter {
        return Err(Error::precondition(format!(
            "{} total steps cannot fit one {}-step iteration",
            cfg.total_steps, cfg.hp.n_steps_per_iter
        )));
    }

    let paths = RunPaths::create(&cfg.run_dir)?;
    write_manifest(&paths, cfg, "imitate")?;
    let mut metrics = MetricsWriter::create(&paths.metrics())?;

    let mut policy = GaussianPolicy::new(
        spec.state_dim,
        spec.action_dim,
        cfg.hp.hidden,
        derive_seed(cfg.seed, "policy-init", 0),
    )?;
    // Collection requires a value function; its outputs are never used.
    let vf = ValueFn::new(spec.state_dim, cfg.hp.hidden, derive_seed(cfg.seed, "value-init", 0))?;
    let mut model = Network::xavier(
        &[2 * spec.state_dim, cfg.hp.hidden, cfg.hp.hidden, spec.action_dim],
        crate::nn::Activation::Tanh,
        crate::nn::Activation::Identity,
        derive_seed(cfg.seed, "inverse-init", 0),
    )?;
    let mut model_opt = Optimizer::adam(MODEL_LR, model.n_params());
    let mut clone_opt = Optimizer::adam(CLONE_LR, policy.mean_net.n_params());

    // Demo-side inputs for inference and the clone's regression states.
    let pair_inputs: Vec<Vec<f64>> = demo_pairs
        .iter()
        .map(|&(i, j)| {
            let mut x = demo_states[i].clone();
            x.extend_from_slice(&demo_states[j]);
            x
        })
        .collect();
    let clone_states: Vec<Vec<f64>> = demo_pairs.iter().map(|&(i, _)| demo_states[i].clone()).collect();

    let post_steps = ((cfg.hp.bco_alpha * cfg.hp.n_steps_per_iter as f64).round() as usize).max(spec.episode_length);
    let n_iterations = 1 + (cfg.total_steps - cfg.hp.n_steps_per_iter) / post_steps;
    let mut steps = 0usize;
    for iter in 1..=n_iterations {
        let budget = if iter == 1 { cfg.hp.n_steps_per_iter } else { post_steps };
        let episodes = rollout::collect(
            &policy,
            &vf,
            &spec,
            &cfg.dynamics,
            budget,
            derive_seed(cfg.seed, "collect", iter as u64),
        )?;
        steps += episodes.iter().map(|e| e.traj.len()).sum::<usize>();
        let mean_return = episodes
            .iter()
            .map(|e| e.traj.env_rewards.as_ref().expect("collected episodes carry env rewards").iter().sum::<f64>())
            .sum::<f64>()
            / episodes.len() as f64;

        // Refine the inverse model on this iteration's own transitions.
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for ep in &episodes {
            let actions = ep.traj.actions.as_ref().expect("collected episodes carry actions");
            let final_state = ep.traj.final_state.as_ref().expect("collected episodes record the final state");
            for t in 0..ep.traj.len() {
                let mut x = ep.traj.states[t].clone();
                let next = if t + 1 < ep.traj.len() { &ep.traj.states[t + 1] } else { final_state };
                x.extend_from_slice(next);
                xs.push(x);
                ys.push(actions[t].clone());
            }
        }
        fit_mse(&mut model, &mut model_opt, &xs, &ys, MODEL_EPOCHS, MINIBATCH, derive_seed(cfg.seed, "inverse", iter as u64))?;

        // Infer what the demonstrator must have done, then clone it.
        let inferred: Vec<Vec<f64>> = pair_inputs.iter().map(|x| model.forward(x)).collect::<Result<_>>()?;
        fit_mse(
            &mut policy.mean_net,
            &mut clone_opt,
            &clone_states,
            &inferred,
            CLONE_EPOCHS,
            MINIBATCH,
            derive_seed(cfg.seed, "clone", iter as u64),
        )?;

        metrics.append(&MetricsRow {
            iter,
            steps,
            mean_return,
            entropy: policy.entropy(),
            ..Default::default()
        })?;
    }
    metrics.flush()?;

    policy.save(&paths.policy_ckpt())?;
    let (final_mean, _) = final_evaluation(
        &paths,
        &policy,
        &spec,
        &cfg.dynamics,
        cfg.hp.eval_episodes,
        derive_seed(cfg.seed, "eval", 0),
    )?;
    stamp_finished(&paths)?;
    Ok(TrainOutcome { iterations: n_iterations, final_mean_return: final_mean })
}
