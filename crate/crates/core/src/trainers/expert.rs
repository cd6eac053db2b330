//! Reward-supervised training of the demonstrator. The resulting run is the
//! source of every demonstration file: the best deterministic evaluation
//! episodes are concatenated into a state-only demo, with an
//! action-augmented twin for the baselines that consume actions.

use super::*;
use crate::policy::{ppo_update, PpoState, ValueFn};
use crate::rollout::{self, RolloutBatch};

pub fn train(cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.dynamics.validate()?;
    let spec = EnvSpec::new(cfg.env);
    let n_iters = cfg.n_iterations()?;
    let paths = RunPaths::create(&cfg.run_dir)?;
    write_manifest(&paths, cfg, "expert")?;
    let mut metrics = MetricsWriter::create(&paths.metrics())?;

    let mut policy = GaussianPolicy::new(
        spec.state_dim,
        spec.action_dim,
        cfg.hp.hidden,
        derive_seed(cfg.seed, "policy-init", 0),
    )?;
    let mut vf = ValueFn::new(spec.state_dim, cfg.hp.hidden, derive_seed(cfg.seed, "value-init", 0))?;
    let mut ppo = PpoState::new(&policy, &vf, cfg.hp.ppo.lr);

    let mut steps = 0;
    for iter in 1..=n_iters {
        let mut episodes = rollout::collect(
            &policy,
            &vf,
            &spec,
            &cfg.dynamics,
            cfg.hp.n_steps_per_iter,
            derive_seed(cfg.seed, "collect", iter as u64),
        )?;
        steps += episodes.iter().map(|e| e.traj.len()).sum::<usize>();
        let mean_return = episodes
            .iter()
            .map(|e| e.traj.env_rewards.as_ref().expect("collected episodes carry env rewards").iter().sum::<f64>())
            .sum::<f64>()
            / episodes.len() as f64;
        for ep in &mut episodes {
            ep.traj.rewards = ep.traj.env_rewards.clone();
        }
        let batch = RolloutBatch::from_episodes(&episodes, cfg.hp.gamma, cfg.hp.lam)?;
        ppo_update(&mut policy, &mut vf, &mut ppo, &batch, &cfg.hp.ppo, derive_seed(cfg.seed, "ppo", iter as u64))?;
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

    let (final_mean, eval_trajs) = final_evaluation(
        &paths,
        &policy,
        &spec,
        &cfg.dynamics,
        cfg.hp.eval_episodes,
        derive_seed(cfg.seed, "eval", 0),
    )?;
    let (states, actions) = extract_demo(&eval_trajs, 5)?;
    rollout::save_demo(&paths.demo(), &states)?;
    rollout::save_demo_with_actions(&paths.demo_with_actions(), &states, &actions)?;

    stamp_finished(&paths)?;
    Ok(TrainOutcome { iterations: n_iters, final_mean_return: final_mean })
}

/// Concatenates the `keep` highest-return trajectories, best first. With
/// fixed-length episodes the output length is `keep * episode_length`, and
/// episode boundaries in the flat file are recoverable from that length.
pub fn extract_demo(trajs: &[Trajectory], keep: usize) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    if trajs.len() < keep {
        return Err(Error::precondition(format!(
            "cannot keep {keep} of {} evaluation episodes",
            trajs.len()
        )));
    }
    let mut ranked: Vec<(f64, usize)> = trajs
        .iter()
        .enumerate()
        .map(|(i, t)| crate::envs::episode_return(t).map(|r| (r, i)))
        .collect::<Result<_>>()?;
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut states = Vec::new();
    let mut actions = Vec::new();
    for &(_, i) in ranked.iter().take(keep) {
        let t = &trajs[i];
        let acts = t.actions.as_ref().ok_or_else(|| Error::precondition("evaluation episode lacks actions"))?;
        states.extend(t.states.iter().cloned());
        actions.extend(acts.iter().cloned());
    }
    Ok((states, actions))
}
