//! Indirect imitation from state-only demonstrations.
//!
//! The demonstrations carry no actions and may come from different
//! transition dynamics, so nothing in them can serve directly as a positive
//! example for a state-action discriminator. Instead, each iteration ranks
//! the learner's own fresh trajectories by a Wasserstein critic trained to
//! tell demonstration states from buffered states, keeps the
//! highest-scoring trajectories in a small priority buffer, and lets that
//! buffer act as the expert side of an adversarial reward. The per-iteration
//! order is fixed and observable through the hook: collect, critic update
//! (from the second iteration on), scoring, buffer rescore, buffer offers,
//! discriminator update, reward assignment, policy update.

use super::*;
use crate::adversary::Discriminator;
use crate::buffer::PriorityBuffer;
use crate::policy::{ppo_update, PpoState, ValueFn};
use crate::rollout::{self, CollectedEpisode, RolloutBatch};
use crate::wcritic::WassersteinCritic;

pub fn train(cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with_hook(cfg, &mut |_, _| {})
}

pub fn train_with_hook(cfg: &TrainConfig, hook: TrainHook<'_>) -> Result<TrainOutcome> {
    cfg.dynamics.validate()?;
    let spec = EnvSpec::new(cfg.env);
    let n_iters = cfg.n_iterations()?;
    let demo_path = cfg
        .demo_path
        .as_ref()
        .ok_or_else(|| Error::precondition("i2l needs a state-only demo file"))?;
    let demo_states = load_checked_demo(demo_path, &spec)?;

    let paths = RunPaths::create(&cfg.run_dir)?;
    write_manifest(&paths, cfg, "imitate")?;
    let mut metrics = MetricsWriter::create(&paths.metrics())?;

    let mut policy = GaussianPolicy::new(
        spec.state_dim,
        spec.action_dim,
        cfg.hp.hidden,
        derive_seed(cfg.seed, "policy-init", 0),
    )?;
    let mut vf = ValueFn::new(spec.state_dim, cfg.hp.hidden, derive_seed(cfg.seed, "value-init", 0))?;
    let mut ppo = PpoState::new(&policy, &vf, cfg.hp.ppo.lr);
    let mut critic = WassersteinCritic::new(
        spec.state_dim,
        cfg.hp.hidden,
        cfg.hp.critic,
        derive_seed(cfg.seed, "critic-init", 0),
    )?;
    let mut disc = Discriminator::new(
        spec.state_dim + spec.action_dim,
        cfg.hp.hidden,
        cfg.hp.disc,
        derive_seed(cfg.seed, "disc-init", 0),
    )?;
    let mut buffer = PriorityBuffer::new(cfg.buffer_capacity)?;

    let mut norm = RunningNorm::new(spec.state_dim);
    norm.push_all(&demo_states);

    let mut steps = 0usize;
    for iter in 1..=n_iters {
        hook(iter, TrainEvent::Collect);
        let mut episodes = rollout::collect(
            &policy,
            &vf,
            &spec,
            &cfg.dynamics,
            cfg.hp.n_steps_per_iter,
            derive_seed(cfg.seed, "collect", iter as u64),
        )?;
        steps += episodes.iter().map(|e| e.traj.len()).sum::<usize>();
        let mean_return = mean_collected_return(&episodes);

        // Freeze this iteration's input statistics before anything scores.
        for ep in &episodes {
            norm.push_all(&ep.traj.states);
        }
        critic.set_input_norm(norm.snapshot())?;
        disc.set_input_norm(state_action_norm(&norm, spec.action_dim))?;

        // The buffer only has contents from the second iteration on; the
        // first pass scores with the untrained critic and fills the buffer.
        let mut w1 = 0.0;
        let mut critic_obj = 0.0;
        if iter > 1 && !buffer.is_empty() {
            hook(iter, TrainEvent::CriticUpdate);
            let stats = critic.update(&demo_states, &buffer.all_states(), derive_seed(cfg.seed, "critic", iter as u64))?;
            w1 = stats.final_objective;
            critic_obj = stats.initial_objective;
        }

        hook(iter, TrainEvent::ScoreNewTrajectories);
        let fresh_scores: Vec<f64> = episodes
            .iter()
            .map(|ep| critic.mean_score(&ep.traj.states))
            .collect::<Result<_>>()?;

        // Stored scores are stale the moment the critic moves; refresh them
        // so admission compares like against like.
        hook(iter, TrainEvent::BufferRescore);
        buffer.rescore_all(|t| critic.mean_score(&t.states))?;
        hook(iter, TrainEvent::BufferOffers);
        for (ep, score) in episodes.iter().zip(&fresh_scores) {
            let mut kept = Trajectory::from_states(ep.traj.states.clone());
            kept.actions = ep.traj.actions.clone();
            buffer.offer(kept, *score)?;
        }

        hook(iter, TrainEvent::DiscUpdate);
        let (pos_x, pos_lp) = buffer_state_actions(&buffer, &policy)?;
        let (neg_x, neg_lp) = fresh_state_actions(&episodes);
        let dstats = disc.update(&pos_x, &pos_lp, &neg_x, &neg_lp, derive_seed(cfg.seed, "disc", iter as u64))?;

        // Imitation reward for the batch the policy is about to learn from,
        // using the log-probabilities recorded at collection time (the
        // policy has not changed since).
        hook(iter, TrainEvent::AssignRewards);
        for ep in &mut episodes {
            let actions = ep.traj.actions.as_ref().expect("collected episodes carry actions");
            let mut rewards = Vec::with_capacity(ep.traj.len());
            for t in 0..ep.traj.len() {
                let mut x = ep.traj.states[t].clone();
                x.extend_from_slice(&actions[t]);
                rewards.push(disc.f_value(&x)? - ep.log_probs[t]);
            }
            ep.traj.rewards = Some(rewards);
        }

        hook(iter, TrainEvent::PolicyUpdate);
        let batch = RolloutBatch::from_episodes(&episodes, cfg.hp.gamma, cfg.hp.lam)?;
        ppo_update(&mut policy, &mut vf, &mut ppo, &batch, &cfg.hp.ppo, derive_seed(cfg.seed, "ppo", iter as u64))?;

        metrics.append(&MetricsRow {
            iter,
            steps,
            mean_return,
            w1,
            buffer_score: buffer.mean_score().unwrap_or(0.0),
            disc_loss: dstats.final_loss,
            critic_obj,
            entropy: policy.entropy(),
        })?;

        if cfg.snapshots && iter % cfg.hp.snapshot_every == 0 {
            buffer.save(&paths.buffer_snapshot(iter))?;
        }
    }
    metrics.flush()?;

    policy.save(&paths.policy_ckpt())?;
    disc.save(&paths.disc_ckpt())?;
    critic.save(&paths.critic_ckpt())?;
    buffer.save(&paths.buffer_ckpt())?;
    let (final_mean, _) = final_evaluation(
        &paths,
        &policy,
        &spec,
        &cfg.dynamics,
        cfg.hp.eval_episodes,
        derive_seed(cfg.seed, "eval", 0),
    )?;
    stamp_finished(&paths)?;
    Ok(TrainOutcome { iterations: n_iters, final_mean_return: final_mean })
}

fn mean_collected_return(episodes: &[CollectedEpisode]) -> f64 {
    episodes
        .iter()
        .map(|e| e.traj.env_rewards.as_ref().expect("collected episodes carry env rewards").iter().sum::<f64>())
        .sum::<f64>()
        / episodes.len() as f64
}

/// Buffer contents as discriminator positives: state-action inputs with the
/// log-density of each stored action under the current policy.
fn buffer_state_actions(buffer: &PriorityBuffer, policy: &GaussianPolicy) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let mut xs = Vec::new();
    let mut lps = Vec::new();
    for item in buffer.items() {
        let actions = item
            .traj
            .actions
            .as_ref()
            .ok_or_else(|| Error::contract("buffered trajectory lost its actions"))?;
        for (s, a) in item.traj.states.iter().zip(actions) {
            let mut x = s.clone();
            x.extend_from_slice(a);
            xs.push(x);
            lps.push(policy.log_prob(s, a)?);
        }
    }
    Ok((xs, lps))
}

/// Fresh rollouts as discriminator negatives, with their collection-time
/// log-probabilities.
fn fresh_state_actions(episodes: &[CollectedEpisode]) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut xs = Vec::new();
    let mut lps = Vec::new();
    for ep in episodes {
        let actions = ep.traj.actions.as_ref().expect("collected episodes carry actions");
        for (t, (s, a)) in ep.traj.states.iter().zip(actions).enumerate() {
            let mut x = s.clone();
            x.extend_from_slice(a);
            xs.push(x);
            lps.push(ep.log_probs[t]);
        }
    }
    (xs, lps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::EnvKind;

    fn synthetic_demo(dir: &std::path::Path) -> std::path::PathBuf {
        // Plausible pendulum observations: unit circle plus a velocity.
        let states: Vec<Vec<f64>> = (0..400)
            .map(|k| {
                let th = (k as f64) * 0.031;
                vec![th.cos(), th.sin(), (k % 7) as f64 * 0.1 - 0.3]
            })
            .collect();
        let path = dir.join("synthetic.demo");
        rollout::save_demo(&path, &states).unwrap();
        path
    }

    fn tiny_cfg(dir: &std::path::Path, demo: std::path::PathBuf, iters: usize) -> TrainConfig {
        TrainConfig {
            algo: Algo::I2l,
            env: EnvKind::Pendulum,
            dynamics: DynamicsConfig::default(),
            seed: 11,
            total_steps: 400 * iters,
            buffer_capacity: 2,
            demo_path: Some(demo),
            run_dir: dir.join("run"),
            snapshots: true,
            hp: HyperParams {
                n_steps_per_iter: 400,
                eval_episodes: 2,
                snapshot_every: 2,
                ..HyperParams::default()
            },
        }
    }

    #[test]
    fn iteration_stages_fire_in_order_and_the_first_skips_the_critic() {
        let dir = tempfile::tempdir().unwrap();
        let demo = synthetic_demo(dir.path());
        let cfg = tiny_cfg(dir.path(), demo, 3);
        let mut log: Vec<(usize, TrainEvent)> = Vec::new();
        train_with_hook(&cfg, &mut |iter, ev| log.push((iter, ev))).unwrap();

        let events_of = |iter: usize| -> Vec<TrainEvent> {
            log.iter().filter(|(i, _)| *i == iter).map(|(_, e)| *e).collect()
        };
        assert_eq!(
            events_of(1),
            vec![
                TrainEvent::Collect,
                TrainEvent::ScoreNewTrajectories,
                TrainEvent::BufferRescore,
                TrainEvent::BufferOffers,
                TrainEvent::DiscUpdate,
                TrainEvent::AssignRewards,
                TrainEvent::PolicyUpdate,
            ]
        );
        for iter in [2, 3] {
            assert_eq!(
                events_of(iter),
                vec![
                    TrainEvent::Collect,
                    TrainEvent::CriticUpdate,
                    TrainEvent::ScoreNewTrajectories,
                    TrainEvent::BufferRescore,
                    TrainEvent::BufferOffers,
                    TrainEvent::DiscUpdate,
                    TrainEvent::AssignRewards,
                    TrainEvent::PolicyUpdate,
                ],
                "iteration {iter}"
            );
        }
    }

    #[test]
    fn a_short_run_writes_checkpoints_metrics_and_snapshots() {
        let dir = tempfile::tempdir().unwrap();
        let demo = synthetic_demo(dir.path());
        let cfg = tiny_cfg(dir.path(), demo, 4);
        let outcome = train(&cfg).unwrap();
        assert_eq!(outcome.iterations, 4);
        let paths = RunPaths::existing(&cfg.run_dir);
        for p in [paths.policy_ckpt(), paths.disc_ckpt(), paths.critic_ckpt(), paths.buffer_ckpt(), paths.final_eval()] {
            assert!(p.exists(), "{}", p.display());
        }
        assert!(paths.buffer_snapshot(2).exists());
        assert!(paths.buffer_snapshot(4).exists());
        assert!(!paths.buffer_snapshot(3).exists());
        let table = read_metrics(&paths.metrics()).unwrap();
        assert_eq!(table.rows.len(), 4);
        // First iteration trains no critic; later ones do.
        assert_eq!(table.rows[0].w1, 0.0);
        assert!(table.rows[1].w1 != 0.0);
        assert!(table.rows.iter().all(|r| r.disc_loss > 0.0));
        let buffer = crate::buffer::PriorityBuffer::load(&paths.buffer_ckpt()).unwrap();
        assert_eq!(buffer.len(), 2);
        assert!(buffer.items().iter().all(|i| i.traj.actions.is_some()));
    }

    #[test]
    fn runs_are_reproducible_per_seed() {
        let dir = tempfile::tempdir().unwrap();
        let demo = synthetic_demo(dir.path());
        let mut cfg = tiny_cfg(dir.path(), demo.clone(), 2);
        cfg.run_dir = dir.path().join("a");
        train(&cfg).unwrap();
        cfg.run_dir = dir.path().join("b");
        train(&cfg).unwrap();
        let a = std::fs::read(dir.path().join("a/metrics.csv")).unwrap();
        let b = std::fs::read(dir.path().join("b/metrics.csv")).unwrap();
        assert_eq!(a, b);
        let a = std::fs::read(dir.path().join("a/policy.ckpt")).unwrap();
        let b = std::fs::read(dir.path().join("b/policy.ckpt")).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn missing_demo_is_a_precondition_failure() {
        let dir = tempfile::tempdir().unwrap();
        let demo = synthetic_demo(dir.path());
        let mut cfg = tiny_cfg(dir.path(), demo, 1);
        cfg.demo_path = None;
        assert!(matches!(train(&cfg), Err(Error::Precondition(_))));
    }
}
