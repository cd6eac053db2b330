//! Direct adversarial imitation baselines. All four share one loop; they
//! differ only in what the discriminator sees and in the reward shape:
//!
//! * `gail_s`: states, classifier reward `softplus(f(s))`.
//! * `gaifo`: state-successor pairs, classifier reward on each transition.
//! * `gail_sa`: state-action pairs from an action-augmented demo.
//! * `airl`: state-action pairs with the log-density-corrected classifier
//!   and reward `f(s, a) - log pi(a|s)`.
//!
//! Unlike the indirect route, every one of these trains its discriminator
//! against the demonstration itself, so a dynamics gap between demonstrator
//! and learner shows up directly in the positives.

use super::*;
use crate::adversary::{gan_reward, Discriminator};
use crate::policy::{ppo_update, PpoState, ValueFn};
use crate::rollout::{self, CollectedEpisode, RolloutBatch};

pub fn train(cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.dynamics.validate()?;
    let spec = EnvSpec::new(cfg.env);
    let n_iters = cfg.n_iterations()?;
    let demo_path = cfg
        .demo_path
        .as_ref()
        .ok_or_else(|| Error::precondition(format!("{} needs a demo file", cfg.algo)))?;

    // Demo side of the discriminator, fixed for the whole run (the log
    // densities for airl are recomputed every iteration instead).
    let (demo_states, demo_actions) = if cfg.algo.needs_actions() {
        let (s, a) = rollout::load_demo_with_actions(demo_path)?;
        if s[0].len() != spec.state_dim || a[0].len() != spec.action_dim {
            return Err(Error::precondition(format!(
                "demo shape {}x{} does not fit {} ({}x{})",
                s[0].len(),
                a[0].len(),
                spec.kind,
                spec.state_dim,
                spec.action_dim
            )));
        }
        (s, Some(a))
    } else {
        (load_checked_demo(demo_path, &spec)?, None)
    };
    let positives: Vec<Vec<f64>> = match cfg.algo {
        Algo::GailS => demo_states.clone(),
        Algo::Gaifo => rollout::consecutive_pairs(demo_states.len(), spec.episode_length)
            .into_iter()
            .map(|(i, j)| {
                let mut x = demo_states[i].clone();
                x.extend_from_slice(&demo_states[j]);
                x
            })
            .collect(),
        Algo::GailSa | Algo::Airl => demo_states
            .iter()
            .zip(demo_actions.as_ref().expect("checked above"))
            .map(|(s, a)| {
                let mut x = s.clone();
                x.extend_from_slice(a);
                x
            })
            .collect(),
        Algo::I2l | Algo::Bco => {
            return Err(Error::contract(format!("{} is not an adversarial baseline", cfg.algo)))
        }
    };

    let feature_dim = match cfg.algo {
        Algo::GailS => spec.state_dim,
        Algo::Gaifo => 2 * spec.state_dim,
        _ => spec.state_dim + spec.action_dim,
    };

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
    let mut disc = Discriminator::new(feature_dim, cfg.hp.hidden, cfg.hp.disc, derive_seed(cfg.seed, "disc-init", 0))?;

    let mut norm = RunningNorm::new(spec.state_dim);
    norm.push_all(&demo_states);

    let mut steps = 0usize;
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

        for ep in &episodes {
            norm.push_all(&ep.traj.states);
        }
        disc.set_input_norm(match cfg.algo {
            Algo::GailS => norm.snapshot(),
            Algo::Gaifo => state_pair_norm(&norm),
            _ => state_action_norm(&norm, spec.action_dim),
        })?;

        let neg_feats: Vec<Vec<Vec<f64>>> = episodes.iter().map(|ep| featurize_episode(cfg.algo, ep)).collect();
        let neg_x: Vec<Vec<f64>> = neg_feats.iter().flatten().cloned().collect();
        let neg_lp: Vec<f64> = if cfg.algo == Algo::Airl {
            episodes.iter().flat_map(|ep| ep.log_probs.iter().copied()).collect()
        } else {
            vec![0.0; neg_x.len()]
        };
        let pos_lp: Vec<f64> = if cfg.algo == Algo::Airl {
            let actions = demo_actions.as_ref().expect("airl demo carries actions");
            demo_states
                .iter()
                .zip(actions)
                .map(|(s, a)| policy.log_prob(s, a))
                .collect::<Result<_>>()?
        } else {
            vec![0.0; positives.len()]
        };
        let dstats = disc.update(&positives, &pos_lp, &neg_x, &neg_lp, derive_seed(cfg.seed, "disc", iter as u64))?;

        for (ep, feats) in episodes.iter_mut().zip(&neg_feats) {
            let mut rewards = Vec::with_capacity(feats.len());
            for (t, x) in feats.iter().enumerate() {
                let f = disc.f_value(x)?;
                rewards.push(if cfg.algo == Algo::Airl { f - ep.log_probs[t] } else { gan_reward(f) });
            }
            ep.traj.rewards = Some(rewards);
        }

        let batch = RolloutBatch::from_episodes(&episodes, cfg.hp.gamma, cfg.hp.lam)?;
        ppo_update(&mut policy, &mut vf, &mut ppo, &batch, &cfg.hp.ppo, derive_seed(cfg.seed, "ppo", iter as u64))?;

        metrics.append(&MetricsRow {
            iter,
            steps,
            mean_return,
            disc_loss: dstats.final_loss,
            entropy: policy.entropy(),
            ..Default::default()
        })?;
    }
    metrics.flush()?;

    policy.save(&paths.policy_ckpt())?;
    disc.save(&paths.disc_ckpt())?;
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

/// One discriminator input per step of the episode. Successor pairs use the
/// recorded post-timeout observation for the final step, so the feature
/// count always matches the step count.
fn featurize_episode(algo: Algo, ep: &CollectedEpisode) -> Vec<Vec<f64>> {
    let states = &ep.traj.states;
    match algo {
        Algo::GailS => states.clone(),
        Algo::Gaifo => {
            let final_state = ep.traj.final_state.as_ref().expect("collected episodes record the final state");
            (0..states.len())
                .map(|t| {
                    let mut x = states[t].clone();
                    let next = if t + 1 < states.len() { &states[t + 1] } else { final_state };
                    x.extend_from_slice(next);
                    x
                })
                .collect()
        }
        _ => {
            let actions = ep.traj.actions.as_ref().expect("collected episodes carry actions");
            states
                .iter()
                .zip(actions)
                .map(|(s, a)| {
                    let mut x = s.clone();
                    x.extend_from_slice(a);
                    x
                })
                .collect()
        }
    }
}
