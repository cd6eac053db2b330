//! Clipped critic that estimates the 1-Wasserstein distance between the
//! demonstration state distribution and the state distribution held in the
//! priority buffer.
//!
//! Training maximizes `mean g(demo) - mean g(buffer)` and clamps every
//! parameter to `[-weight_clip, weight_clip]` after each step, so the critic
//! stays inside a crude Lipschitz ball and the objective value doubles as
//! the distance estimate. Scores are computed on normalized inputs; the
//! normalization is a frozen snapshot pushed in by the trainer, not a live
//! running statistic, so rescoring the buffer mid-iteration sees the same
//! function the update saw.

use crate::error::{Error, Result};
use crate::nn::{Activation, InputNorm, Network, Optimizer};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::Path;

#[derive(Debug, Clone, Copy)]
pub struct CriticConfig {
    pub lr: f64,
    pub steps: usize,
    pub weight_clip: f64,
    /// Largest buffer-side batch per update; bigger pools are subsampled.
    pub max_batch: usize,
}

impl Default for CriticConfig {
    fn default() -> Self {
        CriticConfig { lr: 5e-5, steps: 20, weight_clip: 0.01, max_batch: 2000 }
    }
}

/// Objective `mean g(expert) - mean g(buffer)` before the first step and
/// after the last one.
#[derive(Debug, Clone, Copy)]
pub struct CriticStats {
    pub initial_objective: f64,
    pub final_objective: f64,
}

#[derive(Debug, Clone)]
pub struct WassersteinCritic {
    net: Network,
    norm: InputNorm,
    opt: Optimizer,
    cfg: CriticConfig,
}

impl WassersteinCritic {
    pub fn new(input_dim: usize, hidden_width: usize, cfg: CriticConfig, seed: u64) -> Result<Self> {
        let net = Network::xavier(
            &[input_dim, hidden_width, hidden_width, 1],
            Activation::Tanh,
            Activation::Identity,
            seed,
        )?;
        Ok(Self::with_net(net, cfg))
    }

    /// Wraps an existing scoring network; useful when the shape of the
    /// critic itself is under test.
    pub fn with_net(net: Network, cfg: CriticConfig) -> Self {
        let dim = net.input_dim();
        let n = net.n_params();
        WassersteinCritic { net, norm: InputNorm::identity(dim), opt: Optimizer::rms_prop(cfg.lr, n), cfg }
    }

    pub fn net(&self) -> &Network {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Network {
        &mut self.net
    }

    pub fn config(&self) -> &CriticConfig {
        &self.cfg
    }

    pub fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn set_input_norm(&mut self, norm: InputNorm) -> Result<()> {
        if norm.dim() != self.net.input_dim() {
            return Err(Error::contract(format!(
                "norm has {} dims, critic input has {}",
                norm.dim(),
                self.net.input_dim()
            )));
        }
        self.norm = norm;
        Ok(())
    }

    pub fn score(&self, x: &[f64]) -> Result<f64> {
        Ok(self.net.forward(&self.norm.apply(x)?)?[0])
    }

    pub fn mean_score(&self, xs: &[Vec<f64>]) -> Result<f64> {
        if xs.is_empty() {
            return Err(Error::precondition("mean score over an empty batch"));
        }
        let mut sum = 0.0;
        for x in xs {
            sum += self.score(x)?;
        }
        Ok(sum / xs.len() as f64)
    }

    /// Distance estimate between two state batches under the current critic.
    /// Identical batches give exactly zero; swapping the arguments flips the
    /// sign exactly.
    pub fn w1_estimate(&self, a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
        Ok(self.mean_score(a)? - self.mean_score(b)?)
    }

    /// Objective gradient (of the maximized objective, not a loss) on fixed
    /// batches, exposed for finite-difference verification.
    pub fn objective_grads(&self, expert: &[Vec<f64>], buffer: &[Vec<f64>]) -> Result<(f64, Vec<f64>)> {
        if expert.is_empty() || buffer.is_empty() {
            return Err(Error::precondition("critic objective needs non-empty batches"));
        }
        let mut grads = vec![0.0; self.net.n_params()];
        let mut objective = 0.0;
        let e_w = 1.0 / expert.len() as f64;
        for x in expert {
            let trace = self.net.traced_forward(&self.norm.apply(x)?)?;
            objective += trace.output()[0] * e_w;
            self.net.backward(&trace, &[e_w], &mut grads);
        }
        let b_w = 1.0 / buffer.len() as f64;
        for x in buffer {
            let trace = self.net.traced_forward(&self.norm.apply(x)?)?;
            objective -= trace.output()[0] * b_w;
            self.net.backward(&trace, &[-b_w], &mut grads);
        }
        Ok((objective, grads))
    }

    /// Runs the configured number of ascent steps, clamping weights after
    /// every step. Either side larger than `max_batch` is subsampled once
    /// per call; the steps then run on those fixed batches.
    pub fn update(&mut self, expert: &[Vec<f64>], buffer: &[Vec<f64>], seed: u64) -> Result<CriticStats> {
        if expert.is_empty() || buffer.is_empty() {
            return Err(Error::precondition("critic update needs non-empty batches"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut subsample = |pool: &[Vec<f64>]| -> Vec<Vec<f64>> {
            if pool.len() > self.cfg.max_batch {
                let mut idx: Vec<usize> = (0..pool.len()).collect();
                idx.shuffle(&mut rng);
                idx[..self.cfg.max_batch].iter().map(|&i| pool[i].clone()).collect()
            } else {
                pool.to_vec()
            }
        };
        let expert_batch = subsample(expert);
        let batch = subsample(buffer);

        let initial_objective = self.w1_estimate(&expert_batch, &batch)?;
        for _ in 0..self.cfg.steps {
            let (_, obj_grads) = self.objective_grads(&expert_batch, &batch)?;
            // Ascent on the objective through a descent-only optimizer.
            let loss_grads: Vec<f64> = obj_grads.iter().map(|g| -g).collect();
            self.opt.step(self.net.params_mut(), &loss_grads)?;
            self.clip_weights();
        }
        let final_objective = self.w1_estimate(&expert_batch, &batch)?;
        Ok(CriticStats { initial_objective, final_objective })
    }

    pub fn clip_weights(&mut self) {
        let c = self.cfg.weight_clip;
        for p in self.net.params_mut() {
            *p = p.clamp(-c, c);
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::from("wcritic v1\n");
        out.push_str(&self.norm.to_text());
        out.push_str(&self.net.to_text());
        std::fs::write(path, out)?;
        Ok(())
    }

    /// Restores scoring state (normalization and weights). Optimizer moments
    /// are not part of a checkpoint; a loaded critic starts fresh ones.
    pub fn load(path: &Path, cfg: CriticConfig) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut lines = text.lines();
        let magic = lines.next().ok_or_else(|| Error::parse("empty critic checkpoint"))?;
        if magic.trim() != "wcritic v1" {
            return Err(Error::parse(format!("bad critic header `{magic}`")));
        }
        let norm = InputNorm::from_lines(&mut lines)?;
        let rest: Vec<&str> = lines.collect();
        let net = Network::from_text(&rest.join("\n"))?;
        let mut critic = Self::with_net(net, cfg);
        critic.set_input_norm(norm)?;
        Ok(critic)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn column(values: &[f64]) -> Vec<Vec<f64>> {
        values.iter().map(|&v| vec![v]).collect()
    }

    fn gaussian_column(n: usize, mean: f64, std: f64, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
        (0..n).map(|_| vec![mean + std * rng.sample::<f64, _>(StandardNormal)]).collect()
    }

    #[test]
    fn linear_critic_estimate_is_scaled_mean_difference() {
        let mut net = Network::zeros(&[1, 1], Activation::Tanh, Activation::Identity).unwrap();
        net.set_params(&[0.25, 0.1]).unwrap();
        let critic = WassersteinCritic::with_net(net, CriticConfig::default());
        let a = column(&[1.0, 2.0, 3.0]);
        let b = column(&[4.0, 6.0]);
        let est = critic.w1_estimate(&a, &b).unwrap();
        assert!((est - 0.25 * (2.0 - 5.0)).abs() < 1e-12);
    }

    #[test]
    fn estimate_is_antisymmetric_and_zero_on_identical_batches() {
        let critic = WassersteinCritic::new(2, 16, CriticConfig::default(), 60).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        let a: Vec<Vec<f64>> = (0..20).map(|_| vec![rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)]).collect();
        let b: Vec<Vec<f64>> = (0..30).map(|_| vec![rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)]).collect();
        let ab = critic.w1_estimate(&a, &b).unwrap();
        let ba = critic.w1_estimate(&b, &a).unwrap();
        assert_eq!(ab, -ba);
        assert_eq!(critic.w1_estimate(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn objective_gradient_matches_finite_differences() {
        let mut critic = WassersteinCritic::new(2, 6, CriticConfig::default(), 62).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(63);
        let expert: Vec<Vec<f64>> = (0..8).map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect();
        let buffer: Vec<Vec<f64>> = (0..6).map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect();
        let (_, grads) = critic.objective_grads(&expert, &buffer).unwrap();
        let eps = 1e-5;
        for i in (0..critic.net().n_params()).step_by(7) {
            let orig = critic.net().params()[i];
            critic.net_mut().params_mut()[i] = orig + eps;
            let (up, _) = critic.objective_grads(&expert, &buffer).unwrap();
            critic.net_mut().params_mut()[i] = orig - eps;
            let (down, _) = critic.objective_grads(&expert, &buffer).unwrap();
            critic.net_mut().params_mut()[i] = orig;
            let fd = (up - down) / (2.0 * eps);
            let denom = fd.abs().max(grads[i].abs()).max(1e-8);
            assert!((fd - grads[i]).abs() / denom < 1e-4, "param {i}: fd {fd} vs grad {}", grads[i]);
        }
    }

    #[test]
    fn training_on_separated_batches_raises_a_positive_objective() {
        let mut rng = ChaCha8Rng::seed_from_u64(64);
        let expert = gaussian_column(100, 2.0, 0.1, &mut rng);
        let buffer = gaussian_column(100, -2.0, 0.1, &mut rng);
        let mut critic = WassersteinCritic::new(1, 64, CriticConfig::default(), 65).unwrap();
        let first = critic.update(&expert, &buffer, 66).unwrap();
        let mut last = first;
        for round in 1..10 {
            last = critic.update(&expert, &buffer, 66 + round).unwrap();
        }
        assert!(last.final_objective > 0.0, "objective {}", last.final_objective);
        assert!(last.final_objective >= first.initial_objective);
        let clip = critic.config().weight_clip;
        assert!(critic.net().params().iter().all(|p| p.abs() <= clip));
    }

    #[test]
    fn every_update_leaves_weights_inside_the_clip_ball() {
        let mut rng = ChaCha8Rng::seed_from_u64(67);
        let a = gaussian_column(30, 5.0, 1.0, &mut rng);
        let b = gaussian_column(30, -5.0, 1.0, &mut rng);
        let cfg = CriticConfig { lr: 0.5, ..CriticConfig::default() };
        let mut critic = WassersteinCritic::new(1, 8, cfg, 68).unwrap();
        critic.update(&a, &b, 69).unwrap();
        assert!(critic.net().params().iter().all(|p| p.abs() <= cfg.weight_clip));
    }

    #[test]
    fn normalization_shifts_scores_as_the_affine_map_dictates() {
        let mut critic = WassersteinCritic::new(2, 8, CriticConfig::default(), 70).unwrap();
        let raw = critic.score(&[0.5, -1.0]).unwrap();
        critic.set_input_norm(InputNorm::new(vec![1.0, 2.0], vec![2.0, 4.0]).unwrap()).unwrap();
        let normalized = critic.score(&[2.0, -2.0]).unwrap();
        // (2 - 1) / 2 = 0.5 and (-2 - 2) / 4 = -1, the raw input above.
        assert_eq!(raw, normalized);
        assert!(critic.set_input_norm(InputNorm::identity(3)).is_err());
    }

    #[test]
    fn update_subsamples_oversized_buffers_deterministically() {
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        let expert = gaussian_column(20, 1.0, 0.5, &mut rng);
        let buffer = gaussian_column(50, -1.0, 0.5, &mut rng);
        let cfg = CriticConfig { max_batch: 16, steps: 3, ..CriticConfig::default() };
        let mut c1 = WassersteinCritic::new(1, 8, cfg, 72).unwrap();
        let mut c2 = c1.clone();
        let s1 = c1.update(&expert, &buffer, 73).unwrap();
        let s2 = c2.update(&expert, &buffer, 73).unwrap();
        assert_eq!(s1.final_objective, s2.final_objective);
        assert_eq!(c1.net().params(), c2.net().params());
    }

    #[test]
    fn checkpoint_round_trip_preserves_scores() {
        let mut critic = WassersteinCritic::new(3, 12, CriticConfig::default(), 74).unwrap();
        critic
            .set_input_norm(InputNorm::new(vec![0.1, -0.2, 0.3], vec![1.5, 2.5, 0.5]).unwrap())
            .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("critic.ckpt");
        critic.save(&path).unwrap();
        let loaded = WassersteinCritic::load(&path, CriticConfig::default()).unwrap();
        let x = vec![0.4, 1.2, -0.7];
        assert_eq!(critic.score(&x).unwrap(), loaded.score(&x).unwrap());
    }

    #[test]
    fn update_rejects_empty_batches() {
        let mut critic = WassersteinCritic::new(1, 4, CriticConfig::default(), 75).unwrap();
        let xs = column(&[1.0]);
        assert!(matches!(critic.update(&[], &xs, 0), Err(Error::Precondition(_))));
        assert!(matches!(critic.update(&xs, &[], 0), Err(Error::Precondition(_))));
    }
}
