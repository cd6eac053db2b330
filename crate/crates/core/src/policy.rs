//! Diagonal-Gaussian policy, value function, and the clipped-surrogate
//! policy-gradient update.
//!
//! The policy's mean comes from a tanh network; the log standard deviations
//! are state-independent free parameters, clamped to `[LOG_STD_MIN,
//! LOG_STD_MAX]` after every optimizer step. Actions are not squashed; the
//! environments clamp what they receive.

use crate::error::{Error, Result};
use crate::nn::{Activation, Network, Optimizer};
use crate::rollout::RolloutBatch;
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

#[derive(Debug, Clone)]
pub struct GaussianPolicy {
    pub mean_net: Network,
    log_std: Vec<f64>,
}

impl GaussianPolicy {
    /// Two hidden tanh layers of `hidden` units, linear mean output,
    /// log-std initialized to zero (unit standard deviation).
    pub fn new(obs_dim: usize, action_dim: usize, hidden: usize, seed: u64) -> Result<Self> {
        let mean_net = Network::xavier(
            &[obs_dim, hidden, hidden, action_dim],
            Activation::Tanh,
            Activation::Identity,
            seed,
        )?;
        Ok(GaussianPolicy { mean_net, log_std: vec![0.0; action_dim] })
    }

    pub fn obs_dim(&self) -> usize {
        self.mean_net.input_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.mean_net.output_dim()
    }

    pub fn log_std(&self) -> &[f64] {
        &self.log_std
    }

    pub fn log_std_mut(&mut self) -> &mut [f64] {
        &mut self.log_std
    }

    pub fn clamp_log_std(&mut self) {
        for v in &mut self.log_std {
            *v = v.clamp(LOG_STD_MIN, LOG_STD_MAX);
        }
    }

    pub fn mean_action(&self, obs: &[f64]) -> Result<Vec<f64>> {
        self.mean_net.forward(obs)
    }

    pub fn log_prob(&self, obs: &[f64], action: &[f64]) -> Result<f64> {
        if action.len() != self.action_dim() {
            return Err(Error::contract(format!(
                "action has {} dims, policy expects {}",
                action.len(),
                self.action_dim()
            )));
        }
        let mean = self.mean_net.forward(obs)?;
        Ok(log_prob_given_mean(&mean, &self.log_std, action))
    }

    /// Log-density and its exact gradients with respect to the mean-network
    /// parameters and `log_std`.
    pub fn log_prob_grads(&self, obs: &[f64], action: &[f64]) -> Result<(f64, PolicyGrads)> {
        if action.len() != self.action_dim() {
            return Err(Error::contract(format!(
                "action has {} dims, policy expects {}",
                action.len(),
                self.action_dim()
            )));
        }
        let trace = self.mean_net.traced_forward(obs)?;
        let mean = trace.output();
        let lp = log_prob_given_mean(mean, &self.log_std, action);
        let mut grads = PolicyGrads {
            mean_net: vec![0.0; self.mean_net.n_params()],
            log_std: vec![0.0; self.log_std.len()],
        };
        let mut d_mean = vec![0.0; mean.len()];
        for i in 0..mean.len() {
            let var = (2.0 * self.log_std[i]).exp();
            let diff = action[i] - mean[i];
            d_mean[i] = diff / var;
            grads.log_std[i] = (diff * diff) / var - 1.0;
        }
        self.mean_net.backward(&trace, &d_mean, &mut grads.mean_net);
        Ok((lp, grads))
    }

    /// Draws `mean(obs) + std * xi` with `xi` standard normal from `rng`.
    pub fn sample(&self, obs: &[f64], rng: &mut impl Rng) -> Result<Vec<f64>> {
        let mean = self.mean_net.forward(obs)?;
        Ok(mean
            .iter()
            .zip(&self.log_std)
            .map(|(m, ls)| {
                let xi: f64 = rng.sample(StandardNormal);
                m + ls.exp() * xi
            })
            .collect())
    }

    /// Differential entropy; state-independent because the covariance is.
    pub fn entropy(&self) -> f64 {
        self.log_std.iter().map(|ls| 0.5 * (1.0 + (2.0 * PI).ln()) + ls).sum()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = String::from("policy v1\nlog_std");
        for v in &self.log_std {
            let _ = write!(text, " {v}");
        }
        text.push('\n');
        text.push_str(&self.mean_net.to_text());
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut lines = text.splitn(3, '\n');
        let magic = lines.next().unwrap_or_default();
        if magic.trim() != "policy v1" {
            return Err(Error::parse(format!("bad policy header `{magic}`")));
        }
        let std_line = lines.next().ok_or_else(|| Error::parse("missing log_std line"))?;
        let log_std: Vec<f64> = std_line
            .strip_prefix("log_std")
            .ok_or_else(|| Error::parse("missing log_std line"))?
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| Error::parse(format!("bad log_std `{t}`"))))
            .collect::<Result<_>>()?;
        let mean_net = Network::from_text(lines.next().unwrap_or_default())?;
        if log_std.len() != mean_net.output_dim() {
            return Err(Error::parse("log_std length disagrees with network output"));
        }
        let mut policy = GaussianPolicy { mean_net, log_std };
        policy.clamp_log_std();
        Ok(policy)
    }
}

/// Gradients of a scalar policy quantity, split by parameter group.
#[derive(Debug, Clone)]
pub struct PolicyGrads {
    pub mean_net: Vec<f64>,
    pub log_std: Vec<f64>,
}

fn log_prob_given_mean(mean: &[f64], log_std: &[f64], action: &[f64]) -> f64 {
    let mut lp = 0.0;
    for i in 0..mean.len() {
        let z = (action[i] - mean[i]) / log_std[i].exp();
        lp += -0.5 * (2.0 * PI).ln() - log_std[i] - 0.5 * z * z;
    }
    lp
}

/// State-value estimator: same body as the policy mean network, scalar output.
#[derive(Debug, Clone)]
pub struct ValueFn {
    pub net: Network,
}

impl ValueFn {
    pub fn new(obs_dim: usize, hidden: usize, seed: u64) -> Result<Self> {
        Ok(ValueFn {
            net: Network::xavier(&[obs_dim, hidden, hidden, 1], Activation::Tanh, Activation::Identity, seed)?,
        })
    }

    pub fn value(&self, obs: &[f64]) -> Result<f64> {
        Ok(self.net.forward(obs)?[0])
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PpoConfig {
    pub lr: f64,
    pub clip_eps: f64,
    pub epochs: usize,
    pub minibatch: usize,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub normalize_advantages: bool,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            lr: 1e-4,
            clip_eps: 0.2,
            epochs: 10,
            minibatch: 64,
            value_coef: 0.5,
            entropy_coef: 0.0,
            normalize_advantages: true,
        }
    }
}

/// Optimizer state carried across updates. Splitting the policy into a
/// mean-network optimizer and a log-std optimizer is elementwise identical
/// to one Adam instance over the concatenated parameters.
#[derive(Debug, Clone)]
pub struct PpoState {
    opt_mean: Optimizer,
    opt_log_std: Optimizer,
    opt_value: Optimizer,
}

impl PpoState {
    pub fn new(policy: &GaussianPolicy, vf: &ValueFn, lr: f64) -> Self {
        PpoState {
            opt_mean: Optimizer::adam(lr, policy.mean_net.n_params()),
            opt_log_std: Optimizer::adam(lr, policy.log_std.len()),
            opt_value: Optimizer::adam(lr, vf.net.n_params()),
        }
    }
}

/// Scalar pieces of the clipped-surrogate objective evaluated on one batch
/// slice. `total` is the minimized quantity:
/// `-surrogate - entropy_coef * entropy + value_coef * value_mse`.
#[derive(Debug, Clone, Copy)]
pub struct PpoLossParts {
    pub total: f64,
    pub surrogate: f64,
    pub value_mse: f64,
    pub entropy: f64,
}

#[derive(Debug, Clone)]
pub struct PpoGrads {
    pub mean_net: Vec<f64>,
    pub log_std: Vec<f64>,
    pub value_net: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct PpoStats {
    pub total_loss: f64,
    pub surrogate: f64,
    pub value_mse: f64,
    pub entropy: f64,
    pub minibatches: usize,
}

/// Mean zero, unit standard deviation (population), with a small guard for
/// constant batches.
pub fn normalize_advantages(adv: &[f64]) -> Vec<f64> {
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    adv.iter().map(|a| (a - mean) / (std + 1e-8)).collect()
}

/// Loss and exact gradients over the records of `batch` selected by `idx`,
/// with `adv` supplying the advantage for every record (already normalized
/// when normalization is on). Gradients are for the minimized `total`.
pub fn ppo_loss_grads(
    policy: &GaussianPolicy,
    vf: &ValueFn,
    batch: &RolloutBatch,
    idx: &[usize],
    adv: &[f64],
    cfg: &PpoConfig,
) -> Result<(PpoLossParts, PpoGrads)> {
    if idx.is_empty() {
        return Err(Error::contract("empty minibatch"));
    }
    let n = idx.len() as f64;
    let mut grads = PpoGrads {
        mean_net: vec![0.0; policy.mean_net.n_params()],
        log_std: vec![0.0; policy.log_std.len()],
        value_net: vec![0.0; vf.net.n_params()],
    };
    let std: Vec<f64> = policy.log_std.iter().map(|ls| ls.exp()).collect();
    let mut surrogate = 0.0;
    let mut value_mse = 0.0;

    for &k in idx {
        let obs = &batch.obs[k];
        let action = &batch.actions[k];
        let a_k = adv[k];

        let trace = policy.mean_net.traced_forward(obs)?;
        let mean = trace.output();
        let logp_new = log_prob_given_mean(mean, &policy.log_std, action);
        let ratio = (logp_new - batch.log_probs[k]).exp();
        let unclipped = ratio * a_k;
        let clipped = ratio.clamp(1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps) * a_k;
        surrogate += unclipped.min(clipped) / n;

        // The min passes gradient through the unclipped branch only; when
        // the clipped branch is strictly smaller its ratio is pinned at a
        // clip boundary, so its derivative is zero.
        let d_logp = if unclipped <= clipped { -unclipped / n } else { 0.0 };
        if d_logp != 0.0 {
            let mut d_mean = vec![0.0; mean.len()];
            for i in 0..mean.len() {
                let diff = action[i] - mean[i];
                d_mean[i] = d_logp * diff / (std[i] * std[i]);
                grads.log_std[i] += d_logp * ((diff * diff) / (std[i] * std[i]) - 1.0);
            }
            policy.mean_net.backward(&trace, &d_mean, &mut grads.mean_net);
        }

        let vtrace = vf.net.traced_forward(obs)?;
        let v = vtrace.output()[0];
        let err = v - batch.returns[k];
        value_mse += err * err / n;
        vf.net.backward(&vtrace, &[2.0 * err * cfg.value_coef / n], &mut grads.value_net);
    }

    let entropy = policy.entropy();
    let mut total = -surrogate + cfg.value_coef * value_mse;
    if cfg.entropy_coef != 0.0 {
        total -= cfg.entropy_coef * entropy;
        for g in &mut grads.log_std {
            *g -= cfg.entropy_coef; // dH/dlog_std_i = 1
        }
    }
    Ok((PpoLossParts { total, surrogate, value_mse, entropy }, grads))
}

pub fn ppo_loss(
    policy: &GaussianPolicy,
    vf: &ValueFn,
    batch: &RolloutBatch,
    idx: &[usize],
    adv: &[f64],
    cfg: &PpoConfig,
) -> Result<PpoLossParts> {
    ppo_loss_grads(policy, vf, batch, idx, adv, cfg).map(|(parts, _)| parts)
}

/// Clipped-surrogate update: `epochs` passes of shuffled minibatches over
/// the batch. A non-finite loss aborts the whole update and restores the
/// parameters that were in place when it began.
pub fn ppo_update(
    policy: &mut GaussianPolicy,
    vf: &mut ValueFn,
    state: &mut PpoState,
    batch: &RolloutBatch,
    cfg: &PpoConfig,
    seed: u64,
) -> Result<PpoStats> {
    batch.check_consistent()?;
    if batch.len() == 0 {
        return Err(Error::contract("ppo_update needs a non-empty batch"));
    }
    let adv = if cfg.normalize_advantages {
        normalize_advantages(&batch.advantages)
    } else {
        batch.advantages.clone()
    };

    let checkpoint = (policy.clone(), vf.clone(), state.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..batch.len()).collect();
    let mut stats = PpoStats { total_loss: 0.0, surrogate: 0.0, value_mse: 0.0, entropy: 0.0, minibatches: 0 };

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.minibatch.max(1)) {
            let (parts, grads) = ppo_loss_grads(policy, vf, batch, chunk, &adv, cfg)?;
            if !parts.total.is_finite() {
                let (p, v, s) = checkpoint;
                (*policy, *vf, *state) = (p, v, s);
                return Err(Error::numeric(format!("non-finite ppo loss {}", parts.total)));
            }
            state.opt_mean.step(policy.mean_net.params_mut(), &grads.mean_net)?;
            state.opt_log_std.step(&mut policy.log_std, &grads.log_std)?;
            state.opt_value.step(vf.net.params_mut(), &grads.value_net)?;
            policy.clamp_log_std();

            stats.total_loss += parts.total;
            stats.surrogate += parts.surrogate;
            stats.value_mse += parts.value_mse;
            stats.entropy += parts.entropy;
            stats.minibatches += 1;
        }
    }
    let m = stats.minibatches.max(1) as f64;
    stats.total_loss /= m;
    stats.surrogate /= m;
    stats.value_mse /= m;
    stats.entropy /= m;
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rollout::RolloutBatch;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zero_mean_policy(obs_dim: usize, action_dim: usize) -> GaussianPolicy {
        let mean_net = Network::zeros(&[obs_dim, 4, action_dim], Activation::Tanh, Activation::Identity).unwrap();
        GaussianPolicy { mean_net, log_std: vec![0.0; action_dim] }
    }

    fn toy_batch(policy: &GaussianPolicy, vf: &ValueFn, n: usize, seed: u64) -> RolloutBatch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut batch = RolloutBatch::default();
        for _ in 0..n {
            let obs: Vec<f64> = (0..policy.obs_dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let action = policy.sample(&obs, &mut rng).unwrap();
            let log_prob = policy.log_prob(&obs, &action).unwrap();
            let value = vf.value(&obs).unwrap();
            batch.obs.push(obs);
            batch.actions.push(action);
            batch.log_probs.push(log_prob);
            batch.values.push(value);
            batch.advantages.push(rng.gen_range(-1.0..1.0));
            batch.returns.push(rng.gen_range(-1.0..1.0));
        }
        batch
    }

    #[test]
    fn log_prob_at_the_mean_is_the_gaussian_peak() {
        let policy = zero_mean_policy(2, 1);
        let lp = policy.log_prob(&[0.3, -0.7], &[0.0]).unwrap();
        assert!((lp - (-0.5 * (2.0 * PI).ln())).abs() < 1e-12);

        let policy2 = zero_mean_policy(2, 2);
        let lp2 = policy2.log_prob(&[0.0, 0.0], &[0.0, 0.0]).unwrap();
        assert!((lp2 - (-(2.0 * PI).ln())).abs() < 1e-12);
    }

    #[test]
    fn log_prob_matches_direct_density_formula() {
        let mut policy = GaussianPolicy::new(3, 2, 8, 50).unwrap();
        policy.log_std_mut().copy_from_slice(&[-0.3, 0.4]);
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        for _ in 0..50 {
            let obs: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let action: Vec<f64> = (0..2).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let mean = policy.mean_action(&obs).unwrap();
            let mut expect = 0.0;
            for i in 0..2 {
                let sd = policy.log_std()[i].exp();
                let z = (action[i] - mean[i]) / sd;
                expect += -(sd * (2.0 * PI).sqrt()).ln() - 0.5 * z * z;
            }
            let got = policy.log_prob(&obs, &action).unwrap();
            assert!((got - expect).abs() < 1e-12, "got {got} expect {expect}");
        }
    }

    #[test]
    fn tiny_std_samples_sit_on_the_mean() {
        let mut policy = GaussianPolicy::new(2, 2, 8, 52).unwrap();
        policy.log_std_mut().fill(LOG_STD_MIN);
        let obs = [0.4, -0.9];
        let mean = policy.mean_action(&obs).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        // sigma = e^-5, so even a 5-sigma draw stays within 0.04.
        for _ in 0..100 {
            let a = policy.sample(&obs, &mut rng).unwrap();
            for i in 0..2 {
                assert!((a[i] - mean[i]).abs() < 4e-2);
            }
        }
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let policy = GaussianPolicy::new(2, 2, 8, 54).unwrap();
        let obs = [1.0, -1.0];
        let a = policy.sample(&obs, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = policy.sample(&obs, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sample_mean_converges_to_policy_mean() {
        let policy = zero_mean_policy(2, 2);
        let obs = [0.5, 0.5];
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let n = 100_000;
        let mut sums = [0.0; 2];
        for _ in 0..n {
            let a = policy.sample(&obs, &mut rng).unwrap();
            sums[0] += a[0];
            sums[1] += a[1];
        }
        let tol = 3.0 / (n as f64).sqrt(); // 3 sigma of the mean estimate, std = 1
        assert!((sums[0] / n as f64).abs() < tol);
        assert!((sums[1] / n as f64).abs() < tol);
    }

    #[test]
    fn surrogate_at_unit_ratio_equals_mean_advantage() {
        let policy = GaussianPolicy::new(2, 1, 8, 56).unwrap();
        let vf = ValueFn::new(2, 8, 57).unwrap();
        let batch = toy_batch(&policy, &vf, 12, 58);
        let idx: Vec<usize> = (0..batch.len()).collect();
        let cfg = PpoConfig::default();
        let parts = ppo_loss(&policy, &vf, &batch, &idx, &batch.advantages, &cfg).unwrap();
        let mean_adv = batch.advantages.iter().sum::<f64>() / batch.len() as f64;
        assert!((parts.surrogate - mean_adv).abs() < 1e-12);
    }

    #[test]
    fn zero_advantages_give_zero_policy_gradient() {
        let policy = GaussianPolicy::new(2, 1, 8, 59).unwrap();
        let vf = ValueFn::new(2, 8, 60).unwrap();
        let mut batch = toy_batch(&policy, &vf, 8, 61);
        batch.advantages.iter_mut().for_each(|a| *a = 0.0);
        let idx: Vec<usize> = (0..batch.len()).collect();
        let cfg = PpoConfig::default();
        let (_, grads) = ppo_loss_grads(&policy, &vf, &batch, &idx, &batch.advantages, &cfg).unwrap();
        assert!(grads.mean_net.iter().all(|&g| g == 0.0));
        assert!(grads.log_std.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn clipped_branch_kills_the_gradient() {
        let policy = GaussianPolicy::new(2, 1, 8, 62).unwrap();
        let vf = ValueFn::new(2, 8, 63).unwrap();
        let mut batch = toy_batch(&policy, &vf, 1, 64);
        batch.advantages[0] = 1.0;
        // Stored log-prob 0.5 below the current one puts the ratio at
        // e^0.5 > 1.2, so the positive-advantage min picks the clipped term.
        batch.log_probs[0] -= 0.5;
        let cfg = PpoConfig::default();
        let (_, grads) = ppo_loss_grads(&policy, &vf, &batch, &[0], &batch.advantages, &cfg).unwrap();
        assert!(grads.mean_net.iter().all(|&g| g == 0.0));
        assert!(grads.log_std.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn ppo_gradients_match_finite_differences() {
        let mut policy = GaussianPolicy::new(3, 2, 6, 65).unwrap();
        policy.log_std_mut().copy_from_slice(&[-0.2, 0.1]);
        let mut vf = ValueFn::new(3, 6, 66).unwrap();
        let mut batch = toy_batch(&policy, &vf, 6, 67);
        // Stale stored log-probs exercise both surrogate branches.
        for lp in &mut batch.log_probs {
            *lp += 0.1;
        }
        let idx: Vec<usize> = (0..batch.len()).collect();
        let cfg = PpoConfig { entropy_coef: 0.01, ..PpoConfig::default() };
        let (_, grads) = ppo_loss_grads(&policy, &vf, &batch, &idx, &batch.advantages, &cfg).unwrap();

        let eps = 1e-5;
        let rel = |fd: f64, an: f64| (fd - an).abs() / fd.abs().max(an.abs()).max(1e-8);

        for i in 0..policy.mean_net.n_params() {
            let orig = policy.mean_net.params()[i];
            policy.mean_net.params_mut()[i] = orig + eps;
            let hi = ppo_loss(&policy, &vf, &batch, &idx, &batch.advantages, &cfg).unwrap().total;
            policy.mean_net.params_mut()[i] = orig - eps;
            let lo = ppo_loss(&policy, &vf, &batch, &idx, &batch.advantages, &cfg).unwrap().total;
            policy.mean_net.params_mut()[i] = orig;
            assert!(rel((hi - lo) / (2.0 * eps), grads.mean_net[i]) < 1e-4, "mean param {i}");
        }
        for i in 0..2 {
            let orig = policy.log_std()[i];
            policy.log_std_mut()[i] = orig + eps;
            let hi = ppo_loss(&policy, &vf, &batch, &idx, &batch.advantages, &cfg).unwrap().total;
            policy.log_std_mut()[i] = orig - eps;
            let lo = ppo_loss(&policy, &vf, &batch, &idx, &batch.advantages, &cfg).unwrap().total;
            policy.log_std_mut()[i] = orig;
            assert!(rel((hi - lo) / (2.0 * eps), grads.log_std[i]) < 1e-4, "log_std {i}");
        }
        for i in 0..vf.net.n_params() {
            let orig = vf.net.params()[i];
            vf.net.params_mut()[i] = orig + eps;
            let hi = ppo_loss(&policy, &vf, &batch, &idx, &batch.advantages, &cfg).unwrap().total;
            vf.net.params_mut()[i] = orig - eps;
            let lo = ppo_loss(&policy, &vf, &batch, &idx, &batch.advantages, &cfg).unwrap().total;
            vf.net.params_mut()[i] = orig;
            assert!(rel((hi - lo) / (2.0 * eps), grads.value_net[i]) < 1e-4, "value param {i}");
        }
    }

    #[test]
    fn log_prob_gradients_match_finite_differences() {
        let mut policy = GaussianPolicy::new(3, 2, 6, 71).unwrap();
        policy.log_std_mut().copy_from_slice(&[-0.4, 0.3]);
        let obs = [0.3, -1.1, 0.6];
        let action = [0.9, -0.2];
        let (lp, grads) = policy.log_prob_grads(&obs, &action).unwrap();
        assert!((lp - policy.log_prob(&obs, &action).unwrap()).abs() < 1e-14);

        let eps = 1e-5;
        let rel = |fd: f64, an: f64| (fd - an).abs() / fd.abs().max(an.abs()).max(1e-8);
        for i in 0..policy.mean_net.n_params() {
            let orig = policy.mean_net.params()[i];
            policy.mean_net.params_mut()[i] = orig + eps;
            let hi = policy.log_prob(&obs, &action).unwrap();
            policy.mean_net.params_mut()[i] = orig - eps;
            let lo = policy.log_prob(&obs, &action).unwrap();
            policy.mean_net.params_mut()[i] = orig;
            assert!(rel((hi - lo) / (2.0 * eps), grads.mean_net[i]) < 1e-4, "mean param {i}");
        }
        for i in 0..2 {
            let orig = policy.log_std()[i];
            policy.log_std_mut()[i] = orig + eps;
            let hi = policy.log_prob(&obs, &action).unwrap();
            policy.log_std_mut()[i] = orig - eps;
            let lo = policy.log_prob(&obs, &action).unwrap();
            policy.log_std_mut()[i] = orig;
            assert!(rel((hi - lo) / (2.0 * eps), grads.log_std[i]) < 1e-4, "log_std {i}");
        }
    }

    #[test]
    fn zero_entropy_coefficient_matches_entropy_free_objective_exactly() {
        let policy = GaussianPolicy::new(2, 1, 8, 68).unwrap();
        let vf = ValueFn::new(2, 8, 69).unwrap();
        let batch = toy_batch(&policy, &vf, 10, 70);
        let idx: Vec<usize> = (0..batch.len()).collect();
        let cfg = PpoConfig::default(); // entropy_coef = 0
        let (parts, grads) = ppo_loss_grads(&policy, &vf, &batch, &idx, &batch.advantages, &cfg).unwrap();
        assert_eq!(parts.total, -parts.surrogate + cfg.value_coef * parts.value_mse);
        // With the entropy term truly absent the log-std gradient comes from
        // the surrogate alone; any entropy bleed-through would shift every
        // component by the same constant.
        let cfg_h = PpoConfig { entropy_coef: 1.0, ..cfg };
        let (_, grads_h) = ppo_loss_grads(&policy, &vf, &batch, &idx, &batch.advantages, &cfg_h).unwrap();
        for i in 0..grads.log_std.len() {
            assert_eq!(grads_h.log_std[i], grads.log_std[i] - 1.0);
        }
    }

    #[test]
    fn advantage_normalization_centers_and_scales() {
        let adv: Vec<f64> = (0..100).map(|i| (i as f64) * 0.3 - 7.0).collect();
        let normed = normalize_advantages(&adv);
        let mean = normed.iter().sum::<f64>() / 100.0;
        let var = normed.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / 100.0;
        assert!(mean.abs() < 1e-12);
        assert!((var.sqrt() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn non_finite_loss_aborts_and_restores_parameters() {
        let mut policy = GaussianPolicy::new(2, 1, 8, 71).unwrap();
        let mut vf = ValueFn::new(2, 8, 72).unwrap();
        let mut state = PpoState::new(&policy, &vf, 1e-4);
        let mut batch = toy_batch(&policy, &vf, 6, 73);
        batch.returns[3] = f64::NAN;
        let before = policy.mean_net.params().to_vec();
        let cfg = PpoConfig { normalize_advantages: false, ..PpoConfig::default() };
        let err = ppo_update(&mut policy, &mut vf, &mut state, &batch, &cfg, 1).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
        assert_eq!(policy.mean_net.params(), &before[..]);
    }

    #[test]
    fn update_clamps_log_std_into_bounds() {
        let mut policy = GaussianPolicy::new(2, 1, 8, 74).unwrap();
        policy.log_std_mut()[0] = LOG_STD_MAX; // at the boundary already
        let mut vf = ValueFn::new(2, 8, 75).unwrap();
        let mut state = PpoState::new(&policy, &vf, 0.5); // huge lr to force movement
        let batch = toy_batch(&policy, &vf, 32, 76);
        let cfg = PpoConfig { lr: 0.5, epochs: 3, ..PpoConfig::default() };
        ppo_update(&mut policy, &mut vf, &mut state, &batch, &cfg, 2).unwrap();
        for &ls in policy.log_std() {
            assert!((LOG_STD_MIN..=LOG_STD_MAX).contains(&ls));
        }
    }

    #[test]
    fn policy_checkpoint_round_trips_exactly() {
        let mut policy = GaussianPolicy::new(3, 2, 8, 77).unwrap();
        policy.log_std_mut().copy_from_slice(&[-1.25, 0.5]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("policy.ckpt");
        policy.save(&path).unwrap();
        let loaded = GaussianPolicy::load(&path).unwrap();
        assert_eq!(policy.mean_net.params(), loaded.mean_net.params());
        assert_eq!(policy.log_std(), loaded.log_std());
    }
}
